"""Finite-difference verification of every differentiable component.

Each entry builds a tiny float64 instance of one model component with
seeded random parameters, defines a scalar loss over it, and compares
analytic gradients against central finite differences. Random read-out
weights keep losses like summed softmax rows from degenerating to a
constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .corpus import SynthSpec, build_vocab, encode, generate_synthetic
from .encoder import BiLSTM, SharedEncoder
from .graphs import build_i2s_graph, build_s2i_graph
from .hgat import HgatStack
from .model import JointModel
from .optim import GradCheckReport, Parameters, gradient_check
from .stages import TwoLayerHead
from .training import utterance_loss

__all__ = ["ComponentCheck", "COMPONENTS", "run_suite", "render_suite"]

_TINY = TrainConfig(emb_dim=8, lstm_dim=8, attn_dim=8, hidden_dim=8, heads=2,
                    layers=2, window=1, batch_size=1, epochs=1)


def _readout(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.normal(size=shape)


def _check_encoder(seed: int) -> GradCheckReport:
    params = Parameters(seed, dtype=np.float64)
    enc = SharedEncoder(params, vocab_size=7, emb_dim=6, lstm_dim=6, attn_dim=4)
    rng = np.random.default_rng(seed + 1)
    ids = [1, 4, 2, 6]
    r = _readout(rng, (4, enc.out_dim))
    return gradient_check(params, lambda: ad.sum_all(ad.mul(r, enc(ids))))


def _check_task_bilstm(seed: int) -> GradCheckReport:
    params = Parameters(seed, dtype=np.float64)
    lstm = BiLSTM(params, "task", 5, 6)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(4, 5))
    r = _readout(rng, (4, 6))
    return gradient_check(params, lambda: ad.sum_all(ad.mul(r, lstm(ad.Tensor(x)))))


def _check_head(kind: str) -> Callable[[int], GradCheckReport]:
    def check(seed: int) -> GradCheckReport:
        params = Parameters(seed, dtype=np.float64)
        head = TwoLayerHead(params, "head", 6, 6, 5, slope=0.2)
        rng = np.random.default_rng(seed + 1)
        x = rng.normal(size=(3, 6))
        r = _readout(rng, (3, 5))

        def loss():
            logits = head.logits(ad.Tensor(x))
            y = ad.sigmoid(logits) if kind == "sigmoid" else ad.softmax_rows(logits)
            return ad.sum_all(ad.mul(r, y))
        return gradient_check(params, loss)
    return check


def _check_s2i_stack(seed: int) -> GradCheckReport:
    params = Parameters(seed, dtype=np.float64)
    graph = build_s2i_graph(3, 1)
    stack = HgatStack(params, "s2i", graph.relations, dim=8, heads=2, layers=2)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(graph.num_nodes, 8))
    r = _readout(rng, (graph.num_nodes, 8))
    return gradient_check(params, lambda: ad.sum_all(ad.mul(r, stack(ad.Tensor(x), graph))))


def _check_i2s_stack(seed: int) -> GradCheckReport:
    params = Parameters(seed, dtype=np.float64)
    graph = build_i2s_graph(3, 1, 2)
    stack = HgatStack(params, "i2s", graph.relations, dim=8, heads=2, layers=2)
    rng = np.random.default_rng(seed + 1)
    x = rng.normal(size=(graph.num_nodes, 8))
    r = _readout(rng, (graph.num_nodes, 8))
    return gradient_check(params, lambda: ad.sum_all(ad.mul(r, stack(ad.Tensor(x), graph))))


def _check_intent_aware_bilstm(seed: int) -> GradCheckReport:
    params = Parameters(seed, dtype=np.float64)
    lstm = BiLSTM(params, "aware", 9, 6)  # 4 intent channels + 5 feature channels
    rng = np.random.default_rng(seed + 1)
    probs = rng.uniform(0.1, 0.9, size=(4, 4))
    feats = rng.normal(size=(4, 5))
    r = _readout(rng, (4, 6))

    def loss():
        x = ad.concat_cols([ad.Tensor(probs), ad.Tensor(feats)])
        return ad.sum_all(ad.mul(r, lstm(x)))
    return gradient_check(params, loss)


def _check_full_model(seed: int) -> GradCheckReport:
    spec = SynthSpec(n_intents=3, n_slot_types=2, n_fillers=4, min_len=4,
                     max_len=4, train_size=4, dev_size=1, test_size=1, seed=seed)
    train_data, _, _ = generate_synthetic(spec)
    vocab = build_vocab(train_data)
    cfg = _TINY.replace(seed=seed)
    model = JointModel.for_vocab(vocab, cfg, dtype=np.float64)
    example = encode(train_data[0], vocab)
    stage1, _ = model.forward(example.token_ids)
    frozen = (list(stage1.estimated_slots), list(stage1.estimated_intents))

    def loss():
        s1, s2 = model.forward(example.token_ids, fixed_estimates=frozen)
        return utterance_loss(s1, s2, example, cfg)
    return gradient_check(model.params, loss, max_entries_per_param=3)


@dataclass
class ComponentCheck:
    name: str
    build: Callable[[int], GradCheckReport]


COMPONENTS: tuple[ComponentCheck, ...] = (
    ComponentCheck("encoder", _check_encoder),
    ComponentCheck("task-bilstm", _check_task_bilstm),
    ComponentCheck("sigmoid-head", _check_head("sigmoid")),
    ComponentCheck("softmax-head", _check_head("softmax")),
    ComponentCheck("s2i-hgat-stack", _check_s2i_stack),
    ComponentCheck("i2s-hgat-stack", _check_i2s_stack),
    ComponentCheck("intent-aware-bilstm", _check_intent_aware_bilstm),
    ComponentCheck("full-model-loss", _check_full_model),
)


def run_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    """Run every component check at 64-bit precision."""
    return {c.name: c.build(seed) for c in COMPONENTS}


def render_suite(reports: dict[str, GradCheckReport], tolerance: float) -> str:
    lines = []
    for name, report in reports.items():
        status = "pass" if report.passed(tolerance) else "FAIL"
        lines.append(f"{name:<22} max rel err {report.max_rel_err:12.3e}  {status}")
        for entry in report.failures(tolerance):
            lines.append(f"    {entry.name}: {entry.max_rel_err:.3e}")
    return "\n".join(lines)
