"""Objective, training loop, evaluation driver, and checkpoint format.

Both stages contribute to both task losses. Intent detection uses
binary cross-entropy per token and label; slot filling uses per-token
negative log-likelihood of the gold tag. A hinge margin penalty discourages
any gold-label probability from dropping between stage one and stage two.
The combined objective is

    gamma * (L_intent + beta_intent * margin_intent)
      + (1 - gamma) * (L_slot + beta_slot * margin_slot)

Checkpoints are single JSON documents: a format-version field, the full
config, the vocabularies, and every parameter as base64 little-endian
float32 bytes with explicit shape, so reloading restores bit-identical
predictions.
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .config import TrainConfig
from .corpus import EncodedUtterance, Utterance, Vocabulary, encode_corpus
from .metrics import EvalReport, build_report
from .model import JointModel, PredictionRecord
from .optim import AdamState, adam_step
from .stages import Stage1Output, Stage2Output

__all__ = [
    "PROB_EPS",
    "TrainingDivergedError",
    "CheckpointError",
    "CheckpointVersionError",
    "intent_loss",
    "slot_loss",
    "margin_penalty",
    "total_loss",
    "utterance_loss",
    "EpochStats",
    "TrainResult",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
]

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; message names the epoch and utterance."""


class CheckpointError(ValueError):
    """Unreadable or malformed checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


def _log_prob(y: Tensor) -> Tensor:
    return ad.log(ad.clip(y, PROB_EPS, 1.0 - PROB_EPS))


def _log_one_minus(y: Tensor) -> Tensor:
    return ad.log(ad.clip(ad.scalar_add(ad.scalar_mul(y, -1.0), 1.0),
                          PROB_EPS, 1.0 - PROB_EPS))


def intent_loss(y_initial: Tensor, y_final: Tensor, gold_multihot: np.ndarray) -> Tensor:
    """Binary cross-entropy summed over both stages, all tokens, all labels."""
    n = y_initial.shape[0]
    gold = np.broadcast_to(
        np.asarray(gold_multihot, dtype=y_initial.dtype), (n, len(gold_multihot)))
    total = None
    for y in (y_initial, y_final):
        ll = ad.add(ad.mul(gold, _log_prob(y)), ad.mul(1.0 - gold, _log_one_minus(y)))
        s = ad.sum_all(ll)
        total = s if total is None else ad.add(total, s)
    return ad.scalar_mul(total, -1.0)


def slot_loss(y_initial: Tensor, y_final: Tensor, gold_tag_ids: Sequence[int]) -> Tensor:
    """Gold-tag negative log-likelihood summed over both stages and tokens."""
    n, n_slots = y_initial.shape
    onehot = np.zeros((n, n_slots), dtype=y_initial.dtype)
    onehot[np.arange(n), list(gold_tag_ids)] = 1.0
    total = None
    for y in (y_initial, y_final):
        s = ad.sum_all(ad.mul(onehot, _log_prob(y)))
        total = s if total is None else ad.add(total, s)
    return ad.scalar_mul(total, -1.0)


def margin_penalty(y_initial: Tensor, y_final: Tensor, gold_mask: np.ndarray) -> Tensor:
    """Hinge penalty for gold-position probabilities that shrink in stage two.

    ``gold_mask`` marks gold labels per token (multihot rows for intents,
    one-hot rows for slots); non-gold positions contribute nothing.
    """
    mask = np.asarray(gold_mask, dtype=y_initial.dtype)
    if mask.ndim == 1:
        mask = np.broadcast_to(mask, y_initial.shape)
    return ad.sum_all(ad.mul(mask, ad.relu(ad.sub(y_initial, y_final))))


def total_loss(l_intent: Tensor, mp_intent: Tensor, l_slot: Tensor,
               mp_slot: Tensor, cfg: TrainConfig) -> Tensor:
    """gamma-weighted sum of the task losses and their margin penalties."""
    intent_part = ad.add(l_intent, ad.scalar_mul(mp_intent, cfg.beta_intent))
    slot_part = ad.add(l_slot, ad.scalar_mul(mp_slot, cfg.beta_slot))
    return ad.add(ad.scalar_mul(intent_part, cfg.gamma),
                  ad.scalar_mul(slot_part, 1.0 - cfg.gamma))


def utterance_loss(stage1: Stage1Output, stage2: Stage2Output,
                   example: EncodedUtterance, cfg: TrainConfig) -> Tensor:
    n = len(example.token_ids)
    n_slots = stage1.slot_probs.shape[1]
    slot_onehot = np.zeros((n, n_slots), dtype=stage1.slot_probs.dtype)
    slot_onehot[np.arange(n), list(example.slot_tag_ids)] = 1.0
    l_i = intent_loss(stage1.intent_probs, stage2.intent_probs, example.intent_multihot)
    l_s = slot_loss(stage1.slot_probs, stage2.slot_probs, example.slot_tag_ids)
    mp_i = margin_penalty(stage1.intent_probs, stage2.intent_probs, example.intent_multihot)
    mp_s = margin_penalty(stage1.slot_probs, stage2.slot_probs, slot_onehot)
    return total_loss(l_i, mp_i, l_s, mp_s, cfg)


def evaluate(model: JointModel, data: Sequence[Utterance], vocab: Vocabulary
             ) -> tuple[EvalReport, list[PredictionRecord]]:
    """Predict every utterance (outside any tape) and score against gold.

    Gold labels are compared at string level, so evaluation tolerates gold
    symbols the vocabulary has never seen (they simply count as misses).
    """
    records = []
    pred_intents, gold_intents, pred_tags, gold_tags = [], [], [], []
    for u in data:
        rec = model.predict([vocab.token_id(t) for t in u.tokens])
        records.append(rec)
        pred_intents.append([vocab.intent_labels[i] for i in rec.intents_final])
        pred_tags.append([vocab.slot_labels[i] for i in rec.slots_final])
        gold_intents.append(list(u.intents))
        gold_tags.append(list(u.slot_tags))
    return build_report(pred_intents, gold_intents, pred_tags, gold_tags), records


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    dev_intent_accuracy: float
    dev_slot_f1: float
    dev_overall_accuracy: float
    seconds: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_loss": round(self.mean_loss, 6),
            "dev_intent_accuracy": round(self.dev_intent_accuracy, 6),
            "dev_slot_f1": round(self.dev_slot_f1, 6),
            "dev_overall_accuracy": round(self.dev_overall_accuracy, 6),
            "seconds": round(self.seconds, 3),
        }


@dataclass
class TrainResult:
    model: JointModel
    best_params: dict[str, np.ndarray]
    best_epoch: int
    best_dev_overall: float
    history: list[EpochStats] = field(default_factory=list)

    def restore_best(self) -> JointModel:
        self.model.params.load(self.best_params)
        return self.model


def train(
    cfg: TrainConfig,
    train_data: Sequence[Utterance],
    dev_data: Sequence[Utterance],
    vocab: Vocabulary,
    *,
    target_dev_overall: float | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Run the epoch loop and keep the checkpoint that does best on dev.

    Gradients accumulate over ``cfg.batch_size`` utterances (losses scaled
    by the window size) before each optimizer step. Dev overall accuracy
    picks the retained parameters; ties keep the earlier epoch. When
    ``target_dev_overall`` is given, training stops as soon as the best dev
    overall accuracy reaches it.
    """
    model = JointModel.for_vocab(vocab, cfg)
    encoded = encode_corpus(train_data, vocab, strict=True)
    state = AdamState(
        learning_rate=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        beta1=cfg.adam_beta1,
        beta2=cfg.adam_beta2,
        epsilon=cfg.adam_epsilon,
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    result = TrainResult(model=model, best_params=model.params.snapshot(),
                         best_epoch=0, best_dev_overall=-1.0)

    for epoch in range(1, cfg.epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(encoded))
        losses = []
        for chunk_start in range(0, len(order), cfg.batch_size):
            chunk = order[chunk_start:chunk_start + cfg.batch_size]
            for idx in chunk:
                example = encoded[idx]
                with Tape() as tape:
                    stage1, stage2 = model.forward(example.token_ids)
                    loss = utterance_loss(stage1, stage2, example, cfg)
                    raw = loss.item()
                    if not np.isfinite(raw):
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch}, utterance {int(idx)}")
                    tape.backward(ad.scalar_mul(loss, 1.0 / len(chunk)))
                losses.append(raw)
            adam_step(model.params, state)

        report, _ = evaluate(model, dev_data, vocab)
        stats = EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            dev_intent_accuracy=report.intent_accuracy,
            dev_slot_f1=report.slot_f1,
            dev_overall_accuracy=report.overall_accuracy,
            seconds=time.perf_counter() - started,
        )
        result.history.append(stats)
        if log is not None:
            log(f"epoch {epoch:4d}  loss {stats.mean_loss:10.4f}  "
                f"dev overall {stats.dev_overall_accuracy:.4f}  "
                f"slot F1 {stats.dev_slot_f1:.4f}  "
                f"intent acc {stats.dev_intent_accuracy:.4f}")
        if report.overall_accuracy > result.best_dev_overall:
            result.best_dev_overall = report.overall_accuracy
            result.best_epoch = epoch
            result.best_params = model.params.snapshot()
        if target_dev_overall is not None and result.best_dev_overall >= target_dev_overall:
            break
    return result


def save_checkpoint(path: str | Path, cfg: TrainConfig, vocab: Vocabulary,
                    params: dict[str, np.ndarray]) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "params": {
            name: {
                "shape": list(arr.shape),
                "dtype": "f4",
                "data": base64.b64encode(
                    np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii"),
            }
            for name, arr in params.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[TrainConfig, Vocabulary, dict[str, np.ndarray]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {doc['format_version']} "
            f"(this build reads version {CHECKPOINT_VERSION})")
    try:
        cfg = TrainConfig.from_dict(doc["config"])
        vocab = Vocabulary.from_dict(doc["vocab"])
        params = {
            name: np.frombuffer(base64.b64decode(entry["data"]), dtype="<f4")
            .reshape(entry["shape"]).copy()
            for name, entry in doc["params"].items()
        }
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    return cfg, vocab, params


def model_from_checkpoint(path: str | Path) -> tuple[JointModel, Vocabulary, TrainConfig]:
    cfg, vocab, params = load_checkpoint(path)
    model = JointModel.for_vocab(vocab, cfg)
    model.params.load(params)
    return model, vocab, cfg
