"""Two-stage decoding: initial per-token estimates, then mutual guidance.

Stage one runs task-specific BiLSTMs over the shared encoding and produces
per-token intent probabilities (sigmoid, multi-label) and slot
distributions (softmax). Sentence-level intents come from token-level
voting; per-token slot labels from argmax. Stage two embeds those discrete
estimates and lets each task's graph attention stack consume the other
task's labels: estimated slots guide intent decoding, estimated intents
guide slot decoding (after an intent-aware BiLSTM that re-reads the slot
features together with the stage-one intent distributions).

Label selection is a hard stop-gradient: gradients flow through the label
embeddings and through the stage-one intent distributions fed to the
intent-aware BiLSTM, never through the discrete choices themselves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import TrainConfig
from .encoder import BiLSTM
from .graphs import (
    COLLAPSED_RELATION,
    I2S_RELATIONS,
    S2I_RELATIONS,
    build_i2s_graph,
    build_s2i_graph,
    collapse_to_homogeneous,
)
from .hgat import HgatStack
from .optim import Parameters

__all__ = [
    "TwoLayerHead",
    "intent_voting",
    "slot_argmax",
    "Stage1Output",
    "Stage2Output",
    "InitialEstimator",
    "GuidedDecoder",
]


class TwoLayerHead:
    """Per-token classifier head: linear, leaky-rectifier, linear."""

    def __init__(self, params: Parameters, prefix: str, d_in: int, d_hidden: int,
                 d_out: int, slope: float):
        self.slope = slope
        self.w_hidden = params.weight(f"{prefix}.w2", d_in, d_hidden)
        self.b_hidden = params.bias(f"{prefix}.b2", d_hidden)
        self.w_out = params.weight(f"{prefix}.w1", d_hidden, d_out)
        self.b_out = params.bias(f"{prefix}.b1", d_out)

    def logits(self, features: Tensor) -> Tensor:
        hidden = ad.leaky_relu(
            ad.add(ad.matmul(features, self.w_hidden), self.b_hidden), self.slope)
        return ad.add(ad.matmul(hidden, self.w_out), self.b_out)


def intent_voting(probs: np.ndarray, threshold: float = 0.5) -> list[int]:
    """Token-level voting: keep intents predicted by a strict majority of
    tokens; if none clears the bar, fall back to the single best intent.

    ``probs`` is the (n, n_intents) per-token probability matrix. The
    fallback ranks by token-hit count, then mean probability, then lowest
    label id, so the result is never empty.
    """
    n = probs.shape[0]
    hits = (probs >= threshold).sum(axis=0)
    selected = [int(l) for l in np.flatnonzero(hits > n / 2)]
    if selected:
        return selected
    means = probs.mean(axis=0)
    order = sorted(range(probs.shape[1]), key=lambda l: (-hits[l], -means[l], l))
    return [order[0]]


def slot_argmax(probs: np.ndarray) -> list[int]:
    """Per-row argmax; ties resolve to the lowest label id."""
    return [int(i) for i in probs.argmax(axis=1)]


@dataclass
class Stage1Output:
    intent_features: Tensor       # (n, d)
    slot_features: Tensor         # (n, d)
    intent_probs: Tensor          # (n, n_intents), sigmoid
    slot_probs: Tensor            # (n, n_slots), softmax rows
    estimated_intents: list[int]  # voted sentence-level intent ids
    estimated_slots: list[int]    # per-token argmax slot ids


@dataclass
class Stage2Output:
    intent_probs: Tensor
    slot_probs: Tensor
    final_intents: list[int]
    final_slots: list[int]


class InitialEstimator:
    """Stage one: task BiLSTMs and per-token decoders over the shared states."""

    def __init__(self, params: Parameters, d_in: int, cfg: TrainConfig,
                 n_intents: int, n_slots: int):
        d = cfg.hidden_dim
        self.vote_threshold = cfg.vote_threshold
        self.intent_bilstm = BiLSTM(params, "stage1.intent_lstm", d_in, d)
        self.slot_bilstm = BiLSTM(params, "stage1.slot_lstm", d_in, d)
        self.intent_head = TwoLayerHead(params, "stage1.intent_head", d, d,
                                        n_intents, cfg.leaky_slope)
        self.slot_head = TwoLayerHead(params, "stage1.slot_head", d, d,
                                      n_slots, cfg.leaky_slope)

    def intent_features(self, shared: Tensor) -> Tensor:
        return self.intent_bilstm(shared)

    def slot_features(self, shared: Tensor) -> Tensor:
        return self.slot_bilstm(shared)

    def run(self, shared: Tensor) -> Stage1Output:
        h_intent = self.intent_features(shared)
        h_slot = self.slot_features(shared)
        intent_probs = ad.sigmoid(self.intent_head.logits(h_intent))
        slot_probs = ad.softmax_rows(self.slot_head.logits(h_slot))
        return Stage1Output(
            intent_features=h_intent,
            slot_features=h_slot,
            intent_probs=intent_probs,
            slot_probs=slot_probs,
            estimated_intents=intent_voting(intent_probs.values, self.vote_threshold),
            estimated_slots=slot_argmax(slot_probs.values),
        )


class GuidedDecoder:
    """Stage two: each task re-decodes under the other task's estimates."""

    def __init__(self, params: Parameters, cfg: TrainConfig,
                 n_intents: int, n_slots: int):
        d = cfg.hidden_dim
        self.cfg = cfg
        self.vote_threshold = cfg.vote_threshold

        s2i_rels = (COLLAPSED_RELATION,) if cfg.collapse_relations else S2I_RELATIONS
        i2s_rels = (COLLAPSED_RELATION,) if cfg.collapse_relations else I2S_RELATIONS

        if not cfg.no_s2i_guidance:
            self.slot_label_emb = params.embedding("stage2.slot_label_emb", n_slots, d)
            self.s2i_stack = HgatStack(params, "stage2.s2i", s2i_rels, d,
                                       cfg.heads, cfg.layers, cfg.leaky_slope)
        self.intent_aware_bilstm = BiLSTM(params, "stage2.intent_aware_lstm",
                                          n_intents + d, d)
        if not cfg.no_i2s_guidance:
            self.intent_label_emb = params.embedding("stage2.intent_label_emb", n_intents, d)
            self.i2s_stack = HgatStack(params, "stage2.i2s", i2s_rels, d,
                                       cfg.heads, cfg.layers, cfg.leaky_slope)
        self.intent_head = TwoLayerHead(params, "stage2.intent_head", d, d,
                                        n_intents, cfg.leaky_slope)
        self.slot_head = TwoLayerHead(params, "stage2.slot_head", d, d,
                                      n_slots, cfg.leaky_slope)

    def _graph(self, builder, *args):
        g = builder(*args)
        return collapse_to_homogeneous(g) if self.cfg.collapse_relations else g

    def s2i_decode(self, intent_features: Tensor, estimated_slots: Sequence[int],
                   collect_attention: list | None = None) -> tuple[Tensor, list[int]]:
        """Intent decoding guided by embedded slot estimates."""
        if self.cfg.no_s2i_guidance:
            refined = intent_features
        else:
            n = intent_features.shape[0]
            slot_vecs = ad.gather_rows(self.slot_label_emb, list(estimated_slots))
            nodes = ad.concat_rows([intent_features, slot_vecs])
            graph = self._graph(build_s2i_graph, n, self.cfg.window)
            out = self.s2i_stack(nodes, graph, collect_attention)
            refined = ad.slice_rows(out, 0, n)
        probs = ad.sigmoid(self.intent_head.logits(refined))
        return probs, intent_voting(probs.values, self.vote_threshold)

    def intent_aware_features(self, intent_probs: Tensor, slot_features: Tensor) -> Tensor:
        """BiLSTM over [stage-one intent distribution, slot features] rows."""
        return self.intent_aware_bilstm(ad.concat_cols([intent_probs, slot_features]))

    def i2s_decode(self, slot_states: Tensor, estimated_intents: Sequence[int],
                   collect_attention: list | None = None) -> tuple[Tensor, list[int]]:
        """Slot decoding guided by embedded intent estimates."""
        if self.cfg.no_i2s_guidance:
            refined = slot_states
        else:
            n = slot_states.shape[0]
            m = len(estimated_intents)
            graph = self._graph(build_i2s_graph, n, self.cfg.window, m)
            if m:
                intent_vecs = ad.gather_rows(self.intent_label_emb, list(estimated_intents))
                nodes = ad.concat_rows([slot_states, intent_vecs])
            else:
                nodes = slot_states
            out = self.i2s_stack(nodes, graph, collect_attention)
            refined = ad.slice_rows(out, 0, n)
        probs = ad.softmax_rows(self.slot_head.logits(refined))
        return probs, slot_argmax(probs.values)

    def run(self, stage1: Stage1Output) -> Stage2Output:
        intent_probs, final_intents = self.s2i_decode(
            stage1.intent_features, stage1.estimated_slots)
        slot_states = self.intent_aware_features(
            stage1.intent_probs, stage1.slot_features)
        slot_probs, final_slots = self.i2s_decode(
            slot_states, stage1.estimated_intents)
        return Stage2Output(
            intent_probs=intent_probs,
            slot_probs=slot_probs,
            final_intents=final_intents,
            final_slots=final_slots,
        )
