"""The joint model: shared encoder, initial estimation, guided re-decoding.

Stage two only ever sees stage-one *estimates* — gold labels never enter
the forward pass, in training or inference, so the dataflow is identical in
both.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .corpus import Vocabulary
from .encoder import SharedEncoder
from .optim import Parameters
from .stages import GuidedDecoder, InitialEstimator, Stage1Output, Stage2Output

__all__ = ["PredictionRecord", "JointModel"]


@dataclass
class PredictionRecord:
    """Per-utterance distributions and decoded labels from both stages."""

    token_ids: tuple[int, ...]
    intent_probs_initial: np.ndarray   # (n, n_intents)
    slot_probs_initial: np.ndarray     # (n, n_slots)
    intent_probs_final: np.ndarray
    slot_probs_final: np.ndarray
    intents_initial: list[int]
    slots_initial: list[int]
    intents_final: list[int]
    slots_final: list[int]


class JointModel:
    """Wires encoder, stage one, and stage two over one parameter registry."""

    def __init__(self, vocab_size: int, n_intents: int, n_slots: int,
                 cfg: TrainConfig, *, dtype=np.float32):
        self.cfg = cfg
        self.n_intents = n_intents
        self.n_slots = n_slots
        self.params = Parameters(cfg.seed, dtype=dtype)
        self.encoder = SharedEncoder(self.params, vocab_size, cfg.emb_dim,
                                     cfg.lstm_dim, cfg.attn_dim)
        self.stage1 = InitialEstimator(self.params, self.encoder.out_dim, cfg,
                                       n_intents, n_slots)
        self.stage2 = GuidedDecoder(self.params, cfg, n_intents, n_slots)

    @classmethod
    def for_vocab(cls, vocab: Vocabulary, cfg: TrainConfig, *, dtype=np.float32) -> "JointModel":
        return cls(vocab.n_tokens, vocab.n_intents, vocab.n_slots, cfg, dtype=dtype)

    def forward(
        self,
        token_ids: Sequence[int],
        fixed_estimates: tuple[Sequence[int], Sequence[int]] | None = None,
    ) -> tuple[Stage1Output, Stage2Output]:
        """Full two-stage pass.

        ``fixed_estimates`` pins the discrete (slot, intent) estimates fed
        to stage two; the gradient checker uses it to keep the selections
        constant while parameters are perturbed.
        """
        shared = self.encoder(token_ids)
        stage1 = self.stage1.run(shared)
        if fixed_estimates is not None:
            stage1.estimated_slots = list(fixed_estimates[0])
            stage1.estimated_intents = list(fixed_estimates[1])
        stage2 = self.stage2.run(stage1)
        return stage1, stage2

    def predict(self, token_ids: Sequence[int]) -> PredictionRecord:
        """Inference pass; call outside any tape."""
        stage1, stage2 = self.forward(token_ids)
        return PredictionRecord(
            token_ids=tuple(int(t) for t in token_ids),
            intent_probs_initial=stage1.intent_probs.values.copy(),
            slot_probs_initial=stage1.slot_probs.values.copy(),
            intent_probs_final=stage2.intent_probs.values.copy(),
            slot_probs_final=stage2.slot_probs.values.copy(),
            intents_initial=list(stage1.estimated_intents),
            slots_initial=list(stage1.estimated_slots),
            intents_final=list(stage2.final_intents),
            slots_final=list(stage2.final_slots),
        )
