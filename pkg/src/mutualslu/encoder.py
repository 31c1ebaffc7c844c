"""Shared utterance encoder: BiLSTM for temporal structure, single-head
scaled dot-product self-attention for global structure, outputs concatenated
per token.

The attention projections read the raw word-embedding matrix, not the
BiLSTM output; both components therefore see the same embedded tokens.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .optim import Parameters

__all__ = ["LstmDirection", "BiLSTM", "SelfAttention", "SharedEncoder"]


class LstmDirection:
    """Single-direction LSTM with fused per-step cell and zero initial state."""

    def __init__(self, params: Parameters, prefix: str, d_in: int, d_hidden: int):
        self.d_hidden = d_hidden
        self.wx = params.weight(f"{prefix}.wx", d_in, 4 * d_hidden)
        self.wh = params.weight(f"{prefix}.wh", d_hidden, 4 * d_hidden)
        self.b = params.bias(f"{prefix}.b", 4 * d_hidden)
        self._dtype = params.dtype

    def run(self, steps: Sequence[Tensor], reverse: bool = False) -> list[Tensor]:
        hid = self.d_hidden
        zero = np.zeros((1, hid), dtype=self._dtype)
        h, c = Tensor(zero), Tensor(zero.copy())
        outputs: list[Tensor] = []
        ordered = reversed(steps) if reverse else steps
        for x in ordered:
            hc = ad.lstm_step(x, h, c, self.wx, self.wh, self.b)
            h = ad.slice_cols(hc, 0, hid)
            c = ad.slice_cols(hc, hid, 2 * hid)
            outputs.append(h)
        if reverse:
            outputs.reverse()
        return outputs


class BiLSTM:
    """Bidirectional LSTM over an (n, d_in) sequence matrix.

    Output row i concatenates the forward state after token i with the
    backward state after token i, giving width d_out (d_out/2 per
    direction).
    """

    def __init__(self, params: Parameters, prefix: str, d_in: int, d_out: int):
        if d_out % 2 != 0:
            raise ValueError(f"BiLSTM output width must be even, got {d_out}")
        self.forward = LstmDirection(params, f"{prefix}.fw", d_in, d_out // 2)
        self.backward = LstmDirection(params, f"{prefix}.bw", d_in, d_out // 2)

    def __call__(self, seq: Tensor) -> Tensor:
        n = seq.shape[0]
        if n == 0:
            raise DimensionError("bilstm: empty input sequence")
        steps = [ad.slice_rows(seq, i, i + 1) for i in range(n)]
        fw = self.forward.run(steps)
        bw = self.backward.run(steps, reverse=True)
        rows = [ad.concat_cols([f, b]) for f, b in zip(fw, bw)]
        return ad.concat_rows(rows)


class SelfAttention:
    """Single-head scaled dot-product self-attention over the input rows."""

    def __init__(self, params: Parameters, prefix: str, d_in: int, d_attn: int):
        self.d_attn = d_attn
        self.wq = params.weight(f"{prefix}.wq", d_in, d_attn)
        self.wk = params.weight(f"{prefix}.wk", d_in, d_attn)
        self.wv = params.weight(f"{prefix}.wv", d_in, d_attn)

    def __call__(self, x: Tensor, return_weights: bool = False):
        q = ad.matmul(x, self.wq)
        k = ad.matmul(x, self.wk)
        v = ad.matmul(x, self.wv)
        scores = ad.scalar_mul(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(self.d_attn))
        weights = ad.softmax_rows(scores)
        out = ad.matmul(weights, v)
        if return_weights:
            return out, weights.values.copy()
        return out


class SharedEncoder:
    """Embeds token ids and produces per-token states of width lstm+attn."""

    def __init__(self, params: Parameters, vocab_size: int, emb_dim: int,
                 lstm_dim: int, attn_dim: int):
        self.embedding = params.embedding("encoder.emb", vocab_size, emb_dim)
        self.bilstm = BiLSTM(params, "encoder.lstm", emb_dim, lstm_dim)
        self.attention = SelfAttention(params, "encoder.attn", emb_dim, attn_dim)
        self.out_dim = lstm_dim + attn_dim

    def __call__(self, token_ids: Sequence[int]) -> Tensor:
        if len(token_ids) == 0:
            raise DimensionError("encoder: empty token sequence")
        embedded = ad.gather_rows(self.embedding, list(token_ids))
        temporal = self.bilstm(embedded)
        contextual = self.attention(embedded)
        return ad.concat_cols([temporal, contextual])
