"""Relation-specific multi-head graph attention over heterogeneous graphs.

Per relation r and head k there are three transforms: a query transform
applied to the destination node, a key transform applied to the source
node, and a message transform applied to the aggregated value. Attention
logits are scaled by 1/sqrt(d) with d the full node width. Softmax
normalization runs within each relation's incoming neighborhood, while the
message sum runs over all incoming neighbors across relations; this
asymmetry is deliberate. Heads are concatenated after a leaky-rectifier
nonlinearity, so the node width d must be divisible by the head count.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .graphs import HeteroGraph
from .optim import Parameters

__all__ = ["HgatLayerWeights", "hgat_layer", "HgatStack"]

# attention weight dict: relation -> list over heads of (n, n) numpy arrays
AttentionMap = dict[str, list[np.ndarray]]


class HgatLayerWeights:
    """Weights of one layer: per relation, per head (message, query, key)."""

    def __init__(self, params: Parameters, prefix: str, relations: tuple[str, ...],
                 dim: int, heads: int):
        if dim % heads != 0:
            raise ValueError(f"node width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.relations = relations
        head_dim = dim // heads
        self.per_relation: dict[str, list[tuple[Tensor, Tensor, Tensor]]] = {}
        for rel in relations:
            triples = []
            for k in range(heads):
                triples.append((
                    params.weight(f"{prefix}.{rel}.h{k}.w_msg", dim, head_dim),
                    params.weight(f"{prefix}.{rel}.h{k}.w_qry", dim, head_dim),
                    params.weight(f"{prefix}.{rel}.h{k}.w_key", dim, head_dim),
                ))
            self.per_relation[rel] = triples


def hgat_layer(
    node_states: Tensor,
    graph: HeteroGraph,
    weights: HgatLayerWeights,
    *,
    slope: float = 0.2,
    masks: dict[str, np.ndarray] | None = None,
    collect_attention: AttentionMap | None = None,
) -> Tensor:
    """One attention layer; returns updated (N, d) node states.

    ``masks`` may carry precomputed per-relation incoming masks to avoid
    rebuilding them per layer. When ``collect_attention`` is given, the
    per-relation, per-head attention matrices are appended to it.
    """
    n = graph.num_nodes
    if node_states.shape != (n, weights.dim):
        raise DimensionError(
            f"hgat_layer: states {node_states.shape} vs {n} nodes of width {weights.dim}")
    isolated = graph.nodes_without_incoming()
    if isolated:
        raise ValueError(
            f"hgat_layer: nodes {isolated} have no incoming edge in any relation")
    if graph.relations != weights.relations:
        raise ValueError(
            f"hgat_layer: graph relations {graph.relations} vs weights {weights.relations}")
    if masks is None:
        masks = graph.incoming_masks()
    scale = 1.0 / math.sqrt(weights.dim)

    head_outputs: list[Tensor] = []
    for k in range(weights.heads):
        acc: Tensor | None = None
        for rel in weights.relations:
            mask = masks[rel]
            if not mask.any():
                continue
            w_msg, w_qry, w_key = weights.per_relation[rel][k]
            queries = ad.matmul(node_states, w_qry)
            keys = ad.matmul(node_states, w_key)
            values = ad.matmul(node_states, w_msg)
            logits = ad.scalar_mul(ad.matmul(queries, ad.transpose(keys)), scale)
            attn = ad.masked_softmax_rows(logits, mask)
            if collect_attention is not None:
                collect_attention.setdefault(rel, []).append(attn.values.copy())
            msg = ad.matmul(attn, values)
            acc = msg if acc is None else ad.add(acc, msg)
        head_outputs.append(ad.leaky_relu(acc, slope))
    return ad.concat_cols(head_outputs)


class HgatStack:
    """L stacked attention layers with per-layer weights."""

    def __init__(self, params: Parameters, prefix: str, relations: tuple[str, ...],
                 dim: int, heads: int, layers: int, slope: float = 0.2):
        if layers < 1:
            raise ValueError(f"layer count must be >= 1, got {layers}")
        self.slope = slope
        self.layers = [
            HgatLayerWeights(params, f"{prefix}.layer{i}", relations, dim, heads)
            for i in range(layers)
        ]

    def __call__(
        self,
        node_states: Tensor,
        graph: HeteroGraph,
        collect_attention: list[AttentionMap] | None = None,
    ) -> Tensor:
        masks = graph.incoming_masks()
        h = node_states
        for layer in self.layers:
            per_layer: AttentionMap | None = None
            if collect_attention is not None:
                per_layer = {}
                collect_attention.append(per_layer)
            h = hgat_layer(h, graph, layer, slope=self.slope, masks=masks,
                           collect_attention=per_layer)
        return h
