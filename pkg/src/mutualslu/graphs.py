"""Heterogeneous semantics-label graphs for the two guidance directions.

Both graphs have two node types and four relation types. The slot-to-intent
graph pairs intent-semantics nodes (one per token) with estimated-slot-label
nodes (one per token); every connection is windowed. The intent-to-slot
graph pairs slot-semantics nodes (one per token) with estimated-intent-label
nodes (one per estimated intent); intent-label nodes connect globally since
intents are sentence-level. Windowed relations include the self index, so
every node keeps a nonempty neighborhood and attention normalization never
divides by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "HeteroGraph",
    "build_s2i_graph",
    "build_i2s_graph",
    "collapse_to_homogeneous",
    "S2I_RELATIONS",
    "I2S_RELATIONS",
    "COLLAPSED_RELATION",
]

# slot-to-intent graph: intent-semantics (I) and slot-label (SL) nodes
S2I_NODE_TYPES = ("I", "SL")
S2I_RELATIONS = (
    "intent_semantics_dependencies",  # I  -> I
    "slot_to_intent_guidance",        # SL -> I
    "slot_label_dependencies",        # SL -> SL
    "intent_to_slot_label",           # I  -> SL
)

# intent-to-slot graph: slot-semantics (S) and intent-label (IL) nodes
I2S_NODE_TYPES = ("S", "IL")
I2S_RELATIONS = (
    "slot_semantics_dependencies",    # S  -> S, windowed
    "intent_to_slot_guidance",        # IL -> S, global
    "semantics_to_intent_label",      # S  -> IL, global
    "intent_label_dependencies",      # IL -> IL, global incl. self
)

COLLAPSED_RELATION = "untyped"


@dataclass(frozen=True)
class HeteroGraph:
    """Typed-node, typed-edge directed graph.

    ``node_types[i]`` is the type of node i; ``edges`` are (src, dst,
    relation) triples; ``node_type_set`` and ``relations`` are the declared
    type sets (they stay declared even if some type is uninstantiated, e.g.
    an intent-to-slot graph with zero estimated intents).
    """

    node_types: tuple[str, ...]
    edges: tuple[tuple[int, int, str], ...]
    node_type_set: tuple[str, ...]
    relations: tuple[str, ...]

    def __post_init__(self):
        n = len(self.node_types)
        seen = set()
        for src, dst, rel in self.edges:
            if not (0 <= src < n and 0 <= dst < n):
                raise ValueError(f"edge ({src}, {dst}, {rel}) out of range for {n} nodes")
            if rel not in self.relations:
                raise ValueError(f"edge relation {rel!r} not in declared set {self.relations}")
            if (src, dst, rel) in seen:
                raise ValueError(f"duplicate edge ({src}, {dst}, {rel})")
            seen.add((src, dst, rel))
        for t in self.node_types:
            if t not in self.node_type_set:
                raise ValueError(f"node type {t!r} not in declared set {self.node_type_set}")

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def incoming(self, relation: str, node: int) -> list[int]:
        """Sources of ``relation``-typed edges into ``node``, in edge order."""
        return [s for s, d, r in self.edges if d == node and r == relation]

    def incoming_masks(self) -> dict[str, np.ndarray]:
        """Per-relation boolean (N, N) masks; mask[i, j] marks edge j -> i."""
        n = self.num_nodes
        masks = {rel: np.zeros((n, n), dtype=bool) for rel in self.relations}
        for src, dst, rel in self.edges:
            masks[rel][dst, src] = True
        return masks

    def nodes_without_incoming(self) -> list[int]:
        has = np.zeros(self.num_nodes, dtype=bool)
        for _src, dst, _rel in self.edges:
            has[dst] = True
        return [int(i) for i in np.flatnonzero(~has)]

    def export_text(self) -> str:
        """Line-oriented debug dump: one ``src dst relation`` per edge."""
        return "\n".join(f"{s} {d} {r}" for s, d, r in self.edges) + ("\n" if self.edges else "")


def _window(i: int, n: int, w: int) -> range:
    return range(max(0, i - w), min(n - 1, i + w) + 1)


@lru_cache(maxsize=512)
def build_s2i_graph(n: int, w: int) -> HeteroGraph:
    """Slot-to-intent graph: 2n nodes (I_0..I_{n-1}, then SL_0..SL_{n-1}).

    Node i gets windowed incoming edges from both node classes; the four
    relations distinguish which class feeds which.
    """
    if n < 1:
        raise ValueError(f"token count must be >= 1, got {n}")
    if w < 0:
        raise ValueError(f"window size must be >= 0, got {w}")
    sl = lambda i: n + i  # noqa: E731 - index of SL_i
    edges: list[tuple[int, int, str]] = []
    for i in range(n):
        for j in _window(i, n, w):
            edges.append((j, i, "intent_semantics_dependencies"))
            edges.append((sl(j), i, "slot_to_intent_guidance"))
            edges.append((sl(j), sl(i), "slot_label_dependencies"))
            edges.append((j, sl(i), "intent_to_slot_label"))
    return HeteroGraph(
        node_types=("I",) * n + ("SL",) * n,
        edges=tuple(edges),
        node_type_set=S2I_NODE_TYPES,
        relations=S2I_RELATIONS,
    )


@lru_cache(maxsize=512)
def build_i2s_graph(n: int, w: int, m: int) -> HeteroGraph:
    """Intent-to-slot graph: n + m nodes (S_0..S_{n-1}, then IL_0..IL_{m-1}).

    S nodes see a window of S nodes plus every IL node; IL nodes see every
    S node and every IL node (themselves included).
    """
    if n < 1:
        raise ValueError(f"token count must be >= 1, got {n}")
    if w < 0:
        raise ValueError(f"window size must be >= 0, got {w}")
    if m < 0:
        raise ValueError(f"estimated intent count must be >= 0, got {m}")
    il = lambda j: n + j  # noqa: E731 - index of IL_j
    edges: list[tuple[int, int, str]] = []
    for i in range(n):
        for j in _window(i, n, w):
            edges.append((j, i, "slot_semantics_dependencies"))
        for j in range(m):
            edges.append((il(j), i, "intent_to_slot_guidance"))
    for j in range(m):
        for i in range(n):
            edges.append((i, il(j), "semantics_to_intent_label"))
        for j2 in range(m):
            edges.append((il(j2), il(j), "intent_label_dependencies"))
    return HeteroGraph(
        node_types=("S",) * n + ("IL",) * m,
        edges=tuple(edges),
        node_type_set=I2S_NODE_TYPES,
        relations=I2S_RELATIONS,
    )


def collapse_to_homogeneous(g: HeteroGraph) -> HeteroGraph:
    """Remap every edge to a single relation type, keeping the topology.

    This is the ablation that turns relation-specific attention into plain
    multi-head graph attention. Idempotent; parallel edges that differed
    only by relation merge into one.
    """
    deduped = dict.fromkeys((s, d, COLLAPSED_RELATION) for s, d, _ in g.edges)
    return HeteroGraph(
        node_types=g.node_types,
        edges=tuple(deduped),
        node_type_set=g.node_type_set,
        relations=(COLLAPSED_RELATION,),
    )
