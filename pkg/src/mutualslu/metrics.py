"""Evaluation: multi-intent accuracy, span-level slot F1, overall accuracy.

Slot F1 is span-level (CoNLL-style, exact type and boundary match,
micro-averaged over the corpus); token-level F1 over non-O tags is emitted
alongside as a diagnostic. Intent accuracy is exact set equality. Overall
accuracy counts utterances whose intent set and every slot tag are correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

__all__ = [
    "bio_spans",
    "SpanScore",
    "slot_span_f1",
    "token_tag_f1",
    "intent_accuracy",
    "overall_accuracy",
    "EvalReport",
    "build_report",
    "render_report",
    "report_to_kv",
]

Span = tuple[int, int, str]  # start, end-exclusive, type


def bio_spans(tags: Sequence[str]) -> set[Span]:
    """Extract typed spans from a BIO sequence.

    A stray I-X (no open span of type X) starts a new span, the standard
    repair for uncoordinated tags from parallel decoding; the scorer must
    accept any tag sequence.
    """
    spans: set[Span] = set()
    start = -1
    current = ""
    for i, tag in enumerate(tags):
        if tag == "O":
            if start >= 0:
                spans.add((start, i, current))
            start, current = -1, ""
            continue
        prefix, _, typ = tag.partition("-")
        opens = prefix == "B" or typ != current or start < 0
        if opens:
            if start >= 0:
                spans.add((start, i, current))
            start, current = i, typ
    if start >= 0:
        spans.add((start, len(tags), current))
    return spans


@dataclass
class SpanScore:
    precision: float
    recall: float
    f1: float
    matched: int
    n_pred: int
    n_gold: int


def slot_span_f1(
    pred_tags: Sequence[Sequence[str]],
    gold_tags: Sequence[Sequence[str]],
) -> SpanScore:
    """Micro-averaged exact-match span P/R/F1 over a corpus.

    The degenerate corpus with zero gold and zero predicted spans scores
    1.0 across the board (an all-O corpus labeled all-O is perfect).
    """
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"{len(pred_tags)} predictions vs {len(gold_tags)} references")
    tp = n_pred = n_gold = 0
    for pred, gold in zip(pred_tags, gold_tags):
        if len(pred) != len(gold):
            raise ValueError(f"tag sequence lengths differ: {len(pred)} vs {len(gold)}")
        p, g = bio_spans(pred), bio_spans(gold)
        tp += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    if n_pred == 0 and n_gold == 0:
        return SpanScore(1.0, 1.0, 1.0, 0, 0, 0)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return SpanScore(precision, recall, f1, tp, n_pred, n_gold)


def token_tag_f1(
    pred_tags: Sequence[Sequence[str]],
    gold_tags: Sequence[Sequence[str]],
) -> float:
    """Micro F1 over non-O token tags; diagnostic companion to the span score."""
    tp = n_pred = n_gold = 0
    for pred, gold in zip(pred_tags, gold_tags):
        for p, g in zip(pred, gold):
            if p != "O":
                n_pred += 1
            if g != "O":
                n_gold += 1
            if p == g != "O":
                tp += 1
    if n_pred == 0 and n_gold == 0:
        return 1.0
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    return 2 * precision * recall / (precision + recall) if precision + recall else 0.0


def intent_accuracy(preds: Sequence[Iterable[str]], golds: Sequence[Iterable[str]]) -> float:
    """Fraction of utterances whose predicted intent set is exactly right."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions vs {len(golds)} references")
    hits = sum(1 for p, g in zip(preds, golds) if set(p) == set(g))
    return hits / len(preds) if preds else 0.0


def overall_accuracy(
    pred_intents: Sequence[Iterable[str]],
    gold_intents: Sequence[Iterable[str]],
    pred_tags: Sequence[Sequence[str]],
    gold_tags: Sequence[Sequence[str]],
) -> float:
    """Fraction of utterances with the full frame right: exact intent set
    and token-wise exact slot tags."""
    total = len(gold_intents)
    hits = 0
    for pi, gi, pt, gt in zip(pred_intents, gold_intents, pred_tags, gold_tags):
        if set(pi) == set(gi) and tuple(pt) == tuple(gt):
            hits += 1
    return hits / total if total else 0.0


@dataclass
class EvalReport:
    intent_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    token_f1: float
    overall_accuracy: float
    n_utterances: int
    n_gold_spans: int
    n_pred_spans: int


def build_report(
    pred_intents: Sequence[Iterable[str]],
    gold_intents: Sequence[Iterable[str]],
    pred_tags: Sequence[Sequence[str]],
    gold_tags: Sequence[Sequence[str]],
) -> EvalReport:
    span = slot_span_f1(pred_tags, gold_tags)
    return EvalReport(
        intent_accuracy=intent_accuracy(pred_intents, gold_intents),
        slot_precision=span.precision,
        slot_recall=span.recall,
        slot_f1=span.f1,
        token_f1=token_tag_f1(pred_tags, gold_tags),
        overall_accuracy=overall_accuracy(pred_intents, gold_intents, pred_tags, gold_tags),
        n_utterances=len(gold_intents),
        n_gold_spans=span.n_gold,
        n_pred_spans=span.n_pred,
    )


_REPORT_ROWS = (
    ("intent accuracy", "intent_accuracy"),
    ("slot precision", "slot_precision"),
    ("slot recall", "slot_recall"),
    ("slot F1 (span)", "slot_f1"),
    ("slot F1 (token)", "token_f1"),
    ("overall accuracy", "overall_accuracy"),
)


def render_report(report: EvalReport) -> str:
    """Aligned human-readable table."""
    lines = [f"{label:<18} {getattr(report, attr):8.4f}" for label, attr in _REPORT_ROWS]
    lines.append(f"{'utterances':<18} {report.n_utterances:8d}")
    lines.append(f"{'gold spans':<18} {report.n_gold_spans:8d}")
    lines.append(f"{'pred spans':<18} {report.n_pred_spans:8d}")
    return "\n".join(lines)


def report_to_kv(report: EvalReport) -> str:
    """Machine-readable key=value form, one metric per line."""
    pairs = [(attr, getattr(report, attr)) for _, attr in _REPORT_ROWS]
    pairs += [
        ("n_utterances", report.n_utterances),
        ("n_gold_spans", report.n_gold_spans),
        ("n_pred_spans", report.n_pred_spans),
    ]
    return "\n".join(
        f"{key}={value:.6f}" if isinstance(value, float) else f"{key}={value}"
        for key, value in pairs
    ) + "\n"
