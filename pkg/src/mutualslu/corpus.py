"""Corpus parsing, vocabularies, encoding, and synthetic corpus generation.

File format (UTF-8 text): utterances are blocks separated by one blank
line. Each block is n lines of ``token<space>tag`` followed by a single
line of intent labels joined by ``#``. The file may end without a trailing
blank line. CRLF endings are normalized to LF.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CorpusFormatError",
    "UnknownLabelError",
    "Utterance",
    "Vocabulary",
    "EncodedUtterance",
    "parse_corpus",
    "parse_corpus_text",
    "serialize_corpus",
    "write_corpus",
    "build_vocab",
    "encode",
    "encode_corpus",
    "SynthSpec",
    "generate_synthetic",
    "validate_bio",
]

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_TAG_RE = re.compile(r"^(O|[BI]-.+)$")


class CorpusFormatError(ValueError):
    """Malformed corpus file; message carries the offending line number."""


class UnknownLabelError(ValueError):
    """A gold label is absent from the vocabulary (strict encoding)."""


@dataclass(frozen=True)
class Utterance:
    """Token sequence with gold BIO tags and a gold intent set.

    ``intents`` is stored sorted so that intent sets compare and serialize
    deterministically.
    """

    tokens: tuple[str, ...]
    slot_tags: tuple[str, ...]
    intents: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise ValueError("utterance must contain at least one token")
        if len(self.slot_tags) != len(self.tokens):
            raise ValueError(
                f"{len(self.slot_tags)} tags for {len(self.tokens)} tokens")
        for tag in self.slot_tags:
            if not _TAG_RE.match(tag):
                raise ValueError(f"invalid BIO tag {tag!r}")
        if not self.intents:
            raise ValueError("utterance must carry at least one intent")
        if len(set(self.intents)) != len(self.intents):
            raise ValueError(f"duplicate intents in {self.intents}")
        object.__setattr__(self, "intents", tuple(sorted(self.intents)))

    def __len__(self) -> int:
        return len(self.tokens)


def _utterance_from_block(lines: list[tuple[int, str]], path: str) -> Utterance:
    if not lines:
        raise CorpusFormatError(f"{path}: empty block")
    intent_lineno, intent_line = lines[-1]
    if len(intent_line.split()) != 1:
        raise CorpusFormatError(
            f"{path}:{intent_lineno}: missing intent line "
            f"(last line of a block must be intents joined by '#')")
    if len(lines) == 1:
        raise CorpusFormatError(
            f"{path}:{intent_lineno}: block has an intent line but no tokens")
    tokens, tags = [], []
    for lineno, line in lines[:-1]:
        parts = line.split()
        if len(parts) != 2:
            raise CorpusFormatError(
                f"{path}:{lineno}: expected 'token tag', got {line!r}")
        tokens.append(parts[0])
        tags.append(parts[1])
    intents = [s for s in intent_line.split("#") if s]
    if not intents:
        raise CorpusFormatError(f"{path}:{intent_lineno}: empty intent list")
    try:
        return Utterance(tuple(tokens), tuple(tags), tuple(intents))
    except ValueError as exc:
        raise CorpusFormatError(f"{path}:{intent_lineno}: {exc}") from exc


def parse_corpus_text(text: str, path: str = "<string>") -> list[Utterance]:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    # drop trailing blank lines so files ending in 0..k newlines parse alike
    while lines and not lines[-1].strip():
        lines.pop()
    utterances: list[Utterance] = []
    block: list[tuple[int, str]] = []
    for lineno, line in enumerate(lines, 1):
        if line.strip():
            block.append((lineno, line.rstrip()))
        else:
            if not block:
                raise CorpusFormatError(f"{path}:{lineno}: empty block")
            utterances.append(_utterance_from_block(block, path))
            block = []
    if block:
        utterances.append(_utterance_from_block(block, path))
    return utterances


def parse_corpus(path: str | Path) -> list[Utterance]:
    """Parse a corpus file into utterances, in file order."""
    p = Path(path)
    return parse_corpus_text(p.read_text(encoding="utf-8"), str(p))


def serialize_corpus(utterances: Iterable[Utterance]) -> str:
    blocks = []
    for u in utterances:
        lines = [f"{tok} {tag}" for tok, tag in zip(u.tokens, u.slot_tags)]
        lines.append("#".join(u.intents))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def write_corpus(utterances: Iterable[Utterance], path: str | Path) -> None:
    Path(path).write_text(serialize_corpus(utterances), encoding="utf-8")


@dataclass
class Vocabulary:
    """Dense id maps for tokens (with PAD/UNK), slot labels, and intents."""

    tokens: tuple[str, ...]
    slot_labels: tuple[str, ...]
    intent_labels: tuple[str, ...]
    token_to_id: dict[str, int] = field(init=False, repr=False)
    slot_to_id: dict[str, int] = field(init=False, repr=False)
    intent_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.tokens[0] != PAD_TOKEN or self.tokens[1] != UNK_TOKEN:
            raise ValueError("token vocabulary must start with PAD, UNK")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        self.slot_to_id = {t: i for i, t in enumerate(self.slot_labels)}
        self.intent_to_id = {t: i for i, t in enumerate(self.intent_labels)}

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_slots(self) -> int:
        return len(self.slot_labels)

    @property
    def n_intents(self) -> int:
        return len(self.intent_labels)

    def token_id(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def slot_id(self, tag: str) -> int:
        try:
            return self.slot_to_id[tag]
        except KeyError:
            raise UnknownLabelError(f"unknown slot label {tag!r}") from None

    def intent_id(self, label: str) -> int:
        try:
            return self.intent_to_id[label]
        except KeyError:
            raise UnknownLabelError(f"unknown intent label {label!r}") from None

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "slot_labels": list(self.slot_labels),
            "intent_labels": list(self.intent_labels),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Vocabulary":
        return cls(
            tokens=tuple(data["tokens"]),
            slot_labels=tuple(data["slot_labels"]),
            intent_labels=tuple(data["intent_labels"]),
        )


def _freq_sorted(counter: Counter) -> list[str]:
    return [sym for sym, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_vocab(train: Sequence[Utterance], min_freq: int = 1) -> Vocabulary:
    """Build id maps from training data.

    Tokens below ``min_freq`` are dropped (they will encode to UNK); slot
    and intent labels are always kept. Ids are assigned by descending
    frequency, ties broken lexicographically, so the mapping is a pure
    function of the data.
    """
    if not train:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    tok_counts: Counter = Counter()
    slot_counts: Counter = Counter()
    intent_counts: Counter = Counter()
    for u in train:
        tok_counts.update(u.tokens)
        slot_counts.update(u.slot_tags)
        intent_counts.update(u.intents)
    kept = Counter({t: c for t, c in tok_counts.items() if c >= min_freq})
    return Vocabulary(
        tokens=(PAD_TOKEN, UNK_TOKEN, *_freq_sorted(kept)),
        slot_labels=tuple(_freq_sorted(slot_counts)),
        intent_labels=tuple(_freq_sorted(intent_counts)),
    )


@dataclass(frozen=True)
class EncodedUtterance:
    token_ids: tuple[int, ...]
    slot_tag_ids: tuple[int, ...]
    intent_multihot: np.ndarray  # shape (n_intents,), values 0/1

    def __post_init__(self):
        if len(self.token_ids) != len(self.slot_tag_ids):
            raise ValueError("token/tag id length mismatch")

    @property
    def intent_ids(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.intent_multihot))


def encode(u: Utterance, vocab: Vocabulary) -> EncodedUtterance:
    """Encode an utterance; unknown tokens map to UNK, unknown gold labels raise."""
    multihot = np.zeros(vocab.n_intents, dtype=np.int8)
    for label in u.intents:
        multihot[vocab.intent_id(label)] = 1
    return EncodedUtterance(
        token_ids=tuple(vocab.token_id(t) for t in u.tokens),
        slot_tag_ids=tuple(vocab.slot_id(t) for t in u.slot_tags),
        intent_multihot=multihot,
    )


def encode_corpus(
    utterances: Sequence[Utterance],
    vocab: Vocabulary,
    strict: bool = True,
    warn=None,
) -> list[EncodedUtterance]:
    """Encode a corpus; in non-strict mode skip (with a warning) utterances
    whose gold labels are not in the vocabulary."""
    out = []
    for i, u in enumerate(utterances):
        try:
            out.append(encode(u, vocab))
        except UnknownLabelError:
            if strict:
                raise
            if warn is not None:
                warn(f"skipping utterance {i}: gold label not in vocabulary")
    return out


def validate_bio(tags: Sequence[str]) -> bool:
    """True iff the sequence is well-formed BIO: no I-X without a preceding
    B-X or I-X of the same type."""
    prev = "O"
    for tag in tags:
        if not _TAG_RE.match(tag):
            return False
        if tag.startswith("I-"):
            typ = tag[2:]
            if not (prev == f"B-{typ}" or prev == f"I-{typ}"):
                return False
        prev = tag
    return True


@dataclass(frozen=True)
class SynthSpec:
    """Shape of a synthetic corpus.

    Every intent k is tied to one trigger token and one characteristic slot
    type; an utterance carrying intent k always contains both, so slots
    predict intents and intents predict slots by construction.
    """

    n_intents: int = 4
    n_slot_types: int = 4
    n_fillers: int = 12
    min_len: int = 4
    max_len: int = 10
    max_intents_per_utterance: int = 2
    train_size: int = 32
    dev_size: int = 16
    test_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.n_intents < 1:
            raise ValueError("synthetic corpus needs at least one intent label")
        if self.n_slot_types < 1:
            raise ValueError("synthetic corpus needs at least one slot type")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValueError("bad utterance length range")


def _synth_utterance(spec: SynthSpec, rng: np.random.Generator) -> Utterance:
    k = int(rng.integers(1, spec.max_intents_per_utterance + 1))
    k = min(k, spec.n_intents)
    intent_ids = sorted(rng.choice(spec.n_intents, size=k, replace=False).tolist())
    segments: list[list[tuple[str, str]]] = []
    for intent in intent_ids:
        slot_type = f"t{intent % spec.n_slot_types}"
        span: list[tuple[str, str]] = [(f"v-{slot_type}-b", f"B-{slot_type}")]
        if rng.random() < 0.5:
            span.append((f"v-{slot_type}-i", f"I-{slot_type}"))
        segments.append([(f"trig{intent}", "O")] + span)
    body = sum(len(s) for s in segments)
    target = int(rng.integers(spec.min_len, spec.max_len + 1))
    for _ in range(max(0, target - body)):
        filler = f"w{int(rng.integers(spec.n_fillers))}"
        segments.append([(filler, "O")])
    order = rng.permutation(len(segments))
    pairs = [pair for idx in order for pair in segments[idx]]
    tokens, tags = zip(*pairs)
    return Utterance(tokens, tags, tuple(f"intent{j}" for j in intent_ids))


def generate_synthetic(spec: SynthSpec) -> tuple[list[Utterance], list[Utterance], list[Utterance]]:
    """Deterministically generate (train, dev, test) corpora from a seed."""
    rng = np.random.default_rng(spec.seed)
    splits = []
    for size in (spec.train_size, spec.dev_size, spec.test_size):
        splits.append([_synth_utterance(spec, rng) for _ in range(size)])
    train, dev, test = splits
    return train, dev, test
