"""Tokenization, ROUGE-N/L F1 and extractive fragment coverage (EFC).

All scoring functions accept any sequence of integer token ids, including
:class:`TokenSeq`. ROUGE is computed over whole sequences with no stemming.
"""
from __future__ import annotations

import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from relaxsum import kernels
from relaxsum.vocab import Vocab

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\w+|[^\w\s]")


class Origin(enum.Enum):
    PREDICTION = "prediction"
    REFERENCE = "reference"
    DOCUMENT = "document"


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    origin: Origin = Origin.PREDICTION

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if any(t < 0 for t in self.tokens):
            raise ValueError("token ids must be non-negative")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, idx):
        return self.tokens[idx]


class Fragment(NamedTuple):
    start_in_summary: int
    start_in_document: int
    length: int


class Variant(enum.Enum):
    R1 = "R1"
    R2 = "R2"
    RL = "RL"


def split_words(text: str) -> list[str]:
    """Lowercase, split on whitespace and detach punctuation."""
    return _WORD_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocab, origin: Origin = Origin.PREDICTION) -> TokenSeq:
    return TokenSeq(tuple(vocab.id(w) for w in split_words(text)), origin)


def lcs_length(a: Sequence[int], b: Sequence[int]) -> int:
    return kernels.lcs_length(a, b)


def _ngrams(tokens: Sequence[int], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(matches: float, n_pred: int, n_ref: int) -> float:
    if n_pred == 0 or n_ref == 0 or matches == 0:
        return 0.0
    p = matches / n_pred
    r = matches / n_ref
    return 2 * p * r / (p + r)


def rouge_f1(pred: Sequence[int], ref: Sequence[int], variant: Variant | str = Variant.RL) -> float:
    variant = Variant(variant)
    pred, ref = list(pred), list(ref)
    if variant is Variant.RL:
        return _f1(lcs_length(pred, ref), len(pred), len(ref))
    n = 1 if variant is Variant.R1 else 2
    pc, rc = _ngrams(pred, n), _ngrams(ref, n)
    overlap = sum((pc & rc).values())
    return _f1(overlap, sum(pc.values()), sum(rc.values()))


def rouge_all(pred: Sequence[int], ref: Sequence[int]) -> dict[str, float]:
    return {v.value: rouge_f1(pred, ref, v) for v in Variant}


def extract_fragments(summary: Sequence[int], document: Sequence[int], min_len: int = 1) -> list[Fragment]:
    """Greedy left-to-right longest-match fragments of ``summary`` found in ``document``.

    Among equal-length matches the earliest document position wins. Matches
    shorter than ``min_len`` are skipped one summary token at a time.
    """
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    return [Fragment(*f) for f in kernels.greedy_fragments(summary, document, min_len)]


def efc(summary: Sequence[int], document: Sequence[int], min_len: int = 1) -> float:
    """Fraction of summary tokens inside extractive fragments; 0.0 for an empty summary."""
    if len(summary) == 0:
        log.debug("efc of empty summary defined as 0")
        return 0.0
    return sum(f.length for f in extract_fragments(summary, document, min_len)) / len(summary)
