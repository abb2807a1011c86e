"""Corpus records, JSONL I/O, document concatenation and a synthetic generator."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from relaxsum.coverage_reward import DocumentSet, coverage_vector, sample_std
from relaxsum.text_metrics import Origin, TokenSeq, tokenize
from relaxsum.vocab import END_SEP, Vocab

log = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Raised when a corpus file yields no usable records."""


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    documents: tuple[str, ...]
    summary: str

    def __post_init__(self):
        if not self.summary.strip():
            raise ValueError("summary must be nonempty")
        if not any(d.strip() for d in self.documents):
            raise ValueError("at least one nonempty document is required")

    def to_json(self) -> dict:
        return {"documents": list(self.documents), "summary": self.summary, "id": self.id}


class LoadedCorpus(list):
    """Records from a corpus file; ``errors`` lists ``(line_number, message)`` for skipped lines."""

    def __init__(self, records=(), errors=()):
        super().__init__(records)
        self.errors = list(errors)

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def parse_record(obj, default_id: str) -> CorpusRecord:
    if not isinstance(obj, dict):
        raise ValueError("line is not a JSON object")
    if "summary" not in obj:
        raise ValueError("missing field 'summary'")
    if "documents" not in obj:
        raise ValueError("missing field 'documents'")
    docs, summary = obj["documents"], obj["summary"]
    if not isinstance(docs, list) or not all(isinstance(d, str) for d in docs):
        raise ValueError("'documents' must be an array of strings")
    if not isinstance(summary, str):
        raise ValueError("'summary' must be a string")
    rid = obj.get("id", default_id)
    return CorpusRecord(str(rid), tuple(docs), summary)


def load_corpus(path: str | Path) -> LoadedCorpus:
    """Read one JSON record per line; bad lines are skipped and reported, never dropped silently."""
    records, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_record(json.loads(line), str(lineno)))
            except (json.JSONDecodeError, ValueError) as exc:
                errors.append((lineno, str(exc)))
                log.warning("%s:%d: skipped (%s)", path, lineno, exc)
    if not records:
        raise CorpusError(f"{path}: no valid records ({len(errors)} malformed lines)")
    return LoadedCorpus(records, errors)


def save_corpus(records: Iterable[CorpusRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def document_set(record: CorpusRecord, vocab: Vocab) -> DocumentSet:
    """Tokenized nonempty documents of a record, in their original order."""
    docs = [tokenize(d, vocab, Origin.DOCUMENT).tokens for d in record.documents]
    return DocumentSet(tuple(d for d in docs if d))


def concat_documents(record: CorpusRecord | DocumentSet, vocab: Vocab | None = None,
                     max_input_len: int | None = None) -> TokenSeq:
    """Documents joined by ``[END]`` and truncated to ``max_input_len`` tokens."""
    docs = record if isinstance(record, DocumentSet) else document_set(record, vocab)
    out: list[int] = []
    for i, d in enumerate(docs):
        if i:
            out.append(END_SEP)
        out.extend(d)
    if max_input_len is not None:
        out = out[:max_input_len]
    return TokenSeq(tuple(out), Origin.DOCUMENT)


def build_vocab(records: Sequence[CorpusRecord]) -> Vocab:
    texts = [t for r in records for t in (*r.documents, r.summary)]
    return Vocab.build(texts)


# -- synthetic corpus ------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the generated corpus.

    Words come in fixed phrases of ``phrase_len`` tokens plus single filler
    words. Each record has one topic phrase repeated in every document and
    one distinct phrase per document; every pool word occurs somewhere in the
    record so no nonempty summary has zero coverage. The reference is the
    first document's phrase followed by the topic phrase (lead bias), so its
    coverage is uneven across documents.
    """
    n_phrases: int = 12
    phrase_len: int = 3
    n_fillers: int = 10
    min_docs: int = 2
    max_docs: int = 10
    doc_filler: int = 3


def _phrase_words(spec: SyntheticSpec):
    phrases = [[f"p{i}w{j}" for j in range(spec.phrase_len)] for i in range(spec.n_phrases)]
    fillers = [f"f{i}" for i in range(spec.n_fillers)]
    return phrases, fillers


def generate_synthetic_corpus(n_records: int, seed: int = 0, spec: SyntheticSpec = SyntheticSpec(),
                              prefix: str = "syn") -> list[CorpusRecord]:
    if spec.max_docs + 1 > spec.n_phrases:
        raise ValueError("need more phrases than documents per record")
    rng = np.random.default_rng(seed)
    phrases, fillers = _phrase_words(spec)
    pool = [w for p in phrases for w in p] + fillers
    vocab = Vocab(pool, frozen=True)
    out = []
    while len(out) < n_records:
        k = int(rng.integers(spec.min_docs, spec.max_docs + 1))
        chosen = rng.choice(spec.n_phrases, size=k + 1, replace=False)
        topic, own = phrases[chosen[0]], [phrases[i] for i in chosen[1:]]
        docs = []
        for i in range(k):
            words = list(rng.choice(fillers, size=spec.doc_filler))
            parts = [own[i], topic, words]
            order = rng.permutation(3)
            docs.append([w for j in order for w in parts[j]])
        present = {w for d in docs for w in d}
        missing = [w for w in pool if w not in present]
        for w in rng.permutation(missing):
            docs[int(rng.integers(k))].append(str(w))
        summary = own[0] + topic
        ds = DocumentSet(tuple(tuple(vocab.id(w) for w in d) for d in docs))
        cov = coverage_vector([vocab.id(w) for w in summary], ds)
        if sample_std(cov.values) < 0.05:
            continue
        out.append(CorpusRecord(f"{prefix}-{len(out)}", tuple(" ".join(d) for d in docs), " ".join(summary)))
    return out
