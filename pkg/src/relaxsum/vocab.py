"""Token vocabulary with the reserved ids shared by every module."""
from __future__ import annotations

import json
from typing import Iterable

PAD, UNK, BOS, EOS, END_SEP = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>", "[END]")


class Vocab:
    """Bidirectional id/string table.

    Ids 0-4 are reserved (PAD, UNK, BOS, EOS and the ``[END]`` document
    separator). A frozen vocabulary maps unseen words to UNK; an open one
    grows on lookup.
    """

    def __init__(self, words: Iterable[str] = (), frozen: bool = True):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {w: i for i, w in enumerate(self._itos)}
        self.frozen = False
        for w in words:
            self.add(w)
        self.frozen = frozen

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, word: str) -> bool:
        return word in self._stoi

    def add(self, word: str) -> int:
        if word in self._stoi:
            return self._stoi[word]
        if self.frozen:
            return UNK
        self._stoi[word] = len(self._itos)
        self._itos.append(word)
        return self._stoi[word]

    def id(self, word: str) -> int:
        if self.frozen:
            return self._stoi.get(word, UNK)
        return self.add(word)

    def word(self, idx: int) -> str:
        if not 0 <= idx < len(self._itos):
            raise IndexError(f"token id {idx} outside vocabulary of size {len(self)}")
        return self._itos[idx]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.word(i) for i in ids)

    @property
    def words(self) -> list[str]:
        return list(self._itos[len(RESERVED):])

    def to_json(self) -> str:
        return json.dumps({"words": self.words})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        return cls(json.loads(text)["words"], frozen=True)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        from relaxsum.text_metrics import split_words

        v = cls(frozen=False)
        for text in texts:
            for w in split_words(text):
                v.add(w)
        v.frozen = True
        return v
