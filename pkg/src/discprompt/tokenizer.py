"""Tokenizers with token-to-word alignment.

Anything exposing ``encode``, ``cls_id``, ``sep_id``, ``pad_id`` and
``vocab_size`` can be used by the prompt builder; the two classes here are
the whole-word tokenizer used by the toy stack and a small subword variant
used to exercise the single-token verbalizer check.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP)

_WORD_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]")


def split_words(text: str) -> list[str]:
    """Lowercased word segmentation shared by tokenizers and IDF counting."""
    return [w.lower() for w in _WORD_RE.findall(text)]


@dataclass(frozen=True)
class Encoding:
    ids: list[int]
    # word_index[i] indexes into `words` for token i
    word_index: list[int]
    words: list[str]


class TokenizerHandle(Protocol):
    cls_id: int
    sep_id: int
    pad_id: int

    @property
    def vocab_size(self) -> int: ...

    def encode(self, text: str) -> Encoding: ...

    def decode(self, ids: Iterable[int]) -> list[str]: ...


@dataclass
class WordTokenizer:
    """One token per word; unknown words map to ``[UNK]``."""

    vocab: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for tok in SPECIAL_TOKENS:
            if tok not in self.vocab:
                self.vocab[tok] = len(self.vocab)
        self._inv = {i: t for t, i in self.vocab.items()}

    @classmethod
    def from_corpus(cls, texts: Iterable[str], extra: Iterable[str] = ()) -> "WordTokenizer":
        vocab = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}
        words = set(w for t in texts for w in split_words(t))
        words.update(w for t in extra for w in split_words(t))
        for w in sorted(words):
            vocab.setdefault(w, len(vocab))
        return cls(vocab)

    @property
    def pad_id(self) -> int:
        return self.vocab[PAD]

    @property
    def unk_id(self) -> int:
        return self.vocab[UNK]

    @property
    def cls_id(self) -> int:
        return self.vocab[CLS]

    @property
    def sep_id(self) -> int:
        return self.vocab[SEP]

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.vocab[t] for t in SPECIAL_TOKENS)

    def encode(self, text: str) -> Encoding:
        words = split_words(text)
        ids = [self.vocab.get(w, self.unk_id) for w in words]
        return Encoding(ids, list(range(len(words))), words)

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._inv[i] for i in ids]

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"type": "word", "vocab": self.vocab}, indent=0))

    @classmethod
    def load(cls, path: str | Path) -> "WordTokenizer":
        data = json.loads(Path(path).read_text())
        return cls(dict(data["vocab"]))


class SubwordTokenizer(WordTokenizer):
    """Word tokenizer that splits out-of-vocabulary words into characters.

    Each character piece gets a ``##`` id; all pieces align to the source word.
    """

    def encode(self, text: str) -> Encoding:
        words = split_words(text)
        ids: list[int] = []
        index: list[int] = []
        for i, w in enumerate(words):
            if w in self.vocab:
                ids.append(self.vocab[w])
                index.append(i)
                continue
            for j, ch in enumerate(w):
                piece = ch if j == 0 else "##" + ch
                ids.append(self.vocab.get(piece, self.unk_id))
                index.append(i)
        return Encoding(ids, index, words)
