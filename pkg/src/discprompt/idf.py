"""Normalized inverse document frequency weights for scored tokens."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .prompts import BuiltPrompt, ComponentSpan
from .tasks import InputExample
from .tokenizer import split_words

HEADER_PREFIX = "#idf"


@dataclass(frozen=True)
class IdfTable:
    weights: Mapping[str, float]
    corpus_size: int
    default_weight: float = 1.0
    raw: Mapping[str, float] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", MappingProxyType(dict(self.weights)))
        object.__setattr__(self, "raw", MappingProxyType(dict(self.raw)))

    def __getitem__(self, word: str) -> float:
        return self.weights.get(word.lower(), self.default_weight)

    def __len__(self):
        return len(self.weights)

    def save(self, path: str | Path) -> None:
        lines = [f"{HEADER_PREFIX}\tN={self.corpus_size}\tdefault={self.default_weight!r}"]
        lines += [f"{w}\t{v!r}" for w, v in sorted(self.weights.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IdfTable":
        header, *rows = Path(path).read_text(encoding="utf-8").splitlines()
        fields = dict(f.split("=", 1) for f in header.split("\t")[1:])
        weights = {}
        for row in rows:
            word, value = row.rsplit("\t", 1)
            weights[word] = float(value)
        return cls(weights, int(fields["N"]), float(fields["default"]))


def _as_words(doc: str | Sequence[str]) -> list[str]:
    if isinstance(doc, str):
        return split_words(doc)
    return [w.lower() for w in doc]


def compute_idf(corpus: Iterable[str | Sequence[str]]) -> IdfTable:
    """Min-max normalized ``ln(N / df)`` over the corpus vocabulary.

    ``df`` counts documents containing a word, so repeats inside one document
    do not matter. If every word has the same raw value all weights are 1.
    """
    df: Counter[str] = Counter()
    n = 0
    for doc in corpus:
        n += 1
        df.update(set(_as_words(doc)))
    if n == 0:
        raise ValueError("cannot compute IDF from an empty corpus")
    raw = {w: math.log(n / c) for w, c in df.items()}
    if not raw:
        return IdfTable({}, n)
    lo, hi = min(raw.values()), max(raw.values())
    if hi == lo:
        weights = dict.fromkeys(raw, 1.0)
    else:
        weights = {w: (r - lo) / (hi - lo) for w, r in raw.items()}
    return IdfTable(weights, n, 1.0, raw)


def example_documents(examples: Iterable[InputExample]) -> list[str]:
    """One document per example; both sentences of a pair go into the same one."""
    return [e.sentence1 if e.sentence2 is None else f"{e.sentence1} {e.sentence2}" for e in examples]


def token_weights(prompt: BuiltPrompt, span: ComponentSpan, table: IdfTable) -> list[float]:
    out = []
    for pos in span.positions:
        try:
            word = prompt.word_alignment[pos]
        except KeyError:
            raise ValueError(f"position {pos} has no word alignment") from None
        out.append(table[word])
    return out
