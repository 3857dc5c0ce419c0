"""Building one discriminative prompt per candidate label."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .tasks import LABEL_SLOT, SENT1_SLOT, SENT2_SLOT, InputExample, Label, TaskError, TaskSpec
from .tokenizer import Encoding, TokenizerHandle

DEFAULT_MAX_LEN = 128


class Component(enum.IntEnum):
    LABEL_WORD = 0
    SENT1 = 1
    SENT2 = 2


@dataclass(frozen=True)
class ComponentSpan:
    component: Component
    positions: tuple[int, ...]


@dataclass(frozen=True)
class BuiltPrompt:
    label: Label
    token_ids: tuple[int, ...]
    spans: tuple[ComponentSpan, ...]
    word_alignment: dict[int, str]

    def span(self, component: Component) -> ComponentSpan:
        for s in self.spans:
            if s.component == component:
                return s
        raise KeyError(component)

    @property
    def label_position(self) -> int:
        return self.span(Component.LABEL_WORD).positions[0]

    def __len__(self):
        return len(self.token_ids)


def _template_overhead(spec: TaskSpec, tokenizer: TokenizerHandle) -> int:
    literal = sum(len(tokenizer.encode(p).ids) for p in spec.template.parts if p not in (SENT1_SLOT, SENT2_SLOT, LABEL_SLOT))
    return literal + 3  # [CLS], [SEP], label word


def _longest_first(lengths: list[int], budget: int) -> list[int]:
    lengths = list(lengths)
    while sum(lengths) > budget:
        # ties go to the first sentence
        i = max(range(len(lengths)), key=lambda j: (lengths[j], -j))
        lengths[i] -= 1
    return lengths


def _sentence_encodings(example: InputExample, spec: TaskSpec, tokenizer: TokenizerHandle) -> list[Encoding]:
    example.check(spec)
    texts = [example.sentence1] + ([example.sentence2] if spec.is_pair else [])
    encs = [tokenizer.encode(t) for t in texts]
    for i, enc in enumerate(encs, 1):
        if not enc.ids:
            raise TaskError(f"sentence {i} is empty after tokenization")
    return encs


def _kept_lengths(encs: list[Encoding], spec: TaskSpec, tokenizer: TokenizerHandle, max_len: int) -> list[int]:
    budget = max_len - _template_overhead(spec, tokenizer)
    if budget < len(encs):
        raise TaskError(f"max_len={max_len} cannot hold one token per sentence for task {spec.name}")
    return _longest_first([len(e.ids) for e in encs], budget)


def truncate(example: InputExample, spec: TaskSpec, tokenizer: TokenizerHandle, max_len: int = DEFAULT_MAX_LEN) -> InputExample:
    """Longest-first truncation so the built prompt fits ``max_len``.

    Sentences are rebuilt from the words of the retained tokens; a word cut
    mid-way by a subword tokenizer is kept whole.
    """
    encs = _sentence_encodings(example, spec, tokenizer)
    kept = _kept_lengths(encs, spec, tokenizer, max_len)
    if kept == [len(e.ids) for e in encs]:
        return example
    texts = []
    for enc, n in zip(encs, kept):
        last_word = enc.word_index[n - 1]
        texts.append(" ".join(enc.words[: last_word + 1]))
    return InputExample(texts[0], texts[1] if len(texts) > 1 else None, example.gold)


def build_prompts(
    example: InputExample,
    spec: TaskSpec,
    tokenizer: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[BuiltPrompt]:
    encs = _sentence_encodings(example, spec, tokenizer)
    kept = _kept_lengths(encs, spec, tokenizer, max_len)
    slot_encs = {SENT1_SLOT: (encs[0], kept[0], Component.SENT1)}
    if spec.is_pair:
        slot_encs[SENT2_SLOT] = (encs[1], kept[1], Component.SENT2)

    prompts = []
    for label in spec.labels:
        word = spec.verbalizer(label)
        word_enc = tokenizer.encode(word)
        if len(word_enc.ids) != 1:
            raise TaskError(f"label word {word!r} of {label.name!r} is not a single token")
        ids = [tokenizer.cls_id]
        align: dict[int, str] = {}
        spans: dict[Component, list[int]] = {}
        for part in spec.template.parts:
            if part == LABEL_SLOT:
                align[len(ids)] = word_enc.words[0]
                spans[Component.LABEL_WORD] = [len(ids)]
                ids.append(word_enc.ids[0])
            elif part in slot_encs:
                enc, n, comp = slot_encs[part]
                spans[comp] = list(range(len(ids), len(ids) + n))
                for tok, wi in zip(enc.ids[:n], enc.word_index[:n]):
                    align[len(ids)] = enc.words[wi]
                    ids.append(tok)
            else:
                lit = tokenizer.encode(part)
                for tok, wi in zip(lit.ids, lit.word_index):
                    align[len(ids)] = lit.words[wi]
                    ids.append(tok)
        ids.append(tokenizer.sep_id)
        prompts.append(
            BuiltPrompt(
                label=label,
                token_ids=tuple(ids),
                spans=tuple(ComponentSpan(c, tuple(spans[c])) for c in sorted(spans)),
                word_alignment=align,
            )
        )
    return prompts
