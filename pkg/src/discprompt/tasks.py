"""Task definitions: labels, verbalizers, templates and the built-in tasks."""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .tokenizer import TokenizerHandle

SINGLE = "single"
PAIR = "pair"
ACCURACY = "accuracy"
F1 = "f1"

SENT1_SLOT, SENT2_SLOT, LABEL_SLOT = "<S1>", "<S2>", "<V>"
_SLOT_RE = re.compile(r"(<S1>|<S2>|<V>)")


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class Label:
    id: int
    name: str


@dataclass(frozen=True)
class Verbalizer:
    words: tuple[str, ...]  # indexed by label id

    def __call__(self, label: Label | int) -> str:
        idx = label.id if isinstance(label, Label) else label
        return self.words[idx]


@dataclass(frozen=True)
class Template:
    """A prompt pattern such as ``"<S1> It is <V> ."``.

    Literal text between slots is tokenized with the task tokenizer and
    never counted as part of a scored component.
    """

    text: str

    @property
    def parts(self) -> list[str]:
        return [p for p in _SLOT_RE.split(self.text) if p.strip()]

    @property
    def kind(self) -> str:
        return PAIR if SENT2_SLOT in self.text else SINGLE

    def check(self) -> list[str]:
        slots = _SLOT_RE.findall(self.text)
        errors = []
        if slots.count(LABEL_SLOT) != 1:
            errors.append(f"template must contain exactly one {LABEL_SLOT} slot")
        if slots.count(SENT1_SLOT) != 1:
            errors.append(f"template must contain exactly one {SENT1_SLOT} slot")
        if slots.count(SENT2_SLOT) > 1:
            errors.append(f"template may contain at most one {SENT2_SLOT} slot")
        return errors


@dataclass(frozen=True)
class TaskSpec:
    name: str
    labels: tuple[Label, ...]
    verbalizer: Verbalizer
    template: Template
    kind: str = SINGLE
    metric: str = ACCURACY
    positive_label: Label | None = None

    @classmethod
    def create(
        cls,
        name: str,
        label_words: Mapping[str, str],
        template: str,
        *,
        kind: str | None = None,
        metric: str = ACCURACY,
        positive_label: str | None = None,
    ) -> "TaskSpec":
        """Build a spec from an ordered ``{label name: label word}`` mapping."""
        labels = tuple(Label(i, n) for i, n in enumerate(label_words))
        tmpl = Template(template)
        pos = None
        if positive_label is not None:
            matches = [l for l in labels if l.name == positive_label]
            if not matches:
                raise TaskError(f"positive label {positive_label!r} not in label set")
            pos = matches[0]
        spec = cls(
            name=name,
            labels=labels,
            verbalizer=Verbalizer(tuple(label_words.values())),
            template=tmpl,
            kind=kind or tmpl.kind,
            metric=metric,
            positive_label=pos,
        )
        errors = spec.structural_errors()
        if errors:
            raise TaskError(f"{name}: " + "; ".join(errors))
        return spec

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @property
    def is_pair(self) -> bool:
        return self.kind == PAIR

    def label(self, key: str | int) -> Label:
        if isinstance(key, int):
            return self.labels[key]
        for lab in self.labels:
            if lab.name == key:
                return lab
        raise KeyError(f"unknown label {key!r} for task {self.name}")

    def structural_errors(self) -> list[str]:
        errors = self.template.check()
        if len(self.labels) < 2:
            errors.append("a task needs at least two labels")
        if [l.id for l in self.labels] != list(range(len(self.labels))):
            errors.append("label ids must be contiguous from 0")
        if len({l.name for l in self.labels}) != len(self.labels):
            errors.append("label names must be unique")
        if len(self.verbalizer.words) != len(self.labels):
            errors.append("verbalizer must map every label")
        if self.kind not in (SINGLE, PAIR):
            errors.append(f"unknown task kind {self.kind!r}")
        elif self.kind != self.template.kind:
            errors.append(f"template/kind mismatch: template is {self.template.kind}, task is {self.kind}")
        if self.metric not in (ACCURACY, F1):
            errors.append(f"unknown metric {self.metric!r}")
        if self.metric == F1 and self.positive_label is None:
            errors.append("binary F1 requires positive_label")
        if self.metric == F1 and len(self.labels) != 2:
            errors.append("binary F1 requires exactly two labels")
        return errors

    # -- serialization -----------------------------------------------------

    def dumps(self) -> str:
        cp = _config_parser()
        cp["task"] = {
            "name": self.name,
            "kind": self.kind,
            "template": self.template.text,
            "metric": self.metric,
            "positive_label": self.positive_label.name if self.positive_label else "",
        }
        cp["labels"] = {l.name: self.verbalizer(l) for l in self.labels}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def loads(cls, text: str) -> "TaskSpec":
        cp = _config_parser()
        cp.read_string(text)
        t = cp["task"]
        return cls.create(
            t["name"],
            dict(cp["labels"]),
            t["template"],
            kind=t.get("kind") or None,
            metric=t.get("metric", ACCURACY),
            positive_label=t.get("positive_label") or None,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TaskSpec":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _config_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep label-name case
    return cp


@dataclass(frozen=True)
class InputExample:
    sentence1: str
    sentence2: str | None = None
    gold: int | None = None  # label id

    def check(self, spec: TaskSpec) -> None:
        if not self.sentence1.strip():
            raise TaskError("sentence1 is empty")
        if spec.is_pair and self.sentence2 is None:
            raise TaskError(f"task {spec.name} expects sentence pairs")
        if not spec.is_pair and self.sentence2 is not None:
            raise TaskError(f"task {spec.name} expects single sentences")
        if self.gold is not None and not 0 <= self.gold < spec.num_labels:
            raise TaskError(f"gold label {self.gold} out of range")


# -- built-in tasks ---------------------------------------------------------

_SINGLE_TMPL = "<S1> It is <V> ."
_PAIR_TMPL = "<S1> ? <V> , <S2>"
_QQP_TMPL = "<S1> . <V> , <S2>"
_NLI3 = {"entailment": "Yes", "contradiction": "No", "neutral": "Maybe"}
_NLI2 = {"entailment": "Yes", "not_entailment": "No"}
_BINARY_SENT = {"negative": "terrible", "positive": "great"}


def builtin_tasks() -> list[TaskSpec]:
    """The ten manual templates and label-word sets.

    MRPC and QQP are scored with binary F1 on the paraphrase/duplicate class.
    """
    return [
        TaskSpec.create("SNLI", _NLI3, _PAIR_TMPL),
        TaskSpec.create("MNLI", _NLI3, _PAIR_TMPL),
        TaskSpec.create("QNLI", _NLI2, _PAIR_TMPL),
        TaskSpec.create("RTE", _NLI2, _PAIR_TMPL),
        TaskSpec.create(
            "MRPC",
            {"not_equivalent": "No", "equivalent": "Yes"},
            _PAIR_TMPL,
            metric=F1,
            positive_label="equivalent",
        ),
        TaskSpec.create(
            "QQP",
            {"not_duplicate": "No", "duplicate": "Yes"},
            _QQP_TMPL,
            metric=F1,
            positive_label="duplicate",
        ),
        TaskSpec.create("SST-2", _BINARY_SENT, _SINGLE_TMPL),
        TaskSpec.create(
            "SST-5",
            {
                "very_negative": "terrible",
                "negative": "bad",
                "neutral": "okay",
                "positive": "good",
                "very_positive": "great",
            },
            _SINGLE_TMPL,
        ),
        TaskSpec.create("MR", _BINARY_SENT, _SINGLE_TMPL),
        TaskSpec.create("CR", _BINARY_SENT, _SINGLE_TMPL),
    ]


def get_task(name: str) -> TaskSpec:
    for spec in builtin_tasks():
        if spec.name.lower() == name.lower():
            return spec
    raise KeyError(f"no built-in task named {name!r}")


# -- validation against a tokenizer ------------------------------------------


@dataclass
class ValidationReport:
    task: str
    errors: list[str] = field(default_factory=list)
    offending_labels: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_invalid(self) -> None:
        if self.errors:
            raise TaskError(f"{self.task}: " + "; ".join(self.errors))


def validate_task(spec: TaskSpec, tokenizer: TokenizerHandle) -> ValidationReport:
    report = ValidationReport(spec.name, spec.structural_errors())
    seen: dict[str, str] = {}
    for label in spec.labels:
        word = spec.verbalizer(label)
        key = word.lower()
        if key in seen:
            report.errors.append(f"duplicate label word {word!r} for labels {seen[key]!r} and {label.name!r}")
            report.offending_labels.append(label.name)
        seen[key] = label.name
        enc = tokenizer.encode(word)
        if len(enc.ids) != 1:
            report.errors.append(
                f"label word {word!r} of label {label.name!r} is {len(enc.ids)} tokens, expected 1"
            )
            report.offending_labels.append(label.name)
    return report


def label_word_ids(spec: TaskSpec, tokenizer: TokenizerHandle) -> list[int]:
    validate_task(spec, tokenizer).raise_if_invalid()
    return [tokenizer.encode(spec.verbalizer(l)).ids[0] for l in spec.labels]


def all_label_words(specs: Iterable[TaskSpec]) -> list[str]:
    return sorted({w for s in specs for w in s.verbalizer.words})
