"""Dataset files, few-shot sampling and metrics."""

from __future__ import annotations

import csv
import random
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .tasks import ACCURACY, F1, InputExample, TaskError, TaskSpec

DEFAULT_SEEDS = (13, 21, 42, 87, 100)


def read_tsv(path: str | Path, spec: TaskSpec, has_header: bool | None = None) -> list[InputExample]:
    """Read ``sentence1 [sentence2] label`` rows.

    A header is detected when the last column of the first row is not a
    label name of the task.
    """
    names = {l.name: l.id for l in spec.labels}
    ncols = 3 if spec.is_pair else 2
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE))
    if rows and (has_header or (has_header is None and rows[0][-1] not in names)):
        rows = rows[1:]
    for lineno, row in enumerate(rows, 1):
        if not row:
            continue
        if len(row) != ncols:
            raise TaskError(f"{path}:{lineno}: expected {ncols} columns for {spec.kind} task, got {len(row)}")
        if row[-1] not in names:
            raise TaskError(f"{path}:{lineno}: unknown label {row[-1]!r}")
        out.append(InputExample(row[0], row[1] if spec.is_pair else None, names[row[-1]]))
    return out


def write_tsv(path: str | Path, examples: Sequence[InputExample], spec: TaskSpec) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, lineterminator="\n")
        for e in examples:
            cols = [e.sentence1] + ([e.sentence2] if spec.is_pair else [])
            w.writerow(cols + [spec.labels[e.gold].name])


def sample_few_shot(
    dataset: Sequence[InputExample], k: int, seed: int
) -> tuple[list[InputExample], list[InputExample]]:
    """K examples per class for train and another K per class for dev."""
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, e in enumerate(dataset):
        if e.gold is None:
            raise TaskError("few-shot sampling needs labeled examples")
        by_class[e.gold].append(i)
    rng = random.Random(seed)
    train_idx, dev_idx = [], []
    for label in sorted(by_class):
        idx = by_class[label]
        if len(idx) < 2 * k:
            raise TaskError(f"class {label} has {len(idx)} examples, need {2 * k}")
        idx = rng.sample(idx, 2 * k)
        train_idx += idx[:k]
        dev_idx += idx[k:]
    rng.shuffle(train_idx)
    rng.shuffle(dev_idx)
    return [dataset[i] for i in train_idx], [dataset[i] for i in dev_idx]


def accuracy(predictions: Sequence[int], golds: Sequence[int]) -> float:
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    if not golds:
        return 0.0
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def binary_f1(predictions: Sequence[int], golds: Sequence[int], positive: int) -> float:
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds differ in length")
    tp = sum(p == positive and g == positive for p, g in zip(predictions, golds))
    fp = sum(p == positive and g != positive for p, g in zip(predictions, golds))
    fn = sum(p != positive and g == positive for p, g in zip(predictions, golds))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def evaluate(predictions: Sequence[int], golds: Sequence[int], metric: str, positive_label: int | None = None) -> float:
    if metric == ACCURACY:
        return accuracy(predictions, golds)
    if metric == F1:
        if positive_label is None:
            raise ValueError("binary F1 needs a positive label")
        return binary_f1(predictions, golds, positive_label)
    raise ValueError(f"unknown metric {metric!r}")


def task_metric(spec: TaskSpec, predictions: Sequence[int], golds: Sequence[int]) -> float:
    pos = spec.positive_label.id if spec.positive_label else None
    return evaluate(predictions, golds, spec.metric, pos)
