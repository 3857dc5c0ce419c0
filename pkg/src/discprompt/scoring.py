"""Consistency scoring over the per-label prompts.

Scorers emit one inconsistency logit per token (higher = more likely a
replaced token). Each prompt component is turned into a distribution over
labels by a softmax of negated (weighted mean) logits; the label-word
component reads every label's word from that label's own prompt, while
sentence components read the same positions across all prompts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import torch

from .idf import IdfTable, token_weights
from .prompts import DEFAULT_MAX_LEN, BuiltPrompt, Component, ComponentSpan, build_prompts
from .tasks import InputExample, Label, TaskSpec
from .tokenizer import TokenizerHandle

ZERO_MASS = 1e-12


class ScorerHandle(Protocol):
    trainable: bool

    def score(self, prompts: Sequence[BuiltPrompt]) -> list[torch.Tensor]: ...


@dataclass(frozen=True)
class LambdaWeights:
    """Mixture weights: label word first, then one per sentence."""

    lambda0: float
    lambda1: float
    lambda2: float | None = None

    def __post_init__(self):
        vals = self.values
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ValueError(f"lambda weights must lie in [0, 1], got {vals}")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"lambda weights must sum to 1, got {sum(vals)}")

    @classmethod
    def from_lambda0(cls, lambda0: float, pair: bool) -> "LambdaWeights":
        if pair:
            rest = (1.0 - lambda0) / 2
            return cls(lambda0, rest, rest)
        return cls(lambda0, 1.0 - lambda0)

    @property
    def values(self) -> tuple[float, ...]:
        if self.lambda2 is None:
            return (self.lambda0, self.lambda1)
        return (self.lambda0, self.lambda1, self.lambda2)

    def __getitem__(self, component: Component) -> float:
        return self.values[int(component)]


@dataclass(frozen=True)
class ComponentDistribution:
    component: Component
    probs: np.ndarray

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True)
class PredictionResult:
    predicted: Label
    sc: np.ndarray
    components: tuple[ComponentDistribution, ...]
    unanimous: bool

    def to_record(self) -> dict:
        return {
            "predicted": self.predicted.id,
            "sc": [float(p) for p in self.sc],
            "components": {c.component.name: [float(p) for p in c.probs] for c in self.components},
            "unanimous": self.unanimous,
        }


def _as_logits(logits: Sequence) -> list[torch.Tensor]:
    out = [torch.as_tensor(z).to(torch.float64) for z in logits]
    for z in out:
        if not bool(torch.isfinite(z).all()):
            raise ValueError("scorer produced non-finite logits")
    return out


# -- tensor-level scores (differentiable) ------------------------------------


def label_word_log_probs(logits: Sequence[torch.Tensor], positions: Sequence[int]) -> torch.Tensor:
    if len(logits) != len(positions):
        raise ValueError("need one label-word position per prompt")
    picked = []
    for z, p in zip(logits, positions):
        if not 0 <= p < z.shape[0]:
            raise IndexError(f"label-word position {p} out of range for prompt of length {z.shape[0]}")
        picked.append(z[p])
    return torch.log_softmax(-torch.stack(picked), dim=0)


def subsequence_log_probs(
    logits: Sequence[torch.Tensor],
    positions: Sequence[int],
    weights: Sequence[float] | None = None,
) -> torch.Tensor:
    if len(positions) == 0:
        raise ValueError("empty span")
    idx = torch.as_tensor(list(positions), dtype=torch.long)
    zs = torch.stack([z.index_select(0, idx) for z in logits])  # labels x span
    if weights is None:
        w = torch.ones(len(positions), dtype=zs.dtype)
    else:
        w = torch.as_tensor(list(weights), dtype=zs.dtype)
        if w.shape[0] != len(positions):
            raise ValueError("one weight per span position required")
        if float(w.sum()) < ZERO_MASS:
            w = torch.ones_like(w)
    means = (zs * w).sum(dim=1) / w.sum()
    return torch.log_softmax(-means, dim=0)


def component_log_probs(
    prompts: Sequence[BuiltPrompt],
    logits: Sequence[torch.Tensor],
    idf: IdfTable | None,
) -> dict[Component, torch.Tensor]:
    """Log-distribution over labels for every component of one example."""
    logits = _as_logits(logits)
    out = {Component.LABEL_WORD: label_word_log_probs(logits, [p.label_position for p in prompts])}
    first = prompts[0]
    for span in first.spans:
        if span.component == Component.LABEL_WORD:
            continue
        weights = None if idf is None else token_weights(first, span, idf)
        out[span.component] = subsequence_log_probs(logits, span.positions, weights)
    return out


# -- public distribution-level API -------------------------------------------


def label_word_consistency(logits_per_prompt: Sequence, label_positions: Sequence[int]) -> ComponentDistribution:
    logp = label_word_log_probs(_as_logits(logits_per_prompt), label_positions)
    return ComponentDistribution(Component.LABEL_WORD, logp.detach().exp().numpy())


def subsequence_consistency(
    logits_per_prompt: Sequence,
    span: ComponentSpan,
    weights: Sequence[float] | None = None,
) -> ComponentDistribution:
    logp = subsequence_log_probs(_as_logits(logits_per_prompt), span.positions, weights)
    return ComponentDistribution(span.component, logp.detach().exp().numpy())


def aggregate_sc(components: Sequence[ComponentDistribution], lam: LambdaWeights) -> np.ndarray:
    if len(components) != len(lam.values):
        raise ValueError(f"{len(components)} components but {len(lam.values)} lambda weights")
    sc = np.zeros_like(components[0].probs)
    for comp in components:
        sc = sc + lam[comp.component] * comp.probs
    return sc


def _result(spec: TaskSpec, comps: list[ComponentDistribution], lam: LambdaWeights) -> PredictionResult:
    sc = aggregate_sc(comps, lam)
    best = int(np.argmax(sc))  # first max wins -> smallest label id
    unanimous = len({c.argmax for c in comps}) == 1
    return PredictionResult(spec.labels[best], sc, tuple(comps), unanimous)


def predict_from_logits(
    prompts: Sequence[BuiltPrompt],
    logits: Sequence,
    spec: TaskSpec,
    idf: IdfTable | None,
    lam: LambdaWeights,
) -> PredictionResult:
    logp = component_log_probs(prompts, logits, idf)
    comps = [ComponentDistribution(c, lp.detach().exp().numpy()) for c, lp in sorted(logp.items())]
    return _result(spec, comps, lam)


def predict(
    example: InputExample,
    spec: TaskSpec,
    scorer: ScorerHandle,
    idf: IdfTable | None,
    lam: LambdaWeights,
    tokenizer: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
) -> PredictionResult:
    """Predict the label whose prompt has the highest mixed consistency.

    ``idf=None`` averages sentence tokens uniformly instead of IDF-weighting.
    """
    prompts = build_prompts(example, spec, tokenizer, max_len)
    with torch.no_grad():
        logits = scorer.score(prompts)
    return predict_from_logits(prompts, logits, spec, idf, lam)


def predict_batch(
    examples: Sequence[InputExample],
    spec: TaskSpec,
    scorer: ScorerHandle,
    idf: IdfTable | None,
    lam: LambdaWeights,
    tokenizer: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
) -> list[PredictionResult]:
    """Same as :func:`predict` per example, with all prompts scored in one call."""
    built = [build_prompts(e, spec, tokenizer, max_len) for e in examples]
    flat = [p for ps in built for p in ps]
    with torch.no_grad():
        logits = scorer.score(flat) if flat else []
    out, k = [], 0
    for ps in built:
        out.append(predict_from_logits(ps, logits[k : k + len(ps)], spec, idf, lam))
        k += len(ps)
    return out


def reject_filter(results: Sequence[PredictionResult]) -> tuple[list[PredictionResult], list[PredictionResult]]:
    """Split into (unanimous, disagreed); disagreed examples are the ones to reject."""
    unanimous = [r for r in results if r.unanimous]
    disagreed = [r for r in results if not r.unanimous]
    return unanimous, disagreed
