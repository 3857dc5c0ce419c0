"""Per-component cross-entropy, finetuning and the lambda0 grid search."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch

from .data import task_metric
from .idf import IdfTable
from .prompts import DEFAULT_MAX_LEN, BuiltPrompt, Component, build_prompts
from .scoring import LambdaWeights, ScorerHandle, component_log_probs, predict_batch
from .tasks import InputExample, TaskError, TaskSpec
from .tokenizer import TokenizerHandle

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
GRID_STEPS = 30


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 2
    epochs: int = 15
    eval_every: int = 50
    warmup_ratio: float = 0.05
    early_stop_patience: int = 10
    seed: int = 42
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        for name in ("batch_size", "epochs", "eval_every", "early_stop_patience", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    state: dict
    step: int
    metric: float
    lambda0: float | None
    seed: int
    config_hash: str = ""
    trace: list[tuple[int, float]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "metric": self.metric,
            "lambda0": self.lambda0,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "trace": self.trace,
            "extra": self.extra,
        }

    def save(self, path: str | Path) -> None:
        path = Path(path)
        torch.save({"version": CHECKPOINT_VERSION, "state": self.state}, path)
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(self.metadata(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        path = Path(path)
        blob = torch.load(path, weights_only=True)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        if blob["version"] != CHECKPOINT_VERSION or meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        return cls(
            blob["state"], meta["step"], meta["metric"], meta["lambda0"], meta["seed"],
            meta["config_hash"], [tuple(t) for t in meta["trace"]], meta.get("extra", {}),
        )


# -- losses -----------------------------------------------------------------


def prompt_loss(
    prompts: Sequence[BuiltPrompt],
    logits: Sequence[torch.Tensor],
    gold: int,
    idf: IdfTable | None,
    lam: LambdaWeights,
) -> tuple[torch.Tensor, dict[Component, torch.Tensor]]:
    logp = component_log_probs(prompts, logits, idf)
    parts = {c: -lp[gold] for c, lp in logp.items()}
    total = sum(lam[c] * loss for c, loss in parts.items())
    return total, parts


def example_loss(
    example: InputExample,
    spec: TaskSpec,
    scorer: ScorerHandle,
    idf: IdfTable | None,
    lam: LambdaWeights,
    tokenizer: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
) -> tuple[torch.Tensor, dict[Component, torch.Tensor]]:
    """Lambda-weighted sum of per-component negative log-likelihoods of the gold label."""
    if example.gold is None:
        raise TaskError("example_loss needs a gold label")
    prompts = build_prompts(example, spec, tokenizer, max_len)
    return prompt_loss(prompts, scorer.score(prompts), example.gold, idf, lam)


def batch_loss(
    examples: Sequence[InputExample],
    spec: TaskSpec,
    scorer: ScorerHandle,
    idf: IdfTable | None,
    lam: LambdaWeights,
    tokenizer: TokenizerHandle,
    max_len: int = DEFAULT_MAX_LEN,
) -> torch.Tensor:
    built = [build_prompts(e, spec, tokenizer, max_len) for e in examples]
    logits = scorer.score([p for ps in built for p in ps])
    total, k = 0.0, 0
    for e, ps in zip(examples, built):
        if e.gold is None:
            raise TaskError("training examples need gold labels")
        loss, _ = prompt_loss(ps, logits[k : k + len(ps)], e.gold, idf, lam)
        total = total + loss
        k += len(ps)
    return total / len(examples)


# -- schedule -----------------------------------------------------------------


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    return math.ceil(warmup_ratio * total_steps)


def lr_factor(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear ramp to 1 at the warmup boundary, then linear decay to 0 at the end."""
    w = warmup_steps(total_steps, warmup_ratio)
    if step < w:
        return step / w
    if step >= total_steps:
        return 0.0
    return (total_steps - step) / (total_steps - w)


# -- finetuning -----------------------------------------------------------------


def dev_metric(examples, spec, scorer, idf, lam, tokenizer, max_len) -> float:
    scorer.eval()
    results = predict_batch(examples, spec, scorer, idf, lam, tokenizer, max_len)
    return task_metric(spec, [r.predicted.id for r in results], [e.gold for e in examples])


def finetune(
    train: Sequence[InputExample],
    dev: Sequence[InputExample],
    spec: TaskSpec,
    scorer,
    idf: IdfTable | None,
    lam: LambdaWeights,
    config: TrainConfig,
    tokenizer: TokenizerHandle,
) -> Checkpoint:
    """AdamW finetuning with dev-based checkpoint selection and early stopping.

    The scorer is left holding the best checkpoint's parameters.
    """
    if not train or not dev:
        raise ValueError("train and dev sets must be non-empty")
    if not scorer.trainable:
        raise ValueError("scorer is frozen")
    torch.manual_seed(config.seed)
    order_rng = random.Random(config.seed)
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total = steps_per_epoch * config.epochs
    opt = torch.optim.AdamW(
        scorer.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.eps, weight_decay=config.weight_decay
    )
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: lr_factor(s, total, config.warmup_ratio))
    eval_args = (spec, scorer, idf, lam, tokenizer, config.max_len)

    trace = [(0, dev_metric(dev, *eval_args))]
    best = Checkpoint(scorer.state_dict(), 0, trace[0][1], lam.lambda0, config.seed, config.digest(), trace)
    stale = 0
    step = 0
    for epoch in range(config.epochs):
        order = list(range(len(train)))
        order_rng.shuffle(order)
        for start in range(0, len(order), config.batch_size):
            scorer.train()
            batch = [train[i] for i in order[start : start + config.batch_size]]
            loss = batch_loss(batch, *eval_args)
            if not torch.isfinite(loss):
                raise FloatingPointError(f"loss became non-finite at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            end_of_epoch = start + config.batch_size >= len(order)
            if step % config.eval_every and not end_of_epoch:
                continue
            metric = dev_metric(dev, *eval_args)
            trace.append((step, metric))
            if metric > best.metric:
                best = Checkpoint(scorer.state_dict(), step, metric, lam.lambda0, config.seed, config.digest(), trace)
                stale = 0
            else:
                stale += 1
            if stale >= config.early_stop_patience:
                log.debug("early stop at step %d", step)
                break
        else:
            continue
        break
    best.trace = trace
    scorer.load_state_dict(best.state)
    scorer.eval()
    return best


def lambda0_grid(steps: int = GRID_STEPS) -> list[float]:
    return [i / steps for i in range(steps + 1)]


@dataclass
class GridResult:
    lambda0: float
    checkpoint: Checkpoint
    scores: list[tuple[float, float]]


def grid_search_lambda0(
    train: Sequence[InputExample],
    dev: Sequence[InputExample],
    spec: TaskSpec,
    scorer_factory: Callable[[], ScorerHandle],
    idf: IdfTable | None,
    config: TrainConfig,
    tokenizer: TokenizerHandle,
    grid: Sequence[float] | None = None,
) -> GridResult:
    """Finetune a fresh scorer per lambda0 and keep the best dev metric.

    Ties go to the smaller lambda0.
    """
    grid = lambda0_grid() if grid is None else list(grid)
    best: tuple[float, Checkpoint] | None = None
    scores = []
    for l0 in grid:
        lam = LambdaWeights.from_lambda0(l0, spec.is_pair)
        ckpt = finetune(train, dev, spec, scorer_factory(), idf, lam, config, tokenizer)
        scores.append((l0, ckpt.metric))
        if best is None or ckpt.metric > best[1].metric:
            best = (l0, ckpt)
    assert best is not None
    return GridResult(best[0], best[1], scores)
