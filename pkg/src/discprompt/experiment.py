"""Multi-seed experiment runs, run records and report tables."""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .data import DEFAULT_SEEDS, sample_few_shot, task_metric
from .idf import IdfTable, compute_idf, example_documents
from .scoring import LambdaWeights, PredictionResult, predict_batch, reject_filter
from .tasks import InputExample, TaskSpec
from .training import TrainConfig, finetune, grid_search_lambda0, lambda0_grid

log = logging.getLogger(__name__)

MODES = ("full", "no-idf", "label-only")
TIMESTAMP_FIELDS = ("started_at", "finished_at")


@dataclass
class RunRecord:
    task: str
    seed: int
    k: int
    mode: str
    metric: str
    lambda0: float
    overall: float  # O.M
    unanimous_ratio: float  # U.R
    unanimous_metric: float | None  # U.M
    disagreed_metric: float | None  # D.M
    n_test: int
    n_unanimous: int
    dev_metric: float
    best_step: int
    grid: list[tuple[float, float]] = field(default_factory=list)
    config_hash: str = ""
    started_at: float = 0.0
    finished_at: float = 0.0
    kind: str = "run"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SummaryRecord:
    task: str
    k: int
    mode: str
    metric: str
    seeds: list[int]
    overall_mean: float
    overall_std: float
    unanimous_ratio_mean: float
    lambda0_mean: float
    kind: str = "summary"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def strip_timestamps(line: str) -> str:
    data = json.loads(line)
    for key in TIMESTAMP_FIELDS:
        data.pop(key, None)
    return json.dumps(data, sort_keys=True)


def subset_metric(spec: TaskSpec, results: Sequence[PredictionResult], golds: Sequence[int]) -> float | None:
    if not results:
        return None
    return task_metric(spec, [r.predicted.id for r in results], golds)


def reject_report(spec: TaskSpec, results: Sequence[PredictionResult], golds: Sequence[int]) -> dict:
    """O.M, U.R, U.M and D.M for one set of test predictions."""
    unanimous, disagreed = reject_filter(results)
    return {
        "overall": task_metric(spec, [r.predicted.id for r in results], golds),
        "unanimous_ratio": len(unanimous) / len(results) if results else 0.0,
        "unanimous_metric": subset_metric(spec, unanimous, [g for r, g in zip(results, golds) if r.unanimous]),
        "disagreed_metric": subset_metric(spec, disagreed, [g for r, g in zip(results, golds) if not r.unanimous]),
        "n_test": len(results),
        "n_unanimous": len(unanimous),
    }


def config_hash(*parts) -> str:
    blob = json.dumps([p if not hasattr(p, "digest") else p.digest() for p in parts], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Experiment:
    """Everything needed to run (seed, K) jobs for one task.

    ``scorer_factory`` must return a fresh copy of the same pretrained scorer
    on every call; ``tokenizer`` is the one that scorer was built with.
    """

    spec: TaskSpec
    full_train: Sequence[InputExample]
    test: Sequence[InputExample]
    scorer_factory: Callable
    tokenizer: object
    train_config: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "full"
    lambda0: float | None = None  # fixed value disables the grid
    grid: Sequence[float] | None = None
    checkpoint_dir: str | Path | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        # IDF always comes from the whole training file, labels unused
        self.idf: IdfTable | None = None
        if self.mode == "full":
            self.idf = compute_idf(example_documents(self.full_train))

    def run_one(self, seed: int, k: int) -> RunRecord:
        started = time.time()
        train, dev = sample_few_shot(self.full_train, k, seed)
        cfg = TrainConfig(**{**asdict(self.train_config), "seed": seed})
        fixed = 1.0 if self.mode == "label-only" else self.lambda0
        if fixed is not None:
            lam = LambdaWeights.from_lambda0(fixed, self.spec.is_pair)
            scorer = self.scorer_factory()
            ckpt = finetune(train, dev, self.spec, scorer, self.idf, lam, cfg, self.tokenizer)
            grid_scores = [(fixed, ckpt.metric)]
            l0 = fixed
        else:
            res = grid_search_lambda0(train, dev, self.spec, self.scorer_factory, self.idf, cfg, self.tokenizer, self.grid)
            l0, ckpt, grid_scores = res.lambda0, res.checkpoint, res.scores
            lam = LambdaWeights.from_lambda0(l0, self.spec.is_pair)
            scorer = self.scorer_factory()
        scorer.load_state_dict(ckpt.state)
        scorer.eval()
        if self.checkpoint_dir is not None:
            ckpt.save(Path(self.checkpoint_dir) / f"{self.mode}-k{k}-seed{seed}.pt")
        results = predict_batch(self.test, self.spec, scorer, self.idf, lam, self.tokenizer, cfg.max_len)
        rep = reject_report(self.spec, results, [e.gold for e in self.test])
        return RunRecord(
            task=self.spec.name,
            seed=seed,
            k=k,
            mode=self.mode,
            metric=self.spec.metric,
            lambda0=l0,
            dev_metric=ckpt.metric,
            best_step=ckpt.step,
            grid=[list(g) for g in grid_scores],
            config_hash=config_hash(self.spec.name, self.mode, k, seed, cfg, self.lambda0, list(self.grid or lambda0_grid())),
            started_at=started,
            finished_at=time.time(),
            **rep,
        )

    def run(self, seeds: Iterable[int] = DEFAULT_SEEDS, ks: Iterable[int] = (16,), sink: Callable | None = None) -> list:
        out: list = []
        for k in ks:
            runs = []
            for seed in seeds:
                rec = self.run_one(seed, k)
                log.info("%s K=%d seed=%d lambda0=%.3f metric=%.4f", rec.task, k, seed, rec.lambda0, rec.overall)
                runs.append(rec)
                out.append(rec)
                if sink:
                    sink(rec)
            summ = summarize(runs)
            out.append(summ)
            if sink:
                sink(summ)
        return out


def summarize(runs: Sequence[RunRecord]) -> SummaryRecord:
    vals = [r.overall for r in runs]
    return SummaryRecord(
        task=runs[0].task,
        k=runs[0].k,
        mode=runs[0].mode,
        metric=runs[0].metric,
        seeds=[r.seed for r in runs],
        overall_mean=statistics.fmean(vals),
        overall_std=statistics.pstdev(vals),
        unanimous_ratio_mean=statistics.fmean(r.unanimous_ratio for r in runs),
        lambda0_mean=statistics.fmean(r.lambda0 for r in runs),
    )


def run_experiment(experiment: Experiment, seeds=DEFAULT_SEEDS, ks=(16,), results_path: str | Path | None = None) -> list:
    sink = None
    if results_path is not None:
        path = Path(results_path)
        path.parent.mkdir(parents=True, exist_ok=True)

        def sink(rec):
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")

    return experiment.run(seeds, ks, sink)


# -- reporting -------------------------------------------------------------------


def load_records(path: str | Path) -> list:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        kind = data.get("kind", "run")
        data["grid"] = [tuple(g) for g in data.get("grid", [])] if kind == "run" else data.get("grid")
        if kind == "summary":
            data.pop("grid", None)
            out.append(SummaryRecord(**data))
        else:
            out.append(RunRecord(**data))
    return out


def _table(header: list[str], rows: list[list[str]]) -> str:
    if not rows:
        return ""
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * w for w in widths]), *map(fmt, rows)])


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.1f}"


def report(records: Sequence, results_path: str | Path | None = None) -> str:
    """Render summary, lambda0-per-seed and unanimous/disagreed tables."""
    runs = [r for r in records if isinstance(r, RunRecord)]
    if results_path is not None:
        Path(results_path).write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")
    if not runs:
        return ""

    groups: dict[tuple, list[RunRecord]] = {}
    for r in runs:
        groups.setdefault((r.task, r.mode, r.k), []).append(r)

    main_rows = []
    for (task, mode, k), rs in groups.items():
        vals = [r.overall for r in rs]
        main_rows.append([task, mode, str(k), rs[0].metric, f"{100 * statistics.fmean(vals):.1f}", f"{100 * statistics.pstdev(vals):.1f}", str(len(rs))])
    main = _table(["task", "mode", "K", "metric", "mean", "std", "seeds"], main_rows)

    seeds = sorted({r.seed for r in runs})
    lam_rows = []
    for (task, mode, k), rs in groups.items():
        by_seed = {r.seed: r.lambda0 for r in rs}
        cells = [f"{by_seed[s]:.2f}" if s in by_seed else "-" for s in seeds]
        lam_rows.append([f"{task} ({mode}, K={k})", *cells, f"{statistics.fmean(by_seed.values()):.2f}"])
    lam = _table(["task", *map(str, seeds), "avg"], lam_rows)

    rej_rows = []
    for (task, mode, k), rs in groups.items():
        mean = lambda xs: statistics.fmean(xs) if xs else None
        rej_rows.append([
            f"{task} ({rs[0].metric})",
            _pct(mean([r.overall for r in rs])),
            f"{_pct(mean([r.unanimous_ratio for r in rs]))}%",
            _pct(mean([r.unanimous_metric for r in rs if r.unanimous_metric is not None])),
            _pct(mean([r.disagreed_metric for r in rs if r.disagreed_metric is not None])),
        ])
    rej = _table(["dataset", "O.M", "U.R", "U.M", "D.M"], rej_rows)

    sections = [("Results", main), ("Selected lambda0 per seed", lam), ("Unanimous vs disagreed", rej)]
    return "\n\n".join(f"{title}\n{table}" for title, table in sections) + "\n"
