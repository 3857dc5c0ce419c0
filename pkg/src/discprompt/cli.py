"""Command-line entry point.

Data directories hold ``train.tsv`` (the full training file: few-shot splits
are sampled from it and IDF is computed over all of it), ``test.tsv`` (the
evaluation set) and optionally ``corpus.txt`` (unlabeled text for
pretraining) and ``task.ini``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import torch

from . import toy
from .data import DEFAULT_SEEDS, read_tsv, write_tsv
from .experiment import MODES, Experiment, load_records, reject_report, report, run_experiment
from .idf import IdfTable, compute_idf, example_documents
from .scoring import LambdaWeights, predict_batch
from .tasks import TaskSpec, get_task, validate_task
from .tokenizer import WordTokenizer
from .training import Checkpoint, TrainConfig

log = logging.getLogger("discprompt")

CACHE_ENV = "DISCPROMPT_CACHE"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "discprompt"))


def resolve_task(name: str | None, data_dir: Path | None) -> TaskSpec:
    if name is None:
        if data_dir is not None and (data_dir / "task.ini").exists():
            return TaskSpec.load(data_dir / "task.ini")
        raise SystemExit("--task is required (built-in name, 'toy', or a task .ini file)")
    if name == "toy":
        return toy.TOY_TASK
    if name.endswith(".ini") or Path(name).is_file():
        return TaskSpec.load(name)
    return get_task(name)


def _slug(spec: TaskSpec) -> str:
    return spec.name.lower().replace(" ", "-")


def default_scorer_path(spec: TaskSpec) -> Path:
    return cache_dir() / _slug(spec) / "scorer.pt"


def _load_data(args, spec):
    d = Path(args.data_dir)
    return read_tsv(d / "train.tsv", spec), read_tsv(d / "test.tsv", spec)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        eval_every=args.eval_every,
        early_stop_patience=args.patience,
        max_len=args.max_len,
    )


def _load_scorer(args, spec):
    path = Path(args.scorer) if args.scorer else default_scorer_path(spec)
    if not path.exists():
        raise SystemExit(f"no pretrained scorer at {path}; run `discprompt pretrain` first")
    scorer = toy.load_scorer(path)
    validate_task(spec, scorer.tokenizer).raise_if_invalid()
    return scorer


# -- subcommands -------------------------------------------------------------------


def cmd_make_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    task = toy.make_synthetic_task(0, data_seed=args.data_seed, corpus_size=args.corpus_size)
    write_tsv(out / "train.tsv", task.full_train, task.spec)
    write_tsv(out / "test.tsv", task.test, task.spec)
    (out / "corpus.txt").write_text("\n".join(task.corpus) + "\n", encoding="utf-8")
    task.spec.save(out / "task.ini")
    print(f"wrote synthetic task to {out}")
    return 0


def cmd_pretrain(args) -> int:
    data_dir = Path(args.data_dir)
    spec = resolve_task(args.task, data_dir)
    corpus_file = data_dir / "corpus.txt"
    if corpus_file.exists():
        corpus = [l for l in corpus_file.read_text(encoding="utf-8").splitlines() if l.strip()]
    else:
        corpus = example_documents(read_tsv(data_dir / "train.tsv", spec))
    train, test = _load_data(args, spec)
    # vocabulary covers template literals and label words too
    extra = [spec.template.text.replace("<S1>", "").replace("<S2>", "").replace("<V>", ""), *spec.verbalizer.words]
    tokenizer = WordTokenizer.from_corpus(corpus + example_documents(train) + example_documents(test), extra)
    cfg = toy.RtdCorpusConfig(corpus, replacement_sampler=args.sampler, seed=args.seed)
    torch.manual_seed(args.seed)
    scorer = toy.pretrain_rtd(cfg, tokenizer, args.steps)
    stats = toy.rtd_eval(scorer, corpus[: max(1, len(corpus) // 10)])
    out = Path(args.out) if args.out else default_scorer_path(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    toy.save_scorer(scorer, out, steps=args.steps, metric=stats["auc"], seed=args.seed)
    print(f"pretrained scorer saved to {out} (RTD AUC on corpus sample {stats['auc']:.3f})")
    return 0


def cmd_idf(args) -> int:
    spec = resolve_task(args.task, Path(args.data_dir))
    train = read_tsv(Path(args.data_dir) / "train.tsv", spec)
    table = compute_idf(example_documents(train))
    out = Path(args.out) if args.out else cache_dir() / _slug(spec) / "idf.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    print(f"IDF table over {table.corpus_size} documents, {len(table)} words -> {out}")
    return 0


def _experiment(args, spec, checkpoint_dir=None) -> Experiment:
    train, test = _load_data(args, spec)
    scorer = _load_scorer(args, spec)
    return Experiment(
        spec, train, test, scorer.clone, scorer.tokenizer, _train_config(args),
        mode=args.mode, lambda0=args.lambda0, checkpoint_dir=checkpoint_dir,
    )


def cmd_train(args) -> int:
    spec = resolve_task(args.task, Path(args.data_dir))
    out = Path(args.out) if args.out else cache_dir() / _slug(spec) / "runs"
    out.mkdir(parents=True, exist_ok=True)
    exp = _experiment(args, spec, checkpoint_dir=out)
    records = run_experiment(exp, args.seeds, args.k, out / "results.jsonl")
    print(report(records), end="")
    return 0


def cmd_eval(args) -> int:
    spec = resolve_task(args.task, Path(args.data_dir))
    _, test = _load_data(args, spec)
    scorer = _load_scorer(args, spec)
    ckpt = Checkpoint.load(args.checkpoint)
    scorer.load_state_dict(ckpt.state)
    scorer.eval()
    l0 = args.lambda0 if args.lambda0 is not None else ckpt.lambda0
    if args.mode == "label-only":
        l0 = 1.0
    lam = LambdaWeights.from_lambda0(l0, spec.is_pair)
    idf = None
    if args.mode == "full":
        idf = IdfTable.load(args.idf) if args.idf else compute_idf(example_documents(_load_data(args, spec)[0]))
    results = predict_batch(test, spec, scorer, idf, lam, scorer.tokenizer, args.max_len)
    rep = reject_report(spec, results, [e.gold for e in test])
    for key, val in rep.items():
        print(f"{key}\t{val}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for e, r in zip(test, results):
                rec = r.to_record()
                rec["gold"] = e.gold
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return 0


def cmd_sweep(args) -> int:
    spec = resolve_task(args.task, Path(args.data_dir))
    exp = _experiment(args, spec)
    out = Path(args.out) if args.out else cache_dir() / _slug(spec) / "results.jsonl"
    if out.exists():
        out.unlink()
    records = run_experiment(exp, args.seeds, args.k, out)
    print(report(records), end="")
    return 0


def cmd_report(args) -> int:
    records = load_records(args.results)
    text = report(records)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="discprompt", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key/value file with a [discprompt] section of flag defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--task", help="built-in task name, 'toy', or a task .ini file")
        if data:
            sp.add_argument("--data-dir", required=True)
        sp.add_argument("--max-len", type=int, default=128)
        sp.add_argument("--out")

    def run_flags(sp):
        sp.add_argument("--scorer", help="pretrained scorer checkpoint (default: cache dir)")
        sp.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_SEEDS))
        sp.add_argument("--k", type=int, nargs="+", default=[16])
        sp.add_argument("--mode", choices=MODES, default="full")
        sp.add_argument("--lambda0", type=float, help="fixed lambda0; disables the grid search")
        sp.add_argument("--lr", type=float, default=1e-5)
        sp.add_argument("--batch-size", type=int, default=2)
        sp.add_argument("--epochs", type=int, default=15)
        sp.add_argument("--eval-every", type=int, default=50)
        sp.add_argument("--patience", type=int, default=10)

    sp = sub.add_parser("make-toy", help="write the synthetic sentiment task as TSV files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--data-seed", type=int, default=0)
    sp.add_argument("--corpus-size", type=int, default=5000)
    sp.set_defaults(func=cmd_make_toy)

    sp = sub.add_parser("pretrain", help="replaced-token-detection pretraining of the toy scorer")
    common(sp)
    sp.add_argument("--steps", type=int, default=toy.PRETRAIN_STEPS)
    sp.add_argument("--sampler", choices=("uniform-vocab", "unigram-frequency"), default="unigram-frequency")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("idf", help="compute the normalized IDF table from train.tsv")
    common(sp)
    sp.set_defaults(func=cmd_idf)

    sp = sub.add_parser("train", help="few-shot finetuning per seed and K, saving best checkpoints")
    common(sp)
    run_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a finetuned checkpoint on test.tsv")
    common(sp)
    sp.add_argument("--scorer")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--mode", choices=MODES, default="full")
    sp.add_argument("--lambda0", type=float)
    sp.add_argument("--idf", help="IDF table file (default: recompute from train.tsv)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="multi-seed, multi-K experiment with report")
    common(sp)
    run_flags(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="render tables from a results file")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(known.config, encoding="utf-8")
    if "discprompt" not in cp:
        return
    values = {k.replace("-", "_"): v for k, v in cp["discprompt"].items()}
    for action in parser._subparsers._group_actions[0].choices.values():
        for act in action._actions:
            if act.dest in values:
                raw = values[act.dest]
                if act.nargs == "+":
                    val = [act.type(x) if act.type else x for x in raw.split()]
                else:
                    val = act.type(raw) if act.type else raw
                act.default = val
                act.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    _apply_config(parser, argv)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
