"""``pcrnn`` command line: ingest, simulate, train, evaluate, predict, gradcheck.

Exit status: 0 success, 1 usage error, 2 invalid input or configuration,
3 runtime failure (including a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import config as C
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data.dataset import (
    dataset_digest,
    examples_at_fraction,
    make_example,
    normalize_times,
    observation_count,
    split_records,
)
from .data.events import read_sequences, write_sequences
from .data.hawkes import simulate_dataset
from .data.patentsview import ingest_patentsview
from .errors import ConfigError, ContractError, EvaluationError, GraphError, OptimizerError, PCRNNError
from .eval import SweepReport, run_observation_sweep
from .gradcheck import run_micro_gradcheck
from .model import PCRNN, suggest_gap_scale
from .training import TrainConfig, make_optimizer, train, write_loss_trace

log = logging.getLogger("pcrnn")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3
FORECAST_FORMAT = "pcrnn-forecasts"
FORECAST_VERSION = 1
_RUNTIME_ERRORS = (EvaluationError, GraphError, OptimizerError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fractions(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sub_seeds(seed: int, k: int) -> list:
    """``k`` integer seeds drawn in a fixed order from one generator."""
    rng = np.random.default_rng(seed)
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=k)]


def _set(overrides: dict, section: str, key: str, value):
    if value is not None:
        overrides.setdefault(section, {})[key] = value


def _load(args, mapping: dict) -> dict:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for attr, (section, key) in mapping.items():
        _set(overrides, section, key, getattr(args, attr, None))
    return C.load_config(args.config, overrides)


def _data_path(args, cfg) -> str:
    path = args.data or cfg["data"]["sequences"]
    if path is None:
        raise ConfigError("no sequence file given (use --data or data.sequences)")
    return path


# ------------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    cfg = _load(args, {"min_len": ("ingest", "min_len"), "max_len": ("ingest", "max_len"),
                       "category_table": ("ingest", "category_table")})
    result = ingest_patentsview(args.citations, args.patents, args.assignees, args.inventors,
                                args.categories, C.ingest_config(cfg))
    write_sequences(args.out, result.records, {"source": "patentsview", "stats": result.stats})
    print(json.dumps({"records": len(result.records), **result.stats}, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args, {"count": ("simulate", "count"), "mu": ("simulate", "mu"), "alpha": ("simulate", "alpha"),
                       "beta": ("simulate", "beta"), "horizon_T": ("simulate", "T")})
    sim = C.synthetic_config(cfg)
    records = simulate_dataset(cfg["simulate"]["count"], sim, seed=cfg["seed"])
    write_sequences(args.out, records, {"time_unit": "synthetic", "generator": asdict(sim), "seed": cfg["seed"]})
    print(f"wrote {len(records)} synthetic sequences to {args.out}")
    return EXIT_OK


def _training_examples(records, fractions, task, horizon):
    examples = []
    for f in fractions:
        examples += examples_at_fraction(records, f, task, horizon)[0]
    if not examples:
        raise ContractError("no training examples could be cut from the data")
    return examples


def cmd_train(args) -> int:
    cfg = _load(args, {"epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"),
                       "lr": ("optim", "lr"), "task": ("train", "task"), "mode": ("train", "mode"),
                       "fractions": ("train", "fractions"), "horizon": ("train", "horizon"),
                       "train_fraction": ("train", "train_fraction")})
    tr = cfg["train"]
    path = _data_path(args, cfg)
    records = read_sequences(path)
    split_seed, model_seed, shuffle_seed = _sub_seeds(cfg["seed"], 3)
    train_r, test_r = split_records(records, tr["train_fraction"], split_seed)
    train_n, _, norm = normalize_times(train_r)
    examples = _training_examples(train_n, tr["fractions"], tr["task"], tr["horizon"])
    model_cfg = C.model_config(cfg, suggest_gap_scale(examples))
    model = PCRNN(model_cfg, seed=model_seed)
    o = cfg["optim"]
    tcfg = TrainConfig(tr["epochs"], tr["batch_size"], o["lr"], o["beta1"], o["beta2"], o["eps"], o["clip"],
                       shuffle_seed, tr["mode"], tr["time_weight"], tr["lr_decay"])
    optimizer = make_optimizer(model, tcfg)
    start = time.time()

    def report(stats):
        log.info("epoch %d  loss %.5f  time %.5f  category %.5f", stats.epoch, stats.train_loss,
                 stats.time_loss, stats.category_loss)

    trace = train(model, examples, tcfg, optimizer, report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {
        "train_ids": [r.patent_id for r in train_r],
        "test_ids": [r.patent_id for r in test_r],
        "data_digest": dataset_digest(records),
        "data_path": str(path),
        "train": dict(tr),
        "optim": dict(o),
        "seeds": {"run": cfg["seed"], "split": split_seed, "model": model_seed, "shuffle": shuffle_seed},
    }
    save_checkpoint(out / "model.ckpt", Checkpoint.from_model(model, norm, tr["task"], model_seed, optimizer, extra))
    write_loss_trace(out / "loss_trace.csv", trace)
    print(f"trained {len(trace)} epochs on {len(examples)} examples in {time.time() - start:.1f}s; "
          f"final loss {trace[-1].train_loss:.5f}; wrote {out / 'model.ckpt'}")
    return EXIT_OK


def _select(records, ids):
    wanted = set(ids)
    chosen = [r for r in records if r.patent_id in wanted]
    if not chosen:
        raise ContractError("none of the checkpoint's held-out patents occur in the data file")
    return chosen


def cmd_evaluate(args) -> int:
    cfg = _load(args, {"fractions": ("eval", "fractions"), "horizon": ("eval", "horizon")})
    records = read_sequences(_data_path(args, cfg))
    rows = []
    seen = set()
    for path in args.checkpoint:
        ckpt = load_checkpoint(path)
        if ckpt.task in seen:
            raise ContractError(f"two checkpoints for task {ckpt.task!r}")
        seen.add(ckpt.task)
        chosen = records if args.all_records else _select(records, ckpt.extra.get("test_ids", []))
        norm = ckpt.normalizer
        normed = [norm.apply(r) for r in chosen]
        report = run_observation_sweep({ckpt.task: ckpt.build_model()}, normed, cfg["eval"]["fractions"],
                                       cfg["eval"]["horizon"], cfg["eval"]["batch_size"])
        rows += report.rows
    report = SweepReport(rows)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    report.to_csv(prefix.with_suffix(".csv"))
    report.to_jsonl(prefix.with_suffix(".jsonl"))
    for r in rows:
        print(f"{r.task:4s} {r.fraction:.1f}  acc {r.acc:.4f}  gap-MAE {r.gap_mae:.5f}  abs-MAE {r.abs_mae:.5f}  "
              f"(naive acc {r.baseline_acc:.4f}, gap-MAE {r.baseline_gap_mae:.5f}; {r.events} events)")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load(args, {})
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    norm = ckpt.normalizer
    records = read_sequences(_data_path(args, cfg))
    if args.ids:
        records = _select(records, args.ids.split(","))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": FORECAST_FORMAT, "version": FORECAST_VERSION, "task": ckpt.task,
                             "mode": args.mode, "l": args.l}) + "\n")
        for rec in records:
            length = len(rec)
            n = length if args.n is None and args.fraction is None else (
                min(args.n, length) if args.n is not None else observation_count(length, args.fraction))
            if args.mode == "teacher_forced" and n + args.l - 1 > length:
                raise ContractError(f"patent {rec.patent_id}: teacher forcing needs {args.l - 1} known targets")
            ex = make_example(norm.apply(rec), n, min(args.l, length - n), ckpt.task,
                              t_min=norm.t_min, t_max=norm.t_max)
            fc = model.forecast(ex, args.l, args.mode)
            gaps = fc.gaps[0].astype(np.float64)
            times = ex.times[-1] + np.cumsum(gaps)
            steps = [{"step": j + 1, "gap": float(g), "gap_raw": float(norm.unscale_gap(g)),
                      "time": float(norm.inverse(t)), "category": int(np.argmax(p)),
                      "probs": [float(x) for x in p]}
                     for j, (g, t, p) in enumerate(zip(gaps, times, fc.probs[0]))]
            fh.write(json.dumps({"patent_id": rec.patent_id, "n": n, "observed_end": float(norm.inverse(ex.times[-1])),
                                 "forecasts": steps}) + "\n")
    print(f"wrote forecasts for {len(records)} patents to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    start = time.time()
    report = run_micro_gradcheck(seed, args.eps, args.tol)
    elapsed = time.time() - start
    print(f"{report.summary()} ({len(report.per_param)} tensors, {elapsed:.1f}s)")
    if args.verbose:
        for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1]):
            print(f"  {err:.3e}  {name}")
    return EXIT_OK if report.passed else EXIT_RUNTIME


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="run seed (overrides the config file)")
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = _Parser(prog="pcrnn", description="Forecast patent citation sequences with PC-RNN.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", parents=[common], help="build a sequence file from PatentsView tables")
    for name in ("citations", "patents", "assignees", "inventors", "categories"):
        p.add_argument(f"--{name}", required=True)
    p.add_argument("--category-table", dest="category_table")
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic marked Hawkes sequences")
    p.add_argument("--count", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--T", dest="horizon_T", type=float, help="patent window length")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train a model; writes model.ckpt and loss_trace.csv")
    p.add_argument("--data")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--task", choices=sorted(C.TASKS))
    p.add_argument("--mode", choices=["teacher_forced", "free_running"])
    p.add_argument("--fractions", type=_fractions, help="observation fractions, e.g. 0.8,0.5")
    p.add_argument("--horizon", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="observation-window sweep on held-out patents")
    p.add_argument("--checkpoint", action="append", required=True, help="repeat once per task")
    p.add_argument("--data")
    p.add_argument("--fractions", type=_fractions)
    p.add_argument("--horizon", type=int)
    p.add_argument("--all-records", dest="all_records", action="store_true",
                   help="score every record instead of the checkpoint's held-out split")
    p.add_argument("--out", required=True, help="report path prefix (.csv and .jsonl are written)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", parents=[common], help="forecast the next l citations per patent")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--l", type=int, default=1)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--n", type=int, help="observed events per patent (default: all)")
    group.add_argument("--fraction", type=float)
    p.add_argument("--mode", choices=["free_running", "teacher_forced"], default="free_running")
    p.add_argument("--ids", help="comma-separated patent ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on the micro configuration")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "l", 1) is not None and getattr(args, "l", 1) < 1:
        print("error: --l must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PCRNNError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("unhandled failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
