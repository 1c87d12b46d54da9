"""Command-line entry point: ``rsaware <subcommand> [flags]``.

Exit codes: 0 success, 1 any other failure, 2 missing task file (or bad
arguments), 3 shortcut search budget exceeded, 4 checkpoint/task mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .active import ActiveConfig, active_loop, write_curves
from .bears import (BearsConfig, MCDropout, load_model, read_manifest, save_model,
                    train_deep_ensemble, train_ensemble, train_predictor)
from .metrics import evaluate, reliability_bins, top_label
from .rs import DEFAULT_NODE_BUDGET, SearchBudgetExceeded, rs_report
from .tasks import TaskSpec, derive_seed, export_csv, generate_dataset, load_task

OUT_ENV = "RSAWARE_OUT"
METHODS = ("dpl", "sl", "bears", "de", "mcdo")
BASE_COLUMNS = ["method", "task", "seed", "split", "acc_y", "acc_c", "ece_y", "ece_c", "mece_c",
                "macro_f1", "mean_f1"]


class TaskMismatch(RuntimeError):
    pass


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def write_rows(rows: list[dict], path) -> None:
    """CSV with the fixed metric columns followed by every ``h_*`` column seen (sorted)."""
    extra = sorted({k for r in rows for k in r if k not in BASE_COLUMNS})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BASE_COLUMNS + extra)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    root = Path(args.out or os.environ.get(OUT_ENV, "runs"))
    root.mkdir(parents=True, exist_ok=True)
    return root


def _seeds(args) -> list[int]:
    return list(args.seeds) if args.seeds else [args.seed]


def _train_config(spec: TaskSpec, args, seed: int) -> BearsConfig:
    return BearsConfig.for_task(
        spec,
        ensemble_size=args.ensemble_size,
        gamma1=args.gamma1,
        gamma2=args.gamma2,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        dropout=args.dropout,
        seed=derive_seed(seed, "train"),
    )


def fit(spec: TaskSpec, method: str, x, y, cfg: BearsConfig, mc_samples: int, base: str = "dpl"):
    reasoner = spec.reasoner()
    if method in ("dpl", "sl"):
        return train_predictor(reasoner, spec.dim, x, y, _single(cfg, method))
    if method == "mcdo":
        pred = train_predictor(reasoner, spec.dim, x, y, _single(cfg, base))
        return MCDropout(pred, mc_samples, derive_seed(cfg.seed, "mcdo"))
    cfg = BearsConfig(**{**asdict(cfg), "kind": base})
    if method == "bears":
        return train_ensemble(reasoner, spec.dim, x, y, cfg)
    if method == "de":
        return train_deep_ensemble(reasoner, spec.dim, x, y, cfg)
    raise ValueError(f"unknown method {method!r}")


def _single(cfg: BearsConfig, kind: str) -> BearsConfig:
    return BearsConfig(**{**asdict(cfg), "kind": kind, "ensemble_size": 1, "seeds": None})


def _split_rows(model, ds, splits, method, task, seed, bins) -> list[dict]:
    rows = []
    for name in splits:
        if name not in ds.splits or not len(ds[name]):
            continue
        s = ds[name]
        rep = evaluate(model, s.x, s.g, s.y, bins)
        rows.append({"method": method, "task": task, "seed": seed, "split": name, **rep.row()})
    return rows


def _reliability(model, split, bins, path) -> None:
    schema = model.schema
    space = model.label_space
    py = model.label_dist(split.x)
    lookup = {v: i for i, v in enumerate(space.values)}
    y_idx = [lookup.get(tuple(v) if isinstance(v, (list, tuple)) else v, -1) for v in split.y]
    out = [("label", top_label(py, y_idx))]
    p = model.concept_probs(split.x)
    confs, corr = [], []
    for n in schema.names:
        c, k = top_label(p[n], split.g[:, schema.index(n)])
        confs.append(c)
        corr.append(k)
    out.append(("concept", (np.concatenate(confs), np.concatenate(corr))))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target", "bin", "lower", "upper", "count", "acc", "conf"])
        for target, (conf, correct) in out:
            for b in reliability_bins(conf, correct, bins):
                w.writerow([target, b["bin"], repr(b["lower"]), repr(b["upper"]), b["count"],
                            repr(b["acc"]), repr(b["conf"])])


def _manifest(args, spec: TaskSpec, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    return {
        "tool": "rsaware",
        "version": __version__,
        "command": args.command,
        "config": cfg,
        "task": spec.name,
        "task_hash": spec.content_hash(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        **extra,
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    spec = load_task(args.task)
    out = _out_dir(args)
    rows, runs = [], []
    for seed in _seeds(args):
        ds = generate_dataset(spec, seed)
        cfg = _train_config(spec, args, seed)
        tr = ds["train"]
        model = fit(spec, args.method, tr.x, tr.y, cfg, args.mc_samples, args.base)
        rows += _split_rows(model, ds, ("test", "ood"), args.method, spec.name, seed, args.bins)
        ckpt = out / f"model_{args.method}_seed{seed}.json"
        run = {"seed": seed, "checkpoint": ckpt.name, "train": asdict(cfg),
               "ensemble_size": cfg.ensemble_size if args.method in ("bears", "de") else 1,
               "gamma1": cfg.gamma1 if args.method == "bears" else 0.0,
               "gamma2": cfg.gamma2 if args.method == "bears" else 0.0}
        save_model(model, ckpt, {"method": args.method, "task": spec.name,
                                 "task_hash": spec.content_hash(), **run})
        _reliability(model, ds["test"], args.bins, out / f"reliability_{args.method}_seed{seed}.csv")
        runs.append(run)
    write_rows(rows, out / "results.csv")
    first = runs[0]
    _write_json(_manifest(args, spec, method=args.method, ensemble_size=first["ensemble_size"],
                          gamma1=first["gamma1"], gamma2=first["gamma2"], runs=runs),
                out / "manifest.json")
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return 0


def cmd_eval(args) -> int:
    spec = load_task(args.task)
    out = _out_dir(args)
    manifest = read_manifest(args.checkpoint)
    if manifest.get("task_hash") != spec.content_hash():
        raise TaskMismatch(f"checkpoint was trained on task hash {manifest.get('task_hash')}, "
                           f"but {args.task!r} hashes to {spec.content_hash()}")
    model, _ = load_model(args.checkpoint, spec.reasoner())
    seed = args.data_seed if args.data_seed is not None else int(manifest.get("seed", args.seed))
    ds = generate_dataset(spec, seed)
    if args.split not in ds.splits or not len(ds[args.split]):
        raise ValueError(f"task {spec.name!r} has no {args.split!r} split")
    method = manifest.get("method", "unknown")
    rows = _split_rows(model, ds, (args.split,), method, spec.name, seed, args.bins)
    write_rows(rows, out / "eval.csv")
    _write_json(_manifest(args, spec, checkpoint=str(args.checkpoint), seed=seed), out / "manifest.json")
    print(json.dumps({k: _fmt(v) for k, v in rows[0].items()}, sort_keys=True))
    return 0


def cmd_analyze_rs(args) -> int:
    spec = load_task(args.task)
    out = _out_dir(args)
    report = rs_report(spec.knowledge_expr(), spec.support, spec.prior_weights(), args.node_budget)
    report = {"task": spec.name, **report}
    _write_json(report, out / "rs.json")
    _write_json(_manifest(args, spec), out / "manifest.json")
    print(f"{spec.name}: {report['total_optima']} optimal maps, {report['rs_count']} shortcuts")
    return 0


def cmd_active(args) -> int:
    spec = load_task(args.task)
    out = _out_dir(args)
    rows = []
    for seed in _seeds(args):
        ds = generate_dataset(spec, seed)
        for strategy in args.strategies:
            # the random arm always queries for a plain single model
            method = "dpl" if strategy == "random" and args.method != "dpl" and args.random_dpl else args.method
            cfg = ActiveConfig(method=method, strategy=strategy, budget=args.budget, k=args.k,
                               init_count=args.init_count, warm_start=not args.cold_start,
                               w_c=args.w_c, round_epochs=args.round_epochs,
                               train=_train_config(spec, args, seed))
            state = active_loop(ds, cfg, seed)
            rows += [{"strategy": strategy, "method": method, "seed": seed, "queries": q,
                      "acc_c": ac, "acc_y": ay} for q, ac, ay in state.curve]
    write_curves(rows, out / "curves.csv")
    _write_json(_manifest(args, spec), out / "manifest.json")
    print(f"wrote {len(rows)} curve points to {out / 'curves.csv'}")
    return 0


def cmd_gen_data(args) -> int:
    spec = load_task(args.task)
    out = _out_dir(args)
    for seed in _seeds(args):
        export_csv(generate_dataset(spec, seed), out / f"data_{spec.name}_seed{seed}.csv")
    spec.save(out / f"task_{spec.name}.json")
    _write_json(_manifest(args, spec), out / "manifest.json")
    print(f"wrote data for {spec.name} to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _csv_list(s: str) -> list[str]:
    return [p for p in s.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--task", required=True, help="builtin task name or task JSON path")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", type=int, nargs="+", help="several seeds (overrides --seed)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--method", choices=METHODS, default="dpl")
    training.add_argument("--base", choices=("dpl", "sl"), default="dpl",
                          help="predictor used inside bears/de/mcdo")
    training.add_argument("--ensemble-size", type=int)
    training.add_argument("--gamma1", type=float)
    training.add_argument("--gamma2", type=float)
    training.add_argument("--mc-samples", type=int, default=30)
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=int)
    training.add_argument("--lr", type=float)
    training.add_argument("--dropout", type=float)
    training.add_argument("--bins", type=int, default=10)

    p = argparse.ArgumentParser(prog="rsaware", description="Shortcut-aware neuro-symbolic experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common, training], help="train and score a model")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="score a saved checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--split", default="test", choices=("train", "val", "test", "ood"))
    s.add_argument("--data-seed", type=int, help="dataset seed (default: the checkpoint's)")
    s.add_argument("--bins", type=int, default=10)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze-rs", parents=[common], help="enumerate reasoning shortcuts")
    s.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    s.set_defaults(func=cmd_analyze_rs)

    s = sub.add_parser("active", parents=[common, training], help="concept-annotation acquisition curves")
    s.add_argument("--strategies", type=_csv_list, default=["entropy", "random"])
    s.add_argument("--budget", type=int, default=50)
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--init-count", type=int, default=10)
    s.add_argument("--w-c", type=float)
    s.add_argument("--round-epochs", type=int, default=3)
    s.add_argument("--cold-start", action="store_true")
    s.add_argument("--random-dpl", action=argparse.BooleanOptionalAction, default=True,
                   help="run the random arm with plain DPL whatever --method says")
    s.set_defaults(func=cmd_active)

    s = sub.add_parser("gen-data", parents=[common], help="export generated splits as CSV")
    s.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SearchBudgetExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except TaskMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except Exception as e:  # every other module error
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
