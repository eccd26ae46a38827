"""Command-line front end: ``run``, ``sweep``, ``train`` and ``eval``.

Exit status: 0 on success, 1 on a usage or configuration error (including a
missing or incompatible checkpoint), 2 when a simulation fails at run time.

Output files live under ``--out`` and are named after the scheduler, the
swept axis value (sweeps only) and the seed, e.g. ``PF_seed3.csv``,
``CDPAA2C_n_ue-90_seed3.json`` or ``DA2C_seed0.ckpt``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from .domain import LEARNING_SCHEDULERS, SCHEDULERS, ConfigError, ScenarioConfig, load_config, validate_config
from .engine import Simulation, train_and_evaluate
from .metrics import NODATA, delivery_ratio, export, mean_hol, read_csv, reward_curve
from .nn import CheckpointError

log = logging.getLogger("qosched")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
SWEEP_AXES = ("n_ue", "mobile_fraction")
AGGREGATE_COLUMNS = ("value", "scheduler", "class", "mean_delivery_ratio", "mean_hol",
                     "std_delivery_ratio", "std_hol", "n_seeds", "failed_seeds")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; this project reserves 2 for run-time failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ----------------------------------------------------------------- helpers

def _raw_config(path: Optional[str]) -> dict:
    """The scenario mapping from ``path`` (validated once to surface errors early), or defaults."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    load_config(p)
    with p.open() as fh:
        return yaml.safe_load(fh) or {}


def make_config(raw: dict, **overrides) -> ScenarioConfig:
    """Validate ``raw`` with overrides applied (``None`` means keep the file's value)."""
    merged = dict(raw)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return validate_config(merged)


def run_stem(scheduler: str, seed: int, axis: Optional[str] = None, value: Any = None) -> str:
    if axis is None:
        return f"{scheduler}_seed{seed}"
    return f"{scheduler}_{axis}-{_fmt_value(value)}_seed{seed}"


def _fmt_value(v) -> str:
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    return str(v)


def _parse_value(axis: str, text: str):
    try:
        return int(text) if axis == "n_ue" else float(text)
    except ValueError:
        raise ConfigError(f"bad {axis} value {text!r}") from None


def write_reward_trace(path: Path, rewards: np.ndarray, window: int) -> None:
    curve = reward_curve(rewards, window)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("tti", "reward", "running_mean"))
        for t, (r, m) in enumerate(zip(rewards, curve)):
            w.writerow((t, repr(float(r)), repr(float(m))))


# ------------------------------------------------------------------- sweep

def _sweep_cell(raw: dict, scheduler: str, axis: str, value, seed: int, out: str,
                eval_ttis: Optional[int]) -> tuple[str, Optional[str]]:
    """Run one (scheduler, value, seed) cell; returns (stem, error message or None)."""
    stem = run_stem(scheduler, seed, axis, value)
    try:
        cfg = make_config(raw, scheduler=scheduler, seed=seed, **{axis: value})
        if cfg.scheduler in LEARNING_SCHEDULERS:
            train, res = train_and_evaluate(cfg, eval_ttis=eval_ttis)
            write_reward_trace(Path(out) / f"{stem}_reward.csv", train.kpi.reward_per_tti(),
                               cfg.reward_window)
        else:
            res = Simulation(cfg).run()
        export(res.kpi, Path(out) / f"{stem}.csv", Path(out) / f"{stem}.json", res.summary)
        return stem, None
    except Exception as e:  # recorded per cell; the aggregate is still written
        return stem, f"{type(e).__name__}: {e}"


def aggregate(out: str | Path, axis: str, values: Sequence, seeds: Sequence[int],
              schedulers: Sequence[str]) -> list[dict]:
    """Across-seed means and standard deviations, recomputed from the per-run CSV files."""
    out = Path(out)
    rows = []
    for value in values:
        for sched in schedulers:
            per_class: dict[str, tuple[list, list]] = {}
            failed = []
            for seed in seeds:
                path = out / f"{run_stem(sched, seed, axis, value)}.csv"
                if not path.is_file():
                    failed.append(seed)
                    continue
                kpi = read_csv(path)
                tot = kpi.totals()
                for i, c in enumerate(kpi.classes):
                    dr, mh = delivery_ratio(tot, i), mean_hol(tot, i)
                    drs, mhs = per_class.setdefault(c, ([], []))
                    if dr is not NODATA:
                        drs.append(dr)
                    if mh is not NODATA:
                        mhs.append(mh)
            for c, (drs, mhs) in per_class.items():
                rows.append({
                    "value": _fmt_value(value), "scheduler": sched, "class": c,
                    "mean_delivery_ratio": float(np.mean(drs)) if drs else "",
                    "mean_hol": float(np.mean(mhs)) if mhs else "",
                    "std_delivery_ratio": float(np.std(drs)) if drs else "",
                    "std_hol": float(np.std(mhs)) if mhs else "",
                    "n_seeds": len(drs),
                    "failed_seeds": " ".join(map(str, failed)),
                })
            if not per_class:
                rows.append({"value": _fmt_value(value), "scheduler": sched, "class": "",
                             "mean_delivery_ratio": "", "mean_hol": "", "std_delivery_ratio": "",
                             "std_hol": "", "n_seeds": 0, "failed_seeds": " ".join(map(str, failed))})
    return rows


def write_aggregate(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    raw = _raw_config(args.config)
    cfg = make_config(raw, seed=args.seed, scheduler=args.scheduler, sim_ttis=args.ttis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg)
    if args.checkpoint:
        _load_checkpoint(sim, args.checkpoint)
    res = _guarded(sim.run)
    stem = run_stem(cfg.scheduler, cfg.seed)
    export(res.kpi, out / f"{stem}.csv", out / f"{stem}.json", res.summary)
    print(out / f"{stem}.csv")
    return EXIT_OK


def cmd_sweep(args) -> int:
    raw = _raw_config(args.config)
    if args.ttis is not None:
        raw["sim_ttis"] = args.ttis
    values = [_parse_value(args.axis, v) for v in args.values]
    seeds = list(args.seeds)
    if len(set(seeds)) != len(seeds):
        raise ConfigError("sweep seeds must be distinct")
    schedulers = [validate_config({"scheduler": s}).scheduler for s in args.schedulers]
    for v in values:  # reject bad axis values before launching anything
        make_config(raw, **{args.axis: v})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = [(s, v, seed) for v in values for s in schedulers for seed in seeds]
    jobs = [(raw, s, args.axis, v, seed, str(out), args.eval_ttis) for s, v, seed in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, *zip(*jobs)))
    else:
        results = [_sweep_cell(*j) for j in jobs]
    failures = {stem: err for stem, err in results if err}
    for stem, err in failures.items():
        log.error("cell %s failed: %s", stem, err)
    rows = aggregate(out, args.axis, values, seeds, schedulers)
    write_aggregate(out / "aggregate.csv", rows)
    (out / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True) + "\n")
    print(out / "aggregate.csv")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_train(args) -> int:
    raw = _raw_config(args.config)
    cfg = make_config(raw, seed=args.seed, scheduler=args.scheduler, sim_ttis=args.ttis, learn=True)
    _require_learning(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = Simulation(cfg)
    res = _guarded(sim.run)
    stem = run_stem(cfg.scheduler, cfg.seed)
    sim.save_networks(out / f"{stem}.ckpt")
    export(res.kpi, out / f"{stem}_train.csv", out / f"{stem}_train.json", res.summary)
    write_reward_trace(out / f"{stem}_reward.csv", res.kpi.reward_per_tti(), cfg.reward_window)
    print(out / f"{stem}.ckpt")
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = _raw_config(args.config)
    cfg = make_config(raw, seed=args.seed, scheduler=args.scheduler, sim_ttis=args.ttis, learn=False)
    _require_learning(cfg)
    out = Path(args.out)
    stem = run_stem(cfg.scheduler, cfg.seed)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"{stem}.ckpt"
    sim = Simulation(cfg)
    _load_checkpoint(sim, ckpt)
    res = _guarded(sim.run)
    out.mkdir(parents=True, exist_ok=True)
    export(res.kpi, out / f"{stem}_eval.csv", out / f"{stem}_eval.json", res.summary)
    write_reward_trace(out / f"{stem}_eval_reward.csv", res.kpi.reward_per_tti(), cfg.reward_window)
    print(out / f"{stem}_eval.csv")
    return EXIT_OK


class RuntimeFailure(Exception):
    pass


def _guarded(fn):
    try:
        return fn()
    except Exception as e:
        log.debug("%s", traceback.format_exc())
        raise RuntimeFailure(f"simulation failed: {type(e).__name__}: {e}") from e


def _require_learning(cfg: ScenarioConfig) -> None:
    if cfg.scheduler not in LEARNING_SCHEDULERS:
        raise ConfigError(f"scheduler {cfg.scheduler} has no networks; use one of {LEARNING_SCHEDULERS}")


def _load_checkpoint(sim: Simulation, path) -> None:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        sim.load_networks(path)
    except (CheckpointError, ValueError) as e:
        raise ConfigError(f"checkpoint rejected: {e}") from None


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qosched", description="TTI-level downlink scheduling simulator "
                "with PF, CQA, D-A2C and CDPA-A2C schedulers.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="{run,sweep,train,eval}", parser_class=_Parser)
    sub.required = True

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML scenario file (defaults built in when omitted)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", default="results", help="output directory (default: results)")
        sp.add_argument("--ttis", type=int, help="override sim_ttis")

    sched_help = f"one of {', '.join(SCHEDULERS)} (CDPA-A2C and D-A2C spellings accepted)"
    r = sub.add_parser("run", help="one simulation; writes <scheduler>_seed<N>.csv/.json")
    common(r)
    r.add_argument("--scheduler", help=sched_help)
    r.add_argument("--checkpoint", help="start learning schedulers from this checkpoint")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="values x seeds x schedulers; writes aggregate.csv")
    common(s, seed=False)
    s.add_argument("--axis", choices=SWEEP_AXES, default="n_ue")
    s.add_argument("--values", nargs="+", required=True)
    s.add_argument("--seeds", nargs="+", type=int, default=list(range(10)))
    s.add_argument("--scheduler", "--schedulers", dest="schedulers", nargs="+",
                   default=["PF", "CQA"], help=sched_help)
    s.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    s.add_argument("--eval-ttis", type=int,
                   help="frozen evaluation length for learning schedulers (default: sim_ttis)")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="online training; writes checkpoint and reward trace")
    common(t)
    t.add_argument("--scheduler", help=sched_help)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="frozen greedy run of a trained checkpoint")
    common(e)
    e.add_argument("--scheduler", help=sched_help)
    e.add_argument("--checkpoint", help="checkpoint path (default: <out>/<scheduler>_seed<N>.ckpt)")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
