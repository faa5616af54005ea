"""Command-line entry point: ``croloss {train,eval,sweep,gradcheck,inspect-data}``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from croloss.checks import run_battery
from croloss.config import ConfigError, RunConfig, load_config
from croloss.data import DataError, Splits
from croloss.evaluation import recall_at_n
from croloss.experiment import (BASELINES, build_splits, cell_overrides, eval_ns, load_log,
                                run_training)
from croloss.model import TwoTowerModel
from croloss.trainer import TrainingError

logger = logging.getLogger("croloss")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
RUNTIME_ERRORS = (OSError, DataError, TrainingError, FloatingPointError, EOFError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config, args.set or [])
    if getattr(args, "seed", None) is not None:
        cfg.set("data.seed", str(args.seed))
        cfg.set("train.seed", str(args.seed))
    if getattr(args, "output_dir", None):
        cfg.set("run.output_dir", args.output_dir)
    return cfg


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


# -- train / eval -----------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve(args)
    splits = build_splits(cfg)
    out = run_training(cfg, splits, on_record=lambda r: logger.info("eval %s", json.dumps(r)))
    # outputs are only written once the whole run succeeded
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "config.ini")
    _write_text(run_dir / "history.jsonl", "".join(line + "\n" for line in out.history_lines))
    out.result.model.save(run_dir / "checkpoint.npz")
    _write_text(run_dir / "report.jsonl", out.report.to_json() + "\n")
    _write_text(run_dir / "report.txt", f"{out.label} on test split\n{out.report.table()}\n")
    print(out.report.table())
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _resolve(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else cfg.run_dir / "checkpoint.npz"
    model = TwoTowerModel.load(ckpt)
    splits = build_splits(cfg)
    if model.catalog_size != splits.catalog_size:
        raise DataError(f"checkpoint catalog {model.catalog_size} != data catalog {splits.catalog_size}")
    samples = getattr(splits, args.split)
    report = recall_at_n(model, samples, eval_ns(cfg, splits.catalog_size), cfg["eval"]["exclude_history"])
    out_dir = ckpt.parent
    _write_text(out_dir / f"eval_{args.split}.jsonl", report.to_json() + "\n")
    _write_text(out_dir / f"eval_{args.split}.txt", report.table() + "\n")
    print(report.table())
    return EXIT_OK


# -- sweep ------------------------------------------------------------------

_SHARED: dict = {}


def _init_worker(splits: Splits) -> None:
    _SHARED["splits"] = splits


def _run_cell(base: dict, overrides: list[str]) -> dict:
    cfg = RunConfig(json.loads(json.dumps(base)))
    try:
        cfg.apply_overrides(overrides)
        out = run_training(cfg, _SHARED["splits"])
        return {"ok": True, "label": out.label, "report": json.loads(out.report.to_json()),
                "best_step": out.result.best_step, "steps": out.result.steps}
    except (ConfigError, ValueError, *RUNTIME_ERRORS) as exc:
        return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}


def sweep_cells(cfg: RunConfig) -> list[dict]:
    """One entry per (kernel, alpha, seed); baselines ignore alpha."""
    sw = cfg["sweep"]
    cells = []
    for seed in sw["seeds"]:
        for kernel in sw["kernels"]:
            alphas = [None] if kernel in BASELINES else sw["alphas"]
            for alpha in alphas:
                overrides = cell_overrides(kernel, alpha)
                overrides.append(f"train.seed={seed}")
                cells.append({"kernel": kernel, "alpha": alpha, "seed": seed, "overrides": overrides})
    return cells


def _mean_recall(records: list[dict], n: int) -> Optional[float]:
    vals = [r["report"]["recall_at"][str(n)] for r in records if r["ok"]]
    if not vals or len(vals) < len(records):
        return None
    return float(np.mean(vals))


def sweep_table(cfg: RunConfig, records: list[dict], ns: Sequence[int]) -> str:
    """Rows = kernel, columns = alpha x N; recall in % averaged over seeds.

    ``*`` marks the best alpha of a row for each N, ``^`` the best CROLoss cell
    overall for that N.  Baselines occupy the first alpha column only.
    """
    sw = cfg["sweep"]
    kernels, alphas = sw["kernels"], sw["alphas"]
    grid: dict[tuple[str, Optional[float], int], Optional[float]] = {}
    for kernel in kernels:
        for alpha in ([None] if kernel in BASELINES else alphas):
            cell = [r for r in records if r["kernel"] == kernel and r["alpha"] == alpha]
            for n in ns:
                grid[kernel, alpha, n] = _mean_recall(cell, n)
    overall = {}
    for n in ns:
        vals = [v for (k, a, m), v in grid.items() if m == n and a is not None and v is not None]
        overall[n] = max(vals) if vals else None

    width = 9
    group = {n: max(width * len(alphas), len(f"Recall@{n}") + 2) for n in ns}
    head1 = f"{'':<24}" + "".join(f"{'Recall@' + str(n):^{group[n]}}" for n in ns)
    head2 = f"{'kernel':<24}" + "".join(
        "".join(f"{'a=' + format(a, 'g'):>{width}}" for a in alphas).rjust(group[n]) for n in ns)
    lines = [head1, head2]
    for kernel in kernels:
        row = f"{kernel:<24}"
        for n in ns:
            if kernel in BASELINES:
                v = grid[kernel, None, n]
                cells = ["FAIL" if v is None else f"{100 * v:.2f}"] + [""] * (len(alphas) - 1)
            else:
                vals = [grid[kernel, a, n] for a in alphas]
                ok = [v for v in vals if v is not None]
                best = max(ok) if ok else None
                cells = []
                for v in vals:
                    if v is None:
                        cells.append("FAIL")
                        continue
                    mark = ("*" if v == best else "") + ("^" if v == overall[n] else "")
                    cells.append(f"{100 * v:.2f}{mark}")
            row += "".join(f"{c:>{width}}" for c in cells).rjust(group[n])
        lines.append(row)
    failed = sum(not r["ok"] for r in records)
    seeds = ", ".join(str(s) for s in sw["seeds"])
    lines.append(f"(* best alpha per kernel, ^ best CROLoss cell; seeds {seeds}; "
                 f"{failed} failed cell(s))")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    splits = build_splits(cfg)
    ns = eval_ns(cfg, splits.catalog_size)
    cells = sweep_cells(cfg)
    base = cfg.values
    jobs = max(1, args.jobs or 1)
    if jobs == 1:
        _init_worker(splits)
        results = []
        for c in cells:
            logger.info("cell %s alpha=%s seed=%s", c["kernel"], c["alpha"], c["seed"])
            results.append(_run_cell(base, c["overrides"]))
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(splits,)) as pool:
            results = list(pool.map(_run_cell, [base] * len(cells), [c["overrides"] for c in cells]))
    records = []
    for c, res in zip(cells, results):
        rec = {"kernel": c["kernel"], "alpha": c["alpha"], "seed": c["seed"], **res}
        if not res["ok"]:
            logger.error("cell %s alpha=%s seed=%s failed: %s", c["kernel"], c["alpha"], c["seed"],
                         res["error"])
        records.append(rec)
    table = sweep_table(cfg, records, ns)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    cfg.write(run_dir / "config.ini")
    _write_text(run_dir / "sweep.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _write_text(run_dir / "sweep.txt", table + "\n")
    print(table)
    return EXIT_RUNTIME if any(not r["ok"] for r in records) else EXIT_OK


# -- gradcheck / inspect-data -------------------------------------------------

def cmd_gradcheck(args) -> int:
    if args.config is not None or args.set:
        _resolve(args)  # validate only; the battery synthesises its own instances
    failed = 0
    for res in run_battery(quick=args.quick, corrupt=args.corrupt):
        print(res.line(), flush=True)
        failed += not res.passed
    print(f"{failed} check(s) failed" if failed else "all checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_inspect_data(args) -> int:
    cfg = _resolve(args)
    log = load_log(cfg)
    splits = build_splits(cfg, log)
    lengths = np.array([len(s) for s in log.sequences])
    stats = {
        "users": log.num_users,
        "items": log.catalog_size,
        "events": log.num_events,
        "sequence_length_mean": round(float(lengths.mean()), 3),
        "sequence_length_median": float(np.median(lengths)),
        "sequence_length_max": int(lengths.max()),
        "split_users": [len(u) for u in splits.users],
        "samples_train": len(splits.train),
        "samples_valid": len(splits.valid),
        "samples_test": len(splits.test),
        "eval_targets": cfg["data"]["eval_targets"],
    }
    for k, v in stats.items():
        print(f"{k}: {v}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="sets data.seed (user split) and train.seed "
                        "(initialisation and batch stream)")
    common.add_argument("--output-dir", help="overrides run.output_dir")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="croloss", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="train one model and report on the test split")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", help="defaults to <output_dir>/<run_id>/checkpoint.npz")
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("sweep", parents=[common], help="grid over kernels x alpha ([sweep] section)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("gradcheck", parents=[common], help="gradient and identity checks")
    p.add_argument("--quick", action="store_true", help="reduced battery (a few seconds)")
    p.add_argument("--corrupt", metavar="KERNEL", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    p = sub.add_parser("inspect-data", parents=[common], help="dataset and split statistics")
    p.set_defaults(func=cmd_inspect_data)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RUNTIME_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
