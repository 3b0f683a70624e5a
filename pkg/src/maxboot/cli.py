"""Command-line entry point: simulate, ppcurve, predict and verify."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import harness, oracles
from .errors import MaxBootError, ReportIOError, ValidationError

_OVERRIDES = ("design", "rho", "n", "d", "marginal", "trials", "seed", "threads", "budget")


def _threads(text: str):
    if text == "auto":
        return "auto"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threads must be an integer or 'auto'") from None


def _grid(text: str) -> list[float]:
    try:
        start, stop, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("grid must look like START:STOP:STEP") from None
    if step <= 0:
        raise argparse.ArgumentTypeError("grid step must be positive")
    return [round(x, 12) for x in np.arange(start, stop + step / 2, step)]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring the experiment config; flags override it")
    p.add_argument("--design", help="copula1 | copula2 | factor | spherical")
    p.add_argument("--rho", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--marginal", choices=("asym", "sym"))
    p.add_argument(
        "--method",
        action="append",
        help="gaussian | mammen | rademacher | beta:NU | empirical | double:NU,B2 (repeatable)",
    )
    p.add_argument("--b", type=int, help="first-level bootstrap replications")
    p.add_argument("--alpha", type=float, action="append", help="nominal level (repeatable)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=_threads)
    p.add_argument("--budget", type=float, help="maximum projected multiply-adds")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxboot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo rejection rates")
    _add_experiment_flags(sim)
    sim.add_argument("--predict", action="store_true", help="attach expansion predictions")
    sim.add_argument("--no-timing", action="store_true", help="omit wall-clock fields")

    pp = sub.add_parser("ppcurve", help="rejection rate over an alpha grid")
    _add_experiment_flags(pp)
    pp.add_argument("--grid", type=_grid, help="START:STOP:STEP (default 0.05:0.95:0.05)")
    pp.add_argument("--no-timing", action="store_true")

    pr = sub.add_parser("predict", help="second-order predicted rejection rates")
    _add_experiment_flags(pr)

    sub.add_parser("verify", help="run the built-in oracle checks")
    return parser


def _load_config(args) -> harness.ExperimentConfig:
    doc: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ReportIOError(f"cannot read config {args.config}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ValidationError("config file must hold a JSON object")
    for key in _OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if args.method:
        doc["methods"] = args.method
    if args.b is not None:
        doc["b"] = args.b
    if args.alpha:
        doc["alphas"] = args.alpha
    if getattr(args, "grid", None):
        doc["alphas"] = args.grid
    elif args.command == "ppcurve" and not args.alpha and "alphas" not in doc:
        doc["alphas"] = _grid("0.05:0.95:0.05")
    doc.setdefault("methods", ["gaussian"])
    return harness.ExperimentConfig.from_dict(doc)


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _predict_table(cfg: harness.ExperimentConfig, fmt: str) -> str:
    rows = harness.predict(cfg)
    if fmt == "json":
        doc = [{"method": m, "alpha": a, "predicted": None if p is None else float(f"{p:.6g}")} for m, a, p in rows]
        return json.dumps({"config": cfg.to_dict(), "rows": doc}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("design", "rho", "n", "d", "method", "alpha", "predicted"))
    for m, a, p in rows:
        w.writerow((cfg.design, f"{cfg.rho:.6g}", cfg.n, cfg.d, m, f"{a:.6g}", "" if p is None else f"{p:.6g}"))
    return buf.getvalue()


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        results = oracles.run_all()
        for r in results:
            print(f"{'PASS' if r.ok else 'FAIL'}  {r.name}  ({r.detail})")
        return 0 if all(r.ok for r in results) else 1
    cfg = _load_config(args)
    if args.command == "predict":
        _write(_predict_table(cfg, args.format), args.out)
        return 0
    if args.command == "ppcurve":
        harness.check_grid(cfg.alphas)
    report = harness.run_experiment(cfg)
    if getattr(args, "predict", False):
        report = harness.attach_predictions(report, cfg)
    timing = not args.no_timing
    if args.out:
        harness.emit_report(report, args.format, args.out, timing=timing)
    else:
        sys.stdout.write(harness.format_report(report, args.format, timing))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except MaxBootError as exc:
        print(f"maxboot: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
