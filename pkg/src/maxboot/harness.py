"""Monte Carlo experiment runner, P-P sweeps, predictions and report I/O."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from math import sqrt
from typing import Callable

import numpy as np

from . import edgeworth
from .bootstrap import (
    BootstrapConfig,
    ReplicateSet,
    bootstrap_quantile,
    double_wild_test,
    empirical_replicates,
    t_stat,
    wild_replicates,
)
from .dgp import CopulaConfig, FactorConfig, gen_copula, gen_factor, scalar_third_moment
from .errors import CapabilityError, CostRefusal, ReportIOError, ValidationError
from .gaussnum import DENSE_QUAD_MAX_D
from .model import CovarianceSpec, DataSet
from .rng import Purpose, StreamKey

DESIGNS = ("copula1", "copula2", "factor", "spherical")
_DESIGN_ALIASES = {
    "copulai": "copula1",
    "copula1": "copula1",
    "i": "copula1",
    "copulaii": "copula2",
    "copula2": "copula2",
    "ii": "copula2",
    "factor": "factor",
    "spherical": "spherical",
    "iidspherical": "spherical",
}
DEFAULT_BUDGET = 1e12
AUX_SAMPLE_ROWS = 1_000_000
CSV_COLUMNS = ("design", "rho", "n", "d", "method", "alpha", "rate", "mc_se", "trials", "seed", "predicted", "seconds")

DataHook = Callable[[int, np.random.Generator], DataSet]


def _design(name: str) -> str:
    key = name.strip().lower().replace("_", "").replace("-", "").replace(" ", "")
    if key not in _DESIGN_ALIASES:
        raise ValidationError(f"unknown design {name!r}; choose from {', '.join(DESIGNS)}")
    return _DESIGN_ALIASES[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """One simulation cell.

    ``marginal`` is ``asym`` (centered Gamma(1) coordinates) or ``sym``
    (difference of two independent Gamma(0.5) copies).  Designs:
    ``copula1`` (equicorrelated copula), ``copula2`` (AR(1) copula),
    ``factor`` and ``spherical`` (independent coordinates).
    """

    design: str
    rho: float
    n: int
    d: int
    methods: tuple[BootstrapConfig, ...]
    alphas: tuple[float, ...] = (0.1,)
    marginal: str = "asym"
    trials: int = 2000
    seed: int = 0
    threads: int | str = "auto"
    budget: float = DEFAULT_BUDGET
    aux_rows: int = AUX_SAMPLE_ROWS

    def __post_init__(self) -> None:
        object.__setattr__(self, "design", _design(self.design))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.trials < 1:
            raise ValidationError(f"trials must be at least 1, got {self.trials}")
        if self.n < 1 or self.d < 1:
            raise ValidationError("n and d must be positive")
        if not self.alphas:
            raise ValidationError("at least one alpha is required")
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValidationError("alpha values must lie in (0, 1)")
        if self.marginal not in ("asym", "sym"):
            raise ValidationError(f"marginal must be 'asym' or 'sym', got {self.marginal!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if self.design in ("copula1", "factor") and not 0.0 <= self.rho < 1.0:
            raise ValidationError(f"rho must lie in [0, 1) for {self.design}, got {self.rho}")
        if self.design == "copula2" and not -1.0 < self.rho < 1.0:
            raise ValidationError(f"rho must lie in (-1, 1) for copula2, got {self.rho}")
        if self.threads != "auto" and (not isinstance(self.threads, int) or self.threads < 1):
            raise ValidationError(f"threads must be a positive integer or 'auto', got {self.threads!r}")

    @property
    def n_threads(self) -> int:
        return (os.cpu_count() or 1) if self.threads == "auto" else int(self.threads)

    def projected_work(self) -> float:
        """Fused multiply-adds: M * sum over methods of (B1 + B1 B2 + 1) n d."""
        per_trial = sum(m.replicate_count() + 1 for m in self.methods)
        return float(self.trials) * per_trial * self.n * self.d

    def to_dict(self) -> dict:
        return {
            "design": self.design,
            "rho": self.rho,
            "n": self.n,
            "d": self.d,
            "marginal": self.marginal,
            "methods": [m.label for m in self.methods],
            "b": self.methods[0].b if self.methods else None,
            "alphas": list(self.alphas),
            "trials": self.trials,
            "seed": int(self.seed),
            "threads": self.threads,
            "budget": self.budget,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ExperimentConfig:
        doc = dict(doc)
        b = int(doc.pop("b", 499) or 499)
        methods = doc.pop("methods", ["gaussian"])
        alphas = doc.pop("alphas", doc.pop("alpha", [0.1]))
        if isinstance(alphas, (int, float)):
            alphas = [alphas]
        if "design" not in doc:
            raise ValidationError("experiment config needs a design")
        doc["design"] = _design(str(doc["design"]))
        if doc["design"] == "spherical":
            doc.setdefault("rho", 0.0)
        known = {"design", "rho", "n", "d", "marginal", "trials", "seed", "threads", "budget", "aux_rows"}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(
                methods=tuple(m if isinstance(m, BootstrapConfig) else BootstrapConfig.parse(m, b) for m in methods),
                alphas=tuple(alphas),
                **doc,
            )
        except TypeError as exc:
            raise ValidationError(f"incomplete experiment config: {exc}") from None


@dataclass(frozen=True)
class ReportRow:
    method: str
    alpha: float
    rate: float
    mc_se: float
    trials: int
    predicted: float | None = None
    seconds: float | None = None


@dataclass(frozen=True)
class RejectionReport:
    config: dict
    rows: tuple[ReportRow, ...]
    seconds: float | None = None

    def rate(self, method: str, alpha: float = 0.1) -> float:
        for r in self.rows:
            if r.method == method and abs(r.alpha - alpha) < 1e-12:
                return r.rate
        raise KeyError((method, alpha))

    def row(self, method: str, alpha: float = 0.1) -> ReportRow:
        for r in self.rows:
            if r.method == method and abs(r.alpha - alpha) < 1e-12:
                return r
        raise KeyError((method, alpha))


def mc_standard_error(rate: float, trials: int) -> float:
    return sqrt(rate * (1.0 - rate) / trials)


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------


def _copula_config(cfg: ExperimentConfig, n: int) -> CopulaConfig:
    if cfg.design == "copula1":
        corr = CovarianceSpec.equicorrelation(cfg.d, cfg.rho)
    elif cfg.design == "copula2":
        corr = CovarianceSpec.ar1(cfg.d, cfg.rho)
    else:
        corr = CovarianceSpec.identity(cfg.d)
    if cfg.marginal == "sym":
        return CopulaConfig(corr, n, marginal_shape=0.5, symmetrize=True)
    return CopulaConfig(corr, n)


def _factor_config(cfg: ExperimentConfig, n: int) -> FactorConfig:
    return FactorConfig(cfg.rho, cfg.d, n, u_law="exp" if cfg.marginal == "asym" else "rademacher")


def generate_data(cfg: ExperimentConfig, gen: np.random.Generator, n: int | None = None) -> DataSet:
    n = cfg.n if n is None else n
    if cfg.design == "factor":
        return gen_factor(_factor_config(cfg, n), gen)
    return gen_copula(_copula_config(cfg, n), gen)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def _method_rejections(
    data: DataSet, t_n: float, method: BootstrapConfig, alphas: np.ndarray, trial: int, seed: int, idx: int
) -> np.ndarray:
    stream = StreamKey(seed, trial, Purpose.LEVEL1)
    if method.method == "double":
        res = double_wild_test(data, method.law, method.v_law, method.b, method.b2, float(alphas.max()), stream, sub=(idx,))
        return res.prepivot_pvalue <= alphas
    gen = stream.generator(idx)
    if method.method == "wild":
        reps = wild_replicates(data, method.law, method.b, gen)
    else:
        reps = empirical_replicates(data, method.b, gen)
    # one sorted replicate set serves every alpha
    c = bootstrap_quantile(ReplicateSet(reps), 1.0 - alphas)
    return t_n >= c


def run_experiment(cfg: ExperimentConfig, data_hook: DataHook | None = None) -> RejectionReport:
    """Rejection rates over ``cfg.trials`` independent trials.

    Every trial draws data from (seed, trial, DATA) and method k from
    (seed, trial, LEVEL1/LEVEL2, k); counts are summed in trial order, so
    the report does not depend on the thread count.  ``data_hook(trial,
    gen)`` replaces the design's generator when given.
    """
    work = cfg.projected_work()
    if work > cfg.budget:
        raise CostRefusal(
            f"projected work {work:.3g} multiply-adds exceeds the budget {cfg.budget:.3g}; "
            "reduce trials/b/n/d or raise the budget",
            work,
            cfg.budget,
        )
    alphas = np.asarray(cfg.alphas)
    n_methods = len(cfg.methods)

    def one_trial(trial: int) -> tuple[np.ndarray, np.ndarray]:
        gen = StreamKey(cfg.seed, trial, Purpose.DATA).generator()
        data = data_hook(trial, gen) if data_hook is not None else generate_data(cfg, gen)
        if data.d != cfg.d:
            raise ValidationError(f"data hook returned d={data.d}, expected {cfg.d}")
        t_n = t_stat(data)
        flags = np.zeros((n_methods, alphas.size), dtype=np.int64)
        secs = np.zeros(n_methods)
        for k, method in enumerate(cfg.methods):
            t0 = time.perf_counter()
            flags[k] = _method_rejections(data, t_n, method, alphas, trial, cfg.seed, k)
            secs[k] = time.perf_counter() - t0
        return flags, secs

    start = time.perf_counter()
    counts = np.zeros((n_methods, alphas.size), dtype=np.int64)
    method_secs = np.zeros(n_methods)
    trials = range(1, cfg.trials + 1)
    if cfg.n_threads == 1:
        results = map(one_trial, trials)
        for flags, secs in results:
            counts += flags
            method_secs += secs
    else:
        with ThreadPoolExecutor(max_workers=cfg.n_threads) as pool:
            for flags, secs in pool.map(one_trial, trials):
                counts += flags
                method_secs += secs
    elapsed = time.perf_counter() - start

    rows = []
    for k, method in enumerate(cfg.methods):
        for j, a in enumerate(cfg.alphas):
            rate = counts[k, j] / cfg.trials
            rows.append(
                ReportRow(method.label, a, float(rate), mc_standard_error(rate, cfg.trials), cfg.trials, None, float(method_secs[k]))
            )
    # the thread count is scheduling detail, not provenance: leaving it out keeps
    # reports byte-identical across thread counts
    echo = {k: v for k, v in cfg.to_dict().items() if k != "threads"}
    return RejectionReport(echo, tuple(rows), elapsed)


def check_grid(alphas) -> None:
    if len(alphas) == 0:
        raise ValidationError("alpha grid must be nonempty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValidationError("alpha grid must be strictly increasing")


def pp_curve(cfg: ExperimentConfig, data_hook: DataHook | None = None) -> list[tuple[str, float, float, float]]:
    """(method, alpha, rate, mc_se) over a strictly increasing alpha grid."""
    check_grid(cfg.alphas)
    report = run_experiment(cfg, data_hook)
    return [(r.method, r.alpha, r.rate, r.mc_se) for r in report.rows]


# ---------------------------------------------------------------------------
# predictions
# ---------------------------------------------------------------------------


def population_moments(cfg: ExperimentConfig) -> tuple[CovarianceSpec, edgeworth.ThirdMoments]:
    """Covariance and third moments of one observation under the design."""
    d = cfg.d
    if cfg.design == "spherical":
        gamma_x = 2.0 if cfg.marginal == "asym" else 0.0
        return CovarianceSpec.identity(d), edgeworth.spherical_moments(d, gamma_x)
    if cfg.design == "factor":
        fc = _factor_config(cfg, 1)
        mom = edgeworth.factor_moments(d, cfg.rho, scalar_third_moment(fc.u_law), scalar_third_moment(fc.v_law))
        return CovarianceSpec.equicorrelation(d, cfg.rho), mom
    if cfg.design == "copula1":
        shape, sym = (0.5, True) if cfg.marginal == "sym" else (1.0, False)
        return edgeworth.copula_equicorrelation_moments(d, cfg.rho, shape, symmetrize=sym)
    # AR(1) copula: moments of the transformed coordinates from a large auxiliary sample
    if d > DENSE_QUAD_MAX_D:
        raise CapabilityError(f"no prediction path for copula2 with d={d} (needs d <= {DENSE_QUAD_MAX_D})")
    gen = StreamKey(cfg.seed, 0, Purpose.GAUSSIAN_REF).generator(1)
    x = generate_data(cfg, gen, cfg.aux_rows).values
    cov = x.T @ x / x.shape[0]
    third = np.einsum("ij,ik,il->jkl", x, x, x) / x.shape[0]
    return CovarianceSpec.dense(cov), third


def predict(cfg: ExperimentConfig) -> list[tuple[str, float, float | None]]:
    """(method, alpha, predicted) rows; methods without an expansion get None."""
    sigma, third = population_moments(cfg)
    out = []
    for method in cfg.methods:
        for a in cfg.alphas:
            if method.method != "wild":
                out.append((method.label, a, None))
                continue
            inp = edgeworth.ExpansionInputs(sigma, cfg.n, method.law.gamma, third)
            out.append((method.label, a, edgeworth.predicted_rejection(inp, a).predicted))
    return out


def attach_predictions(report: RejectionReport, cfg: ExperimentConfig) -> RejectionReport:
    pred = {(m, a): p for m, a, p in predict(cfg)}
    rows = tuple(replace(r, predicted=pred.get((r.method, r.alpha))) for r in report.rows)
    return replace(report, rows=rows)


# ---------------------------------------------------------------------------
# report I/O
# ---------------------------------------------------------------------------


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _round6(x):
    return None if x is None else float(f"{float(x):.6g}")


def _row_fields(report: RejectionReport, row: ReportRow, timing: bool) -> dict:
    c = report.config
    return {
        "design": c["design"],
        "rho": _num(c["rho"]),
        "n": _num(int(c["n"])),
        "d": _num(int(c["d"])),
        "method": row.method,
        "alpha": _num(row.alpha),
        "rate": _num(row.rate),
        "mc_se": _num(row.mc_se),
        "trials": _num(int(row.trials)),
        "seed": str(int(c["seed"])),
        "predicted": _num(row.predicted),
        "seconds": _num(row.seconds) if timing else "",
    }


def format_report(report: RejectionReport, fmt: str = "csv", timing: bool = True) -> str:
    """Serialize a report; ``timing=False`` blanks wall-clock fields for byte comparisons."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in report.rows:
            writer.writerow(_row_fields(report, row, timing))
        return buf.getvalue()
    if fmt == "json":
        doc = {
            "config": report.config,
            "seconds": _round6(report.seconds) if timing else None,
            "rows": [
                {
                    "method": r.method,
                    "alpha": _round6(r.alpha),
                    "rate": _round6(r.rate),
                    "mc_se": _round6(r.mc_se),
                    "trials": int(r.trials),
                    "predicted": _round6(r.predicted),
                    "seconds": _round6(r.seconds) if timing else None,
                }
                for r in report.rows
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    raise ValidationError(f"unknown report format {fmt!r}")


def emit_report(report: RejectionReport, fmt: str, path, timing: bool = True) -> None:
    text = format_report(report, fmt, timing)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {path}: {exc.strerror or exc}") from exc


def _opt_float(s: str) -> float | None:
    return None if s == "" else float(s)


def parse_report(text: str, fmt: str = "csv") -> RejectionReport:
    """Inverse of ``format_report`` up to serialization precision."""
    if fmt == "json":
        doc = json.loads(text)
        rows = tuple(
            ReportRow(r["method"], r["alpha"], r["rate"], r["mc_se"], r["trials"], r["predicted"], r["seconds"])
            for r in doc["rows"]
        )
        return RejectionReport(doc["config"], rows, doc["seconds"])
    if fmt != "csv":
        raise ValidationError(f"unknown report format {fmt!r}")
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValidationError("report header does not match the expected columns")
    rows, config = [], {}
    for rec in reader:
        config = {
            "design": rec["design"],
            "rho": float(rec["rho"]),
            "n": int(rec["n"]),
            "d": int(rec["d"]),
            "seed": int(rec["seed"]),
        }
        rows.append(
            ReportRow(
                rec["method"],
                float(rec["alpha"]),
                float(rec["rate"]),
                float(rec["mc_se"]),
                int(rec["trials"]),
                _opt_float(rec["predicted"]),
                _opt_float(rec["seconds"]),
            )
        )
    return RejectionReport(config, tuple(rows), None)


def read_report(path, fmt: str | None = None) -> RejectionReport:
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ReportIOError(f"cannot read report {path}: {exc.strerror or exc}") from exc
    return parse_report(text, fmt)
