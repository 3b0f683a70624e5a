"""Max statistic, wild/empirical bootstrap and the nested double wild bootstrap."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from .errors import ValidationError
from .model import DataSet
from .rng import Purpose, StreamKey, WeightLaw, sample_weights

# rows of weights per GEMM block; bounds the weight buffer to ~64 MB
_BLOCK_ELEMS = 8_000_000
# slack for p * (b + 1) landing a rounding error above an integer
_QUANTILE_SLACK = 1e-9


@dataclass(frozen=True)
class BootstrapConfig:
    """One resampling method.

    ``method`` is ``wild``, ``empirical`` or ``double``; ``law`` is the
    (first-level) weight law and ``v_law``/``b2`` configure the second
    level of the double wild bootstrap.
    """

    method: str
    b: int
    alpha: float = 0.1
    law: WeightLaw | None = None
    v_law: WeightLaw | None = None
    b2: int | None = None

    def __post_init__(self) -> None:
        if self.b < 1:
            raise ValidationError(f"b must be at least 1, got {self.b}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.method == "wild":
            if self.law is None:
                raise ValidationError("wild bootstrap needs a weight law")
        elif self.method == "empirical":
            if self.law is not None:
                raise ValidationError("empirical bootstrap takes no weight law")
        elif self.method == "double":
            if self.law is None or self.v_law is None or self.b2 is None:
                raise ValidationError("double wild bootstrap needs w_law, v_law and b2")
            if self.b2 < 1:
                raise ValidationError(f"b2 must be at least 1, got {self.b2}")
            if abs(self.law.gamma - 1.0) > 1e-9 or abs(self.v_law.gamma - 1.0) > 1e-9:
                warnings.warn(
                    "double wild bootstrap with weights whose third moment is not 1; "
                    "second-order accuracy is not guaranteed",
                    stacklevel=2,
                )
        else:
            raise ValidationError(f"unknown bootstrap method {self.method!r}")

    @classmethod
    def wild(cls, law: WeightLaw, b: int, alpha: float = 0.1) -> BootstrapConfig:
        return cls("wild", b, alpha, law)

    @classmethod
    def empirical(cls, b: int, alpha: float = 0.1) -> BootstrapConfig:
        return cls("empirical", b, alpha)

    @classmethod
    def double(cls, w_law: WeightLaw, v_law: WeightLaw, b: int, b2: int, alpha: float = 0.1) -> BootstrapConfig:
        return cls("double", b, alpha, w_law, v_law, b2)

    @classmethod
    def parse(cls, text: str, b: int, alpha: float = 0.1) -> BootstrapConfig:
        """CLI form: gaussian | mammen | rademacher | beta:NU | empirical | double:NU,B2."""
        t = text.strip().lower()
        if t == "empirical":
            return cls.empirical(b, alpha)
        if t.startswith("double:"):
            try:
                nu_s, b2_s = t.split(":", 1)[1].split(",")
                law = WeightLaw.std_beta(float(nu_s))
                return cls.double(law, law, b, int(b2_s), alpha)
            except ValueError:
                raise ValidationError(f"bad double bootstrap spec {text!r}; expected double:NU,B2") from None
        return cls.wild(WeightLaw.parse(t), b, alpha)

    @property
    def label(self) -> str:
        if self.method == "empirical":
            return "empirical"
        if self.method == "double":
            if self.law == self.v_law and self.law.kind == "beta":
                return f"double:{self.law.nu:g},{self.b2}"
            return f"double:{self.law.label}/{self.v_law.label},{self.b2}"
        return self.law.label

    def replicate_count(self) -> int:
        """First- plus second-level replicate evaluations per trial."""
        return self.b + (self.b * self.b2 if self.method == "double" else 0)


@dataclass(frozen=True, eq=False)
class ReplicateSet:
    """Bootstrap max statistics in nondecreasing order."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.sort(np.asarray(self.values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValidationError("replicate set must be nonempty")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def b(self) -> int:
        return self.values.size

    def count_at_least(self, t) -> np.ndarray | int:
        """#{replicates >= t}."""
        return self.b - np.searchsorted(self.values, t, side="left")


def t_stat(data: DataSet) -> float:
    """T_n = max_j n^{-1/2} sum_i X_ij."""
    return float(data.values.sum(axis=0).max() / sqrt(data.n))


def _check_weights(data: DataSet, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != data.n:
        raise ValidationError(f"weight vector length {w.shape[-1]} does not match n={data.n}")
    return w


def wild_replicate(data: DataSet, weights) -> float:
    """max_j n^{-1/2} sum_i w_i (X_ij - Xbar_j)."""
    w = _check_weights(data, weights)
    if w.ndim != 1:
        raise ValidationError("wild_replicate takes a single weight vector")
    return float((w @ data.centered).max() / sqrt(data.n))


def _block_rows(n: int, d: int) -> int:
    return max(1, _BLOCK_ELEMS // max(n, d))


def wild_replicates(data: DataSet, law: WeightLaw, b: int, gen: np.random.Generator) -> np.ndarray:
    """b wild replicates, in draw order."""
    n, d = data.n, data.d
    out = np.empty(b)
    step = _block_rows(n, d)
    for start in range(0, b, step):
        m = min(step, b - start)
        w = sample_weights(law, gen, (m, n))
        out[start : start + m] = (w @ data.centered).max(axis=1)
    out /= sqrt(n)
    return out


def _multinomial_counts(n: int, m: int, gen: np.random.Generator) -> np.ndarray:
    idx = gen.integers(0, n, size=(m, n))
    idx += np.arange(m)[:, None] * n
    return np.bincount(idx.ravel(), minlength=m * n).reshape(m, n).astype(np.float64)


def empirical_replicates(data: DataSet, b: int, gen: np.random.Generator) -> np.ndarray:
    """b empirical-bootstrap replicates, centered at Xbar."""
    n, d = data.n, data.d
    out = np.empty(b)
    step = _block_rows(n, d)
    for start in range(0, b, step):
        m = min(step, b - start)
        out[start : start + m] = (_multinomial_counts(n, m, gen) @ data.centered).max(axis=1)
    out /= sqrt(n)
    return out


def empirical_replicate(data: DataSet, gen: np.random.Generator) -> float:
    return float(empirical_replicates(data, 1, gen)[0])


def bootstrap_quantile(reps: ReplicateSet, p) -> float | np.ndarray:
    """k-th order statistic with k = ceil(p (b + 1)) clamped to [1, b]."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValidationError("quantile level must lie in (0, 1)")
    k = np.ceil(p * (reps.b + 1) - _QUANTILE_SLACK).astype(np.int64)
    k = np.clip(k, 1, reps.b)
    out = reps.values[k - 1]
    return out if out.ndim else float(out)


def first_level_pvalue(t_n: float, reps: ReplicateSet) -> float:
    """(#{T* >= t_n} + 1) / (b + 1)."""
    return float((reps.count_at_least(t_n) + 1) / (reps.b + 1))


@dataclass(frozen=True)
class WildTestResult:
    reject: bool
    c_hat: float
    t_n: float


def wild_test(
    data: DataSet, law: WeightLaw, b: int, alpha: float, stream: StreamKey, sub: tuple[int, ...] = ()
) -> WildTestResult:
    """Reject when T_n >= c_hat_{1-alpha}; ``sub`` selects a nested substream."""
    if b < 1:
        raise ValidationError("b must be at least 1")
    reps = ReplicateSet(wild_replicates(data, law, b, stream.generator(*sub)))
    c = bootstrap_quantile(reps, 1.0 - alpha)
    t = t_stat(data)
    return WildTestResult(bool(t >= c), c, t)


@dataclass(frozen=True)
class DoubleTestResult:
    reject: bool
    prepivot_pvalue: float
    pvalue: float
    t_n: float


def _second_level_pvalues(
    data: DataSet,
    w: np.ndarray,
    t_star: np.ndarray,
    v_law: WeightLaw,
    b2: int,
    level2: StreamKey,
    sub: tuple[int, ...],
) -> np.ndarray:
    # With Y_b = w_b * Xc - mean(w_b * Xc), sum_i v_i Y_bi = (v * w_b) @ Xc - sum(v) (w_b @ Xc)/n,
    # so every second-level block is one GEMM against the shared centered data.
    n = data.n
    xc = data.centered
    b1 = w.shape[0]
    out = np.empty(b1)
    step = max(1, _block_rows(n, data.d) // b2)
    for start in range(0, b1, step):
        stop = min(b1, start + step)
        m = stop - start
        v = np.empty((m, b2, n))
        for k, bi in enumerate(range(start, stop)):
            v[k] = sample_weights(v_law, level2.generator(*sub, bi), (b2, n))
        vw = v * w[start:stop, None, :]
        s = (vw.reshape(m * b2, n) @ xc).reshape(m, b2, -1)
        s -= v.sum(axis=2)[:, :, None] * ((w[start:stop] @ xc) / n)[:, None, :]
        tss = s.max(axis=2) / sqrt(n)
        out[start:stop] = ((tss >= t_star[start:stop, None]).sum(axis=1) + 1) / (b2 + 1)
    return out


def double_wild_test(
    data: DataSet,
    w_law: WeightLaw,
    v_law: WeightLaw,
    b1: int,
    b2: int,
    alpha: float,
    stream: StreamKey,
    sub: tuple[int, ...] = (),
) -> DoubleTestResult:
    """Prepivoted double wild bootstrap test.

    Second-level weights for first-level replicate b come from the
    substream (seed, trial, LEVEL2, *sub, b), independent of how the
    first level is scheduled.
    """
    if b1 < 1 or b2 < 1:
        raise ValidationError("b1 and b2 must be at least 1")
    n = data.n
    gen = stream.generator(*sub)
    w = sample_weights(w_law, gen, (b1, n))
    t_star = (w @ data.centered).max(axis=1) / sqrt(n)
    t_n = t_stat(data)
    p_hat = first_level_pvalue(t_n, ReplicateSet(t_star))
    level2 = StreamKey(stream.seed, stream.trial, Purpose.LEVEL2)
    p_star = _second_level_pvalues(data, w, t_star, v_law, b2, level2, sub)
    prepivot = float((np.count_nonzero(p_star <= p_hat) + 1) / (b1 + 1))
    return DoubleTestResult(bool(prepivot <= alpha), prepivot, p_hat, t_n)
