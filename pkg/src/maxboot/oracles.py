"""Quick self-checks exposed through ``maxboot verify``."""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from . import gaussnum
from .model import CovarianceSpec
from .rng import StreamKey, Purpose, WeightLaw, sample_weights, weight_moments, weight_raw_moment
from .stein import std_beta_kernel, stein_identity_residual


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def stein_checks(nu: float = 0.1, tol: float = 1e-8) -> list[CheckResult]:
    law = WeightLaw.std_beta(nu)
    kernel = std_beta_kernel(law)
    out = []
    for deg in range(5):
        h = np.zeros(deg + 1)
        h[-1] = 1.0
        r = stein_identity_residual(law, kernel, h)
        out.append(CheckResult(f"stein residual beta:{nu:g} x^{deg}", r <= tol, f"{r:.3e}"))
    return out


def integral_checks(tol: float = 1e-5) -> list[CheckResult]:
    out = []
    for spec in (CovarianceSpec.identity(2), CovarianceSpec.equicorrelation(2, 0.5)):
        for t in (-2.0, 0.0, 1.0, 3.0):
            for r in (1, 2, 3):
                pat = gaussnum.rect_grad_integral(spec, t, r, method="pattern").to_dense()
                den = gaussnum.rect_grad_integral(spec, t, r, method="dense").values
                err = float(np.abs(pat - den).max())
                out.append(CheckResult(f"rect integral {spec.kind} d=2 t={t:g} r={r}", err <= tol, f"{err:.3e}"))
    return out


def weight_checks(draws: int = 200_000, seed: int = 0) -> list[CheckResult]:
    out = []
    laws = [WeightLaw.gaussian(), WeightLaw.rademacher(), WeightLaw.mammen(), WeightLaw.std_beta(0.1)]
    for k, law in enumerate(laws):
        w = sample_weights(law, StreamKey(seed, k, Purpose.LEVEL1).generator(), draws)
        exact = weight_moments(law)
        for p in (1, 2, 3):
            var = weight_raw_moment(law, 2 * p) - exact[p - 1] ** 2
            se = sqrt(max(var, 0.0) / draws)
            dev = abs(float(np.mean(w**p)) - exact[p - 1])
            out.append(CheckResult(f"weight moment {law.label} m{p}", dev <= 4.0 * se + 1e-12, f"dev={dev:.3e} se={se:.3e}"))
    return out


def run_all() -> list[CheckResult]:
    return stein_checks() + integral_checks() + weight_checks()
