"""Fast built-in self checks, runnable without the test suite (``krrsphere verify``)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rate_theory as rt
from .kernel_spec import KernelSpec, series_coefficients
from .krr_sim import bias_variance, excess_risk_analytic, fit_krr, sample_sphere
from .quantities import build_target, key_quantities
from .spectrum import TruncationPolicy, build_spectrum, eigenvalue_quadrature, multiplicity


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _linear_kernel_oracle() -> str:
    lin = KernelSpec.power_series([0.0, 1.0])
    mu = [eigenvalue_quadrature(lin, 3, k) for k in range(4)]
    assert abs(mu[1] - 0.25) <= 1e-10, mu
    assert all(abs(mu[k]) <= 1e-10 for k in (0, 2, 3)), mu
    return f"mu_1 = {mu[1]:.12f}"


def _multiplicity_oracle() -> str:
    for d in range(2, 12):
        for k in range(2, 12):
            assert multiplicity(d, k) == math.comb(d + k, k) - math.comb(d + k - 2, k - 2)
    return "N(d,k) matches C(d+k,k) - C(d+k-2,k-2)"


def _trace_identity() -> str:
    e = KernelSpec.exponential()
    worst = max(abs(build_spectrum(e, d).trace() - math.e) for d in (5, 10, 20))
    assert worst <= 1e-8, worst
    return f"max |trace - e| = {worst:.2e}"


def _ntk_pattern() -> str:
    a = series_coefficients(KernelSpec.ntk_relu2(), 12)
    for j, v in enumerate(a):
        assert (v == 0) if (j >= 3 and j % 2 == 1) else (v > 0), (j, v)
    return "a_j > 0 except odd j >= 3"


def _rate_continuity() -> str:
    count = 0
    for s in np.arange(0.25, 3.01, 0.25):
        for method in (rt.KRR, rt.MINIMAX):
            for b in rt.breakpoints(s, 10.0, rt.GENERIC, method):
                thr = rt.validity_threshold(s)
                if method == rt.KRR and thr is not None and b <= thr:
                    continue
                left = rt.rate(s, b, method=method).d_exponent
                right = rt.find_segment(s, b + 1e-9, method=method).d_exponent(b)
                assert abs(left - right) <= 1e-12, (s, b, method)
                count += 1
    return f"{count} breakpoints continuous"


def _quantity_ordering() -> str:
    sp = build_spectrum(KernelSpec.exponential(), 30)
    tg = build_target(sp, 1.0, 1.5)
    for lam in np.logspace(-4, 1, 12):
        kq = key_quantities(sp, tg, lam)
        assert 0 <= kq.n2 <= kq.n1
        assert kq.m1_zonal ** 2 <= kq.q1 * kq.n1 * (1 + 1e-9)
    return "0 <= n2 <= n1 and m1^2 <= q1 n1 on 12 lambdas"


def _risk_consistency() -> str:
    sp = build_spectrum(KernelSpec.exponential(), 5)
    tg = build_target(sp, 1.0, 1.5)
    dz = sample_sphere(5, 60, 1)
    lam = 1e-2
    noiseless = excess_risk_analytic(fit_krr(sp, tg, dz, lam, 0.0), sp).value
    bv = bias_variance(sp, tg, dz, lam, 0.0)
    assert abs(noiseless - bv.bias2) <= 1e-10 * max(1.0, bv.bias2)
    return f"noise-free risk equals bias2 ({bv.bias2:.4e})"


CHECKS: list[tuple[str, Callable[[], str]]] = [
    ("linear kernel eigenvalues", _linear_kernel_oracle),
    ("multiplicity binomial identity", _multiplicity_oracle),
    ("exp trace identity", _trace_identity),
    ("ntk coefficient pattern", _ntk_pattern),
    ("rate curve continuity", _rate_continuity),
    ("key quantity ordering", _quantity_ordering),
    ("risk decomposition (noise-free)", _risk_consistency),
]


def run_checks() -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        try:
            results.append(CheckResult(name, True, fn()))
        except AssertionError as exc:
            results.append(CheckResult(name, False, f"assertion failed: {exc}"))
        except Exception as exc:  # noqa: BLE001
            results.append(CheckResult(name, False, f"{type(exc).__name__}: {exc}"))
    return results
