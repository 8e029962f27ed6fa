"""Source-condition targets and the spectral quantities that drive KRR rates.

A target is zonal: f*(x) = sum_k beta_k sqrt(N(d,k)) P_k(<x, x0>), each
summand having unit L2 norm.  With eigenvalues mu_k of multiplicity
N(d,k) and lambda > 0, the quantities are

    n1 = sum_k N(d,k) mu_k / (mu_k + lambda)
    n2 = sum_k N(d,k) (mu_k / (mu_k + lambda))^2
    m2 = sum_k (lambda / (mu_k + lambda))^2 beta_k^2
    q1 = sum_k lambda^2 / (mu_k (mu_k + lambda)) beta_k^2
    q2 = Phi(1)^2 sum_k mu_k / (mu_k + lambda)^2 beta_k^2

and m1 is the sup norm of the zonal residual sum_k lambda/(mu_k+lambda) beta_k sqrt(N) P_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel_spec import KernelSpec
from .spectrum import Spectrum, TruncationPolicy, build_spectrum, legendre_table

M1_GRID_SIZE = 4001
DEFAULT_THRESHOLD = 0.2
DEFAULT_EPS = 0.05
GENERAL = "general"
SUB_ONE = "sub_one"


class InfeasibleTargetError(ValueError):
    pass


def _chebyshev_grid(m: int = M1_GRID_SIZE) -> np.ndarray:
    return np.cos(np.pi * np.arange(m) / (m - 1))


@dataclass(frozen=True, eq=False)
class ZonalTarget:
    s: float
    gamma: float
    c0: float
    pole: np.ndarray
    beta: np.ndarray
    q: int
    level_mass: np.ndarray
    hs_norm: float

    @property
    def l2_norm_sq(self) -> float:
        return float(np.sum(self.beta ** 2))

    @property
    def active_levels(self) -> list[int]:
        return [k for k, b in enumerate(self.beta) if b > 0]


def default_pole(d: int) -> np.ndarray:
    x0 = np.zeros(d + 1)
    x0[0] = 1.0
    return x0


def build_target(sp: Spectrum, s: float, gamma: float, c0: float = 1.0, r_cap: float = 10.0,
                 pole: np.ndarray | None = None, extend: bool = False) -> ZonalTarget:
    """Saturated source-condition target on levels 0..q.

    q is the smallest integer above ``gamma`` with mu_q != 0. Each level with
    mu_k > 0 gets beta_k = sqrt(c0 mu_k^s), i.e. level mass mu_k^{-s}
    beta_k^2 = c0 exactly; levels with mu_k = 0 carry nothing. With
    ``extend`` the saturation also covers level q+1.

    Raises
    ------
    InfeasibleTargetError
        If the summed level masses exceed ``r_cap**2``.
    ValueError
        If the spectrum is truncated below the needed degree.
    """
    if s <= 0 or gamma <= 0:
        raise ValueError("s and gamma must be positive")
    if c0 < 0 or r_cap <= 0:
        raise ValueError("c0 must be >= 0 and r_cap > 0")
    q = math.floor(gamma) + 1
    while q <= sp.K and sp.mu[q] == 0:
        q += 1
    top = q + 1 if extend else q
    if top > sp.K:
        raise ValueError(f"spectrum truncated at K={sp.K} but target needs degree {top}")
    if pole is None:
        pole = default_pole(sp.d)
    pole = np.asarray(pole, dtype=float)
    if pole.shape != (sp.d + 1,) or abs(np.linalg.norm(pole) - 1) > 1e-10:
        raise ValueError(f"pole must be a unit vector in R^{sp.d + 1}")

    mu = sp.mu[: top + 1]
    active = mu > 0
    if c0 * active.sum() > r_cap ** 2:
        raise InfeasibleTargetError(
            f"{active.sum()} levels of mass {c0} exceed norm cap {r_cap}^2"
        )
    beta = np.zeros(top + 1)
    beta[active] = np.sqrt(c0 * mu[active] ** s)
    level_mass = np.zeros(top + 1)
    level_mass[active] = mu[active] ** (-s) * beta[active] ** 2
    hs_norm = float(np.sqrt(level_mass.sum()))
    return ZonalTarget(s=float(s), gamma=float(gamma), c0=float(c0), pole=pole, beta=beta,
                       q=q, level_mass=level_mass, hs_norm=hs_norm)


def target_from_beta(sp: Spectrum, beta: Sequence[float], s: float = 1.0,
                     pole: np.ndarray | None = None) -> ZonalTarget:
    """Zonal target with explicit level coefficients (no saturation rule).

    Levels with mu_k = 0 must carry beta_k = 0 (the [H]^s norm would be infinite).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size == 0 or np.any(beta < 0):
        raise ValueError("beta must be a nonempty list of nonnegative numbers")
    if beta.size > sp.K + 1:
        raise ValueError("beta uses degrees beyond the spectrum truncation")
    mu = sp.mu[: beta.size]
    if np.any((mu == 0) & (beta > 0)):
        raise ValueError("beta_k > 0 on a level with mu_k = 0")
    pole = default_pole(sp.d) if pole is None else np.asarray(pole, dtype=float)
    level_mass = np.zeros_like(beta)
    pos = mu > 0
    level_mass[pos] = mu[pos] ** (-s) * beta[pos] ** 2
    nz = np.nonzero(beta)[0]
    return ZonalTarget(s=float(s), gamma=math.nan, c0=math.nan, pole=pole, beta=beta,
                       q=int(nz[-1]) if nz.size else 0, level_mass=level_mass,
                       hs_norm=float(np.sqrt(level_mass.sum())))


def zonal_sum(d: int, coef: np.ndarray, t) -> np.ndarray:
    """sum_k coef_k P_k(t) for degrees 0..len(coef)-1."""
    coef = np.asarray(coef, dtype=float)
    if coef.size == 0:
        return np.zeros(np.shape(t))
    return np.tensordot(coef, legendre_table(d, coef.size - 1, t), axes=(0, 0))


def eval_target(tg: ZonalTarget, sp: Spectrum, x: np.ndarray):
    """f*(x) for one point (shape ``(d+1,)``) or a batch (shape ``(m, d+1)``)."""
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1) > 1e-10):
        raise ValueError("points must lie on the unit sphere")
    t = np.clip(x @ tg.pole, -1.0, 1.0)
    coef = tg.beta * np.sqrt(sp.mult[: tg.beta.size])
    out = zonal_sum(sp.d, coef, t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KeyQuantities:
    lam: float
    n1: float
    n2: float
    m2: float
    q1: float
    q2: float
    m1_zonal: float
    d: int = 0

    CSV_FIELDS = ("d", "lambda", "n1", "n2", "m2", "q1", "q2", "m1_zonal")

    def csv_row(self) -> dict:
        return {"d": self.d, "lambda": self.lam, "n1": self.n1, "n2": self.n2, "m2": self.m2,
                "q1": self.q1, "q2": self.q2, "m1_zonal": self.m1_zonal}


def _target_levels(sp: Spectrum, tg: ZonalTarget) -> tuple[np.ndarray, np.ndarray]:
    if tg.beta.size > sp.K + 1:
        raise ValueError("target uses degrees beyond the spectrum truncation")
    return sp.mu[: tg.beta.size], tg.beta


def m1_zonal(sp: Spectrum, tg: ZonalTarget, lam: float, grid: np.ndarray | None = None) -> float:
    """Grid sup over t in [-1, 1] of |sum_k lambda/(mu_k+lambda) beta_k sqrt(N) P_k(t)|."""
    mu, beta = _target_levels(sp, tg)
    coef = lam / (mu + lam) * beta * np.sqrt(sp.mult[: beta.size])
    if not np.any(coef):
        return 0.0
    grid = _chebyshev_grid() if grid is None else grid
    return float(np.max(np.abs(zonal_sum(sp.d, coef, grid))))


def f_lambda_sup(sp: Spectrum, tg: ZonalTarget, lam: float, grid: np.ndarray | None = None) -> float:
    """Grid sup of |f_lambda| with f_lambda = sum_k mu_k/(mu_k+lambda) beta_k sqrt(N) P_k."""
    mu, beta = _target_levels(sp, tg)
    coef = mu / (mu + lam) * beta * np.sqrt(sp.mult[: beta.size])
    if not np.any(coef):
        return 0.0
    grid = _chebyshev_grid() if grid is None else grid
    return float(np.max(np.abs(zonal_sum(sp.d, coef, grid))))


def key_quantities(sp: Spectrum, tg: ZonalTarget, lam: float) -> KeyQuantities:
    """Evaluate n1, n2, m2, q1, q2 and the zonal m1 surrogate at ``lam``.

    Sums run over the truncated spectrum; the dropped tail adds at most
    ``sp.tail_mass / lam`` to n1 and n2.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    ratio = sp.mu / (sp.mu + lam)
    n1 = float(np.dot(sp.mult, ratio))
    n2 = float(np.dot(sp.mult, ratio ** 2))
    mu, beta = _target_levels(sp, tg)
    b2 = beta ** 2
    m2 = float(np.sum((lam / (mu + lam)) ** 2 * b2))
    pos = mu > 0
    q1 = float(np.sum(lam ** 2 / (mu[pos] * (mu[pos] + lam)) * b2[pos]))
    q2 = float(sp.phi_one ** 2 * np.sum(mu / (mu + lam) ** 2 * b2))
    return KeyQuantities(lam=float(lam), n1=n1, n2=n2, m2=m2, q1=q1, q2=q2,
                         m1_zonal=m1_zonal(sp, tg, lam), d=sp.d)


@dataclass
class ConditionReport:
    regime: str
    threshold: float
    ratios: dict[str, float]
    passes: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if not self.passes:
            self.passes = {k: bool(v < self.threshold) for k, v in self.ratios.items()}

    @property
    def all_pass(self) -> bool:
        return all(self.passes.values())


def _safe_ratio(num: float, den: float) -> float:
    if num == 0:
        return 0.0
    return num / den if den > 0 else math.inf


def check_approximation_conditions(sp: Spectrum, tg: ZonalTarget, lam: float, n: int,
                                   regime: str | None = None, threshold: float = DEFAULT_THRESHOLD,
                                   eps: float = DEFAULT_EPS) -> ConditionReport:
    """Finite-n sizes of the ratios that must be o(1) for the rate formulas to apply.

    ``general``: N1 ln n / n, N1^2 ln n / (n N2), N1^{1/2} M1 / (n M2^{1/2}).
    ``sub_one`` (for s < 1) replaces M1 by sup|f_lambda| and adds
    N1^{1/2} n^{(1-s)/2 + eps} / (n M2^{1/2}). The default regime follows s.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if regime is None:
        regime = SUB_ONE if tg.s < 1 else GENERAL
    if regime not in (GENERAL, SUB_ONE):
        raise ValueError(f"unknown regime {regime!r}")
    kq = key_quantities(sp, tg, lam)
    log_n = math.log(n)
    sqrt_m2 = math.sqrt(kq.m2)
    ratios = {
        "n1_log_n_over_n": kq.n1 * log_n / n,
        "n1_sq_log_n_over_n_n2": kq.n1 ** 2 * log_n / (n * kq.n2),
    }
    if regime == GENERAL:
        ratios["m1_over_sqrt_m2"] = _safe_ratio(math.sqrt(kq.n1) * kq.m1_zonal / n, sqrt_m2)
    else:
        ratios["f_lambda_over_sqrt_m2"] = _safe_ratio(
            math.sqrt(kq.n1) * f_lambda_sup(sp, tg, lam) / n, sqrt_m2)
        ratios["n_power_over_sqrt_m2"] = _safe_ratio(
            math.sqrt(kq.n1) * n ** ((1 - tg.s) / 2 + eps) / n, sqrt_m2)
    return ConditionReport(regime=regime, threshold=threshold, ratios=ratios)


def quantity_exponents(s: float, l: float, p: int) -> dict[str, float | None]:
    """Predicted log-d slopes of the quantities at lambda = d^{-l}, p <= l <= p+1.

    ``q1`` is only predicted for s >= 1; ``q2`` is exact-order for the
    saturated finite-level target (level 0 dominates once s >= 1).
    """
    if not p <= l <= p + 1:
        raise ValueError("need p <= l <= p+1")
    st = min(s, 2.0)
    out: dict[str, float | None] = {
        "n1": l,
        "n2": max(p, 2 * l - (p + 1)),
        "m2": max(-2 * l + (2 - st) * p, -(p + 1) * st),
        "q1": max(-2 * l + (2 - st) * p, -l - (st - 1) * (p + 1)) if s >= 1 else None,
        "q2": max((1 - s) * p if s < 1 else 0.0, 2 * l - (p + 1) * (1 + s)),
    }
    return out


@dataclass
class QuantityProbe:
    s: float
    l: float
    p: int
    d_grid: list[int]
    values: dict[str, list[float]]
    slopes: dict[str, float]
    expected: dict[str, float | None]

    def deviation(self, name: str) -> float:
        exp = self.expected[name]
        if exp is None:
            return math.nan
        return abs(self.slopes[name] - exp)


def quantity_rate_probe(spec: KernelSpec, s: float, l: float, p: int, d_grid: Sequence[int],
                        gamma: float | None = None, c0: float = 1.0,
                        policy: TruncationPolicy | None = None) -> QuantityProbe:
    """Least-squares slopes of log quantity vs log d at lambda = d^{-l}.

    The target keeps levels 0..q with q > gamma; the default gamma = p + 1.5
    activates levels up to p + 2, enough for every predicted exponent.
    """
    if len(d_grid) < 3 or list(d_grid) != sorted(set(d_grid)):
        raise ValueError("d_grid must be increasing with at least 3 entries")
    gamma = p + 1.5 if gamma is None else gamma
    names = ("n1", "n2", "m2", "q1", "q2")
    values: dict[str, list[float]] = {k: [] for k in names}
    for d in d_grid:
        sp = build_spectrum(spec, d, policy)
        tg = build_target(sp, s, gamma, c0=c0, r_cap=math.sqrt(c0 * (sp.K + 2)) + 1.0)
        kq = key_quantities(sp, tg, float(d) ** (-l))
        for k in names:
            values[k].append(getattr(kq, k))
    logd = np.log(np.asarray(d_grid, dtype=float))
    slopes = {}
    for k in names:
        v = np.asarray(values[k])
        slopes[k] = float(np.polyfit(logd, np.log(v), 1)[0]) if np.all(v > 0) else math.nan
    return QuantityProbe(s, l, p, list(d_grid), values, slopes, quantity_exponents(s, l, p))
