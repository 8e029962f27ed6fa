"""Mercer eigen-structure of inner-product kernels on the sphere S^d.

The kernel k(x, y) = Phi(<x, y>) on S^d (a subset of R^{d+1}) has
eigenvalue mu_k on the degree-k spherical harmonics, with multiplicity
N(d, k).  Everything here is zonal: only Gegenbauer polynomials P_k
normalized to P_k(1) = 1 and addition-formula kernels N(d, k) P_k(t) are
ever materialized.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from .kernel_spec import KernelSpec, _ntk_coefficients, eval_phi, parse_profile

EXACT_INT_LIMIT = 2**62
DEFAULT_K_CAP = 200
MAX_QUAD_ORDER = 4096


class QuadratureAccuracyError(RuntimeError):
    pass


class TruncationError(RuntimeError):
    pass


def multiplicity(d: int, k: int) -> int:
    """Dimension N(d, k) of degree-k spherical harmonics on S^d (exact integer)."""
    if d < 2 or k < 0:
        raise ValueError("need d >= 2 and k >= 0")
    if k == 0:
        return 1
    # (2k+d-1)/k * (k+d-2)!/((d-1)!(k-1)!) = (2k+d-1) * C(k+d-2, k-1) / k
    return (2 * k + d - 1) * math.comb(k + d - 2, k - 1) // k


def log_multiplicity(d: int, k: int) -> float:
    if k == 0:
        return 0.0
    return (math.log(2 * k + d - 1) - math.log(k) + gammaln(k + d - 1)
            - gammaln(d) - gammaln(k))


def multiplicity_float(d: int, k: int) -> float:
    """N(d, k) as a float; switches to log-space above 2^62."""
    if math.lgamma(k + d) - math.lgamma(d) - math.lgamma(k + 1) < 40:
        n = multiplicity(d, k)
        if n < EXACT_INT_LIMIT:
            return float(n)
    return math.exp(log_multiplicity(d, k))


def legendre_table(d: int, k_max: int, t) -> np.ndarray:
    """P_0..P_{k_max} at ``t``; shape ``(k_max + 1,) + t.shape``.

    Three-term recurrence for Gegenbauer polynomials of index (d-1)/2,
    normalized so that P_k(1) = 1.
    """
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1 + 1e-12):
        raise ValueError("t must lie in [-1, 1]")
    t = np.clip(t, -1.0, 1.0)
    out = np.empty((k_max + 1,) + t.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = t
    for k in range(1, k_max):
        out[k + 1] = ((2 * k + d - 1) * t * out[k] - k * out[k - 1]) / (k + d - 1)
    return out


def legendre_eval(d: int, k: int, t):
    """Degree-k Gegenbauer polynomial in dimension d+1 with P_k(1) = 1."""
    if k < 0:
        raise ValueError("k must be >= 0")
    val = legendre_table(d, k, t)[k]
    return float(val) if val.ndim == 0 else val


def surface_area_ratio(d: int) -> float:
    """omega_{d-1} / omega_d, where omega_d is the area of S^d."""
    return math.exp(gammaln((d + 1) / 2) - gammaln(d / 2) - 0.5 * math.log(math.pi))


def gauss_gegenbauer(d: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for the weight (omega_{d-1}/omega_d) (1-t^2)^{(d-2)/2}.

    Golub-Welsch on the symmetric Jacobi matrix. The weight is a probability
    density on [-1, 1] (the law of <x, e> for uniform x on S^d), so the
    weights are the squared first components of the eigenvectors.
    """
    a = (d - 2) / 2
    k = np.arange(1, order, dtype=float)
    off = np.sqrt(k * (k + 2 * a) / ((2 * k + 2 * a + 1) * (2 * k + 2 * a - 1)))
    nodes, vecs = eigh_tridiagonal(np.zeros(order), off)
    weights = vecs[0] ** 2
    return nodes, weights / weights.sum()


@lru_cache(maxsize=32)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def gauss_angular(d: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Same measure as :func:`gauss_gegenbauer`, in the angle theta = arccos t.

    Gauss-Legendre on [0, pi] against sin^{d-1}(theta). Used for profiles
    with algebraic endpoint singularities in t that are smooth in theta
    (the arc-cosine NTK), where a rule in t converges only algebraically.
    """
    x, w = _leggauss(order)
    theta = 0.5 * np.pi * (x + 1)
    logs = (d - 1) * np.log(np.maximum(np.sin(theta), 1e-300))
    weights = w * np.exp(logs - logs.max())
    return np.cos(theta), weights / weights.sum()


def _quadrature_mu(spec: KernelSpec, d: int, k: int, order: int) -> float:
    if spec.is_polynomial:
        nodes, weights = gauss_gegenbauer(d, order)
    else:
        nodes, weights = gauss_angular(d, order)
    return float(np.dot(weights, eval_phi(spec, nodes) * legendre_table(d, k, nodes)[k]))


def _quadrature_floor(spec: KernelSpec, d: int, k: int) -> float:
    # roundoff of sum_i w_i Phi(t_i) P_k(t_i) with |P_k| oscillating at size ~ N(d,k)^{-1/2}
    return 64 * np.finfo(float).eps * spec.sup_bound / math.sqrt(multiplicity_float(d, k))


def eigenvalue_quadrature(spec: KernelSpec, d: int, k: int, order: int | None = None) -> float:
    """mu_k by Gauss quadrature of Phi(t) P_k(t) against the sphere marginal.

    Power series use the Gauss-Jacobi rule (exact for polynomial integrands);
    the NTK uses the angular rule.

    The order is doubled until two consecutive orders agree to 1e-10
    relative, or to the roundoff floor of the sum, whichever is larger.
    Slightly negative results from roundoff are clamped to 0.
    """
    if d < 2 or k < 0:
        raise ValueError("need d >= 2 and k >= 0")
    if order is None:
        order = max(64, 2 * k + 16)
        if spec.degree is not None:
            order = max(order, (spec.degree + k) // 2 + 8)
        # powers of two let successive degrees share cached rules
        order = 1 << (order - 1).bit_length()
    floor = _quadrature_floor(spec, d, k)
    prev = _quadrature_mu(spec, d, k, order)
    while True:
        if 2 * order > MAX_QUAD_ORDER:
            raise QuadratureAccuracyError(
                f"mu_{k} (d={d}) did not converge by quadrature order {order}"
            )
        order *= 2
        cur = _quadrature_mu(spec, d, k, order)
        if abs(cur - prev) <= max(1e-10 * abs(cur), floor):
            break
        prev = cur
    if abs(cur) <= floor:
        cur = 0.0
    if cur < 0:
        if cur < -1e-12:
            warnings.warn(f"mu_{k} = {cur:.3e} < 0 clamped to 0", RuntimeWarning)
        cur = 0.0
    return cur


def _log_moment_coefficient(d: int, j: int, k: int) -> float:
    # log of int t^j P_k(t) dtau_d(t), for j >= k and j - k even (Rodrigues formula)
    m = j - k
    return (gammaln((d + 1) / 2) - 0.5 * math.log(math.pi) - k * math.log(2)
            + gammaln(j + 1) - gammaln(m + 1) + gammaln((m + 1) / 2)
            - gammaln((m + 1) / 2 + k + d / 2))


def eigenvalue_series(spec: KernelSpec, d: int, k: int) -> float:
    """mu_k for a power-series profile from its coefficients.

    mu_k = sum over j >= k, j = k mod 2, of a_j * <t^j, P_k>, every moment
    being a positive closed-form Gamma ratio; no cancellation occurs, so
    this stays accurate where quadrature loses digits (large d and k).
    """
    if spec.degree is not None:
        total = 0.0
        for j in range(k, len(spec.coefficients), 2):
            a = spec.coefficients[j]
            if a > 0:
                total += a * math.exp(_log_moment_coefficient(d, j, k))
        return total
    return _ntk_series(d, k)


def _moment_terms(d: int, k: int, j: np.ndarray) -> np.ndarray:
    m = j - k
    return np.exp(gammaln((d + 1) / 2) - 0.5 * math.log(math.pi) - k * math.log(2)
                  + gammaln(j + 1) - gammaln(m + 1) + gammaln((m + 1) / 2)
                  - gammaln((m + 1) / 2 + k + d / 2))


def _ntk_series(d: int, k: int, rtol: float = 1e-13, j_cap: int = 2**22) -> float:
    # NTK terms decay algebraically, like j^{-(d+3)/2}; sum in doubling
    # blocks [J, 2J), whose sizes shrink by a constant ratio r, and add the
    # geometric estimate r/(1-r) * block for everything beyond the cutoff
    j_max = max(64, 4 * k)
    a = _ntk_coefficients(j_max)
    j = np.arange(k, j_max + 1, 2)
    total = float(np.dot(a[j], _moment_terms(d, k, j.astype(float))))
    prev_block = None
    while True:
        new_max = 2 * j_max
        a = _ntk_coefficients(new_max)
        j = np.arange(j_max + 1 + (j_max + 1 - k) % 2, new_max + 1, 2)
        block = float(np.dot(a[j], _moment_terms(d, k, j.astype(float))))
        total += block
        j_max = new_max
        if total == 0.0 or block <= rtol * total:
            return total
        if prev_block:
            r = block / prev_block
            if r < 1:
                tail = block * r / (1 - r)
                if tail <= rtol * total or (j_max >= j_cap and tail <= 1e-9 * total):
                    return total + tail
        if j_max >= j_cap:
            raise QuadratureAccuracyError(f"NTK series for mu_{k} (d={d}) not converged")
        prev_block = block


def eigenvalue(spec: KernelSpec, d: int, k: int) -> float:
    """mu_k, choosing the accurate route.

    Power series: the positive-term closed form. NTK: quadrature, unless its
    roundoff floor is not negligible against the result (large N(d, k) or a
    vanishing eigenvalue), in which case the positive-term series built from
    the closed-form Taylor coefficients is summed instead.
    """
    if spec.degree is not None:
        return eigenvalue_series(spec, d, k)
    mu = eigenvalue_quadrature(spec, d, k)
    if _quadrature_floor(spec, d, k) <= 1e-10 * mu:
        return mu
    return _ntk_series(d, k)


@dataclass(frozen=True)
class TruncationPolicy:
    """Either a fixed truncation degree ``K`` or a relative tail tolerance."""

    K: int | None = None
    eps_tail: float = 1e-10
    k_cap: int = DEFAULT_K_CAP


@dataclass(frozen=True, eq=False)
class Spectrum:
    d: int
    mu: np.ndarray
    mult: np.ndarray
    tail_mass: float
    kernel: KernelSpec = field(repr=False)

    @property
    def K(self) -> int:
        return len(self.mu) - 1

    @property
    def profile_name(self) -> str:
        return self.kernel.name

    @property
    def phi_one(self) -> float:
        return self.kernel.sup_bound

    def trace(self) -> float:
        return float(np.dot(self.mu, self.mult))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "K": self.K,
            "mu": [float(m) for m in self.mu],
            "mult": [int(m) if m < EXACT_INT_LIMIT else float(m) for m in self.mult],
            "tail_mass": float(self.tail_mass),
            "profile_name": self.profile_name,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "Spectrum":
        return cls(
            d=int(data["d"]),
            mu=np.asarray(data["mu"], dtype=float),
            mult=np.asarray(data["mult"], dtype=float),
            tail_mass=float(data["tail_mass"]),
            kernel=parse_profile(data["profile_name"]),
        )


def build_spectrum(spec: KernelSpec, d: int, policy: TruncationPolicy | None = None) -> Spectrum:
    """Compute mu_0..mu_K and N(d,0)..N(d,K).

    With a tail tolerance, K is the first degree at which the remaining
    trace Phi(1) - sum mu_k N(d,k) drops to ``eps_tail * Phi(1)``.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    policy = policy or TruncationPolicy()
    phi1 = spec.sup_bound
    mu, mult = [], []
    running = 0.0
    k = 0
    while True:
        m = eigenvalue(spec, d, k)
        n = multiplicity_float(d, k)
        mu.append(m)
        mult.append(n)
        running += m * n
        tail = max(phi1 - running, 0.0)
        if policy.K is not None:
            if k >= policy.K:
                break
        else:
            if tail <= policy.eps_tail * phi1:
                break
            if k >= policy.k_cap:
                raise TruncationError(
                    f"tail {tail:.3e} above {policy.eps_tail:g}*Phi(1) at K={k} (d={d})"
                )
        k += 1
    return Spectrum(d=d, mu=np.array(mu), mult=np.array(mult), tail_mass=tail, kernel=spec)


def zonal_kernel(sp: Spectrum, k: int, t):
    """Addition-formula kernel Z_{k,d}(t) = N(d, k) P_k(t)."""
    if k > sp.K:
        raise ValueError(f"degree {k} beyond truncation K={sp.K}")
    return sp.mult[k] * legendre_eval(sp.d, k, t)


def mercer_series(sp: Spectrum, t, weights: np.ndarray | None = None):
    """sum_k w_k N(d,k) P_k(t) with w = mu by default; vectorized over t."""
    w = sp.mu if weights is None else np.asarray(weights, dtype=float)
    table = legendre_table(sp.d, sp.K, t)
    coef = w * sp.mult
    return np.tensordot(coef, table, axes=(0, 0))


class MercerCheck(NamedTuple):
    value: float
    abs_error: float
    bound: float


def mercer_reconstruct(sp: Spectrum, t: float, spec: KernelSpec | None = None) -> MercerCheck:
    """Truncated Mercer series at inner product ``t`` against the exact profile.

    ``bound`` is tail_mass: every dropped term satisfies |P_k(t)| <= 1.
    ``spec`` defaults to the profile the spectrum was built from.
    """
    value = float(mercer_series(sp, t))
    exact = float(eval_phi(spec or sp.kernel, t))
    return MercerCheck(value, abs(value - exact), sp.tail_mass)


@dataclass
class DecayReport:
    d_grid: list[int]
    degrees: list[int]
    slopes: list[float]
    expected: list[float]
    dominance_ratio: list[float]

    def max_deviation(self) -> float:
        return max(abs(s - e) for s, e in zip(self.slopes, self.expected))


def _loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def eigen_decay_check(spec: KernelSpec, p: int, d_grid: Sequence[int], k_extra: int = 4) -> DecayReport:
    """Log-log slopes of mu_k against d for k <= p+1, and max_{k>p} mu_k/mu_p per d."""
    if len(d_grid) < 3 or list(d_grid) != sorted(set(d_grid)):
        raise ValueError("d_grid must be increasing with at least 3 entries")
    degrees = list(range(p + 2))
    table = {d: [eigenvalue(spec, d, k) for k in range(p + 2 + k_extra)] for d in d_grid}
    slopes = []
    for k in degrees:
        vals = [table[d][k] for d in d_grid]
        if min(vals) <= 0:
            slopes.append(float("nan"))
        else:
            slopes.append(_loglog_slope(d_grid, vals))
    ratios = []
    for d in d_grid:
        mu = table[d]
        ratios.append(max(mu[p + 1:]) / mu[p] if mu[p] > 0 else float("inf"))
    return DecayReport(list(d_grid), degrees, slopes, [-float(k) for k in degrees], ratios)
