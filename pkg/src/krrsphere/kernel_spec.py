"""Inner-product kernel profiles Phi(t) on [-1, 1].

Two variants are supported: a power series with nonnegative coefficients
and the (normalized) neural tangent kernel of a two-layer ReLU network.
Profiles are named in configs as ``"poly:[a0,a1,...]"``, ``"exp"`` or
``"ntk-relu2"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

POWER_SERIES = "PowerSeries"
NTK_RELU2 = "NtkRelu2"

DOMAIN_TOL = 1e-12


class KernelDomainError(ValueError):
    """Raised when Phi is evaluated outside [-1, 1]."""


class CoefficientExtractionError(RuntimeError):
    """Raised when numerical Taylor coefficients fail to stabilize."""


@dataclass(frozen=True)
class KernelSpec:
    variant: str
    coefficients: tuple[float, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.variant not in (POWER_SERIES, NTK_RELU2):
            raise ValueError(f"unknown kernel variant {self.variant!r}")
        if self.variant == POWER_SERIES:
            if not self.coefficients:
                raise ValueError("power series needs at least one coefficient")
            a = np.asarray(self.coefficients, dtype=float)
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError("power series coefficients must be finite and >= 0")
            if a.sum() <= 0:
                raise ValueError("power series must not vanish identically")

    @classmethod
    def power_series(cls, coefficients: Sequence[float], name: str | None = None):
        coefficients = tuple(float(c) for c in coefficients)
        if name is None:
            name = "poly:" + json.dumps(list(coefficients))
        return cls(POWER_SERIES, coefficients, name)

    @classmethod
    def exponential(cls):
        # stop once a_j < 1e-16 * Phi(1); beyond double precision relevance
        coeffs = []
        j = 0
        while True:
            a = 1.0 / math.factorial(j)
            if a < 1e-16 * math.e:
                break
            coeffs.append(a)
            j += 1
        return cls(POWER_SERIES, tuple(coeffs), "exp")

    @classmethod
    def ntk_relu2(cls):
        return cls(NTK_RELU2, (), "ntk-relu2")

    @property
    def sup_bound(self) -> float:
        """kappa^2 = Phi(1) = sup_x k(x, x)."""
        return float(eval_phi(self, 1.0))

    @property
    def is_polynomial(self) -> bool:
        return self.variant == POWER_SERIES

    @property
    def degree(self) -> int | None:
        """Polynomial degree for power series, ``None`` for the NTK."""
        if self.variant != POWER_SERIES:
            return None
        return len(self.coefficients) - 1

    def strictly_positive(self) -> bool:
        """Whether every stored coefficient is > 0 (generic inner-product assumption)."""
        if self.variant != POWER_SERIES:
            return False
        return all(a > 0 for a in self.coefficients)


def parse_profile(text: str) -> KernelSpec:
    """Parse a profile name: ``"exp"``, ``"ntk-relu2"`` or ``"poly:[...]"``."""
    text = text.strip()
    if text == "exp":
        return KernelSpec.exponential()
    if text in ("ntk-relu2", "ntk"):
        return KernelSpec.ntk_relu2()
    if text.startswith("poly:"):
        try:
            coeffs = json.loads(text[len("poly:"):])
        except json.JSONDecodeError as exc:
            raise ValueError(f"cannot parse coefficient list in {text!r}") from exc
        if not isinstance(coeffs, list) or not all(isinstance(c, (int, float)) for c in coeffs):
            raise ValueError(f"coefficients must be a JSON list of numbers: {text!r}")
        return KernelSpec.power_series(coeffs, name=text)
    raise ValueError(f"unknown kernel profile {text!r}")


def _ntk_closed_form(t):
    # arc-cosine kernels of order 0 and 1; halved so that Phi(1) = 1
    theta = np.arccos(t)
    k0 = (np.pi - theta) / np.pi
    k1 = (t * (np.pi - theta) + np.sqrt(1 - t * t)) / np.pi
    return 0.5 * (t * k0 + k1)


def eval_phi(spec: KernelSpec, t):
    """Evaluate Phi(t), vectorized over ``t``.

    Raises
    ------
    KernelDomainError
        If any ``|t| > 1 + 1e-12``. Values inside the tolerance are clipped.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > 1 + DOMAIN_TOL):
        raise KernelDomainError("inner products must lie in [-1, 1]")
    t_arr = np.clip(t_arr, -1.0, 1.0)
    if spec.variant == POWER_SERIES:
        out = np.polynomial.polynomial.polyval(t_arr, np.asarray(spec.coefficients))
    else:
        out = _ntk_closed_form(t_arr)
    if np.ndim(out) == 0:
        return float(out)
    return out


def ntk_taylor_coefficients(j_max: int) -> np.ndarray:
    """Closed-form Taylor coefficients of the NTK profile, a_0..a_{j_max}.

    From arcsin(t) = sum_m c_m t^{2m+1} and sqrt(1-t^2) = 1 - sum_j b_j t^{2j}:
    a_0 = 1/(2 pi), a_1 = 1/2, a_{2j} = (2 c_{j-1} - b_j) / (2 pi), odd a_j = 0
    for j >= 3. Computed in log space, so ``j_max`` may be in the millions.
    """
    return _ntk_coefficients(int(j_max)).copy()


def _ntk_coefficients(j_max: int) -> np.ndarray:
    # read-only view into a cached table whose length is a power of two
    return _ntk_table(max(64, 1 << max(j_max, 1).bit_length()))[: j_max + 1]


@lru_cache(maxsize=32)
def _ntk_table(j_max: int) -> np.ndarray:
    from scipy.special import gammaln

    out = np.zeros(j_max + 1)
    out[0] = 1.0 / (2 * np.pi)
    if j_max >= 1:
        out[1] = 0.5
    j = np.arange(1, j_max // 2 + 1, dtype=float)
    if j.size:
        m = j - 1
        # central binomial ratios (2m)!/(4^m m!^2)
        log_cm = gammaln(2 * m + 1) - m * np.log(4) - 2 * gammaln(m + 1)
        log_bj = gammaln(2 * j + 1) - j * np.log(4) - 2 * gammaln(j + 1)
        c = np.exp(log_cm) / (2 * m + 1)
        b = np.exp(log_bj) / (2 * j - 1)
        out[2 * j.astype(int)] = (2 * c - b) / (2 * np.pi)
    out.flags.writeable = False
    return out


def _circle_coefficients(spec: KernelSpec, j_max: int, m: int, radius: float) -> np.ndarray:
    z = radius * np.exp(2j * np.pi * np.arange(m) / m)
    values = _ntk_closed_form(z.astype(complex))
    c = np.fft.fft(values) / m
    return (c[: j_max + 1] / radius ** np.arange(j_max + 1)).real


def series_coefficients(spec: KernelSpec, j_max: int, tol: float = 1e-10) -> np.ndarray:
    """Taylor coefficients a_0..a_{j_max} of Phi at 0.

    For the NTK the coefficients are extracted numerically with a
    trapezoidal Cauchy integral on the circle |z| = 0.9 (Phi is analytic in
    the open unit disk), at two resolutions. Values below the extraction
    noise floor are reported as exact zeros.
    """
    if j_max < 0:
        raise ValueError("j_max must be >= 0")
    if spec.variant == POWER_SERIES:
        out = np.zeros(j_max + 1)
        a = np.asarray(spec.coefficients[: j_max + 1])
        out[: a.size] = a
        return out

    radius = 0.9
    m = max(256, 4 * (j_max + 1))
    coarse = _circle_coefficients(spec, j_max, m, radius)
    fine = _circle_coefficients(spec, j_max, 2 * m, radius)
    if np.max(np.abs(coarse - fine)) > tol:
        raise CoefficientExtractionError(
            f"coefficients did not stabilize to {tol:g} (j_max={j_max})"
        )
    # roundoff floor of the trapezoidal sum, amplified by radius^-j
    sup_circle = float(np.max(np.abs(_ntk_closed_form(radius * np.exp(2j * np.pi * np.arange(64) / 64)))))
    floor = 64 * np.finfo(float).eps * sup_circle / radius ** np.arange(j_max + 1)
    fine[np.abs(fine) < floor] = 0.0
    return fine
