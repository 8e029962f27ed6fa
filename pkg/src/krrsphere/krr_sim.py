"""Kernel ridge regression on the sphere with exact (series-based) risk evaluation.

The L2 inner products between kernel sections follow from the addition
formula: for k(x, .) = sum_k mu_k N(d,k) P_k(<x, .>),

    <k(x_i, .), k(x_j, .)>_{L2} = sum_k mu_k^2 N(d,k) P_k(<x_i, x_j>) =: M_ij
    <k(x_i, .), sqrt(N(d,k)) P_k(<., x0>)>_{L2} = mu_k sqrt(N(d,k)) P_k(<x_i, x0>)

so for f_hat = sum_i alpha_i k(x_i, .) the excess risk is
alpha' M alpha - 2 alpha' h + ||f*||^2, exactly up to spectral truncation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

from .kernel_spec import KernelSpec, eval_phi
from .quantities import ZonalTarget, eval_target
from .spectrum import Spectrum

BLOCK_ROWS = 512
JITTER_REL = 1e-12
SOLVER_RTOL = 1e-9

SeedLike = int | np.random.SeedSequence | np.random.Generator | None


def make_rng(seed: SeedLike, *key: int) -> np.random.Generator:
    """Counter-based generator for the cell addressed by ``key``.

    The same (seed, key) always yields the same stream, whatever order
    cells are visited in.
    """
    if isinstance(seed, np.random.Generator):
        if key:
            raise ValueError("cannot address a cell on an existing Generator")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    else:
        ss = np.random.SeedSequence(0 if seed is None else seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True, eq=False)
class Design:
    X: np.ndarray
    gram_t: np.ndarray
    seed: object = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1] - 1


def uniform_sphere(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((m, d + 1))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def design_from_points(X: np.ndarray, seed=None) -> Design:
    X = np.asarray(X, dtype=float)
    if np.any(np.abs(np.linalg.norm(X, axis=1) - 1) > 1e-10):
        raise ValueError("design points must be unit vectors")
    G = np.clip(X @ X.T, -1.0, 1.0)
    G = 0.5 * (G + G.T)
    np.fill_diagonal(G, 1.0)
    return Design(X=X, gram_t=G, seed=seed)


def sample_sphere(d: int, n: int, seed: SeedLike = None) -> Design:
    """n i.i.d. uniform points on S^d (normalized Gaussians), deterministic in ``seed``."""
    if d < 2 or n < 1:
        raise ValueError("need d >= 2 and n >= 1")
    return design_from_points(uniform_sphere(d, n, make_rng(seed)), seed=seed)


def _profile(kernel: Spectrum | KernelSpec) -> KernelSpec:
    return kernel.kernel if isinstance(kernel, Spectrum) else kernel


def kernel_matrix(kernel: Spectrum | KernelSpec, dz: Design) -> np.ndarray:
    """K_ij = Phi(<x_i, x_j>) from the exact profile (never the truncated series)."""
    if isinstance(kernel, Spectrum) and kernel.d != dz.d:
        raise ValueError(f"spectrum is for d={kernel.d}, design for d={dz.d}")
    return eval_phi(_profile(kernel), dz.gram_t)


def _level_weights(sp: Spectrum) -> np.ndarray:
    return sp.mu ** 2 * sp.mult


def _m_block_rows(sp: Spectrum, T: np.ndarray) -> np.ndarray:
    """sum_k mu_k^2 N(d,k) P_k(T) by the three-term recurrence, elementwise on T."""
    w = _level_weights(sp)
    d = sp.d
    out = np.full(T.shape, w[0])
    if sp.K == 0:
        return out
    p_prev = np.ones_like(T)
    p_cur = T.copy()
    out += w[1] * p_cur
    for k in range(1, sp.K):
        p_next = ((2 * k + d - 1) * T * p_cur - k * p_prev) / (k + d - 1)
        out += w[k + 1] * p_next
        p_prev, p_cur = p_cur, p_next
    return out


def m_matrix(sp: Spectrum, dz: Design, block_rows: int = BLOCK_ROWS) -> np.ndarray:
    """Gram matrix of kernel sections in L2, M_ij = <k(x_i,.), k(x_j,.)>."""
    n = dz.n
    M = np.empty((n, n))
    for start in range(0, n, block_rows):
        stop = min(start + block_rows, n)
        M[start:stop] = _m_block_rows(sp, dz.gram_t[start:stop])
    return 0.5 * (M + M.T)


def m_quadratic(sp: Spectrum, dz: Design, alpha: np.ndarray, block_rows: int = BLOCK_ROWS) -> float:
    """alpha' M alpha without holding M in memory."""
    total = 0.0
    for start in range(0, dz.n, block_rows):
        stop = min(start + block_rows, dz.n)
        total += float(alpha[start:stop] @ (_m_block_rows(sp, dz.gram_t[start:stop]) @ alpha))
    return total


def zonal_cross(sp: Spectrum, dz: Design, pole: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """h_i = <k(x_i, .), g>_{L2} for the zonal g = sum_k coef_k sqrt(N) P_k(<., pole>)."""
    coef = np.asarray(coef, dtype=float)
    if coef.size - 1 > sp.K:
        raise ValueError("zonal function uses degrees beyond the spectrum truncation")
    w = sp.mu[: coef.size] * coef * np.sqrt(sp.mult[: coef.size])
    t = np.clip(dz.X @ pole, -1.0, 1.0)
    from .quantities import zonal_sum

    return zonal_sum(sp.d, w, t)


def truncation_bound(sp: Spectrum, alpha: np.ndarray) -> float:
    """Bound on the risk error from dropping degrees > K in alpha' M alpha.

    Each dropped term is mu_k^2 N(d,k) |P_k| <= mu_k * (mu_k N(d,k)) with both
    factors at most tail_mass.
    """
    tail = sp.tail_mass
    return tail * max(1.0, tail) * float(np.sum(np.abs(alpha))) ** 2


@dataclass(eq=False)
class KrrFit:
    alpha: np.ndarray
    lam: float
    design: Design
    target: ZonalTarget | None
    y: np.ndarray
    kernel: KernelSpec
    jitter: float = 0.0
    rel_residual: float = 0.0

    def predict(self, Z: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """f_hat(z) = sum_i alpha_i Phi(<z, x_i>) for rows of Z."""
        Z = np.atleast_2d(Z)
        out = np.empty(Z.shape[0])
        for start in range(0, Z.shape[0], chunk):
            T = np.clip(Z[start:start + chunk] @ self.design.X.T, -1.0, 1.0)
            out[start:start + chunk] = eval_phi(self.kernel, T) @ self.alpha
        return out


class _SpdSolver:
    """Cholesky of K + n*lam*I with one refinement step and a last-resort jitter."""

    def __init__(self, K: np.ndarray, lam: float):
        if not lam > 0:
            raise ValueError("lambda must be positive")
        n = K.shape[0]
        self.A = K + n * lam * np.eye(n)
        self.jitter = 0.0
        try:
            self.factor = cho_factor(self.A, lower=True, check_finite=False)
        except LinAlgError:
            self.jitter = JITTER_REL * float(np.max(np.diag(K)))
            warnings.warn(f"Cholesky failed; adding jitter {self.jitter:.1e}", RuntimeWarning)
            self.A = self.A + self.jitter * np.eye(n)
            self.factor = cho_factor(self.A, lower=True, check_finite=False)

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, float]:
        x = cho_solve(self.factor, b, check_finite=False)
        r = b - self.A @ x
        x = x + cho_solve(self.factor, r, check_finite=False)
        denom = np.linalg.norm(b)
        res = float(np.linalg.norm(b - self.A @ x) / denom) if denom > 0 else 0.0
        if res > SOLVER_RTOL:
            raise LinAlgError(f"relative residual {res:.2e} above {SOLVER_RTOL:g}")
        return x, res

    def inverse(self) -> np.ndarray:
        return cho_solve(self.factor, np.eye(self.A.shape[0]), check_finite=False)


def target_values(tg: ZonalTarget | None, sp: Spectrum, dz: Design) -> np.ndarray:
    if tg is None:
        return np.zeros(dz.n)
    return np.atleast_1d(eval_target(tg, sp, dz.X))


def fit_krr(sp: Spectrum, tg: ZonalTarget | None, dz: Design, lam: float,
            noise_sigma: float = 1.0, seed: SeedLike = None,
            noise: np.ndarray | None = None) -> KrrFit:
    """Solve (K + n lam I) alpha = y with y = f*(X) + sigma * g, g standard normal.

    ``noise`` overrides the standard-normal draw (useful for common random numbers).
    """
    f = target_values(tg, sp, dz)
    if noise is None:
        noise = make_rng(seed).standard_normal(dz.n) if noise_sigma > 0 else np.zeros(dz.n)
    y = f + noise_sigma * np.asarray(noise, dtype=float)
    solver = _SpdSolver(kernel_matrix(sp, dz), lam)
    alpha, res = solver.solve(y)
    return KrrFit(alpha=alpha, lam=float(lam), design=dz, target=tg, y=y, kernel=sp.kernel,
                  jitter=solver.jitter, rel_residual=res)


def _target_cross(sp: Spectrum, tg: ZonalTarget | None, dz: Design) -> tuple[np.ndarray, float]:
    if tg is None:
        return np.zeros(dz.n), 0.0
    return zonal_cross(sp, dz, tg.pole, tg.beta), tg.l2_norm_sq


@dataclass(frozen=True)
class AnalyticRisk:
    value: float
    trunc_bound: float


def excess_risk_analytic(fit: KrrFit, sp: Spectrum, tg: ZonalTarget | None = None) -> AnalyticRisk:
    """||f_hat - f*||^2_{L2} from the Mercer series, with its truncation bound."""
    tg = fit.target if tg is None else tg
    h, f_norm2 = _target_cross(sp, tg, fit.design)
    value = m_quadratic(sp, fit.design, fit.alpha) - 2 * float(fit.alpha @ h) + f_norm2
    value = max(value, 0.0)
    bound = truncation_bound(sp, fit.alpha)
    if value > 0 and bound > 0.01 * value:
        warnings.warn(f"truncation bound {bound:.2e} exceeds 1% of risk {value:.2e}", RuntimeWarning)
    return AnalyticRisk(value, bound)


def excess_risk_montecarlo(fit: KrrFit, sp: Spectrum, tg: ZonalTarget | None = None,
                           m_test: int = 100_000, seed: SeedLike = None,
                           chunk: int = 8192) -> tuple[float, float]:
    """Mean and standard error of (f_hat(z) - f*(z))^2 over fresh uniform z."""
    if m_test < 100:
        raise ValueError("m_test must be >= 100")
    tg = fit.target if tg is None else tg
    rng = make_rng(seed)
    sq = np.empty(m_test)
    for start in range(0, m_test, chunk):
        m = min(chunk, m_test - start)
        Z = uniform_sphere(sp.d, m, rng)
        fz = np.atleast_1d(eval_target(tg, sp, Z)) if tg is not None else 0.0
        sq[start:start + m] = (fit.predict(Z) - fz) ** 2
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(m_test))


@dataclass(frozen=True)
class RiskReport:
    excess_risk: float
    bias2: float
    variance: float
    trunc_bound: float
    n_noise_draws: int = 0
    jitter: float = 0.0


def _variance_from_inverse(sp: Spectrum, dz: Design, A_inv: np.ndarray, sigma: float) -> float:
    if sigma == 0:
        return 0.0
    A2 = A_inv @ A_inv
    total = 0.0
    for start in range(0, dz.n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, dz.n)
        total += float(np.sum(_m_block_rows(sp, dz.gram_t[start:stop]) * A2[start:stop]))
    return sigma ** 2 * total


def bias_variance(sp: Spectrum, tg: ZonalTarget | None, dz: Design, lam: float,
                  noise_sigma: float = 1.0) -> RiskReport:
    """Fixed-design decomposition E[||f_hat - f*||^2 | X] = bias2 + variance.

    bias2 uses the noise-free fit alpha = (K + n lam)^{-1} f*(X);
    variance = sigma^2 tr(A M A) with A = (K + n lam)^{-1}.
    """
    solver = _SpdSolver(kernel_matrix(sp, dz), lam)
    f = target_values(tg, sp, dz)
    h, f_norm2 = _target_cross(sp, tg, dz)
    if np.any(f):
        alpha_f, _ = solver.solve(f)
    else:
        alpha_f = np.zeros(dz.n)
    bias2 = max(m_quadratic(sp, dz, alpha_f) - 2 * float(alpha_f @ h) + f_norm2, 0.0)
    A_inv = solver.inverse()
    var = _variance_from_inverse(sp, dz, A_inv, noise_sigma)
    # truncation bound for the expected risk: alpha_f plus the noise part in L1 (rms)
    noise_l1 = noise_sigma * float(np.sum(np.sqrt(np.sum(A_inv ** 2, axis=1))))
    bound = sp.tail_mass * max(1.0, sp.tail_mass) * (float(np.sum(np.abs(alpha_f))) + noise_l1) ** 2
    return RiskReport(excess_risk=bias2 + var, bias2=bias2, variance=var,
                      trunc_bound=bound, n_noise_draws=0, jitter=solver.jitter)


def variance_only(sp: Spectrum, dz: Design, lam: float, noise_sigma: float = 1.0) -> float:
    solver = _SpdSolver(kernel_matrix(sp, dz), lam)
    return _variance_from_inverse(sp, dz, solver.inverse(), noise_sigma)


@dataclass
class MonotonicityReport:
    lambdas: list[float]
    variances: list[float]
    violations: list[int] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations


def variance_monotonicity_check(sp: Spectrum, dz: Design, lambda_list: Sequence[float],
                                noise_sigma: float = 1.0, rel_slack: float = 1e-12) -> MonotonicityReport:
    """Var(lambda) on one design must be nonincreasing in lambda."""
    lams = [float(v) for v in lambda_list]
    if len(lams) < 2 or lams != sorted(lams):
        raise ValueError("lambda_list must be ascending with at least 2 entries")
    K = kernel_matrix(sp, dz)
    M = m_matrix(sp, dz)
    variances = []
    for lam in lams:
        A_inv = _SpdSolver(K, lam).inverse()
        variances.append(noise_sigma ** 2 * float(np.sum(M * (A_inv @ A_inv))))
    bad = [i for i in range(1, len(lams))
           if variances[i] > variances[i - 1] * (1 + rel_slack) + 1e-300]
    return MonotonicityReport(lams, variances, bad)


class SpectralRiskEvaluator:
    """Risk at many lambdas on one design from a single eigendecomposition of K.

    With K = U diag(w) U', every quantity is a diagonal filter 1/(w + n lam)
    in the eigenbasis, so each extra lambda costs O(n^2).
    """

    def __init__(self, sp: Spectrum, tg: ZonalTarget | None, dz: Design):
        self.sp, self.tg, self.dz = sp, tg, dz
        w, U = eigh(kernel_matrix(sp, dz), check_finite=False)
        self.w = np.maximum(w, 0.0)
        self.U = U
        M = m_matrix(sp, dz)
        self.Mt = U.T @ M @ U
        del M
        h, self.f_norm2 = _target_cross(sp, tg, dz)
        self.ht = U.T @ h
        self.ft = U.T @ target_values(tg, sp, dz)

    @property
    def n(self) -> int:
        return self.dz.n

    def _filter(self, lam: float) -> np.ndarray:
        if not lam > 0:
            raise ValueError("lambda must be positive")
        return 1.0 / (self.w + self.n * lam)

    def _risk_coef(self, c: np.ndarray) -> float:
        return float(c @ self.Mt @ c - 2 * c @ self.ht + self.f_norm2)

    def alpha(self, lam: float, y: np.ndarray) -> np.ndarray:
        return self.U @ (self._filter(lam) * (self.U.T @ y))

    def bias2(self, lam: float) -> float:
        return max(self._risk_coef(self._filter(lam) * self.ft), 0.0)

    def variance(self, lam: float, noise_sigma: float = 1.0) -> float:
        g = self._filter(lam)
        return noise_sigma ** 2 * float(np.dot(np.diag(self.Mt), g ** 2))

    def risk(self, lam: float, y: np.ndarray) -> float:
        return max(self._risk_coef(self._filter(lam) * (self.U.T @ y)), 0.0)

    def report(self, lam: float, noise: np.ndarray | None, noise_sigma: float = 1.0) -> RiskReport:
        """Risk of the fit on y = f*(X) + sigma*noise, plus the fixed-design decomposition."""
        y = self.U @ self.ft
        if noise is not None and noise_sigma > 0:
            y = y + noise_sigma * noise
        g = self._filter(lam)
        alpha = self.U @ (g * (self.U.T @ y))
        return RiskReport(
            excess_risk=max(self._risk_coef(g * (self.U.T @ y)), 0.0),
            bias2=self.bias2(lam),
            variance=self.variance(lam, noise_sigma),
            trunc_bound=truncation_bound(self.sp, alpha),
            n_noise_draws=1 if noise is not None and noise_sigma > 0 else 0,
        )


def population_gap(sp: Spectrum, tg: ZonalTarget, dz: Design, lam: float) -> float:
    """||f_tilde_lambda - f_lambda||^2 with f_lambda's level coefficients mu/(mu+lam)*beta."""
    solver = _SpdSolver(kernel_matrix(sp, dz), lam)
    alpha_f, _ = solver.solve(target_values(tg, sp, dz))
    mu = sp.mu[: tg.beta.size]
    c = mu / (mu + lam) * tg.beta
    h = zonal_cross(sp, dz, tg.pole, c)
    return max(m_quadratic(sp, dz, alpha_f) - 2 * float(alpha_f @ h) + float(np.sum(c ** 2)), 0.0)
