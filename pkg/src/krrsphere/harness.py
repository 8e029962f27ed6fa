"""Experiment configuration, sweeps over (d, replicate, lambda), slope fits and figure data."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import rate_theory as rt
from .kernel_spec import KernelSpec, NTK_RELU2, parse_profile
from .krr_sim import (SpectralRiskEvaluator, bias_variance, excess_risk_analytic, fit_krr,
                      make_rng, sample_sphere)
from .quantities import build_target, check_approximation_conditions
from .spectrum import Spectrum, TruncationPolicy, build_spectrum

WORKERS_ENV = "KRRSPHERE_WORKERS"
MIN_N = 10
BALANCE = "balance"
FIXED = "fixed"
SWEEP = "sweep"

RECORD_FIELDS = ("run_id", "d", "n", "gamma", "s", "lambda", "lambda_exponent", "seed",
                 "excess_risk", "bias2", "variance", "trunc_bound", "cond_pass")

FIGURE2_S = (0.01, 0.5, 1.0, 1.5, 2.0, 2.5)
FIGURE3_S = (0.5, 1.5, 2.5)


class ConfigError(ValueError):
    pass


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class LambdaPolicy:
    kind: str = BALANCE
    exponents: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (BALANCE, FIXED, SWEEP):
            raise ConfigError(f"unknown lambda policy {self.kind!r}")
        if self.kind == FIXED and len(self.exponents) != 1:
            raise ConfigError("fixed lambda policy needs exactly one exponent")
        if self.kind == SWEEP and len(self.exponents) < 1:
            raise ConfigError("sweep lambda policy needs a list of exponents")

    @classmethod
    def from_value(cls, value) -> "LambdaPolicy":
        if isinstance(value, str):
            return cls(value)
        if isinstance(value, dict):
            kind = value.get("kind", BALANCE)
            if kind == FIXED:
                return cls(FIXED, (float(value["l"]),))
            if kind == SWEEP:
                return cls(SWEEP, tuple(float(v) for v in value["l"]))
            return cls(kind)
        raise ConfigError(f"cannot read lambda policy from {value!r}")

    def to_value(self):
        if self.kind == BALANCE:
            return BALANCE
        if self.kind == FIXED:
            return {"kind": FIXED, "l": self.exponents[0]}
        return {"kind": SWEEP, "l": list(self.exponents)}


@dataclass(frozen=True)
class ExperimentConfig:
    profile: str = "exp"
    s: float = 1.0
    gamma: float = 1.5
    c_n: float = 1.0
    d_grid: tuple[int, ...] = (20, 40, 80, 160)
    lambda_policy: LambdaPolicy = field(default_factory=LambdaPolicy)
    sigma: float = 1.0
    replicates: int = 5
    seed: int = 0
    output: str | None = None
    c0: float = 1.0
    r_cap: float = 10.0
    truncation_K: int | None = None
    name: str = "run"

    def __post_init__(self):
        try:
            parse_profile(self.profile)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not (self.s > 0 and self.gamma > 0 and self.c_n > 0):
            raise ConfigError("s, gamma and c_n must be positive")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        grid = list(self.d_grid)
        if not grid or grid != sorted(set(grid)) or grid[0] < 2:
            raise ConfigError("d_grid must be strictly increasing integers >= 2")
        for d in grid:
            if self.n_for(d) < MIN_N:
                raise ConfigError(f"d={d} gives n={self.n_for(d)} < {MIN_N}")

    def n_for(self, d: int) -> int:
        return int(round(self.c_n * d ** self.gamma))

    @property
    def kernel(self) -> KernelSpec:
        return parse_profile(self.profile)

    @property
    def family(self) -> str:
        return rt.NTK if self.kernel.variant == NTK_RELU2 else rt.GENERIC

    def truncation_policy(self) -> TruncationPolicy:
        return TruncationPolicy(K=self.truncation_K)

    def lambda_exponents(self) -> list[float]:
        if self.lambda_policy.kind == BALANCE:
            return [rt.krr_rate(rt.RateQuery(self.s, self.gamma, self.family)).lambda_exponent]
        return list(self.lambda_policy.exponents)

    def lambda_value(self, d: int, l: float) -> float:
        lam = float(d) ** (-l)
        if self.lambda_policy.kind == BALANCE:
            ans = rt.krr_rate(rt.RateQuery(self.s, self.gamma, self.family))
            if ans.lambda_ln_d:
                lam *= math.log(d)
        return lam

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(data)
        if "d_grid" in kw:
            kw["d_grid"] = tuple(int(v) for v in kw["d_grid"])
        if "lambda_policy" in kw:
            kw["lambda_policy"] = LambdaPolicy.from_value(kw["lambda_policy"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path: str | os.PathLike) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d_grid"] = list(self.d_grid)
        out["lambda_policy"] = self.lambda_policy.to_value()
        return {k: v for k, v in out.items() if v is not None}


@dataclass(frozen=True)
class ExperimentRecord:
    run_id: str
    d: int
    n: int
    gamma: float
    s: float
    lam: float
    lambda_exponent: float
    seed: int
    excess_risk: float
    bias2: float
    variance: float
    trunc_bound: float
    cond_pass: bool

    @property
    def expected_risk(self) -> float:
        return self.bias2 + self.variance

    def row(self) -> dict:
        return {"run_id": self.run_id, "d": self.d, "n": self.n, "gamma": self.gamma, "s": self.s,
                "lambda": repr(self.lam), "lambda_exponent": self.lambda_exponent, "seed": self.seed,
                "excess_risk": repr(self.excess_risk), "bias2": repr(self.bias2),
                "variance": repr(self.variance), "trunc_bound": repr(self.trunc_bound),
                "cond_pass": int(self.cond_pass)}

    @classmethod
    def from_row(cls, row: dict) -> "ExperimentRecord":
        return cls(run_id=row["run_id"], d=int(row["d"]), n=int(row["n"]),
                   gamma=float(row["gamma"]), s=float(row["s"]), lam=float(row["lambda"]),
                   lambda_exponent=float(row["lambda_exponent"]), seed=int(row["seed"]),
                   excess_risk=float(row["excess_risk"]), bias2=float(row["bias2"]),
                   variance=float(row["variance"]), trunc_bound=float(row["trunc_bound"]),
                   cond_pass=str(row["cond_pass"]).strip().lower() in ("1", "true"))


def _cell(cfg: ExperimentConfig, sp: Spectrum, d: int, rep: int) -> list[ExperimentRecord]:
    n = cfg.n_for(d)
    tg = build_target(sp, cfg.s, cfg.gamma, cfg.c0, cfg.r_cap)
    exps = cfg.lambda_exponents()
    lams = [cfg.lambda_value(d, l) for l in exps]
    dz = sample_sphere(d, n, make_rng(cfg.seed, d, n, rep, 0))
    noise = make_rng(cfg.seed, d, n, rep, 1).standard_normal(n)
    out = []
    evaluator = SpectralRiskEvaluator(sp, tg, dz) if len(lams) > 2 else None
    for j, (l, lam) in enumerate(zip(exps, lams)):
        run_id = f"{cfg.name}-d{d}-n{n}-r{rep}-l{j}"
        try:
            cond = check_approximation_conditions(sp, tg, lam, n).all_pass
            if evaluator is not None:
                rep_ = evaluator.report(lam, noise, cfg.sigma)
                risk, b2, var, tb = rep_.excess_risk, rep_.bias2, rep_.variance, rep_.trunc_bound
            else:
                fit = fit_krr(sp, tg, dz, lam, cfg.sigma, noise=noise)
                ar = excess_risk_analytic(fit, sp)
                bv = bias_variance(sp, tg, dz, lam, cfg.sigma)
                risk, b2, var, tb = ar.value, bv.bias2, bv.variance, max(ar.trunc_bound, bv.trunc_bound)
        except Exception:  # noqa: BLE001 - a failed cell is recorded and the sweep goes on
            cond, risk, b2, var, tb = False, math.nan, math.nan, math.nan, math.nan
        out.append(ExperimentRecord(run_id, d, n, cfg.gamma, cfg.s, lam, l, cfg.seed,
                                    risk, b2, var, tb, bool(cond)))
    return out


def _run_cell(args) -> list[ExperimentRecord]:
    cfg, d, rep = args
    sp = build_spectrum(cfg.kernel, d, cfg.truncation_policy())
    return _cell(cfg, sp, d, rep)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(cfg: ExperimentConfig, workers: int | None = None) -> list[ExperimentRecord]:
    """All (d, replicate, lambda) cells of ``cfg``, in a fixed order.

    Every cell draws from its own counter-based stream, so results do not
    depend on ``workers`` or scheduling.
    """
    workers = default_workers() if workers is None else max(1, workers)
    jobs = [(cfg, d, rep) for d in cfg.d_grid for rep in range(cfg.replicates)]
    if workers == 1:
        spectra = {d: build_spectrum(cfg.kernel, d, cfg.truncation_policy()) for d in cfg.d_grid}
        chunks = [_cell(cfg, spectra[d], d, rep) for _, d, rep in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell, jobs))
    return [r for chunk in chunks for r in chunk]


def write_records(records: Iterable[ExperimentRecord], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RECORD_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow(r.row())


def read_records(path: str | os.PathLike) -> list[ExperimentRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"CSV lacks columns {sorted(missing)}")
        return [ExperimentRecord.from_row(row) for row in reader]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    axis: str
    expected: float | None = None

    @property
    def deviation(self) -> float | None:
        return None if self.expected is None else abs(self.slope - self.expected)


def fit_loglog(x: Sequence[float], y: Sequence[float], axis: str = "log_d",
               expected: float | None = None) -> SlopeFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or np.unique(x).size < 3:
        raise DegenerateFitError("need at least 3 distinct abscissae")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise DegenerateFitError("risks must be positive and finite")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) == 0:
        raise DegenerateFitError("all risks identical")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return SlopeFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), int(x.size), axis, expected)


def _metric(r: ExperimentRecord, metric: str) -> float:
    if metric == "expected":
        return r.expected_risk
    if metric in ("excess_risk", "bias2", "variance"):
        return getattr(r, metric)
    raise ValueError(f"unknown metric {metric!r}")


def cell_medians(records: Iterable[ExperimentRecord], metric: str = "expected",
                 include_unverified: bool = False) -> dict[tuple[int, float], tuple[int, float]]:
    """Median over replicates per (d, lambda exponent) -> (n, median risk)."""
    groups: dict[tuple[int, float], list[float]] = {}
    sizes: dict[tuple[int, float], int] = {}
    for r in records:
        if not include_unverified and not r.cond_pass:
            continue
        v = _metric(r, metric)
        if not math.isfinite(v):
            continue
        key = (r.d, r.lambda_exponent)
        groups.setdefault(key, []).append(v)
        sizes[key] = r.n
    return {k: (sizes[k], float(np.median(v))) for k, v in groups.items()}


def fit_rate(records: Sequence[ExperimentRecord], axis: str = "log_d", metric: str = "expected",
             include_unverified: bool = False, expected: float | None = None,
             lambda_exponent: float | None = None) -> SlopeFit:
    """Slope of log(median risk) against log d or log n.

    ``metric`` is ``"expected"`` (bias2 + variance, the risk conditional on
    the design), ``"excess_risk"`` (one noisy draw), ``"bias2"`` or
    ``"variance"``. Cells failing the approximation conditions are dropped
    unless ``include_unverified``. With several lambda exponents in the
    records, ``lambda_exponent`` selects one.
    """
    if axis not in ("log_d", "log_n"):
        raise ValueError("axis must be 'log_d' or 'log_n'")
    med = cell_medians(records, metric, include_unverified)
    exps = sorted({k[1] for k in med})
    if lambda_exponent is None:
        if len(exps) > 1:
            raise ValueError("records hold several lambda exponents; pass lambda_exponent")
    else:
        med = {k: v for k, v in med.items() if abs(k[1] - lambda_exponent) < 1e-12}
    keys = sorted(med)
    if len(keys) < 3:
        raise DegenerateFitError(f"only {len(keys)} usable cells (need >= 3 distinct d)")
    x = [med[k][0] if axis == "log_n" else k[0] for k in keys]
    y = [med[k][1] for k in keys]
    return fit_loglog(x, y, axis, expected)


@dataclass
class SweepSlopes:
    per_lambda: dict[float, SlopeFit]
    oracle: SlopeFit
    best_lambda_exponent: dict[int, float]

    @property
    def steepest(self) -> tuple[float, SlopeFit]:
        l = min(self.per_lambda, key=lambda k: self.per_lambda[k].slope)
        return l, self.per_lambda[l]


def sweep_slopes(records: Sequence[ExperimentRecord], axis: str = "log_n", metric: str = "expected",
                 include_unverified: bool = True) -> SweepSlopes:
    """Slopes for each fixed lambda exponent and for the per-d best lambda (oracle tuning)."""
    med = cell_medians(records, metric, include_unverified)
    exps = sorted({k[1] for k in med})
    per = {}
    for l in exps:
        try:
            per[l] = fit_rate(records, axis, metric, include_unverified, lambda_exponent=l)
        except DegenerateFitError:
            continue
    ds = sorted({k[0] for k in med})
    best = {}
    xs, ys = [], []
    for d in ds:
        cells = {k[1]: v for k, v in med.items() if k[0] == d}
        l_best = min(cells, key=lambda l: cells[l][1])
        best[d] = l_best
        xs.append(cells[l_best][0] if axis == "log_n" else d)
        ys.append(cells[l_best][1])
    return SweepSlopes(per, fit_loglog(xs, ys, axis), best)


def figure_rows(s_list: Sequence[float], gamma_range: tuple[float, float], families: Sequence[str],
                step: float = 0.01) -> list[dict]:
    rows = []
    for fam in families:
        for s in s_list:
            for method in (rt.KRR, rt.MINIMAX):
                curve = rt.sample_rate_curve(s, gamma_range, step, fam, method)
                rows.extend(rt.curve_rows(s, curve, method, fam))
    return rows


def emit_figure_data(s_list: Sequence[float] = FIGURE2_S, gamma_range: tuple[float, float] = (0.0, 6.0),
                     families: Sequence[str] = (rt.GENERIC,), out_path: str | os.PathLike = "figure_data.csv",
                     step: float = 0.01) -> Path:
    """CSV of KRR and minimax curves for each s (breakpoints included as knots)."""
    rows = figure_rows(s_list, gamma_range, families, step)
    out = Path(out_path)
    out.write_text(rt.curve_to_csv(rows))
    return out
