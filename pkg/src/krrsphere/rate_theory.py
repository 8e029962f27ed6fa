"""Piecewise-linear rate curves for KRR and the minimax lower bound when n ~ d^gamma.

Every curve is a chain of segments gamma in (lo, hi] on which the error
exponent (error ~ d^{d_exponent}) and the regularization exponent
(lambda ~ d^{-l}) are affine in gamma.  Segments are indexed by a period
p and its successor p'; p' = p + 1 for generic inner-product kernels, while
for the two-layer ReLU NTK p ranges over {0, 1, 2, 4, 6, ...} with p' = p + 1
for p <= 1 and p' = p + 2 otherwise (odd degrees >= 3 carry no eigenvalue).

Intervals are left-open, right-closed; a gamma within 1e-12 of a
breakpoint is snapped onto it and takes the segment that ends there.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Iterator

GENERIC = "generic_inner"
NTK = "ntk_relu2"
KRR = "krr"
MINIMAX = "minimax"

VARIANCE = "variance_dominated"
TRANSITION = "transition"
BIAS = "bias_dominated"

SNAP_TOL = 1e-12
MAX_PERIOD = 10_000

CSV_FIELDS = ("s", "gamma", "method", "family", "p", "period_kind", "d_exponent",
              "n_exponent", "lambda_exponent", "log_factor", "epsilon_slack")


class UnprovenRegion(ValueError):
    """Raised for (s, gamma) with s <= 1/2 and gamma <= 3s/(2(s+1)), where no rate is established."""


@dataclass(frozen=True)
class RateQuery:
    s: float
    gamma: float
    kernel_family: str = GENERIC
    method: str = KRR

    def __post_init__(self):
        if not (self.s > 0 and self.gamma > 0):
            raise ValueError("s and gamma must be positive")
        if self.kernel_family not in (GENERIC, NTK):
            raise ValueError(f"unknown kernel family {self.kernel_family!r}")
        if self.method not in (KRR, MINIMAX):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class RateAnswer:
    d_exponent: float
    n_exponent: float
    p: int
    period_kind: str
    lambda_exponent: float | None = None
    log_factor: str = "none"
    epsilon_slack: bool = False
    lambda_ln_d: bool = False
    case: str = ""


@dataclass(frozen=True)
class Segment:
    """gamma in (lo, hi]: d_exponent = rate0 + rate1*gamma, l = lam0 + lam1*gamma."""

    lo: float
    hi: float
    p: int
    p_prime: int
    kind: str
    case: str
    rate0: float
    rate1: float
    lam0: float | None = None
    lam1: float | None = None

    def contains(self, gamma: float) -> bool:
        return self.lo < gamma <= self.hi

    def d_exponent(self, gamma: float) -> float:
        return self.rate0 + self.rate1 * gamma

    def lambda_exponent(self, gamma: float) -> float | None:
        if self.lam0 is None:
            return None
        return self.lam0 + self.lam1 * gamma


def period_indices(family: str) -> Iterator[tuple[int, int]]:
    """Yield (p, p') pairs in increasing order for the kernel family."""
    if family == GENERIC:
        p = 0
        while p <= MAX_PERIOD:
            yield p, p + 1
            p += 1
    elif family == NTK:
        yield 0, 1
        yield 1, 2
        p = 2
        while p <= MAX_PERIOD:
            yield p, p + 2
            p += 2
    else:
        raise ValueError(f"unknown kernel family {family!r}")


def _krr_segments(s: float, p: int, q: int) -> list[Segment]:
    if s >= 1:
        st = min(s, 2.0)
        b1 = q + p * st
        b2 = 2 * q * st - q + 2 * p - p * st
        b3 = q + q * st
        segs = [
            # variance-dominated: error d^{-gamma+p}, l = (gamma + p - p s~)/2
            Segment(p + p * st, b1, p, q, VARIANCE, "i", p, -1.0, (p - p * st) / 2, 0.5),
            # balance of d^{p'}/n-type variance against lambda^2 d^{(2-s~)p} bias
            Segment(b1, b2, p, q, TRANSITION, "ii", -q / 2 + p - p * st / 2, -0.5,
                    (q + 2 * p - p * st) / 4, 0.25),
            # bias floor d^{-p' s~}
            Segment(b2, b3, p, q, BIAS, "iii", -q * st, 0.0, q * (1 - st) / 2, 0.5),
        ]
    else:
        segs = [
            Segment(p + p * s, p + q * s, p, q, VARIANCE, "i", p, -1.0, (p - p * s) / 2, 0.5),
            Segment(p + q * s, q + q * s, p, q, BIAS, "ii", -q * s, 0.0, p + (q - p) * s / 2, 0.0),
        ]
    return [sg for sg in segs if sg.hi > sg.lo]


def _minimax_segments(s: float, p: int, q: int) -> list[Segment]:
    segs = [
        Segment(p + p * s, p + q * s, p, q, VARIANCE, "i", p, -1.0),
        Segment(p + q * s, q + q * s, p, q, BIAS, "ii", -q * s, 0.0),
    ]
    return [sg for sg in segs if sg.hi > sg.lo]


def segments(s: float, family: str = GENERIC, method: str = KRR,
             gamma_max: float | None = None) -> Iterator[Segment]:
    """Consecutive segments of the curve, stopping once past ``gamma_max``."""
    build = _krr_segments if method == KRR else _minimax_segments
    for p, q in period_indices(family):
        for sg in build(s, p, q):
            yield sg
            if gamma_max is not None and sg.hi >= gamma_max:
                return


def breakpoints(s: float, gamma_max: float, family: str = GENERIC, method: str = KRR) -> list[float]:
    """Interior segment endpoints in (0, gamma_max]."""
    return [sg.hi for sg in segments(s, family, method, gamma_max) if sg.hi <= gamma_max]


def _snap(gamma: float, s: float, family: str, method: str) -> float:
    for sg in segments(s, family, method, gamma + 1.0):
        for b in (sg.lo, sg.hi):
            if abs(gamma - b) <= SNAP_TOL * max(1.0, abs(b)):
                return b
    return gamma


def validity_threshold(s: float) -> float | None:
    """Lower limit on gamma below which no KRR rate is established (s <= 1/2 only)."""
    return 3 * s / (2 * (s + 1)) if s <= 0.5 else None


def find_segment(s: float, gamma: float, family: str = GENERIC, method: str = KRR) -> Segment:
    g = _snap(gamma, s, family, method)
    for sg in segments(s, family, method, g):
        if sg.contains(g):
            return sg
    raise ValueError(f"no segment contains gamma={gamma}")  # unreachable for gamma > 0


def _answer(sg: Segment, gamma: float, method: str) -> RateAnswer:
    d_exp = sg.d_exponent(gamma)
    if d_exp == 0.0:
        d_exp = 0.0  # avoid -0.0
    log_factor = "ln2" if method == KRR and sg.case == "i" and sg.p == 0 else "none"
    return RateAnswer(
        d_exponent=d_exp,
        n_exponent=d_exp / gamma,
        p=sg.p,
        period_kind=sg.kind,
        lambda_exponent=sg.lambda_exponent(gamma) if method == KRR else None,
        log_factor=log_factor,
        epsilon_slack=(method == MINIMAX and sg.case == "i"),
        lambda_ln_d=(method == KRR and sg.case == "i" and sg.p == 0),
        case=sg.case,
    )


def krr_rate(q: RateQuery) -> RateAnswer:
    """Exact KRR error exponent at the balancing lambda.

    Raises
    ------
    UnprovenRegion
        For s <= 1/2 and gamma <= 3s/(2(s+1)).
    """
    thr = validity_threshold(q.s)
    if thr is not None and q.gamma <= thr + SNAP_TOL:
        raise UnprovenRegion(f"no rate established for s={q.s}, gamma={q.gamma} <= {thr:.6g}")
    sg = find_segment(q.s, q.gamma, q.kernel_family, KRR)
    return _answer(sg, q.gamma, KRR)


def minimax_rate(q: RateQuery) -> RateAnswer:
    """Minimax lower-bound exponent; case (i) carries an arbitrarily small epsilon flag."""
    sg = find_segment(q.s, q.gamma, q.kernel_family, MINIMAX)
    return _answer(sg, q.gamma, MINIMAX)


def rate(s: float, gamma: float, family: str = GENERIC, method: str = KRR) -> RateAnswer:
    q = RateQuery(s, gamma, family, method)
    return krr_rate(q) if method == KRR else minimax_rate(q)


@dataclass(frozen=True)
class GapReport:
    krr: RateAnswer
    minimax: RateAnswer
    gap: float


def saturation_gap(s: float, gamma: float, family: str = GENERIC) -> GapReport:
    """KRR exponent minus minimax exponent (epsilon taken as 0); positive means KRR is suboptimal."""
    k = rate(s, gamma, family, KRR)
    m = rate(s, gamma, family, MINIMAX)
    return GapReport(k, m, k.d_exponent - m.d_exponent)


def sample_rate_curve(s: float, gamma_range: tuple[float, float], step: float,
                      family: str = GENERIC, method: str = KRR,
                      skip_unproven: bool = True) -> list[tuple[float, RateAnswer]]:
    """Curve samples on a regular grid plus every breakpoint as an explicit knot.

    ``gamma_range = (lo, hi)`` samples lo, lo+step, ..., hi (gamma <= 0 dropped).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    lo, hi = gamma_range
    if hi <= lo:
        raise ValueError("empty gamma range")
    n_steps = int(math.floor((hi - lo) / step + 1e-9))
    grid = {round(lo + i * step, 12) for i in range(n_steps + 1)}
    grid.add(hi)
    grid.update(b for b in breakpoints(s, hi, family, method) if b >= lo)
    out = []
    for g in sorted(grid):
        if g <= 0:
            continue
        try:
            out.append((g, rate(s, g, family, method)))
        except UnprovenRegion:
            if not skip_unproven:
                raise
    return out


def curve_rows(s: float, curve: list[tuple[float, RateAnswer]], method: str, family: str) -> list[dict]:
    rows = []
    for g, ans in curve:
        rows.append({
            "s": s, "gamma": g, "method": method, "family": family, "p": ans.p,
            "period_kind": ans.period_kind, "d_exponent": ans.d_exponent,
            "n_exponent": ans.n_exponent,
            "lambda_exponent": "" if ans.lambda_exponent is None else ans.lambda_exponent,
            "log_factor": ans.log_factor, "epsilon_slack": ans.epsilon_slack,
        })
    return rows


def curve_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def answer_dict(ans: RateAnswer) -> dict:
    return asdict(ans)
