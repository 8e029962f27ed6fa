import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from krrsphere import rate_theory as rt
from krrsphere.rate_theory import (
    BIAS,
    CSV_FIELDS,
    GENERIC,
    KRR,
    MINIMAX,
    NTK,
    TRANSITION,
    VARIANCE,
    RateQuery,
    UnprovenRegion,
    breakpoints,
    curve_rows,
    curve_to_csv,
    krr_rate,
    minimax_rate,
    period_indices,
    rate,
    sample_rate_curve,
    saturation_gap,
    segments,
    validity_threshold,
)

S_GRID = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0]


def oracle_generic_krr(s, g):
    """Case-by-case evaluation of the generic-kernel KRR exponents by direct interval search."""
    for p in range(200):
        if s >= 1:
            t = min(s, 2.0)
            if p + p * t < g <= p + p * t + 1:
                return -g + p
            if p + p * t + 1 < g <= p + p * t + 2 * t - 1:
                return -(g - p + p * t + 1) / 2
            if p + p * t + 2 * t - 1 < g <= (p + 1) * (1 + t):
                return -(p + 1) * t
        else:
            if p + p * s < g <= p + p * s + s:
                return -g + p
            if p + p * s + s < g <= (p + 1) * (1 + s):
                return -(p + 1) * s
    raise AssertionError("gamma out of oracle range")


def oracle_generic_minimax(s, g):
    for p in range(200):
        if p + p * s < g <= p + p * s + s:
            return -g + p
        if p + p * s + s < g <= (p + 1) * (1 + s):
            return -(p + 1) * s
    raise AssertionError("gamma out of oracle range")


class TestExamples:
    def test_case_ii(self):
        a = rate(1.5, 2.0)
        assert (a.p, a.case, a.period_kind) == (0, "ii", TRANSITION)
        assert a.d_exponent == pytest.approx(-1.5)
        assert a.n_exponent == pytest.approx(-0.75)
        assert a.lambda_exponent == pytest.approx(0.75)

    def test_case_i_log_factor(self):
        a = rate(2.0, 1.0)
        assert a.case == "i" and a.p == 0
        assert a.n_exponent == pytest.approx(-1.0)
        assert a.log_factor == "ln2"
        assert a.lambda_ln_d
        assert a.lambda_exponent == pytest.approx(0.5)

    def test_sub_one_period(self):
        # s=0.75: p=1 covers (1.75, 2.5] in case (i)
        a = rate(0.75, 2.0)
        assert a.p == 1 and a.case == "i"
        assert a.d_exponent == pytest.approx(-1.0)
        assert a.log_factor == "none"

    def test_case_iii(self):
        a = rate(1.0, 1.5)
        assert a.case == "iii" and a.period_kind == BIAS
        assert a.d_exponent == pytest.approx(-1.0)
        assert a.n_exponent == pytest.approx(-2 / 3)

    def test_minimax_examples(self):
        a = rate(1.0, 1.5, method=MINIMAX)
        assert a.case == "ii" and a.d_exponent == pytest.approx(-1.0) and not a.epsilon_slack
        b = rate(0.5, 0.4, method=MINIMAX)
        assert b.case == "i" and b.d_exponent == pytest.approx(-0.4) and b.epsilon_slack
        c = rate(3.0, 3.5, method=MINIMAX)
        assert c.p == 0 and c.d_exponent == pytest.approx(-3.0)
        assert b.lambda_exponent is None

    def test_gap_examples(self):
        assert saturation_gap(1.0, 1.5).gap == pytest.approx(0.0)
        g = saturation_gap(2.0, 2.0)
        assert g.krr.d_exponent == pytest.approx(-1.5)
        assert g.minimax.d_exponent == pytest.approx(-2.0)
        assert g.gap == pytest.approx(0.5)

    def test_gap_in_unproven_region(self):
        # 0.4 <= 3*0.5/(2*1.5) = 0.5: no KRR rate, so the gap is not defined
        with pytest.raises(UnprovenRegion):
            saturation_gap(0.5, 0.4)

    def test_gap_zero_just_above_threshold(self):
        assert saturation_gap(0.5, 0.55).gap == pytest.approx(0.0)


class TestValidity:
    def test_threshold(self):
        assert validity_threshold(0.5) == pytest.approx(0.5)
        assert validity_threshold(0.25) == pytest.approx(0.3)
        assert validity_threshold(0.51) is None

    def test_unproven(self):
        with pytest.raises(UnprovenRegion):
            rate(0.25, 0.3)
        # just above the threshold, already on the bias plateau (0.25, 1.25]
        assert rate(0.25, 0.31).d_exponent == pytest.approx(-0.25)
        # minimax has no such restriction
        assert rate(0.25, 0.1, method=MINIMAX).d_exponent == pytest.approx(-0.1)

    def test_query_validation(self):
        with pytest.raises(ValueError):
            RateQuery(0.0, 1.0)
        with pytest.raises(ValueError):
            RateQuery(1.0, -1.0)
        with pytest.raises(ValueError):
            RateQuery(1.0, 1.0, "laplace")
        with pytest.raises(ValueError):
            RateQuery(1.0, 1.0, GENERIC, "ols")

    def test_dispatch(self):
        q = RateQuery(1.5, 2.0)
        assert krr_rate(q) == rate(1.5, 2.0)
        assert minimax_rate(RateQuery(1.5, 2.0, method=MINIMAX)) == rate(1.5, 2.0, method=MINIMAX)


class TestAgainstOracle:
    @given(st.sampled_from(S_GRID), st.floats(0.01, 12.0))
    @settings(max_examples=400, deadline=None)
    def test_generic_krr(self, s, g):
        thr = validity_threshold(s)
        if thr is not None and g <= thr + 1e-9:
            return
        a = rate(s, g)
        assert a.d_exponent == pytest.approx(oracle_generic_krr(s, g), abs=1e-12)
        assert a.n_exponent * g == pytest.approx(a.d_exponent, abs=1e-12)
        assert a.d_exponent <= 0

    @given(st.floats(0.05, 4.0), st.floats(0.01, 12.0))
    @settings(max_examples=400, deadline=None)
    def test_generic_minimax(self, s, g):
        assert rate(s, g, method=MINIMAX).d_exponent == pytest.approx(oracle_generic_minimax(s, g), abs=1e-12)

    def test_boundaries_take_right_closed_case(self):
        # gamma = 1 is the right end of case (i) for s=2, p=0
        assert rate(2.0, 1.0).case == "i"
        assert rate(2.0, 1.0 + 1e-9).case == "ii"
        # representation noise snaps onto the knot
        assert rate(2.0, 1.0 + 1e-14).case == "i"


class TestCurveProperties:
    @pytest.mark.parametrize("family", [GENERIC, NTK])
    @pytest.mark.parametrize("method", [KRR, MINIMAX])
    @pytest.mark.parametrize("s", S_GRID)
    def test_continuity(self, s, method, family):
        segs = list(segments(s, family, method, 12.0))
        for a, b in zip(segs, segs[1:]):
            assert a.hi == pytest.approx(b.lo, abs=1e-12)
            assert a.d_exponent(a.hi) == pytest.approx(b.d_exponent(b.lo), abs=1e-12)

    @pytest.mark.parametrize("s", S_GRID)
    def test_dominance_and_monotonicity(self, s):
        gammas = np.linspace(0.02, 10, 1200)
        prev = 0.0
        gaps = []
        for g in gammas:
            try:
                gr = saturation_gap(s, g)
            except UnprovenRegion:
                continue
            assert gr.gap >= -1e-12
            gaps.append(gr.gap)
            assert gr.krr.d_exponent <= prev + 1e-12
            prev = gr.krr.d_exponent
        if s <= 1:
            assert max(gaps) <= 1e-12
        else:
            assert max(gaps) > 0

    @given(st.floats(2.0, 10.0), st.floats(0.01, 15.0))
    @settings(max_examples=200, deadline=None)
    def test_invariance_above_two(self, s, g):
        assert rate(s, g) == rate(2.0, g)

    @pytest.mark.parametrize("s", [1.2, 1.5, 1.8])
    def test_period_lengths(self, s):
        for p in range(4):
            segs = [sg for sg in segments(s, GENERIC, KRR, 30.0) if sg.p == p]
            lengths = {sg.case: sg.hi - sg.lo for sg in segs}
            assert lengths["i"] == pytest.approx(1.0)
            assert lengths["ii"] == pytest.approx(2 * s - 2)
            assert lengths["iii"] == pytest.approx(2 - s)

    def test_s_one_has_no_case_ii(self):
        assert all(sg.case != "ii" for sg in segments(1.0, GENERIC, KRR, 10.0))

    def test_s_one_plateaus(self):
        for p in range(3):
            for g in np.linspace(2 * p + 1 + 0.01, 2 * p + 2, 5):
                assert rate(1.0, g).d_exponent == pytest.approx(-(p + 1))


class TestNtkFamily:
    def test_period_indices(self):
        it = period_indices(NTK)
        first = [next(it) for _ in range(5)]
        assert first == [(0, 1), (1, 2), (2, 4), (4, 6), (6, 8)]
        it = period_indices(GENERIC)
        assert [next(it) for _ in range(3)] == [(0, 1), (1, 2), (2, 3)]

    def test_first_two_periods_match_generic(self):
        # p' = p + 1 for p in {0, 1}; the curves coincide there
        for s in S_GRID:
            end = 2 * (1 + min(s, 2.0)) if s >= 1 else 2 * (1 + s)
            for g in np.linspace(0.6, end, 40):
                assert rate(s, g, NTK) == rate(s, g, GENERIC)

    def test_uniform_shift_reproduces_generic(self, monkeypatch):
        # with p' = p + 1 for every p the NTK construction is the generic one
        monkeypatch.setattr(rt, "period_indices", lambda family: ((p, p + 1) for p in range(100)))
        for s in (0.75, 1.5, 2.5):
            for g in np.linspace(0.6, 14, 60):
                assert rate(s, g, NTK) == rate(s, g, GENERIC)

    @pytest.mark.parametrize("s", [1.25, 1.5, 2.0])
    def test_transition_formula_for_even_periods(self, s):
        # with p' = p + 2: -gamma/2 + p'/2 - p s~/2 - 2
        t = min(s, 2.0)
        for sg in segments(s, NTK, KRR, 40.0):
            if sg.p >= 2 and sg.case == "ii":
                g = (sg.lo + sg.hi) / 2
                assert sg.d_exponent(g) == pytest.approx(-g / 2 + sg.p_prime / 2 - sg.p * t / 2 - 2)

    def test_even_period_case_i_and_iii(self):
        s, t = 1.5, 1.5
        for sg in segments(s, NTK, KRR, 40.0):
            if sg.p < 2:
                continue
            if sg.case == "i":
                assert sg.lo == pytest.approx(sg.p + sg.p * t)
                assert sg.hi == pytest.approx(sg.p_prime + sg.p * t)
            if sg.case == "iii":
                assert sg.d_exponent(sg.hi) == pytest.approx(-sg.p_prime * t)
                assert sg.hi == pytest.approx(sg.p_prime * (1 + t))

    def test_ntk_minimax_even_period(self):
        s = 1.0
        # p=2, p'=4: case (i) on (4, 6], case (ii) on (6, 8]
        assert rate(s, 5.0, NTK, MINIMAX).d_exponent == pytest.approx(-3.0)
        assert rate(s, 7.0, NTK, MINIMAX).d_exponent == pytest.approx(-4.0)


class TestCurveSampling:
    def test_knots_included(self):
        curve = sample_rate_curve(1.5, (0.0, 6.0), 0.25)
        gs = [g for g, _ in curve]
        for b in breakpoints(1.5, 6.0):
            assert b in gs
        assert gs == sorted(gs)
        assert gs[0] > 0

    def test_unproven_skipped(self):
        curve = sample_rate_curve(0.25, (0.0, 2.0), 0.05)
        assert min(g for g, _ in curve) > 0.3
        with pytest.raises(UnprovenRegion):
            sample_rate_curve(0.25, (0.0, 2.0), 0.05, skip_unproven=False)

    def test_validation(self):
        with pytest.raises(ValueError):
            sample_rate_curve(1.0, (0, 1), 0.0)
        with pytest.raises(ValueError):
            sample_rate_curve(1.0, (1, 1), 0.1)

    def test_csv(self):
        curve = sample_rate_curve(1.0, (0.5, 2.0), 0.5)
        text = curve_to_csv(curve_rows(1.0, curve, KRR, GENERIC))
        rows = list(csv.DictReader(io.StringIO(text)))
        assert tuple(rows[0]) == CSV_FIELDS
        assert len(rows) == len(curve)
        assert float(rows[-1]["d_exponent"]) == pytest.approx(-1.0)

    def test_s_above_two_curves_identical(self):
        a = sample_rate_curve(2.0, (0.0, 6.0), 0.05)
        b = sample_rate_curve(2.5, (0.0, 6.0), 0.05)
        assert [x[1] for x in a] == [x[1] for x in b]
