import math
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bmil import analytic
from bmil.analytic import HittingQuery, Interval
from bmil.errors import ConfigError
from bmil.paths import PacketSpec


class TestHittingProb:
    def test_start_on_inner_sphere(self):
        assert analytic.hitting_prob_f(HittingQuery(2, 1.0, 1.0, 4.0)) == 1.0

    def test_hand_value_d2(self):
        # log(1/2)/log(1/4) = 1/2
        q = HittingQuery(2, 2.0, 1.0, 4.0)
        assert analytic.hitting_prob_f(q) == pytest.approx(0.5, abs=1e-15)

    def test_hand_value_d3(self):
        # (4/2 - 1)/(4/1 - 1) = 1/3
        q = HittingQuery(3, 2.0, 1.0, 4.0)
        assert analytic.hitting_prob_f(q) == pytest.approx(1 / 3, abs=1e-15)

    def test_degenerate_annulus_rejected(self):
        with pytest.raises(ConfigError):
            analytic.hitting_prob_f(HittingQuery(2, 1.0, 1.0, 1.0))

    def test_boundary_identities(self):
        for d in (2, 3):
            for (r1, r2) in [(0.5, 2.0), (1.0, 8.0), (0.25, 0.5)]:
                assert analytic.hitting_prob_f(HittingQuery(d, r1, r1, r2)) == pytest.approx(1.0)
                assert analytic.hitting_prob_f(HittingQuery(d, r2, r1, r2)) == pytest.approx(0.0, abs=1e-15)

    @given(
        st.floats(0.05, 0.95),
        st.floats(0.05, 0.95),
        st.sampled_from([2, 3]),
        st.floats(0.1, 10.0),
    )
    def test_monotone_and_scale_invariant(self, u, v, d, c):
        # r strictly between r1 and r2 via interpolation parameters
        r1, r2 = 1.0, 4.0
        r = r1 + u * (r2 - r1)
        r_hi = r + (r2 - r) * v * 0.9
        f = analytic.hitting_prob_f(HittingQuery(d, r, r1, r2))
        f_hi = analytic.hitting_prob_f(HittingQuery(d, r_hi, r1, r2))
        assert f_hi <= f + 1e-12  # decreasing in r
        assert 0.0 <= f <= 1.0
        if d == 2:
            f_scaled = analytic.hitting_prob_f(HittingQuery(d, c * r, c * r1, c * r2))
            assert f_scaled == pytest.approx(f, rel=1e-9)

    def test_increasing_in_r1(self):
        f_lo = analytic.hitting_prob_f(HittingQuery(2, 2.0, 0.5, 4.0))
        f_hi = analytic.hitting_prob_f(HittingQuery(2, 2.0, 1.0, 4.0))
        assert f_hi > f_lo


class TestEventualHit:
    def test_planar_recurrence(self):
        assert analytic.hit_prob_eventual(2, 5.0, 1.0) == 1.0

    def test_transient_ratio(self):
        assert analytic.hit_prob_eventual(3, 2.0, 1.0) == 0.5

    def test_start_on_sphere(self):
        assert analytic.hit_prob_eventual(3, 1.0, 1.0) == 1.0


class TestExponents:
    def test_pair_pair_value(self):
        assert analytic.xi2_exact(2, 2) == Fraction(35, 12)

    def test_single_single(self):
        assert analytic.xi2_exact(1, 1) == Fraction(5, 4)

    def test_mixed(self):
        assert analytic.xi2_exact(1, 2) == Fraction(2)

    @given(st.integers(1, 40), st.integers(1, 40))
    def test_symmetry(self, M, N):
        assert analytic.xi2(M, N) == pytest.approx(analytic.xi2(N, M), rel=1e-14)

    @given(st.integers(1, 40), st.integers(1, 40))
    def test_strictly_increasing(self, M, N):
        assert analytic.xi2(M + 1, N) > analytic.xi2(M, N)
        assert analytic.xi2(M, N + 1) > analytic.xi2(M, N)

    def test_d3_known_values(self):
        assert analytic.xi3_known(1, 2) == Fraction(1)
        assert analytic.xi3_known(2, 1) == Fraction(1)
        bracket = analytic.xi3_known(2, 2)
        assert isinstance(bracket, Interval)
        assert bracket.as_tuple() == (1.0, 2.0)


class TestSpectrum:
    def test_typical_point_value(self):
        assert analytic.spectrum_f(2, 35 / 12, 2.0) == pytest.approx(2.0)
        assert analytic.spectrum_f(3, 1.5, 1.0) == pytest.approx(1.0)

    def test_zero_at_amax(self):
        assert analytic.spectrum_f(2, 35 / 12, 70 / 11) == pytest.approx(0.0, abs=1e-14)
        assert analytic.spectrum_f(3, 1.5, 3.0) == pytest.approx(0.0, abs=1e-14)

    def test_exact_endpoints(self):
        xi = Fraction(35, 12)
        assert analytic.spectrum_f_exact(2, xi, Fraction(2)) == 2
        am = analytic.a_max(2, xi)
        assert am == Fraction(70, 11)
        assert analytic.spectrum_f_exact(2, xi, am) == 0

    def test_zero_a_rejected(self):
        with pytest.raises(ConfigError):
            analytic.spectrum_f(2, 35 / 12, 0.0)

    @given(st.floats(0.1, 20), st.floats(0.1, 20))
    def test_strictly_decreasing_convex(self, a, b):
        xi = 35 / 12
        lo, hi = sorted((a, b))
        if hi - lo < 1e-6:
            return
        assert analytic.spectrum_f(2, xi, lo) > analytic.spectrum_f(2, xi, hi)
        mid = (lo + hi) / 2
        chord = (analytic.spectrum_f(2, xi, lo) + analytic.spectrum_f(2, xi, hi)) / 2
        assert analytic.spectrum_f(2, xi, mid) < chord + 1e-12

    def test_amax_infinite_when_xi_small(self):
        assert analytic.a_max(2, 1.5) == math.inf


class TestTailSlope:
    @pytest.mark.parametrize(
        "d,xi,expected",
        [(2, 5 / 4, 5 / 8), (2, 35 / 12, 35 / 24), (3, 1.0, 1.0)],
    )
    def test_values(self, d, xi, expected):
        assert analytic.tail_slope(d, xi) == pytest.approx(expected)


class TestPredictBundle:
    def test_planar_pair_bundle(self):
        pred = analytic.predict_bundle(2, PacketSpec(M=2, N=2))
        assert pred.xi_exact == Fraction(35, 12)
        assert pred.a_max == Fraction(70, 11)
        # f(a) = (1/12)(70/a - 11)
        for a in (2.0, 3.0, 5.0):
            assert pred.spectrum(a) == pytest.approx((70 / a - 11) / 12)

    def test_d3_mixed_exact_one(self):
        pred = analytic.predict_bundle(3, PacketSpec(M=2, N=1))
        assert pred.xi == 1.0
        assert pred.tail_slope == 1.0

    def test_single_single_derived(self):
        pred = analytic.predict_bundle(2, PacketSpec(M=1, N=1))
        assert pred.tail_slope == pytest.approx(5 / 8)
        assert pred.a_typical == 2

    def test_d3_pair_bundle_is_interval(self):
        pred = analytic.predict_bundle(3, PacketSpec(M=2, N=2))
        assert isinstance(pred.xi, Interval)
        assert 1.5 in pred.xi
        assert isinstance(pred.a_max, Interval)
        assert pred.a_max.lo == pytest.approx(2.0)

    def test_joint_p3_unknown(self):
        pk = PacketSpec(M=2, N=2, p=3, sizes=(2, 2, 2))
        pred = analytic.predict_bundle(2, pk)
        assert pred.xi_joint is None
