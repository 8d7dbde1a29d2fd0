import math

import numpy as np
import pytest

from bmil import fitting, rare, rng
from bmil.errors import ConfigError, InfeasibleError
from bmil.paths import PacketSpec
from bmil.rare import ConditionedRunSpec, LevelStat, SurvivalCurve


def _synthetic_curve(xi, levels=(1, 2, 4, 8, 16, 32), n=10_000, c=1.0):
    """Curve with exact survival P(R) = c * R^-xi (c enters level 1 only)."""
    curve = SurvivalCurve(packet=PacketSpec(M=1, N=1), d=2, mode="pairwise")
    cum = 0.0
    for i, R in enumerate(levels):
        if i == 0:
            p = 1.0
        else:
            p = (levels[i - 1] / R) ** xi * (c if i == 1 else 1.0)
        p = min(p, 1.0)
        if i > 0:
            cum += math.log(p)
        curve.levels.append(
            LevelStat(i, float(R), n, int(n * p), p, math.sqrt(p * (1 - p) / n) if p < 1 else 0.0, cum, n)
        )
    return curve


class TestFitExponent:
    def test_exact_power_law(self):
        fit = rare.fit_exponent(_synthetic_curve(2.0), window=(1.0, None))
        assert -fit.slope == pytest.approx(2.0, abs=1e-9)

    def test_prefactor_absorbed_in_intercept(self):
        fit = rare.fit_exponent(_synthetic_curve(2.0, c=0.3), window=(2.0, None))
        assert -fit.slope == pytest.approx(2.0, abs=1e-9)

    def test_window_filters_levels(self):
        fit = rare.fit_exponent(_synthetic_curve(2.0), window=(4.0, None))
        assert fit.n_points == 4

    def test_too_few_levels_rejected(self):
        curve = _synthetic_curve(2.0, levels=(1, 2, 4))
        with pytest.raises(ConfigError):
            rare.fit_exponent(curve, window=(4.0, None))

    def test_bootstrap_coverage_synthetic(self):
        # bootstrap stderr brackets the true slope in >= 90% of trials
        g = rng.stream(77, 0)
        hits = 0
        trials = 300
        x = np.log(np.array([4.0, 8, 16, 32, 64, 128]))
        for _ in range(trials):
            y = -2.0 * x + g.normal(0, 0.05, size=len(x))
            fit = fitting.weighted_line_fit(x, y)
            se = fitting.bootstrap_slope_stderr(x, y, None, g, n_boot=120)
            if abs(fit.slope + 2.0) <= 2.5 * max(se, 1e-12):
                hits += 1
        assert hits / trials >= 0.9


class TestEngine:
    def test_determinism(self):
        pk = PacketSpec(M=1, N=1)
        a = rare.nonintersect_curve(pk, 2, [1, 2, 4], 64, seed=5, dt0=4e-4)
        b = rare.nonintersect_curve(pk, 2, [1, 2, 4], 64, seed=5, dt0=4e-4)
        assert a.as_rows() == b.as_rows()

    def test_level_zero_trivial(self):
        pk = PacketSpec(M=1, N=1)
        c = rare.nonintersect_curve(pk, 2, [1, 2], 32, seed=6, dt0=4e-4)
        assert c.levels[0].cond_prob == 1.0
        assert c.levels[0].survived == 32

    def test_cumulative_monotone(self):
        pk = PacketSpec(M=1, N=1)
        c = rare.nonintersect_curve(pk, 2, [1, 2, 4, 8], 128, seed=7, dt0=4e-4)
        cl = c.cum_log_probs()
        assert np.all(np.diff(cl) <= 1e-12)

    def test_joint_p2_identical_to_pairwise(self):
        pk = PacketSpec(M=1, N=1)
        a = rare.nonintersect_curve(pk, 2, [1, 2, 4], 96, seed=8, dt0=4e-4)
        b = rare.joint_nonintersect_curve((1, 1), 2, [1, 2, 4], 96, seed=8, dt0=4e-4)
        assert a.as_rows() == b.as_rows()

    def test_joint_p2_sizes22_identical(self):
        pk = PacketSpec(M=2, N=2)
        a = rare.nonintersect_curve(pk, 2, [1, 2], 48, seed=9, dt0=4e-4)
        b = rare.joint_nonintersect_curve((2, 2), 2, [1, 2], 48, seed=9, dt0=4e-4)
        assert a.as_rows() == b.as_rows()

    def test_packet_size_monotonicity(self):
        # xi_hat(2,1) > xi_hat(1,1): more paths avoid less easily, so the
        # (2,1) survival at R=4 is smaller
        a = rare.nonintersect_curve(PacketSpec(M=1, N=1), 2, [1, 2, 4], 384, seed=10, dt0=4e-4)
        b = rare.nonintersect_curve(PacketSpec(M=2, N=1), 2, [1, 2, 4], 384, seed=11, dt0=4e-4)
        assert b.cum_log_probs()[-1] < a.cum_log_probs()[-1]

    def test_extinction_marker(self):
        pk = PacketSpec(M=3, N=3)
        c = rare.nonintersect_curve(pk, 2, rare.default_levels(128.0), 3, seed=12, dt0=4e-4)
        assert c.extinct
        assert c.levels[-1].survived == 0
        assert c.levels[-1].cum_log_prob == -math.inf

    def test_direct_mode_shrinks_population(self):
        pk = PacketSpec(M=1, N=1)
        c = rare.nonintersect_curve(pk, 2, [1, 2, 4, 8], 256, seed=13, dt0=4e-4, splitting=False)
        assert c.mode == "direct"
        atts = [s.attempted for s in c.levels[1:]]
        assert atts[0] == 256
        assert all(a2 <= a1 for a1, a2 in zip(atts, atts[1:]))

    def test_joint_p3_runs_and_is_easier_than_pairwise(self):
        # the joint event contains the pairwise one, so survival is larger
        a = rare.joint_nonintersect_curve((1, 1, 1), 2, [1, 2, 4], 160, seed=14, dt0=4e-4)
        assert a.mode == "joint"
        b = rare.nonintersect_curve(PacketSpec(M=1, N=1), 2, [1, 2, 4], 160, seed=14, dt0=4e-4)
        assert a.cum_log_probs()[-1] >= b.cum_log_probs()[-1] - 0.3


class TestConditioned:
    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            ConditionedRunSpec(r=0.125, b=0.9, c=0.5, n=10)
        with pytest.raises(ConfigError):
            ConditionedRunSpec(r=1.5, b=2.0, c=0.5, n=10)

    def test_infeasible_accept_rate(self):
        spec = ConditionedRunSpec(r=0.01, b=3.0, c=0.9, n=10)
        with pytest.raises(InfeasibleError) as ei:
            rare.conditioned_nonintersect(spec, 3, seed=15)
        assert "analytic_accept_rate" in ei.value.detail

    def test_accept_rate_matches_analytic(self):
        spec = ConditionedRunSpec(r=0.125, b=1.3, c=0.5, n=60)
        res = rare.conditioned_nonintersect(spec, 2, seed=16)
        f = res["accept_rate_analytic"]
        n = 60 * 2 / f  # rough attempt count
        se = math.sqrt(f * (1 - f) / n)
        assert abs(res["accept_rate_per_motion"] - f) < 4 * se + 0.02

    def test_shallower_excursion_helps_avoidance(self):
        res_shallow = rare.conditioned_nonintersect(
            ConditionedRunSpec(r=0.125, b=1.1, c=0.5, n=50), 2, seed=17
        )
        res_deep = rare.conditioned_nonintersect(
            ConditionedRunSpec(r=0.125, b=1.5, c=0.5, n=50), 2, seed=18
        )
        se = math.hypot(res_shallow["stderr"], res_deep["stderr"])
        assert res_shallow["prob"] >= res_deep["prob"] - 2 * se
