import math

import numpy as np
import pytest

from bmil import rng, tails
from bmil.errors import ConfigError
from bmil.paths import PacketSpec
from bmil.tails import TailSample


def _synthetic_sample(values, **kw):
    base = dict(
        aborted=np.zeros(len(values), bool),
        packet=PacketSpec(M=1, N=1),
        d=2,
        R=2.0,
        eps=0.1,
        dt=1e-4,
        ball_radius=1.0,
        cap=None,
    )
    base.update(kw)
    return TailSample(values=np.asarray(values, dtype=float), **base)


class TestLowerTailFit:
    def test_synthetic_power_law(self):
        # P{X < delta} = delta^{3/2} via inverse CDF
        g = rng.stream(50, 1)
        u = g.random(100_000)
        sample = _synthetic_sample(u ** (2 / 3))
        grid = [2.0**-e for e in range(1, 12)]
        fit = tails.lower_tail_fit(sample, grid)
        assert fit.slope_magnitude == pytest.approx(1.5, abs=0.05)

    def test_grid_truncation(self):
        g = rng.stream(50, 2)
        sample = _synthetic_sample(g.random(2000))
        grid = [2.0**-e for e in range(1, 16)]
        fit = tails.lower_tail_fit(sample, grid)
        assert fit.truncated
        assert fit.counts.min() >= 20

    def test_cap_guard(self):
        sample = _synthetic_sample(np.linspace(0, 1, 1000), cap=0.25)
        with pytest.raises(ConfigError):
            tails.lower_tail_fit(sample, [0.5, 0.25, 0.125])

    def test_capped_values_dont_enter_low_grid(self):
        g = rng.stream(50, 3)
        vals = g.random(50_000)
        aborted = vals >= 0.5
        sample = _synthetic_sample(np.where(aborted, 0.5, vals), aborted=aborted, cap=0.5)
        fit = tails.lower_tail_fit(sample, [2.0**-e for e in range(2, 10)])
        assert fit.slope_magnitude == pytest.approx(1.0, abs=0.06)


class TestUpperTailFit:
    def test_synthetic_theta_recovery(self):
        # P{X > a} = exp(-2 sqrt(a)): X = (E/2)^2
        g = rng.stream(51, 1)
        vals = (g.exponential(size=100_000) / 2.0) ** 2
        sample = _synthetic_sample(vals)
        grid = np.quantile(vals, 1 - np.geomspace(0.4, 4e-4, 12))
        fit = tails.upper_tail_fit(sample, grid)
        assert fit.theta_hat == pytest.approx(2.0, abs=0.1)
        assert fit.model_comparison["favors_sqrt"]

    def test_power_law_not_mistaken(self):
        # Pareto tail P{X > a} = a^-2 should favor the power model
        g = rng.stream(51, 2)
        vals = g.random(100_000) ** (-1 / 2)
        sample = _synthetic_sample(vals)
        grid = np.quantile(vals, 1 - np.geomspace(0.3, 4e-4, 12))
        fit = tails.upper_tail_fit(sample, grid)
        assert not fit.model_comparison["favors_sqrt"]

    def test_capped_sample_rejected(self):
        sample = _synthetic_sample(
            np.ones(1000), aborted=np.ones(1000, bool), cap=1.0
        )
        with pytest.raises(ConfigError):
            tails.upper_tail_fit(sample, [0.5, 1.0, 2.0])


class TestSampler:
    def test_values_nonnegative_and_deterministic(self):
        pk = PacketSpec(M=1, N=1)
        s1 = tails.sample_ell_unit(pk, 2, 2.0, 30, seed=52, eps=0.15)
        s2 = tails.sample_ell_unit(pk, 2, 2.0, 30, seed=52, eps=0.15)
        assert np.array_equal(s1.values, s2.values)
        assert np.all(s1.values >= 0)

    def test_cap_marks_aborted(self):
        pk = PacketSpec(M=1, N=1)
        s = tails.sample_ell_unit(pk, 2, 2.0, 40, seed=53, eps=0.15, cap=0.05)
        assert s.aborted.any()
        assert np.all(s.values[s.aborted] >= 0.05 * 0.8)

    def test_uncapped_matches_paircount_estimator(self):
        # the incremental scan and ilt_paircount agree on the same paths
        from bmil import ilt, paths
        from bmil.paths import SimConfig
        from bmil.regions import Ball, Sphere

        pk = PacketSpec(M=1, N=1)
        eps = 0.15
        dt = eps * eps / 32
        s = tails.sample_ell_unit(pk, 2, 2.0, 4, seed=54, eps=eps)
        for rep in range(4):
            g = rng.stream(54, tails._TAG, rep)
            cfg = SimConfig(d=2, dt=dt, R=2.0)
            t1 = paths.sample_path(cfg, np.zeros(2), boundaries=[Sphere(np.zeros(2), 2.0)], rng=g)
            t2 = paths.sample_path(cfg, np.zeros(2), boundaries=[Sphere(np.zeros(2), 2.0)], rng=g)
            direct = ilt.ilt_paircount(t1, t2, Ball(np.zeros(2), 1.0), eps)
            assert s.values[rep] == pytest.approx(direct.value, rel=1e-9)

    def test_sqrt_n_stderr_scaling(self):
        pk = PacketSpec(M=1, N=1)
        s = tails.sample_ell_unit(pk, 2, 2.0, 160, seed=55, eps=0.2)
        half = s.values[:40]
        full = s.values
        se_half = half.std(ddof=1) / math.sqrt(len(half))
        se_full = full.std(ddof=1) / math.sqrt(len(full))
        assert se_full < se_half

    def test_d3_infinite_horizon_mode(self):
        pk = PacketSpec(M=1, N=1)
        s = tails.sample_ell_unit(pk, 3, None, 12, seed=56, eps=0.2, r_escape=8.0)
        assert np.all(s.values >= 0)
        assert np.isfinite(s.values).all()


class TestAnnulus:
    def test_monotone_in_delta(self):
        pk = PacketSpec(M=1, N=1)
        fit = tails.annulus_zero_prob(
            [0.5, 0.3535533905932738, 0.25], pk, 2, 2.0, 300, seed=57, eps=0.06
        )
        probs = np.exp(fit.empirical_log_prob)
        deltas = fit.delta_grid
        order = np.argsort(deltas)
        assert np.all(np.diff(probs[order]) >= -1e-12)

    def test_slope_bounded_by_exponent(self):
        # kernel must stay well below the smallest annulus gap or the
        # detection tolerance inflates the slope; grid kept shallow
        pk = PacketSpec(M=1, N=1)
        grid = [0.5, 0.3535533905932738, 0.25, 0.1767766952966369, 0.125]
        fit = tails.annulus_zero_prob(grid, pk, 2, 2.0, 800, seed=58, eps=0.03)
        # one-sided comparison against xi_2(1,1) = 5/4
        assert fit.slope_magnitude <= 1.25 + 0.2 + 2 * fit.fit.slope_stderr


class TestSmallBallExceedance:
    def test_stretched_exponential_bound(self):
        # P{mass of B(0, delta^{1+eps}) > delta^{4-d}} <= exp(-delta^{-eps/4});
        # at delta = 2^-4, eps = 0.5 the bound evaluates to 0.244 and the
        # measured frequency (~0.2) sits below it; the asymptotic regime where
        # the bound becomes tiny is far beyond desk resolution
        pk = PacketSpec(M=1, N=1)
        delta = 2.0**-4
        eps = 0.5
        res = tails.small_ball_exceedance(
            pk, 2, 1.5, 700, seed=61,
            ball_radius=delta ** (1 + eps), threshold=delta ** (4 - 2),
        )
        bound = math.exp(-(delta ** (-eps / 4)))
        assert res["freq"] <= bound
        # and the exceedance becomes rare for a 4x smaller ball
        res2 = tails.small_ball_exceedance(
            pk, 2, 1.5, 700, seed=62,
            ball_radius=delta ** (1 + eps) / 4, threshold=delta ** (4 - 2),
        )
        assert res2["freq"] < res["freq"]
        assert res2["freq"] <= 0.01


class TestStrategyRatio:
    def test_small_ball_dominates_conditioned_mass(self):
        pk = PacketSpec(M=1, N=1)
        delta = 0.05
        s = tails.sample_ell_unit(
            pk, 2, 2.0, 250, seed=59, eps=0.1, cap=2 * delta, keep_radii_cap=delta
        )
        res = tails.small_ball_mass_ratio(s, delta)
        assert res["n_conditioned"] >= 20
        assert res["median_ratio"] > 0.5
