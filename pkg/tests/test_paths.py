import math

import numpy as np
import pytest

from bmil import analytic, paths, rng
from bmil.errors import ConfigError
from bmil.paths import PacketSpec, SimConfig, Trajectory
from bmil.regions import BoxBoundary, Sphere


def _cfg(**kw):
    base = dict(d=2, dt=2**-10, T=1.0, R=4.0, master_seed=0)
    base.update(kw)
    return SimConfig(**base)


class TestConfig:
    def test_infinite_R_rejected_in_d2(self):
        with pytest.raises(ConfigError):
            SimConfig(d=2, dt=1e-3, R=math.inf)

    def test_R_must_exceed_one(self):
        with pytest.raises(ConfigError):
            SimConfig(d=3, dt=1e-3, R=0.5)

    def test_bad_dimension(self):
        with pytest.raises(ConfigError):
            SimConfig(d=4, dt=1e-3, R=2.0)

    def test_packet_sizes(self):
        pk = PacketSpec(M=2, N=3)
        assert pk.sizes == (2, 3) and pk.total == 5
        with pytest.raises(ConfigError):
            PacketSpec(M=0, N=1)
        with pytest.raises(ConfigError):
            PacketSpec(M=1, N=1, p=3, sizes=(1, 1))


class TestSamplePath:
    def test_step_count_fixed_horizon(self):
        tr = paths.sample_path(_cfg(), np.zeros(2), rng=rng.stream(0, 1))
        assert len(tr.times) == 1025
        assert tr.times[-1] == 1.0
        assert np.array_equal(tr.points[0], np.zeros(2))

    def test_determinism(self):
        a = paths.sample_path(_cfg(), np.zeros(2), rng=rng.stream(5, 9))
        b = paths.sample_path(_cfg(), np.zeros(2), rng=rng.stream(5, 9))
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.times, b.times)

    def test_mean_square_displacement(self):
        # E|W(1)|^2 = d * t, checked against the sample-variance oracle
        n = 4000
        cfg = _cfg(dt=2**-6, R=64.0)
        g = rng.stream(1, 2)
        sq = np.array(
            [
                np.sum(paths.sample_path(cfg, np.zeros(2), rng=g).points[-1] ** 2)
                for _ in range(n)
            ]
        )
        se = sq.std(ddof=1) / math.sqrt(n)
        assert abs(sq.mean() - 2.0) < 3 * se

    def test_boundary_stop_lands_on_sphere(self):
        cfg = _cfg(T=None)
        tr = paths.sample_path(
            cfg, np.array([2.0, 0.0]),
            boundaries=[Sphere(np.zeros(2), 1.0), Sphere(np.zeros(2), 4.0)],
            rng=rng.stream(2, 3),
        )
        r_end = np.linalg.norm(tr.points[-1])
        assert min(abs(r_end - 1.0), abs(r_end - 4.0)) < 1e-9

    def test_inner_hit_frequency_matches_closed_form(self):
        n = 20_000
        dt = paths.hitting_dt_rule(1.0)
        freq, se = paths.inner_hit_frequency(2, 2.0, 1.0, 4.0, n, dt, rng.stream(4, 1))
        f = analytic.hitting_prob_f(analytic.HittingQuery(2, 2.0, 1.0, 4.0))
        assert abs(freq - f) < 3 * se + 0.006

    def test_no_stop_rule_rejected(self):
        with pytest.raises(ConfigError):
            paths.sample_path(_cfg(T=None), np.zeros(2), rng=rng.stream(0, 0))

    def test_renewal_mode_terminates(self):
        cfg = SimConfig(d=3, dt=1e-2, R=math.inf, r_escape=4.0)
        tr = paths.sample_path(cfg, np.zeros(3), rng=rng.stream(3, 3))
        assert np.linalg.norm(tr.points[-1]) >= 4.0 - 1e-9

    def test_renewal_return_probability(self):
        # restart frequency from the first escape at 2*r_ret is r_ret/|x| = 1/2
        cfg = SimConfig(d=3, dt=5e-3, R=math.inf, r_escape=4.0)
        n = 600
        g = rng.stream(9, 9)
        restarted = sum(
            bool(paths.sample_path(cfg, np.zeros(3), rng=g).restarts) for _ in range(n)
        )
        freq = restarted / n
        # each escape restarts with p = 1/2, and a restarted path may escape
        # again: P{>=1 restart} = 1/2 / (1 - ...) bounded in (0.45, 0.75)
        assert 0.4 < freq < 0.8


class TestRefine:
    def test_identity_depth_zero(self):
        tr = paths.sample_path(_cfg(), np.zeros(2), rng=rng.stream(8, 0))
        assert paths.refine_bridge(tr, 3, 0, rng.stream(8, 1)) is tr

    def test_endpoints_pinned(self):
        tr = paths.sample_path(_cfg(), np.zeros(2), rng=rng.stream(8, 2))
        ref = paths.refine_bridge(tr, 5, 4, rng.stream(8, 3))
        assert len(ref.times) == len(tr.times) + 15
        assert np.array_equal(ref.points[5], tr.points[5])
        assert np.array_equal(ref.points[5 + 16], tr.points[6])
        assert ref.refinement_depth[5] == 4

    def test_midpoint_variance(self):
        # Var(midpoint - endpoint average) = dt/4 per coordinate
        tr = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [1.0, 1.0]]))
        g = rng.stream(12, 0)
        n = 20_000
        mids = np.empty((n, 2))
        for i in range(n):
            ref = paths.refine_bridge(tr, 0, 1, g)
            mids[i] = ref.points[1] - (tr.points[0] + tr.points[1]) / 2
        var = mids.var(axis=0, ddof=1)
        se = var.std() / math.sqrt(n) + 0.25 * math.sqrt(2 / n)
        assert np.all(np.abs(var - 0.25) < 4 * se + 0.01)

    def test_refinement_preserves_distribution(self):
        # KS test on |W(T)| with and without refinement
        from scipy import stats as sps

        cfg = _cfg(dt=2**-6, R=64.0)
        g = rng.stream(13, 0)
        plain = []
        refined = []
        for i in range(800):
            t = paths.sample_path(cfg, np.zeros(2), rng=g)
            plain.append(np.linalg.norm(t.points[-1]))
            t2 = paths.sample_path(cfg, np.zeros(2), rng=g)
            t2 = paths.refine_bridge(t2, 10, 3, g)
            refined.append(np.linalg.norm(t2.points[-1]))
        assert sps.ks_2samp(plain, refined).pvalue > 0.001


class TestFirstHit:
    def test_no_crossing_absent(self):
        tr = Trajectory(
            np.array([0.0, 1.0]), np.array([[0.1, 0.0], [0.0, 0.1]])
        )
        assert paths.first_hit(tr, [Sphere(np.zeros(2), 2.0)]) is None

    def test_linear_interpolation_exact(self):
        tr = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [3.0, 0.0]]))
        ev = paths.first_hit(tr, [Sphere(np.zeros(2), 1.0)])
        assert np.allclose(ev.hit_point, [1.0, 0.0], atol=1e-12)
        assert ev.hit_time == pytest.approx(1 / 3)
        assert ev.hit_index == 0

    def test_ordered_sequence_absent_branch(self):
        # hits the inner sphere only: ordered (outer, inner) never completes
        tr = Trajectory(
            np.array([0.0, 1.0]),
            np.array([[1.5, 0.0], [0.0, 0.0]]),
        )
        seq = [Sphere(np.zeros(2), 2.0), Sphere(np.zeros(2), 1.0)]
        assert paths.first_hit(tr, seq) is None

    def test_composite_order_within_segment(self):
        tr = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [5.0, 0.0]]))
        seq = [Sphere(np.zeros(2), 1.0), Sphere(np.zeros(2), 2.0)]
        ev = paths.first_hit(tr, seq)
        assert ev is not None
        assert ev.hit_time == pytest.approx(2 / 5)
        assert len(ev.stages) == 2

    def test_box_boundary(self):
        tr = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, 0.0], [2.0, 0.0]]))
        ev = paths.first_hit(tr, [BoxBoundary([-1, -1], [1, 1])])
        assert ev.hit_time == pytest.approx(0.5)
        assert np.allclose(ev.hit_point, [1.0, 0.0])

    def test_hitting_order_monotonicity(self):
        # composite via a closer intermediate sphere cannot be later
        cfg = _cfg(T=None, R=16.0)
        g = rng.stream(21, 0)
        checked = 0
        for i in range(40):
            tr = paths.sample_path(
                cfg, np.array([1.0, 0.0]), boundaries=[Sphere(np.zeros(2), 8.0)], rng=g
            )
            e_mid = paths.first_hit(tr, [Sphere(np.zeros(2), 2.0), Sphere(np.zeros(2), 8.0)])
            e_close = paths.first_hit(tr, [Sphere(np.zeros(2), 1.5), Sphere(np.zeros(2), 8.0)])
            if e_mid is not None and e_close is not None:
                assert e_close.hit_time <= e_mid.hit_time + 1e-12
                checked += 1
        assert checked > 10


class TestUniformSphere:
    def test_radius_exact(self):
        for d, r in [(2, 1.0), (3, 2.0)]:
            pts = paths.sample_uniform_sphere_many(d, r, 500, rng.stream(31, d))
            assert np.allclose(np.linalg.norm(pts, axis=1), r, rtol=1e-12)

    def test_angle_uniform_chi2(self):
        from scipy import stats as sps

        pts = paths.sample_uniform_sphere_many(2, 1.0, 20_000, rng.stream(31, 7))
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        hist, _ = np.histogram(ang, bins=36, range=(-math.pi, math.pi))
        p = sps.chisquare(hist).pvalue
        assert p > 0.001

    def test_coordinate_symmetry(self):
        pts = paths.sample_uniform_sphere_many(3, 2.0, 30_000, rng.stream(31, 9))
        se = 2.0 / math.sqrt(len(pts))
        assert np.all(np.abs(pts.mean(axis=0)) < 3 * se)
        # E z^2 = r^2/3 by symmetry
        z2 = pts[:, 2] ** 2
        assert abs(z2.mean() - 4 / 3) < 3 * z2.std(ddof=1) / math.sqrt(len(pts))
