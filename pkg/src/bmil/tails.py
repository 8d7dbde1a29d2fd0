"""Lower/upper tails of the intersection mass of the unit ball, and the
empty-annulus probability.

Replicas of l_hat(B(0, radius)) use the pair-count estimator on motions
started at the origin and stopped on exit of B(0, R) (escape-radius renewal
when R is infinite, d = 3 only).  Counting is incremental with an optional
abort cap: once a replica's partial mass passes the cap, its exact value is
irrelevant to every lower-tail grid point below the cap, so it is recorded
as a capped lower bound.  Runs that need exact large values (upper tail,
scaling identity) simply run without a cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError
from .fitting import LogLogFit, weighted_line_fit
from .ilt import ball_volume, iter_close_pairs
from .paths import PacketSpec, SimConfig, sample_path
from .regions import Sphere

__all__ = [
    "TailSample",
    "TailFit",
    "sample_ell_unit",
    "lower_tail_fit",
    "upper_tail_fit",
    "annulus_zero_prob",
    "small_ball_exceedance",
    "small_ball_mass_ratio",
]

_TAG = 301


@dataclass
class TailSample:
    """Replicated pair-count masses of one ball, possibly abort-capped."""

    values: np.ndarray
    aborted: np.ndarray  # True where value is only a lower bound >= cap
    packet: PacketSpec
    d: int
    R: float | None
    eps: float
    dt: float
    ball_radius: float
    cap: float | None
    pair_radii: list = field(default_factory=list)  # optional per-replica arrays

    @property
    def n(self) -> int:
        return len(self.values)

    def exact_values(self) -> np.ndarray:
        return self.values[~self.aborted]


@dataclass
class TailFit:
    side: str  # "lower" | "upper" | "annulus"
    delta_grid: np.ndarray
    empirical_log_prob: np.ndarray
    counts: np.ndarray
    n: int
    fit: LogLogFit
    slope_magnitude: float
    truncated: bool = False
    theta_hat: float | None = None
    model_comparison: dict | None = None


def _simulate_motions(d, dt, R, n_motions, rng, r_escape):
    """Paths from the origin to the exit of B(0, R); returns Trajectories."""
    cfg = SimConfig(
        d=d,
        dt=dt,
        R=R if R is not None else math.inf,
        master_seed=0,
        r_escape=r_escape,
    )
    boundaries = None if cfg.infinite_horizon else [Sphere(np.zeros(d), float(R))]
    return [
        sample_path(cfg, np.zeros(d), boundaries=boundaries, rng=rng)
        for _ in range(n_motions)
    ]


def _scan_replica(
    trajs,
    packet: PacketSpec,
    eps: float,
    ball_radius: float,
    cap: float | None,
    rho_stop: float | None,
    keep_radii: bool,
):
    """Cross-packet pair scan of one replica.

    Returns (value, aborted, rho_max, radii); ``rho_max`` is the largest
    midpoint radius (< 1) seen, for the empty-annulus statistic, valid only
    up to ``rho_stop`` when that early stop triggers.
    """
    vol = ball_volume(trajs[0].d, eps)
    cap_weight = cap * vol if cap is not None else None
    M = packet.M
    weights = [t.sample_weights() for t in trajs]
    acc = 0.0
    rho_max = 0.0
    radii_parts = []
    aborted = False
    # small join chunks so the cap abort fires before candidate enumeration
    # runs away on replicas with large mass
    chunk = 200_000 if (cap is not None or rho_stop is not None) else 4_000_000
    for i in range(M):
        for j in range(M, packet.M + packet.N):
            p1, p2 = trajs[i].points, trajs[j].points
            w1, w2 = weights[i], weights[j]
            for ii, jj in iter_close_pairs(p1, p2, eps, chunk=chunk):
                mid = (p1[ii] + p2[jj]) / 2.0
                r = np.linalg.norm(mid, axis=1)
                inside = r < ball_radius
                if np.any(inside):
                    acc += float((w1[ii] * w2[jj])[inside].sum())
                    if keep_radii:
                        radii_parts.append(r[inside])
                in_unit = r[r < 1.0]
                if len(in_unit):
                    rho_max = max(rho_max, float(in_unit.max()))
                if cap_weight is not None and acc >= cap_weight:
                    aborted = True
                    break
                if rho_stop is not None and rho_max >= rho_stop:
                    aborted = True
                    break
            if aborted:
                break
        if aborted:
            break
    radii = np.concatenate(radii_parts) if radii_parts else np.empty(0)
    return acc / vol, aborted, rho_max, radii


def sample_ell_unit(
    packet: PacketSpec,
    d: int,
    R: float | None,
    n: int,
    seed: int,
    eps: float = 0.08,
    dt: float | None = None,
    ball_radius: float = 1.0,
    cap: float | None = None,
    r_escape: float = 64.0,
    keep_radii_cap: float | None = None,
    progress=None,
) -> TailSample:
    """n independent replicas of the pair-count mass of B(0, ball_radius).

    ``dt`` defaults to the coarsest admissible spacing eps^2/(16 d).  With a
    ``cap``, replicas whose running mass reaches the cap are marked aborted
    (their exact value is not resolved).  ``keep_radii_cap`` stores midpoint
    radii for replicas whose final mass stays below it.
    """
    if packet.p != 2:
        raise ConfigError("tail samples are pairwise (p = 2) runs")
    if R is None and d == 2:
        raise ConfigError("R finite whenever d = 2")
    if dt is None:
        dt = eps * eps / (16.0 * d)
    values = np.empty(n)
    aborted = np.zeros(n, dtype=bool)
    radii_store: list = []
    for rep in range(n):
        g = rngmod.stream(seed, _TAG, rep)
        trajs = _simulate_motions(d, dt, R, packet.total, g, r_escape)
        keep = keep_radii_cap is not None
        val, ab, _rho, radii = _scan_replica(
            trajs, packet, eps, ball_radius, cap, None, keep
        )
        values[rep] = val
        aborted[rep] = ab
        if keep and not ab and val < keep_radii_cap:
            radii_store.append((rep, radii))
        if progress is not None and (rep + 1) % 1000 == 0:
            progress(rep + 1, n)
    return TailSample(
        values=values,
        aborted=aborted,
        packet=packet,
        d=d,
        R=R,
        eps=eps,
        dt=dt,
        ball_radius=ball_radius,
        cap=cap,
        pair_radii=radii_store,
    )


def _tail_points(delta_grid, counts, n, min_count=20):
    keep = counts >= min_count
    truncated = bool(np.any(~keep))
    return keep, truncated


def lower_tail_fit(sample: TailSample, delta_grid) -> TailFit:
    """Fit of log P{mass < delta} against log delta (slope magnitude)."""
    grid = np.sort(np.asarray(delta_grid, dtype=float))[::-1]
    if sample.cap is not None and grid.max() > sample.cap:
        raise ConfigError("delta grid exceeds the abort cap of the sample")
    vals = sample.values
    counts = np.array([(vals < dlt).sum() for dlt in grid])
    keep, truncated = _tail_points(grid, counts, sample.n)
    if keep.sum() < 3:
        raise ConfigError("fewer than 3 resolvable grid points")
    g, c = grid[keep], counts[keep]
    p = c / sample.n
    se_log = np.sqrt((1 - p) / c)
    fit = weighted_line_fit(np.log(g), np.log(p), weights=1.0 / se_log**2)
    return TailFit(
        side="lower",
        delta_grid=g,
        empirical_log_prob=np.log(p),
        counts=c,
        n=sample.n,
        fit=fit,
        slope_magnitude=abs(fit.slope),
        truncated=truncated,
    )


def upper_tail_fit(sample: TailSample, a_grid) -> TailFit:
    """Fit of log P{mass > a} against sqrt(a); slope estimate -theta_hat.

    Also scores the competing power-law model (log P against log a) on the
    same points; ``model_comparison`` reports both residual sums.
    """
    if np.any(sample.aborted):
        raise ConfigError("upper tail needs exact values: rerun without cap")
    grid = np.sort(np.asarray(a_grid, dtype=float))
    vals = sample.values
    counts = np.array([(vals > a).sum() for a in grid])
    keep, truncated = _tail_points(grid, counts, sample.n)
    if keep.sum() < 3:
        raise ConfigError("fewer than 3 resolvable grid points")
    g, c = grid[keep], counts[keep]
    p = c / sample.n
    se_log = np.sqrt((1 - p) / c)
    w = 1.0 / se_log**2
    fit_sqrt = weighted_line_fit(np.sqrt(g), np.log(p), weights=w)
    fit_pow = weighted_line_fit(np.log(g), np.log(p), weights=w)

    def _wsse(fit, x):
        resid = np.log(p) - fit.slope * x - fit.intercept
        return float((w * resid**2).sum())

    sse_sqrt = _wsse(fit_sqrt, np.sqrt(g))
    sse_pow = _wsse(fit_pow, np.log(g))
    theta = -fit_sqrt.slope
    return TailFit(
        side="upper",
        delta_grid=g,
        empirical_log_prob=np.log(p),
        counts=c,
        n=sample.n,
        fit=fit_sqrt,
        slope_magnitude=abs(fit_sqrt.slope),
        truncated=truncated,
        theta_hat=theta,
        model_comparison={
            "sse_sqrt": sse_sqrt,
            "sse_power": sse_pow,
            "favors_sqrt": bool(sse_sqrt < sse_pow),
            "r2_sqrt": fit_sqrt.r_squared,
            "r2_power": fit_pow.r_squared,
        },
    )


def annulus_zero_prob(
    delta_grid,
    packet: PacketSpec,
    d: int,
    R: float | None,
    n: int,
    seed: int,
    eps: float = 0.08,
    dt: float | None = None,
    r_escape: float = 64.0,
) -> TailFit:
    """P{no near pair with midpoint in the annulus delta < |x| < 1} per delta.

    Per replica only the largest midpoint radius below 1 matters; scanning
    stops early once it exceeds the largest grid delta (the event is then
    decided for the whole grid).
    """
    grid = np.sort(np.asarray(delta_grid, dtype=float))[::-1]
    if grid.max() >= 1.0 or grid.min() <= 0:
        raise ConfigError("annulus grid must lie in (0, 1)")
    if dt is None:
        dt = eps * eps / (16.0 * d)
    delta_max = float(grid.max())
    rho = np.empty(n)
    for rep in range(n):
        g = rngmod.stream(seed, _TAG, rep)
        trajs = _simulate_motions(d, dt, R, packet.total, g, r_escape)
        _val, _ab, rho_max, _ = _scan_replica(
            trajs, packet, eps, 0.0, None, delta_max, False
        )
        rho[rep] = rho_max
    counts = np.array([(rho <= dlt).sum() for dlt in grid])
    keep = counts >= 1
    if keep.sum() < 3:
        raise ConfigError("fewer than 3 nonzero grid points")
    gkeep, c = grid[keep], counts[keep]
    p = c / n
    se_log = np.sqrt(np.maximum(1 - p, 1e-12) / c)
    fit = weighted_line_fit(np.log(gkeep), np.log(p), weights=1.0 / se_log**2)
    return TailFit(
        side="annulus",
        delta_grid=gkeep,
        empirical_log_prob=np.log(p),
        counts=c,
        n=n,
        fit=fit,
        slope_magnitude=abs(fit.slope),
        truncated=bool(np.any(~keep)),
    )


def small_ball_exceedance(
    packet: PacketSpec,
    d: int,
    R: float | None,
    n: int,
    seed: int,
    ball_radius: float,
    threshold: float,
    r_escape: float = 64.0,
    dt: float | None = None,
) -> dict:
    """P{grid-product mass of B(0, ball_radius) > threshold} over n replicas.

    Uses the grid-product estimator at h = ball_radius/8 restricted to a
    small box around the origin, which is linear in the path length and
    resolves masses far below the pair-count kernel floor.
    """
    from .ilt import ilt_grid, occupation_grid
    from .regions import Ball, Box

    h = ball_radius / 8.0
    if dt is None:
        dt = (3.0 * h) ** 2 / d  # spatial step about three cells
    box = Box(np.full(d, -1.5 * ball_radius), np.full(d, 1.5 * ball_radius))
    ball = Ball(np.zeros(d), ball_radius)
    M = packet.M
    exceed = 0
    for rep in range(n):
        g = rngmod.stream(seed, _TAG, 5, rep)
        trajs = _simulate_motions(d, dt, R, packet.total, g, r_escape)
        grids = [occupation_grid(t, h, region=box) for t in trajs]
        total = 0.0
        for i in range(M):
            for j in range(M, packet.total):
                total += ilt_grid(grids[i], grids[j], ball).value
        if total > threshold:
            exceed += 1
    freq = exceed / n
    return {
        "freq": freq,
        "stderr": math.sqrt(max(freq * (1 - freq), 1e-12) / n),
        "n": n,
        "threshold": threshold,
        "ball_radius": ball_radius,
    }


def small_ball_mass_ratio(sample: TailSample, delta: float) -> dict:
    """Among replicas with mass < delta: median of mass(B(0, s))/mass(U),
    s = delta^{1/(4-d)}; needs stored pair radii."""
    if not sample.pair_radii:
        raise ConfigError("sample was collected without pair radii")
    s = delta ** (1.0 / (4 - sample.d))
    ratios = []
    for rep, radii in sample.pair_radii:
        if sample.aborted[rep] or sample.values[rep] >= delta:
            continue
        if len(radii) == 0:
            continue
        ratios.append(float((radii < s).sum() / len(radii)))
    return {
        "n_conditioned": len(ratios),
        "median_ratio": float(np.median(ratios)) if ratios else math.nan,
        "s": s,
    }
