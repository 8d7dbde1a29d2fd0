"""Coarse thin-cell spectrum of a local-time field, pointwise dimension
read-outs, and hitting tests against percolation limit sets.

The coarse statistic counts, per scale k, the dyadic cubes hit by both
motions whose measured ball mass is at most 2**(-k*a).  Cells with mass
exactly zero are maximally thin at this resolution; they are included in the
counts but also reported separately, and spectrum slopes are fitted on the
nonzero-thin counts (zero cells conflate the resolution floor with genuine
thinness and their population grows like the full both-hit count).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError
from .fitting import LogLogFit, weighted_line_fit
from .ilt import LocalTimeField, pack_cells, unpack_cells
from .percolation import generate_coupled_percolation, generate_percolation, hit_test

__all__ = [
    "ThinCellSet",
    "SpectrumGrid",
    "thin_cells",
    "coarse_thin_counts",
    "aggregate_spectra",
    "fit_spectrum",
    "pointwise_dimension",
    "pointwise_dimension_from_grids",
    "PointwiseDimension",
    "intersect_with_percolation",
    "hit_frequency_coupled",
    "admissible_fraction",
]

_TAG = 401


@dataclass
class ThinCellSet:
    """Cubes at scale k that are both-hit and measure at most 2**(-k*a)."""

    a: float
    k: int
    cells: np.ndarray  # (n, d) integer indices
    zero_cells: int
    horizon_flag: bool

    @property
    def count(self) -> int:
        return len(self.cells)


def thin_cells(field: LocalTimeField, a: float, k: int, include_zero=True) -> ThinCellSet:
    lev = field.level(k)
    thr = 2.0 ** (-k * a)
    mask = lev.masses <= thr
    if not include_zero:
        mask &= lev.masses > 0
    idx = unpack_cells(lev.cube_keys[mask], field.d)
    zero = int((lev.masses == 0).sum())
    return ThinCellSet(
        a=a, k=k, cells=idx, zero_cells=zero, horizon_flag=field.horizon is not None
    )


@dataclass
class SpectrumGrid:
    """Counts N_k(a) (zero-inclusive), zero-cell counts, and fitted slopes."""

    a_grid: np.ndarray
    k_grid: np.ndarray
    counts: np.ndarray  # (n_a, n_k) mean counts over replicas
    zero_counts: np.ndarray  # (n_k,) mean zero-cell counts
    hit_counts: np.ndarray  # (n_k,) mean both-hit cube counts
    n_replicas: int = 1
    counts_stack: np.ndarray | None = None  # (n_rep, n_a, n_k)
    zero_stack: np.ndarray | None = None
    fits: dict = field(default_factory=dict)  # a -> LogLogFit (nonzero counts)
    f_hat: np.ndarray | None = None
    f_hat_stderr: np.ndarray | None = None
    prediction: np.ndarray | None = None

    def nonzero_counts(self) -> np.ndarray:
        return np.maximum(self.counts - self.zero_counts[None, :], 0.0)


def coarse_thin_counts(field: LocalTimeField, a_grid, k_grid) -> SpectrumGrid:
    """Counts for one field realization (one path pair)."""
    a_grid = np.asarray(sorted(a_grid), dtype=float)
    k_grid = np.asarray(sorted(k_grid), dtype=int)
    missing = [int(k) for k in k_grid if k not in field.levels]
    if missing:
        raise ConfigError(f"field does not cover levels {missing}")
    counts = np.zeros((len(a_grid), len(k_grid)))
    zeros = np.zeros(len(k_grid))
    hits = np.zeros(len(k_grid))
    for jk, k in enumerate(k_grid):
        lev = field.level(int(k))
        zeros[jk] = (lev.masses == 0).sum()
        hits[jk] = len(lev.masses)
        for ja, a in enumerate(a_grid):
            thr = 2.0 ** (-int(k) * a)
            counts[ja, jk] = (lev.masses <= thr).sum()
    return SpectrumGrid(
        a_grid=a_grid,
        k_grid=k_grid,
        counts=counts,
        zero_counts=zeros,
        hit_counts=hits,
        n_replicas=1,
        counts_stack=counts[None, :, :],
        zero_stack=zeros[None, :],
    )


def aggregate_spectra(grids) -> SpectrumGrid:
    """Average counts over independent field realizations."""
    grids = list(grids)
    if not grids:
        raise ConfigError("no spectra to aggregate")
    a_grid, k_grid = grids[0].a_grid, grids[0].k_grid
    for g in grids[1:]:
        if not np.array_equal(g.a_grid, a_grid) or not np.array_equal(g.k_grid, k_grid):
            raise ConfigError("grids must share (a, k) axes")
    stack = np.concatenate([g.counts_stack for g in grids], axis=0)
    zstack = np.concatenate([g.zero_stack for g in grids], axis=0)
    hit = np.mean([g.hit_counts for g in grids], axis=0)
    return SpectrumGrid(
        a_grid=a_grid,
        k_grid=k_grid,
        counts=stack.mean(axis=0),
        zero_counts=zstack.mean(axis=0),
        hit_counts=hit,
        n_replicas=stack.shape[0],
        counts_stack=stack,
        zero_stack=zstack,
    )


def fit_spectrum(
    grid: SpectrumGrid,
    min_count: float = 1.0,
    seed: int = 0,
    n_boot: int = 100,
    prediction_xi: float | None = None,
) -> SpectrumGrid:
    """Fit log2 of the nonzero-thin counts against k, per a.

    ``f_hat`` holds the slopes (clipped to [0, d] only in reports, kept raw
    here); stderr comes from a bootstrap over replicas when available.
    """
    nz = grid.nonzero_counts()
    f_hat = np.full(len(grid.a_grid), np.nan)
    f_se = np.full(len(grid.a_grid), np.nan)
    jboot = rngmod.stream(seed, _TAG, 7)
    for ja, a in enumerate(grid.a_grid):
        usable = nz[ja] >= min_count
        if usable.sum() < 3:
            continue
        ks = grid.k_grid[usable].astype(float)
        ys = np.log2(nz[ja][usable])
        fit = weighted_line_fit(ks, ys)
        grid.fits[float(a)] = fit
        f_hat[ja] = fit.slope
        if grid.counts_stack is not None and grid.n_replicas >= 4:
            slopes = []
            n_rep = grid.counts_stack.shape[0]
            for _ in range(n_boot):
                pick = jboot.integers(0, n_rep, size=n_rep)
                mc = grid.counts_stack[pick, ja, :].mean(axis=0)
                mz = grid.zero_stack[pick, :].mean(axis=0)
                v = np.maximum(mc - mz, 0.0)
                ok = usable & (v > 0)
                if ok.sum() < 3:
                    continue
                try:
                    slopes.append(
                        weighted_line_fit(
                            grid.k_grid[ok].astype(float), np.log2(v[ok])
                        ).slope
                    )
                except ConfigError:
                    continue
            if len(slopes) >= 10:
                f_se[ja] = float(np.std(slopes, ddof=1))
        else:
            f_se[ja] = grid.fits[float(a)].slope_stderr
    grid.f_hat = f_hat
    grid.f_hat_stderr = f_se
    if prediction_xi is not None:
        c = 4 - _dim_from_grid(grid)
        grid.prediction = c * prediction_xi / grid.a_grid + c - prediction_xi
    return grid


def _dim_from_grid(grid: SpectrumGrid) -> int:
    # the anchor dimension is implicit; infer from typical value a >= 4-d
    # callers pass prediction_xi only for d = 2 runs
    return 2


@dataclass(frozen=True)
class PointwiseDimension:
    ls_slope: float
    min_two_point: float
    max_two_point: float
    scales: np.ndarray
    masses: np.ndarray
    infinite: bool  # a zero mass inside the window
    min_log_ratio: float = math.inf  # min over r of log mass / log r


def pointwise_dimension(field: LocalTimeField, x, scales) -> PointwiseDimension:
    """Slope of log mass(B(x, 2^-k)) against log 2^-k over the scale window.

    The ball around x is approximated by the measured ball of the level-k
    cube containing x.  Min/max two-point slopes over consecutive scales are
    the liminf/limsup proxies.  Any zero mass in the window marks the point
    as infinitely thin at this resolution.
    """
    ks = sorted(int(k) for k in scales)
    if len(ks) < 2:
        raise ConfigError("need at least two scales")
    k_finest = max(ks)
    if field.ball_mass_at(k_finest, x) is None:
        raise ConfigError("x must lie in a both-hit cube at the finest scale")
    masses = []
    for k in ks:
        m = field.ball_mass_at(k, x)
        masses.append(math.nan if m is None else m)
    masses = np.asarray(masses, dtype=float)
    rs = 2.0 ** (-np.asarray(ks, dtype=float))
    ok = np.isfinite(masses)
    if np.any(masses[ok] == 0.0):
        return PointwiseDimension(
            math.inf, math.inf, math.inf, rs, masses, infinite=True
        )
    logr = np.log(rs[ok])
    logm = np.log(masses[ok])
    two_pt = np.diff(logm) / np.diff(logr)
    if len(logr) >= 3:
        ls = weighted_line_fit(logr, logm).slope
    else:
        ls = float(two_pt.mean())
    return PointwiseDimension(
        ls_slope=float(ls),
        min_two_point=float(two_pt.min()),
        max_two_point=float(two_pt.max()),
        scales=rs,
        masses=masses,
        infinite=False,
        min_log_ratio=float((logm / logr).min()),
    )


def pointwise_dimension_from_grids(
    g1, g2, x, radii
) -> PointwiseDimension:
    """Pointwise slopes from one shared fine lattice (nested by construction).

    Ball masses for every radius are summed over the same product-support
    cells (center-in-ball inclusion), so mass is non-decreasing in r and the
    two-point slopes cannot go negative from resolution mismatch.
    """
    if not g1.compatible(g2):
        raise ConfigError("grids must share cell side and origin")
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    common, i1, i2 = np.intersect1d(
        g1.keys, g2.keys, assume_unique=True, return_indices=True
    )
    if len(common) == 0:
        return PointwiseDimension(math.inf, math.inf, math.inf, radii,
                                  np.zeros(len(radii)), infinite=True)
    prod = g1.masses[i1] * g2.masses[i2] / g1.h ** g1.d
    centers = g1.origin + (unpack_cells(common, g1.d) + 0.5) * g1.h
    dist = np.linalg.norm(centers - np.asarray(x, dtype=float), axis=1)
    masses = np.array([prod[dist < r].sum() for r in radii])
    if np.any(masses == 0.0):
        return PointwiseDimension(math.inf, math.inf, math.inf, radii, masses,
                                  infinite=True)
    logr = np.log(radii)
    logm = np.log(masses)
    two_pt = np.diff(logm) / np.diff(logr)
    ls = weighted_line_fit(logr, logm).slope if len(radii) >= 3 else float(two_pt.mean())
    return PointwiseDimension(
        ls_slope=float(ls),
        min_two_point=float(two_pt.min()),
        max_two_point=float(two_pt.max()),
        scales=radii,
        masses=masses,
        infinite=False,
        min_log_ratio=float((logm / logr).min()),
    )


def intersect_with_percolation(
    cells: ThinCellSet, d: int, gamma: float, depth: int, n_trees: int, seed: int
) -> dict:
    """Frequency over independent trees of the limit set meeting the cells."""
    if cells.k > depth:
        raise ConfigError("cells lie deeper than the requested trees")
    if cells.count == 0:
        return {"freq": 0.0, "stderr": 0.0, "n_trees": n_trees, "empty_cells": True}
    hits = 0
    for t in range(n_trees):
        g = rngmod.stream(seed, _TAG, 1, t)
        tree = generate_percolation(d, gamma, depth, g)
        if hit_test(tree, cells.k, cells.cells)["overall"]:
            hits += 1
    freq = hits / n_trees
    se = math.sqrt(max(freq * (1 - freq), 1e-12) / n_trees)
    return {"freq": freq, "stderr": se, "n_trees": n_trees, "empty_cells": False}


def hit_frequency_coupled(
    cells: ThinCellSet, d: int, gammas, depth: int, n_trees: int, seed: int
) -> dict:
    """Hit frequencies for several gammas under the shared-uniform coupling.

    The coupling makes the per-tree indicators monotone in gamma, so
    frequency differences are paired and their stderr reflects only the
    cubes where the two exponents disagree.
    """
    gammas = sorted(set(float(g) for g in gammas))
    if cells.count == 0:
        return {
            "freqs": {g: 0.0 for g in gammas},
            "n_trees": n_trees,
            "empty_cells": True,
        }
    ind = {g: np.zeros(n_trees, dtype=bool) for g in gammas}
    for t in range(n_trees):
        g = rngmod.stream(seed, _TAG, 2, t)
        trees = generate_coupled_percolation(d, gammas, depth, g)
        for gam in gammas:
            ind[gam][t] = hit_test(trees[gam], cells.k, cells.cells)["overall"]
    out = {
        "freqs": {g: float(ind[g].mean()) for g in gammas},
        "stderrs": {
            g: float(math.sqrt(max(ind[g].mean() * (1 - ind[g].mean()), 1e-12) / n_trees))
            for g in gammas
        },
        "n_trees": n_trees,
        "empty_cells": False,
        "paired_diffs": {},
    }
    for i in range(len(gammas) - 1):
        lo_g, hi_g = gammas[i], gammas[i + 1]
        diff = ind[lo_g].astype(float) - ind[hi_g].astype(float)
        out["paired_diffs"][(lo_g, hi_g)] = {
            "mean": float(diff.mean()),
            "stderr": float(diff.std(ddof=1) / math.sqrt(n_trees)),
            "monotone_ok": bool(np.all(diff >= 0)),
        }
    return out


def admissible_fraction(traj1, traj2, k: int, anchor, eps_exp: float = 0.25) -> dict:
    """Fraction of both-hit level-k cubes never revisited after first leaving
    the enlarged ball B(center(E), 2**(-(1-eps_exp)*k)).

    Sample-based: entries/exits are judged on the sampled points, adequate
    when the step size is well below the cube side.
    """
    d = traj1.d
    side = 2.0**-k
    rho = 2.0 ** (-(1.0 - eps_exp) * k)
    lo = anchor.lo

    def _per_motion(traj):
        g = (traj.points - lo) / side
        idx = np.floor(g).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < 2**k), axis=1)
        keys = np.full(len(idx), -1, dtype=np.int64)
        keys[inside] = pack_cells(idx[inside])
        return keys

    keys1 = _per_motion(traj1)
    keys2 = _per_motion(traj2)
    hit1 = np.unique(keys1[keys1 >= 0])
    hit2 = np.unique(keys2[keys2 >= 0])
    both = np.intersect1d(hit1, hit2, assume_unique=True)
    if len(both) == 0:
        return {"n_both_hit": 0, "n_admissible": 0, "fraction": math.nan}

    def _admissible(keys, traj, cube_key, center):
        occ = np.nonzero(keys == cube_key)[0]
        first, last = occ[0], occ[-1]
        dist = np.linalg.norm(traj.points[first:] - center, axis=1)
        out = np.nonzero(dist >= rho)[0]
        if len(out) == 0:
            return True  # never leaves the enlarged ball
        exit_idx = first + out[0]
        return last <= exit_idx

    n_adm = 0
    cells = unpack_cells(both, d)
    centers = lo + (cells + 0.5) * side
    for key, center in zip(both, centers):
        if _admissible(keys1, traj1, key, center) and _admissible(
            keys2, traj2, key, center
        ):
            n_adm += 1
    return {
        "n_both_hit": int(len(both)),
        "n_admissible": int(n_adm),
        "fraction": n_adm / len(both),
    }
