"""Intersection local time estimators.

Two independent numerical realizations of the (symbolic) intersection local
time of a pair of paths:

* grid-product: project both occupation measures on a common lattice of cell
  side h and sum mu1*mu2/h^d over cells (linear in sample count);
* pair-count: count sample pairs of the two paths closer than a kernel
  radius eps, weighted by their time weights, divided by the kernel volume.

Both carry units time^2/length^d.  The overall normalization constant of the
continuum object is not pinned here; all downstream comparisons are ratios,
slopes, distributional identities, or cross-validation of the two estimators
against each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RefinementNeeded
from .paths import Trajectory
from .regions import Ball, Box

__all__ = [
    "OccupationGrid",
    "IltEstimate",
    "DyadicCube",
    "LocalTimeField",
    "occupation_grid",
    "ilt_grid",
    "ilt_paircount",
    "ilt_field",
    "pack_cells",
    "unpack_cells",
    "iter_close_pairs",
    "ball_volume",
]

_OFF = 1 << 20  # cell index offset so packed keys stay non-negative
_BITS = 21


def pack_cells(idx: np.ndarray) -> np.ndarray:
    """Pack (n, d) integer cell indices into sortable int64 keys."""
    idx = np.asarray(idx)
    if np.any(np.abs(idx) >= _OFF):
        raise ConfigError("cell index out of packable range")
    key = (idx[:, 0] + _OFF).astype(np.int64)
    for ax in range(1, idx.shape[1]):
        key = (key << _BITS) | (idx[:, ax] + _OFF).astype(np.int64)
    return key


def unpack_cells(keys: np.ndarray, d: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    out = np.empty((len(keys), d), dtype=np.int64)
    k = keys.copy()
    mask = (1 << _BITS) - 1
    for ax in range(d - 1, -1, -1):
        out[:, ax] = (k & mask) - _OFF
        k >>= _BITS
    return out


def ball_volume(d: int, r: float) -> float:
    return math.pi * r * r if d == 2 else 4.0 / 3.0 * math.pi * r**3


# ---------------------------------------------------------------------------
# occupation measure on a lattice


@dataclass(frozen=True)
class OccupationGrid:
    """Sparse occupation measure: time mass per lattice cell of side h."""

    h: float
    origin: np.ndarray
    keys: np.ndarray  # sorted packed cell indices
    masses: np.ndarray
    d: int

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Masses for the requested packed cells (0 where unoccupied)."""
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1) if len(self.keys) else pos
        out = np.zeros(len(keys))
        if len(self.keys):
            hit = self.keys[pos_c] == keys
            out[hit] = self.masses[pos_c[hit]]
        return out

    def cells(self) -> np.ndarray:
        return unpack_cells(self.keys, self.d)

    def compatible(self, other: "OccupationGrid") -> bool:
        return (
            self.d == other.d
            and self.h == other.h
            and np.array_equal(self.origin, other.origin)
        )


def occupation_grid(
    traj: Trajectory,
    h: float,
    origin=None,
    region: Box | None = None,
) -> OccupationGrid:
    """Project a trajectory's occupation measure onto a lattice.

    Each segment's duration is distributed over the cells it traverses by
    exact fractional overlap of the straight segment (split at every cell
    boundary).  Restart joints of infinite-horizon runs are skipped.  When a
    bounding ``region`` is given, only cells whose centers lie inside it are
    kept.
    """
    if h <= 0:
        raise ConfigError("cell side h must be positive")
    d = traj.d
    origin = np.zeros(d) if origin is None else np.asarray(origin, dtype=float)

    if traj.n_segments == 0:
        return OccupationGrid(h, origin, np.empty(0, np.int64), np.empty(0), d)

    g = (traj.points - origin) / h
    dur = traj.segment_durations()
    keep = dur > 0
    if traj.restarts:
        keep = keep.copy()
        for r in traj.restarts:
            keep[r - 1] = False
    if region is not None:
        # segments whose bounding box misses the (dilated) region cannot
        # contribute any kept cell; drop them before the splitting pass
        lo_r, hi_r = region.bounding_box()
        lo_g = (lo_r - origin) / h - 1.0
        hi_g = (hi_r - origin) / h + 1.0
        seg_lo = np.minimum(g[:-1], g[1:])
        seg_hi = np.maximum(g[:-1], g[1:])
        keep = keep & np.all((seg_hi >= lo_g) & (seg_lo <= hi_g), axis=1)
    g0 = g[:-1][keep]
    g1 = g[1:][keep]
    dur = dur[keep]
    n = len(dur)
    if n == 0:
        return OccupationGrid(h, origin, np.empty(0, np.int64), np.empty(0), d)

    c0 = np.floor(g0).astype(np.int64)
    c1 = np.floor(g1).astype(np.int64)

    seg_parts = [np.arange(n), np.arange(n)]
    t_parts = [np.zeros(n), np.ones(n)]
    for ax in range(d):
        lo = np.minimum(c0[:, ax], c1[:, ax])
        hi = np.maximum(c0[:, ax], c1[:, ax])
        m = hi - lo
        tot = int(m.sum())
        if tot == 0:
            continue
        segs = np.repeat(np.arange(n), m)
        cum = np.cumsum(m) - m
        within = np.arange(tot) - np.repeat(cum, m)
        lines = np.repeat(lo + 1, m) + within
        denom = g1[segs, ax] - g0[segs, ax]
        t = (lines - g0[segs, ax]) / denom
        seg_parts.append(segs)
        t_parts.append(t)

    seg_all = np.concatenate(seg_parts)
    t_all = np.clip(np.concatenate(t_parts), 0.0, 1.0)
    order = np.lexsort((t_all, seg_all))
    seg_s = seg_all[order]
    t_s = t_all[order]

    same = seg_s[1:] == seg_s[:-1]
    frac = t_s[1:] - t_s[:-1]
    valid = same & (frac > 0)
    segs = seg_s[:-1][valid]
    tmid = (t_s[1:] + t_s[:-1])[valid] / 2.0
    frac = frac[valid]

    pos = g0[segs] + tmid[:, None] * (g1[segs] - g0[segs])
    cells = np.floor(pos).astype(np.int64)
    mass = dur[segs] * frac

    if region is not None:
        centers = origin + (cells + 0.5) * h
        inside = region.contains(centers)
        cells, mass = cells[inside], mass[inside]

    keys = pack_cells(cells)
    order = np.argsort(keys, kind="stable")
    keys, mass = keys[order], mass[order]
    uk, start = np.unique(keys, return_index=True)
    sums = np.add.reduceat(mass, start) if len(mass) else np.empty(0)
    return OccupationGrid(h, origin, uk, sums, d)


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class IltEstimate:
    """One intersection-local-time mass estimate."""

    value: float
    method: str  # "grid-product" | "pair-count"
    resolution: float  # h or eps
    stderr: float | None = None
    n_pairs: int | None = None


_PROBE_CACHE: dict = {}


def _probe_lattice(d: int) -> np.ndarray:
    """64 quasi-uniform probe points in the unit cell (midpoint lattice)."""
    if d not in _PROBE_CACHE:
        per = 8 if d == 2 else 4
        axes = [(np.arange(per) + 0.5) / per] * d
        mesh = np.meshgrid(*axes, indexing="ij")
        _PROBE_CACHE[d] = np.stack([m.ravel() for m in mesh], axis=1)
    return _PROBE_CACHE[d]


def _cell_weights(cells: np.ndarray, h: float, origin, region) -> np.ndarray:
    """Region weight per cell: 1 inside, 0 outside, probed fraction on the rim."""
    n = len(cells)
    w = np.empty(n)
    if region is None:
        w.fill(1.0)
        return w
    probes = _probe_lattice(cells.shape[1])
    for i in range(n):
        lo = origin + cells[i] * h
        hi = lo + h
        state = region.cell_state(lo, hi)
        if state >= 0:
            w[i] = float(state)
        else:
            w[i] = float(np.mean(region.contains(lo + probes * h)))
    return w


def ilt_grid(g1: OccupationGrid, g2: OccupationGrid, region=None) -> IltEstimate:
    """Grid-product estimate over a region (ball, box, union, or None = all)."""
    if not g1.compatible(g2):
        raise ConfigError("grids must share cell side and origin")
    common, i1, i2 = np.intersect1d(
        g1.keys, g2.keys, assume_unique=True, return_indices=True
    )
    if len(common) == 0:
        return IltEstimate(0.0, "grid-product", g1.h)
    prod = g1.masses[i1] * g2.masses[i2]
    cells = unpack_cells(common, g1.d)
    w = _cell_weights(cells, g1.h, g1.origin, region)
    value = float((prod * w).sum() / g1.h**g1.d)
    return IltEstimate(value, "grid-product", g1.h)


def iter_close_pairs(p1, p2, eps, chunk=4_000_000):
    """Yield (i, j) index chunks with |p1[i] - p2[j]| < eps.

    Spatial hash join on cells of side eps; each yielded chunk is bounded in
    size so callers control memory.
    """
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    d = p1.shape[1]
    if len(p1) == 0 or len(p2) == 0:
        return
    c1 = np.floor(p1 / eps).astype(np.int64)
    c2 = np.floor(p2 / eps).astype(np.int64)
    k2 = pack_cells(c2)
    order2 = np.argsort(k2, kind="stable")
    k2s = k2[order2]

    offsets = np.stack(
        np.meshgrid(*([np.array([-1, 0, 1])] * d), indexing="ij"), axis=-1
    ).reshape(-1, d)
    for off in offsets:
        kq = pack_cells(c1 + off)
        lo = np.searchsorted(k2s, kq, side="left")
        hi = np.searchsorted(k2s, kq, side="right")
        counts = hi - lo
        nz = np.nonzero(counts)[0]
        if len(nz) == 0:
            continue
        counts_nz = counts[nz]
        csum = np.cumsum(counts_nz)
        start_q = 0
        while start_q < len(nz):
            budget = csum[start_q] - (csum[start_q - 1] if start_q else 0) + chunk
            take = int(np.searchsorted(csum, (csum[start_q - 1] if start_q else 0) + budget, side="left")) - start_q
            take = max(take, 1)
            sel = nz[start_q : start_q + take]
            cnt = counts_nz[start_q : start_q + take]
            i_idx = np.repeat(sel, cnt)
            base = np.cumsum(cnt) - cnt
            within = np.arange(int(cnt.sum())) - np.repeat(base, cnt)
            j_idx = order2[np.repeat(lo[sel], cnt) + within]
            dist2 = np.einsum(
                "ij,ij->i", p1[i_idx] - p2[j_idx], p1[i_idx] - p2[j_idx]
            )
            ok = dist2 < eps * eps
            if np.any(ok):
                yield i_idx[ok], j_idx[ok]
            start_q += take


def _spacing_guard(traj: Trajectory, eps: float, region) -> None:
    dts = traj.segment_durations()
    if traj.restarts:
        keep = np.ones(len(dts), bool)
        for r in traj.restarts:
            keep[r - 1] = False
        dts = dts[keep]
    if len(dts) == 0:
        return
    max_dt = float(dts.max())
    limit = eps * eps / (16.0 * traj.d)
    if max_dt > limit * (1 + 1e-9):
        raise RefinementNeeded(
            f"sample spacing too coarse for eps={eps}: dt={max_dt:.3g} > {limit:.3g}",
            max_dt=limit,
        )


def ilt_paircount(
    t1: Trajectory,
    t2: Trajectory,
    region=None,
    eps: float = 0.1,
) -> IltEstimate:
    """Pair-count estimate: weighted near pairs over the kernel ball volume."""
    if eps <= 0:
        raise ConfigError("eps must be positive")
    _spacing_guard(t1, eps, region)
    _spacing_guard(t2, eps, region)
    w1 = t1.sample_weights()
    w2 = t2.sample_weights()
    p1, p2 = t1.points, t2.points
    total = 0.0
    n_pairs = 0
    for i_idx, j_idx in iter_close_pairs(p1, p2, eps):
        contrib = w1[i_idx] * w2[j_idx]
        if region is not None:
            mid = (p1[i_idx] + p2[j_idx]) / 2.0
            contrib = contrib * region.contains(mid)
        total += float(contrib.sum())
        n_pairs += int(len(i_idx))
    value = total / ball_volume(t1.d, eps)
    return IltEstimate(value, "pair-count", eps, n_pairs=n_pairs)


# ---------------------------------------------------------------------------
# per-cube field across dyadic scales


@dataclass(frozen=True)
class DyadicCube:
    """A dyadic subcube of the anchor cube: side 2**-level, integer index."""

    level: int
    index: tuple

    def __post_init__(self):
        if any(not (0 <= i < 2**self.level) for i in self.index):
            raise ConfigError("dyadic index out of range")


@dataclass
class FieldLevel:
    k: int
    h: float
    cube_keys: np.ndarray  # both-hit cubes, packed, sorted
    masses: np.ndarray  # ball-mass estimates aligned with cube_keys
    hit1: np.ndarray  # packed cube keys hit by motion 1 (sorted)
    hit2: np.ndarray


@dataclass
class LocalTimeField:
    """Ball-mass estimates l(B(center(E), 2^-k)) over dyadic cubes of an anchor."""

    anchor: Box
    levels: dict = field(default_factory=dict)  # k -> FieldLevel
    horizon: float | None = None

    @property
    def d(self) -> int:
        return len(self.anchor.lo)

    def level(self, k: int) -> FieldLevel:
        return self.levels[k]

    def estimate(self, k: int, index) -> IltEstimate:
        lev = self.levels[k]
        key = pack_cells(np.asarray([index], dtype=np.int64))[0]
        pos = int(np.searchsorted(lev.cube_keys, key))
        if pos >= len(lev.cube_keys) or lev.cube_keys[pos] != key:
            raise KeyError("cube is not both-hit at this level")
        return IltEstimate(float(lev.masses[pos]), "grid-product", lev.h)

    def ball_mass_at(self, k: int, x) -> float | None:
        """Ball mass of the level-k cube containing x (None if not both-hit)."""
        x = np.asarray(x, dtype=float)
        side = 2.0**-k
        idx = np.floor((x - self.anchor.lo) / side).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= 2**k):
            return None
        lev = self.levels[k]
        key = pack_cells(idx[None, :])[0]
        pos = int(np.searchsorted(lev.cube_keys, key))
        if pos >= len(lev.cube_keys) or lev.cube_keys[pos] != key:
            return None
        return float(lev.masses[pos])


_STENCIL_CACHE: dict = {}


def _ball_stencil(d: int, m: int = 8):
    """Offsets and inside-fractions for a radius-m*h ball centered on a corner.

    The ball center sits on the lattice corner shared by cells at offsets -1
    and 0; offsets run over cells [-m..m-1] per axis.  Weights use the
    64-probe midpoint lattice on rim cells.
    """
    if (d, m) in _STENCIL_CACHE:
        return _STENCIL_CACHE[d, m]
    rng_ax = np.arange(-m, m)
    mesh = np.meshgrid(*([rng_ax] * d), indexing="ij")
    offs = np.stack([mm.ravel() for mm in mesh], axis=1)
    lo = offs.astype(float)
    hi = lo + 1.0
    nearest = np.clip(0.0, lo, hi)
    farthest = np.where(-lo > hi, lo, hi)
    near_d = np.linalg.norm(nearest, axis=1)
    far_d = np.linalg.norm(farthest, axis=1)
    w = np.zeros(len(offs))
    w[far_d <= m] = 1.0
    rim = (near_d < m) & (far_d > m)
    probes = _probe_lattice(d)
    for i in np.nonzero(rim)[0]:
        pts = lo[i] + probes
        w[i] = float(np.mean(np.linalg.norm(pts, axis=1) < m))
    keep = w > 0
    _STENCIL_CACHE[d, m] = (offs[keep], w[keep])
    return _STENCIL_CACHE[d, m]


def _hit_keys(traj: Trajectory, anchor: Box, k: int, horizon) -> np.ndarray:
    """Packed level-k cubes whose interior contains a sample before horizon."""
    pts = traj.points
    if horizon is not None:
        pts = pts[traj.times <= horizon]
    side = 2.0**-k
    g = (pts - anchor.lo) / side
    idx = np.floor(g).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < 2**k), axis=1)
    if not np.any(inside):
        return np.empty(0, np.int64)
    return np.unique(pack_cells(idx[inside]))


def ilt_field(
    t1: Trajectory,
    t2: Trajectory,
    k_range,
    cube: Box,
    horizon: float | None = None,
    cells_per_side: int = 8,
) -> LocalTimeField:
    """Grid-product ball masses for every both-hit dyadic cube of each level.

    Per level k the lattice side is h = 2^-k/cells_per_side anchored at the
    cube corner; the measured ball around each cube center has radius 2^-k.
    Hit flags are recorded per motion (first sample in the cube before
    ``horizon``).
    """
    ks = sorted(k_range)
    if not ks:
        raise ConfigError("k_range must be nonempty")
    m = int(cells_per_side)
    if m < 2 or m % 2:
        raise ConfigError("cells_per_side must be even and >= 2")
    side = cube.hi - cube.lo
    if not np.allclose(side, 1.0, rtol=0, atol=1e-12):
        raise ConfigError("anchor must be a unit cube")
    d = t1.d
    fld = LocalTimeField(anchor=cube, horizon=horizon)
    for k in ks:
        h = 2.0**-k / m
        margin = 2.0 * 2.0**-k
        reg = Box(cube.lo - margin, cube.hi + margin)
        g1 = occupation_grid(t1, h, origin=cube.lo, region=reg)
        g2 = occupation_grid(t2, h, origin=cube.lo, region=reg)
        hit1 = _hit_keys(t1, cube, k, horizon)
        hit2 = _hit_keys(t2, cube, k, horizon)
        both = np.intersect1d(hit1, hit2, assume_unique=True)
        offs, w = _ball_stencil(d, m)
        masses = np.zeros(len(both))
        if len(both):
            idx = unpack_cells(both, d)
            base = idx * m + m // 2  # lattice corner holding the cube center
            cells = base[:, None, :] + offs[None, :, :]
            keys = pack_cells(cells.reshape(-1, d)).reshape(len(both), -1)
            m1 = g1.lookup(keys.ravel()).reshape(keys.shape)
            m2 = g2.lookup(keys.ravel()).reshape(keys.shape)
            masses = (m1 * m2 * w[None, :]).sum(axis=1) / h**d
        fld.levels[k] = FieldLevel(k, h, both, masses, hit1, hit2)
    return fld


def cross_validate_estimators(
    pairs, region, eps: float, h: float, origin=None
) -> dict:
    """Grid-product vs pair-count on the same path pairs.

    Returns means, standard errors, and the combined-sigma agreement check
    used by the acceptance suite.
    """
    g_vals, p_vals = [], []
    for t1, t2 in pairs:
        og1 = occupation_grid(t1, h, origin=origin)
        og2 = occupation_grid(t2, h, origin=origin)
        g_vals.append(ilt_grid(og1, og2, region).value)
        p_vals.append(ilt_paircount(t1, t2, region, eps).value)
    g = np.asarray(g_vals)
    p = np.asarray(p_vals)
    n = len(g)
    se_g = float(g.std(ddof=1) / math.sqrt(n))
    se_p = float(p.std(ddof=1) / math.sqrt(n))
    combined = math.hypot(se_g, se_p)
    diff = float(g.mean() - p.mean())
    return {
        "n": n,
        "mean_grid": float(g.mean()),
        "mean_pair": float(p.mean()),
        "se_grid": se_g,
        "se_pair": se_p,
        "combined_se": combined,
        "diff": diff,
        "within_3sigma": bool(abs(diff) <= 3 * combined),
    }
