"""Brownian path simulation, bridge refinement, and boundary hitting.

Paths are sampled on a uniform time grid with i.i.d. centered Gaussian
increments of per-coordinate variance ``dt``.  Boundary crossings are located
by linear interpolation of the sampled path: a segment crosses a sphere when
the straight segment between consecutive samples does (including the case
where both endpoints lie outside but the chord dips through), and the
crossing parameter solves the segment/boundary equation exactly.

Sub-step excursions of the true path around the straight segment are an
unavoidable bias of this scheme.  Documented rule: when estimating hitting
probabilities, choose ``dt <= (r_min/20)**2`` where ``r_min`` is the smallest
radius in play; the shipped configs use ``(r_min/40)**2``.

Infinite-horizon runs (``R`` infinite, only ``d = 3``): when a path exceeds
the escape radius ``r_escape`` (default 64) at radius ``|x|``, an explicit
Bernoulli draw with success probability ``(r_escape/2)/|x|`` decides whether
the path ever returns to ``B(0, r_escape/2)``; on success it is restarted at
a uniform point of that sphere (the harmonic measure seen from far away is
nearly uniform) and the skipped excursion is dropped, otherwise the path
terminates.  Restart joints are recorded so occupation measures can skip the
teleport segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SimulationFault
from .regions import BoxBoundary, Sphere

__all__ = [
    "SimConfig",
    "PacketSpec",
    "Trajectory",
    "StoppingEvent",
    "sample_path",
    "refine_bridge",
    "first_hit",
    "sample_uniform_sphere",
    "sample_uniform_sphere_many",
    "inner_hit_frequency",
    "hitting_dt_rule",
]

_CHUNK = 4096  # steps simulated per block


# ---------------------------------------------------------------------------
# configuration and data types


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters shared by all experiments.

    ``R`` is the outer kill radius; ``None`` means infinite and is allowed
    only for ``d = 3``.  ``T`` is an optional time horizon.
    """

    d: int
    dt: float
    T: float | None = None
    R: float | None = None
    master_seed: int = 0
    r_escape: float = 64.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigError("d must be 2 or 3")
        if not (self.dt > 0):
            raise ConfigError("dt must be positive")
        if self.R is not None and not math.isinf(self.R) and self.R <= 1:
            raise ConfigError("R must exceed 1 when finite")
        if self.d == 2 and (self.R is None or math.isinf(self.R)):
            raise ConfigError("R finite whenever d = 2")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive when given")

    @property
    def infinite_horizon(self) -> bool:
        return self.R is None or math.isinf(self.R)


@dataclass(frozen=True)
class PacketSpec:
    """Packet sizes: M motions against N motions, p packets for joint runs."""

    M: int
    N: int
    p: int = 2
    sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.sizes is None:
            object.__setattr__(self, "sizes", (self.M, self.N))
        else:
            object.__setattr__(self, "sizes", tuple(self.sizes))
        if self.p != len(self.sizes):
            raise ConfigError("p must match the number of packet sizes")
        if self.p < 2 or any(m < 1 for m in self.sizes):
            raise ConfigError("packet sizes must be >= 1 and p >= 2")
        if (self.M, self.N) != (self.sizes[0], self.sizes[1]):
            raise ConfigError("M, N must equal the first two packet sizes")

    @property
    def total(self) -> int:
        return sum(self.sizes)


@dataclass(frozen=True)
class Trajectory:
    """A sampled path: strictly increasing times, one point per time."""

    times: np.ndarray
    points: np.ndarray
    refinement_depth: dict = field(default_factory=dict)
    restarts: tuple = ()

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=float)
        p = np.ascontiguousarray(self.points, dtype=float)
        if t.ndim != 1 or p.ndim != 2 or len(t) != len(p) or len(t) < 1:
            raise SimulationFault("times/points shape mismatch")
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise SimulationFault("times must be strictly increasing")
        if t[0] != 0.0:
            raise SimulationFault("times must start at 0")
        t.flags.writeable = False  # immutable after creation, safe to share
        p.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def segment_durations(self) -> np.ndarray:
        return np.diff(self.times)

    def sample_weights(self) -> np.ndarray:
        """Trapezoidal time weight attached to each sample point."""
        if len(self.times) == 1:
            return np.zeros(1)
        dts = np.diff(self.times)
        w = np.empty(len(self.times))
        w[0] = dts[0] / 2
        w[-1] = dts[-1] / 2
        w[1:-1] = (dts[:-1] + dts[1:]) / 2
        return w


@dataclass(frozen=True)
class StoppingEvent:
    """A realized (possibly composite) boundary hitting."""

    kind: str
    hit_time: float
    hit_point: np.ndarray
    hit_index: int
    stages: tuple = ()


# ---------------------------------------------------------------------------
# sampling


def sample_uniform_sphere(d: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """A point uniformly distributed on the sphere of radius r."""
    return sample_uniform_sphere_many(d, r, 1, rng)[0]


def sample_uniform_sphere_many(d, r, n, rng) -> np.ndarray:
    if r <= 0:
        raise ConfigError("radius must be positive")
    x = rng.standard_normal((n, d))
    norms = np.linalg.norm(x, axis=1)
    while np.any(norms < 1e-12):  # essentially never; resample degenerate rows
        bad = norms < 1e-12
        x[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(x, axis=1)
    return x * (r / norms)[:, None]


def _first_crossing_in_block(prev_pt, block, boundaries, t_of_sample):
    """Earliest boundary crossing among segments of one simulated block.

    Returns (segment_index_within_block, t_frac, boundary) or None.
    ``block`` includes the previous point as row 0.
    """
    best = None
    pts = np.vstack([prev_pt[None, :], block])
    for b in boundaries:
        side = b.side(pts)
        cand = np.nonzero(side[:-1] * side[1:] <= 0)[0]
        if isinstance(b, Sphere):
            # chord dip: both endpoints outside, segment passes through
            a = pts[:-1] - b.center
            u = np.diff(pts, axis=0)
            uu = np.einsum("ij,ij->i", u, u)
            au = np.einsum("ij,ij->i", a, u)
            with np.errstate(divide="ignore", invalid="ignore"):
                tstar = np.where(uu > 0, -au / np.where(uu > 0, uu, 1.0), 0.0)
            interior = (tstar > 0) & (tstar < 1)
            dip_pt = a + tstar[:, None] * u
            dips = interior & (np.linalg.norm(dip_pt, axis=1) < b.radius)
            dips &= (side[:-1] > 0) & (side[1:] > 0)
            cand = np.union1d(cand, np.nonzero(dips)[0])
        for i in cand:
            if best is not None and i > best[0]:
                break
            t = b.crossing_param(pts[i], pts[i + 1])
            if t is None:
                continue
            if best is None or (i, t) < (best[0], best[1]):
                best = (int(i), float(t), b)
    return best


def sample_path(
    cfg: SimConfig,
    start,
    boundaries=None,
    t_max: float | None = None,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Simulate a path until the first satisfied stop rule.

    Stop rules: crossing of any boundary in ``boundaries`` (spheres or box
    boundaries; the interpolated crossing point is appended as final sample)
    or reaching the time horizon ``t_max`` (default ``cfg.T``).  At least one
    rule must be effective; with no horizon, ``cfg`` must be finite-``R``
    aware (infinite-horizon termination is handled by the escape-radius
    renewal, ``d = 3`` only).
    """
    if rng is None:
        raise ConfigError("an explicit random stream is required")
    start = np.asarray(start, dtype=float)
    if start.shape != (cfg.d,):
        raise ConfigError(f"start must be a point in R^{cfg.d}")
    boundaries = list(boundaries) if boundaries is not None else []
    if t_max is None:
        t_max = cfg.T
    use_renewal = cfg.infinite_horizon and t_max is None
    if t_max is None and not boundaries and not use_renewal:
        raise ConfigError("no stop rule: give boundaries or a time horizon")
    r_esc = cfg.r_escape
    sq = math.sqrt(cfg.dt)

    pts = [start[None, :].copy()]
    n_done = 0  # completed steps (segments)
    restarts = []
    pos = start.copy()
    max_steps = None
    last_dt = cfg.dt
    if t_max is not None:
        n_full = int(math.floor(t_max / cfg.dt + 1e-9))
        rem = t_max - n_full * cfg.dt
        if rem > 1e-12 * cfg.dt:
            max_steps = n_full + 1
            last_dt = rem
        else:
            max_steps = n_full
    hard_cap = 200_000_000  # safety net against runaway runs

    event_kind = "time"
    while True:
        n_want = _CHUNK if max_steps is None else min(_CHUNK, max_steps - n_done)
        if n_want == 0:
            break
        steps = rng.standard_normal((n_want, cfg.d)) * sq
        if max_steps is not None and n_done + n_want == max_steps and last_dt != cfg.dt:
            steps[-1] *= math.sqrt(last_dt / cfg.dt)
        block = pos + np.cumsum(steps, axis=0)
        if not np.all(np.isfinite(block)):
            raise SimulationFault("non-finite coordinates during simulation")

        cut = None
        if boundaries:
            cut = _first_crossing_in_block(pos, block, boundaries, None)
        esc_idx = None
        if use_renewal:
            over = np.nonzero(np.linalg.norm(block, axis=1) >= r_esc)[0]
            if over.size:
                esc_idx = int(over[0])
        if cut is not None and (esc_idx is None or cut[0] <= esc_idx):
            i, tfrac, b = cut
            a = pos if i == 0 else block[i - 1]
            hit = a + tfrac * (block[i] - a)
            keep = block[:i]
            pts.append(keep)
            pts.append(hit[None, :])
            n_done += i + 1
            event_kind = "boundary"
            # hit time: i full steps after n_done-i-1, plus the fraction
            frac_dt = cfg.dt if (max_steps is None or n_done < max_steps) else last_dt
            t_hit = (n_done - 1) * cfg.dt + tfrac * frac_dt
            times = _assemble_times(n_done, cfg.dt, max_steps, last_dt)
            times[-1] = t_hit
            return Trajectory(times, np.vstack(pts), restarts=tuple(restarts))
        if esc_idx is not None:
            keep = block[: esc_idx + 1]
            pts.append(keep)
            n_done += esc_idx + 1
            x = block[esc_idx]
            p_ret = (r_esc / 2.0) / float(np.linalg.norm(x))
            if rng.random() >= p_ret:
                times = _assemble_times(n_done, cfg.dt, max_steps, last_dt)
                return Trajectory(times, np.vstack(pts), restarts=tuple(restarts))
            pos = sample_uniform_sphere(cfg.d, r_esc / 2.0, rng)
            pts.append(pos[None, :].copy())
            n_done += 1
            restarts.append(n_done)  # sample index of the restart point
            continue
        pts.append(block)
        pos = block[-1]
        n_done += n_want
        if max_steps is not None and n_done >= max_steps:
            break
        if n_done > hard_cap:
            raise SimulationFault("path exceeded the hard step cap")

    times = _assemble_times(n_done, cfg.dt, max_steps, last_dt)
    return Trajectory(times, np.vstack(pts), restarts=tuple(restarts))


def _assemble_times(n_done, dt, max_steps, last_dt):
    times = np.arange(n_done + 1, dtype=float) * dt
    if max_steps is not None and n_done == max_steps and last_dt != dt:
        times[-1] = times[-2] + last_dt
    return times


# ---------------------------------------------------------------------------
# bridge refinement


def refine_bridge(traj: Trajectory, segment: int, depth: int, rng) -> Trajectory:
    """Replace one segment by 2**depth Brownian-bridge sub-segments.

    Midpoint bisection: each inserted midpoint is Gaussian around the average
    of its current neighbors with per-coordinate variance L/4, where L is the
    duration of the interval being bisected.  Endpoints are pinned exactly;
    all other samples are untouched.
    """
    if depth < 0:
        raise ConfigError("depth must be >= 0")
    if not (0 <= segment < traj.n_segments):
        raise IndexError("segment index out of range")
    if segment + 1 in traj.restarts:
        raise ConfigError("cannot refine across a restart joint")
    if depth == 0:
        return traj

    m = 1 << depth
    t0, t1 = traj.times[segment], traj.times[segment + 1]
    x0, x1 = traj.points[segment], traj.points[segment + 1]
    span = t1 - t0
    sub = np.empty((m + 1, traj.d))
    sub[0], sub[m] = x0, x1
    for level in range(depth):
        step = m >> (level + 1)
        idx = np.arange(step, m, 2 * step)
        left = sub[idx - step]
        right = sub[idx + step]
        var = (2 * step * span / m) / 4.0
        sub[idx] = (left + right) / 2.0 + rng.standard_normal(
            (len(idx), traj.d)
        ) * math.sqrt(var)

    new_times = np.concatenate(
        [
            traj.times[: segment + 1],
            t0 + span * np.arange(1, m) / m,
            traj.times[segment + 1 :],
        ]
    )
    new_points = np.vstack(
        [traj.points[: segment + 1], sub[1:m], traj.points[segment + 1 :]]
    )
    shift = m - 1
    new_depth = {}
    for k, v in traj.refinement_depth.items():
        new_depth[k if k < segment else k + shift if k > segment else k] = v
    new_depth[segment] = new_depth.get(segment, 0) + depth
    new_restarts = tuple(r if r <= segment else r + shift for r in traj.restarts)
    return Trajectory(new_times, new_points, new_depth, new_restarts)


# ---------------------------------------------------------------------------
# hitting


def first_hit(traj: Trajectory, regions) -> StoppingEvent | None:
    """Composite first-hitting event of an ordered region sequence.

    Walks the trajectory once; stage ``i+1`` is searched from the crossing
    point of stage ``i`` onward (several stages may resolve inside a single
    segment).  Returns None when the ordered sequence is not completed.
    """
    regions = list(regions)
    if not regions:
        raise ConfigError("regions must be nonempty")
    pts = traj.points
    times = traj.times
    stage = 0
    stages = []
    seg = 0
    t_frac = 0.0
    n_seg = traj.n_segments

    # starting point may already lie on the first region(s)
    while stage < len(regions):
        b = regions[stage]
        if abs(float(b.side(pts[0]))) <= 1e-12 * _scale_of(b):
            stages.append((0.0, pts[0].copy(), 0))
            stage += 1
        else:
            break

    while stage < len(regions) and seg < n_seg:
        b = regions[stage]
        found = None
        i = seg
        while i < n_seg:
            lo = t_frac if i == seg else 0.0
            t = b.crossing_param(pts[i], pts[i + 1], t_min=lo)
            if t is not None:
                found = (i, t)
                break
            i += 1
        if found is None:
            return None
        i, t = found
        point = pts[i] + t * (pts[i + 1] - pts[i])
        time = times[i] + t * (times[i + 1] - times[i])
        stages.append((float(time), point, int(i)))
        seg, t_frac = i, t
        stage += 1

    if stage < len(regions):
        return None
    kinds = [r.describe() for r in regions]
    kind = kinds[0] if len(kinds) == 1 else "composite[" + ", ".join(kinds) + "]"
    t_hit, p_hit, idx = stages[-1]
    return StoppingEvent(kind, t_hit, p_hit, idx, tuple(stages))


def _scale_of(b) -> float:
    if isinstance(b, Sphere):
        return b.radius
    if isinstance(b, BoxBoundary):
        return float(np.min(b.hi - b.lo))
    return 1.0


# ---------------------------------------------------------------------------
# fast annulus-exit kernel


def hitting_dt_rule(r_min: float, divisor: float = 40.0) -> float:
    """Time step for hitting-probability runs: dt = (r_min/divisor)**2."""
    return (r_min / divisor) ** 2


def inner_hit_frequency(
    d: int,
    r: float,
    r1: float,
    r2: float,
    n_paths: int,
    dt: float,
    rng: np.random.Generator,
    block: int = 24,
) -> tuple[float, float]:
    """Empirical P{hit sphere r1 before sphere r2 | start radius r}.

    Vectorized over paths and over blocks of ``block`` steps; crossing
    detection matches sample_path / first_hit (straddle and chord-dip, exact
    on the interpolated segment).  Returns the frequency and its binomial
    standard error.
    """
    if not (0 < r1 <= r <= r2):
        raise ConfigError("need 0 < r1 <= r <= r2")
    sq = np.float32(math.sqrt(dt))
    hits = 0
    pos = sample_uniform_sphere_many(d, r, n_paths, rng).astype(np.float32)
    while len(pos):
        n = len(pos)
        z = rng.standard_normal((n, block, d), dtype=np.float32)
        z *= sq  # raw segment vectors
        traj = np.cumsum(z, axis=1)
        traj += pos[:, None, :]  # (n, block, d)
        uu = np.einsum("nkd,nkd->nk", z, z)
        bb = np.einsum("nkd,nkd->nk", traj, traj)
        aa = np.empty_like(bb)
        aa[:, 0] = np.einsum("nd,nd->n", pos, pos)
        aa[:, 1:] = bb[:, :-1]
        au = np.einsum("nkd,nkd->nk", traj, z) - uu

        disc_in = au * au - uu * (aa - r1 * r1)
        may_in = disc_in > 0
        t_in = np.where(
            may_in,
            (-au - np.sqrt(np.where(may_in, disc_in, 0.0)))
            / np.where(uu > 0, uu, 1.0),
            np.inf,
        )
        crossed_in = may_in & (t_in >= 0.0) & (t_in <= 1.0)

        out_now = bb >= r2 * r2
        disc_out = np.maximum(au * au - uu * (aa - r2 * r2), 0.0)
        t_out = np.where(
            out_now, (-au + np.sqrt(disc_out)) / np.where(uu > 0, uu, 1.0), np.inf
        )

        # rank events by (segment, within-segment parameter)
        seg_idx = np.arange(block)[None, :]
        score_in = np.where(crossed_in, seg_idx + np.clip(t_in, 0.0, 1.0), np.inf)
        score_out = np.where(out_now, seg_idx + np.clip(t_out, 0.0, 1.0), np.inf)
        first_in = score_in.min(axis=1)
        first_out = score_out.min(axis=1)
        inner = first_in <= first_out
        decided = np.isfinite(first_in) | np.isfinite(first_out)
        hits += int((decided & inner).sum())
        cont = ~decided
        pos = traj[cont, -1, :]
    freq = hits / n_paths
    se = math.sqrt(max(freq * (1 - freq), 1e-12) / n_paths)
    return freq, se
