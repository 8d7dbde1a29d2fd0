"""Geometric regions: stopping boundaries and measurement volumes.

Two roles, one vocabulary:

* ``Sphere`` and ``BoxBoundary`` are *stopping boundaries*: they know how to
  locate the first crossing of a straight segment (the linear interpolation
  of a sampled path between two consecutive samples).
* ``Ball``, ``Box`` and ``Union`` are *measurement regions*: they classify
  points and grid cells for the local-time estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Sphere", "BoxBoundary", "Ball", "Box", "Union"]


@dataclass(frozen=True)
class Sphere:
    """The boundary of a ball, ``{x : |x - center| = radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def describe(self) -> str:
        return f"sphere(center={self.center.tolist()}, radius={self.radius})"

    def side(self, x: np.ndarray) -> np.ndarray:
        """Signed distance proxy |x - c| - r (negative inside)."""
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) - self.radius

    def crossing_param(self, a: np.ndarray, b: np.ndarray, t_min: float = 0.0):
        """First t in [t_min, 1] where a + t(b - a) lies on the sphere.

        Exact for the straight segment (solves the quadratic); returns None
        when the segment does not touch the sphere in that range.
        """
        a = np.asarray(a, dtype=float) - self.center
        u = np.asarray(b, dtype=float) - self.center - a
        uu = float(u @ u)
        au = float(a @ u)
        aa = float(a @ a) - self.radius**2
        if uu == 0.0:
            return t_min if abs(aa) < 1e-12 * self.radius**2 else None
        disc = au * au - uu * aa
        if disc < 0.0:
            return None
        sq = np.sqrt(disc)
        lo = (-au - sq) / uu
        hi = (-au + sq) / uu
        eps = 1e-15
        for t in (lo, hi):
            if t_min - eps <= t <= 1.0 + eps:
                return min(max(t, t_min), 1.0)
        return None


@dataclass(frozen=True)
class BoxBoundary:
    """The boundary of an axis-aligned box."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def describe(self) -> str:
        return f"box_boundary(lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def side(self, x: np.ndarray) -> np.ndarray:
        """Negative strictly inside the open box, positive strictly outside."""
        x = np.asarray(x, dtype=float)
        d_in = np.maximum(self.lo - x, x - self.hi)  # per-axis signed gap
        return d_in.max(axis=-1)

    def crossing_param(self, a: np.ndarray, b: np.ndarray, t_min: float = 0.0):
        """First boundary crossing of the segment, by slab clipping."""
        a = np.asarray(a, dtype=float)
        u = np.asarray(b, dtype=float) - a
        t_enter, t_exit = -np.inf, np.inf
        for ax in range(a.shape[-1]):
            if u[ax] == 0.0:
                if a[ax] < self.lo[ax] or a[ax] > self.hi[ax]:
                    return None
                continue
            t0 = (self.lo[ax] - a[ax]) / u[ax]
            t1 = (self.hi[ax] - a[ax]) / u[ax]
            if t0 > t1:
                t0, t1 = t1, t0
            t_enter = max(t_enter, t0)
            t_exit = min(t_exit, t1)
        if t_enter > t_exit:
            return None
        eps = 1e-15
        inside = float(self.side(a)) <= 0.0
        t = t_exit if inside else t_enter
        if t_min - eps <= t <= 1.0 + eps:
            return min(max(t, t_min), 1.0)
        return None


@dataclass(frozen=True)
class Ball:
    """Closed ball used as a measurement region."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.center, axis=-1) < self.radius

    def cell_state(self, lo: np.ndarray, hi: np.ndarray) -> int:
        """1 cell fully inside, 0 fully outside, -1 straddles the boundary."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        nearest = np.clip(self.center, lo, hi)
        if np.linalg.norm(nearest - self.center) >= self.radius:
            return 0
        farthest = np.where(self.center - lo > hi - self.center, lo, hi)
        if np.linalg.norm(farthest - self.center) < self.radius:
            return 1
        return -1

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box used as a measurement region."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def cell_state(self, lo: np.ndarray, hi: np.ndarray) -> int:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if np.any(hi <= self.lo) or np.any(lo >= self.hi):
            return 0
        if np.all(lo >= self.lo) and np.all(hi <= self.hi):
            return 1
        return -1

    def bounding_box(self):
        return self.lo.copy(), self.hi.copy()


@dataclass(frozen=True)
class Union:
    """Union of measurement regions; exact for disjoint members."""

    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if not self.members:
            raise ValueError("union needs at least one member")

    def contains(self, x: np.ndarray) -> np.ndarray:
        out = self.members[0].contains(x)
        for m in self.members[1:]:
            out = out | m.contains(x)
        return out

    def cell_state(self, lo, hi) -> int:
        states = [m.cell_state(lo, hi) for m in self.members]
        if any(s == 1 for s in states):
            return 1
        if all(s == 0 for s in states):
            return 0
        return -1

    def bounding_box(self):
        los, his = zip(*(m.bounding_box() for m in self.members))
        return np.min(los, axis=0), np.max(his, axis=0)
