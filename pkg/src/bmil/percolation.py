"""Fractal percolation on dyadic cubes: generation, survival oracle,
box-counting dimension, and hitting tests against cube sets.

A tree with retention exponent gamma keeps each child cube independently
with probability p = 2**-gamma, level by level, inside a unit anchor cube.
Per-level retained counts follow a Galton-Watson process with Binomial(2^d, p)
offspring, which supplies an independent oracle for the survival probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fitting import LogLogFit, weighted_line_fit
from .ilt import pack_cells, unpack_cells

__all__ = [
    "PercTree",
    "DimensionEstimate",
    "generate_percolation",
    "generate_coupled_percolation",
    "survival_prob_oracle",
    "box_dimension",
    "hit_test",
    "serialize_tree",
]


@dataclass
class PercTree:
    """Retained dyadic cubes of one percolation limit set, level by level."""

    d: int
    gamma: float
    depth: int
    retained: list = field(default_factory=list)  # level k -> (n_k, d) indices

    @property
    def p(self) -> float:
        return 2.0**-self.gamma

    def counts(self) -> np.ndarray:
        return np.array([len(r) for r in self.retained], dtype=np.int64)

    @property
    def survived(self) -> bool:
        return len(self.retained[self.depth]) > 0

    def retained_keys(self, k: int) -> np.ndarray:
        idx = self.retained[k]
        if len(idx) == 0:
            return np.empty(0, np.int64)
        return np.sort(pack_cells(idx))


def _children(idx: np.ndarray, d: int) -> np.ndarray:
    """All 2^d children of each level-k cube at level k+1."""
    corners = np.stack(
        np.meshgrid(*([np.array([0, 1])] * d), indexing="ij"), axis=-1
    ).reshape(-1, d)
    out = (idx[:, None, :] * 2 + corners[None, :, :]).reshape(-1, d)
    return out


def generate_percolation(d: int, gamma: float, depth: int, rng) -> PercTree:
    """Level-by-level independent Bernoulli(2**-gamma) retention."""
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if not (0 <= gamma <= d):
        raise ConfigError("gamma must lie in [0, d]")
    if depth < 1:
        raise ConfigError("depth must be >= 1")
    p = 2.0**-gamma
    levels = [np.zeros((1, d), dtype=np.int64)]
    for _ in range(depth):
        cur = levels[-1]
        if len(cur) == 0:
            levels.append(np.empty((0, d), dtype=np.int64))
            continue
        child = _children(cur, d)
        keep = rng.random(len(child)) < p
        levels.append(child[keep])
    return PercTree(d=d, gamma=gamma, depth=depth, retained=levels)


def generate_coupled_percolation(d, gammas, depth, rng) -> dict:
    """Trees for several gammas from shared uniforms (monotone coupling).

    Each cube carries one uniform; a cube survives at exponent gamma iff the
    running maximum of the uniforms along its ancestor chain stays below
    2**-gamma.  Larger gamma therefore always yields a subset.
    """
    gammas = sorted(set(float(g) for g in gammas))
    if any(not (0 <= g <= d) for g in gammas):
        raise ConfigError("gamma must lie in [0, d]")
    p_max = 2.0 ** -gammas[0]
    levels_idx = [np.zeros((1, d), dtype=np.int64)]
    levels_umax = [np.zeros(1)]  # chain maximum, root survives always
    for _ in range(depth):
        cur, um = levels_idx[-1], levels_umax[-1]
        if len(cur) == 0:
            levels_idx.append(np.empty((0, d), dtype=np.int64))
            levels_umax.append(np.empty(0))
            continue
        child = _children(cur, d)
        u = rng.random(len(child))
        chain = np.maximum(np.repeat(um, 2**d), u)
        keep = chain < p_max
        levels_idx.append(child[keep])
        levels_umax.append(chain[keep])
    trees = {}
    for g in gammas:
        thr = 2.0**-g
        retained = [idx[um < thr] for idx, um in zip(levels_idx, levels_umax)]
        trees[g] = PercTree(d=d, gamma=g, depth=depth, retained=retained)
    return trees


def survival_prob_oracle(d: int, gamma: float, tol: float = 1e-12) -> float:
    """Branching-process survival probability, by fixed-point iteration.

    Offspring law Binomial(2^d, 2**-gamma); extinction probability q is the
    minimal fixed point of G(s) = (1 - p + p s)^(2^d), found by iterating
    from 0.  Mean offspring <= 1 gives extinction outright.
    """
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if not (0 <= gamma <= d):
        raise ConfigError("gamma must lie in [0, d]")
    p = 2.0**-gamma
    m = 2**d
    if p * m <= 1.0:
        return 0.0
    q = 0.0
    for _ in range(1_000_000):
        q_new = (1.0 - p + p * q) ** m
        if abs(q_new - q) < tol:
            q = q_new
            break
        q = q_new
    return 1.0 - q


@dataclass(frozen=True)
class DimensionEstimate:
    fit: LogLogFit
    implied_dimension: float
    survival: bool


def box_dimension(tree: PercTree, window) -> DimensionEstimate:
    """Slope of log2 retained-count against level over the window."""
    lo, hi = window
    if hi > tree.depth or lo < 0:
        raise ConfigError("window outside the tree depth")
    counts = tree.counts()
    ks = np.arange(lo, hi + 1)
    vals = counts[lo : hi + 1]
    if np.any(vals == 0):
        raise ConfigError("tree extinct inside the window")
    fit = weighted_line_fit(ks, np.log2(vals))
    return DimensionEstimate(fit=fit, implied_dimension=fit.slope, survival=tree.survived)


def hit_test(tree: PercTree, level: int, cells: np.ndarray) -> dict:
    """Does the limit set (down to ``level``) meet the given cube set?

    ``cells``: (n, d) integer indices at ``level``.  Because retention is
    hereditary, membership at the deepest level already encodes the whole
    chain; per-level results report whether any ancestor of the cell set is
    retained at that level.
    """
    if level > tree.depth:
        raise ConfigError("cells lie deeper than the tree")
    cells = np.asarray(cells, dtype=np.int64)
    per_level = {}
    overall = False
    for k in range(level + 1):
        anc = cells >> (level - k)
        keys = np.unique(pack_cells(anc)) if len(anc) else np.empty(0, np.int64)
        ret = tree.retained_keys(k)
        hit = bool(len(np.intersect1d(keys, ret, assume_unique=True)) > 0)
        per_level[k] = hit
        if k == level:
            overall = hit
    return {"overall": overall, "per_level": per_level}


def serialize_tree(tree: PercTree) -> str:
    """One line per retained cube: 'level index_1 ... index_d', level-sorted."""
    lines = []
    for k, idx in enumerate(tree.retained):
        if len(idx) == 0:
            continue
        order = np.lexsort(tuple(idx[:, ax] for ax in range(tree.d - 1, -1, -1)))
        for row in idx[order]:
            lines.append(str(k) + " " + " ".join(str(int(v)) for v in row))
    return "\n".join(lines) + ("\n" if lines else "")
