"""Deterministic derivation of per-task random streams.

Every stochastic operation in this package draws from a counter-based Philox
generator whose key is derived from ``(master_seed, task indices)`` by the
fixed mixing function below.  The derivation is frozen: two runs with the same
master seed and the same logical task layout produce bit-identical draws on
any machine and for any worker count.

Derivation rule (frozen)
------------------------
``splitmix64`` is the finalizer of the SplitMix64 generator::

    z = (x + 0x9E3779B97F4A7C15) mod 2^64
    z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    z = z XOR (z >> 31)

A task identified by the integer tuple ``(i_1, ..., i_n)`` under master seed
``s`` uses the 64-bit value

    k = fold(...fold(splitmix64(s), i_1)..., i_n),
    fold(z, i) = splitmix64(z XOR splitmix64(i))

as Philox key ``[k, splitmix64(k XOR 0xA5A5A5A5A5A5A5A5]``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_KEY_SALT = 0xA5A5A5A5A5A5A5A5


def splitmix64(x: int) -> int:
    """One application of the SplitMix64 finalizer to a 64-bit integer."""
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_key(master_seed: int, *task_indices: int) -> int:
    """Derive the 64-bit stream key for a logical task.

    The task is addressed by a path of non-negative integers, e.g.
    ``derive_key(seed, EXPERIMENT_ID, level, replica)``.  Folding is
    left-associative, so distinct prefixes give independent subtrees.
    """
    z = splitmix64(master_seed & MASK64)
    for idx in task_indices:
        z = splitmix64(z ^ splitmix64(idx & MASK64))
    return z


def stream(master_seed: int, *task_indices: int) -> np.random.Generator:
    """Return the Philox generator for a logical task."""
    k = derive_key(master_seed, *task_indices)
    key = np.array([k, splitmix64(k ^ _KEY_SALT)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
