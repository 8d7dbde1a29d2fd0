import numpy as np

from bmil import rng


def test_derivation_is_deterministic():
    a = rng.derive_key(42, 1, 2, 3)
    b = rng.derive_key(42, 1, 2, 3)
    assert a == b
    assert rng.derive_key(42, 1, 2, 4) != a
    assert rng.derive_key(43, 1, 2, 3) != a


def test_frozen_values():
    # regression pin: the mixing function is part of the reproducibility
    # contract and must never change
    assert rng.splitmix64(0) == 16294208416658607535
    assert rng.splitmix64(1) == 10451216379200822465
    assert rng.derive_key(42, 1, 2) == 9508864575043013605


def test_streams_reproduce_bit_for_bit():
    g1 = rng.stream(7, 5)
    g2 = rng.stream(7, 5)
    x1 = g1.standard_normal(16)
    x2 = g2.standard_normal(16)
    assert np.array_equal(x1, x2)


def test_sibling_streams_differ():
    x = rng.stream(7, 5).standard_normal(8)
    y = rng.stream(7, 6).standard_normal(8)
    assert not np.allclose(x, y)


def test_prefix_independence():
    # streams under different prefixes see unrelated draws
    x = rng.stream(7, 1, 0).standard_normal(4)
    y = rng.stream(7, 2, 0).standard_normal(4)
    assert not np.allclose(x, y)
