"""Closed forms: hitting probabilities, planar intersection exponents,
thin-point spectrum, tail slopes, and critical values.

Planar exponent values are exact rationals whenever the square roots in the
exponent formula are integral (true for all packet sizes with 24*M + 1 a
perfect square, in particular M in {1, 2, 5, ...}); the d = 3 pair exponent
is known only through the bracket (1, 2) and is carried as an interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigError
from .paths import PacketSpec

__all__ = [
    "HittingQuery",
    "Interval",
    "Prediction",
    "hitting_prob_f",
    "hit_prob_eventual",
    "xi2",
    "xi2_exact",
    "xi3_known",
    "spectrum_f",
    "spectrum_f_exact",
    "tail_slope",
    "a_max",
    "predict_bundle",
]

XI3_INTERVAL = (1.0, 2.0)  # bracket for the d = 3 pair-vs-pair exponent


@dataclass(frozen=True)
class HittingQuery:
    """Start radius r between the two target radii r1 <= r <= r2."""

    d: int
    r: float
    r1: float
    r2: float

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ConfigError("d must be 2 or 3")
        if not (0 < self.r1 <= self.r <= self.r2):
            raise ConfigError("need 0 < r1 <= r <= r2")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __contains__(self, x: float) -> bool:
        return self.lo < x < self.hi

    def as_tuple(self):
        return (self.lo, self.hi)


def hitting_prob_f(q: HittingQuery) -> float:
    """P{inner sphere r1 is hit before outer sphere r2 | start radius r}."""
    if q.r1 == q.r2:
        raise ConfigError("degenerate annulus: r1 = r2")
    if q.d == 2:
        return math.log(q.r / q.r2) / math.log(q.r1 / q.r2)
    return (q.r2 / q.r - 1.0) / (q.r2 / q.r1 - 1.0)


def hit_prob_eventual(d: int, r: float, r1: float) -> float:
    """P{sphere r1 is ever hit | start radius r >= r1}."""
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if not (0 < r1 <= r):
        raise ConfigError("need 0 < r1 <= r")
    return 1.0 if d == 2 else r1 / r


def _isqrt_exact(n: int) -> int | None:
    s = math.isqrt(n)
    return s if s * s == n else None


def xi2_exact(M: int, N: int) -> Fraction | None:
    """Exact planar exponent when both inner roots are integers, else None."""
    if M < 1 or N < 1:
        raise ConfigError("packet sizes must be >= 1")
    a = _isqrt_exact(24 * M + 1)
    b = _isqrt_exact(24 * N + 1)
    if a is None or b is None:
        return None
    return Fraction((a + b - 2) ** 2 - 4, 48)


def xi2(M: int, N: int) -> float:
    """Planar non-intersection exponent for packets of M and N motions."""
    exact = xi2_exact(M, N)
    if exact is not None:
        return float(exact)
    a = math.sqrt(24 * M + 1)
    b = math.sqrt(24 * N + 1)
    return ((a + b - 2) ** 2 - 4) / 48.0


def xi3_known(M: int, N: int):
    """d = 3 exponent: exact 1 for (1,2)/(2,1), the (1,2) bracket for (2,2),
    None otherwise (no usable value)."""
    if {M, N} == {1, 2}:
        return Fraction(1)
    if (M, N) == (2, 2):
        return Interval(*XI3_INTERVAL)
    return None


def spectrum_f(d: int, xi: float, a: float) -> float:
    """Spectrum value (4-d)*xi/a + (4-d) - xi; negative means empty set."""
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if a == 0:
        raise ConfigError("a must be nonzero")
    if a < 0 or xi <= 0:
        raise ConfigError("need a > 0 and xi > 0")
    c = 4 - d
    return c * xi / a + c - xi


def spectrum_f_exact(d: int, xi: Fraction, a: Fraction) -> Fraction:
    """Exact-rational spectrum evaluation (same formula)."""
    if a == 0:
        raise ConfigError("a must be nonzero")
    c = Fraction(4 - d)
    return c * xi / a + c - xi


def tail_slope(d: int, xi: float) -> float:
    """Magnitude of the small-mass tail exponent: xi/(4 - d)."""
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    if xi <= 0:
        raise ConfigError("xi must be positive")
    return xi / (4 - d)


def a_max(d: int, xi) -> object:
    """Right endpoint of the spectrum: (4-d)*xi/(xi-(4-d)), +inf if xi <= 4-d.

    Accepts floats, Fractions, or an Interval (mapped endpoint-wise; the map
    is decreasing in xi).
    """
    c = 4 - d
    if isinstance(xi, Interval):
        return Interval(_a_max_scalar(c, xi.hi), _a_max_scalar(c, xi.lo))
    if isinstance(xi, Fraction):
        if xi <= c:
            return math.inf
        return Fraction(c) * xi / (xi - c)
    return _a_max_scalar(c, float(xi))


def _a_max_scalar(c: int, xi: float) -> float:
    if xi <= c:
        return math.inf
    return c * xi / (xi - c)


@dataclass(frozen=True)
class Prediction:
    """Everything the closed forms say about one packet configuration."""

    d: int
    packet: PacketSpec
    xi: float | Interval
    xi_exact: Fraction | None
    xi_joint: float | None  # p > 2: unknown, reported as None
    tail_slope: float | Interval
    a_typical: int
    a_max: object  # float | Fraction | Interval | inf
    theta_known: bool = False  # stretched-exponential rate has no closed form

    def spectrum(self, a: float):
        """f(a) from the exponent; an Interval when xi is only bracketed."""
        if isinstance(self.xi, Interval):
            return Interval(
                spectrum_f(self.d, self.xi.hi, a), spectrum_f(self.d, self.xi.lo, a)
            )
        return spectrum_f(self.d, self.xi, a)


def predict_bundle(d: int, packet: PacketSpec) -> Prediction:
    """Populate a Prediction for (d, packet); d = 3 point values become
    intervals where only brackets are known."""
    if d not in (2, 3):
        raise ConfigError("d must be 2 or 3")
    M, N = packet.M, packet.N
    if d == 2:
        exact = xi2_exact(M, N)
        xi = float(exact) if exact is not None else xi2(M, N)
        ts = tail_slope(d, xi)
        am = a_max(d, exact if exact is not None else xi)
        return Prediction(
            d=d,
            packet=packet,
            xi=xi,
            xi_exact=exact,
            xi_joint=None if packet.p > 2 else xi,
            tail_slope=ts,
            a_typical=4 - d,
            a_max=am,
        )
    known = xi3_known(M, N)
    if isinstance(known, Fraction):
        xi_val: float | Interval = float(known)
        ts = tail_slope(d, float(known))
        am = a_max(d, known)
        exact = known
    elif isinstance(known, Interval):
        xi_val = known
        ts = Interval(known.lo / (4 - d), known.hi / (4 - d))
        am = a_max(d, known)
        exact = None
    else:
        xi_val = Interval(0.0, math.inf)
        ts = Interval(0.0, math.inf)
        am = Interval(1.0, math.inf)
        exact = None
    return Prediction(
        d=d,
        packet=packet,
        xi=xi_val,
        xi_exact=exact,
        xi_joint=None if packet.p > 2 else (xi_val if not isinstance(xi_val, Interval) else None),
        tail_slope=ts,
        a_typical=4 - d,
        a_max=am,
    )
