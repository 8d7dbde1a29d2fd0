"""Weighted log-log regression shared by the exponent, tail, dimension and
spectrum read-outs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["LogLogFit", "weighted_line_fit", "bootstrap_slope_stderr"]


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    slope_stderr: float
    window: tuple  # (lo, hi) of the abscissa values actually used
    r_squared: float
    n_points: int


def weighted_line_fit(x, y, weights=None, window=None) -> LogLogFit:
    """Weighted least squares y = slope*x + intercept.

    ``weights`` are inverse-variance weights (1/stderr^2); ``window`` is an
    inclusive (lo, hi) filter on x.  Needs at least 3 points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & (w > 0)
    if window is not None:
        keep &= (x >= window[0] - 1e-12) & (x <= window[1] + 1e-12)
    x, y, w = x[keep], y[keep], w[keep]
    if len(x) < 3:
        raise ConfigError("fit window must contain at least 3 usable points")

    sw = w.sum()
    xbar = (w * x).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (x - xbar) ** 2).sum()
    if sxx <= 0:
        raise ConfigError("degenerate abscissa in fit window")
    slope = (w * (x - xbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * xbar
    resid = y - slope * x - intercept
    dof = max(len(x) - 2, 1)
    chi2 = (w * resid**2).sum()
    # scale parameter errors by residual scatter (conservative when the
    # supplied weights underestimate the true noise)
    scale = max(chi2 / dof, 1.0) if weights is not None else chi2 / dof
    slope_se = float(np.sqrt(scale / sxx))
    sst = (w * (y - ybar) ** 2).sum()
    r2 = 1.0 - chi2 / sst if sst > 0 else 1.0
    return LogLogFit(
        slope=float(slope),
        intercept=float(intercept),
        slope_stderr=slope_se,
        window=(float(x.min()), float(x.max())),
        r_squared=float(r2),
        n_points=int(len(x)),
    )


def bootstrap_slope_stderr(x, y, weights, rng, n_boot=200) -> float:
    """Bootstrap stderr of the slope under resampling of the fit points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    n = len(x)
    if n < 3:
        raise ConfigError("need at least 3 points to bootstrap")
    slopes = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, size=n)
        if len(np.unique(x[idx])) < 2:
            continue
        try:
            slopes.append(weighted_line_fit(x[idx], y[idx], w[idx]).slope)
        except ConfigError:
            continue
    if len(slopes) < 10:
        raise ConfigError("bootstrap failed to produce enough resamples")
    return float(np.std(slopes, ddof=1))
