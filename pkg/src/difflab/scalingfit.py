"""IsoFLOP quadratic fits, compute-optimal extraction, and power-law fits.

All fits work in natural log space: loss is fit as a quadratic in log N at
fixed compute C, the vertex gives (N*, L*), and (C, L*) pairs are fit by
ordinary least squares in log-log coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class IsoflopFit:
    a: float
    b: float
    c: float
    n_star: float | None       # argmin of the bowl; None when a <= 0
    loss_star: float | None    # fitted loss at the vertex
    extrapolated: bool         # vertex outside [min N, max N] x 10^{+-0.5}
    residuals: np.ndarray


def isoflop_fit(points) -> IsoflopFit:
    """Least-squares fit log loss = a (log N)^2 + b log N + c at fixed compute.

    `points` is a sequence of (N, loss). Needs >= 3 distinct N; a concave
    fit (a <= 0) is reported without a minimum. A vertex outside the data
    span widened by 10^{+-0.5} is flagged as extrapolated. Residuals are
    in log-loss space.
    """
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("need at least 3 (N, loss) points")
    n, loss = pts[:, 0], pts[:, 1]
    if len(np.unique(n)) < 3:
        raise ValueError("need at least 3 distinct N values")
    x = np.log(n)
    y = np.log(loss)
    A = np.stack([x**2, x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    a, b, c = (float(v) for v in coef)
    resid = y - A @ coef
    if a <= 0:
        return IsoflopFit(a, b, c, None, None, False, resid)
    log_n_star = -b / (2.0 * a)
    n_star = float(np.exp(log_n_star))
    loss_star = float(np.exp(a * log_n_star**2 + b * log_n_star + c))
    half_decade = 0.5 * np.log(10.0)
    extrapolated = not (x.min() - half_decade <= log_n_star <= x.max() + half_decade)
    return IsoflopFit(a, b, c, n_star, loss_star, extrapolated, resid)


@dataclass(frozen=True)
class PowerlawFit:
    alpha: float    # slope in log-log space
    beta: float     # intercept (natural log)
    residuals: np.ndarray


def powerlaw_fit(points) -> PowerlawFit:
    """OLS fit of log L* = alpha log C + beta over (C, L*) pairs."""
    pts = np.asarray(list(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least 2 (C, value) points")
    if len(np.unique(pts[:, 0])) < 2:
        raise ValueError("need at least 2 distinct C values")
    x = np.log(pts[:, 0])
    y = np.log(pts[:, 1])
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return PowerlawFit(alpha=float(coef[0]), beta=float(coef[1]),
                       residuals=y - A @ coef)


def compute_gap(fit_a: PowerlawFit, fit_b: PowerlawFit) -> float:
    """Horizontal offset between two frontiers with a shared slope.

    Returns the compute multiple method A needs to match method B's loss:
    10^{(beta_a - beta_b) / (-alpha)} with intercepts converted to base 10.
    """
    alpha = 0.5 * (fit_a.alpha + fit_b.alpha)
    if alpha >= 0:
        raise ValueError("compute gap needs decreasing frontiers (alpha < 0)")
    # natural-log intercept difference equals the log of the loss ratio at C=1
    return float(np.exp((fit_a.beta - fit_b.beta) / (-alpha)))


def embed_flops_ratio(V: int, h: int, d_e: int, L: int = 1) -> float:
    """FLOPs ratio of one-hot embedding layers to factorized ones.

    One-hot path costs L*V*h; the factorized path costs L*d_e*h for the
    projection plus L*V*d_e for the reparameterization, so the ratio is
    V*h / (d_e*h + V*d_e), independent of L.
    """
    if min(V, h, d_e, L) <= 0:
        raise ValueError("all sizes must be positive")
    return (L * V * h) / (L * d_e * h + L * V * d_e)
