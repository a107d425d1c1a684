"""Forward Gaussian noising, reverse posterior coefficients, SNR-gap constant."""

from __future__ import annotations

import numpy as np

from .core import EmbeddingTable, NoiseSchedule, schedule_eval


def sample_forward(tokens: np.ndarray, emb: EmbeddingTable, sched: NoiseSchedule,
                   t: float, rng: np.random.Generator) -> np.ndarray:
    """Draw z_t = alpha_t * e + sigma_t * eps for token sequences (..., L)."""
    ev = schedule_eval(sched, t)
    e = emb.embed(tokens)
    return ev.alpha * e + ev.sigma * rng.standard_normal(e.shape)


def posterior_params(z_t: np.ndarray, tokens: np.ndarray, emb: EmbeddingTable,
                     sched: NoiseSchedule, t_hi: float, t_lo: float):
    """Mean and scalar variance of the reverse posterior q(z_{t_lo} | z_{t_hi}, x).

    mean = (alpha_{t|s} sigma_s^2 / sigma_t^2) z_t + (alpha_s sigma_{t|s}^2 / sigma_t^2) e
    var  = sigma_{t|s}^2 sigma_s^2 / sigma_t^2
    with alpha_{t|s} = alpha_t/alpha_s and sigma_{t|s}^2 = sigma_t^2 - alpha_{t|s}^2 sigma_s^2.
    """
    if not t_lo < t_hi:
        raise ValueError("need t_lo < t_hi")
    hi = schedule_eval(sched, t_hi)
    lo = schedule_eval(sched, t_lo)
    a_ts = hi.alpha / lo.alpha
    var_ts = hi.sigma**2 - a_ts**2 * lo.sigma**2
    e = emb.embed(tokens)
    mean = (a_ts * lo.sigma**2 / hi.sigma**2) * z_t \
        + (lo.alpha * var_ts / hi.sigma**2) * e
    var = var_ts * lo.sigma**2 / hi.sigma**2
    return mean, float(var)


def snr_gap(sched: NoiseSchedule, t_lo: float, t_hi: float) -> float:
    """c = 1 - exp(gamma_s - gamma_t), the per-step SNR gap in [0, 1)."""
    if t_lo > t_hi:
        raise ValueError("need t_lo <= t_hi")
    g_lo = sched.gamma(t_lo)
    g_hi = sched.gamma(t_hi)
    return float(1.0 - np.exp(g_lo - g_hi))


def snr_gap_gamma(g_lo: float, g_hi: float) -> float:
    """SNR gap directly from gamma endpoints of a step (g_lo <= g_hi)."""
    return float(1.0 - np.exp(g_lo - g_hi))
