"""Mutual information, conditional entropies, conditional total correlation,
I-MMSE residuals, and the cross-entropy decomposition diagnostic.

Everything is Monte Carlo over z_t ~ q(z_t) with exact posterior entropies
inside each sample, so estimates come with honest standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .core import Instance, NoiseSchedule, alpha_sigma_of_gamma, data_entropy
from .losses import ce_at_gamma
from .oracle import (BayesDenoiser, Denoiser, MonteCarloResult,
                     draw_noisy_batch, mmse_at_gamma)


@dataclass(frozen=True)
class CondEntropyResult:
    value: float                 # H(x | z_t), nats
    stderr: float
    per_position: np.ndarray     # H(x^l | z_t), shape (L,)
    per_position_stderr: np.ndarray


@dataclass(frozen=True)
class TotalCorrelationResult:
    value: float                 # C(x | z_t) = sum_l H(x^l|z_t) - H(x|z_t)
    stderr: float


def _entropy_rows(rows: np.ndarray) -> np.ndarray:
    """Entropy along the last axis of simplex rows."""
    return -xlogy(rows, rows).sum(axis=-1)


def _posterior_entropy_samples(instance: Instance, gamma: float, n_mc: int,
                               rng: np.random.Generator, chunk: int = 20000):
    """Per-sample joint and per-position posterior entropies at one gamma.

    Returns (h_joint (n,), h_pos (n, L)). For factorized data the joint
    posterior factorizes, so the joint entropy is the per-position sum.
    """
    den = BayesDenoiser(instance)
    L = instance.L
    h_joint = np.empty(n_mc)
    h_pos = np.empty((n_mc, L))
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        _, _, z = draw_noisy_batch(instance, gamma, m, rng)
        if instance.data.kind == "factorized":
            rows = den.rows(z, gamma)
            hp = _entropy_rows(rows)
            h_pos[done:done + m] = hp
            h_joint[done:done + m] = hp.sum(axis=-1)
        else:
            post = den.joint_posterior(z, gamma)
            h_joint[done:done + m] = _entropy_rows(post)
            rows = (post @ den._members).reshape(m, L, instance.V)
            h_pos[done:done + m] = _entropy_rows(rows)
        done += m
    return h_joint, h_pos


def conditional_entropy_at_gamma(instance: Instance, gamma: float, n_mc: int,
                                 rng: np.random.Generator) -> CondEntropyResult:
    h_joint, h_pos = _posterior_entropy_samples(instance, gamma, n_mc, rng)
    return CondEntropyResult(
        value=float(h_joint.mean()),
        stderr=float(h_joint.std(ddof=1) / np.sqrt(n_mc)),
        per_position=h_pos.mean(axis=0),
        per_position_stderr=h_pos.std(axis=0, ddof=1) / np.sqrt(n_mc))


def conditional_entropy(instance: Instance, sched: NoiseSchedule, t: float,
                        n_mc: int, rng: np.random.Generator) -> CondEntropyResult:
    """H(x | z_t) and its per-position marginals, by Monte Carlo over z_t."""
    return conditional_entropy_at_gamma(instance, float(sched.gamma(t)), n_mc, rng)


def mutual_info_at_gamma(instance: Instance, gamma: float, n_mc: int,
                         rng: np.random.Generator) -> MonteCarloResult:
    ce = conditional_entropy_at_gamma(instance, gamma, n_mc, rng)
    return MonteCarloResult(value=data_entropy(instance.data) - ce.value,
                            stderr=ce.stderr)


def mutual_info(instance: Instance, sched: NoiseSchedule, t: float,
                n_mc: int, rng: np.random.Generator) -> MonteCarloResult:
    """I(x; z_t) = H(x) - H(x | z_t); equals I(e; z_t) when no embeddings collide."""
    return mutual_info_at_gamma(instance, float(sched.gamma(t)), n_mc, rng)


def conditional_total_correlation(instance: Instance, sched: NoiseSchedule,
                                  t: float, n_mc: int,
                                  rng: np.random.Generator) -> TotalCorrelationResult:
    """C(x | z_t), the factorization gap of the posterior; >= 0 up to noise.

    Joint and per-position entropies share each z sample, so the per-sample
    differences give a variance-reduced stderr.
    """
    gamma = float(sched.gamma(t))
    h_joint, h_pos = _posterior_entropy_samples(instance, gamma, n_mc, rng)
    c = h_pos.sum(axis=-1) - h_joint
    return TotalCorrelationResult(value=float(c.mean()),
                                  stderr=float(c.std(ddof=1) / np.sqrt(n_mc)))


@dataclass(frozen=True)
class ImmseResult:
    residual: float       # |dI/dnu - MMSE/2|
    di_dnu: float
    half_mmse: float
    stderr: float         # stderr of the paired per-sample difference
    di_stderr: float = 0.0


def _entropy_given_z(instance: Instance, den: BayesDenoiser, z: np.ndarray,
                     gamma: float) -> np.ndarray:
    """Joint posterior entropy H(x | z) per sample, shape (n,)."""
    if instance.data.kind == "factorized":
        return _entropy_rows(den.rows(z, gamma)).sum(axis=-1)
    return _entropy_rows(den.joint_posterior(z, gamma))


def immse_residual(instance: Instance, sched: NoiseSchedule, t: float,
                   dnu: float, n_mc: int, rng: np.random.Generator,
                   chunk: int = 20000) -> ImmseResult:
    """Gaussian-channel identity check: dI/dnu = MMSE(nu)/2 at nu = SNR(t).

    The central difference reuses the same (x, eps) draws at nu + dnu and
    nu - dnu (z/sigma = sqrt(nu) e + eps with shared eps), and the MMSE
    uses the exact posterior variance on the same draws, so the residual
    is estimated sample-by-sample with strongly correlated noise removed.
    """
    nu = float(np.exp(-sched.gamma(t)))
    if dnu <= 0 or dnu >= nu:
        raise ValueError("need 0 < dnu < nu")
    den = BayesDenoiser(instance)
    g_mid = float(-np.log(nu))
    g_hi = float(-np.log(nu + dnu))
    g_lo = float(-np.log(nu - dnu))
    a_mid, s_mid = alpha_sigma_of_gamma(g_mid)
    a_hi, s_hi = alpha_sigma_of_gamma(g_hi)
    a_lo, s_lo = alpha_sigma_of_gamma(g_lo)
    di = np.empty(n_mc)
    mm = np.empty(n_mc)
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        tokens = instance.data.sample(m, rng)
        e = instance.embed(tokens)
        eps = rng.standard_normal(e.shape)
        h_hi = _entropy_given_z(instance, den, a_hi * e + s_hi * eps, g_hi)
        h_lo = _entropy_given_z(instance, den, a_lo * e + s_lo * eps, g_lo)
        di[done:done + m] = (h_lo - h_hi) / (2.0 * dnu)
        mm[done:done + m] = den.conditional_embedding_variance(
            a_mid * e + s_mid * eps, g_mid)
        done += m
    resid = di - 0.5 * mm
    return ImmseResult(residual=float(abs(resid.mean())),
                       di_dnu=float(di.mean()),
                       half_mmse=float(0.5 * mm.mean()),
                       stderr=float(resid.std(ddof=1) / np.sqrt(n_mc)),
                       di_stderr=float(di.std(ddof=1) / np.sqrt(n_mc)))


@dataclass(frozen=True)
class CeDecompositionResult:
    ce: float                 # CE(t), per-sequence nats
    trend: float              # H(x) - I(e; z_0) + kappa * t
    c_cond: float             # C(x | z_t)
    gap: float                # ce - (trend + c_cond), expected 0
    stderr: float             # joint stderr of the gap


def ce_decomposition_residual(instance: Instance, sched: NoiseSchedule,
                              t: float, kappa: float, n_mc: int,
                              rng: np.random.Generator,
                              denoiser: Denoiser | None = None,
                              i0: MonteCarloResult | None = None,
                              kappa_stderr: float = 0.0) -> CeDecompositionResult:
    """CE(t) minus its decomposition H(x) - I(e;z_0) + kappa t + C(x|z_t).

    Requires the flatness constant kappa of the schedule in use (the
    decomposition holds with the loss-flattening schedule and the
    exact-posterior denoiser). I(e; z_0) is estimated at t=0 with the same
    Monte-Carlo machinery unless a precomputed value is passed.
    """
    den = denoiser if denoiser is not None else BayesDenoiser(instance)
    gamma_t = float(sched.gamma(t))
    ce = ce_at_gamma(instance, den, gamma_t, n_mc, rng)
    if i0 is None:
        i0 = mutual_info(instance, sched, 0.0, n_mc, rng)
    tc = conditional_total_correlation(instance, sched, t, n_mc, rng)
    hx = data_entropy(instance.data)
    trend = hx - i0.value + kappa * t
    gap = ce.value - (trend + tc.value)
    se = float(np.sqrt(ce.stderr**2 + i0.stderr**2 + tc.stderr**2
                       + (t * kappa_stderr) ** 2))
    return CeDecompositionResult(ce=ce.value, trend=trend, c_cond=tc.value,
                                 gap=gap, stderr=se)
