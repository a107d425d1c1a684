"""Reverse-time samplers: stochastic ancestral plus three deterministic
PFODE integrators (DDIM, DPM-Solver++(2M), Heun in VE coordinates).

All steppers are batched over chains: z has shape (n, L, d_e) and each
step uses a scalar time pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import Instance, NoiseSchedule, schedule_eval
from .noising import snr_gap
from .oracle import Denoiser


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ancestral"  # ancestral | ddim | dpmpp2m | heun
    T: int = 64
    temperature: float = 1.0
    t_min: float = 1e-3
    time_grid: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ancestral", "ddim", "dpmpp2m", "heun"):
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def grid(self) -> np.ndarray:
        """Decreasing time grid from t=1 to t=t_min, T+1 points."""
        if self.time_grid is not None:
            return np.asarray(self.time_grid, dtype=np.float64)
        return np.linspace(1.0, self.t_min, self.T + 1)


def apply_temperature(rows: np.ndarray, tau: float) -> np.ndarray:
    """Rescale simplex rows by softmax(log(rows)/tau); tau=1 is the identity.

    The argmax of every row is invariant, so the final readout is
    temperature-free by construction.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if tau == 1.0:
        return rows
    with np.errstate(divide="ignore"):
        logits = np.log(rows) / tau
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def _predict(denoiser: Denoiser, z: np.ndarray, gamma: float, tau: float,
             x_sc=None) -> np.ndarray:
    if tau == 1.0:
        return denoiser.predict_embedding(z, gamma, x_sc)
    rows = apply_temperature(denoiser.rows(z, gamma, x_sc), tau)
    return rows @ denoiser.embedding_matrix


def ancestral_step(z_t: np.ndarray, t_hi: float, t_lo: float,
                   denoiser: Denoiser, sched: NoiseSchedule,
                   rng: np.random.Generator, tau: float = 1.0) -> np.ndarray:
    """z_s = (1-c)(alpha_s/alpha_t) z_t + c alpha_s e_hat + sqrt(c(1-alpha_s^2)) eps."""
    hi = schedule_eval(sched, t_hi)
    lo = schedule_eval(sched, t_lo)
    c = snr_gap(sched, t_lo, t_hi)
    e_hat = _predict(denoiser, z_t, float(hi.gamma), tau)
    noise = rng.standard_normal(z_t.shape)
    return ((1.0 - c) * (lo.alpha / hi.alpha) * z_t + c * lo.alpha * e_hat
            + np.sqrt(c * (1.0 - lo.alpha**2)) * noise)


def ddim_step(z_t: np.ndarray, t_hi: float, t_lo: float, denoiser: Denoiser,
              sched: NoiseSchedule, tau: float = 1.0,
              e_hat: np.ndarray | None = None) -> np.ndarray:
    """z_s = alpha_s e_hat + sigma_s eps_hat with eps_hat implied by z_t."""
    hi = schedule_eval(sched, t_hi)
    lo = schedule_eval(sched, t_lo)
    if e_hat is None:
        e_hat = _predict(denoiser, z_t, float(hi.gamma), tau)
    eps_hat = (z_t - hi.alpha * e_hat) / hi.sigma
    return lo.alpha * e_hat + lo.sigma * eps_hat


@dataclass
class Dpmpp2mState:
    prev_pred: np.ndarray | None = None   # cached x_theta E from last step
    h_prev: float | None = None


def dpmpp2m_step(z: np.ndarray, state: Dpmpp2mState, t_hi: float, t_lo: float,
                 denoiser: Denoiser, sched: NoiseSchedule,
                 tau: float = 1.0) -> tuple[np.ndarray, Dpmpp2mState]:
    """Second-order multistep update in lambda = -gamma/2 coordinates.

    The first call (no cached prediction) falls back to the DDIM update.
    """
    hi = schedule_eval(sched, t_hi)
    lo = schedule_eval(sched, t_lo)
    lam_hi = -float(hi.gamma) / 2.0
    lam_lo = -float(lo.gamma) / 2.0
    h = lam_lo - lam_hi
    if h <= 0:
        raise ValueError("nonpositive lambda step")
    pred = _predict(denoiser, z, float(hi.gamma), tau)
    if state.prev_pred is None:
        z_next = ddim_step(z, t_hi, t_lo, denoiser, sched, tau, e_hat=pred)
    else:
        r = state.h_prev / h
        D = (1.0 + 1.0 / (2.0 * r)) * pred - (1.0 / (2.0 * r)) * state.prev_pred
        z_next = (lo.sigma / hi.sigma) * z - lo.alpha * (np.exp(-h) - 1.0) * D
    return z_next, Dpmpp2mState(prev_pred=pred, h_prev=h)


def heun_ve_step(z_t: np.ndarray, t_hi: float, t_lo: float, denoiser: Denoiser,
                 sched: NoiseSchedule, is_last: bool = False,
                 tau: float = 1.0) -> np.ndarray:
    """Predictor-corrector step on dzbar/dsigma_tilde = (zbar - e_hat)/sigma_tilde.

    zbar = z/alpha and sigma_tilde = exp(gamma/2); the corrector is skipped
    on the final step.
    """
    hi = schedule_eval(sched, t_hi)
    lo = schedule_eval(sched, t_lo)
    st_hi = float(np.exp(hi.gamma / 2.0))
    st_lo = float(np.exp(lo.gamma / 2.0))
    zbar = z_t / hi.alpha
    slope_hi = (zbar - _predict(denoiser, z_t, float(hi.gamma), tau)) / st_hi
    zbar_pred = zbar + (st_lo - st_hi) * slope_hi
    if is_last:
        return lo.alpha * zbar_pred
    z_pred_vp = lo.alpha * zbar_pred
    slope_lo = (zbar_pred - _predict(denoiser, z_pred_vp, float(lo.gamma), tau)) / st_lo
    zbar_next = zbar + 0.5 * (st_lo - st_hi) * (slope_hi + slope_lo)
    return lo.alpha * zbar_next


@dataclass(frozen=True)
class SampleRun:
    tokens: np.ndarray       # (n, L) token ids
    nfe: int
    final_state: np.ndarray  # (n, L, d_e)


def run_sampler(cfg: SamplerConfig, denoiser: Denoiser, sched: NoiseSchedule,
                instance: Instance, n_samples: int,
                rng: np.random.Generator) -> SampleRun:
    """Simulate backward from z ~ N(0, I) and read out argmax tokens.

    NFE accounting: T+1 for single-evaluation samplers (T steps plus the
    final argmax readout), 2T for Heun (two evaluations per step, one on
    the last step, plus the readout).
    """
    grid = cfg.grid()
    z = rng.standard_normal((n_samples, instance.L, instance.d_e))
    tau = cfg.temperature
    state = Dpmpp2mState()
    nfe = 0
    for i in range(len(grid) - 1):
        t_hi, t_lo = float(grid[i]), float(grid[i + 1])
        if cfg.kind == "ancestral":
            z = ancestral_step(z, t_hi, t_lo, denoiser, sched, rng, tau)
            nfe += 1
        elif cfg.kind == "ddim":
            z = ddim_step(z, t_hi, t_lo, denoiser, sched, tau)
            nfe += 1
        elif cfg.kind == "dpmpp2m":
            z, state = dpmpp2m_step(z, state, t_hi, t_lo, denoiser, sched, tau)
            nfe += 1
        else:  # heun
            is_last = i == len(grid) - 2
            z = heun_ve_step(z, t_hi, t_lo, denoiser, sched,
                             is_last=is_last, tau=tau)
            nfe += 1 if is_last else 2
    # final readout: argmax of the decoder rows; ties break to lowest index
    g_end = float(sched.gamma(grid[-1]))
    rows = denoiser.rows(z, g_end)
    nfe += 1
    tokens = rows.argmax(axis=-1)
    return SampleRun(tokens=tokens, nfe=nfe, final_state=z)
