"""Closed-form optimal noise schedule and variance-minimizing schedule learning.

The optimal interior shape flattens the per-timestep diffusion loss: with
cumulative weight G(gamma) = integral of w(gamma) = e^{-gamma} MSE(e^{-gamma}),
the shape gamma*(t) = G^{-1}(2 kappa t) makes ell(t) constant at
kappa = G(gamma1)/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import (Instance, MonotoneParametricShape, NoiseSchedule,
                   TabulatedShape, schedule_eval, sigmoid, softplus)
from .oracle import Denoiser, MonteCarloResult, mmse_at_gamma
from .parallel import parallel_map
from .rng import stream


@dataclass(frozen=True)
class ScheduleOptimum:
    kappa: float
    kappa_stderr: float
    gamma_grid: np.ndarray
    G_grid: np.ndarray
    w_grid: np.ndarray
    w_stderr: np.ndarray
    schedule: NoiseSchedule

    def G(self, gamma):
        return PchipInterpolator(self.gamma_grid, self.G_grid)(gamma)

    def G_inv(self, y):
        return PchipInterpolator(self.G_grid, self.gamma_grid)(y)


def weight_w(denoiser: Denoiser, instance: Instance, gamma: float,
             n_mc: int, rng: np.random.Generator,
             estimator: str = "sample") -> MonteCarloResult:
    """w(gamma) = e^{-gamma} * MSE at SNR e^{-gamma}, by Monte Carlo."""
    r = mmse_at_gamma(instance, gamma, n_mc, rng, denoiser=denoiser,
                      estimator=estimator)
    scale = float(np.exp(-gamma))
    return MonteCarloResult(value=scale * r.value, stderr=scale * r.stderr)


def _w_node(args):
    denoiser, instance, gamma, n_mc, seed, i, estimator = args
    return weight_w(denoiser, instance, gamma, n_mc,
                    stream(seed, "w-grid", i), estimator=estimator)


def compute_optimum(denoiser: Denoiser, instance: Instance,
                    gamma0: float, gamma1: float, grid_n: int,
                    n_mc: int, seed: int, workers: int = 1,
                    estimator: str = "auto") -> ScheduleOptimum:
    """Tabulate G on a gamma grid and invert it into the optimal shape.

    Each grid node uses its own substream keyed by (seed, node index), so
    the computation shards deterministically across workers. With
    estimator="auto" the variance-reduced conditional-variance MMSE path
    is used whenever the denoiser exposes exact posteriors.

    The weight collapses superexponentially at the high-SNR end, where
    even the conditional estimator returns zeros; those nodes are floored
    at a negligible positive value so the cumulative weight G stays
    strictly increasing and invertible. The affected time interval has
    measure ~w_floor and never matters downstream.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    if estimator == "auto":
        estimator = ("conditional"
                     if hasattr(denoiser, "conditional_embedding_variance")
                     else "sample")
    gammas = np.linspace(gamma0, gamma1, grid_n)
    results = parallel_map(
        _w_node, [(denoiser, instance, float(g), n_mc, seed, i, estimator)
                  for i, g in enumerate(gammas)], workers)
    w = np.array([r.value for r in results])
    w_se = np.array([r.stderr for r in results])
    if not np.any(w > 0):
        raise ValueError("non-monotone G: all weight estimates nonpositive")
    w = np.maximum(w, w.max() * 1e-9)
    dg = np.diff(gammas)
    G = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * dg)])
    if np.any(np.diff(G) <= 0):
        raise ValueError("non-monotone G")
    kappa = G[-1] / 2.0
    # trapezoid weights: half at the ends, full in the interior
    coef = np.full(grid_n, dg.mean())
    coef[0] *= 0.5
    coef[-1] *= 0.5
    kappa_se = 0.5 * float(np.sqrt(((coef * w_se) ** 2).sum()))
    t_grid = G / G[-1]
    g_tilde = (gammas - gamma0) / (gamma1 - gamma0)
    shape = TabulatedShape(t_grid, g_tilde)
    sched = NoiseSchedule(gamma0, gamma1, shape)
    return ScheduleOptimum(kappa=float(kappa), kappa_stderr=kappa_se,
                           gamma_grid=gammas, G_grid=G,
                           w_grid=w, w_stderr=w_se, schedule=sched)


def parametric_from_shape(shape, n_knots: int) -> MonotoneParametricShape:
    """Fit the piecewise-linear parametric family to any interior shape."""
    knots = np.linspace(0.0, 1.0, n_knots + 1)
    inc = np.diff(np.asarray(shape.value(knots), dtype=np.float64))
    inc = np.maximum(inc, 1e-12)
    raw = inc / inc.sum() * n_knots  # slopes of order 1
    # invert softplus: params = log(expm1(raw))
    params = np.log(np.expm1(raw))
    return MonotoneParametricShape(params)


def _diffusion_mean_losses(denoiser: Denoiser, instance: Instance,
                           sched: NoiseSchedule, ts: np.ndarray,
                           tokens: np.ndarray, eps: np.ndarray,
                           estimator: str = "sample") -> np.ndarray:
    """Per-t-node mean diffusion loss with fixed (tokens, eps) draws.

    tokens: (n_t, m, L); eps: (n_t, m, L, d_e). Returns (n_t,) means; the
    fixed draws give common random numbers across finite-difference probes.
    estimator="conditional" swaps the squared error for the exact posterior
    variance given z (Bayes denoisers only).
    """
    ev = schedule_eval(sched, ts)
    return _mean_losses_gamma(denoiser, np.asarray(ev.gamma),
                              np.asarray(ev.gamma_prime), tokens, eps,
                              estimator)


def _mean_losses_gamma(denoiser: Denoiser, gammas: np.ndarray,
                       gprimes: np.ndarray, tokens: np.ndarray,
                       eps: np.ndarray, estimator: str) -> np.ndarray:
    """Same as `_diffusion_mean_losses` but parameterized directly by the
    per-node (gamma, gamma') pairs, so gradients can probe gamma alone."""
    n_t, m = tokens.shape[0], tokens.shape[1]
    e = denoiser.embedding_matrix[tokens]                  # (n_t, m, L, d_e)
    alpha = np.sqrt(sigmoid(-gammas))[:, None, None, None]
    sigma = np.sqrt(sigmoid(gammas))[:, None, None, None]
    z = (alpha * e + sigma * eps).reshape(n_t * m, *e.shape[2:])
    gam = np.repeat(gammas, m)
    if estimator == "conditional":
        mse = denoiser.conditional_embedding_variance(z, gam)
        mse = mse.reshape(n_t, m).mean(axis=1)
    else:
        e_hat = denoiser.predict_embedding(z, gam).reshape(e.shape)
        mse = ((e_hat - e) ** 2).sum(axis=(-2, -1)).mean(axis=1)  # (n_t,)
    snr_prime = -gprimes * np.exp(-gammas)
    return -0.5 * snr_prime * mse


def _shape_jacobians(shape: MonotoneParametricShape, ts: np.ndarray):
    """d gtilde(t)/d params and d gtilde'(t)/d params for the softplus
    piecewise-linear shape, both of shape (n_t, K)."""
    p = shape.params
    K = len(p)
    raw = softplus(p)
    S = raw.sum()
    inc = raw / S
    sig = sigmoid(p)
    # d inc_j / d p_k = sig_k (delta_jk - inc_j) / S
    dinc_dp = sig[None, :] * (np.eye(K) - inc[:, None]) / S
    seg = np.clip((np.asarray(ts) * K).astype(int), 0, K - 1)
    # gtilde(t) = sum_{j<seg} inc_j + K inc_seg (t - seg/K)
    dval_dinc = (np.arange(K)[None, :] < seg[:, None]).astype(np.float64)
    frac = K * (np.asarray(ts) - seg / K)
    dval_dinc[np.arange(len(ts)), seg] += frac
    dder_dinc = np.zeros((len(ts), K))
    dder_dinc[np.arange(len(ts)), seg] = K
    return dval_dinc @ dinc_dp, dder_dinc @ dinc_dp


@dataclass
class LearnResult:
    schedule: NoiseSchedule
    objective_history: list
    params: np.ndarray


def learn_schedule(denoiser: Denoiser, instance: Instance,
                   init_params: np.ndarray, steps: int, lr: float,
                   n_mc: int, rng: np.random.Generator,
                   gamma0: float | None = None, gamma1: float | None = None,
                   n_t: int = 32, fd_step: float = 1e-3,
                   learn_endpoints: bool = False,
                   endpoint_lr: float | None = None,
                   estimator: str = "auto",
                   avg_tail: int = 0) -> LearnResult:
    """Learn the interior shape by stochastic gradient on the mean of L_t^2.

    The mean diffusion loss is invariant to the interior shape, so
    minimizing E[L_t^2] minimizes the estimator variance; this is exactly
    what a 2*L_t backward hook on the shape outputs computes. The loss at
    each t stratum depends on the parameters only through (gamma, gamma'),
    so the gradient chains the analytic shape Jacobian with a central
    finite difference in gamma alone (common random numbers, vectorized
    over strata). The square is estimated by the product of two
    independent sample halves, which keeps the gradient unbiased for
    grad(ell^2) instead of grad(ell^2 + Var(ell-hat)). Endpoints, when
    learned, follow the mean loss.

    With ``avg_tail > 0`` the returned parameters are the average of the
    last ``avg_tail`` iterates (Polyak tail averaging), which removes the
    stochastic-gradient noise floor around the optimum without shrinking
    the learning rate.
    """
    params = np.asarray(init_params, dtype=np.float64).copy()
    if estimator == "auto":
        estimator = ("conditional"
                     if hasattr(denoiser, "conditional_embedding_variance")
                     else "sample")
    g0 = instance.schedule.gamma0 if gamma0 is None else float(gamma0)
    g1 = instance.schedule.gamma1 if gamma1 is None else float(gamma1)
    m = max(n_mc // n_t, 2)
    ep_lr = lr if endpoint_lr is None else endpoint_lr

    # Adam state
    mom = np.zeros_like(params)
    vel = np.zeros_like(params)
    ep_mom = np.zeros(2)
    ep_vel = np.zeros(2)
    b1, b2, eps_adam = 0.9, 0.999, 1e-8
    history = []
    tail_sum = np.zeros_like(params)
    tail_n = 0

    for step in range(steps):
        u = rng.uniform()
        ts = (np.arange(n_t) + u) / n_t
        tokens = instance.data.sample(n_t * m, rng).reshape(n_t, m, -1)
        eps = rng.standard_normal((n_t, m, instance.L, instance.d_e))

        def objective(p, lo=g0, hi=g1):
            sched = NoiseSchedule(lo, hi, MonotoneParametricShape(p))
            losses = _diffusion_mean_losses(denoiser, instance, sched, ts,
                                            tokens, eps, estimator=estimator)
            return float((losses**2).mean()), float(losses.mean())

        shape = MonotoneParametricShape(params)
        width = g1 - g0
        gam = g0 + width * np.asarray(shape.value(ts))
        gp = width * np.asarray(shape.derivative(ts))
        # independent halves: E[l_a * dl_b] = ell * dell exactly, so the
        # gradient targets ell^2 rather than ell^2 + Var(ell-hat), whose
        # variance term would displace the optimum where w collapses
        half = m // 2
        tok_a, tok_b = tokens[:, :half], tokens[:, half:]
        eps_a, eps_b = eps[:, :half], eps[:, half:]
        l_a = _mean_losses_gamma(denoiser, gam, gp, tok_a, eps_a, estimator)
        l_b = _mean_losses_gamma(denoiser, gam, gp, tok_b, eps_b, estimator)
        j0 = float((l_a * l_b).mean())
        if not np.isfinite(j0):
            raise FloatingPointError(
                f"schedule learning diverged at step {step}: objective={j0}")
        history.append(j0)

        h = fd_step

        def dgam(tok, ep):
            return (_mean_losses_gamma(denoiser, gam + h, gp, tok, ep,
                                       estimator)
                    - _mean_losses_gamma(denoiser, gam - h, gp, tok, ep,
                                         estimator)) / (2 * h)

        dj_gam = (l_a * dgam(tok_b, eps_b) + l_b * dgam(tok_a, eps_a)) / n_t
        dj_gp = 2.0 * l_a * l_b / gp / n_t   # loss is exactly linear in gamma'
        jac_val, jac_der = _shape_jacobians(shape, ts)
        grad = width * (dj_gam @ jac_val + dj_gp @ jac_der)

        tcorr = step + 1
        mom = b1 * mom + (1 - b1) * grad
        vel = b2 * vel + (1 - b2) * grad**2
        params -= lr * (mom / (1 - b1**tcorr)) / (np.sqrt(vel / (1 - b2**tcorr)) + eps_adam)

        if learn_endpoints:
            h = 1e-3
            ep_grad = np.array([
                (objective(params, lo=g0 + h)[1] - objective(params, lo=g0 - h)[1]) / (2 * h),
                (objective(params, hi=g1 + h)[1] - objective(params, hi=g1 - h)[1]) / (2 * h),
            ])
            ep_mom = b1 * ep_mom + (1 - b1) * ep_grad
            ep_vel = b2 * ep_vel + (1 - b2) * ep_grad**2
            upd = ep_lr * (ep_mom / (1 - b1**tcorr)) / (np.sqrt(ep_vel / (1 - b2**tcorr)) + eps_adam)
            g0 -= upd[0]
            g1 -= upd[1]
            if not g0 < g1:
                raise FloatingPointError("endpoint learning crossed gamma0 >= gamma1")

        if avg_tail > 0 and step >= steps - avg_tail:
            tail_sum += params
            tail_n += 1

    if tail_n > 0:
        params = tail_sum / tail_n
    final = NoiseSchedule(g0, g1, MonotoneParametricShape(params))
    return LearnResult(schedule=final, objective_history=history, params=params)


def _loss_node(args):
    from .losses import per_timestep_diffusion_loss
    denoiser, instance, sched, t, n_mc, seed, tag, i, estimator = args
    return per_timestep_diffusion_loss(instance, denoiser, sched, t, n_mc,
                                       stream(seed, tag, i),
                                       estimator=estimator)


def loss_curve(denoiser: Denoiser, instance: Instance, sched: NoiseSchedule,
               t_grid: np.ndarray, n_mc: int, seed: int,
               tag: str = "loss-curve", workers: int = 1,
               estimator: str = "sample"):
    """ell(t) on a grid, one deterministic substream per node."""
    results = parallel_map(
        _loss_node, [(denoiser, instance, sched, float(t), n_mc, seed, tag, i,
                      estimator)
                     for i, t in enumerate(t_grid)], workers)
    values = np.array([r.value for r in results])
    stderrs = np.array([r.stderr for r in results])
    return values, stderrs


def loss_variance_over_t(denoiser: Denoiser, instance: Instance,
                         sched: NoiseSchedule, n_t: int, n_mc: int,
                         seed: int, tag: str = "loss-var",
                         estimator: str = "sample"):
    """Estimate Var_t[ell(t)] on held-out strata, correcting for MC noise.

    Returns (variance estimate, rough stderr); the naive variance of the
    per-node means includes their sampling noise, which is subtracted.
    """
    t_grid = (np.arange(n_t) + 0.5) / n_t
    values, stderrs = loss_curve(denoiser, instance, sched, t_grid, n_mc,
                                 seed, tag=tag, estimator=estimator)
    raw_var = float(values.var(ddof=1))
    noise = float((stderrs**2).mean())
    centered = values - values.mean()
    se = float(np.sqrt((np.sum((2 * centered * stderrs) ** 2)
                        + 2 * np.sum(stderrs**4)) / n_t**2))
    return raw_var - noise, se
