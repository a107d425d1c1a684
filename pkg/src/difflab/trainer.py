"""Training step and loop for a toy per-position denoiser.

One step draws a batch, splits it adaptively between reconstruction rows
(t=0) and diffusion rows by the running loss-noise ratio, marks exactly
ceil(p_sc * B) rows for self-conditioning, and applies three coupled
updates:

* network parameters by analytic backpropagation,
* interior schedule shape by finite differences on the mean squared
  per-row diffusion loss (the variance-minimizing objective; the mean is
  shape-invariant),
* embeddings by finite differences on the full bound, re-normalized to
  unit rows after each update.

Self-conditioned rows are detached from the schedule and embedding
objectives, and the bootstrap pass is always treated as a constant input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import (EmbeddingTable, Instance, MonotoneParametricShape,
                   NoiseSchedule, alpha_sigma_of_gamma, schedule_eval,
                   sigmoid)
from .oracle import Denoiser
from .rng import stream


def output_prior_logits(z: np.ndarray, E: np.ndarray, gamma) -> np.ndarray:
    """Closed-form Gaussian log-density logits -||z - alpha e_v||^2 / (2 sigma^2).

    z: (..., L, d_e); returns (..., L, V). The normalizing constant is
    dropped (it is shared across v).
    """
    alpha, sigma = alpha_sigma_of_gamma(gamma)
    alpha = np.asarray(alpha)[..., None, None]
    s2 = np.asarray(sigma)[..., None, None] ** 2
    sq_e = np.einsum("vd,vd->v", E, E)
    cross = z @ E.T
    sq_z = (z**2).sum(axis=-1, keepdims=True)
    return -(sq_z - 2.0 * alpha * cross + alpha**2 * sq_e) / (2.0 * s2)


def adaptive_split(B: int, sigma_r: float, sigma_d: float) -> int:
    """B_r = clip(round(B * s_r / (s_r + s_d)), 1, B - 1)."""
    if B < 2:
        raise ValueError("batch size must be >= 2")
    return int(np.clip(round(B * sigma_r / (sigma_r + sigma_d)), 1, B - 1))


class ToyDenoiser(Denoiser):
    """Per-position 2-layer tanh network over (scaled z, gamma features,
    position one-hot, projected self-conditioning embedding), with optional
    closed-form output-prior logits added before the softmax.

    Gamma features are (gamma, sin gamma, cos gamma); the position one-hot
    lets the shared weights represent position-dependent token priors (the
    exact posterior for factorized data needs them); the input rescale is
    1/std of a z component at that gamma (config-overridable constant).
    """

    def __init__(self, embedding_matrix: np.ndarray, width: int = 64,
                 seed: int = 0, output_prior: bool = True,
                 rescale: float | str = "auto", n_positions: int = 1):
        self.embedding_matrix = np.asarray(embedding_matrix, dtype=np.float64)
        V, d_e = self.embedding_matrix.shape
        self.V, self.d_e = V, d_e
        self.width = width
        self.output_prior = output_prior
        self.rescale = rescale
        self.n_positions = int(n_positions)
        self.d_in = d_e + 3 + self.n_positions
        rng = stream(seed, "toy-denoiser-init")
        self.W1 = rng.standard_normal((width, self.d_in)) / np.sqrt(self.d_in)
        self.b1 = np.zeros(width)
        # zero head: initial rows are uniform (or the prior logits alone)
        self.W2 = np.zeros((V, width))
        self.b2 = np.zeros(V)
        self.P = rng.standard_normal((self.d_in, d_e)) * (0.1 / np.sqrt(d_e))
        if self.n_params > 100000:
            raise ValueError("toy denoiser exceeds the parameter budget")

    # -- parameter vector -----------------------------------------------------

    @property
    def n_params(self) -> int:
        return sum(a.size for a in (self.W1, self.b1, self.W2, self.b2, self.P))

    def get_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in
                               (self.W1, self.b1, self.W2, self.b2, self.P)])

    def set_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for name in ("W1", "b1", "W2", "b2", "P"):
            a = getattr(self, name)
            setattr(self, name, vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != len(vec):
            raise ValueError("parameter vector length mismatch")

    # -- forward --------------------------------------------------------------

    def _rescale(self, gamma):
        if self.rescale != "auto":
            return np.asarray(float(self.rescale))
        alpha, sigma = alpha_sigma_of_gamma(gamma)
        return 1.0 / np.sqrt(np.asarray(alpha)**2 / self.d_e + np.asarray(sigma)**2)

    def features(self, z: np.ndarray, gamma, x_sc=None) -> np.ndarray:
        """Input features (..., L, d_in)."""
        z = np.asarray(z, dtype=np.float64)
        batch = z.shape[:-2]
        g = np.broadcast_to(np.asarray(gamma, dtype=np.float64), batch)
        r = self._rescale(g)[..., None, None]
        gfeat = np.stack([g, np.sin(g), np.cos(g)], axis=-1)  # (..., 3)
        gfeat = np.broadcast_to(gfeat[..., None, :], batch + (z.shape[-2], 3))
        if z.shape[-2] != self.n_positions:
            raise ValueError("z has a different number of positions than the "
                             "network was built for")
        onehot = np.broadcast_to(np.eye(self.n_positions),
                                 batch + (self.n_positions, self.n_positions))
        f = np.concatenate([r * z, gfeat, onehot], axis=-1)
        if x_sc is not None:
            f = f + np.asarray(x_sc) @ self.P.T
        return f

    def net_logits(self, f: np.ndarray):
        """Network logits and the hidden activations (for backprop)."""
        a1 = f @ self.W1.T + self.b1
        h = np.tanh(a1)
        return h @ self.W2.T + self.b2, h

    def logits(self, z: np.ndarray, gamma, x_sc=None) -> np.ndarray:
        f = self.features(z, gamma, x_sc)
        out, _ = self.net_logits(f)
        if self.output_prior:
            out = out + output_prior_logits(np.asarray(z, dtype=np.float64),
                                            self.embedding_matrix, gamma)
        return out

    def rows(self, z: np.ndarray, gamma, x_sc=None) -> np.ndarray:
        lg = self.logits(z, gamma, x_sc)
        return np.exp(lg - logsumexp(lg, axis=-1, keepdims=True))

    def clone(self) -> "ToyDenoiser":
        other = ToyDenoiser(self.embedding_matrix, self.width, seed=0,
                            output_prior=self.output_prior,
                            rescale=self.rescale,
                            n_positions=self.n_positions)
        other.set_params(self.get_params())
        return other


@dataclass
class TrainConfig:
    steps: int = 20000
    B: int = 32
    p_sc: float = 0.25
    lr_net: float = 1e-3
    lr_sched: float = 1e-2
    lr_emb: float = 1e-2
    warmup: int = 500
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.0
    ema_decay: float = 0.9999
    sigma_ema_decay: float = 0.99
    n_sched_knots: int = 16
    width: int = 64
    output_prior: bool = True
    rescale: float | str = "auto"
    train_embedding: bool = True
    train_schedule: bool = True
    aux_ce_weight: float = 0.0
    fd_step: float = 1e-3
    log_every: int = 50


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, x: np.ndarray) -> "_AdamSlot":
        return cls(m=np.zeros_like(x), v=np.zeros_like(x))

    def update(self, x: np.ndarray, grad: np.ndarray, lr: float,
               beta1: float, beta2: float, weight_decay: float,
               eps: float = 1e-8) -> np.ndarray:
        """Decoupled weight-decay adaptive-moment step; returns new x."""
        self.t += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad**2
        mhat = self.m / (1 - beta1**self.t)
        vhat = self.v / (1 - beta2**self.t)
        return x - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * x)


@dataclass
class TrainState:
    net_slot: _AdamSlot
    sched_slot: _AdamSlot
    emb_slot: _AdamSlot
    ema_params: np.ndarray
    sigma_r: float = 1.0
    sigma_d: float = 1.0
    step: int = 0


@dataclass(frozen=True)
class StepReport:
    step: int
    recon: float
    diffusion: float
    prior: float
    total: float
    B_r: int
    n_sc: int
    sigma_r: float
    sigma_d: float
    # EMA values the adaptive split was computed from (pre-update)
    sigma_r_used: float = 1.0
    sigma_d_used: float = 1.0


@dataclass
class BatchDraw:
    """Frozen randomness of one step, so every finite-difference probe sees
    common random numbers."""

    tokens: np.ndarray    # (B, L)
    eps: np.ndarray       # (B, L, d_e)
    t: np.ndarray         # (B,), 0 on recon rows
    is_recon: np.ndarray  # (B,) bool
    is_sc: np.ndarray     # (B,) bool
    x_sc: np.ndarray      # (B, L, d_e), zeros off self-cond rows


def prepare_batch(tokens: np.ndarray, denoiser: ToyDenoiser,
                  sched: NoiseSchedule, emb: np.ndarray, B_r: int,
                  p_sc: float, rng: np.random.Generator) -> BatchDraw:
    """Assign rows, draw noise, and run the detached bootstrap pass."""
    B, L = tokens.shape
    d_e = emb.shape[1]
    is_recon = np.zeros(B, dtype=bool)
    is_recon[:B_r] = True
    n_sc = math.ceil(p_sc * B)
    is_sc = np.zeros(B, dtype=bool)
    is_sc[rng.choice(B, size=n_sc, replace=False)] = True
    t = np.zeros(B)
    B_d = B - B_r
    u = rng.uniform()
    t[B_r:] = (np.arange(B_d) + u) / B_d
    eps = rng.standard_normal((B, L, d_e))
    # bootstrap pass (constant input; never backpropagated through)
    x_sc = np.zeros((B, L, d_e))
    if n_sc:
        ev = schedule_eval(sched, t[is_sc])
        e = emb[tokens[is_sc]]
        z = ev.alpha[:, None, None] * e + ev.sigma[:, None, None] * eps[is_sc]
        x_sc[is_sc] = denoiser.rows(z, np.asarray(ev.gamma)) @ emb
    return BatchDraw(tokens=tokens, eps=eps, t=t, is_recon=is_recon,
                     is_sc=is_sc, x_sc=x_sc)


def _prior_term(tokens: np.ndarray, emb: np.ndarray, sched: NoiseSchedule) -> float:
    ev = schedule_eval(sched, 1.0)
    e = emb[tokens]
    L, d_e = e.shape[-2], e.shape[-1]
    s2 = float(ev.sigma**2)
    sq = (e**2).sum(axis=(-2, -1))
    return float(0.5 * (L * d_e * (s2 - 1.0 - np.log(s2))
                        + float(ev.alpha**2) * sq).mean())


def _row_quantities(draw: BatchDraw, sched: NoiseSchedule, emb: np.ndarray):
    """z, per-row gamma and diffusion weight c = -SNR'(t)/2 from the draw."""
    ev = schedule_eval(sched, draw.t)
    e = emb[draw.tokens]
    z = ev.alpha[:, None, None] * e + ev.sigma[:, None, None] * draw.eps
    c = -0.5 * np.asarray(ev.snr_prime)
    return z, e, np.asarray(ev.gamma), c


def batch_losses(denoiser: ToyDenoiser, sched: NoiseSchedule, emb: np.ndarray,
                 draw: BatchDraw):
    """Per-row losses of the step with the given parameters.

    Returns (recon_rows (B_r,), diff_rows (B_d,), prior, ce_rows (B_d,)).
    """
    z, e, gam, c = _row_quantities(draw, sched, emb)
    rows = denoiser.rows(z, gam, x_sc=draw.x_sc)
    picked = np.take_along_axis(rows, draw.tokens[..., None], axis=-1)[..., 0]
    logp = np.log(np.maximum(picked, 1e-300)).sum(axis=-1)
    e_hat = rows @ emb
    mse = ((e_hat - e) ** 2).sum(axis=(-2, -1))
    recon_rows = -logp[draw.is_recon]
    d = ~draw.is_recon
    diff_rows = c[d] * mse[d]
    ce_rows = -logp[d]
    prior = _prior_term(draw.tokens, emb, sched)
    return recon_rows, diff_rows, prior, ce_rows


def network_loss_and_grad(denoiser: ToyDenoiser, sched: NoiseSchedule,
                          emb: np.ndarray, draw: BatchDraw,
                          aux_ce_weight: float = 0.0,
                          want_grad: bool = True):
    """Total network objective and its analytic gradient.

    Objective = mean recon CE + mean diffusion loss (+ w * mean diffusion-row
    CE); the prior term carries no network dependence. The gradient treats
    z, gamma, embeddings, and the bootstrap x_sc as constants.
    """
    z, e, gam, c = _row_quantities(draw, sched, emb)
    B, L = draw.tokens.shape
    V = denoiser.V
    f = denoiser.features(z, gam, x_sc=draw.x_sc)
    net, h = denoiser.net_logits(f)
    lg = net + (output_prior_logits(z, emb, gam) if denoiser.output_prior else 0.0)
    lg = lg - logsumexp(lg, axis=-1, keepdims=True)
    rows = np.exp(lg)

    picked_lg = np.take_along_axis(lg, draw.tokens[..., None], axis=-1)[..., 0]
    logp = picked_lg.sum(axis=-1)
    e_hat = rows @ emb
    mse = ((e_hat - e) ** 2).sum(axis=(-2, -1))

    rmask = draw.is_recon
    dmask = ~rmask
    B_r = int(rmask.sum())
    B_d = B - B_r
    recon = float(-logp[rmask].mean())
    diff = float((c[dmask] * mse[dmask]).mean())
    ce_aux = float(-logp[dmask].mean())
    total = recon + diff + aux_ce_weight * ce_aux
    if not want_grad:
        return total, (recon, diff, ce_aux), None

    # d total / d logits, row by row
    onehot = np.zeros((B, L, V))
    np.put_along_axis(onehot, draw.tokens[..., None], 1.0, axis=-1)
    dlogits = np.zeros((B, L, V))
    # CE rows: softmax - onehot, weighted per contribution
    w_ce = rmask / max(B_r, 1) + aux_ce_weight * dmask / max(B_d, 1)
    dlogits += w_ce[:, None, None] * (rows - onehot)
    # diffusion rows: dL/drows through e_hat, then the softmax Jacobian
    g = 2.0 * (e_hat - e) @ emb.T                       # (B, L, V)
    g = (c * dmask / max(B_d, 1))[:, None, None] * g
    dlogits += rows * (g - (rows * g).sum(axis=-1, keepdims=True))

    flatf = f.reshape(-1, denoiser.d_in)
    flath = h.reshape(-1, denoiser.width)
    flatd = dlogits.reshape(-1, V)
    dW2 = flatd.T @ flath
    db2 = flatd.sum(axis=0)
    da1 = (flatd @ denoiser.W2) * (1.0 - flath**2)
    dW1 = da1.T @ flatf
    db1 = da1.sum(axis=0)
    dfeat = da1 @ denoiser.W1                            # (BL, d_in)
    flat_sc = draw.x_sc.reshape(-1, denoiser.d_e)
    dP = dfeat.T @ flat_sc
    grad = np.concatenate([dW1.ravel(), db1.ravel(), dW2.ravel(),
                           db2.ravel(), dP.ravel()])
    return total, (recon, diff, ce_aux), grad


def _sched_objective(shape_params: np.ndarray, sched: NoiseSchedule,
                     denoiser: ToyDenoiser, emb: np.ndarray,
                     draw: BatchDraw) -> float:
    """Mean squared per-row diffusion loss over non-self-cond diffusion rows.

    This is the variance-minimizing surrogate: the mean loss is invariant
    to the interior shape, so gradient descent on the square targets the
    flattening schedule (identical to a 2*L hook on the shape outputs).
    """
    s = NoiseSchedule(sched.gamma0, sched.gamma1,
                      MonotoneParametricShape(shape_params))
    mask = (~draw.is_recon) & (~draw.is_sc)
    sub = BatchDraw(tokens=draw.tokens[mask], eps=draw.eps[mask],
                    t=draw.t[mask], is_recon=np.zeros(mask.sum(), dtype=bool),
                    is_sc=np.zeros(mask.sum(), dtype=bool),
                    x_sc=draw.x_sc[mask])
    _, diff_rows, _, _ = batch_losses(denoiser, s, emb, sub)
    return float((diff_rows**2).mean())


def _sched_grad(shape_params: np.ndarray, sched: NoiseSchedule,
                denoiser: ToyDenoiser, emb: np.ndarray, draw: BatchDraw,
                h: float, rng: np.random.Generator) -> np.ndarray:
    """Gradient of the mean squared per-row diffusion loss via the shape's
    (gamma, gamma') hook.

    Each row's loss depends on the shape only through its own (gamma,
    gamma'), so one vectorized central difference in gamma plus the
    analytic shape Jacobian replaces per-knot probing; the loss is exactly
    linear in gamma'. The square at each t is estimated by the product of
    the row's loss and an independent partner loss at the same t (fresh
    noise, the neighbouring row's tokens), which keeps the gradient
    unbiased for grad(ell(t)^2) rather than grad(ell^2 + Var(ell-hat)).
    """
    from .schedule import _shape_jacobians

    shape = MonotoneParametricShape(shape_params)
    mask = (~draw.is_recon) & (~draw.is_sc)
    t = draw.t[mask]
    tokens = draw.tokens[mask]
    eps = draw.eps[mask]
    x_sc = draw.x_sc[mask]
    width = sched.gamma1 - sched.gamma0
    gam = sched.gamma0 + width * np.asarray(shape.value(t))
    gp = width * np.asarray(shape.derivative(t))
    e_a = emb[tokens]
    e_b = emb[np.roll(tokens, 1, axis=0)]
    eps_b = rng.standard_normal(eps.shape)

    def row_losses(gam_v, e, ep):
        a = np.sqrt(sigmoid(-gam_v))[:, None, None]
        s = np.sqrt(sigmoid(gam_v))[:, None, None]
        z = a * e + s * ep
        rows = denoiser.rows(z, gam_v, x_sc=x_sc)
        mse = (((rows @ emb) - e) ** 2).sum(axis=(-2, -1))
        return 0.5 * np.exp(-gam_v) * mse   # loss / gamma'

    per_gp_a = row_losses(gam, e_a, eps)
    per_gp_b = row_losses(gam, e_b, eps_b)
    l_a, l_b = gp * per_gp_a, gp * per_gp_b

    def dgam(e, ep):
        return gp * (row_losses(gam + h, e, ep)
                     - row_losses(gam - h, e, ep)) / (2 * h)

    n = len(t)
    dj_gam = (l_a * dgam(e_b, eps_b) + l_b * dgam(e_a, eps)) / n
    dj_gp = (l_a * per_gp_b + l_b * per_gp_a) / n
    jac_val, jac_der = _shape_jacobians(shape, t)
    return width * (dj_gam @ jac_val + dj_gp @ jac_der)


def _emb_objective(emb: np.ndarray, sched: NoiseSchedule,
                   denoiser: ToyDenoiser, draw: BatchDraw,
                   aux_ce_weight: float) -> float:
    """Bound objective as a function of the embedding table alone.

    Self-conditioned rows are excluded (their e is detached); the denoiser
    reads the probe table for both its output prior and the e-hat mixture.
    """
    mask = ~draw.is_sc
    sub = BatchDraw(tokens=draw.tokens[mask], eps=draw.eps[mask],
                    t=draw.t[mask], is_recon=draw.is_recon[mask],
                    is_sc=np.zeros(mask.sum(), dtype=bool),
                    x_sc=draw.x_sc[mask])
    probe = denoiser.clone()
    probe.embedding_matrix = emb
    recon_rows, diff_rows, prior, ce_rows = batch_losses(probe, sched, emb, sub)
    out = prior
    if recon_rows.size:
        out += float(recon_rows.mean())
    if diff_rows.size:
        out += float(diff_rows.mean()) + aux_ce_weight * float(ce_rows.mean())
    return out


def _fd_grad(fun, x: np.ndarray, h: float) -> np.ndarray:
    grad = np.empty(x.size)
    flat = x.ravel()
    for k in range(x.size):
        hi = flat.copy()
        hi[k] += h
        lo = flat.copy()
        lo[k] -= h
        grad[k] = (fun(hi.reshape(x.shape)) - fun(lo.reshape(x.shape))) / (2 * h)
    return grad.reshape(x.shape)


def init_state(denoiser: ToyDenoiser, shape_params: np.ndarray,
               emb: np.ndarray) -> TrainState:
    return TrainState(net_slot=_AdamSlot.like(denoiser.get_params()),
                      sched_slot=_AdamSlot.like(shape_params),
                      emb_slot=_AdamSlot.like(emb),
                      ema_params=denoiser.get_params())


def training_step(batch: np.ndarray, denoiser: ToyDenoiser,
                  sched: NoiseSchedule, emb: EmbeddingTable,
                  state: TrainState, cfg: TrainConfig,
                  rng: np.random.Generator):
    """One coupled update; returns (denoiser, sched, emb, state, report).

    The denoiser and state are mutated in place; schedule and embedding are
    replaced (both are immutable value types).
    """
    if not isinstance(sched.shape, MonotoneParametricShape):
        raise ValueError("training needs a parametric interior shape")
    B = len(batch)
    sigma_r_used, sigma_d_used = state.sigma_r, state.sigma_d
    B_r = adaptive_split(B, sigma_r_used, sigma_d_used)
    E = emb.matrix
    draw = prepare_batch(batch, denoiser, sched, E, B_r, cfg.p_sc, rng)

    recon_rows, diff_rows, prior, _ = batch_losses(denoiser, sched, E, draw)
    total_net, (recon, diff, ce_aux), net_grad = network_loss_and_grad(
        denoiser, sched, E, draw, aux_ce_weight=cfg.aux_ce_weight)
    total = recon + diff + prior + cfg.aux_ce_weight * ce_aux
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite loss at step {state.step}: "
            f"recon={recon} diff={diff} prior={prior} aux_ce={ce_aux}")

    warm = min(1.0, (state.step + 1) / max(cfg.warmup, 1))

    new_params = state.net_slot.update(
        denoiser.get_params(), net_grad, cfg.lr_net * warm,
        cfg.beta1, cfg.beta2, cfg.weight_decay)
    denoiser.set_params(new_params)

    shape_params = sched.shape.params
    if cfg.train_schedule and np.any((~draw.is_recon) & (~draw.is_sc)):
        g = _sched_grad(shape_params, sched, denoiser, E, draw, cfg.fd_step,
                        rng)
        shape_params = state.sched_slot.update(
            shape_params, g, cfg.lr_sched * warm, cfg.beta1, cfg.beta2, 0.0)
    new_sched = NoiseSchedule(sched.gamma0, sched.gamma1,
                              MonotoneParametricShape(shape_params))

    new_emb = emb
    if cfg.train_embedding:
        g = _fd_grad(lambda m: _emb_objective(m, sched, denoiser, draw,
                                              cfg.aux_ce_weight),
                     E, cfg.fd_step)
        updated = state.emb_slot.update(E.copy(), g, cfg.lr_emb * warm,
                                        cfg.beta1, cfg.beta2, 0.0)
        updated /= np.linalg.norm(updated, axis=1, keepdims=True)
        new_emb = EmbeddingTable(updated)
        denoiser.embedding_matrix = new_emb.matrix

    # bookkeeping EMAs (run even at zero learning rate)
    d = cfg.sigma_ema_decay
    if recon_rows.size >= 2:
        state.sigma_r = max(d * state.sigma_r
                            + (1 - d) * float(recon_rows.std(ddof=1)), 1e-8)
    if diff_rows.size >= 2:
        state.sigma_d = max(d * state.sigma_d
                            + (1 - d) * float(diff_rows.std(ddof=1)), 1e-8)
    state.ema_params = (cfg.ema_decay * state.ema_params
                        + (1 - cfg.ema_decay) * denoiser.get_params())
    state.step += 1

    report = StepReport(step=state.step, recon=recon, diffusion=diff,
                        prior=prior, total=total, B_r=B_r,
                        n_sc=int(draw.is_sc.sum()),
                        sigma_r=state.sigma_r, sigma_d=state.sigma_d,
                        sigma_r_used=sigma_r_used, sigma_d_used=sigma_d_used)
    return denoiser, new_sched, new_emb, state, report


@dataclass
class TrainResult:
    denoiser: ToyDenoiser        # final parameters
    ema_denoiser: ToyDenoiser    # evaluation copy with EMA parameters
    schedule: NoiseSchedule
    embedding: EmbeddingTable
    reports: list                # StepReport at every log point


def train_loop(instance: Instance, cfg: TrainConfig, seed: int = 0,
               callback=None) -> TrainResult:
    """Run cfg.steps training steps from scratch on the instance's data."""
    rng = stream(seed, "train-loop")
    den = ToyDenoiser(instance.embedding.matrix, width=cfg.width, seed=seed,
                      output_prior=cfg.output_prior, rescale=cfg.rescale,
                      n_positions=instance.data.L)
    sched = NoiseSchedule(instance.schedule.gamma0, instance.schedule.gamma1,
                          MonotoneParametricShape(np.zeros(cfg.n_sched_knots)))
    emb = instance.embedding
    state = init_state(den, sched.shape.params, emb.matrix)
    reports = []
    for step in range(cfg.steps):
        batch = instance.data.sample(cfg.B, rng)
        den, sched, emb, state, rep = training_step(batch, den, sched, emb,
                                                    state, cfg, rng)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            reports.append(rep)
            if callback is not None:
                callback(rep)
    ema = den.clone()
    ema.set_params(state.ema_params)
    return TrainResult(denoiser=den, ema_denoiser=ema, schedule=sched,
                       embedding=emb, reports=reports)


def save_checkpoint(path, result: TrainResult) -> None:
    """Full-precision structured-text checkpoint."""
    import json
    payload = {
        "params": result.denoiser.get_params().tolist(),
        "ema_params": result.ema_denoiser.get_params().tolist(),
        "width": result.denoiser.width,
        "output_prior": result.denoiser.output_prior,
        "rescale": result.denoiser.rescale,
        "n_positions": result.denoiser.n_positions,
        "schedule": result.schedule.to_dict(),
        "embedding": result.embedding.matrix.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> TrainResult:
    import json
    from .core import shape_from_dict  # noqa: F401  (via NoiseSchedule)
    with open(path) as fh:
        payload = json.load(fh)
    emb = EmbeddingTable(np.asarray(payload["embedding"]))
    den = ToyDenoiser(emb.matrix, width=payload["width"],
                      output_prior=payload["output_prior"],
                      rescale=payload["rescale"],
                      n_positions=payload.get("n_positions", 1))
    den.set_params(np.asarray(payload["params"]))
    ema = den.clone()
    ema.set_params(np.asarray(payload["ema_params"]))
    sched = NoiseSchedule.from_dict(payload["schedule"])
    return TrainResult(denoiser=den, ema_denoiser=ema, schedule=sched,
                       embedding=emb, reports=[])
