"""NELBO terms, per-timestep diffusion and cross-entropy losses.

All values are per-sequence nats (sums over positions); divide by L for
per-token numbers. Monte-Carlo estimators return (value, stderr) records.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingTable, Instance, NoiseSchedule, schedule_eval
from .oracle import Denoiser, MonteCarloResult, bayes_denoiser, draw_noisy_batch
from .rng import stream

# log-loss clamp: keeps estimators finite while flagging the pathology
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class FlaggedResult:
    value: float
    stderr: float
    n_flagged: int = 0


@dataclass(frozen=True)
class NelboResult:
    value: float
    stderr: float
    per_token: float
    prior: float
    recon: FlaggedResult
    diffusion: MonteCarloResult


def _mc_result(samples: np.ndarray) -> MonteCarloResult:
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / np.sqrt(len(samples))) if len(samples) > 1 else 0.0
    return MonteCarloResult(value=mean, stderr=se)


def prior_loss(tokens: np.ndarray, emb: EmbeddingTable, sched: NoiseSchedule) -> float:
    """Closed-form KL(q(z_1|x) || N(0, I)) for one sequence."""
    ev = schedule_eval(sched, 1.0)
    e = emb.embed(tokens)
    L, d_e = e.shape[-2], e.shape[-1]
    sq = float((e**2).sum())
    s2 = float(ev.sigma**2)
    return 0.5 * (L * d_e * (s2 - 1.0 - np.log(s2)) + float(ev.alpha**2) * sq)


def token_log_scores(rows: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """Per-sequence sum of log row-probabilities at the true tokens.

    rows: (..., L, V); tokens: (..., L). Probabilities are clamped at
    PROB_FLOOR; the caller counts clamped entries via `count_flagged`.
    """
    picked = np.take_along_axis(rows, tokens[..., None], axis=-1)[..., 0]
    return np.log(np.maximum(picked, PROB_FLOOR)).sum(axis=-1)


def count_flagged(rows: np.ndarray, tokens: np.ndarray) -> int:
    picked = np.take_along_axis(rows, tokens[..., None], axis=-1)[..., 0]
    return int((picked < PROB_FLOOR).sum())


def reconstruction_loss(tokens: np.ndarray, denoiser: Denoiser,
                        sched: NoiseSchedule, n_mc: int,
                        rng: np.random.Generator) -> FlaggedResult:
    """Monte-Carlo E_{z_0}[ -sum_l log <x_theta^l(z_0, 0), x^l> ] for one sequence."""
    ev = schedule_eval(sched, 0.0)
    e = denoiser.embedding_matrix[np.asarray(tokens)]
    z0 = ev.alpha * e + ev.sigma * rng.standard_normal((n_mc,) + e.shape)
    rows = denoiser.rows(z0, float(ev.gamma))
    toks = np.broadcast_to(np.asarray(tokens), (n_mc,) + np.asarray(tokens).shape)
    samples = -token_log_scores(rows, toks)
    r = _mc_result(samples)
    return FlaggedResult(r.value, r.stderr, count_flagged(rows, toks))


def diffusion_loss_sample(tokens: np.ndarray, denoiser: Denoiser,
                          sched: NoiseSchedule, t: float,
                          rng: np.random.Generator) -> float:
    """One draw of -1/2 SNR'(t) ||e_theta(z_t, t) - e||^2 (always >= 0)."""
    ev = schedule_eval(sched, t)
    e = denoiser.embedding_matrix[np.asarray(tokens)]
    z = ev.alpha * e + ev.sigma * rng.standard_normal(e.shape)
    e_hat = denoiser.predict_embedding(z, float(ev.gamma))
    return float(-0.5 * ev.snr_prime * ((e_hat - e) ** 2).sum())


def _diffusion_samples(instance: Instance, denoiser: Denoiser,
                       sched: NoiseSchedule, t: float, n_mc: int,
                       rng: np.random.Generator, chunk: int = 50000,
                       estimator: str = "sample") -> np.ndarray:
    ev = schedule_eval(sched, t)
    out = np.empty(n_mc)
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        _, e, z = draw_noisy_batch(instance, float(ev.gamma), m, rng)
        if estimator == "conditional":
            err = denoiser.conditional_embedding_variance(z, float(ev.gamma))
        else:
            e_hat = denoiser.predict_embedding(z, float(ev.gamma))
            err = ((e_hat - e) ** 2).sum(axis=(-2, -1))
        out[done:done + m] = -0.5 * float(ev.snr_prime) * err
        done += m
    return out


def per_timestep_diffusion_loss(instance: Instance, denoiser: Denoiser,
                                sched: NoiseSchedule, t: float, n_mc: int,
                                rng: np.random.Generator,
                                estimator: str = "sample") -> MonteCarloResult:
    """ell(t) = -1/2 SNR'(t) E_{x, z_t} ||e_theta - e||^2 by Monte Carlo.

    estimator="conditional" swaps the squared error for the exact posterior
    variance given z (same mean for a Bayes denoiser, much lower variance).
    """
    return _mc_result(_diffusion_samples(instance, denoiser, sched, t, n_mc,
                                         rng, estimator=estimator))


def ce_at_gamma(instance: Instance, denoiser: Denoiser, gamma: float,
                n_mc: int, rng: np.random.Generator,
                chunk: int = 50000) -> FlaggedResult:
    """Sequence cross-entropy E[-sum_l log <x_theta^l, x^l>] at signal level gamma."""
    samples = np.empty(n_mc)
    flagged = 0
    done = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        tokens, _, z = draw_noisy_batch(instance, gamma, m, rng)
        rows = denoiser.rows(z, gamma)
        samples[done:done + m] = -token_log_scores(rows, tokens)
        flagged += count_flagged(rows, tokens)
        done += m
    r = _mc_result(samples)
    return FlaggedResult(r.value, r.stderr, flagged)


def per_timestep_ce(instance: Instance, denoiser: Denoiser, sched: NoiseSchedule,
                    t: float, n_mc: int, rng: np.random.Generator) -> FlaggedResult:
    """CE(t): expected per-sequence log loss of one-shot decoding at time t."""
    return ce_at_gamma(instance, denoiser, float(sched.gamma(t)), n_mc, rng)


def stratified_times(n: int, rng: np.random.Generator) -> np.ndarray:
    """t_i = (i + u)/n with one shared uniform u (variance-reduced t draw)."""
    u = rng.uniform()
    return (np.arange(n) + u) / n


def nelbo_estimate(instance: Instance, denoiser: Denoiser, sched: NoiseSchedule,
                   n_mc: int, rng: np.random.Generator,
                   tokens: np.ndarray | None = None) -> NelboResult:
    """NELBO = prior + reconstruction + diffusion, diffusion over stratified t.

    With `tokens` given the bound is for that sequence; otherwise the
    estimate averages over x ~ q_data (one fresh x per Monte-Carlo draw).
    """
    fixed_x = tokens is not None

    if fixed_x:
        prior = prior_loss(tokens, instance.embedding, sched)
        prior_se = 0.0
    else:
        xs = instance.data.sample(n_mc, rng)
        e = instance.embed(xs)
        ev1 = schedule_eval(sched, 1.0)
        L, d_e = instance.L, instance.d_e
        s2 = float(ev1.sigma**2)
        p_samples = 0.5 * (L * d_e * (s2 - 1.0 - np.log(s2))
                           + float(ev1.alpha**2) * (e**2).sum(axis=(-2, -1)))
        pr = _mc_result(p_samples)
        prior, prior_se = pr.value, pr.stderr

    # reconstruction
    ev0 = schedule_eval(sched, 0.0)
    if fixed_x:
        recon = reconstruction_loss(tokens, denoiser, sched, n_mc, rng)
    else:
        toks, e, z0 = draw_noisy_batch(instance, float(ev0.gamma), n_mc, rng)
        rows = denoiser.rows(z0, float(ev0.gamma))
        samples = -token_log_scores(rows, toks)
        r = _mc_result(samples)
        recon = FlaggedResult(r.value, r.stderr, count_flagged(rows, toks))

    # diffusion over stratified t
    ts = stratified_times(n_mc, rng)
    ev = schedule_eval(sched, ts)
    gammas = np.asarray(ev.gamma)
    if fixed_x:
        e = denoiser.embedding_matrix[np.asarray(tokens)]
        e_batch = np.broadcast_to(e, (n_mc,) + e.shape)
    else:
        xs = instance.data.sample(n_mc, rng)
        e_batch = instance.embed(xs)
    alpha = ev.alpha[:, None, None]
    sigma = ev.sigma[:, None, None]
    z = alpha * e_batch + sigma * rng.standard_normal(e_batch.shape)
    e_hat = denoiser.predict_embedding(z, gammas)
    d_samples = -0.5 * ev.snr_prime * ((e_hat - e_batch) ** 2).sum(axis=(-2, -1))
    diff = _mc_result(d_samples)

    value = prior + recon.value + diff.value
    stderr = float(np.sqrt(prior_se**2 + recon.stderr**2 + diff.stderr**2))
    return NelboResult(value=value, stderr=stderr,
                       per_token=value / instance.L, prior=prior,
                       recon=recon, diffusion=diff)


def perplexity(nelbo_value: float, n_tokens: int) -> float:
    """ppl = exp(NELBO / token count)."""
    return float(np.exp(nelbo_value / n_tokens))


@dataclass(frozen=True)
class AuxCeSample:
    value: float
    nelbo_part: float
    ce_part: float
    weight: float
    # which parameter groups the CE term may reach; the trainer enforces this
    ce_gradient_targets: tuple[str, ...] = ("denoiser", "embedding")


def aux_ce_loss(tokens: np.ndarray, instance: Instance, denoiser: Denoiser,
                sched: NoiseSchedule, w: float,
                rng: np.random.Generator, n_mc: int = 1) -> AuxCeSample:
    """One sample of NELBO(x) + w * CE(x); the CE gradient never reaches the
    schedule (recorded in `ce_gradient_targets`, enforced by the trainer)."""
    if w < 0:
        raise ValueError("w must be nonnegative")
    nelbo = nelbo_estimate(instance, denoiser, sched, max(n_mc, 1), rng,
                           tokens=tokens)
    # CE over uniformly drawn t for the same sequence
    ts = stratified_times(max(n_mc, 1), rng)
    ev = schedule_eval(sched, ts)
    e = denoiser.embedding_matrix[np.asarray(tokens)]
    z = ev.alpha[:, None, None] * e + ev.sigma[:, None, None] \
        * rng.standard_normal((len(ts),) + e.shape)
    rows = denoiser.rows(z, np.asarray(ev.gamma))
    toks = np.broadcast_to(np.asarray(tokens), (len(ts),) + np.asarray(tokens).shape)
    ce = float(-token_log_scores(rows, toks).mean())
    return AuxCeSample(value=nelbo.value + w * ce, nelbo_part=nelbo.value,
                       ce_part=ce, weight=float(w))
