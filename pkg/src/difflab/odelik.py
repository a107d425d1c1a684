"""PFODE likelihood machinery: velocity fields, divergence estimators,
importance-weighted log-likelihood bounds, and the self-conditioning
chain-rule correction.

The production integration coordinate is gamma (it removes the
schedule-induced stiffness factor); t-space integration is kept for the
trace-invariance cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Instance, NoiseSchedule, alpha_sigma_of_gamma, schedule_eval, sigmoid
from .oracle import BayesDenoiser, Denoiser
from .rng import stream

LOG_2PI = float(np.log(2.0 * np.pi))


def velocity_t(z: np.ndarray, t: float, denoiser: Denoiser,
               sched: NoiseSchedule, x_sc=None) -> np.ndarray:
    """PFODE velocity in t: v = (alpha' - alpha sigma'/sigma) x_theta E + (sigma'/sigma) z."""
    ev = schedule_eval(sched, t)
    e_hat = denoiser.predict_embedding(z, float(ev.gamma), x_sc)
    # alpha' = -1/2 alpha sigma^2 gamma', sigma'/sigma = 1/2 alpha^2 gamma'
    gp = float(ev.gamma_prime)
    sig_ratio = 0.5 * float(ev.alpha) ** 2 * gp
    alpha_dot = -0.5 * float(ev.alpha) * float(ev.sigma) ** 2 * gp
    return (alpha_dot - float(ev.alpha) * sig_ratio) * e_hat + sig_ratio * z


def velocity_gamma(z: np.ndarray, gamma: float, denoiser: Denoiser,
                   x_sc=None) -> np.ndarray:
    """Schedule-free PFODE velocity in gamma: dz/dgamma = 1/2 (a^2 z - a x_theta E)
    with a^2 = sigmoid(-gamma)."""
    a2 = float(sigmoid(-gamma))
    a = float(np.sqrt(a2))
    e_hat = denoiser.predict_embedding(z, gamma, x_sc)
    return 0.5 * (a2 * z - a * e_hat)


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float | np.ndarray
    stderr: float | np.ndarray


@dataclass(frozen=True)
class DivergenceConfig:
    method: str = "hutchinson"      # hutchinson | exact
    probe: str = "rademacher"       # rademacher | gaussian
    n_probes: int = 1
    h: float = 1e-3

    def __post_init__(self):
        if self.method not in ("hutchinson", "exact"):
            raise ValueError(f"unknown divergence method {self.method!r}")
        if self.probe not in ("rademacher", "gaussian"):
            raise ValueError(f"unknown probe distribution {self.probe!r}")
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")


def divergence_exact(field, z: np.ndarray, h: float = 1e-3):
    """Trace of the Jacobian by central differences over every coordinate.

    z may carry leading batch dimensions before the trailing (L, d_e);
    returns a scalar (unbatched) or a batch-shaped array. The coordinate
    count L*d_e is capped at 64.
    """
    z = np.asarray(z, dtype=np.float64)
    D = z.shape[-1] * z.shape[-2]
    if D > 64:
        raise ValueError(f"dimension {D} exceeds the exact-divergence cap 64")
    batch = z.shape[:-2]
    out = np.zeros(batch)
    flat = z.reshape(batch + (D,))
    for j in range(D):
        dz = np.zeros(D)
        dz[j] = h
        zp = (flat + dz).reshape(z.shape)
        zm = (flat - dz).reshape(z.shape)
        fp = np.asarray(field(zp)).reshape(batch + (D,))[..., j]
        fm = np.asarray(field(zm)).reshape(batch + (D,))[..., j]
        out = out + (fp - fm) / (2.0 * h)
    return float(out) if batch == () else out


def _draw_probe(shape, probe: str, rng: np.random.Generator) -> np.ndarray:
    if probe == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(shape)


def divergence_hutchinson(field, z: np.ndarray, probe: str = "rademacher",
                          n_probes: int = 1, h: float = 1e-3,
                          rng: np.random.Generator | None = None) -> DivergenceEstimate:
    """Randomized trace estimate: mean over probes of xi . (f(z+h xi) - f(z-h xi)) / (2h)."""
    if rng is None:
        raise ValueError("divergence_hutchinson needs an rng")
    z = np.asarray(z, dtype=np.float64)
    batch = z.shape[:-2]
    vals = np.empty((n_probes,) + batch)
    done = 0
    while done < n_probes:  # probes ride a leading batch axis, chunked
        m = min(256, n_probes - done)
        xi = _draw_probe((m,) + z.shape, probe, rng)
        diff = np.asarray(field(z + h * xi)) - np.asarray(field(z - h * xi))
        vals[done:done + m] = (xi * diff).sum(axis=(-2, -1)) / (2.0 * h)
        done += m
    value = vals.mean(axis=0)
    if n_probes > 1:
        stderr = vals.std(axis=0, ddof=1) / np.sqrt(n_probes)
    else:
        stderr = np.zeros(batch)
    if batch == ():
        return DivergenceEstimate(float(value), float(stderr))
    return DivergenceEstimate(value, stderr)


def _node_divergence(field, z: np.ndarray, cfg: DivergenceConfig,
                     rng: np.random.Generator | None):
    if cfg.method == "exact":
        return divergence_exact(field, z, h=cfg.h)
    est = divergence_hutchinson(field, z, probe=cfg.probe,
                                n_probes=cfg.n_probes, h=cfg.h, rng=rng)
    return est.value


@dataclass(frozen=True)
class LogWeightRecord:
    log_w: float
    terminal_state: np.ndarray
    div_integral: float
    recon_logprob: float
    proposal_logdensity: float
    prior_logdensity: float
    z0: np.ndarray


def _selfcond_fields(denoiser: Denoiser, selfcond_mode: str | None,
                     z_node: np.ndarray, coord_args):
    """Velocity-field closure at one node, honoring the self-cond mode.

    closed_loop recomputes the bootstrap input at every perturbed state;
    open_loop_cached freezes it at the node state (dropping the chain-rule
    term from the divergence). The trajectory itself is identical.
    """
    make = coord_args
    if selfcond_mode is None or selfcond_mode == "closed_loop":
        return make(None)
    if selfcond_mode == "open_loop_cached":
        gamma = coord_args.gamma
        x_sc = denoiser.bootstrap(z_node, gamma)
        return make(x_sc)
    raise ValueError(f"unknown selfcond mode {selfcond_mode!r}")


class _GammaField:
    def __init__(self, denoiser, gamma):
        self.denoiser = denoiser
        self.gamma = float(gamma)

    def __call__(self, x_sc):
        return lambda zz: velocity_gamma(zz, self.gamma, self.denoiser, x_sc=x_sc)


class _TField:
    def __init__(self, denoiser, sched, t):
        self.denoiser = denoiser
        self.sched = sched
        self.t = float(t)
        self.gamma = float(sched.gamma(t))

    def __call__(self, x_sc):
        return lambda zz: velocity_t(zz, self.t, self.denoiser, self.sched, x_sc=x_sc)


def _simulate(z: np.ndarray, denoiser: Denoiser, sched: NoiseSchedule,
              steps: int, div_cfg: DivergenceConfig,
              rng: np.random.Generator | None, coords: str = "gamma",
              selfcond_mode: str | None = None):
    """Heun2 forward integration (gamma0 -> gamma1) of a batch of states,
    accumulating the divergence integral by trapezoid on the solver nodes.

    Returns (terminal states, divergence integrals) with the integral in
    gamma units (identical to the t-space integral by change of variables).
    """
    z = np.array(z, dtype=np.float64)
    batch = z.shape[:-2]
    if coords == "gamma":
        nodes = np.linspace(sched.gamma0, sched.gamma1, steps + 1)
        makers = [_GammaField(denoiser, g) for g in nodes]
    elif coords == "t":
        nodes = np.linspace(0.0, 1.0, steps + 1)
        makers = [_TField(denoiser, sched, t) for t in nodes]
    else:
        raise ValueError(f"unknown coords {coords!r}")

    div_nodes = np.empty((steps + 1,) + batch)
    fld = _selfcond_fields(denoiser, selfcond_mode, z, makers[0])
    div_nodes[0] = _node_divergence(fld, z, div_cfg, rng)
    for i in range(steps):
        h = float(nodes[i + 1] - nodes[i])
        vel = makers[i](None)
        vel_next = makers[i + 1](None)
        k1 = vel(z)
        k2 = vel_next(z + h * k1)
        z = z + 0.5 * h * (k1 + k2)
        if not np.all(np.isfinite(z)):
            raise RuntimeError(f"solver blow-up at step {i + 1}")
        fld = _selfcond_fields(denoiser, selfcond_mode, z, makers[i + 1])
        div_nodes[i + 1] = _node_divergence(fld, z, div_cfg, rng)
    dn = np.diff(nodes)
    integral = np.tensordot(dn, 0.5 * (div_nodes[:-1] + div_nodes[1:]), axes=(0, 0))
    return z, integral


def _assemble_records(x, z0, z_terminal, div_integral, denoiser, sched):
    """Build one LogWeightRecord per batch row from the integrated pieces."""
    x = np.asarray(x)
    e = denoiser.embedding_matrix[x]
    D = e.shape[-1] * e.shape[-2]
    a0, s0 = alpha_sigma_of_gamma(sched.gamma0)
    rows0 = denoiser.rows(z0, sched.gamma0)
    picked = np.take_along_axis(rows0, np.broadcast_to(x, z0.shape[:-1])[..., None],
                                axis=-1)[..., 0]
    recon = np.log(np.maximum(picked, 1e-300)).sum(axis=-1)
    proposal = (-0.5 * D * (LOG_2PI + np.log(s0**2))
                - ((z0 - a0 * e) ** 2).sum(axis=(-2, -1)) / (2.0 * s0**2))
    prior = -0.5 * D * LOG_2PI - 0.5 * (z_terminal**2).sum(axis=(-2, -1))
    log_w = recon + prior + div_integral - proposal
    recs = []
    for k in range(z0.shape[0]):
        recs.append(LogWeightRecord(
            log_w=float(log_w[k]), terminal_state=z_terminal[k],
            div_integral=float(np.asarray(div_integral)[k]),
            recon_logprob=float(recon[k]),
            proposal_logdensity=float(proposal[k]),
            prior_logdensity=float(prior[k]), z0=z0[k]))
    return recs


def integrate_logweight(x: np.ndarray, denoiser: Denoiser, sched: NoiseSchedule,
                        z0: np.ndarray | None = None,
                        rng: np.random.Generator | None = None,
                        steps: int = 128,
                        divergence: DivergenceConfig = DivergenceConfig(),
                        coords: str = "gamma",
                        selfcond_mode: str | None = None) -> LogWeightRecord:
    """One importance-sample log-weight for sequence x.

    log w = decoder log-prob at gamma0 + standard-normal log-density of the
    terminal state + divergence integral - proposal q(z_0|x) log-density.
    """
    x = np.asarray(x)
    e = denoiser.embedding_matrix[x]
    if z0 is None:
        if rng is None:
            raise ValueError("need rng to draw z_0")
        a0, s0 = alpha_sigma_of_gamma(sched.gamma0)
        z0 = a0 * e + s0 * rng.standard_normal(e.shape)
    z0b = z0[None]
    zT, div = _simulate(z0b, denoiser, sched, steps, divergence, rng,
                        coords=coords, selfcond_mode=selfcond_mode)
    return _assemble_records(x, z0b, zT, np.atleast_1d(div), denoiser, sched)[0]


@dataclass(frozen=True)
class IwaeResult:
    value: float
    log_weights: np.ndarray
    records: list


def iwae_estimate(x: np.ndarray, denoiser: Denoiser, sched: NoiseSchedule,
                  K: int, rng: np.random.Generator, steps: int = 128,
                  divergence: DivergenceConfig = DivergenceConfig(),
                  coords: str = "gamma",
                  selfcond_mode: str | None = None) -> IwaeResult:
    """log (1/K) sum_k w^(k) with K independent z_0 draws (batched solver)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    x = np.asarray(x)
    e = denoiser.embedding_matrix[x]
    a0, s0 = alpha_sigma_of_gamma(sched.gamma0)
    z0 = a0 * e + s0 * rng.standard_normal((K,) + e.shape)
    zT, div = _simulate(z0, denoiser, sched, steps, divergence, rng,
                        coords=coords, selfcond_mode=selfcond_mode)
    recs = _assemble_records(x, z0, zT, np.atleast_1d(div), denoiser, sched)
    logw = np.array([r.log_w for r in recs])
    value = float(logsumexp(logw) - np.log(K))
    return IwaeResult(value=value, log_weights=logw, records=recs)


class ToySelfCondDenoiser(Denoiser):
    """Bayes denoiser plus a linear self-conditioning coupling of strength a.

    logits = log Bayes rows + a * (dense map of the flattened self-cond
    embedding). With x_sc omitted the input is resolved by a bootstrap pass
    with zero self-conditioning, so the output is a deterministic function
    of (z, gamma) — exactly the closed-loop composition whose divergence
    needs the chain-rule term.
    """

    def __init__(self, instance: Instance, a: float, seed: int = 0):
        if a < 0:
            raise ValueError("coupling strength must be nonnegative")
        self.instance = instance
        self.a = float(a)
        self.embedding_matrix = instance.embedding.matrix
        self._bayes = BayesDenoiser(instance)
        L, V, d_e = instance.L, instance.V, instance.d_e
        rng = stream(seed, "toy-selfcond")
        self._coupling = rng.standard_normal((L * V, L * d_e)) / np.sqrt(L * d_e)

    def bootstrap(self, z: np.ndarray, gamma) -> np.ndarray:
        """x_sc(z, gamma): the clean-embedding prediction with zero self-cond."""
        return self._bayes.rows(z, gamma) @ self.embedding_matrix

    def rows(self, z: np.ndarray, gamma, x_sc=None) -> np.ndarray:
        base = self._bayes.rows(z, gamma)
        if self.a == 0.0:
            return base
        if x_sc is None:
            x_sc = self.bootstrap(z, gamma)
        batch = z.shape[:-2]
        L, V = self.instance.L, self.instance.V
        sc = np.asarray(x_sc)
        flat_sc = sc.reshape(sc.shape[:-2] + (-1,))
        shift = np.broadcast_to(flat_sc @ self._coupling.T,
                                batch + (L * V,)).reshape(batch + (L, V))
        logits = np.log(np.maximum(base, 1e-300)) + self.a * shift
        logits -= logsumexp(logits, axis=-1, keepdims=True)
        return np.exp(logits)


def make_toy_selfcond_denoiser(instance: Instance, a: float,
                               seed: int = 0) -> ToySelfCondDenoiser:
    return ToySelfCondDenoiser(instance, a, seed=seed)


def selfcond_divergence(z: np.ndarray, gamma: float,
                        denoiser: ToySelfCondDenoiser, mode: str,
                        cfg: DivergenceConfig = DivergenceConfig(method="exact"),
                        rng: np.random.Generator | None = None):
    """Divergence of the gamma-space velocity under the chosen self-cond mode.

    closed_loop recomputes the bootstrap input at each perturbed state (full
    composed divergence); open_loop_cached freezes it at z, silently dropping
    the chain-rule term.
    """
    if mode == "closed_loop":
        field = lambda zz: velocity_gamma(zz, gamma, denoiser, x_sc=None)
    elif mode == "open_loop_cached":
        x_sc = denoiser.bootstrap(z, gamma)
        field = lambda zz: velocity_gamma(zz, gamma, denoiser, x_sc=x_sc)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _node_divergence(field, z, cfg, rng)


def selfcond_chain_term(z: np.ndarray, gamma: float,
                        denoiser: ToySelfCondDenoiser, h: float = 1e-3) -> float:
    """Brute-force tr( (dv/dx_sc) (dx_sc/dz) ) via full FD Jacobians.

    Oracle for the closed-loop minus open-loop divergence difference; only
    intended for small dimensions.
    """
    z = np.asarray(z, dtype=np.float64)
    D = z.shape[-1] * z.shape[-2]
    if D > 16:
        raise ValueError("chain-term oracle capped at 16 coordinates")
    x_sc0 = denoiser.bootstrap(z, gamma)
    J_v = np.empty((D, D))   # dv_i / dx_sc_j at fixed z
    J_sc = np.empty((D, D))  # dx_sc_j / dz_k
    for j in range(D):
        dp = np.zeros(D)
        dp[j] = h
        dsc = dp.reshape(z.shape)
        vp = velocity_gamma(z, gamma, denoiser, x_sc=x_sc0 + dsc)
        vm = velocity_gamma(z, gamma, denoiser, x_sc=x_sc0 - dsc)
        J_v[:, j] = (vp - vm).reshape(-1) / (2.0 * h)
        sp = denoiser.bootstrap(z + dsc, gamma)
        sm = denoiser.bootstrap(z - dsc, gamma)
        J_sc[:, j] = (sp - sm).reshape(-1) / (2.0 * h)
    return float(np.trace(J_v @ J_sc))
