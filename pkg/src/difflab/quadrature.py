"""Deterministic 1-D quadrature oracles for single-position scalar instances.

With L=1 and d_e=1 the noisy marginal q(z) is a scalar Gaussian mixture,
so MMSE, conditional entropy, mutual information, and the model likelihood
are all plain integrals on a dense grid — independent cross-checks for the
Monte-Carlo estimators.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid

from .core import Instance, alpha_sigma_of_gamma


def _check_scalar(instance: Instance) -> None:
    if instance.L != 1 or instance.d_e != 1:
        raise ValueError("quadrature oracles need L=1 and d_e=1")


def _mixture(instance: Instance, gamma: float):
    """Weights, centers alpha*e_v, noise scale sigma of q(z) at this gamma."""
    _check_scalar(instance)
    alpha, sigma = alpha_sigma_of_gamma(gamma)
    e = instance.embedding.matrix[:, 0]          # (V,)
    if instance.data.kind == "factorized":
        p = instance.data.table[0]
    else:
        p = instance.data.joint_table()
    return p, alpha * e, float(sigma)


def _grid(centers: np.ndarray, sigma: float, n: int = 20001) -> np.ndarray:
    lo = centers.min() - 12.0 * sigma
    hi = centers.max() + 12.0 * sigma
    return np.linspace(lo, hi, n)


def _posterior_on_grid(instance: Instance, gamma: float, n: int = 20001):
    """Returns (z grid, q(z), posterior rows q(v|z) of shape (n, V))."""
    p, centers, sigma = _mixture(instance, gamma)
    z = _grid(centers, sigma, n)
    # log p_v + log N(z; c_v, sigma^2), constants cancel in the posterior
    with np.errstate(divide="ignore"):
        loglik = np.log(p) - (z[:, None] - centers) ** 2 / (2.0 * sigma**2)
    m = loglik.max(axis=1, keepdims=True)
    w = np.exp(loglik - m)
    norm = w.sum(axis=1, keepdims=True)
    post = w / norm
    density = (norm[:, 0] * np.exp(m[:, 0])
               / np.sqrt(2.0 * np.pi * sigma**2))
    return z, density, post


def mmse_quadrature(instance: Instance, gamma: float, n: int = 20001) -> float:
    """E[(e - E[e|z])^2] = E[e^2] - E_z[(E[e|z])^2] by grid integration."""
    p, centers, sigma = _mixture(instance, gamma)
    e = instance.embedding.matrix[:, 0]
    z, density, post = _posterior_on_grid(instance, gamma, n)
    e_hat = post @ e
    second = float(p @ e**2)
    return second - float(trapezoid(density * e_hat**2, z))


def conditional_entropy_quadrature(instance: Instance, gamma: float,
                                   n: int = 20001) -> float:
    """H(x|z) = E_z[entropy of the posterior] in nats."""
    z, density, post = _posterior_on_grid(instance, gamma, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(post > 0, post * np.log(post), 0.0)
    return float(trapezoid(-density * plogp.sum(axis=1), z))


def mutual_info_quadrature(instance: Instance, gamma: float,
                           n: int = 20001) -> float:
    """I(x; z) = H(x) - H(x|z)."""
    p, _, _ = _mixture(instance, gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        h_x = float(-np.sum(np.where(p > 0, p * np.log(p), 0.0)))
    return h_x - conditional_entropy_quadrature(instance, gamma, n)


def logp_model_quadrature(instance: Instance, x: np.ndarray,
                          gamma0: float | None = None,
                          n: int = 20001) -> float:
    """log p(x) for the exact-posterior decoder: log of integral
    q(z_0) q(x|z_0) dz_0.

    Valid because the probability-flow ODE of the exact-posterior velocity
    preserves the forward marginals, so the model density at gamma0 equals
    q(z_0).
    """
    if gamma0 is None:
        gamma0 = instance.schedule.gamma0
    v = int(np.asarray(x).reshape(-1)[0])
    z, density, post = _posterior_on_grid(instance, gamma0, n)
    return float(np.log(trapezoid(density * post[:, v], z)))
