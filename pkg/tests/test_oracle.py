import itertools

import numpy as np
import pytest

from difflab.core import alpha_sigma_of_gamma, sequences_to_index
from difflab.oracle import (BayesDenoiser, UniformDenoiser, bayes_denoiser,
                            draw_noisy_batch, joint_posterior, mmse_at_gamma,
                            prior_embedding_variance)
from difflab.quadrature import mmse_quadrature
from difflab.rng import stream


def brute_force_posterior(z, gamma, instance):
    """Independent enumeration of p(x | z) over all V**L sequences."""
    alpha, sigma = alpha_sigma_of_gamma(gamma)
    seqs = np.array(list(itertools.product(range(instance.V),
                                           repeat=instance.L)))
    prior = np.exp(instance.data.log_prob(seqs))
    e = instance.embed(seqs)                       # (S, L, d_e)
    sq = ((z[None] - alpha * e) ** 2).sum(axis=(-2, -1))
    log_lik = -sq / (2 * sigma**2)
    log_post = np.log(prior) + log_lik
    post = np.exp(log_post - log_post.max())
    return post / post.sum(), seqs, e


@pytest.mark.parametrize("gamma", [-4.0, 0.0, 3.0])
def test_joint_posterior_matches_enumeration(desk, gamma):
    rng = stream(0, "post", int(gamma))
    _, _, z = draw_noisy_batch(desk, gamma, 1, rng)
    expected, _, _ = brute_force_posterior(z[0], gamma, desk)
    got = joint_posterior(z[0], gamma, desk)
    assert np.allclose(got, expected, atol=1e-10)


def test_rows_are_posterior_marginals(desk, desk_den):
    gamma = -1.0
    rng = stream(0, "rows")
    _, _, z = draw_noisy_batch(desk, gamma, 1, rng)
    post, seqs, _ = brute_force_posterior(z[0], gamma, desk)
    rows = desk_den.rows(z[0], gamma)
    for pos in range(desk.L):
        marg = np.bincount(seqs[:, pos], weights=post, minlength=desk.V)
        assert np.allclose(rows[pos], marg, atol=1e-6)
    assert np.allclose(rows.sum(axis=-1), 1.0)


def test_predict_embedding_is_posterior_mean(desk, desk_den):
    gamma = 0.5
    rng = stream(0, "mean")
    _, _, z = draw_noisy_batch(desk, gamma, 1, rng)
    post, _, e = brute_force_posterior(z[0], gamma, desk)
    expected = (post[:, None, None] * e).sum(axis=0)
    assert np.allclose(desk_den.predict_embedding(z[0], gamma), expected,
                       atol=1e-6)


def test_conditional_variance_matches_enumeration(desk, desk_den):
    gamma = 0.0
    rng = stream(0, "var")
    _, _, z = draw_noisy_batch(desk, gamma, 4, rng)
    got = desk_den.conditional_embedding_variance(z, gamma)
    for k in range(4):
        post, _, e = brute_force_posterior(z[k], gamma, desk)
        mean = (post[:, None, None] * e).sum(axis=0)
        var = (post * ((e - mean) ** 2).sum(axis=(-2, -1))).sum()
        assert got[k] == pytest.approx(var, rel=1e-5)


def test_factorized_posterior_factorizes(fact):
    den = bayes_denoiser(fact)
    joint = BayesDenoiser(fact, force_joint=True)
    gamma = -0.5
    rng = stream(0, "factpost")
    _, _, z = draw_noisy_batch(fact, gamma, 3, rng)
    assert np.allclose(den.rows(z, gamma), joint.rows(z, gamma), atol=1e-8)


def test_mmse_estimators_agree(desk, desk_den):
    rng = stream(0, "est")
    a = mmse_at_gamma(desk, 0.0, 40000, rng, estimator="sample")
    rng = stream(0, "est")
    b = mmse_at_gamma(desk, 0.0, 40000, rng, estimator="conditional")
    assert abs(a.value - b.value) < 4 * np.hypot(a.stderr, b.stderr)
    assert b.stderr < a.stderr


def test_mmse_matches_quadrature_on_scalar_instance(tiny):
    for gamma in (-2.0, 0.0, 2.0):
        exact = mmse_quadrature(tiny, gamma)
        est = mmse_at_gamma(tiny, gamma, 50000, stream(0, "quad", int(gamma)),
                            estimator="conditional")
        assert abs(est.value - exact) < max(4 * est.stderr, 1e-6)


def test_mmse_decreases_with_snr(desk):
    rng = stream(0, "mono")
    vals = [mmse_at_gamma(desk, g, 20000, rng, estimator="conditional").value
            for g in (-4.0, -1.0, 2.0, 5.0)]
    assert vals == sorted(vals)


def test_low_snr_limit_is_prior_variance(desk):
    est = mmse_at_gamma(desk, 14.0, 20000, stream(0, "limit"),
                        estimator="conditional")
    assert est.value == pytest.approx(prior_embedding_variance(desk),
                                      rel=1e-3)


def test_uniform_denoiser_rows(desk):
    den = UniformDenoiser(desk)
    z = np.zeros((2, desk.L, desk.d_e))
    rows = den.rows(z, 0.0)
    assert rows.shape == (2, desk.L, desk.V)
    assert np.allclose(rows, 1.0 / desk.V)


def test_mmse_rejects_bad_estimator(desk):
    with pytest.raises(ValueError):
        mmse_at_gamma(desk, 0.0, 100, stream(0, "bad"), estimator="typo")
    with pytest.raises(ValueError):
        mmse_at_gamma(desk, 0.0, 100, stream(0, "bad"),
                      denoiser=UniformDenoiser(desk), estimator="conditional")
