import numpy as np
import pytest

from difflab.core import NoiseSchedule, alpha_sigma_of_gamma
from difflab.odelik import (DivergenceConfig, divergence_exact,
                            divergence_hutchinson, integrate_logweight,
                            iwae_estimate, make_toy_selfcond_denoiser,
                            selfcond_chain_term, selfcond_divergence,
                            velocity_gamma, velocity_t)
from difflab.oracle import bayes_denoiser
from difflab.rng import stream


@pytest.fixture(scope="module")
def linear():
    return NoiseSchedule(-6.0, 6.0)


def test_divergence_config_validation():
    with pytest.raises(ValueError):
        DivergenceConfig(method="stochastic")
    with pytest.raises(ValueError):
        DivergenceConfig(probe="uniform")
    with pytest.raises(ValueError):
        DivergenceConfig(n_probes=0)


def test_exact_divergence_on_linear_field(rng):
    # div(A z) = tr(A), checked against a random linear map
    A = rng.standard_normal((6, 6))
    field = lambda z: (z.reshape(-1) @ A.T).reshape(z.shape)
    z = rng.standard_normal((3, 2))
    assert divergence_exact(field, z) == pytest.approx(np.trace(A), abs=1e-8)


def test_hutchinson_matches_exact(desk, desk_den, rng):
    gamma = 0.5
    z = rng.standard_normal((desk.L, desk.d_e))
    field = lambda zz: velocity_gamma(zz, gamma, desk_den)
    exact = divergence_exact(field, z)
    est = divergence_hutchinson(field, z, probe="gaussian", n_probes=2048,
                                rng=stream(0, "hutch"))
    assert abs(est.value - exact) < 4 * est.stderr + 1e-5
    assert est.stderr > 0


def test_velocity_coordinate_change(desk, desk_den, linear, rng):
    # v_t = v_gamma * gamma'(t)
    t = 0.4
    gamma = float(linear.gamma(t))
    gp = float(linear.gamma_prime(t))
    z = rng.standard_normal((desk.L, desk.d_e))
    vt = velocity_t(z, t, desk_den, linear)
    vg = velocity_gamma(z, gamma, desk_den)
    assert np.allclose(vt, gp * vg, atol=1e-12)


def test_logweight_coords_invariance(desk, desk_den, linear):
    rng = stream(0, "coords")
    x = desk.data.sample(1, rng)[0]
    a0, s0 = alpha_sigma_of_gamma(linear.gamma0)
    z0 = a0 * desk.embed(x) + s0 * rng.standard_normal((desk.L, desk.d_e))
    cfg = DivergenceConfig(method="exact")
    rg = integrate_logweight(x, desk_den, linear, z0=z0, steps=256,
                             divergence=cfg, coords="gamma")
    rt = integrate_logweight(x, desk_den, linear, z0=z0, steps=256,
                             divergence=cfg, coords="t")
    assert rg.log_w == pytest.approx(rt.log_w, abs=5e-3)
    assert rg.div_integral == pytest.approx(rt.div_integral, abs=5e-3)
    assert rg.proposal_logdensity == rt.proposal_logdensity


def test_logweight_record_pieces_sum(desk, desk_den, linear):
    rng = stream(0, "pieces")
    x = desk.data.sample(1, rng)[0]
    rec = integrate_logweight(x, desk_den, linear, rng=rng, steps=64,
                              divergence=DivergenceConfig(method="exact"))
    assert rec.log_w == pytest.approx(
        rec.recon_logprob + rec.prior_logdensity + rec.div_integral
        - rec.proposal_logdensity, abs=1e-12)


def test_iwae_matches_exact_likelihood_on_scalar_instance():
    # the model terminates in N(0,1), so its likelihood only matches the
    # data likelihood once gamma1 is wide enough to kill the prior mismatch
    from difflab.core import tiny_instance

    wide = tiny_instance(p0=0.3, gamma1=14.0)
    den = bayes_denoiser(wide)
    sched = NoiseSchedule(-6.0, 14.0)
    x = np.array([0])
    exact = float(wide.data.log_prob(x[None])[0])
    res = iwae_estimate(x, den, sched, K=64, rng=stream(0, "iwae-tiny"),
                        steps=512, divergence=DivergenceConfig(method="exact"))
    assert res.value == pytest.approx(exact, abs=2e-3)
    assert len(res.log_weights) == 64
    # the exact flow makes every importance weight (nearly) equal
    assert res.log_weights.std() < 5e-3


def test_iwae_bound_tightens_with_k(desk, linear):
    # averaged over repeats, log (1/K) sum w is nondecreasing in K; the
    # uniform denoiser gives a loose bound so the gap dwarfs the MC noise
    from difflab.oracle import UniformDenoiser

    den = UniformDenoiser(desk)
    x = desk.data.sample(1, stream(0, "kx"))[0]
    means = []
    for K in (1, 8):
        vals = [iwae_estimate(x, den, linear, K,
                              stream(0, "k", K, r), steps=96).value
                for r in range(12)]
        means.append(np.mean(vals))
    assert means[1] > means[0] + 10.0


def test_iwae_rejects_bad_k(desk, desk_den, linear):
    with pytest.raises(ValueError):
        iwae_estimate(np.zeros(desk.L, dtype=int), desk_den, linear, 0,
                      stream(0, "bad"))


def test_solver_blowup_raises(desk, linear):
    class NanDenoiser:
        embedding_matrix = desk.embedding.matrix

        def predict_embedding(self, z, gamma, x_sc=None):
            return np.full(np.shape(z), np.inf)

        def rows(self, z, gamma, x_sc=None):
            return np.full(np.shape(z)[:-1] + (desk.V,), 1.0 / desk.V)

    with pytest.raises(RuntimeError):
        integrate_logweight(np.zeros(desk.L, dtype=int), NanDenoiser(),
                            linear, rng=stream(0, "blow"), steps=8)


def test_selfcond_zero_coupling_has_no_chain_term(desk, rng):
    den = make_toy_selfcond_denoiser(desk, a=0.0)
    z = rng.standard_normal((desk.L, desk.d_e))
    closed = selfcond_divergence(z, 0.0, den, "closed_loop")
    opened = selfcond_divergence(z, 0.0, den, "open_loop_cached")
    assert float(closed) == pytest.approx(float(opened), abs=1e-9)


def test_selfcond_chain_term_oracle(desk, rng):
    den = make_toy_selfcond_denoiser(desk, a=0.5)
    z = rng.standard_normal((desk.L, desk.d_e))
    gamma = -0.5
    closed = selfcond_divergence(z, gamma, den, "closed_loop")
    opened = selfcond_divergence(z, gamma, den, "open_loop_cached")
    chain = selfcond_chain_term(z, gamma, den)
    assert float(closed) - float(opened) == pytest.approx(chain, abs=1e-4)
    assert abs(chain) > 1e-6  # the coupling actually bites


def test_selfcond_rejects_unknown_mode(desk, rng):
    den = make_toy_selfcond_denoiser(desk, a=0.5)
    z = rng.standard_normal((desk.L, desk.d_e))
    with pytest.raises(ValueError):
        selfcond_divergence(z, 0.0, den, "half_open")
