import numpy as np
import pytest

from difflab.core import NoiseSchedule, data_entropy
from difflab.losses import (nelbo_estimate, per_timestep_ce,
                            per_timestep_diffusion_loss, perplexity,
                            prior_loss, reconstruction_loss,
                            stratified_times)
from difflab.oracle import UniformDenoiser, bayes_denoiser
from difflab.quadrature import mmse_quadrature
from difflab.rng import stream


@pytest.fixture(scope="module")
def linear():
    return NoiseSchedule(-6.0, 6.0)


def test_prior_loss_small_and_nonnegative(desk, linear):
    rng = stream(0, "prior")
    tokens = desk.data.sample(1, rng)[0]
    val = prior_loss(tokens, desk.embedding, linear)
    assert 0.0 <= val < 1e-2  # alpha_1 is tiny at gamma1 = 6


def test_reconstruction_loss_nearly_lossless(desk, desk_den, linear):
    rng = stream(0, "recon")
    tokens = desk.data.sample(1, rng)[0]
    res = reconstruction_loss(tokens, desk_den, linear, 2000, rng)
    assert 0.0 <= res.value < 1e-2  # gamma0 = -6 keeps decoding near-exact


def test_diffusion_loss_positive_and_estimators_agree(desk, desk_den, linear):
    t = 0.4
    a = per_timestep_diffusion_loss(desk, desk_den, linear, t, 30000,
                                    stream(0, "d1"))
    b = per_timestep_diffusion_loss(desk, desk_den, linear, t, 30000,
                                    stream(0, "d1"), estimator="conditional")
    assert a.value > 0
    assert abs(a.value - b.value) < 4 * np.hypot(a.stderr, b.stderr)


def test_ce_bounded_by_entropy_extremes(desk, desk_den, linear):
    # per-position decoding CE falls to ~0 at t=0 and rises to the sum of
    # marginal entropies (= H + total correlation) at t=1
    h = data_entropy(desk.data)
    marg = desk.data.marginals()
    h_marg = float(-(marg * np.log(np.maximum(marg, 1e-300))).sum())
    lo = per_timestep_ce(desk, desk_den, linear, 0.01, 20000, stream(0, "c0"))
    hi = per_timestep_ce(desk, desk_den, linear, 0.99, 20000, stream(0, "c1"))
    assert lo.value < 0.05 * h
    assert h < hi.value <= h_marg * 1.01
    assert hi.value == pytest.approx(h_marg, rel=0.05)


def test_nelbo_bounds_entropy(desk, desk_den, linear):
    res = nelbo_estimate(desk, desk_den, linear, 50000, stream(0, "nelbo"))
    h = data_entropy(desk.data)
    assert res.value >= h - 3 * res.stderr
    assert res.prior >= 0
    assert res.recon.value >= 0
    assert res.diffusion.value >= 0


def test_nelbo_matches_quadrature_on_scalar_instance(tiny, linear):
    den = bayes_denoiser(tiny)
    res = nelbo_estimate(tiny, den, linear, 50000, stream(0, "tiny-nelbo"))
    # exact NELBO: recon + prior + 1/2 int e^{-gamma} mmse(e^{-gamma}) dgamma
    g = np.linspace(-6, 6, 201)
    diff = 0.5 * np.trapezoid([np.exp(-x) * mmse_quadrature(tiny, x)
                               for x in g], g)
    assert res.diffusion.value == pytest.approx(
        diff, abs=4 * res.diffusion.stderr + 1e-3)


def test_uniform_denoiser_gives_looser_bound(desk, desk_den, linear):
    good = nelbo_estimate(desk, desk_den, linear, 20000, stream(0, "g"))
    bad = nelbo_estimate(desk, UniformDenoiser(desk), linear, 20000,
                         stream(0, "b"))
    assert bad.value > good.value


def test_stratified_times_cover_unit_interval():
    ts = stratified_times(64, stream(0, "strata"))
    assert len(ts) == 64
    assert np.all((ts >= 0) & (ts < 1))
    assert np.all(np.diff(ts) == pytest.approx(1 / 64))


def test_perplexity_identity():
    assert perplexity(np.log(7.0) * 3, 3) == pytest.approx(7.0)
