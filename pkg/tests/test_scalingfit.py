import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflab.scalingfit import (compute_gap, embed_flops_ratio, isoflop_fit,
                                powerlaw_fit)


def _bowl_points(a, b, c, ns, noise=0.0, rng=None):
    x = np.log(ns)
    y = a * x**2 + b * x + c
    if noise:
        y = y + noise * rng.standard_normal(len(x))
    return np.stack([ns, np.exp(y)], axis=1)


def test_isoflop_recovers_planted_bowl():
    ns = np.logspace(3, 6, 9)
    a, b, c = 0.08, -1.6, 8.0
    fit = isoflop_fit(_bowl_points(a, b, c, ns))
    assert fit.a == pytest.approx(a, rel=1e-9)
    assert fit.b == pytest.approx(b, rel=1e-9)
    assert fit.c == pytest.approx(c, rel=1e-9)
    assert fit.n_star == pytest.approx(np.exp(-b / (2 * a)), rel=1e-9)
    assert np.abs(fit.residuals).max() < 1e-12
    assert not fit.extrapolated


def test_isoflop_residuals_match_polyfit():
    rng = np.random.default_rng(0)
    ns = np.logspace(3, 5, 7)
    pts = _bowl_points(0.1, -2.0, 9.0, ns, noise=0.02, rng=rng)
    fit = isoflop_fit(pts)
    coef = np.polyfit(np.log(pts[:, 0]), np.log(pts[:, 1]), 2)
    assert fit.a == pytest.approx(coef[0], abs=1e-9)
    expected = np.log(pts[:, 1]) - np.polyval(coef, np.log(pts[:, 0]))
    assert np.allclose(fit.residuals, expected, atol=1e-9)


def test_isoflop_concave_reports_no_vertex():
    ns = np.logspace(3, 5, 5)
    fit = isoflop_fit(_bowl_points(-0.05, 0.5, 1.0, ns))
    assert fit.a < 0
    assert fit.n_star is None and fit.loss_star is None


def test_isoflop_flags_extrapolated_vertex():
    ns = np.logspace(3, 4, 5)          # vertex at log N = 14 >> log(1e4)
    fit = isoflop_fit(_bowl_points(0.1, -2.8, 9.0, ns))
    assert fit.extrapolated


def test_isoflop_input_validation():
    with pytest.raises(ValueError):
        isoflop_fit([(1e3, 1.0), (1e4, 0.9)])
    with pytest.raises(ValueError):
        isoflop_fit([(1e3, 1.0), (1e3, 0.9), (1e3, 0.8)])


def test_powerlaw_recovers_planted_line():
    cs = np.logspace(15, 20, 6)
    alpha, beta = -0.31, 4.0
    losses = np.exp(alpha * np.log(cs) + beta)
    fit = powerlaw_fit(np.stack([cs, losses], axis=1))
    assert fit.alpha == pytest.approx(alpha, rel=1e-9)
    assert fit.beta == pytest.approx(beta, rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.1, 10.0), alpha=st.floats(-1.0, -0.05),
       beta=st.floats(-2.0, 6.0))
def test_powerlaw_slope_invariant_to_compute_rescaling(scale, alpha, beta):
    # multiplying all compute values by a constant shifts only the intercept
    cs = np.logspace(10, 14, 5)
    losses = np.exp(alpha * np.log(cs) + beta)
    base = powerlaw_fit(np.stack([cs, losses], axis=1))
    moved = powerlaw_fit(np.stack([scale * cs, losses], axis=1))
    assert moved.alpha == pytest.approx(base.alpha, abs=1e-7)
    assert moved.beta == pytest.approx(base.beta - alpha * np.log(scale),
                                       abs=1e-6)


def test_compute_gap_on_shifted_frontiers():
    # frontier B is frontier A shifted left by a factor 8 in compute
    cs = np.logspace(12, 16, 5)
    alpha, beta = -0.4, 2.0
    la = np.exp(alpha * np.log(cs) + beta)
    lb = np.exp(alpha * np.log(8.0 * cs) + beta)
    fa = powerlaw_fit(np.stack([cs, la], axis=1))
    fb = powerlaw_fit(np.stack([cs, lb], axis=1))
    assert compute_gap(fa, fb) == pytest.approx(8.0, rel=1e-9)
    assert compute_gap(fb, fa) == pytest.approx(1.0 / 8.0, rel=1e-9)


def test_compute_gap_requires_decreasing_frontier():
    cs = np.logspace(12, 14, 4)
    up = powerlaw_fit(np.stack([cs, cs**0.1], axis=1))
    with pytest.raises(ValueError):
        compute_gap(up, up)


def test_embed_flops_ratio_values_and_limits():
    assert embed_flops_ratio(50000, 768, 16) == pytest.approx(
        50000 * 768 / (16 * 768 + 50000 * 16), rel=1e-12)
    # d_e = V and h >> V: the factorized path loses its advantage
    assert embed_flops_ratio(64, 10**6, 64) == pytest.approx(1.0, rel=1e-3)
    # ratio is independent of sequence length
    assert embed_flops_ratio(100, 32, 8, L=1) == embed_flops_ratio(
        100, 32, 8, L=7)
    with pytest.raises(ValueError):
        embed_flops_ratio(0, 32, 8)
