import math

import numpy as np
import pytest

from difflab.core import (EmbeddingTable, MonotoneParametricShape,
                          NoiseSchedule)
from difflab.rng import stream
from difflab.trainer import (ToyDenoiser, TrainConfig, _fd_grad,
                             _sched_grad, _sched_objective, adaptive_split,
                             batch_losses, init_state, load_checkpoint,
                             network_loss_and_grad, output_prior_logits,
                             prepare_batch, save_checkpoint, train_loop,
                             training_step)


@pytest.fixture(scope="module")
def toy(fact):
    return ToyDenoiser(fact.embedding.matrix, width=16, seed=0)


@pytest.fixture(scope="module")
def sched():
    return NoiseSchedule(-6.0, 6.0, MonotoneParametricShape(np.zeros(8)))


@pytest.fixture()
def draw(fact, toy, sched):
    rng = stream(0, "draw")
    tokens = fact.data.sample(32, rng)
    return prepare_batch(tokens, toy, sched, fact.embedding.matrix, 4, 0.25,
                         rng)


def test_adaptive_split_formula_and_clipping():
    assert adaptive_split(64, 1.0, 1.0) == 32
    assert adaptive_split(64, 3.0, 1.0) == 48
    assert adaptive_split(64, 1e9, 1e-9) == 63   # clipped to B-1
    assert adaptive_split(64, 1e-9, 1e9) == 1    # clipped to 1
    with pytest.raises(ValueError):
        adaptive_split(1, 1.0, 1.0)


def test_output_prior_logits_are_gaussian_log_densities(fact, rng):
    E = fact.embedding.matrix
    z = rng.standard_normal((fact.L, fact.d_e))
    lg = output_prior_logits(z, E, 0.3)
    from difflab.core import alpha_sigma_of_gamma
    a, s = alpha_sigma_of_gamma(0.3)
    expected = -((z[:, None, :] - a * E[None]) ** 2).sum(-1) / (2 * s**2)
    # equal up to a shared per-position constant
    diff = lg - expected
    assert np.allclose(diff - diff[:, :1], 0.0, atol=1e-10)


def test_prepare_batch_row_assignment(fact, toy, sched):
    rng = stream(0, "rows")
    tokens = fact.data.sample(40, rng)
    d = prepare_batch(tokens, toy, sched, fact.embedding.matrix, 7, 0.3, rng)
    assert d.is_recon.sum() == 7
    assert d.is_sc.sum() == math.ceil(0.3 * 40)
    assert np.all(d.t[d.is_recon] == 0.0)
    assert np.all((d.t[~d.is_recon] > 0) & (d.t[~d.is_recon] < 1))
    assert np.all(d.x_sc[~d.is_sc] == 0.0)
    assert np.any(d.x_sc[d.is_sc] != 0.0)


def test_network_gradient_matches_finite_differences(fact, toy, sched, draw):
    E = fact.embedding.matrix
    den = toy.clone()
    _, _, grad = network_loss_and_grad(den, sched, E, draw,
                                       aux_ce_weight=0.1)
    p0 = den.get_params()
    rng = stream(0, "gradcheck")
    idx = rng.choice(p0.size, size=40, replace=False)
    h = 1e-6
    for k in idx:
        hi, lo = p0.copy(), p0.copy()
        hi[k] += h
        lo[k] -= h
        den.set_params(hi)
        fp, _, _ = network_loss_and_grad(den, sched, E, draw, 0.1,
                                         want_grad=False)
        den.set_params(lo)
        fm, _, _ = network_loss_and_grad(den, sched, E, draw, 0.1,
                                         want_grad=False)
        fd = (fp - fm) / (2 * h)
        assert grad[k] == pytest.approx(fd, abs=1e-6 + 1e-5 * abs(fd))
    den.set_params(p0)


def test_sched_grad_matches_brute_force(fact, toy, sched, draw):
    E = fact.embedding.matrix
    params = sched.shape.params + 0.1
    g = _sched_grad(params, sched, toy, E, draw, h=1e-3)
    fd = _fd_grad(lambda p: _sched_objective(p, sched, toy, E, draw),
                  params, 1e-3)
    assert np.allclose(g, fd, rtol=0.02, atol=1e-8)


def test_batch_losses_shapes_and_signs(fact, toy, sched, draw):
    recon_rows, diff_rows, prior, ce_rows = batch_losses(
        toy, sched, fact.embedding.matrix, draw)
    assert recon_rows.shape == (4,)
    assert diff_rows.shape == ce_rows.shape == (28,)
    assert np.all(recon_rows >= 0) and np.all(ce_rows >= 0)
    assert np.all(diff_rows >= 0)
    assert prior >= 0


def test_zero_lr_step_keeps_parameters(fact, toy):
    cfg = TrainConfig(steps=1, B=16, lr_net=0.0, lr_sched=0.0, lr_emb=0.0,
                      n_sched_knots=8, width=16, warmup=1)
    den = toy.clone()
    sch = NoiseSchedule(-6.0, 6.0, MonotoneParametricShape(np.zeros(8)))
    state = init_state(den, sch.shape.params, fact.embedding.matrix)
    rng = stream(0, "zero-lr")
    batch = fact.data.sample(16, rng)
    p0 = den.get_params().copy()
    den, sch2, emb2, state, rep = training_step(batch, den, sch,
                                                fact.embedding, state, cfg,
                                                rng)
    assert np.array_equal(den.get_params(), p0)
    assert np.array_equal(sch2.shape.params, sch.shape.params)
    # bookkeeping EMAs still run
    assert state.step == 1 and rep.step == 1
    assert state.sigma_r != 1.0 or state.sigma_d != 1.0


def test_step_report_split_formulas(fact, toy):
    cfg = TrainConfig(steps=1, B=24, n_sched_knots=8, width=16)
    den = toy.clone()
    sch = NoiseSchedule(-6.0, 6.0, MonotoneParametricShape(np.zeros(8)))
    state = init_state(den, sch.shape.params, fact.embedding.matrix)
    rng = stream(0, "report")
    for _ in range(3):
        batch = fact.data.sample(24, rng)
        _, sch, emb, state, rep = training_step(batch, den, sch,
                                                fact.embedding, state, cfg,
                                                rng)
        assert rep.B_r == adaptive_split(24, rep.sigma_r_used,
                                         rep.sigma_d_used)
        assert rep.n_sc == math.ceil(cfg.p_sc * 24)
        assert rep.total == pytest.approx(rep.recon + rep.diffusion
                                          + rep.prior, abs=1e-12)


def test_train_loop_reduces_loss(fact):
    cfg = TrainConfig(steps=300, B=32, n_sched_knots=8, width=16,
                      warmup=50, log_every=10)
    res = train_loop(fact, cfg, seed=0)
    first = np.mean([r.total for r in res.reports[:3]])
    last = np.mean([r.total for r in res.reports[-3:]])
    assert last < first
    assert res.embedding.matrix.shape == fact.embedding.matrix.shape
    # unit-norm embedding constraint preserved
    assert np.allclose(np.linalg.norm(res.embedding.matrix, axis=1), 1.0)


def test_checkpoint_roundtrip(fact, tmp_path):
    cfg = TrainConfig(steps=5, B=16, n_sched_knots=8, width=16)
    res = train_loop(fact, cfg, seed=1)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, res)
    back = load_checkpoint(path)
    assert np.array_equal(back.denoiser.get_params(),
                          res.denoiser.get_params())
    assert np.array_equal(back.ema_denoiser.get_params(),
                          res.ema_denoiser.get_params())
    assert np.array_equal(back.embedding.matrix, res.embedding.matrix)
    tg = np.linspace(0.1, 0.9, 5)
    assert np.allclose([back.schedule.gamma(t) for t in tg],
                       [res.schedule.gamma(t) for t in tg])


def test_training_rejects_fixed_shape(fact, toy):
    cfg = TrainConfig(steps=1, B=16)
    state = init_state(toy.clone(), np.zeros(8), fact.embedding.matrix)
    rng = stream(0, "fixed")
    with pytest.raises(ValueError):
        training_step(fact.data.sample(16, rng), toy.clone(),
                      NoiseSchedule(-6.0, 6.0), fact.embedding, state, cfg,
                      rng)


def test_toy_denoiser_parameter_budget(fact):
    with pytest.raises(ValueError):
        ToyDenoiser(fact.embedding.matrix, width=20000)
