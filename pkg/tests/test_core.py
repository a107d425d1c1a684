import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from difflab.core import (CollapseError, DataDistribution, EmbeddingTable,
                          LinearShape, MonotoneParametricShape, NoiseSchedule,
                          TabulatedShape, data_entropy, make_embedding_table,
                          make_instance, schedule_eval, shape_from_dict,
                          total_correlation)
from difflab.rng import stream

params_strategy = st.lists(st.floats(-3, 3), min_size=2, max_size=12)
unit_floats = st.floats(0.0, 1.0)


@given(params_strategy, unit_floats)
@settings(max_examples=60, deadline=None)
def test_parametric_shape_monotone_and_bounded(params, t):
    shape = MonotoneParametricShape(np.array(params))
    assert shape.value(0.0) == pytest.approx(0.0, abs=1e-12)
    assert shape.value(1.0) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= shape.value(t) <= 1.0
    assert shape.derivative(t) > 0.0


@given(params_strategy, st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_parametric_shape_inverse_roundtrip(params, t):
    shape = MonotoneParametricShape(np.array(params))
    assert shape.inverse(float(shape.value(t))) == pytest.approx(t, abs=1e-9)


def test_tabulated_shape_interpolates_and_inverts():
    t = np.linspace(0, 1, 17)
    g = t**2  # monotone, hits the corners
    shape = TabulatedShape(t, g)
    assert np.allclose(shape.value(t), g)
    mid = np.linspace(0.05, 0.95, 11)
    # forward and inverse are independent monotone-cubic interpolants, so
    # the roundtrip is only as tight as the table spacing
    assert np.allclose(shape.inverse(shape.value(mid)), mid, atol=5e-3)
    fine = TabulatedShape(np.linspace(0, 1, 129), np.linspace(0, 1, 129)**2)
    assert np.allclose(fine.inverse(fine.value(mid)), mid, atol=1e-5)
    assert np.all(np.asarray(shape.derivative(mid)) > 0)


def test_shape_dict_roundtrip():
    shapes = [LinearShape(),
              MonotoneParametricShape(np.array([0.3, -0.2, 1.0])),
              TabulatedShape(np.linspace(0, 1, 9), np.linspace(0, 1, 9)**1.5)]
    for shape in shapes:
        clone = shape_from_dict(shape.to_dict())
        t = np.linspace(0, 1, 7)
        assert np.allclose(clone.value(t), shape.value(t))


def test_schedule_eval_identities():
    sched = NoiseSchedule(-6.0, 6.0,
                          MonotoneParametricShape(np.array([0.5, -0.5, 1.0])))
    t = np.linspace(0.0, 1.0, 21)
    ev = schedule_eval(sched, t)
    assert np.allclose(ev.alpha**2 + ev.sigma**2, 1.0)
    assert np.allclose(ev.snr, np.exp(-ev.gamma))
    assert np.allclose(ev.snr_prime, -ev.gamma_prime * np.exp(-ev.gamma))
    # gamma' against a central difference of gamma
    h = 1e-6
    interior = t[1:-1]
    fd = (sched.gamma(interior + h) - sched.gamma(interior - h)) / (2 * h)
    assert np.allclose(sched.gamma_prime(interior), fd, rtol=1e-5)


def test_schedule_eval_rejects_out_of_range():
    sched = NoiseSchedule(-6.0, 6.0)
    with pytest.raises(ValueError):
        schedule_eval(sched, 1.5)


def test_schedule_gamma_inverse():
    sched = NoiseSchedule(-6.0, 6.0)
    g = np.linspace(-5.5, 5.5, 9)
    assert np.allclose(sched.gamma(sched.t_of_gamma(g)), g)


def test_embedding_rows_unit_norm():
    emb = make_embedding_table(8, 3, seed=1)
    assert np.allclose(np.linalg.norm(emb.matrix, axis=1), 1.0)


def test_embedding_collapse_detection():
    m = np.array([[1.0, 0.0], [1.0, 1e-9]])
    m /= np.linalg.norm(m, axis=1, keepdims=True)
    with pytest.raises(CollapseError):
        EmbeddingTable(m)


def test_make_instance_deterministic():
    a, b = make_instance(seed=5), make_instance(seed=5)
    assert np.array_equal(a.embedding.matrix, b.embedding.matrix)
    assert np.array_equal(a.data.table, b.data.table)
    c = make_instance(seed=6)
    assert not np.array_equal(a.data.table, c.data.table)


def test_factorized_total_correlation_zero(fact):
    assert total_correlation(fact.data) == pytest.approx(0.0, abs=1e-12)


def test_joint_total_correlation_positive(desk):
    assert total_correlation(desk.data) > 0.01


def test_data_entropy_matches_direct_sum():
    p = np.array([0.5, 0.3, 0.2])
    d = DataDistribution("factorized", 3, 2, np.tile(p, (2, 1)))
    expected = 2 * float(-(p * np.log(p)).sum())
    assert data_entropy(d) == pytest.approx(expected)


def test_data_sample_matches_marginals(desk):
    rng = stream(0, "marg")
    tokens = desk.data.sample(200000, rng)
    marg = desk.data.marginals()
    for pos in range(desk.L):
        freq = np.bincount(tokens[:, pos], minlength=desk.V) / len(tokens)
        assert np.abs(freq - marg[pos]).max() < 0.01


def test_rng_streams_are_stable_and_distinct():
    a = stream(0, "x", 1).standard_normal(4)
    b = stream(0, "x", 1).standard_normal(4)
    c = stream(0, "x", 2).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
