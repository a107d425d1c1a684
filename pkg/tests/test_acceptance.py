"""Acceptance gate: every numbered criterion must pass at full scale.

The criteria share one Suite so expensive fixtures (the tabulated optimal
schedule, the desk instance, the trained toy model) are computed once.
"""

import pytest

from difflab.acceptance import Suite


@pytest.fixture(scope="module")
def suite(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    return Suite(seed=0, workers=1, out_dir=str(out), scale=1.0)


def _check(result):
    assert result.passed, f"criterion {result.cid} failed: {result.details}"


def test_criterion_01_optimal_schedule_flattens_loss(suite):
    _check(suite.criterion_1())


def test_criterion_02_mean_loss_invariant_to_shape(suite):
    _check(suite.criterion_2())


def test_criterion_03_variance_learner_recovers_optimum(suite):
    _check(suite.criterion_3())


def test_criterion_04_mmse_estimators_and_quadrature(suite):
    _check(suite.criterion_4())


def test_criterion_05_nelbo_bounds_and_quadrature(suite):
    _check(suite.criterion_5())


def test_criterion_06_information_curves_and_immse(suite):
    _check(suite.criterion_6())


def test_criterion_07_nelbo_never_beats_entropy(suite):
    _check(suite.criterion_7())


def test_criterion_08_ancestral_sampler_fidelity(suite):
    _check(suite.criterion_8())


def test_criterion_09_deterministic_solver_orders(suite):
    _check(suite.criterion_9())


def test_criterion_10_ode_likelihood_machinery(suite):
    _check(suite.criterion_10())


def test_criterion_11_selfcond_chain_rule(suite):
    _check(suite.criterion_11())


def test_criterion_12_trainer_end_to_end(suite):
    _check(suite.criterion_12())


def test_criterion_13_scaling_fit_recovery(suite):
    _check(suite.criterion_13())


def test_criterion_14_embedding_flops_ratio(suite):
    _check(suite.criterion_14())


def test_criterion_15_run_determinism(suite):
    _check(suite.criterion_15())
