import math

import numpy as np
import pytest

from dpsosp.errors import InputError, OracleError
from dpsosp.problem import (OracleSet, ProblemSpec, fd_gradient, minibatch_gradient, pairwise_mean,
                            verify_oracle_consistency)
from dpsosp.testbed import make_quartic, quadratic_problem


def _spec(**kw):
    base = dict(dim=2, n_components=4, lipschitz_grad=1.0, lipschitz_hess=0.0, stoch_sigma=0.0, f_gap=1.0)
    base.update(kw)
    return ProblemSpec(**base)


@pytest.mark.parametrize("field,value", [("dim", 0), ("n_components", 0), ("lipschitz_grad", -1.0),
                                         ("stoch_sigma", math.nan), ("f_gap", 0.0), ("f_gap", math.inf)])
def test_spec_validation(field, value):
    with pytest.raises(InputError):
        _spec(**{field: value})


def test_minibatch_of_everything_is_full_gradient():
    p = quadratic_problem((2.0, -1.0, 0.5), 0.7, 50, seed=3)
    x = np.array([0.3, -0.2, 0.9])
    avg = minibatch_gradient(p.oracles, np.arange(50), x)
    np.testing.assert_allclose(avg, p.oracles.full_gradient(x), atol=1e-14)


def test_minibatch_rejects_bad_indices():
    p = quadratic_problem((1.0, 1.0), 0.1, 5, seed=0)
    with pytest.raises(InputError):
        minibatch_gradient(p.oracles, [0, 5], np.zeros(2))
    with pytest.raises(InputError):
        minibatch_gradient(p.oracles, [], np.zeros(2))


def test_pairwise_mean_matches_mean():
    a = np.random.default_rng(0).standard_normal((7, 5, 3))
    np.testing.assert_allclose(pairwise_mean(a, axis=1), a.mean(axis=1))


def test_fd_gradient_on_quartic():
    spec, oracles, _ = make_quartic(1.0, (2.0,), 1.0, 0.0, 2, seed=0)
    x = np.array([0.4, -0.7])
    np.testing.assert_allclose(fd_gradient(oracles.objective, x), oracles.full_gradient(x), atol=1e-8)


def test_consistency_report_clean_on_testbed():
    spec, oracles, _ = make_quartic(1.0, (2.0, 0.5), 1.0, 0.3, 40, seed=1)
    probes = np.random.default_rng(0).uniform(-1.5, 1.5, (12, 3))
    report = verify_oracle_consistency(oracles, spec, probes, tol=1e-6)
    assert report.ok, report.violations()


def test_consistency_flags_understated_smoothness():
    spec, oracles, _ = make_quartic(1.0, (2.0,), 1.0, 0.0, 4, seed=1)
    wrong = ProblemSpec(2, 4, 0.5, spec.lipschitz_hess, 0.0, spec.f_gap)
    probes = np.random.default_rng(0).uniform(-2, 2, (10, 2))
    report = verify_oracle_consistency(oracles, wrong, probes, tol=1e-6)
    assert report.smoothness > 0.1 and not report.ok


def test_consistency_flags_wrong_gradient():
    p = quadratic_problem((1.0, 2.0), 0.0, 3, seed=0)
    broken = OracleSet(lambda x: 2 * p.oracles.full_gradient(x), p.oracles.component_gradient,
                       p.oracles.objective, p.oracles.hessian_vector, 3)
    report = verify_oracle_consistency(broken, p.spec, [np.array([0.5, 0.5])], tol=1e-6)
    assert report.full_vs_average > 0.1 and report.fd_gradient > 0.1


def test_nonfinite_oracle_raises():
    p = quadratic_problem((1.0, 2.0), 0.0, 3, seed=0)
    bad = OracleSet(lambda x: np.array([np.nan, 0.0]), p.oracles.component_gradient, p.oracles.objective,
                    p.oracles.hessian_vector, 3)
    with pytest.raises(OracleError) as info:
        verify_oracle_consistency(bad, p.spec, [np.zeros(2)], tol=1e-6)
    assert info.value.category == "oracle"
