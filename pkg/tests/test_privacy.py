import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpsosp.errors import BudgetError, InputError
from dpsosp.privacy import (Constants, NoisePlan, PrivacyBudget, gaussian_scale, gradient_bound, laplace_scales,
                            nsg_floor, resolve_plan, verify_plan)
from dpsosp.problem import ProblemSpec
from dpsosp.testbed import make_preset


def spec(L=1.0, fmax=1.0, sigma=0.0, n=1000, d=2, rho=0.0):
    return ProblemSpec(d, n, L, rho, sigma, fmax)


class TestGradientBound:
    def test_vanishes_without_smoothness_or_noise(self):
        for T, delta, c in [(1, 0.5, 1.0), (1000, 1e-6, 7.0)]:
            assert gradient_bound(spec(L=0.0), T, delta, c) == 0.0

    def test_unit_log_term(self):
        assert gradient_bound(spec(), 1, 1 / math.e, 1.0) == pytest.approx(3.0, rel=1e-15)

    def test_only_smoothness_term_with_c_zero(self):
        assert gradient_bound(spec(fmax=4.0), 50, 0.01, 0.0) == 4.0

    def test_full_formula_against_frozen_value(self):
        # 40-digit evaluation of the closed form.
        got = gradient_bound(spec(L=2.0, fmax=0.5, sigma=0.3, n=1000), 5000, 0.01, 1.0)
        assert got == pytest.approx(11.598592804951700979, rel=1e-13)

    @settings(max_examples=60, deadline=None)
    @given(L=st.floats(0.1, 10), f=st.floats(0.01, 10), s=st.floats(0.0, 3), T=st.integers(1, 10**6),
           d=st.floats(1e-6, 0.5), k=st.floats(1.01, 3.0))
    def test_monotone(self, L, f, s, T, d, k):
        base = gradient_bound(spec(L, f, s), T, d)
        assert gradient_bound(spec(L * k, f, s), T, d) >= base
        assert gradient_bound(spec(L, f * k, s), T, d) >= base
        assert gradient_bound(spec(L, f, s * k + 0.01), T, d) >= base
        assert gradient_bound(spec(L, f, s), int(T * k) + 1, d) >= base
        assert gradient_bound(spec(L, f, s), T, d / k) >= base


class TestGaussianScale:
    def test_unit(self):
        assert gaussian_scale(1.0, 1, 1 / math.e, 1, 1.0, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_frozen_example(self):
        assert gaussian_scale(3.0, 100, 0.01, 1000, 2.0, 1.0) == pytest.approx(0.032189490394340208595, rel=1e-14)

    def test_homogeneity(self):
        base = gaussian_scale(2.0, 300, 0.05, 500, 1.5)
        assert gaussian_scale(2.0, 300, 0.05, 1000, 1.5) == pytest.approx(base / 2, rel=1e-15)
        assert gaussian_scale(2.0, 300, 0.05, 500, 3.0) == pytest.approx(base / 2, rel=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(C=st.floats(0.01, 50), T=st.integers(1, 10**6), d=st.floats(1e-6, 0.5), n=st.integers(1, 10**6),
           e=st.floats(0.01, 10), k=st.floats(1.01, 3))
    def test_monotone(self, C, T, d, n, e, k):
        base = gaussian_scale(C, T, d, n, e)
        assert gaussian_scale(C * k, T, d, n, e) >= base
        assert gaussian_scale(C, int(T * k) + 1, d, n, e) >= base
        assert gaussian_scale(C, T, d / k, n, e) >= base
        assert gaussian_scale(C, T, d, int(n * k) + 1, e) <= base
        assert gaussian_scale(C, T, d, n, e * k) <= base


def test_laplace_scales():
    assert laplace_scales(1.0, 1.0, 1, 1.0) == (1.0, 1.0)
    g, h = laplace_scales(2.5, 1.0, 50000, 2.0)
    assert g == pytest.approx(2.5e-5, rel=1e-15) and h == pytest.approx(1e-5, rel=1e-15)
    g10, h10 = laplace_scales(2.5, 1.0, 500000, 2.0)
    assert g10 == pytest.approx(g / 10) and h10 == pytest.approx(h / 10)


def test_nsg_floor():
    assert nsg_floor(0.0, 10, 3, 0.01) == 0.0
    assert nsg_floor(1.0, 1, 1, 1.0) == 1.0
    assert nsg_floor(2.0, 4, 25, 0.01) == pytest.approx(2.0, rel=1e-15)


def test_budget_validation():
    with pytest.raises(InputError):
        PrivacyBudget(0.0, 0.01, 10)
    with pytest.raises(InputError):
        PrivacyBudget(1.0, 1.0, 10)
    with pytest.raises(InputError):
        PrivacyBudget(1.0, 0.01, 0)


def test_default_constants_satisfy_schedule():
    c = Constants()
    assert c.schedule_ok()
    assert 64 * c.c_drop / (10 * c.c_iters) > 1
    assert c.c_radius ** 2 / (c.c * c.c_iters) >= 2 * c.c_drop
    assert not c.with_overrides(c_drop=0.5).schedule_ok()


def test_quartic10_regression_snapshot():
    p = make_preset("quartic-10d")
    plan = resolve_plan(p.spec, PrivacyBudget(2.0, 0.01, 100))
    assert not any(verify_plan(plan, p.spec).values())
    assert plan.iterations == 39586
    assert plan.escape_iters == 3604
    assert plan.alpha == pytest.approx(0.07836597488370503, rel=1e-9)
    assert plan.gauss_std == pytest.approx(0.13039418683023157, rel=1e-9)
    assert plan.grad_bound == pytest.approx(6.107931240065099, rel=1e-9)


def test_alpha_decreases_when_epsilon_doubles():
    p = make_preset("quartic-10d")
    alphas = [resolve_plan(p.spec, PrivacyBudget(e, 0.01, 100)).alpha for e in (1.0, 2.0, 4.0, 8.0)]
    assert all(b < a for a, b in zip(alphas, alphas[1:]))


def test_noiseless_limit():
    plan = resolve_plan(spec(L=0.0, n=10, d=1), PrivacyBudget(0.5, 0.01, 10))
    assert plan.gauss_std == 0.0 and plan.grad_bound == 0.0
    assert plan.escape_iters is None


def test_budget_error_when_epsilon_too_large():
    with pytest.raises(BudgetError) as info:
        resolve_plan(make_preset("quartic-10d").spec, PrivacyBudget(0.25, 0.01, 100))
    assert info.value.category == "budget"


def test_halve_delta_and_no_nsg():
    s = spec(L=1.0, sigma=0.5, n=2000, d=10, rho=1.0)
    plain = resolve_plan(s, PrivacyBudget(2.0, 0.01, 400))
    halved = resolve_plan(s, PrivacyBudget(2.0, 0.01, 400), halve_delta=True)
    assert plain.privacy_delta == pytest.approx(0.02) and halved.privacy_delta == pytest.approx(0.01)
    heavy = resolve_plan(s, PrivacyBudget(2.0, 0.01, 400), no_nsg=True)
    assert heavy.gauss_std >= nsg_floor(0.5, 400, 10, 0.01)


def test_plan_flat_round_trip():
    plan = resolve_plan(make_preset("quartic-2d").spec, PrivacyBudget(4.0, 0.01, 1000))
    again = NoisePlan.from_flat({k: str(v) for k, v in plan.flat().items()})
    assert again == plan
    with pytest.raises(InputError):
        NoisePlan.from_flat({"bogus": "1"})


def test_verify_plan_detects_tampering():
    p = make_preset("quartic-10d")
    plan = resolve_plan(p.spec, PrivacyBudget(2.0, 0.01, 100))
    assert verify_plan(plan.replace(gauss_std=plan.gauss_std / 10), p.spec)["dp_noise"]
    assert verify_plan(plan.replace(iterations=plan.iterations + 1), p.spec)["iterations"]
    assert verify_plan(plan.replace(step_size=1.0), p.spec)["step_cap"]
    assert verify_plan(plan.replace(escape_iters=1), p.spec)["escape"]
