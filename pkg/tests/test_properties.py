import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhctmc.errors import AtDiscontinuity, OffGrid
from nhctmc.fields import ArrayField, ChainField, FunctionField, KernelField
from nhctmc.oracle import conservativize
from nhctmc.properties import (
    ck_residual,
    consequence_checks,
    continuity_inequality,
    continuity_slack,
    derivative_at_diagonal,
    rate_row_bound,
    validate_pretransition,
)
from nhctmc.rates import PiecewiseConstantRates, StateSpace, constant_rates

TWO = [[-1.0, 1.0], [2.0, -2.0]]
PROBES = [0.0, 0.25, 0.5, 0.75, 1.0]


def two_state_field():
    return KernelField(constant_rates(TWO, horizon=1.0), 1.0, h=1e-3)


def closed_two_state(s, t):
    # a=1, b=2: P = 1/3 [[2, 1], [2, 1]] + e^{-3(t-s)}/3 [[1, -1], [-2, 2]]
    e = math.exp(-3 * (t - s))
    return np.array([[2 + e, 1 - e], [2 - 2 * e, 1 + 2 * e]]) / 3


def outcomes(lst):
    return {o.name: o for o in lst}


def test_identity_field_passes_exactly():
    field = FunctionField(lambda s, t: np.eye(3), 3)
    res = validate_pretransition(field, PROBES, tol=0.0)
    assert all(o.passed and o.measured <= o.bound for o in res)
    assert all(o.passed for o in consequence_checks(field, PROBES, tol=0.0))


def test_kernel_field_passes_at_default_tol():
    field = two_state_field()
    res = validate_pretransition(field, PROBES, tol=1e-6, steps=(1e-3, 4e-3))
    assert all(o.passed for o in res), [o.as_dict() for o in res if not o.passed]
    res = consequence_checks(field, PROBES, tol=1e-6, Q=constant_rates(TWO, horizon=1.0))
    assert all(o.passed for o in res), [o.as_dict() for o in res if not o.passed]


def test_corrupted_entry_located():
    def corrupt(s, t):
        P = closed_two_state(s, t)
        if (s, t) == (0.25, 0.75):
            P = P.copy()
            P[1, 0] = -1e-3
        return P

    res = outcomes(validate_pretransition(FunctionField(corrupt, 2), PROBES))
    bad = res["nonnegativity"]
    assert not bad.passed
    assert bad.location == {"s": 0.25, "t": 0.75, "i": 1, "j": 0, "value": -1e-3}


def test_substochastic_failure_detected():
    field = FunctionField(lambda s, t: 1.1 * np.eye(2) if t > s else np.eye(2), 2)
    assert not outcomes(validate_pretransition(field, PROBES))["row_sums_at_most_one"].passed


def test_ck_failure_detected():
    # rows sum to one but the family is not a semigroup
    def broken(s, t):
        d = min(1.0, (t - s) ** 2)
        return np.array([[1 - d / 2, d / 2], [d / 2, 1 - d / 2]])

    res = outcomes(validate_pretransition(FunctionField(broken, 2), PROBES))
    assert not res["chapman_kolmogorov"].passed


def test_ck_residual_trivial_splits():
    field = two_state_field()
    assert ck_residual(field, 0.0, 0.0, 1.0)[0] == 0.0
    assert ck_residual(field, 0.0, 1.0, 1.0)[0] == 0.0


def test_ck_residual_two_state():
    r, _ = ck_residual(two_state_field(), 0.0, 0.5, 1.0)
    assert r <= 2e-5


def test_ck_residual_off_grid():
    field = ArrayField.from_field(FunctionField(closed_two_state, 2), [0.0, 0.5, 1.0])
    with pytest.raises(OffGrid):
        ck_residual(field, 0.0, 0.3, 1.0)
    with pytest.raises(ValueError):
        ck_residual(field, 0.5, 0.0, 1.0)


def test_continuity_inequality_examples():
    field = two_state_field()
    assert continuity_slack(field, 0, 1, 0.3, 0.3, 1.0) == 0.0
    assert continuity_inequality(field, 0, 1, 0.3, 0.3, 1.0)
    slack = continuity_slack(field, 0, 0, 0.0, 0.1, 1.0)
    assert slack >= 0 and continuity_inequality(field, 0, 0, 0.0, 0.1, 1.0)
    zero = FunctionField(lambda s, t: np.eye(2), 2)
    assert continuity_slack(zero, 0, 1, 0.0, 0.5, 1.0) == 0.0


def test_derivative_zero_rates():
    Q = constant_rates(np.zeros((2, 2)), horizon=1.0)
    est = derivative_at_diagonal(KernelField(Q, 1.0, 1e-3), Q, 0, 1, 0.0)
    assert est.estimate == 0.0 == est.target


def test_derivative_two_state():
    Q = constant_rates(TWO, horizon=1.0)
    est = derivative_at_diagonal(two_state_field(), Q, 0, 1, 0.0, steps=(1e-2, 5e-3, 2.5e-3))
    assert est.error <= 1e-3
    # raw quotients converge at first order
    assert est.order == pytest.approx(1.0, abs=0.1)


def test_derivative_at_breakpoint_rejected():
    Q = PiecewiseConstantRates(StateSpace.range(2), [0, 1, 2], [TWO, TWO])
    with pytest.raises(AtDiscontinuity):
        derivative_at_diagonal(FunctionField(lambda s, t: np.eye(2), 2), Q, 0, 1, 1.0)


def test_rate_row_bound_examples():
    assert rate_row_bound(constant_rates(TWO), 0.0)
    assert rate_row_bound(constant_rates([[-2.0, 1.0], [0.0, -1.0]]), 0.0)


def test_diagonal_positive_failure():
    def vanishing(s, t):
        return np.array([[0.0, 1.0], [0.0, 1.0]]) if t > s else np.eye(2)

    res = outcomes(consequence_checks(FunctionField(vanishing, 2), PROBES))
    assert not res["diagonal_positive"].passed


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.floats(0.0, 1.0))
def test_exact_fields_satisfy_axioms(a, b, kill):
    Q = constant_rates([[-a - kill, a], [b, -b]], horizon=1.0)
    field = ChainField(conservativize(Q))
    res = validate_pretransition(field, PROBES, tol=1e-12)
    res += consequence_checks(field, PROBES, tol=1e-12, Q=Q)
    assert all(o.passed for o in res), [o.as_dict() for o in res if not o.passed]
