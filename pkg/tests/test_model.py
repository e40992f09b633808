import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optoferm.errors import DomainError
from optoferm.model import (
    NOMINAL_PARAMS,
    KineticParams,
    State,
    eval_kinetics,
    hill,
    rhs_nominal,
)

P = NOMINAL_PARAMS


def test_glucose_uptake_uninduced():
    r = eval_kinetics(State(0.1, 0.0, 4.0, 0.0), 0.0)
    assert r.q_G == pytest.approx(1.731 * 4.0 / (4.0 + 5.340e-7), rel=1e-12)
    assert r.q_G == pytest.approx(1.731, rel=1e-6)


def test_zero_glucose_gives_zero_uptake():
    for E in (0.0, 1.0, 50.0):
        assert eval_kinetics(State(0.1, E, 0.0, 0.0), 524.0).q_G == 0.0


def test_expression_rate_at_darkness_is_basal():
    assert eval_kinetics(State(0.1, 0.0, 4.0, 0.0), 0.0).q_E == pytest.approx(1.0e-6, abs=1e-18)


def test_expression_rate_at_full_light():
    expected = 1e-6 + 10.0 * 873**4.718 / (873**4.718 + 372.9**4.718)
    q_E = eval_kinetics(State(0.1, 0.0, 4.0, 0.0), 873.0).q_E
    assert q_E == pytest.approx(expected, rel=1e-12)
    assert q_E == pytest.approx(9.822, abs=1e-3)


def test_saturating_expression_limits():
    r = eval_kinetics(State(0.1, 1e300, 4.0, 0.0), 0.0)
    assert r.q_G == pytest.approx(2 * P.q_Gmax, rel=1e-3)
    assert r.mu == pytest.approx(0.0, abs=1e-3)


def test_zero_biomass_derivative():
    d = rhs_nominal(State(0.0, 0.0, 3.0, 1.0), 0.0)
    np.testing.assert_array_equal(d[[0, 2, 3]], 0.0)
    assert d[1] == pytest.approx(1e-6, abs=1e-18)


def test_expression_fixed_point_at_full_light():
    q_E = eval_kinetics(State(0.1, 0.0, 4.0, 0.0), 873.0).q_E
    E_star = q_E / P.k_d
    assert E_star == pytest.approx(9.94, abs=0.01)
    assert rhs_nominal(State(0.1, E_star, 4.0, 0.0), 873.0)[1] == pytest.approx(0.0, abs=1e-12)


def test_glucose_derivative():
    assert rhs_nominal(State(0.1, 0.0, 4.0, 0.0), 0.0)[2] == pytest.approx(-0.1731, rel=1e-6)


def test_hill_zero_convention():
    assert hill(0.0, 1.0, 0.01) == 0.0
    assert hill(1e-30, 1.0, 0.01) > 0.3


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_non_finite_inputs_rejected(bad):
    with pytest.raises(DomainError):
        rhs_nominal(State(0.1, 0.0, bad, 0.0), 0.0)
    with pytest.raises(DomainError):
        rhs_nominal(State(0.1, 0.0, 1.0, 0.0), bad)


def test_negative_light_rejected():
    with pytest.raises(DomainError):
        eval_kinetics(State(0.1, 0.0, 1.0, 0.0), -1.0)


def test_invalid_params_rejected():
    with pytest.raises(DomainError):
        rhs_nominal(State(0.1, 0.0, 1.0, 0.0), 0.0, P.with_values(k_G=-1.0))


def test_params_round_trip():
    d = P.as_dict()
    assert list(d) == list(KineticParams.names())
    assert KineticParams.from_dict(d) == P
    assert KineticParams.from_array(P.as_array()) == P


def test_batched_matches_scalar():
    X = np.array([[0.1, 0.0, 4.0, 0.0], [0.2, 3.0, 1.0, 0.5], [0.05, 9.0, 0.2, 2.0]])
    U = np.array([0.0, 349.0, 873.0])
    batched = rhs_nominal(X, U)
    for x, u, row in zip(X, U, batched):
        np.testing.assert_array_equal(rhs_nominal(x, u), row)


finite = st.floats(0.0, 10.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(B=finite, E=st.floats(0.0, 20.0), s=finite, u=st.floats(0.0, 873.0))
def test_rates_nonnegative_and_finite(B, E, s, u):
    r = eval_kinetics(State(B, E, s, 0.0), u)
    vals = np.array([r.q_G, r.mu, r.q_L, r.q_E, r.d_E], dtype=float)
    assert np.all(np.isfinite(vals))
    assert r.q_G >= 0 and r.q_E >= 0 and r.d_E >= 0


@settings(max_examples=100, deadline=None)
@given(u1=st.floats(0.0, 873.0), u2=st.floats(0.0, 873.0))
def test_expression_rate_monotone_in_light(u1, u2):
    lo, hi = sorted((u1, u2))
    x = State(0.1, 0.0, 1.0, 0.0)
    assert eval_kinetics(x, lo).q_E <= eval_kinetics(x, hi).q_E
