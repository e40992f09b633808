import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optoferm.errors import ConfigError, NumericalError
from optoferm.model import BIOMASS, GLUCOSE, LACTATE, NOMINAL_PARAMS, State
from optoferm.sim import (
    ControlSchedule,
    Trajectory,
    batch_metrics,
    integrate,
    rk4_segments,
)


def convergence_order(x0, schedule, steps=(0.02, 0.01, 0.005)):
    """Empirical order from three step sizes halving each time."""
    finals = [integrate(x0, schedule, step=h).states[-1] for h in steps]
    e1 = np.linalg.norm(finals[0] - finals[1])
    e2 = np.linalg.norm(finals[1] - finals[2])
    return np.log2(e1 / e2)


def test_uninduced_batch_shape():
    traj = integrate(State(0.03, 0.0, 2.7, 0.0), ControlSchedule.constant(0.0))
    s, B, E = traj.states[:, GLUCOSE], traj.states[:, BIOMASS], traj.states[:, 1]
    live = s[:-1] > 0
    assert np.all(np.diff(s)[live] < 0)
    assert np.all(np.diff(B)[live] > 0)
    assert E.max() <= 1e-6 / 0.988 + 1e-15
    assert traj.times[0] == 0.0 and traj.times[-1] == 8.0


def test_zero_biomass_keeps_substrate_and_product():
    sched = ControlSchedule(0.0, 8.0, 1.0, [0, 873, 0, 349, 873, 873, 0, 175])
    traj = integrate(State(0.0, 0.0, 3.0, 0.4), sched)
    np.testing.assert_array_equal(traj.states[:, GLUCOSE], 3.0)
    np.testing.assert_array_equal(traj.states[:, LACTATE], 0.4)


def test_integrator_is_fourth_order():
    p = convergence_order(State(0.0713, 1.0, 4.0, 0.0), ControlSchedule.constant(524.0))
    assert 3.5 <= p <= 4.5


def test_states_stay_nonnegative_through_depletion():
    traj = integrate(State(0.3, 0.0, 1.0, 0.0), ControlSchedule.constant(873.0))
    assert traj.states.min() >= 0.0
    assert traj.final.s_G == 0.0


def test_depletion_stops_growth_and_production():
    traj = integrate(State(0.3, 0.0, 1.0, 0.0), ControlSchedule.constant(0.0))
    gone = np.flatnonzero(traj.states[:, GLUCOSE] == 0.0)
    assert gone.size > 0
    after = traj.states[gone[0]:]
    assert np.ptp(after[:, BIOMASS]) == 0.0
    assert np.ptp(after[:, LACTATE]) == 0.0


def test_input_alignment():
    levels = [0, 175, 349, 524, 873, 0, 873, 100]
    sched = ControlSchedule(0.0, 8.0, 1.0, levels)
    traj = integrate(State(0.07, 0.0, 2.0, 0.0), sched)
    u = traj.inputs()
    interior = traj.times[:-1]
    np.testing.assert_array_equal(u[:-1], np.asarray(levels, float)[np.floor(interior + 1e-9).astype(int)])


def test_deterministic():
    sched = ControlSchedule(0.0, 8.0, 1.0, [0, 0, 0, 873, 873, 873, 873, 873])
    a = integrate(State(0.0713, 0.0, 2.745, 0.0), sched)
    b = integrate(State(0.0713, 0.0, 2.745, 0.0), sched)
    assert np.array_equal(a.states, b.states)


def test_batched_equals_single():
    levels = np.array([[0] * 8, [873] * 8, [0, 0, 0, 873, 873, 873, 873, 873]], float)
    x0 = np.tile([0.0713, 0.0, 2.745, 0.0], (3, 1))
    f = lambda x, u: __import__("optoferm.model", fromlist=["_rhs"])._rhs(x, u, NOMINAL_PARAMS)
    batched = rk4_segments(f, x0, [1.0] * 8, levels, 0.01)
    for row, lv in zip(batched, levels):
        single = integrate(x0[0], ControlSchedule(0, 8, 1, lv)).states[-1]
        np.testing.assert_allclose(row, single, rtol=0, atol=1e-14)


def test_step_must_divide_interval():
    with pytest.raises(ConfigError):
        integrate(State(0.07, 0.0, 2.0, 0.0), ControlSchedule.constant(0.0), step=0.03)


def test_nan_reports_time():
    def bad(x, u):
        return np.where(x[..., :1] > 0.2, np.nan, 1.0) * np.ones_like(x)

    with pytest.raises(NumericalError, match="t="):
        integrate(State(0.1, 0.0, 1.0, 0.0), ControlSchedule.constant(0.0), rhs=bad)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ControlSchedule(0.0, 8.0, 1.0, [0.0] * 7)
    with pytest.raises(ConfigError):
        ControlSchedule(0.0, 8.0, 1.0, [-1.0] + [0.0] * 7)
    with pytest.raises(ConfigError):
        ControlSchedule(8.0, 8.0, 1.0, [])
    assert ControlSchedule(0.0, 7.5, 1.0, [0.0] * 8).n_intervals == 8
    with pytest.raises(ConfigError):
        ControlSchedule.constant(900.0).check_bounds(873.0)


def _fake(s0, sf, p0, pf, B0=0.1, Bf=0.2, tf=8.0):
    states = np.array([[B0, 0.0, s0, p0], [Bf, 0.0, sf, pf]])
    return Trajectory(np.array([0.0, tf]), states, ControlSchedule.constant(0.0, tf=tf))


def test_metrics_yield_arithmetic():
    m = batch_metrics(_fake(2.745, 0.0, 0.0, 2.6))
    assert m.Y_LG_batch == pytest.approx(2.6 / 2.745)
    assert m.Y_LG_batch == pytest.approx(0.947, abs=5e-4)
    assert m.r_L_batch == pytest.approx(2.6 / 8)


def test_metrics_zero_product():
    m = batch_metrics(_fake(2.0, 1.0, 0.3, 0.3))
    assert m.Y_LG_batch == 0.0 and m.r_L_batch == 0.0


def test_metrics_undefined_without_consumption():
    m = batch_metrics(_fake(2.0, 2.0, 0.0, 0.5))
    assert not m.yields_defined and m.Y_LG_batch is None and m.Y_BG_batch is None


@settings(max_examples=25, deadline=None)
@given(
    B=st.floats(0.01, 0.3),
    s=st.floats(0.1, 5.0),
    levels=st.lists(st.sampled_from([0.0, 175.0, 349.0, 524.0, 873.0]), min_size=8, max_size=8),
)
def test_nonnegative_and_mass_balance_direction(B, s, levels):
    traj = integrate(State(B, 0.0, s, 0.0), ControlSchedule(0, 8, 1, levels), step=0.05)
    x = traj.states
    assert x.min() >= 0.0
    assert np.all(np.diff(x[:, GLUCOSE]) <= 0)
    assert np.all(np.diff(x[:, LACTATE]) >= 0)
    m = batch_metrics(traj)
    assert m.Y_LG_batch >= 0
