"""Shared fixtures: synthetic plants and cached optimisation runs."""

import numpy as np
import pytest

from optoferm.data import BatchDataset
from optoferm.hybrid import compute_residuals, train_residual_models
from optoferm.model import NOMINAL_PARAMS, State, nominal_rhs
from optoferm.ocp import OCPSpec, solve, two_stage_oracle
from optoferm.sim import ControlSchedule, integrate

LIGHT_LEVELS = (0.0, 175.0, 349.0, 524.0, 873.0)
HOURLY = np.arange(0.0, 8.0 + 1e-9, 1.0)
INOCULUM = 0.0713

ACCEPTANCE = {}


def synthetic_batch(params, u, s_G0=2.8, B_c0=INOCULUM, times=HOURLY, id=None):
    """Noise-free constant-light batch sampled at ``times``."""
    traj = integrate(State(B_c0, 0.0, s_G0, 0.0), ControlSchedule.constant(u), nominal_rhs(params))
    return BatchDataset.from_trajectory(traj, times, id=id or f"u{u:g}")


def perturbed(name, factor):
    return NOMINAL_PARAMS.with_values(**{name: getattr(NOMINAL_PARAMS, name) * factor})


@pytest.fixture(scope="session")
def ocp_solutions():
    """Nominal-model solutions for the yield sweep, solved once per session."""
    cache = {}

    def get(target):
        if target not in cache:
            cache[target] = solve(OCPSpec(target_yield=target), NOMINAL_PARAMS, seed=0)
        return cache[target]

    return get


@pytest.fixture(scope="session")
def oracle_954():
    return two_stage_oracle(OCPSpec(target_yield=0.954), NOMINAL_PARAMS)


@pytest.fixture(scope="session")
def lactate_plant_models():
    """Residual GPs learned from a plant whose maintenance lactate rate is 10% higher."""
    plant = perturbed("m_L", 1.1)
    samples = []
    for u in LIGHT_LEVELS:
        samples += compute_residuals(synthetic_batch(plant, u), NOMINAL_PARAMS)
    return train_residual_models(samples, seed=0)


def record(criterion, ok, detail):
    ACCEPTANCE[criterion] = (bool(ok), detail)


SLOW_FIXTURES = {"ocp_solutions", "oracle_954", "lactate_plant_models"}
SLOW_TESTS = {"test_criterion_1_ocp_reproduction", "test_criterion_8_parameter_recovery"}


def pytest_collection_modifyitems(items):
    for item in items:
        if SLOW_FIXTURES & set(getattr(item, "fixturenames", ())) or item.originalname in SLOW_TESTS:
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def one_step_mse(held, rhs, params=None, step=0.01):
    """Mean squared one-hour-ahead error on B_c, s_G, p_L, re-anchored at every sample."""
    from optoferm.model import NOMINAL_PARAMS as P
    from optoferm.sim import rk4_segments

    errs = []
    for k, r in enumerate(compute_residuals(held, params or P, step)):
        x = np.array([r.B_c, r.E, r.s_G, r.p_L])
        dt = held.times[k + 1] - held.times[k]
        pred = rk4_segments(rhs, x, [dt], np.array([r.u_l]), step)
        errs.append((pred - held.values[k + 1])[[0, 2, 3]])
    return float(np.mean(np.square(errs)))
