import numpy as np
import pytest

from optoferm.errors import ConfigError, InfeasibleError
from optoferm.model import NOMINAL_PARAMS, State
from optoferm.ocp import OCPSpec, is_two_stage, solve, switch_time, two_stage_oracle
from optoferm.sim import ControlSchedule, batch_metrics, integrate

CHEAP = dict(swarm_size=30, max_iterations=5, outer_iterations=3, polish_rounds=5)


def identity_slack(sol, spec):
    return spec.target_yield * spec.eps_dep + spec.eps_yield * sol.s_G0


def max_depletable_uninduced(hi=5.0, lo=0.5, tol=1e-4):
    """Largest s_G0 fully consumed in 8 h without light, by bisection."""
    sched = ControlSchedule.constant(0.0)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if integrate(State(0.0713, 0.0, mid, 0.0), sched).final.s_G <= 0.01:
            lo = mid
        else:
            hi = mid
    return lo


def test_ocp_config_validation():
    with pytest.raises(ConfigError):
        OCPSpec(target_yield=0.9, model="neural")
    with pytest.raises(ConfigError):
        OCPSpec(target_yield=0.0)
    with pytest.raises(ConfigError):
        OCPSpec(target_yield=0.9, s_G_max=-1.0)
    with pytest.raises(ConfigError):
        OCPSpec.from_dict({"target_yield": 0.9, "budget": 3})
    spec = OCPSpec(target_yield=0.9, horizon=6.0)
    assert OCPSpec.from_dict(spec.as_dict()) == spec


def test_yield_above_ceiling_is_infeasible():
    with pytest.raises(InfeasibleError):
        solve(OCPSpec(target_yield=1.2))
    with pytest.raises(InfeasibleError):
        two_stage_oracle(OCPSpec(target_yield=1.2))


def test_hybrid_requires_models():
    with pytest.raises(ConfigError):
        solve(OCPSpec(target_yield=0.954, model="hybrid", **CHEAP))


def test_unreachable_low_yield_reports_residuals():
    with pytest.raises(InfeasibleError) as info:
        solve(OCPSpec(target_yield=0.5, **CHEAP), seed=0)
    report = info.value.report
    assert report["yield_residual"] > 0.005
    assert len(report["levels"]) == 8 and "s_G0" in report


def test_cheap_solve_is_deterministic():
    def run():
        try:
            s = solve(OCPSpec(target_yield=0.954, **CHEAP), seed=11)
            return s.schedule.levels, s.s_G0
        except InfeasibleError as e:
            return e.report

    assert run() == run()


def test_switch_time_helpers():
    sched = ControlSchedule(0, 8, 1, [0, 0, 0, 873, 873, 873, 873, 873])
    assert switch_time(sched, 873.0) == 3.0 and is_two_stage(sched, 873.0)
    dark = ControlSchedule.constant(0.0)
    assert switch_time(dark, 873.0) == 8.0 and is_two_stage(dark, 873.0)
    assert not is_two_stage(ControlSchedule(0, 8, 1, [873, 0] * 4), 873.0)


def test_oracle_at_uninduced_yield_never_induces():
    s_max = max_depletable_uninduced()
    traj = integrate(State(0.0713, 0.0, s_max, 0.0), ControlSchedule.constant(0.0))
    target = round(batch_metrics(traj).Y_LG_batch, 4)
    sol = two_stage_oracle(OCPSpec(target_yield=target))
    assert sol.switch_time == 8.0
    assert sol.feasible
    assert abs(sol.s_G0 - s_max) <= 0.01 + 1e-9


def test_oracle_reports_its_feasible_grid(oracle_954):
    feasible = oracle_954.diagnostics["feasible_s0"]
    assert min(abs(oracle_954.s_G0 - f) for f in feasible) < 1e-12
    assert max(feasible) == pytest.approx(2.75)


def test_optimal_glucose_shrinks_with_target(ocp_solutions):
    s0 = [ocp_solutions(t).s_G0 for t in (0.90, 0.954, 0.986)]
    assert s0 == sorted(s0, reverse=True)


def test_full_induction_exceeds_unit_yield():
    # the kinetic model carries no stoichiometric cap: a fully induced batch
    # converts slightly more than 1 g lactate per g glucose
    traj = integrate(State(0.0713, 0.0, 2.0, 0.0), ControlSchedule.constant(873.0))
    assert traj.final.s_G <= 0.01
    assert batch_metrics(traj).Y_LG_batch > 1.0
    sol = two_stage_oracle(OCPSpec(target_yield=1.0))
    assert sol.feasible and sol.switch_time <= 2.0


def test_oracle_solution_consistent(oracle_954):
    sol = oracle_954
    spec = OCPSpec(target_yield=0.954)
    assert sol.feasible and is_two_stage(sol.schedule, 873.0)
    assert abs(sol.depletion_residual) <= spec.eps_dep
    assert abs(sol.yield_residual) <= spec.eps_yield
    assert abs(sol.objective - sol.trajectory.final.p_L) == 0.0


@pytest.mark.parametrize("target", [0.90, 0.954, 0.986])
def test_solution_invariants(ocp_solutions, target):
    sol = ocp_solutions(target)
    spec = OCPSpec(target_yield=target)
    assert sol.feasible
    lv = np.asarray(sol.schedule.levels)
    assert lv.min() >= 0.0 and lv.max() <= spec.u_max
    assert 0.0 < sol.s_G0 <= spec.s_G_max
    assert abs(sol.objective - spec.p_L0 - target * sol.s_G0) <= identity_slack(sol, spec)
    trace = sol.diagnostics["excess_violation_trace"]
    assert all(b <= a for a, b in zip(trace, trace[1:]))


def test_solution_dominates_two_stage_oracle(ocp_solutions, oracle_954):
    assert ocp_solutions(0.954).objective >= oracle_954.objective - 0.954 * 0.01


def test_solution_json_shape(ocp_solutions):
    d = ocp_solutions(0.954).as_dict()
    for key in ("levels", "s_G0", "objective_p_L_tf", "depletion_residual", "yield_residual", "switch_time"):
        assert key in d
