"""Open-loop light-schedule optimization by direct single shooting.

Decision vector: one light level per interval followed by the initial
glucose concentration. The terminal-depletion and batch-yield equalities are
handled with an augmented Lagrangian whose inner minimization is the particle
swarm from :mod:`optoferm.estimate`, followed by a coordinate polish.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InfeasibleError
from .estimate import ordered_map, particle_swarm
from .hybrid import ResidualModels, hybrid_rhs
from .model import GLUCOSE, LACTATE, NOMINAL_PARAMS, KineticParams, State, nominal_rhs
from .sim import DEFAULT_STEP, ControlSchedule, Trajectory, integrate, simulate_final

# Level changes worth less than this much final lactate (g/l) are snapped to a bound.
SNAP_TOL = 1e-4


@dataclass
class OCPSpec:
    target_yield: float
    horizon: float = 8.0
    interval_width: float = 1.0
    u_max: float = 873.0
    s_G_max: float = 5.0
    s_G_min: float = 1e-3
    B_c0: float = 0.0713
    p_L0: float = 0.0
    E0: float = 0.0
    t0: float = 0.0
    model: str = "nominal"
    eps_dep: float = 0.01
    eps_yield: float = 0.005
    step: float = DEFAULT_STEP
    # search effort
    swarm_size: int = 300
    max_iterations: int = 30
    outer_iterations: int = 5
    rho0: float = 1e-3
    rho_growth: float = 10.0
    polish_rounds: int = 80
    oracle_grid: float = 0.01
    warm_grid: float = 0.05

    def __post_init__(self):
        if self.model not in ("nominal", "hybrid"):
            raise ConfigError(f"model must be 'nominal' or 'hybrid', got {self.model!r}")
        if not self.horizon > 0 or not self.interval_width > 0 or not self.u_max > 0:
            raise ConfigError("horizon, interval_width and u_max must be positive")
        if not 0 < self.s_G_min < self.s_G_max:
            raise ConfigError("need 0 < s_G_min < s_G_max")
        if not self.target_yield > 0:
            raise ConfigError("target yield must be positive")
        if self.eps_dep <= 0 or self.eps_yield <= 0:
            raise ConfigError("tolerances must be positive")
        if not (self.oracle_grid > 0 and self.warm_grid > 0):
            raise ConfigError("glucose grid spacings must be positive")
        if min(self.B_c0, self.p_L0, self.E0) < 0:
            raise ConfigError("initial states must be non-negative")

    @property
    def n_intervals(self) -> int:
        return int(math.ceil(self.horizon / self.interval_width - 1e-9))

    @property
    def tf(self) -> float:
        return self.t0 + self.horizon

    def schedule(self, levels) -> ControlSchedule:
        return ControlSchedule(self.t0, self.tf, self.interval_width, tuple(levels))

    def check_reachable(self):
        # a batch cannot convert more than 1 g lactate per g glucose
        if self.target_yield > 1.0:
            raise InfeasibleError(
                f"target yield {self.target_yield} g/g exceeds the stoichiometric ceiling of 1 g/g",
                {"target_yield": self.target_yield},
            )

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OCPSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown OCP spec fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class OCPSolution:
    schedule: ControlSchedule
    s_G0: float
    trajectory: Trajectory
    objective: float
    depletion_residual: float
    yield_residual: float
    feasible: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def switch_time(self) -> float:
        return switch_time(self.schedule, self.diagnostics.get("u_max", 873.0))

    def as_dict(self) -> dict:
        return {
            "levels": list(self.schedule.levels),
            "interval_width": self.schedule.interval_width,
            "t0": self.schedule.t0,
            "tf": self.schedule.tf,
            "s_G0": self.s_G0,
            "objective_p_L_tf": self.objective,
            "depletion_residual": self.depletion_residual,
            "yield_residual": self.yield_residual,
            "feasible": self.feasible,
            "switch_time": self.switch_time,
            "diagnostics": self.diagnostics,
        }


def switch_time(schedule: ControlSchedule, u_max: float) -> float:
    """Start of the first interval at more than half of ``u_max``; ``tf`` if never."""
    for i, u in enumerate(schedule.levels):
        if u > 0.5 * u_max:
            return schedule.t0 + i * schedule.interval_width
    return schedule.tf


def is_two_stage(schedule: ControlSchedule, u_max: float, rel_tol: float = 0.01) -> bool:
    """Off (<= rel_tol*u_max) up to the switch, on (>= (1-rel_tol)*u_max) afterwards."""
    ts = switch_time(schedule, u_max)
    k = min(schedule.n_intervals, int(round((ts - schedule.t0) / schedule.interval_width)))
    lv = np.asarray(schedule.levels)
    return bool(np.all(lv[:k] <= rel_tol * u_max) and np.all(lv[k:] >= (1 - rel_tol) * u_max))


class _Problem:
    """Batched evaluation of decision vectors ``z = [levels..., s_G0]``."""

    def __init__(self, spec: OCPSpec, params: KineticParams, models: Optional[ResidualModels]):
        if spec.model == "hybrid":
            if models is None:
                raise ConfigError("hybrid model selected but no residual models given")
            self.rhs = hybrid_rhs(params, models)
        else:
            self.rhs = nominal_rhs(params)
        self.spec = spec
        self.n = spec.n_intervals
        self.sched = spec.schedule([0.0] * self.n)
        self.lower = np.r_[np.zeros(self.n), spec.s_G_min]
        self.upper = np.r_[np.full(self.n, spec.u_max), spec.s_G_max]
        self.n_evals = 0

    def evaluate(self, Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        s = self.spec
        x0 = np.empty((len(Z), 4))
        x0[:] = [s.B_c0, s.E0, 0.0, s.p_L0]
        x0[:, GLUCOSE] = Z[:, -1]
        xf = simulate_final(self.rhs, x0, self.sched, Z[:, :-1], s.step)
        self.n_evals += len(Z)
        p_f = xf[:, LACTATE]
        s_f = xf[:, GLUCOSE]
        consumed = Z[:, -1] - s_f
        with np.errstate(all="ignore"):
            y = np.where(consumed > 0, (p_f - s.p_L0) / consumed, np.nan)
        dep = s_f
        yerr = y - s.target_yield
        ok = np.isfinite(p_f) & np.isfinite(yerr)
        feas = ok & (np.abs(dep) <= s.eps_dep) & (np.abs(yerr) <= s.eps_yield)
        return p_f, dep, yerr, feas

    def scaled_violation(self, dep, yerr):
        """Constraint residuals in units of their tolerances."""
        g1 = dep / self.spec.eps_dep
        g2 = yerr / self.spec.eps_yield
        return g1, g2


class _Incumbent:
    """Best point seen anywhere in the search.

    Feasible points beat infeasible ones; among feasible points the larger
    objective wins, among infeasible points the smaller excess violation.
    """

    def __init__(self):
        self.z = None
        self.obj = -np.inf
        self.excess = np.inf
        self.feasible = False

    def offer(self, Z, p_f, g1, g2, feas):
        excess = np.maximum(np.abs(g1) - 1, 0) + np.maximum(np.abs(g2) - 1, 0)
        excess = np.where(np.isfinite(excess), excess, np.inf)
        if np.any(feas):
            i = int(np.argmax(np.where(feas, p_f, -np.inf)))
            if not self.feasible or p_f[i] > self.obj:
                self.z, self.obj, self.excess, self.feasible = Z[i].copy(), float(p_f[i]), 0.0, True
        elif not self.feasible:
            i = int(np.argmin(excess))
            if excess[i] < self.excess:
                self.z, self.obj, self.excess = Z[i].copy(), float(p_f[i]), float(excess[i])


def _level_moves(base, u_step, u_max):
    """Neighbours of a level vector: single-level steps plus prefix-off / suffix-on blocks."""
    n = len(base)
    out = []
    if u_step >= 0.5:
        for i in range(n):
            for sgn in (1.0, -1.0):
                lv = base.copy()
                lv[i] = np.clip(lv[i] + sgn * u_step, 0.0, u_max)
                out.append(lv)
    for k in range(1, n + 1):
        lv = base.copy()
        lv[:k] = 0.0
        out.append(lv)
        lv = base.copy()
        lv[n - k:] = u_max
        out.append(lv)
    uniq = {tuple(lv) for lv in out} - {tuple(base)}
    return [np.array(lv) for lv in sorted(uniq)]


def _polish(prob: _Problem, inc: _Incumbent, rounds: int):
    """Neighbourhood search over the levels, re-scanning s_G0 for every candidate.

    Each candidate level vector is paired with a fan of s_G0 values around
    the current one, so moves can follow the constraint surface instead of
    stepping off it. Only feasible improvements of p_L(tf) are accepted;
    step sizes halve after a round without improvement.
    """
    spec = prob.spec
    u_step = spec.u_max
    s_rel = 0.25
    fan = np.linspace(-1.0, 1.0, 11)
    for _ in range(rounds):
        if u_step < 0.5 and s_rel < 2e-5:
            break
        base = inc.z[:-1]
        cands = [base] + _level_moves(base, u_step, spec.u_max)
        s0 = np.clip(inc.z[-1] * (1.0 + s_rel * fan), spec.s_G_min, spec.s_G_max)
        L = np.repeat(np.array(cands), len(s0), axis=0)
        Z = np.column_stack([L, np.tile(s0, len(cands))])
        p_f, dep, yerr, feas = prob.evaluate(Z)
        before = inc.obj
        inc.offer(Z, p_f, *prob.scaled_violation(dep, yerr), feas)
        if inc.obj <= before:
            u_step *= 0.5
            s_rel *= 0.5
    _snap(prob, inc)


def _snap(prob: _Problem, inc: _Incumbent):
    """Push levels with negligible effect onto the nearest bound."""
    spec = prob.spec
    for i in range(prob.n):
        target = 0.0 if inc.z[i] < 0.5 * spec.u_max else spec.u_max
        if inc.z[i] == target:
            continue
        z = inc.z.copy()
        z[i] = target
        p_f, dep, yerr, feas = prob.evaluate(z[None, :])
        if feas[0] and p_f[0] >= inc.obj - SNAP_TOL:
            inc.z, inc.obj = z, float(p_f[0])


def _finish(prob: _Problem, inc: _Incumbent, params, models, diagnostics) -> OCPSolution:
    spec = prob.spec
    levels = np.clip(inc.z[:-1], 0.0, spec.u_max)
    s0 = float(inc.z[-1])
    sched = spec.schedule(levels)
    traj = integrate(State(spec.B_c0, spec.E0, s0, spec.p_L0), sched, prob.rhs, spec.step)
    xf = traj.states[-1]
    consumed = s0 - xf[GLUCOSE]
    y = (xf[LACTATE] - spec.p_L0) / consumed if consumed > 0 else float("nan")
    dep = float(xf[GLUCOSE])
    yerr = float(y - spec.target_yield)
    feasible = abs(dep) <= spec.eps_dep and abs(yerr) <= spec.eps_yield
    diagnostics = dict(diagnostics, u_max=spec.u_max, n_evals=prob.n_evals, batch_yield=float(y))
    return OCPSolution(sched, s0, traj, float(xf[LACTATE]), dep, yerr, feasible, diagnostics)


def _infeasible(prob, inc, msg):
    report = {"excess_violation": inc.excess, "n_evals": prob.n_evals}
    if inc.z is not None:
        p_f, dep, yerr, _ = prob.evaluate(inc.z[None, :])
        report.update(
            depletion_residual=float(dep[0]),
            yield_residual=float(yerr[0]),
            levels=inc.z[:-1].tolist(),
            s_G0=float(inc.z[-1]),
        )
    return InfeasibleError(msg, report)


def solve(
    spec: OCPSpec,
    params: KineticParams = NOMINAL_PARAMS,
    models: Optional[ResidualModels] = None,
    seed: int = 0,
) -> OCPSolution:
    """Maximize final lactate subject to depletion and yield targets.

    Raises
    ------
    InfeasibleError
        When no point within both tolerances was found; the report carries
        the smallest residuals reached.
    """
    spec.check_reachable()
    started = time.perf_counter()
    prob = _Problem(spec, params, models)
    inc = _Incumbent()
    # warm start: the best off-then-on schedule on a coarse glucose grid
    _scan_two_stage(prob, inc, spec.warm_grid)
    lam = np.zeros(2)
    rho = spec.rho0
    mid = 0.5 * (spec.s_G_min + spec.s_G_max)
    seeds = [np.r_[np.zeros(prob.n), mid], np.r_[np.full(prob.n, spec.u_max), mid]]
    violation_trace = []

    for k in range(spec.outer_iterations):
        lam_k, rho_k = lam.copy(), rho

        def merit(Z):
            p_f, dep, yerr, feas = prob.evaluate(Z)
            g1, g2 = prob.scaled_violation(dep, yerr)
            inc.offer(Z, p_f, g1, g2, feas)
            m = -p_f + lam_k[0] * g1 + lam_k[1] * g2 + 0.5 * rho_k * (g1**2 + g2**2)
            return np.where(np.isfinite(m), m, np.inf)

        init = list(seeds) if k == 0 else []
        if inc.z is not None:
            init.insert(0, inc.z)
        res = particle_swarm(
            merit,
            prob.lower,
            prob.upper,
            swarm_size=spec.swarm_size,
            max_iterations=spec.max_iterations,
            seed=seed + 1000 * k,
            initial=np.array(init),
        )
        _, dep, yerr, _ = prob.evaluate(res.best_x[None, :])
        g = np.array(prob.scaled_violation(dep, yerr)).ravel()
        if np.all(np.isfinite(g)):
            lam = lam + rho * g
        rho *= spec.rho_growth
        violation_trace.append(inc.excess)

    if not inc.feasible:
        raise _infeasible(prob, inc, "no feasible light schedule found")
    _polish(prob, inc, spec.polish_rounds)
    diag = {
        "method": "augmented-Lagrangian PSO + coordinate polish",
        "excess_violation_trace": violation_trace,
        "multipliers": lam.tolist(),
        "seed": seed,
        "runtime_s": time.perf_counter() - started,
    }
    return _finish(prob, inc, params, models, diag)


def _scan_two_stage(prob: _Problem, inc: _Incumbent, g: float):
    """Offer every off-then-on schedule on an s_G0 grid of spacing ``g``.

    Returns the grid and a mask of grid values feasible for some switch time.
    """
    spec = prob.spec
    grid = g * np.arange(math.ceil(spec.s_G_min / g - 1e-9), math.floor(spec.s_G_max / g + 1e-9) + 1)
    grid = grid[(grid >= spec.s_G_min) & (grid <= spec.s_G_max)]

    def profile(k):
        levels = np.r_[np.zeros(k), np.full(prob.n - k, spec.u_max)]
        Z = np.column_stack([np.tile(levels, (len(grid), 1)), grid])
        return Z, prob.evaluate(Z)

    feasible = np.zeros(len(grid), bool)
    for Z, (p_f, dep, yerr, feas) in ordered_map(profile, range(prob.n + 1)):
        inc.offer(Z, p_f, *prob.scaled_violation(dep, yerr), feas)
        feasible |= feas
    return grid, feasible


def two_stage_oracle(
    spec: OCPSpec,
    params: KineticParams = NOMINAL_PARAMS,
    models: Optional[ResidualModels] = None,
) -> OCPSolution:
    """Exhaustive search over off-then-full-on schedules and a gridded s_G0.

    Switch times run over every interval start plus ``tf`` (never switch on);
    ``s_G0`` runs over multiples of ``spec.oracle_grid`` in the allowed box.
    """
    spec.check_reachable()
    started = time.perf_counter()
    prob = _Problem(spec, params, models)
    inc = _Incumbent()
    grid, feasible_s0 = _scan_two_stage(prob, inc, spec.oracle_grid)
    if not inc.feasible:
        raise _infeasible(prob, inc, "no feasible two-stage schedule on the grid")
    diag = {
        "method": "two-stage grid oracle",
        "grid": spec.oracle_grid,
        "feasible_s0": [float(v) for v in grid[feasible_s0]],
        "runtime_s": time.perf_counter() - started,
    }
    return _finish(prob, inc, params, models, diag)
