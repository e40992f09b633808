"""Fixed-step RK4 simulation over piecewise-constant light schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .model import BIOMASS, GLUCOSE, LACTATE, NOMINAL_PARAMS, State, nominal_rhs

DEFAULT_STEP = 0.01
CLAMP_EPS = 1e-9

RHS = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant light input, one level per interval of ``interval_width`` hours."""

    t0: float
    tf: float
    interval_width: float
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        if not self.tf > self.t0:
            raise ConfigError(f"schedule needs tf > t0, got [{self.t0}, {self.tf}]")
        if not self.interval_width > 0:
            raise ConfigError("interval_width must be positive")
        if len(self.levels) != self.n_intervals:
            raise ConfigError(
                f"schedule over [{self.t0}, {self.tf}] with width {self.interval_width} "
                f"needs {self.n_intervals} levels, got {len(self.levels)}"
            )
        if any(not math.isfinite(v) or v < 0 for v in self.levels):
            raise ConfigError("light levels must be finite and non-negative")

    @property
    def n_intervals(self) -> int:
        return int(math.ceil((self.tf - self.t0) / self.interval_width - 1e-9))

    @classmethod
    def constant(cls, u, tf=8.0, t0=0.0, interval_width=1.0) -> "ControlSchedule":
        n = int(math.ceil((tf - t0) / interval_width - 1e-9))
        return cls(t0, tf, interval_width, (u,) * n)

    def check_bounds(self, u_max: float) -> "ControlSchedule":
        if any(v > u_max for v in self.levels):
            raise ConfigError(f"light level above u_max={u_max}")
        return self

    def u_at(self, t) -> np.ndarray:
        """Level applied at time(s) ``t``; the right end ``tf`` maps to the last interval."""
        idx = np.floor((np.asarray(t, dtype=float) - self.t0) / self.interval_width + 1e-9)
        idx = np.clip(idx.astype(int), 0, self.n_intervals - 1)
        return np.asarray(self.levels)[idx]

    def boundaries(self) -> np.ndarray:
        b = self.t0 + self.interval_width * np.arange(self.n_intervals + 1)
        b[-1] = self.tf
        return b


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    schedule: ControlSchedule

    @property
    def final(self) -> State:
        return State.from_array(self.states[-1])

    @property
    def initial(self) -> State:
        return State.from_array(self.states[0])

    def inputs(self) -> np.ndarray:
        return self.schedule.u_at(self.times)

    def at(self, t) -> np.ndarray:
        """Linearly interpolated states at time(s) ``t``, shape (len(t), 4)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack(
            [np.interp(t, self.times, self.states[:, j]) for j in range(4)], axis=-1
        )


@dataclass(frozen=True)
class BatchMetrics:
    """Whole-batch performance figures.

    The yields are ``None`` when no glucose was consumed.
    """

    Y_LG_batch: Optional[float]
    Y_BG_batch: Optional[float]
    r_L_batch: float
    yields_defined: bool = field(default=True)

    def as_dict(self) -> dict:
        return {
            "Y_LG_batch": self.Y_LG_batch,
            "Y_BG_batch": self.Y_BG_batch,
            "r_L_batch": self.r_L_batch,
            "yields_defined": self.yields_defined,
        }


def depletion_guard(rhs: RHS) -> RHS:
    """Wrap ``rhs`` so that a depleted culture stops.

    The kinetics are evaluated at ``max(s_G, 0)``; wherever ``s_G <= 0`` the
    biomass, glucose and lactate derivatives are set to zero, which forces
    growth and lactate formation to stop once the substrate is gone. The
    ATPase equation is untouched.
    """

    def guarded(x, u):
        depleted = x[..., GLUCOSE] <= 0.0
        if not np.any(depleted):
            return rhs(x, u)
        xe = x.copy()
        xe[..., GLUCOSE] = np.maximum(xe[..., GLUCOSE], 0.0)
        dx = rhs(xe, u)
        for j in (BIOMASS, GLUCOSE, LACTATE):
            dx[..., j] = np.where(depleted, 0.0, dx[..., j])
        return dx

    return guarded


def _clamp(x):
    # glucose: hard floor (depletion overshoot of a near-step Monod term)
    x[..., GLUCOSE] = np.maximum(x[..., GLUCOSE], 0.0)
    tiny = (x < 0) & (x > -CLAMP_EPS)
    if np.any(tiny):
        x[tiny] = 0.0
    return x


def _steps_for(length: float, step: float) -> int:
    n = length / step
    k = int(round(n))
    if k < 1 or abs(n - k) > 1e-6:
        raise ConfigError(f"step {step} h does not divide interval length {length} h")
    return k


def rk4_segments(rhs, x0, seg_lengths, seg_inputs, step, record=False, raise_on_nan=True, t0=0.0):
    """Integrate over consecutive segments with a constant input on each.

    Parameters
    ----------
    rhs : callable
        ``f(x, u)`` on arrays of shape (..., 4) and (...).
    x0 : ndarray, shape (..., 4)
    seg_lengths : sequence of float
        Length of each segment in hours; ``step`` must divide each one.
    seg_inputs : ndarray, shape (..., n_segments)
        Input level per segment; leading dims broadcast with ``x0``.
    record : bool
        If true, return ``(times, states)`` with every step; otherwise only
        the final state.
    """
    f = depletion_guard(rhs)
    x = np.array(x0, dtype=float)
    seg_inputs = np.asarray(seg_inputs, dtype=float)
    counts = [_steps_for(L, step) for L in seg_lengths]
    if record:
        n_total = sum(counts)
        states = np.empty((n_total + 1,) + x.shape)
        times = np.empty(n_total + 1)
        states[0] = x
        times[0] = t0
        i = 0
    t_start = t0
    for j, (L, n) in enumerate(zip(seg_lengths, counts)):
        u = seg_inputs[..., j]
        h = L / n
        for m in range(n):
            k1 = f(x, u)
            k2 = f(x + (0.5 * h) * k1, u)
            k3 = f(x + (0.5 * h) * k2, u)
            k4 = f(x + h * k3, u)
            x = _clamp(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            if record:
                i += 1
                states[i] = x
                times[i] = t_start + (m + 1) * h
        t_start += L
        if raise_on_nan and not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite state during integration, before t={t_start:g} h")
    if record:
        times[-1] = t0 + sum(seg_lengths)
        return times, states
    return x


def integrate(
    x0,
    schedule: ControlSchedule,
    rhs: Optional[RHS] = None,
    step: float = DEFAULT_STEP,
) -> Trajectory:
    """Simulate one batch with classical RK4 at a fixed step.

    ``rhs`` defaults to the nominal model with the published parameters.
    States are recorded at every step.
    """
    if rhs is None:
        rhs = nominal_rhs(NOMINAL_PARAMS)
    if not step > 0:
        raise ConfigError("step must be positive")
    x0 = x0.as_array() if isinstance(x0, State) else np.asarray(x0, dtype=float)
    if x0.shape != (4,):
        raise DomainError(f"initial state must have 4 components, got {x0.shape}")
    State.from_array(x0).validate()
    _steps_for(schedule.interval_width, step)
    lengths = np.diff(schedule.boundaries())
    times, states = rk4_segments(
        rhs, x0, lengths, np.asarray(schedule.levels), step, record=True, t0=schedule.t0
    )
    return Trajectory(times, states, schedule)


def simulate_final(rhs, x0, schedule_like, levels, step=DEFAULT_STEP):
    """Final states for a batch of initial states and level vectors.

    ``levels`` has shape (N, n_intervals); non-finite results are returned as
    NaN instead of raising so that population searches can penalize them.
    """
    lengths = np.diff(schedule_like.boundaries())
    with np.errstate(all="ignore"):
        return rk4_segments(rhs, x0, lengths, levels, step, record=False, raise_on_nan=False)


def batch_metrics(traj: Trajectory) -> BatchMetrics:
    """Lactate and biomass yields on glucose and lactate productivity over the batch."""
    x0, xf = traj.states[0], traj.states[-1]
    duration = float(traj.times[-1] - traj.times[0])
    if not duration > 0:
        raise DomainError("degenerate trajectory")
    d_lac = xf[LACTATE] - x0[LACTATE]
    r_L = float(d_lac / duration)
    consumed = x0[GLUCOSE] - xf[GLUCOSE]
    if consumed == 0:
        return BatchMetrics(None, None, r_L, yields_defined=False)
    return BatchMetrics(
        float(d_lac / consumed), float((xf[BIOMASS] - x0[BIOMASS]) / consumed), r_L
    )
