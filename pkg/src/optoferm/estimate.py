"""Multi-batch parameter estimation with a global-best particle swarm."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import BatchDataset
from .errors import ConfigError, DataError
from .model import ATPASE, NOMINAL_PARAMS, STATE_NAMES, KineticParams, _rhs
from .sim import DEFAULT_STEP, rk4_segments

PENALTY = 1e12
INERTIA = 0.729
COGNITIVE = 1.49445
SOCIAL = 1.49445
THREADS_ENV = "OPTOFERM_THREADS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer")


def ordered_map(fn, items):
    """``map`` over a thread pool sized by OPTOFERM_THREADS; results keep input order."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- objective


def _simulate_at_samples(data: BatchDataset, params: KineticParams, batch: int, step: float):
    sched = data.schedule
    x0 = np.broadcast_to(data.initial_state.as_array(), (batch, 4))
    levels = np.broadcast_to(np.asarray(sched.levels), (batch, sched.n_intervals))
    lengths = np.diff(sched.boundaries())

    def f(x, u):
        return _rhs(x, u, params)

    with np.errstate(all="ignore"):
        times, states = rk4_segments(
            f, x0, lengths, levels, step, record=True, raise_on_nan=False, t0=sched.t0
        )
    # linear interpolation of the (T, batch, 4) record at the sample times
    idx = np.clip(np.searchsorted(times, data.times, side="right") - 1, 0, len(times) - 2)
    frac = (data.times - times[idx]) / (times[idx + 1] - times[idx])
    frac = frac[:, None, None]
    with np.errstate(all="ignore"):
        return (1.0 - frac) * states[idx] + frac * states[idx + 1]  # (n_samples, batch, 4)


def _column_scale(values):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # the all-NaN E column
        sd = np.nanstd(values, axis=0)
    return np.where(np.isfinite(sd) & (sd > 0), sd, 1.0)


def _batch_size(params: KineticParams) -> int:
    sizes = {np.size(getattr(params, n)) for n in params.names()}
    return max(sizes)


def sse_objective(
    params: KineticParams,
    datasets: list[BatchDataset],
    weights: Optional[dict] = None,
    step: float = DEFAULT_STEP,
):
    """Weighted sum of squared, std-normalized errors over all batches.

    ``params`` may carry arrays of shape (N,) in any field, in which case an
    array of N objective values is returned. Simulations that blow up score
    ``PENALTY``.
    """
    batch = _batch_size(params)
    weights = weights or {}
    w = np.array([weights.get(n, 1.0) for n in STATE_NAMES])
    w[ATPASE] = 0.0

    def one(data):
        if data.n_samples == 0:
            return np.zeros(batch)
        sim = _simulate_at_samples(data, params, batch, step)
        obs = data.values[:, None, :]
        scale = _column_scale(data.values)
        err = (sim - obs) / scale
        err = np.where(np.isfinite(obs), err, 0.0)
        total = np.sum(w * err**2, axis=(0, 2))
        bad = ~np.all(np.isfinite(sim[..., [0, 2, 3]]), axis=(0, 2))
        return np.where(bad | ~np.isfinite(total), PENALTY, total)

    parts = ordered_map(one, datasets)
    total = np.sum(parts, axis=0) if parts else np.zeros(batch)
    total = np.minimum(total, PENALTY)
    return float(total[0]) if _is_scalar(params) else total


def _is_scalar(params):
    return all(np.ndim(getattr(params, n)) == 0 for n in params.names())


# ---------------------------------------------------------------- swarm


@dataclass
class SwarmResult:
    best_x: np.ndarray
    best_f: float
    history: list
    n_evals: int


def particle_swarm(
    objective: Callable[[np.ndarray], np.ndarray],
    lower,
    upper,
    log_scale=None,
    swarm_size: int = 30,
    max_iterations: int = 50,
    seed: int = 0,
    initial=None,
    inertia: float = INERTIA,
    cognitive: float = COGNITIVE,
    social: float = SOCIAL,
) -> SwarmResult:
    """Minimize ``objective`` over a box with a global-best particle swarm.

    Parameters
    ----------
    objective : callable
        Maps positions of shape (n, d) to values of shape (n,). All particles
        of one iteration are passed in a single call.
    lower, upper : array_like, shape (d,)
    log_scale : array_like of bool, optional
        Dimensions searched in log space (both bounds must be positive).
    initial : array_like, shape (k, d), optional
        Positions used for the first ``k`` particles; the rest are uniform in
        the (possibly logarithmic) box.

    Returns
    -------
    SwarmResult
        ``history[i]`` is the best value after iteration ``i`` (entry 0 is
        the initial swarm), so it is non-increasing.
    """
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    d = lo.size
    logm = np.zeros(d, bool) if log_scale is None else np.asarray(log_scale, bool)
    if lo.shape != hi.shape or not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        raise ConfigError("swarm bounds must be finite and of equal length")
    if np.any(lo >= hi):
        raise ConfigError("swarm bounds need lower < upper")
    if np.any(logm & (lo <= 0)):
        raise ConfigError("log-scaled dimensions need positive bounds")
    if swarm_size < 1 or max_iterations < 0:
        raise ConfigError("swarm_size must be >= 1 and max_iterations >= 0")

    zlo = np.where(logm, np.log(np.where(logm, lo, 1.0)), lo)
    zhi = np.where(logm, np.log(np.where(logm, hi, 1.0)), hi)

    def to_x(z):
        x = z.copy()
        x[:, logm] = np.exp(z[:, logm])
        return x

    rng = np.random.default_rng(seed)
    z = rng.uniform(zlo, zhi, size=(swarm_size, d))
    x = to_x(z)
    if initial is not None:
        init = np.clip(np.atleast_2d(np.asarray(initial, dtype=float)), lo, hi)[:swarm_size]
        k = len(init)
        x[:k] = init
        with np.errstate(divide="ignore"):
            z[:k] = np.where(logm, np.log(np.where(logm, init, 1.0)), init)
    vmax = zhi - zlo
    v = rng.uniform(-vmax, vmax, size=(swarm_size, d)) * 0.1

    f = np.asarray(objective(x), dtype=float)
    f = np.where(np.isfinite(f), f, np.inf)
    n_evals = swarm_size
    pbest_z, pbest_x, pbest_f = z.copy(), x.copy(), f.copy()
    g = int(np.argmin(pbest_f))
    history = [float(pbest_f[g])]

    for _ in range(max_iterations):
        r1 = rng.random((swarm_size, d))
        r2 = rng.random((swarm_size, d))
        v = (
            inertia * v
            + cognitive * r1 * (pbest_z - z)
            + social * r2 * (pbest_z[g] - z)
        )
        v = np.clip(v, -vmax, vmax)
        z = z + v
        out = (z < zlo) | (z > zhi)
        z = np.clip(z, zlo, zhi)
        v[out] = 0.0
        x = to_x(z)
        f = np.asarray(objective(x), dtype=float)
        f = np.where(np.isfinite(f), f, np.inf)
        n_evals += swarm_size
        better = f < pbest_f
        pbest_z[better], pbest_x[better], pbest_f[better] = z[better], x[better], f[better]
        g = int(np.argmin(pbest_f))
        history.append(float(pbest_f[g]))

    return SwarmResult(pbest_x[g].copy(), float(pbest_f[g]), history, n_evals)


# ---------------------------------------------------------------- fitting


@dataclass
class FitSpec:
    """What to fit and how hard to search.

    ``bounds`` maps parameter names to ``(lower, upper)``; parameters not
    listed stay at their value in ``initial``. Parameters whose lower bound
    is positive are searched in log space unless listed in ``linear``.
    """

    bounds: dict
    swarm_size: int = 30
    max_iterations: int = 60
    seed: int = 0
    weights: dict = field(default_factory=dict)
    linear: tuple = ()
    initial: KineticParams = NOMINAL_PARAMS
    step: float = DEFAULT_STEP

    def __post_init__(self):
        names = KineticParams.names()
        if not self.bounds:
            raise ConfigError("fit spec has no free parameters")
        clean = {}
        for name, b in self.bounds.items():
            if name not in names:
                raise ConfigError(f"unknown parameter in bounds: {name}")
            try:
                lo, hi = (float(v) for v in b)
            except (TypeError, ValueError):
                raise ConfigError(f"bounds for {name} must be a (lower, upper) pair")
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ConfigError(f"invalid bounds for {name}: {b}")
            clean[name] = (lo, hi)
        self.bounds = clean
        self.linear = tuple(self.linear)
        for name in self.linear:
            if name not in self.bounds:
                raise ConfigError(f"linear-scale parameter {name} has no bounds")
        for name in self.weights:
            if name not in STATE_NAMES:
                raise ConfigError(f"unknown state in weights: {name}")

    @property
    def free(self) -> tuple:
        return tuple(n for n in KineticParams.names() if n in self.bounds)

    @classmethod
    def from_dict(cls, d: dict) -> "FitSpec":
        d = dict(d)
        if "initial" in d:
            d["initial"] = KineticParams.from_dict(d["initial"])
        if "linear" in d:
            d["linear"] = tuple(d["linear"])
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown fit spec fields: {sorted(unknown)}")
        return cls(**d)

    def as_dict(self) -> dict:
        return {
            "bounds": {k: list(map(float, v)) for k, v in self.bounds.items()},
            "swarm_size": self.swarm_size,
            "max_iterations": self.max_iterations,
            "seed": self.seed,
            "weights": dict(self.weights),
            "linear": list(self.linear),
            "initial": self.initial.as_dict(),
            "step": self.step,
        }


@dataclass
class FitResult:
    params: KineticParams
    objective: float
    history: list
    n_evals: int

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "objective": self.objective,
            "history": list(self.history),
            "n_evals": self.n_evals,
        }


def fit_parameters(datasets: list[BatchDataset], spec: FitSpec) -> FitResult:
    """Estimate the free parameters of ``spec`` against all datasets at once."""
    if not datasets:
        raise DataError("fit_parameters needs at least one dataset")
    free = spec.free
    lo = np.array([spec.bounds[n][0] for n in free], dtype=float)
    hi = np.array([spec.bounds[n][1] for n in free], dtype=float)
    logm = np.array([n not in spec.linear and spec.bounds[n][0] > 0 for n in free])
    start = np.array([getattr(spec.initial, n) for n in free], dtype=float)

    def objective(X):
        p = spec.initial.with_values(**{n: X[:, i] for i, n in enumerate(free)})
        return sse_objective(p, datasets, spec.weights, spec.step)

    res = particle_swarm(
        objective,
        lo,
        hi,
        log_scale=logm,
        swarm_size=spec.swarm_size,
        max_iterations=spec.max_iterations,
        seed=spec.seed,
        initial=start[None, :],
    )
    best = spec.initial.with_values(**{n: float(res.best_x[i]) for i, n in enumerate(free)})
    return FitResult(best, res.best_f, res.history, res.n_evals)
