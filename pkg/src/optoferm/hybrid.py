"""Residual learning: finite-difference model errors, one GP per uncertain equation,
and the hybrid right-hand side built from them."""

from __future__ import annotations

from dataclasses import astuple, dataclass

import numpy as np

from .data import BatchDataset
from .errors import DataError, TrainingError
from .gp import GPModel, _se, fit_hyperparameters, sq_dists, standardization
from .model import ATPASE, BIOMASS, GLUCOSE, LACTATE, KineticParams, State, _check_inputs, _rhs
from .sim import DEFAULT_STEP, rk4_segments

FEATURES = ("s_G", "B_c", "p_L", "E", "u_l")
TARGETS = ("w_G", "w_c", "w_L")
# state index each residual is added to
TARGET_STATE = (GLUCOSE, BIOMASS, LACTATE)


@dataclass(frozen=True)
class ResidualSample:
    """Features at ``t`` and the model errors of the three extracellular equations."""

    t: float
    s_G: float
    B_c: float
    p_L: float
    E: float
    u_l: float
    w_G: float
    w_c: float
    w_L: float

    @property
    def features(self) -> np.ndarray:
        return np.array([self.s_G, self.B_c, self.p_L, self.E, self.u_l])

    @property
    def targets(self) -> np.ndarray:
        return np.array([self.w_G, self.w_c, self.w_L])

    def as_row(self) -> tuple:
        return astuple(self)


def features_of(x, u) -> np.ndarray:
    """Feature array (..., 5) from states (..., 4) and inputs (...)."""
    x = np.asarray(x, dtype=float)
    u = np.broadcast_to(np.asarray(u, dtype=float), x.shape[:-1])
    return np.stack(
        [x[..., GLUCOSE], x[..., BIOMASS], x[..., LACTATE], x[..., ATPASE], u], axis=-1
    )


def _segments(schedule, a, b):
    """Split [a, b] at schedule switches; returns lengths and the level on each piece."""
    cuts = [t for t in schedule.boundaries() if a < t < b]
    pts = np.array([a, *cuts, b])
    mids = 0.5 * (pts[:-1] + pts[1:])
    return np.diff(pts), schedule.u_at(mids)


def _span_steps(lengths, step):
    # sub-steps no longer than `step`, adjusted to fit each piece exactly
    return [L / np.ceil(L / step - 1e-9) for L in lengths]


def _integrate_span(f, x, lengths, levels, step):
    for L, u, h in zip(lengths, levels, _span_steps(lengths, step)):
        x = rk4_segments(f, x, [L], np.array([u]), h)
    return x


def compute_residuals(
    data: BatchDataset, params: KineticParams, step: float = DEFAULT_STEP
) -> list[ResidualSample]:
    """Model errors between consecutive samples, re-anchoring the model at each sample.

    E is not measured; it is reconstructed along the recorded light schedule
    starting from the dataset's initial E. Pairs with a missing observation at
    either end are skipped.
    """
    if data.n_samples < 2:
        raise DataError(f"batch {data.id}: need at least two samples for residuals")
    params.validate()

    def f(x, u):
        return _rhs(x, u, params)

    sched = data.schedule
    x_e = data.values
    E = data.initial_state.E
    t_prev = sched.t0
    out = []
    for k in range(data.n_samples - 1):
        t_k, t_next = data.times[k], data.times[k + 1]
        if t_k > t_prev:
            lengths, levels = _segments(sched, t_prev, t_k)
            E = _integrate_span(f, np.array([0.0, E, 0.0, 0.0]), lengths, levels, step)[ATPASE]
        lengths, levels = _segments(sched, t_k, t_next)
        anchor = x_e[k].copy()
        anchor[ATPASE] = E
        if np.all(np.isfinite(anchor)) and np.all(np.isfinite(np.delete(x_e[k + 1], ATPASE))):
            x_m = _integrate_span(f, anchor, lengths, levels, step)
            dt = t_next - t_k
            w = (x_e[k + 1] - x_e[k]) / dt - (x_m - anchor) / dt
            out.append(
                ResidualSample(
                    float(t_k),
                    float(anchor[GLUCOSE]),
                    float(anchor[BIOMASS]),
                    float(anchor[LACTATE]),
                    float(E),
                    float(sched.u_at(t_k)),
                    *(float(w[j]) for j in TARGET_STATE),
                )
            )
            E = x_m[ATPASE]
        else:
            E = _integrate_span(f, np.array([0.0, E, 0.0, 0.0]), lengths, levels, step)[ATPASE]
        t_prev = t_next
    return out


@dataclass
class ResidualModels:
    """GP means for w_G, w_c, w_L, all trained on the same feature matrix."""

    w_G: GPModel
    w_c: GPModel
    w_L: GPModel

    @property
    def models(self) -> tuple[GPModel, GPModel, GPModel]:
        return (self.w_G, self.w_c, self.w_L)

    def __post_init__(self):
        a = self.w_G
        self._shared = all(
            np.array_equal(m.X, a.X) and np.array_equal(m.shift, a.shift) and np.array_equal(m.scale, a.scale)
            for m in self.models[1:]
        )

    def predict_mean(self, V) -> np.ndarray:
        """Mean residuals (..., 3) in the order w_G, w_c, w_L."""
        if not self._shared:
            return np.stack([m.predict_mean(V) for m in self.models], axis=-1)
        V = np.asarray(V, dtype=float)
        lead = V.shape[:-1]
        Z, _ = self.w_G._prep(V.reshape(-1, V.shape[-1]))
        r2 = sq_dists(Z, self.w_G._Z)
        out = np.stack([_se(r2, m.hyperparams) @ m._alpha for m in self.models], axis=-1)
        return out.reshape(lead + (3,))

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in zip(TARGETS, self.models)}

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualModels":
        return cls(*(GPModel.from_dict(d[name]) for name in TARGETS))


def train_residual_models(
    samples: list[ResidualSample],
    budget: int = 300,
    n_starts: int = 8,
    seed: int = 0,
) -> ResidualModels:
    """Fit one GP per extracellular equation on the pooled residual samples."""
    if len(samples) < 2:
        raise TrainingError("need at least two residual samples")
    V = np.array([s.features for s in samples])
    W = np.array([s.targets for s in samples])
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(W))):
        raise TrainingError("non-finite residual samples")
    if np.all(np.ptp(V, axis=0) == 0):
        raise TrainingError("degenerate features: every column is constant")
    shift, scale = standardization(V)
    Z = (V - shift) / scale
    models = []
    for j in range(3):
        hp = fit_hyperparameters(Z, W[:, j], budget=budget, n_starts=n_starts, seed=seed + j)
        models.append(GPModel(V, W[:, j], hp, shift, scale))
    return ResidualModels(*models)


def _hybrid(x, u, params, models):
    dx = _rhs(x, u, params)
    w = models.predict_mean(features_of(x, u))
    for k, j in enumerate(TARGET_STATE):
        dx[..., j] = dx[..., j] + w[..., k]
    return dx


def rhs_hybrid(state, u_l, params: KineticParams, models: ResidualModels) -> np.ndarray:
    """Nominal derivative plus GP-mean corrections on glucose, biomass and lactate."""
    x = state.as_array() if isinstance(state, State) else state
    x, u = _check_inputs(x, u_l)
    params.validate()
    return _hybrid(x, u, params, models)


def hybrid_rhs(params: KineticParams, models: ResidualModels):
    params.validate()

    def f(x, u):
        return _hybrid(x, u, params, models)

    return f
