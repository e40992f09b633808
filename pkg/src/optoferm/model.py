"""Four-state kinetic model of an anaerobic lactate batch with light-induced ATPase.

State layout (also the column order of every state array in this package)::

    0  B_c   biomass            g/l
    1  E     intracellular ATPase   VU/g
    2  s_G   glucose            g/l
    3  p_L   lactate            g/l

Every function here accepts either scalars or arrays with a leading batch
dimension, so one call can evaluate a whole particle swarm.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .errors import DomainError

BIOMASS, ATPASE, GLUCOSE, LACTATE = range(4)
STATE_NAMES = ("B_c", "E", "s_G", "p_L")


@dataclass(frozen=True)
class State:
    """One point of the dynamic state."""

    B_c: float
    E: float
    s_G: float
    p_L: float

    def as_array(self) -> np.ndarray:
        return np.array([self.B_c, self.E, self.s_G, self.p_L], dtype=float)

    @classmethod
    def from_array(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x[:4]))

    def validate(self) -> "State":
        x = self.as_array()
        if not np.all(np.isfinite(x)):
            raise DomainError(f"non-finite state: {self}")
        if np.any(x < 0):
            raise DomainError(f"negative state component: {self}")
        return self


@dataclass(frozen=True)
class KineticParams:
    """The 17 kinetic parameters.

    Fields may hold numpy arrays instead of floats; all arrays must broadcast
    against each other and against the batch shape of the state.
    """

    k_BV: float
    k_G: float
    k_GV: float
    k_LV: float
    m_G: float
    m_L: float
    n_1: float
    n_2: float
    n_3: float
    q_Gmax: float
    Y_BG: float
    Y_LB: float
    q_E0: float
    q_Emax: float
    n_4: float
    k_u: float
    k_d: float

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_dict(self) -> dict:
        return {k: _plain(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "KineticParams":
        missing = set(cls.names()) - set(d)
        unknown = set(d) - set(cls.names())
        if missing or unknown:
            raise DomainError(
                f"kinetic parameters: missing {sorted(missing)}, unknown {sorted(unknown)}"
            )
        return cls(**{k: float(d[k]) for k in cls.names()})

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=float)

    @classmethod
    def from_array(cls, a) -> "KineticParams":
        a = np.asarray(a, dtype=float)
        if a.shape != (17,):
            raise DomainError(f"expected 17 parameters, got shape {a.shape}")
        return cls(*(float(v) for v in a))

    def with_values(self, **changes) -> "KineticParams":
        return replace(self, **changes)

    def validate(self) -> "KineticParams":
        for name in self.names():
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(v)):
                raise DomainError(f"parameter {name} is not finite")
            if name in _MAY_BE_ZERO:
                if np.any(v < 0):
                    raise DomainError(f"parameter {name} must be >= 0")
            elif np.any(v <= 0):
                raise DomainError(f"parameter {name} must be > 0")
        return self


_MAY_BE_ZERO = frozenset({"m_G", "m_L", "q_E0"})


def _plain(v):
    a = np.asarray(v)
    return float(a) if a.ndim == 0 else a.tolist()


NOMINAL_PARAMS = KineticParams(
    k_BV=2.605e-4,
    k_G=5.340e-7,
    k_GV=1.053e-6,
    k_LV=1.002e1,
    m_G=1.232e-6,
    m_L=1.910,
    n_1=1.000e-2,
    n_2=1.028e-1,
    n_3=1.000e1,
    q_Gmax=1.731,
    Y_BG=1.083e-1,
    Y_LB=2.204,
    q_E0=1.000e-6,
    q_Emax=1.000e1,
    n_4=4.718,
    k_u=3.729e2,
    k_d=0.988,
)


@dataclass(frozen=True)
class Rates:
    """Specific rates at one state (or a batch of states)."""

    q_G: float
    mu: float
    q_L: float
    q_E: float
    d_E: float


def hill(x, k, n):
    """Hill activation ``x**n / (x**n + k**n)`` with ``0**n := 0``.

    Non-positive ``x`` gives exactly 0, which matters for ``n`` close to zero
    where any positive ``x`` already yields a value near one half.
    """
    x = np.asarray(x, dtype=float)
    pos = x > 0
    # 1 / (1 + (k/x)^n) stays finite at both extremes
    with np.errstate(over="ignore", divide="ignore"):
        ratio = np.power(k / np.where(pos, x, 1.0), n)
    out = np.where(pos, 1.0 / (1.0 + ratio), 0.0)
    return out if out.ndim else float(out)


def _rates(B, E, s, u, p: KineticParams):
    monod = s / (s + p.k_G)
    q_G = p.q_Gmax * monod * (1.0 + hill(E, p.k_GV, p.n_1))
    mu = p.Y_BG * (q_G - p.m_G) * (1.0 - hill(E, p.k_BV, p.n_2))
    q_L = (p.Y_LB * mu + p.m_L) * (1.0 + hill(E, p.k_LV, p.n_3))
    q_E = p.q_E0 + p.q_Emax * hill(u, p.k_u, p.n_4)
    d_E = p.k_d * E
    return q_G, mu, q_L, q_E, d_E


def _check_inputs(x, u_l):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u_l, dtype=float)
    if x.shape[-1:] != (4,):
        raise DomainError(f"state must have 4 components, got shape {x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise DomainError("non-finite state or input")
    if np.any(u < 0):
        raise DomainError("light input must be non-negative")
    return x, u


def eval_kinetics(state, u_l, params: KineticParams = NOMINAL_PARAMS) -> Rates:
    """Evaluate all five kinetic rates.

    Parameters
    ----------
    state : State or array_like, shape (..., 4)
        Ordered as ``[B_c, E, s_G, p_L]``.
    u_l : float or array_like
        Green-light photon flux, umol m^-2 s^-1. Must broadcast with the
        batch shape of ``state``.
    params : KineticParams

    Returns
    -------
    Rates
        Raw rate expressions; no clamping at glucose depletion is applied
        here (the simulator does that).
    """
    x = state.as_array() if isinstance(state, State) else state
    x, u = _check_inputs(x, u_l)
    params.validate()
    return Rates(*_rates(x[..., 0], x[..., 1], x[..., 2], u, params))


def _rhs(x, u, p: KineticParams):
    B, E, s = x[..., BIOMASS], x[..., ATPASE], x[..., GLUCOSE]
    q_G, mu, q_L, q_E, d_E = _rates(B, E, s, u, p)
    return np.stack(
        np.broadcast_arrays(mu * B, q_E - d_E, -q_G * B, q_L * B), axis=-1
    )


def rhs_nominal(state, u_l, params: KineticParams = NOMINAL_PARAMS) -> np.ndarray:
    """Time derivative of the state under the knowledge-based model (per hour)."""
    x = state.as_array() if isinstance(state, State) else state
    x, u = _check_inputs(x, u_l)
    params.validate()
    return _rhs(x, u, params)


def nominal_rhs(params: KineticParams = NOMINAL_PARAMS):
    """Unchecked ``f(x, u)`` closure for the integrator's inner loop."""
    params.validate()

    def f(x, u):
        return _rhs(x, u, params)

    return f
