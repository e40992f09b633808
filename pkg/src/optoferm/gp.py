"""Gaussian-process regression with a squared-exponential kernel.

Training inputs are stored row-wise: ``X`` has shape (n_d, n_v), one row per
training point. The prior mean is the zero function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .errors import DomainError, NumericalError, TrainingError

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-8
JITTER_ESCALATIONS = 3


@dataclass(frozen=True)
class GPHyperparams:
    signal_variance: float
    length_scale: float
    noise_variance: float

    def __post_init__(self):
        if not (self.signal_variance > 0 and self.length_scale > 0 and self.noise_variance >= 0):
            raise DomainError(f"invalid GP hyperparameters: {self}")

    def as_dict(self) -> dict:
        return {
            "signal_variance": self.signal_variance,
            "length_scale": self.length_scale,
            "noise_variance": self.noise_variance,
        }


def kernel(v_i, v_j, hp: GPHyperparams) -> float:
    """Squared-exponential covariance between two feature vectors."""
    a = np.asarray(v_i, dtype=float)
    b = np.asarray(v_j, dtype=float)
    if a.shape != b.shape:
        raise DomainError(f"feature dimension mismatch: {a.shape} vs {b.shape}")
    r2 = float(np.sum((a - b) ** 2))
    return hp.signal_variance * math.exp(-r2 / (2.0 * hp.length_scale**2))


def kernel_matrix(A, B, hp: GPHyperparams) -> np.ndarray:
    """Cross-covariance between the rows of ``A`` (n, k) and ``B`` (m, k)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DomainError(f"feature dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return _se(sq_dists(A, B), hp)


def sq_dists(A, B) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``A`` and ``B``."""
    r2 = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(r2, 0.0, out=r2)


def _se(r2, hp: GPHyperparams) -> np.ndarray:
    return hp.signal_variance * np.exp(-r2 / (2.0 * hp.length_scale**2))


def _cholesky(X, hp: GPHyperparams):
    """Lower Cholesky factor of K + noise*I, escalating diagonal jitter on failure."""
    n = X.shape[0]
    C = kernel_matrix(X, X, hp)
    C[np.diag_indices(n)] += hp.noise_variance
    jitter = 0.0
    for attempt in range(JITTER_ESCALATIONS + 2):
        try:
            Lc = np.linalg.cholesky(C if jitter == 0.0 else C + jitter * np.eye(n))
            return Lc, jitter
        except np.linalg.LinAlgError:
            if attempt > JITTER_ESCALATIONS:
                break
            jitter = JITTER_START * hp.signal_variance * 10.0**attempt
    raise NumericalError("covariance matrix not positive definite after maximum jitter")


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise DomainError(f"{X.shape[0]} training inputs but {y.shape[0]} labels")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DomainError("non-finite training data")
    return X, y


def _lml_from_factor(Lc, y):
    alpha = solve_triangular(Lc, y, lower=True)
    return -0.5 * alpha @ alpha - np.sum(np.log(np.diag(Lc))) - 0.5 * len(y) * LOG_2PI


def log_marginal_likelihood(X, y, hp: GPHyperparams) -> float:
    """Log evidence of labels ``y`` at inputs ``X`` under hyperparameters ``hp``."""
    X, y = _check_xy(X, y)
    Lc, _ = _cholesky(X, hp)
    return float(_lml_from_factor(Lc, y))


def _label_scale(y) -> float:
    s2 = float(np.mean(y * y))
    return s2 if s2 > 0 else 1.0


def _log_bounds(y):
    s2 = _label_scale(y)
    return np.log(
        np.array(
            [
                [s2 * 1e-6, s2 * 1e4],  # signal variance
                [1e-2, 1e2],  # length scale, standardized feature units
                [s2 * 1e-10, s2 * 10.0],  # noise variance
            ]
        )
    )


def fit_hyperparameters(
    X,
    y,
    init: GPHyperparams | None = None,
    budget: int = 300,
    n_starts: int = 8,
    seed: int = 0,
) -> GPHyperparams:
    """Maximize the log marginal likelihood over (signal var, length scale, noise var).

    Nelder-Mead in log space from ``n_starts`` seeded starting points, each
    limited to ``budget`` function evaluations. The first start is ``init``;
    the result never has lower evidence than ``init``.
    """
    X, y = _check_xy(X, y)
    if X.shape[0] < 2:
        raise TrainingError("need at least two training points")
    s2 = _label_scale(y)
    if init is None:
        init = GPHyperparams(s2, 1.0, 1e-2 * s2)
    bounds = _log_bounds(y)

    def neg_lml(z):
        z = np.clip(z, bounds[:, 0], bounds[:, 1])
        try:
            hp = GPHyperparams(*np.exp(z))
            Lc, _ = _cholesky(X, hp)
        except (NumericalError, DomainError):
            return 1e300
        val = -_lml_from_factor(Lc, y)
        return val if np.isfinite(val) else 1e300

    rng = np.random.default_rng(seed)
    z_init = np.log([init.signal_variance, init.length_scale, max(init.noise_variance, 1e-300)])
    starts = [z_init]
    for _ in range(n_starts - 1):
        starts.append(rng.uniform(bounds[:, 0], bounds[:, 1]))

    try:
        best_val = -log_marginal_likelihood(X, y, init)
    except NumericalError:
        best_val = np.inf
    best = init
    for z0 in starts:
        z0 = np.clip(z0, bounds[:, 0], bounds[:, 1])
        res = minimize(
            neg_lml,
            z0,
            method="Nelder-Mead",
            options={"maxfev": budget, "xatol": 1e-6, "fatol": 1e-10},
        )
        z = np.clip(res.x, bounds[:, 0], bounds[:, 1])
        val = neg_lml(z)
        if val < best_val:
            best_val, best = val, GPHyperparams(*np.exp(z))
    if not np.isfinite(best_val):
        raise NumericalError("every hyperparameter start failed to factorize")
    return best


@dataclass
class GPModel:
    """Trained regressor; immutable after construction.

    ``shift`` and ``scale`` standardize raw features before the kernel is
    applied (identity when ``None``).
    """

    X: np.ndarray
    y: np.ndarray
    hyperparams: GPHyperparams
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None
    _Lc: np.ndarray = field(init=False, repr=False)
    _alpha: np.ndarray = field(init=False, repr=False)
    _Z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X, self.y = _check_xy(self.X, self.y)
        n_v = self.X.shape[1]
        self.shift = np.zeros(n_v) if self.shift is None else np.asarray(self.shift, float)
        self.scale = np.ones(n_v) if self.scale is None else np.asarray(self.scale, float)
        self._Z = self._standardize(self.X)
        self._Lc, _ = _cholesky(self._Z, self.hyperparams)
        w = solve_triangular(self._Lc, self.y, lower=True)
        self._alpha = solve_triangular(self._Lc.T, w, lower=False)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def _standardize(self, V):
        return (V - self.shift) / self.scale

    def _prep(self, v_star):
        V = np.asarray(v_star, dtype=float)
        single = V.ndim == 1
        V = np.atleast_2d(V)
        if V.shape[-1] != self.n_features:
            raise DomainError(
                f"expected {self.n_features} features, got {V.shape[-1]}"
            )
        return self._standardize(V), single

    def predict(self, v_star):
        """Posterior mean and variance at one feature vector or a stack of them."""
        Z, single = self._prep(v_star)
        Ks = kernel_matrix(Z, self._Z, self.hyperparams)
        mean = Ks @ self._alpha
        w = solve_triangular(self._Lc, Ks.T, lower=True)
        var = self.hyperparams.signal_variance - np.sum(w * w, axis=0)
        var = np.maximum(var, 0.0)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def predict_mean(self, V) -> np.ndarray:
        """Posterior mean only, for arbitrary leading batch dims of ``V``."""
        V = np.asarray(V, dtype=float)
        lead = V.shape[:-1]
        Z, _ = self._prep(V.reshape(-1, V.shape[-1]))
        return (kernel_matrix(Z, self._Z, self.hyperparams) @ self._alpha).reshape(lead)

    def log_marginal_likelihood(self) -> float:
        return float(_lml_from_factor(self._Lc, self.y))

    def to_dict(self) -> dict:
        return {
            "hyperparams": self.hyperparams.as_dict(),
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPModel":
        return cls(
            np.asarray(d["X"], dtype=float),
            np.asarray(d["y"], dtype=float),
            GPHyperparams(**d["hyperparams"]),
            np.asarray(d["shift"], dtype=float),
            np.asarray(d["scale"], dtype=float),
        )


def standardization(X):
    """Column means and standard deviations; zero-variance columns get scale 1."""
    X = np.asarray(X, dtype=float)
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[np.ptp(X, axis=0) == 0] = 1.0
    return shift, scale


def train_gp(
    X,
    y,
    init: GPHyperparams | None = None,
    budget: int = 300,
    n_starts: int = 8,
    seed: int = 0,
    standardize: bool = True,
) -> GPModel:
    X, y = _check_xy(X, y)
    shift, scale = standardization(X) if standardize else (None, None)
    Z = X if shift is None else (X - shift) / scale
    hp = fit_hyperparameters(Z, y, init=init, budget=budget, n_starts=n_starts, seed=seed)
    return GPModel(X, y, hp, shift, scale)
