"""Measured batch fermentations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .model import ATPASE, State
from .sim import ControlSchedule, Trajectory

# measured columns, in state-array order; E is never measured
MEASURED = ("B_c", "s_G", "p_L")


@dataclass
class BatchDataset:
    """Samples of one batch plus the light schedule that was applied.

    ``values`` has shape (n_samples, 4) in state order; the E column is all
    NaN and any other NaN is a missing observation.
    """

    id: str
    schedule: ControlSchedule
    times: np.ndarray
    values: np.ndarray
    initial_state: State

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.array(self.values, dtype=float)
        if self.values.shape != (len(self.times), 4):
            raise DataError(
                f"batch {self.id}: expected values of shape ({len(self.times)}, 4), "
                f"got {self.values.shape}"
            )
        self.values[:, ATPASE] = np.nan
        if len(self.times) and np.any(np.diff(self.times) <= 0):
            row = int(np.argmax(np.diff(self.times) <= 0)) + 1
            raise DataError(f"batch {self.id}: sample times not increasing at sample {row}")
        eps = 1e-9
        if len(self.times) and (
            self.times[0] < self.schedule.t0 - eps or self.times[-1] > self.schedule.tf + eps
        ):
            raise DataError(f"batch {self.id}: sample times outside the schedule horizon")
        observed = np.isfinite(np.delete(self.values, ATPASE, axis=1))
        if not np.all(observed.any(axis=1)):
            raise DataError(f"batch {self.id}: a sample has no observed column")

    @property
    def n_samples(self) -> int:
        return len(self.times)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, sample_times, id="synthetic") -> "BatchDataset":
        """Noise-free samples of a simulated batch (E dropped)."""
        values = traj.at(sample_times)
        return cls(id, traj.schedule, np.asarray(sample_times, float), values, traj.initial)
