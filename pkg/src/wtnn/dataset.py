"""In-memory mission table shared by the trainer, simulator and CLI."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import Batch


@dataclass
class SurvivalDataset:
    """One row per mission; rows of a vehicle are in chronological order.

    ``record_ids`` default to the row position.
    """

    vehicle_ids: np.ndarray
    X: np.ndarray
    z: np.ndarray
    delta: np.ndarray
    record_ids: np.ndarray | None = None

    def __post_init__(self):
        self.vehicle_ids = np.asarray(self.vehicle_ids)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.z = np.asarray(self.z, dtype=float).ravel()
        self.delta = np.asarray(self.delta, dtype=float).ravel()
        n = self.z.size
        if self.record_ids is None:
            self.record_ids = np.arange(n)
        self.record_ids = np.asarray(self.record_ids)
        if not (self.vehicle_ids.size == self.X.shape[0] == self.delta.size == self.record_ids.size == n):
            raise ValueError("dataset columns must have the same number of rows")

    def __len__(self):
        return self.z.size

    @property
    def n_vehicles(self) -> int:
        return int(np.unique(self.vehicle_ids).size)

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx, dtype=int)
        return SurvivalDataset(self.vehicle_ids[idx], self.X[idx], self.z[idx], self.delta[idx], self.record_ids[idx])

    def with_durations(self, z) -> "SurvivalDataset":
        return SurvivalDataset(self.vehicle_ids, self.X, z, self.delta, self.record_ids)

    def to_batch(self, w=None) -> Batch:
        return Batch(self.X, self.z, self.delta, w)

    def last_mission_index(self) -> np.ndarray:
        """Row index of each vehicle's final mission, in order of first appearance."""
        last = {}
        for i, v in enumerate(self.vehicle_ids.tolist()):
            last[v] = i
        return np.array(list(last.values()), dtype=int)
