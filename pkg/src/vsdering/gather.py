from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Gather:
    """A shot gather: ``data[t, x]`` with time down the rows, one trace per column."""

    data: np.ndarray
    dt: float  # seconds
    dx: float  # meters

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2:
            raise ValueError(f"gather data must be 2-D (n_t, n_x), got {self.data.shape}")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError(f"dt and dx must be positive, got dt={self.dt}, dx={self.dx}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("gather contains non-finite values")

    @property
    def n_t(self) -> int:
        return self.data.shape[0]

    @property
    def n_x(self) -> int:
        return self.data.shape[1]

    @property
    def nyquist(self) -> float:
        return 0.5 / self.dt
