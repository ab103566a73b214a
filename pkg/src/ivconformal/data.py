"""Dataset containers shared across modules."""

from dataclasses import dataclass
from typing import Optional

import numpy as np


def _as_2d(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class DataSet:
    """Aligned outcome / regressor / instrument arrays.

    ``y`` has shape (n,), ``x`` shape (n, d_x), ``z`` shape (n, d_z).
    ``latents`` optionally carries confounder/noise draws for synthetic data
    (columns documented by the generator); real data leaves it ``None``.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    latents: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        x = _as_2d(self.x, "x")
        z = _as_2d(self.z, "z")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite entries")
        if not (len(y) == x.shape[0] == z.shape[0]):
            raise ValueError(
                f"length mismatch: y={len(y)}, x={x.shape[0]}, z={z.shape[0]}"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.y)

    def take(self, idx) -> "DataSet":
        """Row subset (copy), preserving latents when present."""
        lat = None if self.latents is None else self.latents[idx]
        return DataSet(self.y[idx], self.x[idx], self.z[idx], lat)


@dataclass(frozen=True)
class SplitData:
    """Named train / calibration / test partition of one dataset."""

    train: DataSet
    cal: DataSet
    test: DataSet
