"""Instrument-shift machinery: projections, feature maps, tilt scenarios.

A shift class is encoded by a feature map phi on the conditioning variable
(instrument, or regressor-instrument pair); its first component is the
constant 1 so the class always contains the unshifted distribution.  Tilt
scenarios reweight by a fixed nonnegative function of a standardized
one-dimensional projection u of the instrument.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateColumnError
from .numkit import as_matrix, principal_axis


@dataclass(frozen=True)
class Projector:
    """Standardized one-dimensional projection of a (possibly vector) input.

    For scalar inputs this is plain standardization; for vectors it is the
    first principal-component score of the per-coordinate standardized data,
    rescaled to unit variance on the reference sample.
    """

    col_mean: np.ndarray
    col_scale: np.ndarray
    axis: np.ndarray
    score_scale: float

    def apply(self, v) -> np.ndarray:
        """Projection scores; accepts one row (d,) or a batch (n, d)."""
        arr = np.asarray(v, dtype=float)
        one = arr.ndim <= 1 and self.col_mean.shape[0] == max(arr.size, 1)
        if arr.ndim == 0:
            arr = arr[None, None]
        elif arr.ndim == 1:
            arr = arr[None, :] if one else arr[:, None]
        if arr.shape[1] != self.col_mean.shape[0]:
            raise ValueError(
                f"input has {arr.shape[1]} coordinates, projector expects "
                f"{self.col_mean.shape[0]}"
            )
        u = ((arr - self.col_mean) / self.col_scale) @ self.axis / self.score_scale
        return float(u[0]) if one else u


def build_projector(reference) -> Projector:
    """Fit a :class:`Projector` on a reference sample (n >= 2 rows).

    On the reference itself the scores have mean 0 and variance 1
    (population convention).
    """
    R = as_matrix(reference, "reference")
    n, d = R.shape
    if n < 2:
        raise ValueError("need at least 2 reference rows")
    mean = R.mean(axis=0)
    scale = R.std(axis=0)
    floor = 1e-12 * (1.0 + np.abs(mean))
    if np.any(scale <= floor):
        bad = int(np.argmin(scale - floor))
        raise DegenerateColumnError(f"reference column {bad} has zero variance")
    axis = np.ones(1) if d == 1 else principal_axis(R)
    t = ((R - mean) / scale) @ axis
    score_scale = float(t.std())
    if score_scale <= 1e-12:
        raise DegenerateColumnError("projection of reference has zero variance")
    return Projector(col_mean=mean, col_scale=scale, axis=axis, score_scale=score_scale)


@dataclass(frozen=True)
class FeatureMap:
    """Feature map phi defining a shift class; phi[0] == 1 always.

    kinds:
      - "linear": (1, v_1, ..., v_d), raw coordinates.
      - "bins":   (1, indicators of projection bins); indicators partition
                  the line, so they sum to 1.
      - "rkhs":   (1, K(u, u_1), ..., K(u, u_r)) with Gaussian kernel
                  K(a, b) = exp(-gamma (a - b)^2) at projection landmarks.
    """

    kind: str
    input_dim: int
    dim: int
    projector: Optional[Projector] = None
    edges: Optional[np.ndarray] = None
    landmarks: Optional[np.ndarray] = None
    gamma: float = 0.0

    def __call__(self, v) -> np.ndarray:
        return self.batch(np.asarray(v, dtype=float)[None, :])[0]

    def batch(self, V) -> np.ndarray:
        """Feature rows for a batch of inputs, shape (n, dim)."""
        V = np.asarray(V, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[1] != self.input_dim:
            raise ValueError(
                f"input has {V.shape[1]} coordinates, map expects {self.input_dim}"
            )
        n = V.shape[0]
        if self.kind == "linear":
            return np.column_stack([np.ones(n), V])
        u = self.projector.apply(V)
        u = np.atleast_1d(u)
        if self.kind == "bins":
            g = np.searchsorted(self.edges, u, side="right")
            out = np.zeros((n, self.dim))
            out[:, 0] = 1.0
            out[np.arange(n), 1 + g] = 1.0
            return out
        if self.kind == "rkhs":
            k = np.exp(-self.gamma * (u[:, None] - self.landmarks[None, :]) ** 2)
            return np.column_stack([np.ones(n), k])
        raise ValueError(f"unknown feature map kind {self.kind!r}")


def build_feature_map(
    kind: str,
    reference,
    n_bins: int = 4,
    n_landmarks: int = 4,
    gamma: float = 0.2,
) -> FeatureMap:
    """Construct a feature map of the given kind from a reference sample.

    Bin edges sit at equally spaced quantiles of the reference projection
    (quartiles for 4 bins); landmarks at quantiles j/(r+1), j = 1..r, which
    for 4 landmarks gives {0.2, 0.4, 0.6, 0.8}.
    """
    R = as_matrix(reference, "reference")
    d = R.shape[1]
    if kind == "linear":
        return FeatureMap(kind="linear", input_dim=d, dim=1 + d)
    proj = build_projector(R)
    u = proj.apply(R)
    if kind == "bins":
        if n_bins < 2:
            raise ValueError("need at least 2 bins")
        qs = np.arange(1, n_bins) / n_bins
        edges = np.quantile(u, qs)
        return FeatureMap(
            kind="bins", input_dim=d, dim=1 + n_bins, projector=proj, edges=edges
        )
    if kind == "rkhs":
        if n_landmarks < 1:
            raise ValueError("need at least 1 landmark")
        if gamma <= 0:
            raise ValueError("gamma must be positive")
        qs = np.arange(1, n_landmarks + 1) / (n_landmarks + 1)
        marks = np.quantile(u, qs)
        return FeatureMap(
            kind="rkhs",
            input_dim=d,
            dim=1 + n_landmarks,
            projector=proj,
            landmarks=marks,
            gamma=gamma,
        )
    raise ValueError(f"unknown feature map kind {kind!r}")


@dataclass(frozen=True)
class ShiftScenario:
    """A fixed instrument tilt, as a weight function of the projection score.

    kinds: "observed" (weight 1), "linear_tilt" (max(1 + 0.95 u, 0.05)),
    "step_tilt" (e for u > 0, else 1), "local_tilt"
    (0.20 + 1.60 exp(-((u - 0.75)/0.35)^2 / 2)).
    """

    kind: str

    KINDS = ("observed", "linear_tilt", "local_tilt", "step_tilt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}")

    def weight(self, u):
        """Raw (unnormalized) weight at projection score(s) u."""
        u = np.asarray(u, dtype=float)
        if self.kind == "observed":
            return np.ones_like(u)
        if self.kind == "linear_tilt":
            return np.maximum(1.0 + 0.95 * u, 0.05)
        if self.kind == "step_tilt":
            return np.where(u > 0, np.e, 1.0)
        return 0.20 + 1.60 * np.exp(-0.5 * ((u - 0.75) / 0.35) ** 2)

    def sup_weight(self, u_lo: float, u_hi: float) -> float:
        """Supremum of the raw weight over the interval [u_lo, u_hi]."""
        if u_lo > u_hi:
            raise ValueError("u_lo must be <= u_hi")
        if self.kind == "observed":
            return 1.0
        if self.kind == "linear_tilt":
            return float(max(1.0 + 0.95 * u_hi, 0.05))
        if self.kind == "step_tilt":
            return float(np.e) if u_hi > 0 else 1.0
        peak = min(max(0.75, u_lo), u_hi)
        return float(self.weight(np.array(peak)))


def scenario_weight(scenario, u):
    """Raw scenario weight(s) at projection score(s) u.

    ``scenario`` may be a :class:`ShiftScenario` or one of its kind names.
    """
    if isinstance(scenario, str):
        scenario = ShiftScenario(scenario)
    return scenario.weight(u)


def normalize_weights(raw) -> np.ndarray:
    """Scale nonnegative weights to sum to one."""
    w = np.asarray(raw, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("no weights to normalize")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return w / total


def weight_bound(scenario: ShiftScenario, u_values, safety: float = 1.05) -> float:
    """Upper bound B on raw scenario weights over the observed u range.

    ``safety`` inflates the analytic supremum to cover test points slightly
    outside the reference range.
    """
    u = np.asarray(u_values, dtype=float).ravel()
    if u.size == 0:
        raise ValueError("need at least one projection score")
    return safety * scenario.sup_weight(float(u.min()), float(u.max()))
