"""Series two-stage least squares for instrumental-variable regression.

The structural function is approximated in a polynomial sieve over the
regressors; identification comes from projecting the sieve columns onto a
polynomial basis in the instruments (first stage) and ridge-regressing the
outcome on the projected columns (second stage):

    beta = (Psi' P_Z Psi + ridge I)^{-1} Psi' P_Z y.

Bases are built on per-coordinate standardized inputs; standardization
constants come from the training sample only.
"""

from dataclasses import dataclass

import numpy as np

from .data import DataSet
from .errors import DegenerateColumnError
from .numkit import as_matrix, solve_least_squares


@dataclass(frozen=True)
class SieveSpec:
    """Basis and regularization choices for the sieve fit."""

    degree_x: int = 3
    degree_z: int = 3
    interactions: bool = False
    ridge: float = 1e-6

    def __post_init__(self):
        if self.degree_x < 1 or self.degree_z < 1:
            raise ValueError("polynomial degrees must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def poly_features(V, degree: int, interactions: bool = False) -> np.ndarray:
    """Additive per-coordinate power basis with intercept.

    Columns: 1, then v_j, v_j^2, ..., v_j^degree for each coordinate j in
    order; with ``interactions`` the pairwise products v_i * v_j (i < j) are
    appended.
    """
    V = as_matrix(V, "V")
    n, d = V.shape
    cols = [np.ones(n)]
    for j in range(d):
        vj = V[:, j]
        p = vj.copy()
        for _ in range(degree):
            cols.append(p.copy())
            p = p * vj
    if interactions:
        for i in range(d):
            for j in range(i + 1, d):
                cols.append(V[:, i] * V[:, j])
    return np.column_stack(cols)


@dataclass
class StructuralModel:
    """Fitted sieve model: predicts the structural function at new x."""

    spec: SieveSpec
    beta: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray

    def predict(self, x) -> np.ndarray:
        """Structural predictions; accepts one row (d,) or a batch (n, d)."""
        arr = np.asarray(x, dtype=float)
        one = arr.ndim == 1
        if one:
            arr = arr[None, :]
        if arr.shape[1] != self.x_mean.shape[0]:
            raise ValueError(
                f"x has {arr.shape[1]} coordinates, model expects {self.x_mean.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("x contains non-finite entries")
        std = (arr - self.x_mean) / self.x_scale
        pred = poly_features(std, self.spec.degree_x, self.spec.interactions) @ self.beta
        return pred[0] if one else pred


def _standardize_train(M: np.ndarray, name: str):
    mean = M.mean(axis=0)
    scale = M.std(axis=0)
    # relative threshold: a column whose spread is at rounding level of its
    # magnitude is constant for all practical purposes
    floor = 1e-12 * (1.0 + np.abs(mean))
    if np.any(scale <= floor):
        bad = int(np.argmin(scale - floor))
        raise DegenerateColumnError(f"column {bad} of {name} has zero variance")
    return (M - mean) / scale, mean, scale


def fit_sieve_2sls(train: DataSet, spec: SieveSpec = SieveSpec()) -> StructuralModel:
    """Fit the structural function on a training split.

    :param train: training rows (y, x, z).
    :param spec: sieve degrees, interaction flag and ridge strength.
    :return: :class:`StructuralModel` ready for prediction.
    """
    if train.n < 2:
        raise ValueError("need at least 2 training rows")
    x_std, x_mean, x_scale = _standardize_train(train.x, "x")
    z_std, _, _ = _standardize_train(train.z, "z")
    psi = poly_features(x_std, spec.degree_x, spec.interactions)
    phi_z = poly_features(z_std, spec.degree_z, spec.interactions)
    # first stage: orthogonal projection of each sieve column onto the
    # instrument basis (least-squares is rank-safe via the pseudoinverse)
    coef, *_ = np.linalg.lstsq(phi_z, psi, rcond=None)
    psi_hat = phi_z @ coef
    beta = solve_least_squares(psi_hat, train.y, ridge=spec.ridge)
    return StructuralModel(spec=spec, beta=beta, x_mean=x_mean, x_scale=x_scale)


def predict_h(model: StructuralModel, x) -> np.ndarray:
    """Functional alias for :meth:`StructuralModel.predict`."""
    return model.predict(x)
