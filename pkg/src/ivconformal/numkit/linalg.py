"""Dense linear algebra wrappers with explicit failure modes."""

import numpy as np

from ..errors import DegenerateColumnError, RankDeficiencyError


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D float64 array with finite entries."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def solve_least_squares(A, b, ridge: float = 0.0) -> np.ndarray:
    """Minimize ||A x - b||^2 + ridge * ||x||^2.

    With ``ridge = 0`` the system must have full column rank; otherwise a
    :class:`RankDeficiencyError` is raised rather than silently returning one
    of the many minimizers.

    :param A: (n, p) design matrix, finite entries.
    :param b: (n,) response vector.
    :param ridge: nonnegative ridge penalty.
    :return: (p,) coefficient vector.
    """
    A = as_matrix(A, "A")
    b = np.asarray(b, dtype=float).ravel()
    if not np.all(np.isfinite(b)):
        raise ValueError("b contains non-finite entries")
    if A.shape[0] != b.shape[0]:
        raise ValueError(f"A has {A.shape[0]} rows but b has {b.shape[0]}")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")

    if ridge == 0.0:
        x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < A.shape[1]:
            raise RankDeficiencyError(
                f"design has rank {rank} < {A.shape[1]} columns and ridge is 0"
            )
        return x

    p = A.shape[1]
    gram = A.T @ A + ridge * np.eye(p)
    return np.linalg.solve(gram, A.T @ b)


def principal_axis(Z) -> np.ndarray:
    """Leading eigenvector of the correlation matrix of the columns of ``Z``.

    The vector has unit length and its largest-magnitude entry is positive,
    which fixes the sign ambiguity deterministically.  A zero-variance column
    makes the correlation matrix undefined and raises
    :class:`DegenerateColumnError`.
    """
    Z = as_matrix(Z, "Z")
    n, d = Z.shape
    if n < 2:
        raise ValueError("need at least 2 rows to compute a principal axis")
    sd = Z.std(axis=0)
    floor = 1e-12 * (1.0 + np.abs(Z.mean(axis=0)))
    if np.any(sd <= floor):
        bad = int(np.argmin(sd - floor))
        raise DegenerateColumnError(f"column {bad} of Z has zero variance")
    W = (Z - Z.mean(axis=0)) / sd
    corr = (W.T @ W) / n
    eigvals, eigvecs = np.linalg.eigh(corr)
    axis = eigvecs[:, -1]
    top = np.argmax(np.abs(axis))
    if axis[top] < 0:
        axis = -axis
    return axis / np.linalg.norm(axis)
