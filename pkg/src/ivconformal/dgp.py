"""Synthetic designs with endogenous regressors and known structure.

Three designs share the template: instruments Z uniform on [-1, 1], a latent
confounder U entering both the regressors and the outcome, independent
regressor noise E, and heteroscedastic outcome noise sigma(X, Z) * V with
standard normal V.  The structural function h0 and sigma are exposed so
oracle quantities (ideal radii, conditional moments) can be computed directly.

Latent columns stored on generated datasets, in order:
  design 1: (u, e, v)
  design 2: (u1, u2, u3, e1, e2, e3, v)
  design 3: (u1, u2, u3, e1, e2, e3, v)
"""

import numpy as np

from .data import DataSet
from .rng import RngStream

DESIGN_IDS = (1, 2, 3)


def _check_design(design_id: int) -> None:
    if design_id not in DESIGN_IDS:
        raise ValueError(f"design_id must be one of {DESIGN_IDS}, got {design_id}")


def design_dims(design_id: int):
    """(d_x, d_z) for a design."""
    _check_design(design_id)
    return {1: (1, 1), 2: (3, 1), 3: (3, 3)}[design_id]


def structural_h0(design_id: int, x) -> np.ndarray:
    """True structural function, vectorized over rows of x."""
    _check_design(design_id)
    arr = np.asarray(x, dtype=float)
    one = arr.ndim == 1
    if one:
        arr = arr[None, :]
    d_x, _ = design_dims(design_id)
    if arr.shape[1] != d_x:
        raise ValueError(f"design {design_id} expects d_x={d_x}, got {arr.shape[1]}")
    if design_id == 1:
        x1 = arr[:, 0]
        h = np.sin(np.pi * x1) / (1.0 + 0.45 * x1**2)
    elif design_id == 2:
        x1, x2, x3 = arr[:, 0], arr[:, 1], arr[:, 2]
        h = np.sin(x1) + 0.45 * x2**2 - 0.35 * x1 * x3 + 0.40 * np.cos(x3)
    else:
        x1, x2, x3 = arr[:, 0], arr[:, 1], arr[:, 2]
        h = (
            0.60 * np.sin(x1)
            + 0.38 * x2**2
            - 0.25 * x1 * x3
            + 0.48 * np.cos(x3)
            + 0.18 * x1 * x2
        )
    return float(h[0]) if one else h


def noise_scale_sigma(design_id: int, x, z) -> np.ndarray:
    """Heteroscedastic outcome noise scale sigma(x, z) > 0, vectorized."""
    _check_design(design_id)
    xa = np.asarray(x, dtype=float)
    za = np.asarray(z, dtype=float)
    one = xa.ndim == 1
    if one:
        xa = xa[None, :]
        za = za[None, :] if za.ndim == 1 else za
    if za.ndim == 1:
        za = za[:, None]
    d_x, d_z = design_dims(design_id)
    if xa.shape[1] != d_x or za.shape[1] != d_z:
        raise ValueError(
            f"design {design_id} expects d_x={d_x}, d_z={d_z}; "
            f"got {xa.shape[1]}, {za.shape[1]}"
        )
    if design_id == 1:
        x1, z1 = xa[:, 0], za[:, 0]
        s = (
            0.35
            + 0.10 * np.abs(x1)
            + 0.12 * (z1 + 1.0) / 2.0
            + 0.08 / (1.0 + np.exp(-x1 * z1))
        )
    elif design_id == 2:
        x1, x2, x3 = xa[:, 0], xa[:, 1], xa[:, 2]
        z1 = za[:, 0]
        s = (
            0.32
            + 0.08 * np.abs(x1)
            + 0.07 * x2**2
            + 0.10 * (z1 + 1.0) / 2.0
            + 0.05 * np.maximum(x3 * z1, 0.0)
        )
    else:
        x1, x2, x3 = xa[:, 0], xa[:, 1], xa[:, 2]
        z1, z2, z3 = za[:, 0], za[:, 1], za[:, 2]
        s = (
            0.30
            + 0.03 * (x1**2 + x2**2)
            + 0.07 * np.maximum(x3, 0.0)
            + 0.07 * (z1 + 1.0) / 2.0
            + 0.05 * (z2 * z3 + 1.0) / 2.0
        )
    return float(s[0]) if one else s


def _regressors(design_id: int, z: np.ndarray, u: np.ndarray, e: np.ndarray) -> np.ndarray:
    if design_id == 1:
        return 1.05 * np.sin(np.pi * z[:, [0]]) + 0.55 * u + 0.12 * e
    if design_id == 2:
        z1 = z[:, 0]
        x1 = np.sin(np.pi * z1) + 0.50 * u[:, 0] + 0.10 * e[:, 0]
        x2 = z1**2 - 1.0 / 3.0 + 0.42 * u[:, 1] + 0.10 * e[:, 1]
        x3 = np.cos(np.pi * z1) + 0.24 * (u[:, 0] + u[:, 2]) + 0.10 * e[:, 2]
        return np.column_stack([x1, x2, x3])
    z1, z2, z3 = z[:, 0], z[:, 1], z[:, 2]
    x1 = np.sin(np.pi * (z1 + 0.30 * z2)) + 0.42 * u[:, 0] + 0.10 * e[:, 0]
    x2 = z2 * z3 + 0.25 * z1**2 + 0.40 * u[:, 1] + 0.10 * e[:, 1]
    x3 = np.cos(np.pi * z3) + 0.22 * z1 - 0.18 * z2 + 0.28 * (u[:, 0] + u[:, 2]) + 0.10 * e[:, 2]
    return np.column_stack([x1, x2, x3])


def _confound(design_id: int, u: np.ndarray) -> np.ndarray:
    if design_id == 1:
        return 0.55 * u[:, 0]
    if design_id == 2:
        return 0.40 * u[:, 0] - 0.30 * u[:, 1] + 0.22 * u[:, 2]
    return 0.36 * u[:, 0] - 0.24 * u[:, 1] + 0.18 * u[:, 2]


def _n_latent_u(design_id: int) -> int:
    return 1 if design_id == 1 else 3


def generate_dataset(design_id: int, n: int, rng: RngStream) -> DataSet:
    """Draw n rows from a design; latents are retained on the dataset.

    Outcomes satisfy E[Y - h0(X) | Z] = 0 by construction (confounder and
    noise are independent of Z).
    """
    _check_design(design_id)
    if n < 1:
        raise ValueError("n must be positive")
    gen = rng.generator()
    _, d_z = design_dims(design_id)
    ku = _n_latent_u(design_id)
    z = gen.uniform(-1.0, 1.0, size=(n, d_z))
    u = gen.standard_normal(size=(n, ku))
    e = gen.standard_normal(size=(n, ku))
    v = gen.standard_normal(size=n)
    x = _regressors(design_id, z, u, e)
    eps = _confound(design_id, u) + noise_scale_sigma(design_id, x, z) * v
    y = structural_h0(design_id, x) + eps
    latents = np.column_stack([u, e, v])
    return DataSet(y=y, x=x, z=z, latents=latents)


def oracle_radius_tau0(
    design_id: int, z, alpha: float, n_mc: int, rng: RngStream
) -> float:
    """Ideal (1 - alpha)-radius at a fixed instrument value by simulation.

    Draws fresh latents at the given z, forms the structural residual
    Y - h0(X), and returns the empirical (1 - alpha)-quantile of its
    absolute value.
    """
    _check_design(design_id)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if n_mc < 10:
        raise ValueError("n_mc too small for a quantile estimate")
    gen = rng.generator()
    _, d_z = design_dims(design_id)
    zrow = np.asarray(z, dtype=float).ravel()
    if zrow.shape[0] != d_z:
        raise ValueError(f"design {design_id} expects d_z={d_z}")
    zz = np.tile(zrow, (n_mc, 1))
    ku = _n_latent_u(design_id)
    u = gen.standard_normal(size=(n_mc, ku))
    e = gen.standard_normal(size=(n_mc, ku))
    v = gen.standard_normal(size=n_mc)
    x = _regressors(design_id, zz, u, e)
    eps = _confound(design_id, u) + noise_scale_sigma(design_id, x, zz) * v
    return float(np.quantile(np.abs(eps), 1.0 - alpha))
