import numpy as np
import pytest

from ivconformal.dgp import (
    DESIGN_IDS,
    design_dims,
    generate_dataset,
    noise_scale_sigma,
    oracle_radius_tau0,
    structural_h0,
)
from ivconformal.rng import RngStream


def test_dims():
    assert design_dims(1) == (1, 1)
    assert design_dims(2) == (3, 1)
    assert design_dims(3) == (3, 3)
    with pytest.raises(ValueError):
        design_dims(4)


def test_structural_function_pinned_values():
    # hand-evaluated from the design definitions
    assert np.isclose(structural_h0(1, np.array([0.5])), 0.898876404494382)
    assert np.isclose(structural_h0(1, np.array([1.0])), 0.0, atol=1e-12)
    assert np.isclose(structural_h0(2, np.array([0.0, 0.0, 0.0])), 0.40)
    assert np.isclose(structural_h0(2, np.array([1.0, -1.0, 2.0])), 0.42501225018903954)
    assert np.isclose(structural_h0(3, np.array([0.5, -0.3, 1.0])), 0.42920042997922886)


def test_noise_scale_pinned_values():
    assert np.isclose(noise_scale_sigma(1, np.array([0.0]), np.array([-1.0])), 0.39)
    assert np.isclose(noise_scale_sigma(1, np.array([1.0]), np.array([1.0])), 0.6284846862904003)
    assert np.isclose(noise_scale_sigma(1, np.array([-0.5]), np.array([0.0])), 0.50)
    assert np.isclose(
        noise_scale_sigma(2, np.array([1.0, -1.0, 2.0]), np.array([0.5])), 0.595
    )
    assert np.isclose(
        noise_scale_sigma(3, np.array([0.5, -0.3, 1.0]), np.array([0.2, -0.4, 0.9])),
        0.4382,
    )


def test_noise_scale_positive_everywhere():
    rng = np.random.default_rng(0)
    for design in DESIGN_IDS:
        d_x, d_z = design_dims(design)
        x = rng.standard_normal((500, d_x)) * 2.0
        z = rng.uniform(-1, 1, size=(500, d_z))
        s = noise_scale_sigma(design, x, z)
        assert np.all(s > 0.2)


@pytest.mark.parametrize("design", DESIGN_IDS)
def test_generated_shapes_and_ranges(design):
    d_x, d_z = design_dims(design)
    data = generate_dataset(design, 400, RngStream(1, 0))
    assert data.n == 400
    assert data.x.shape == (400, d_x)
    assert data.z.shape == (400, d_z)
    assert np.all(data.z >= -1.0) and np.all(data.z <= 1.0)
    assert data.latents is not None


def test_generation_is_deterministic():
    a = generate_dataset(2, 50, RngStream(9, 3))
    b = generate_dataset(2, 50, RngStream(9, 3))
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.z, b.z)


@pytest.mark.parametrize("design", DESIGN_IDS)
def test_instrument_validity_moment(design):
    """E[Y - h0(X) | Z] should vanish: the confounder is mean independent of Z."""
    data = generate_dataset(design, 20000, RngStream(2, design))
    resid = data.y - structural_h0(design, data.x)
    z1 = data.z[:, 0]
    edges = np.quantile(z1, np.linspace(0, 1, 9)[1:-1])
    idx = np.searchsorted(edges, z1, side="right")
    for b in range(8):
        sel = idx == b
        m = resid[sel].mean()
        se = resid[sel].std(ddof=1) / np.sqrt(sel.sum())
        assert abs(m) <= 4.0 * se + 1e-3


def test_regressors_respond_to_instrument():
    # the first stage must have signal, otherwise the designs are useless
    data = generate_dataset(1, 5000, RngStream(3, 0))
    corr = np.corrcoef(np.sin(np.pi * data.z[:, 0]), data.x[:, 0])[0, 1]
    assert corr > 0.7


def test_outcome_noise_is_confounded():
    """Y - h0(X) must correlate with the latent confounder, not just noise."""
    data = generate_dataset(1, 5000, RngStream(4, 0))
    u = data.latents[:, 0]
    resid = data.y - structural_h0(1, data.x)
    assert np.corrcoef(u, resid)[0, 1] > 0.5


def test_oracle_radius_covers_at_level():
    alpha = 0.1
    z = np.array([0.3])
    tau = oracle_radius_tau0(1, z, alpha, n_mc=20000, rng=RngStream(5, 0))
    assert tau > 0
    # fresh draws at the same instrument value: |Y - h0(X)| <= tau about 90%
    gen = RngStream(6, 0).generator()
    n = 20000
    u = gen.standard_normal(n)
    e = gen.standard_normal(n)
    v = gen.standard_normal(n)
    x = 1.05 * np.sin(np.pi * z[0]) + 0.55 * u + 0.12 * e
    xcol = x.reshape(-1, 1)
    sig = noise_scale_sigma(1, xcol, np.full((n, 1), z[0]))
    y_minus_h = 0.55 * u + sig * v
    cover = np.mean(np.abs(y_minus_h) <= tau)
    assert abs(cover - 0.9) < 0.02
