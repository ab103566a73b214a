"""Replication harness: synthetic experiments and weighted evaluation.

One replication draws a dataset (or resplits a fixed one), fits the
structural model on the training split, calibrates every configured method on
the calibration split, and scores intervals on the test split under each
evaluation scenario.  Replications are independent; replication k derives all
its randomness from ``RngStream(seed, k)`` children, with fixed purpose
offsets (0 data draw, 1 split, 2 ratio classifier, 3+ radius models), so any
subset of replications can be reproduced in isolation.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .conformal_exact import ExactCalibrator, compute_scores, conditioning_input
from .conformal_x import (
    estimate_density_ratio,
    learn_radius_x,
    recalibration_cutoff,
)
from .data import DataSet, SplitData
from .dgp import generate_dataset
from .npiv import SieveSpec, fit_sieve_2sls
from .rng import RngStream
from .shifts import (
    ShiftScenario,
    build_feature_map,
    build_projector,
    normalize_weights,
    weight_bound,
)

_PURPOSE_DATA = 0
_PURPOSE_SPLIT = 1
_PURPOSE_RATIO = 2
_PURPOSE_RADIUS_BASE = 3


@dataclass(frozen=True)
class MethodSpec:
    """One interval method: a radius class plus its parameterization.

    ``radius_class``: "xz" or "z" (exact calibration over a shift class) or
    "x" (learned radius field with scenario recalibration).
    ``name``: family for exact classes (linear/bins/rkhs), model kind for the
    "x" class (linear/bins/rkhs/mlp).
    """

    radius_class: str
    name: str
    n_bins: int = 4
    n_landmarks: int = 4
    gamma: float = 0.2

    @property
    def label(self) -> str:
        return f"{self.radius_class}:{self.name}"


@dataclass(frozen=True)
class XPipelineConfig:
    """Hyperparameters of the regressor-indexed route."""

    lam: float = 50.0
    kappa: float = 0.05
    ratio_hidden: Tuple[int, ...] = (32, 32)
    ratio_steps: int = 400
    ratio_lr: float = 0.02
    radius_steps: int = 400
    radius_lr: float = 0.05
    mlp_lr: float = 0.02
    radius_hidden: Tuple[int, ...] = (32, 32)
    n_bins: int = 6
    n_landmarks: int = 4
    gamma: float = 0.2
    bound_safety: float = 1.05


@dataclass(frozen=True)
class RunConfig:
    """Full experiment description; see cli docs for the JSON schema."""

    design: Optional[int] = 1
    csv_path: Optional[str] = None
    alpha: float = 0.1
    n_train: int = 1000
    n_cal: int = 200
    n_test: int = 1000
    n_reps: int = 100
    seed: int = 7
    scenarios: Tuple[str, ...] = (
        "observed",
        "linear_tilt",
        "local_tilt",
        "step_tilt",
    )
    methods: Tuple[MethodSpec, ...] = (MethodSpec("z", "linear"),)
    # interaction columns let the sieve represent cross terms like x1*x3;
    # without them the multivariate designs hit a large approximation bias
    # that roughly doubles interval lengths (scalar-x designs are unaffected)
    sieve: SieveSpec = SieveSpec(interactions=True)
    x_pipeline: XPipelineConfig = XPipelineConfig()
    search_cap_multiplier: float = 10.0


@dataclass(frozen=True)
class ReplicationRecord:
    """Per-replication metrics for one (method, scenario) cell."""

    rep_index: int
    rep_seed: int
    radius_class: str
    family_or_model: str
    scenario: str
    coverage: float
    mean_length: float
    n_unbounded: int


@dataclass(frozen=True)
class AggregateRecord:
    """Across-replication summary for one (method, scenario) cell."""

    radius_class: str
    family_or_model: str
    scenario: str
    n_reps: int
    cov_mean: float
    cov_sd: float
    len_mean: float
    len_sd: float
    n_unbounded_reps: int


def split_dataset(data: DataSet, n_train: int, n_cal: int, n_test: int, rng: RngStream) -> SplitData:
    """Random disjoint train/cal/test split of one dataset."""
    total = n_train + n_cal + n_test
    if min(n_train, n_cal, n_test) < 1:
        raise ValueError("split sizes must be positive")
    if total > data.n:
        raise ValueError(f"split sizes sum to {total} but dataset has {data.n} rows")
    perm = rng.generator().permutation(data.n)
    i1, i2 = n_train, n_train + n_cal
    return SplitData(
        train=data.take(perm[:i1]),
        cal=data.take(perm[i1:i2]),
        test=data.take(perm[i2:total]),
    )


def weighted_metrics(contains, lengths, raw_weights) -> Tuple[float, float, int]:
    """Scenario-weighted coverage and mean length over a test sample.

    Weights are normalized internally; an unbounded interval (infinite
    length) makes the weighted mean length infinite.  Returns
    (coverage, mean_length, n_unbounded).
    """
    c = np.asarray(contains, dtype=float).ravel()
    ell = np.asarray(lengths, dtype=float).ravel()
    p = normalize_weights(raw_weights)
    if not (c.shape == ell.shape == p.shape):
        raise ValueError("contains, lengths, weights must have equal lengths")
    n_unbounded = int(np.sum(np.isinf(ell)))
    coverage = float(p @ c)
    mean_length = math.inf if n_unbounded else float(p @ ell)
    return coverage, mean_length, n_unbounded


def conditional_coverage_check(contains, z, projector, n_bins: int = 8):
    """Coverage within equal-count bins of the instrument projection.

    Returns (edges, per-bin coverage); bins that catch no points report NaN.
    """
    if n_bins < 2:
        raise ValueError("need at least 2 bins")
    c = np.asarray(contains, dtype=float).ravel()
    u = np.atleast_1d(projector.apply(np.asarray(z, dtype=float)))
    edges = np.quantile(u, np.arange(1, n_bins) / n_bins)
    idx = np.searchsorted(edges, u, side="right")
    cov = np.full(n_bins, np.nan)
    for b in range(n_bins):
        mask = idx == b
        if mask.any():
            cov[b] = float(c[mask].mean())
    return edges, cov


def _exact_radii(cal: ExactCalibrator, x_mat: np.ndarray, z_mat: np.ndarray) -> np.ndarray:
    """Radii at given (x, z) rows, caching repeated feature vectors.

    Bin-type maps (and any map that ignores part of its input) produce few
    distinct feature vectors, so the cache collapses most of the work; for
    continuous injective maps it is a no-op.
    """
    raw = conditioning_input(cal.indexing, x_mat, z_mat)
    feats = cal.feature_map.batch(raw)
    radii = np.empty(len(feats))
    cache: Dict[bytes, float] = {}
    for i in range(len(feats)):
        key = feats[i].tobytes()
        r = cache.get(key)
        if r is None:
            r = cal.calibrate_radius(feats[i])
            cache[key] = r
        radii[i] = r
    return radii


def _exact_test_radii(cal: ExactCalibrator, test: DataSet) -> np.ndarray:
    """Radii for every test point of a dataset."""
    return _exact_radii(cal, test.x, test.z)


def run_single_replication(
    config: RunConfig, rep_index: int, fixed_data: Optional[DataSet] = None
) -> List[ReplicationRecord]:
    """All (method, scenario) records for one replication."""
    stream = RngStream(config.seed, rep_index)
    total = config.n_train + config.n_cal + config.n_test
    if fixed_data is not None:
        data = fixed_data
    else:
        data = generate_dataset(config.design, total, stream.child(_PURPOSE_DATA))
    split = split_dataset(
        data, config.n_train, config.n_cal, config.n_test, stream.child(_PURPOSE_SPLIT)
    )
    model = fit_sieve_2sls(split.train, config.sieve)
    scores_cal = compute_scores(model, split.cal)
    centers_test = model.predict(split.test.x)
    abs_err_test = np.abs(split.test.y - centers_test)

    pooled_z = np.vstack([split.train.z, split.cal.z])
    proj_z = build_projector(pooled_z)
    u_pooled = np.atleast_1d(proj_z.apply(pooled_z))
    u_test = np.atleast_1d(proj_z.apply(split.test.z))
    scenarios = [ShiftScenario(k) for k in config.scenarios]

    records: List[ReplicationRecord] = []

    def emit(mspec: MethodSpec, radii: np.ndarray):
        contains = abs_err_test <= radii
        lengths = 2.0 * radii
        for scen in scenarios:
            w = scen.weight(u_test)
            cov, mlen, n_unb = weighted_metrics(contains, lengths, w)
            records.append(
                ReplicationRecord(
                    rep_index=rep_index,
                    rep_seed=stream.stream_id,
                    radius_class=mspec.radius_class,
                    family_or_model=mspec.name,
                    scenario=scen.kind,
                    coverage=cov,
                    mean_length=mlen,
                    n_unbounded=n_unb,
                )
            )

    # exact radius classes
    for mspec in config.methods:
        if mspec.radius_class not in ("xz", "z"):
            continue
        reference = conditioning_input(
            mspec.radius_class,
            np.vstack([split.train.x, split.cal.x]),
            pooled_z,
        )
        fmap = build_feature_map(
            mspec.name,
            reference,
            n_bins=mspec.n_bins,
            n_landmarks=mspec.n_landmarks,
            gamma=mspec.gamma,
        )
        cal = ExactCalibrator.from_data(
            fmap,
            mspec.radius_class,
            split.cal,
            scores_cal,
            config.alpha,
            config.search_cap_multiplier,
        )
        emit(mspec, _exact_test_radii(cal, split.test))

    # regressor-indexed route: shared ratio model, per-kind radius field,
    # per-scenario recalibration
    x_methods = [m for m in config.methods if m.radius_class == "x"]
    if x_methods:
        xp = config.x_pipeline
        half = config.n_cal // 2
        idx_shape = np.arange(half)
        idx_recal = np.arange(half, config.n_cal)
        shape = split.cal.take(idx_shape)
        recal = split.cal.take(idx_recal)
        scores_shape = scores_cal[idx_shape]
        ratio = estimate_density_ratio(
            scores_shape,
            shape.x,
            shape.z,
            rng=stream.child(_PURPOSE_RATIO),
            hidden=xp.ratio_hidden,
            steps=xp.ratio_steps,
            lr=xp.ratio_lr,
        )
        ratio_mat = ratio.ratio_matrix(scores_shape, shape.x, shape.z)
        for k, mspec in enumerate(x_methods):
            lr = xp.mlp_lr if mspec.name == "mlp" else xp.radius_lr
            radius_model = learn_radius_x(
                scores_shape,
                shape.x,
                ratio_mat,
                config.alpha,
                kind=mspec.name,
                lam=xp.lam,
                kappa=xp.kappa,
                steps=xp.radius_steps,
                lr=lr,
                n_bins=xp.n_bins,
                n_landmarks=xp.n_landmarks,
                gamma=xp.gamma,
                hidden=xp.radius_hidden,
                rng=stream.child(_PURPOSE_RADIUS_BASE + k),
            )
            q_test = radius_model.radius_batch(split.test.x)
            for scen in scenarios:
                B = weight_bound(scen, u_pooled, xp.bound_safety)
                cut = recalibration_cutoff(
                    recal, model, radius_model, scen, proj_z, B, config.alpha
                )
                if math.isinf(cut.threshold):
                    radii = np.full(split.test.n, math.inf)
                else:
                    radii = cut.threshold * q_test
                contains = abs_err_test <= radii
                lengths = 2.0 * radii
                w = scen.weight(u_test)
                cov, mlen, n_unb = weighted_metrics(contains, lengths, w)
                records.append(
                    ReplicationRecord(
                        rep_index=rep_index,
                        rep_seed=stream.stream_id,
                        radius_class="x",
                        family_or_model=mspec.name,
                        scenario=scen.kind,
                        coverage=cov,
                        mean_length=mlen,
                        n_unbounded=n_unb,
                    )
                )
    return records


def aggregate_records(records: Sequence[ReplicationRecord]) -> List[AggregateRecord]:
    """Across-replication means/SDs per (method, scenario) cell.

    Cells keep first-appearance order.  A cell with any unbounded replication
    reports infinite mean length and NaN length SD.
    """
    order: List[Tuple[str, str, str]] = []
    groups: Dict[Tuple[str, str, str], List[ReplicationRecord]] = {}
    for r in records:
        key = (r.radius_class, r.family_or_model, r.scenario)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    out = []
    for key in order:
        rs = groups[key]
        cov = np.array([r.coverage for r in rs])
        ln = np.array([r.mean_length for r in rs])
        unb = sum(1 for r in rs if r.n_unbounded > 0)
        if np.any(np.isinf(ln)):
            len_mean, len_sd = math.inf, math.nan
        else:
            len_mean = float(ln.mean())
            len_sd = float(ln.std(ddof=1)) if len(rs) > 1 else 0.0
        out.append(
            AggregateRecord(
                radius_class=key[0],
                family_or_model=key[1],
                scenario=key[2],
                n_reps=len(rs),
                cov_mean=float(cov.mean()),
                cov_sd=float(cov.std(ddof=1)) if len(rs) > 1 else 0.0,
                len_mean=len_mean,
                len_sd=len_sd,
                n_unbounded_reps=unb,
            )
        )
    return out


def run_replications(
    config: RunConfig,
    fixed_data: Optional[DataSet] = None,
    progress=None,
) -> Tuple[List[ReplicationRecord], List[AggregateRecord], List[Tuple[int, str]]]:
    """Run all replications; failures are isolated and reported, not raised.

    Returns (records, aggregates, failures) where failures is a list of
    (rep_index, message).  Raises RuntimeError only if every replication
    failed.
    """
    records: List[ReplicationRecord] = []
    failures: List[Tuple[int, str]] = []
    for rep in range(config.n_reps):
        try:
            records.extend(run_single_replication(config, rep, fixed_data))
        except Exception as exc:  # noqa: BLE001 - isolation is the point
            failures.append((rep, f"{type(exc).__name__}: {exc}"))
        if progress is not None:
            progress(rep + 1, config.n_reps)
    if config.n_reps > 0 and len(failures) == config.n_reps:
        raise RuntimeError(
            f"all {config.n_reps} replications failed; first: {failures[0][1]}"
        )
    return records, aggregate_records(records), failures


def surface_grid(
    config: RunConfig,
    x_min: float,
    x_max: float,
    z_min: float,
    z_max: float,
    steps: int,
    rep_index: int = 0,
    fixed_data: Optional[DataSet] = None,
):
    """Interval endpoints on a rectangular (x, z) grid for one replication.

    Fits the pipeline once (same randomness layout as
    :func:`run_single_replication`) and evaluates every configured method at
    the ``steps`` x ``steps`` grid, x varying slowest.  Regressor-indexed
    methods are recalibrated under the observed instrument law, so their rows
    are flat in z.  Returns (label, x, z, lower, upper) tuples; an unbounded
    radius yields -inf/+inf endpoints.

    Only scalar-x, scalar-z datasets are supported: a grid axis per
    coordinate is meaningless in higher dimension.
    """
    if not (x_min < x_max and z_min < z_max):
        raise ValueError("grid bounds must satisfy x_min < x_max and z_min < z_max")
    if steps < 2:
        raise ValueError("need at least 2 grid steps per axis")
    stream = RngStream(config.seed, rep_index)
    total = config.n_train + config.n_cal + config.n_test
    if fixed_data is not None:
        data = fixed_data
    else:
        data = generate_dataset(config.design, total, stream.child(_PURPOSE_DATA))
    if data.x.shape[1] != 1 or data.z.shape[1] != 1:
        raise ValueError(
            "surface grids need scalar x and z "
            f"(dataset has d_x={data.x.shape[1]}, d_z={data.z.shape[1]})"
        )
    split = split_dataset(
        data, config.n_train, config.n_cal, config.n_test, stream.child(_PURPOSE_SPLIT)
    )
    model = fit_sieve_2sls(split.train, config.sieve)
    scores_cal = compute_scores(model, split.cal)
    pooled_z = np.vstack([split.train.z, split.cal.z])
    proj_z = build_projector(pooled_z)
    u_pooled = np.atleast_1d(proj_z.apply(pooled_z))

    xs = np.linspace(x_min, x_max, steps)
    zs = np.linspace(z_min, z_max, steps)
    x_grid = np.repeat(xs, steps)[:, None]
    z_grid = np.tile(zs, steps)[:, None]
    centers = model.predict(x_grid)

    rows = []
    for mspec in config.methods:
        if mspec.radius_class in ("xz", "z"):
            reference = conditioning_input(
                mspec.radius_class,
                np.vstack([split.train.x, split.cal.x]),
                pooled_z,
            )
            fmap = build_feature_map(
                mspec.name,
                reference,
                n_bins=mspec.n_bins,
                n_landmarks=mspec.n_landmarks,
                gamma=mspec.gamma,
            )
            cal = ExactCalibrator.from_data(
                fmap,
                mspec.radius_class,
                split.cal,
                scores_cal,
                config.alpha,
                config.search_cap_multiplier,
            )
            radii = _exact_radii(cal, x_grid, z_grid)
        else:
            xp = config.x_pipeline
            half = config.n_cal // 2
            shape = split.cal.take(np.arange(half))
            recal = split.cal.take(np.arange(half, config.n_cal))
            scores_shape = scores_cal[:half]
            ratio = estimate_density_ratio(
                scores_shape,
                shape.x,
                shape.z,
                rng=stream.child(_PURPOSE_RATIO),
                hidden=xp.ratio_hidden,
                steps=xp.ratio_steps,
                lr=xp.ratio_lr,
            )
            ratio_mat = ratio.ratio_matrix(scores_shape, shape.x, shape.z)
            lr = xp.mlp_lr if mspec.name == "mlp" else xp.radius_lr
            radius_model = learn_radius_x(
                scores_shape,
                shape.x,
                ratio_mat,
                config.alpha,
                kind=mspec.name,
                lam=xp.lam,
                kappa=xp.kappa,
                steps=xp.radius_steps,
                lr=lr,
                n_bins=xp.n_bins,
                n_landmarks=xp.n_landmarks,
                gamma=xp.gamma,
                hidden=xp.radius_hidden,
                rng=stream.child(_PURPOSE_RADIUS_BASE),
            )
            scen = ShiftScenario("observed")
            B = weight_bound(scen, u_pooled, xp.bound_safety)
            cut = recalibration_cutoff(
                recal, model, radius_model, scen, proj_z, B, config.alpha
            )
            if math.isinf(cut.threshold):
                radii = np.full(len(x_grid), math.inf)
            else:
                radii = cut.threshold * radius_model.radius_batch(x_grid)
        for i in range(len(x_grid)):
            rows.append(
                (
                    mspec.label,
                    float(x_grid[i, 0]),
                    float(z_grid[i, 0]),
                    float(centers[i] - radii[i]),
                    float(centers[i] + radii[i]),
                )
            )
    return rows
