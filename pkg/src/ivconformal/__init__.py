"""Finite-sample prediction intervals for instrumental-variable regression.

The package fits a sieve two-stage least squares model, then calibrates
interval radii that keep coverage at the nominal level over a user-chosen
class of instrument distribution shifts.  Three radius classes are provided:
joint (x, z) indexing and instrument-only indexing, both with exact
quantile-regression calibration, and a regressor-indexed radius field with
importance-weighted recalibration.
"""

from .conformal_exact import (
    ExactCalibrator,
    MembershipDetail,
    PredictionInterval,
    calibrate_radius,
    compute_scores,
    membership,
    predict_interval,
)
from .conformal_x import (
    DensityRatioModel,
    RadiusModelX,
    RecalibrationCutoff,
    estimate_density_ratio,
    learn_radius_x,
    predict_interval_x,
    recalibration_cutoff,
    weighted_conformal_threshold,
)
from .data import DataSet, SplitData
from .dgp import (
    DESIGN_IDS,
    design_dims,
    generate_dataset,
    noise_scale_sigma,
    oracle_radius_tau0,
    structural_h0,
)
from .errors import (
    ConfigError,
    ConvergenceError,
    DegenerateColumnError,
    DivergenceError,
    NumericsError,
    RankDeficiencyError,
)
from .evalharness import (
    AggregateRecord,
    MethodSpec,
    ReplicationRecord,
    RunConfig,
    XPipelineConfig,
    aggregate_records,
    conditional_coverage_check,
    run_replications,
    run_single_replication,
    split_dataset,
    surface_grid,
    weighted_metrics,
)
from .npiv import SieveSpec, StructuralModel, fit_sieve_2sls, poly_features, predict_h
from .rng import RngStream
from .shifts import (
    FeatureMap,
    Projector,
    ShiftScenario,
    build_feature_map,
    build_projector,
    normalize_weights,
    scenario_weight,
    weight_bound,
)

__version__ = "0.1.0"

__all__ = [
    "AggregateRecord",
    "ConfigError",
    "ConvergenceError",
    "DESIGN_IDS",
    "DataSet",
    "DegenerateColumnError",
    "DensityRatioModel",
    "DivergenceError",
    "ExactCalibrator",
    "FeatureMap",
    "MembershipDetail",
    "MethodSpec",
    "NumericsError",
    "PredictionInterval",
    "Projector",
    "RadiusModelX",
    "RankDeficiencyError",
    "RecalibrationCutoff",
    "ReplicationRecord",
    "RngStream",
    "RunConfig",
    "ShiftScenario",
    "SieveSpec",
    "SplitData",
    "StructuralModel",
    "XPipelineConfig",
    "aggregate_records",
    "build_feature_map",
    "build_projector",
    "calibrate_radius",
    "compute_scores",
    "conditional_coverage_check",
    "design_dims",
    "estimate_density_ratio",
    "fit_sieve_2sls",
    "generate_dataset",
    "learn_radius_x",
    "membership",
    "noise_scale_sigma",
    "normalize_weights",
    "oracle_radius_tau0",
    "poly_features",
    "predict_h",
    "predict_interval",
    "predict_interval_x",
    "recalibration_cutoff",
    "run_replications",
    "run_single_replication",
    "scenario_weight",
    "split_dataset",
    "structural_h0",
    "surface_grid",
    "weight_bound",
    "weighted_conformal_threshold",
    "weighted_metrics",
    "__version__",
]
