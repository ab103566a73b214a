"""Regressor-indexed radii with shift-aware learning and exact recalibration.

The radius is a positive function of x alone, learned on a shape split by
minimizing mean radius plus a penalty that pushes the (smoothed) conditional
coverage moment toward zero under instrument reweighting:

    Qhat = (1/M) sum_j [ (1/m) sum_i psi_kappa(tau(x_i) - s_i) rhat_ij ]^2,

where rhat_ij estimates the conditional density ratio p(s, x | z_j) / p(s, x)
and psi_kappa(u) = sigmoid(u / kappa) - (1 - alpha).  A disjoint
recalibration split then sets a scale cutoff with importance weights for one
target tilt, which restores a finite-sample coverage guarantee for that tilt
regardless of how well the shape step worked.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .conformal_exact import PredictionInterval
from .data import DataSet
from .nn import (
    MlpParams,
    init_mlp,
    mlp_forward_batch,
    mlp_output_gradient,
    pack_params,
    train_mlp,
    unpack_params,
)
from .numkit import adam_minimize
from .rng import RngStream
from .shifts import FeatureMap, Projector, ShiftScenario, build_feature_map

RATIO_CLIP = (1e-3, 1e3)


def _sigmoid(t):
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(t):
    return np.logaddexp(0.0, np.asarray(t, dtype=float))


def _softplus_inv(y: float) -> float:
    """Inverse of softplus on (0, inf): log(exp(y) - 1)."""
    if y <= 0:
        raise ValueError("softplus inverse needs a positive argument")
    if y > 30.0:  # exp overflow region; softplus is identity there
        return y
    return float(np.log(np.expm1(y)))


# ---------------------------------------------------------------------------
# density ratio estimation
# ---------------------------------------------------------------------------


@dataclass
class _FoldClassifier:
    params: MlpParams
    mean: np.ndarray
    scale: np.ndarray
    log_prior: float  # log(n_neg / n_pos)


@dataclass
class DensityRatioModel:
    """Cross-fitted classifier estimate of p(s, x | z) / p(s, x).

    ``fold_of[i]`` says which fold row i belonged to during training; ratios
    for that row must come from a classifier trained on the other folds.
    """

    fold_of: np.ndarray
    classifiers: List[_FoldClassifier]

    def _odds(self, clf: _FoldClassifier, inputs: np.ndarray) -> np.ndarray:
        std = (inputs - clf.mean) / clf.scale
        logit = mlp_forward_batch(clf.params, std) + clf.log_prior
        return np.exp(np.clip(logit, -50.0, 50.0))

    def ratio(self, s: float, x, z, row_fold: int) -> float:
        """Ratio at one (s, x, z), using the out-of-fold classifier."""
        x = np.asarray(x, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        inp = np.concatenate([[s], x, z])[None, :]
        clf = self.classifiers[1 - row_fold]
        return float(self._odds(clf, inp)[0])

    def ratio_matrix(self, s, X, Z_eval) -> np.ndarray:
        """Matrix rhat[i, j] = ratio(s_i, x_i, z_eval_j), cross-fitted by row.

        Rows must be the training rows (same order as ``fold_of``).
        """
        s = np.asarray(s, dtype=float).ravel()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = np.atleast_2d(np.asarray(Z_eval, dtype=float))
        m, M = s.shape[0], Z.shape[0]
        out = np.empty((m, M))
        sx = np.column_stack([s, X])
        for fold in np.unique(self.fold_of):
            rows = np.nonzero(self.fold_of == fold)[0]
            clf = self.classifiers[1 - int(fold)]
            # all (row, eval-z) combinations for this fold in one batch
            rep_sx = np.repeat(sx[rows], M, axis=0)
            tile_z = np.tile(Z, (rows.size, 1))
            odds = self._odds(clf, np.hstack([rep_sx, tile_z]))
            out[rows] = odds.reshape(rows.size, M)
        return out


def estimate_density_ratio(
    scores,
    x,
    z,
    rng: RngStream,
    hidden: Sequence[int] = (32, 32),
    steps: int = 400,
    lr: float = 0.02,
    n_folds: int = 2,
) -> DensityRatioModel:
    """Fit the conditional density ratio by contrastive classification.

    Per fold, positives are the observed (s, x, z) rows and negatives the
    same rows with the z column replaced by a random permutation (product of
    marginals).  A logistic MLP separates them; prior-corrected odds estimate
    the joint-to-product ratio, which equals p(s, x | z) / p(s, x).  Rows are
    evaluated with the classifier trained on the other fold.
    """
    s = np.asarray(scores, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(x, dtype=float))
    Z = np.atleast_2d(np.asarray(z, dtype=float))
    m = s.shape[0]
    if X.shape[0] != m or Z.shape[0] != m:
        raise ValueError("scores, x, z must have matching row counts")
    if n_folds != 2:
        raise ValueError("only 2-fold cross-fitting is supported")
    if m < 2 * n_folds:
        raise ValueError(f"need at least {2 * n_folds} rows, got {m}")
    gen = rng.generator()
    perm = gen.permutation(m)
    fold_of = np.zeros(m, dtype=int)
    fold_of[perm[m // 2 :]] = 1

    classifiers = []
    for fold in range(n_folds):
        rows = np.nonzero(fold_of == fold)[0]
        sx = np.column_stack([s[rows], X[rows]])
        zperm = Z[rows][gen.permutation(rows.size)]
        pos = np.hstack([sx, Z[rows]])
        neg = np.hstack([sx, zperm])
        inputs = np.vstack([pos, neg])
        labels = np.concatenate([np.ones(rows.size), np.zeros(rows.size)])
        mean = inputs.mean(axis=0)
        scale = inputs.std(axis=0)
        scale[scale <= 0] = 1.0
        params = train_mlp(
            (inputs - mean) / scale,
            labels,
            hidden=hidden,
            loss="logistic",
            steps=steps,
            lr=lr,
            rng=rng.child(fold),
        )
        classifiers.append(
            _FoldClassifier(params=params, mean=mean, scale=scale, log_prior=0.0)
        )
    return DensityRatioModel(fold_of=fold_of, classifiers=classifiers)


# ---------------------------------------------------------------------------
# shape objective
# ---------------------------------------------------------------------------


def surrogate_psi(u, kappa: float, alpha: float):
    """Smoothed coverage moment: sigmoid(u / kappa) - (1 - alpha)."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return _sigmoid(np.asarray(u, dtype=float) / kappa) - (1.0 - alpha)


def objective_Q(tau_values, scores, ratio_matrix, kappa: float, alpha: float) -> float:
    """Mean squared reweighted surrogate-coverage moment.

    ``ratio_matrix[i, j]`` is the density ratio for shape row i at evaluation
    instrument j; entries are clipped to ``RATIO_CLIP`` before use.
    """
    tau = np.asarray(tau_values, dtype=float).ravel()
    s = np.asarray(scores, dtype=float).ravel()
    R = np.clip(np.asarray(ratio_matrix, dtype=float), *RATIO_CLIP)
    m, M = R.shape
    if tau.shape[0] != m or s.shape[0] != m:
        raise ValueError("tau/scores length must match ratio_matrix rows")
    psi = surrogate_psi(tau - s, kappa, alpha)
    A = psi @ R / m  # (M,)
    return float(np.mean(A**2))


def radius_loss_and_raw_gradient(raw, scores, ratio_matrix, lam, kappa, alpha):
    """Penalized objective mean(tau) + lam * Qhat and its raw-field gradient.

    ``raw`` holds the pre-softplus radius values at the shape rows; the
    gradient returned is with respect to those values, so any radius
    parameterization can chain through it.
    """
    r = np.asarray(raw, dtype=float).ravel()
    s = np.asarray(scores, dtype=float).ravel()
    R = np.clip(np.asarray(ratio_matrix, dtype=float), *RATIO_CLIP)
    m, M = R.shape
    if r.shape[0] != m or s.shape[0] != m:
        raise ValueError("raw/scores length must match ratio_matrix rows")
    tau = _softplus(r)
    sp_prime = _sigmoid(r)
    t = (tau - s) / kappa
    sig = _sigmoid(t)
    psi = sig - (1.0 - alpha)
    psi_prime = sig * (1.0 - sig) / kappa
    A = psi @ R / m  # (M,)
    value = float(tau.mean()) + lam * float(A @ A) / M
    grad = sp_prime * (1.0 / m + lam * (2.0 / (M * m)) * psi_prime * (R @ A))
    return value, grad


# ---------------------------------------------------------------------------
# radius models over x
# ---------------------------------------------------------------------------


@dataclass
class RadiusModelX:
    """Positive radius field over x: softplus of a raw regression output."""

    kind: str  # "linear" | "bins" | "rkhs" | "mlp"
    feature_map: Optional[FeatureMap] = None
    theta: Optional[np.ndarray] = None
    mlp: Optional[MlpParams] = None
    x_mean: Optional[np.ndarray] = None
    x_scale: Optional[np.ndarray] = None

    def raw_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "mlp":
            return mlp_forward_batch(self.mlp, (X - self.x_mean) / self.x_scale)
        return self.feature_map.batch(X) @ self.theta

    def radius_batch(self, X) -> np.ndarray:
        """Radii q(x) > 0 for rows of X."""
        return _softplus(self.raw_batch(X))

    def radius(self, x) -> float:
        return float(self.radius_batch(np.asarray(x, dtype=float)[None, :])[0])


def learn_radius_x(
    scores,
    x,
    ratio_matrix,
    alpha: float,
    kind: str = "linear",
    lam: float = 50.0,
    kappa: float = 0.05,
    steps: int = 400,
    lr: float = 0.05,
    n_bins: int = 6,
    n_landmarks: int = 4,
    gamma: float = 0.2,
    hidden: Sequence[int] = (32, 32),
    rng: Optional[RngStream] = None,
) -> RadiusModelX:
    """Learn the radius field by penalized mean-radius minimization.

    Minimizes mean_i tau(x_i) + lam * Qhat(tau) with tau = softplus(raw model)
    via full-batch Adam; analytic gradients throughout.

    :param scores: (m,) shape-split scores.
    :param x: (m, d) shape-split regressors (also the feature-map reference).
    :param ratio_matrix: (m, M) cross-fitted density ratios at evaluation
        instruments; clipped to ``RATIO_CLIP`` internally.
    :param kind: radius parameterization; "bins"/"rkhs" build their projection
        on the shape regressors, "mlp" standardizes them.
    """
    s = np.asarray(scores, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(x, dtype=float))
    m = s.shape[0]
    R = np.clip(np.asarray(ratio_matrix, dtype=float), *RATIO_CLIP)
    if R.shape[0] != m or X.shape[0] != m:
        raise ValueError("scores, x, ratio_matrix must have matching row counts")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if lam < 0 or kappa <= 0:
        raise ValueError("lam must be >= 0 and kappa > 0")
    M = R.shape[1]

    # start the radius field at the (1 - alpha) score quantile: the surrogate
    # penalty only has gradient where tau is within ~kappa of a score, so a
    # scale-free start would leave large-score points unreachable
    raw0 = _softplus_inv(max(float(np.quantile(s, 1.0 - alpha)), 1e-3))

    if kind == "mlp":
        x_mean = X.mean(axis=0)
        x_scale = X.std(axis=0)
        x_scale = np.where(x_scale <= 0, 1.0, x_scale)
        Xs = (X - x_mean) / x_scale
        sizes = [X.shape[1]] + list(hidden) + [1]
        theta0 = pack_params(init_mlp(sizes, rng if rng is not None else RngStream(0, 0)))
        theta0[-1] = raw0  # output bias
    elif kind in ("linear", "bins", "rkhs"):
        fmap = build_feature_map(
            kind, X, n_bins=n_bins, n_landmarks=n_landmarks, gamma=gamma
        )
        F = fmap.batch(X)
        theta0 = np.zeros(F.shape[1])
        theta0[0] = raw0  # intercept column
    else:
        raise ValueError(f"unknown radius model kind {kind!r}")

    def grad(theta):
        # chain rule: raw-field gradient, then back through the parameterization
        if kind == "mlp":
            p = unpack_params(theta, sizes)
            raw = mlp_forward_batch(p, Xs)
        else:
            raw = F @ theta
        _, coef = radius_loss_and_raw_gradient(raw, s, R, lam, kappa, alpha)
        if kind == "mlp":
            return mlp_output_gradient(p, Xs, coef)
        return F.T @ coef

    theta = adam_minimize(grad, theta0, steps=steps, lr=lr)

    if kind == "mlp":
        return RadiusModelX(
            kind="mlp",
            mlp=unpack_params(theta, sizes),
            x_mean=x_mean,
            x_scale=x_scale,
        )
    return RadiusModelX(kind=kind, feature_map=fmap, theta=theta)


# ---------------------------------------------------------------------------
# weighted recalibration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecalibrationCutoff:
    """Scale cutoff for normalized scores under one target tilt."""

    threshold: float  # may be +inf
    alpha: float
    bound_B: float


def recalibration_cutoff(
    recal: DataSet,
    model,
    radius_model: RadiusModelX,
    scenario: ShiftScenario,
    projector: Projector,
    B: float,
    alpha: float,
) -> RecalibrationCutoff:
    """Smallest t with weighted coverage mass of {R_i <= t} at least 1 - alpha.

    R_i = |y_i - h(x_i)| / q(x_i); weights are the raw scenario weights at the
    recalibration instruments, and B must upper-bound the raw weight over the
    target distribution (same scale as the weights).  If even total mass
    falls short, the cutoff is +inf.
    """
    pred = model.predict(recal.x)
    q = radius_model.radius_batch(recal.x)
    R = np.abs(recal.y - pred) / q
    w = scenario.weight(projector.apply(recal.z))
    threshold = weighted_conformal_threshold(R, w, B, alpha)
    return RecalibrationCutoff(threshold=threshold, alpha=alpha, bound_B=B)


def weighted_conformal_threshold(ratios, weights, B: float, alpha: float) -> float:
    """First order statistic whose leading weight mass reaches 1 - alpha.

    The denominator adds B, the weight budget reserved for an unseen test
    point, so the rule stays valid under any shift whose raw weight never
    exceeds B.  Returns +inf when the observed mass cannot reach the target.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if B <= 0:
        raise ValueError("B must be positive")
    R = np.asarray(ratios, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if R.shape != w.shape or R.size == 0:
        raise ValueError("ratios and weights must be equal-length and nonempty")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    order = np.argsort(R, kind="stable")
    cum = np.cumsum(w[order])
    denom = float(w.sum()) + B
    hits = np.nonzero(cum / denom >= 1.0 - alpha)[0]
    if hits.size == 0:
        return math.inf
    return float(R[order][hits[0]])


def predict_interval_x(
    model, radius_model: RadiusModelX, cutoff: RecalibrationCutoff, x
) -> PredictionInterval:
    """Interval h(x) +- t * q(x) at one test point."""
    x = np.asarray(x, dtype=float).ravel()
    center = float(np.asarray(model.predict(x)).reshape(-1)[0])
    if math.isinf(cutoff.threshold):
        return PredictionInterval(center=center, radius=math.inf)
    return PredictionInterval(
        center=center, radius=cutoff.threshold * radius_model.radius(x)
    )
