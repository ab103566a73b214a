"""Exact conformal calibration over a finite-dimensional shift class.

A candidate radius s is accepted at a test feature w when the appended
observation's dual coordinate in the augmented pinball regression (level
1 - alpha over calibration scores plus the candidate) stays strictly below
1 - alpha.  The dual coordinate is nondecreasing in s, so the calibrated
radius is the supremum of accepted candidates, located by a bracketed
binary search.  Ties at the threshold are rejected, and the dual decision is
intersected with the primal check s <= fitted value at w; disagreements fall
to the conservative (reject) side.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .numkit import PinballProgram
from .numkit.pinball import AugmentedPinball
from .shifts import FeatureMap

# absolute slack for the dual threshold and the primal cross-check
_DUAL_TIE = 1e-9
_PRIMAL_SLACK = 1e-8
# bisection stopping width; tighter than strictly required so that radii
# inherit the exact translation behavior of the underlying LP
_BISECT_TOL = 1e-8


@dataclass(frozen=True)
class PredictionInterval:
    """Closed interval center +- radius; radius may be +inf."""

    center: float
    radius: float

    def __post_init__(self):
        if not np.isfinite(self.center):
            raise ValueError("interval center must be finite")
        if math.isnan(self.radius) or self.radius < 0:
            raise ValueError("radius must be nonnegative (or +inf)")

    @property
    def lower(self) -> float:
        return self.center - self.radius

    @property
    def upper(self) -> float:
        return self.center + self.radius

    @property
    def length(self) -> float:
        return 2.0 * self.radius

    def contains(self, y: float) -> bool:
        return abs(y - self.center) <= self.radius


@dataclass(frozen=True)
class MembershipDetail:
    """Diagnostics for one membership query."""

    dual_new: float
    fitted_at_new: float
    dual_ok: bool
    primal_ok: bool
    accepted: bool


def compute_scores(model, data) -> np.ndarray:
    """Absolute residual scores |y - h(x)| on a dataset split."""
    pred = model.predict(data.x)
    return np.abs(data.y - pred)


class ExactCalibrator:
    """Calibration state for one shift class on one calibration split.

    :param feature_map: class feature map (first component constant 1).
    :param indexing: "z" (features of the instrument) or "xz" (features of
        the concatenated regressor-instrument vector).
    :param features: (m, d) calibration feature rows, phi applied already.
    :param scores: (m,) nonnegative calibration scores.
    :param alpha: miscoverage level in (0, 1).
    :param search_cap_multiplier: radius search cap as a multiple of the
        largest calibration score.
    """

    def __init__(
        self,
        feature_map: FeatureMap,
        indexing: str,
        features,
        scores,
        alpha: float,
        search_cap_multiplier: float = 10.0,
    ):
        if indexing not in ("z", "xz"):
            raise ValueError(f"indexing must be 'z' or 'xz', got {indexing!r}")
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {alpha}")
        if search_cap_multiplier <= 1.0:
            raise ValueError("search_cap_multiplier must exceed 1")
        F = np.asarray(features, dtype=float)
        s = np.asarray(scores, dtype=float).ravel()
        if F.ndim != 2:
            raise ValueError("features must be 2-D")
        m, d = F.shape
        if m < d:
            raise ValueError(f"need at least d={d} calibration rows, got {m}")
        if not np.allclose(F[:, 0], 1.0):
            raise ValueError("first feature component must be the constant 1")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite and nonnegative")
        if s.shape[0] != m:
            raise ValueError(f"{m} feature rows but {s.shape[0]} scores")
        self.feature_map = feature_map
        self.indexing = indexing
        self.features = F
        self.scores = s
        self.alpha = float(alpha)
        self.search_cap_multiplier = float(search_cap_multiplier)
        self.level_q = 1.0 - self.alpha
        self.program = PinballProgram(F, s, self.level_q).solve()

    @classmethod
    def from_data(
        cls,
        feature_map: FeatureMap,
        indexing: str,
        data,
        scores,
        alpha: float,
        search_cap_multiplier: float = 10.0,
    ) -> "ExactCalibrator":
        """Build from a calibration split, applying the feature map."""
        raw = conditioning_input(indexing, data.x, data.z)
        return cls(
            feature_map,
            indexing,
            feature_map.batch(raw),
            scores,
            alpha,
            search_cap_multiplier,
        )

    def feature_of(self, x, z) -> np.ndarray:
        """Feature vector for one test point under this calibrator's indexing."""
        x = np.asarray(x, dtype=float).ravel()
        z = np.asarray(z, dtype=float).ravel()
        v = np.concatenate([x, z]) if self.indexing == "xz" else z
        return self.feature_map(v)

    def _classify(self, aug: AugmentedPinball) -> MembershipDetail:
        eta = aug.dual_new
        fitted = aug.fitted_at_new()
        dual_ok = eta < self.level_q - _DUAL_TIE
        primal_ok = aug.score <= fitted + _PRIMAL_SLACK
        return MembershipDetail(
            dual_new=eta,
            fitted_at_new=fitted,
            dual_ok=dual_ok,
            primal_ok=primal_ok,
            accepted=dual_ok and primal_ok,
        )

    def membership_detail(self, test_feature, s: float) -> MembershipDetail:
        """Full diagnostics for one candidate score at one feature."""
        if s < 0:
            raise ValueError("candidate score must be nonnegative")
        aug = self.program.augmented(np.asarray(test_feature, dtype=float), s)
        return self._classify(aug)

    def membership(self, test_feature, s: float) -> bool:
        """Is candidate score s accepted into the prediction set at w?"""
        return self.membership_detail(test_feature, s).accepted

    def calibrate_radius(self, test_feature) -> float:
        """Largest accepted candidate score at the feature (may be +inf).

        Binary search over [0, cap] with cap = search_cap_multiplier * max
        calibration score; membership at the cap reports an unbounded radius.
        The bracket midpoint is replaced by the augmented fit's value at the
        test feature whenever that value falls strictly inside the bracket,
        which homes in on the exact acceptance boundary in few steps; bracket
        validity (lo accepted, hi rejected) is maintained throughout, so the
        result matches plain bisection to within the stopping width.
        """
        w = np.asarray(test_feature, dtype=float).ravel()
        smax = float(self.scores.max())
        cap = self.search_cap_multiplier * smax
        if cap <= 0.0:
            cap = 1e-6
        aug = self.program.augmented(w, cap)
        det = self._classify(aug)
        if det.accepted:
            return math.inf
        proposal = det.fitted_at_new
        aug.set_score(0.0)
        if not self._classify(aug).accepted:
            return 0.0
        lo, hi = 0.0, cap
        prefer_proposal = True
        while hi - lo > _BISECT_TOL:
            if (
                prefer_proposal
                and proposal is not None
                and lo + _BISECT_TOL < proposal < hi - _BISECT_TOL
            ):
                mid = proposal
            elif proposal is not None and proposal <= lo + _BISECT_TOL and lo + _BISECT_TOL < hi:
                # rejected fit pinned the boundary at the accepted end: one
                # confirming query collapses the bracket
                mid = lo + _BISECT_TOL
            else:
                mid = 0.5 * (lo + hi)
            prefer_proposal = not prefer_proposal
            aug.set_score(mid)
            det = self._classify(aug)
            if det.accepted:
                lo = mid
                proposal = None
            else:
                hi = mid
                if mid - det.fitted_at_new <= _PRIMAL_SLACK:
                    # candidate sits on the augmented fit: this is the
                    # acceptance boundary if the next point below is accepted
                    probe = mid - _BISECT_TOL
                    if probe > lo:
                        aug.set_score(probe)
                        if self._classify(aug).accepted:
                            return mid
                        hi = probe
                    proposal = None
                else:
                    proposal = det.fitted_at_new
        return 0.5 * (lo + hi)

    def predict_interval(self, model, x, z) -> PredictionInterval:
        """Interval centered at the structural prediction at x."""
        center = float(model.predict(np.asarray(x, dtype=float)))
        radius = self.calibrate_radius(self.feature_of(x, z))
        return PredictionInterval(center=center, radius=radius)


def conditioning_input(indexing: str, x, z) -> np.ndarray:
    """Rows fed to the feature map: z alone, or (x, z) concatenated."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if z.ndim == 1:
        z = z[:, None]
    if indexing == "z":
        return z
    if indexing == "xz":
        return np.hstack([x, z])
    raise ValueError(f"indexing must be 'z' or 'xz', got {indexing!r}")


def membership(cal: ExactCalibrator, test_feature, s: float) -> bool:
    """Functional alias for :meth:`ExactCalibrator.membership`."""
    return cal.membership(test_feature, s)


def calibrate_radius(cal: ExactCalibrator, test_feature) -> float:
    """Functional alias for :meth:`ExactCalibrator.calibrate_radius`."""
    return cal.calibrate_radius(test_feature)


def predict_interval(model, cal: ExactCalibrator, x, z, indexing: str) -> PredictionInterval:
    """Interval at one test point; ``indexing`` must match the calibrator."""
    if indexing != cal.indexing:
        raise ValueError(
            f"indexing {indexing!r} does not match calibrator ({cal.indexing!r})"
        )
    return cal.predict_interval(model, x, z)
