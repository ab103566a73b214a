"""Pinball-loss regression as an explicit linear program.

The quantile-regression problem

    minimize (1/m) * sum_i rho_q(s_i - phi_i . beta)

with rho_q(u) = q*max(u, 0) + (1-q)*max(-u, 0) is solved as a dense LP in
standard form.  Residuals are split into nonnegative parts u_i - v_i, giving

    min  q*1'u + (1-q)*1'v   s.t.   Phi beta + u - v = s,  u, v >= 0,

with beta free (split into beta+ - beta-).  The dual multipliers eta live in
the box [q-1, q] and satisfy Phi' eta = 0 at an optimum; they are read off the
final simplex cost row.  Bland's rule keeps the pivoting finite under
degeneracy.

Beyond the one-shot fit, :class:`PinballProgram` keeps its solved tableau so a
single extra observation (feature, score) can be appended and re-optimized in
a few pivots, and the appended score can then be moved with dual-simplex
re-solves.  Both operations return exact LP solutions at the same tolerances
as a cold solve; they only skip redundant work.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError
from .linalg import as_matrix

# LP feasibility / optimality tolerance.
_TOL = 1e-9
# Window for treating ratio-test candidates as tied before Bland tie-breaking.
_RATIO_TIE = 1e-11


@dataclass(frozen=True)
class PinballFit:
    """Solution of one pinball regression.

    ``beta`` are the fitted coefficients, ``duals`` the per-observation LP
    multipliers (in [level_q - 1, level_q]), ``objective`` the mean pinball
    loss at the optimum.
    """

    beta: np.ndarray
    duals: np.ndarray
    level_q: float
    objective: float


def _pivot(T: np.ndarray, basic: np.ndarray, r: int, j: int) -> None:
    piv = T[r] / T[r, j]
    col = T[:, j].copy()
    col[r] = 0.0
    T -= np.outer(col, piv)
    T[r] = piv
    # exact unit column keeps later pricing clean
    T[:, j] = 0.0
    T[r, j] = 1.0
    basic[r] = j


def _primal_simplex(T: np.ndarray, basic: np.ndarray, cap: int) -> int:
    """Bland-rule primal simplex on a feasible tableau; returns pivot count."""
    nrows = T.shape[0] - 1
    it = 0
    while True:
        neg = np.nonzero(T[-1, :-1] < -_TOL)[0]
        if neg.size == 0:
            return it
        j = int(neg[0])
        col = T[:nrows, j]
        pos = np.nonzero(col > _TOL)[0]
        if pos.size == 0:
            raise ConvergenceError("pinball LP claims unboundedness; inputs inconsistent")
        ratios = T[pos, -1] / col[pos]
        rmin = ratios.min()
        tie = pos[ratios <= rmin + _RATIO_TIE * (1.0 + abs(rmin))]
        r = int(tie[np.argmin(basic[tie])])
        _pivot(T, basic, r, j)
        it += 1
        if it > cap:
            raise ConvergenceError(f"simplex iteration cap {cap} exceeded")


def _dual_simplex(T: np.ndarray, basic: np.ndarray, cap: int) -> int:
    """Restore primal feasibility from a dual-feasible tableau."""
    nrows = T.shape[0] - 1
    it = 0
    while True:
        rhs = T[:nrows, -1]
        viol = np.nonzero(rhs < -_TOL)[0]
        if viol.size == 0:
            return it
        r = int(viol[np.argmin(basic[viol])])
        row = T[r, :-1]
        cand = np.nonzero(row < -_TOL)[0]
        if cand.size == 0:
            raise ConvergenceError("dual simplex found no entering column")
        ratios = T[-1, cand] / (-row[cand])
        rmin = ratios.min()
        tie = cand[ratios <= rmin + _RATIO_TIE * (1.0 + abs(rmin))]
        j = int(tie[0])
        _pivot(T, basic, r, j)
        it += 1
        if it > cap:
            raise ConvergenceError(f"dual simplex iteration cap {cap} exceeded")


class PinballProgram:
    """Solved pinball LP over a fixed sample, reusable for augmentation.

    Column layout of the internal tableau: beta+ (d), beta- (d), u (m), v (m),
    then the right-hand side.  The last tableau row is the reduced-cost row.
    """

    def __init__(self, features, scores, level_q: float):
        Phi = as_matrix(features, "features")
        s = np.asarray(scores, dtype=float).ravel()
        if not np.all(np.isfinite(s)):
            raise ValueError("scores contain non-finite entries")
        m, d = Phi.shape
        if m == 0:
            raise ValueError("need at least one observation")
        if s.shape[0] != m:
            raise ValueError(f"{m} feature rows but {s.shape[0]} scores")
        if not 0.0 < level_q < 1.0:
            raise ValueError(f"level_q must be in (0, 1), got {level_q}")

        self.phi = Phi
        self.s = s
        self.level_q = float(level_q)
        self.m = m
        self.d = d
        self._ucol = 2 * d
        self._vcol = 2 * d + m

        ncols = 2 * d + 2 * m
        T = np.zeros((m + 1, ncols + 1))
        sign = np.where(s >= 0.0, 1.0, -1.0)
        T[:m, :d] = sign[:, None] * Phi
        T[:m, d : 2 * d] = -T[:m, :d]
        T[np.arange(m), self._ucol + np.arange(m)] = sign
        T[np.arange(m), self._vcol + np.arange(m)] = -sign
        T[:m, -1] = np.abs(s)

        q = self.level_q
        c = np.zeros(ncols + 1)
        c[self._ucol : self._vcol] = q
        c[self._vcol : ncols] = 1.0 - q
        basic = np.where(s >= 0.0, self._ucol + np.arange(m), self._vcol + np.arange(m))
        cb = np.where(s >= 0.0, q, 1.0 - q)
        T[m] = c - cb @ T[:m]
        T[m, -1] = -(cb @ T[:m, -1])
        # basic columns price at exactly zero
        T[m, basic] = 0.0

        self.T = T
        self.basic = basic.astype(np.int64)
        self.pivots = 0
        self._solved = False

    @property
    def iteration_cap(self) -> int:
        return 50 * (self.m + self.d)

    def solve(self) -> "PinballProgram":
        if not self._solved:
            self.pivots = _primal_simplex(self.T, self.basic, self.iteration_cap)
            self._solved = True
        return self

    def _beta(self) -> np.ndarray:
        beta = np.zeros(self.d)
        for r in range(self.m):
            b = self.basic[r]
            if b < self.d:
                beta[b] += self.T[r, -1]
            elif b < 2 * self.d:
                beta[b - self.d] -= self.T[r, -1]
        return beta

    def fit(self) -> PinballFit:
        """Solve if needed and package the solution."""
        self.solve()
        q = self.level_q
        duals = q - self.T[-1, self._ucol : self._ucol + self.m]
        total = max(0.0, -self.T[-1, -1])
        return PinballFit(
            beta=self._beta(),
            duals=np.asarray(duals),
            level_q=q,
            objective=total / self.m,
        )

    def augmented(self, feature, score: float) -> "AugmentedPinball":
        """Append one observation and re-optimize from the solved basis."""
        self.solve()
        w = np.asarray(feature, dtype=float).ravel()
        if w.shape[0] != self.d:
            raise ValueError(f"feature has length {w.shape[0]}, expected {self.d}")
        if not (np.all(np.isfinite(w)) and np.isfinite(score)):
            raise ValueError("feature/score must be finite")
        return AugmentedPinball(self, w, float(score))


class AugmentedPinball:
    """One extra (feature, score) row appended to a solved pinball LP.

    Exposes the appended observation's dual coordinate and residual, and
    supports moving the appended score in place (dual-simplex re-solve), which
    is what a radius search needs.
    """

    def __init__(self, base: PinballProgram, feature: np.ndarray, score: float):
        m, d = base.m, base.d
        self.m = m + 1  # rows in the augmented problem
        self.d = d
        self.level_q = base.level_q
        self.feature = feature
        self.score = score
        self._ucol = 2 * d
        self._vcol = 2 * d + self.m
        self._unew = self._ucol + m
        self._vnew = self._vcol + m
        q = self.level_q

        ncols = 2 * d + 2 * self.m
        T = np.zeros((self.m + 2, ncols + 1))
        # copy solved base tableau, leaving a zero column for u_new / v_new
        old = base.T
        T[:m, : 2 * d] = old[:m, : 2 * d]
        T[:m, self._ucol : self._unew] = old[:m, base._ucol : base._ucol + m]
        T[:m, self._vcol : self._vnew] = old[:m, base._vcol : base._vcol + m]
        T[:m, -1] = old[:m, -1]
        cost = self.m + 1
        T[cost, : 2 * d] = old[m, : 2 * d]
        T[cost, self._ucol : self._unew] = old[m, base._ucol : base._ucol + m]
        T[cost, self._vcol : self._vnew] = old[m, base._vcol : base._vcol + m]
        T[cost, self._unew] = q
        T[cost, self._vnew] = 1.0 - q
        T[cost, -1] = old[m, -1]

        basic = np.empty(self.m, dtype=np.int64)
        shift = base.basic >= base._vcol
        basic[:m] = base.basic + shift  # v columns move right by one slot

        # new constraint row, reduced against the inherited basis
        a = np.zeros(ncols + 1)
        a[:d] = feature
        a[d : 2 * d] = -feature
        a[self._unew] = 1.0
        a[self._vnew] = -1.0
        a[-1] = score
        for r in range(m):
            b = basic[r]
            if b < 2 * d and a[b] != 0.0:
                a = a - a[b] * T[r]
        if a[-1] < 0.0:
            a = -a
            nb = self._vnew
        else:
            nb = self._unew
        new_row = m
        T[new_row] = a
        basic[new_row] = nb
        cj = T[cost, nb]
        if cj != 0.0:
            T[cost] -= cj * T[new_row]
        T[cost, nb] = 0.0

        self.T = T
        self.basic = basic
        self.iteration_cap = 50 * (self.m + d)
        self.pivots = _primal_simplex(self.T, self.basic, self.iteration_cap)

    def set_score(self, score: float) -> "AugmentedPinball":
        """Move the appended observation's score and re-optimize."""
        if not np.isfinite(score):
            raise ValueError("score must be finite")
        delta = float(score) - self.score
        if delta != 0.0:
            nrows = self.m
            binv_col = self.T[:nrows, self._unew]
            self.T[:nrows, -1] += delta * binv_col
            self.T[-1, -1] -= delta * self.dual_new
            self.score = float(score)
            self.pivots += _dual_simplex(self.T, self.basic, self.iteration_cap)
        return self

    @property
    def dual_new(self) -> float:
        """Dual coordinate of the appended observation."""
        return self.level_q - self.T[-1, self._unew]

    @property
    def residual_new(self) -> float:
        """Appended score minus the fitted value at the appended feature."""
        rows = np.nonzero(self.basic == self._unew)[0]
        if rows.size:
            return float(self.T[rows[0], -1])
        rows = np.nonzero(self.basic == self._vnew)[0]
        if rows.size:
            return -float(self.T[rows[0], -1])
        return 0.0

    def fitted_at_new(self) -> float:
        """Value of the augmented fit at the appended feature."""
        return self.score - self.residual_new

    def beta(self) -> np.ndarray:
        beta = np.zeros(self.d)
        for r in range(self.m):
            b = self.basic[r]
            if b < self.d:
                beta[b] += self.T[r, -1]
            elif b < 2 * self.d:
                beta[b - self.d] -= self.T[r, -1]
        return beta


def fit_pinball_regression(features, scores, level_q: float) -> PinballFit:
    """Fit a pinball regression at quantile level ``level_q``.

    :param features: (m, d) design matrix.
    :param scores: (m,) responses.
    :param level_q: pinball level in (0, 1); the population minimizer of the
        loss is the ``level_q``-quantile of the response.
    :return: :class:`PinballFit` with coefficients, duals and mean loss.
    """
    return PinballProgram(features, scores, level_q).fit()
