"""Optimal maps recovered from dual potentials.

With psi(x) = min_j c(x, y_j) - v_j, the map is T x = M(grad psi(x), x).
Where the minimizing j is unique, grad psi(x) = grad_x c(x, y_j), and M
inverts that gradient, so T x = y_j.  Points with a tied minimizer stand in
for the non-differentiability set of psi and are flagged, not resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import CostKernel, DomainError, admissibility, inverse_map_M, tangential_gradient
from .sphere import DiscreteMeasure
from .transport import PotentialFn

TIE_TOL = 1e-9


def potential_from_duals(k: CostKernel, Y, v) -> PotentialFn:
    """psi(x) = min_j c(x, y_j) - v_j."""
    v = np.asarray(v, float)
    if not np.all(np.isfinite(v)):
        raise ValueError("dual values must be finite")
    return PotentialFn(k, np.atleast_2d(Y), -v)


def potential_gradient(k: CostKernel, psi: PotentialFn, X, tie_tol: float = TIE_TOL):
    """Tangential gradient of psi at each point of X and a differentiability flag.

    Returns (grad, differentiable, argmin).  Rows where the minimizing anchor
    is tied (or the point sits on its anchor) have grad = NaN.
    """
    X = np.atleast_2d(np.asarray(X, float))
    _, arg, unique = psi.active(X, tie_tol)
    grad = np.full(X.shape, np.nan)
    if unique.any():
        grad[unique] = tangential_gradient(k, X[unique], psi.anchors[arg[unique]])
    return grad, unique, arg


@dataclass
class RecoveredMap:
    points: np.ndarray          # evaluation points
    images: np.ndarray          # T x, NaN at flagged points
    argmin: np.ndarray
    differentiable: np.ndarray
    delta: float
    branch_error: float         # max |M(grad psi(x), x) - y_argmin|
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.nonzero(~self.differentiable)[0]

    @property
    def n_flagged(self) -> int:
        return int(len(self.flagged))

    def rows(self):
        for x, tx, j, ok in zip(self.points, self.images, self.argmin, self.differentiable):
            yield x, tx, int(j), bool(ok)


def recover_map(k: CostKernel, psi: PotentialFn, X, tie_tol: float = TIE_TOL) -> RecoveredMap:
    """Evaluate T x = M(grad psi(x), x) on X.

    Gradients whose squared norm falls outside the range where M is defined
    are flagged along with tied points.
    """
    rep = admissibility(k)
    if not rep.g_monotone:
        raise DomainError(f"kernel {k.name} is not admissible: g is not monotone")
    X = np.atleast_2d(np.asarray(X, float))
    grad, ok, arg = potential_gradient(k, psi, X, tie_tol)
    # zero gradient happens only at the antipode of the active anchor
    r = np.sum(np.where(ok[:, None], grad, 0.0) ** 2, axis=1)
    ok = ok & (r > 0)
    images = np.full(X.shape, np.nan)
    if ok.any():
        images[ok] = inverse_map_M(k, grad[ok], X[ok])
    if ok.any():
        branch = float(np.max(np.linalg.norm(images[ok] - psi.anchors[arg[ok]], axis=1)))
        delta = float(np.min(np.linalg.norm(images[ok] - X[ok], axis=1)))
    else:
        branch, delta = 0.0, math.inf
    return RecoveredMap(X, images, arg, ok, delta, branch)


def inverse_map(k: CostKernel, psi_c: PotentialFn, Y, tie_tol: float = TIE_TOL) -> RecoveredMap:
    """S y = M(grad psi^c(y), y); same rule as ``recover_map`` applied to psi^c."""
    return recover_map(k, psi_c, Y, tie_tol)


def composition_error(T: RecoveredMap, S_of, X=None) -> tuple[float, int]:
    """max |S(T x) - x| over points where both maps are unambiguous.

    ``S_of`` maps an array of points to a RecoveredMap (e.g. a partial of
    ``inverse_map``).  Returns the error and the number of points used.
    """
    ok = T.differentiable
    if not ok.any():
        return 0.0, 0
    S = S_of(T.images[ok])
    both = S.differentiable
    if not both.any():
        return 0.0, 0
    err = np.linalg.norm(S.images[both] - T.points[ok][both], axis=1)
    return float(err.max()), int(both.sum())


@dataclass
class PushforwardReport:
    max_deviation: float
    unmatched_mass: float
    flagged_mass: float
    pushed: np.ndarray

    @property
    def ok(self) -> bool:
        return self.unmatched_mass == 0.0

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation, "unmatched_mass": self.unmatched_mass,
                "flagged_mass": self.flagged_mass}


def verify_pushforward(T: RecoveredMap, mu: DiscreteMeasure, nu: DiscreteMeasure,
                       match_tol: float = 1e-8) -> PushforwardReport:
    """Bin the images of mu's atoms onto nu's atoms and compare masses.

    T must have been evaluated at ``mu.points``.  Flagged atoms are left out
    of the comparison and reported separately.
    """
    if T.points.shape != mu.points.shape or not np.array_equal(T.points, mu.points):
        raise ValueError("map must be evaluated at the source atoms")
    ok = T.differentiable
    pushed = np.zeros(len(nu))
    unmatched = 0.0
    if ok.any():
        img = T.images[ok]
        d = np.linalg.norm(img[:, None, :] - nu.points[None, :, :], axis=2)
        j = np.argmin(d, axis=1)
        hit = d[np.arange(len(j)), j] <= match_tol
        np.add.at(pushed, j[hit], mu.weights[ok][hit])
        unmatched = float(mu.weights[ok][~hit].sum())
    flagged = float(mu.weights[~ok].sum())
    dev = float(np.max(np.abs(pushed - nu.weights))) if flagged == 0 else float(
        np.max(np.maximum(pushed - nu.weights, 0.0)))
    return PushforwardReport(dev, unmatched, flagged, pushed)


def map_to_indices(T: RecoveredMap, nu: DiscreteMeasure, match_tol: float = 1e-8) -> np.ndarray:
    """Target atom index of each image (-1 where flagged or unmatched)."""
    out = np.full(len(T.points), -1)
    ok = T.differentiable
    if ok.any():
        d = np.linalg.norm(T.images[ok][:, None, :] - nu.points[None, :, :], axis=2)
        j = np.argmin(d, axis=1)
        j[d[np.arange(len(j)), j] > match_tol] = -1
        out[ok] = j
    return out
