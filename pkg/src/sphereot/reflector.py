"""Semi-discrete reflector design with supporting paraboloids.

A reflector for target directions y_i with focal parameters p_i is the
envelope rho(x) = min_i p_i / (1 - x.y_i) of confocal paraboloids (focus at
the origin, axis y_i).  The ray leaving the source in direction x hits the
paraboloid that attains the minimum and is reflected into its axis y_i.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import half_sq_dist
from .sphere import DiscreteMeasure, QuadratureGrid, triangulate, unit

TIE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residuals=None, spec=None):
        super().__init__(msg)
        self.residuals = residuals
        self.spec = spec


@dataclass(frozen=True)
class ReflectorSpec:
    directions: np.ndarray
    focal_params: np.ndarray

    def __post_init__(self):
        d = unit(np.atleast_2d(np.asarray(self.directions, float)))
        p = np.asarray(self.focal_params, float).reshape(-1)
        if len(d) != len(p):
            raise ValueError("one focal parameter per direction")
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise ValueError("focal parameters must be positive and finite")
        object.__setattr__(self, "directions", d)
        object.__setattr__(self, "focal_params", p)

    def __len__(self):
        return len(self.focal_params)

    def scaled(self, s: float) -> "ReflectorSpec":
        return ReflectorSpec(self.directions, self.focal_params * s)

    def to_dict(self) -> dict:
        return {"directions": self.directions.tolist(), "focal_params": self.focal_params.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "ReflectorSpec":
        return cls(np.asarray(data["directions"], float), np.asarray(data["focal_params"], float))


def _log_radii(R: ReflectorSpec, X) -> np.ndarray:
    """log rho_i(x) = log p_i - log(1 - x.y_i), shape (N, K); +inf on the axis point."""
    X = np.atleast_2d(np.asarray(X, float))
    t = half_sq_dist(X[:, None, :], R.directions[None, :, :])
    with np.errstate(divide="ignore"):
        return np.log(R.focal_params)[None, :] - np.log(t)


def envelope_radius(R: ReflectorSpec, X, tie_tol: float = TIE_TOL):
    """Envelope radius rho(x) and the mask of paraboloids attaining it.

    Ties are within relative tolerance ``tie_tol`` on rho.
    """
    L = _log_radii(R, X)
    lmin = L.min(axis=1)
    tied = L <= lmin[:, None] + math.log1p(tie_tol)
    return np.exp(lmin), tied


def reflector_map(R: ReflectorSpec, X, tie_tol: float = TIE_TOL) -> list:
    """Reflected direction indices at each x (a list per point; several on ties)."""
    _, tied = envelope_radius(R, X, tie_tol)
    return [np.nonzero(row)[0].tolist() for row in tied]


@dataclass
class CellDecomposition:
    masses: np.ndarray       # G_i
    members: np.ndarray      # (N, K) boolean, node in cell i
    node_mass: np.ndarray    # I * weight per node

    @property
    def labels(self) -> np.ndarray:
        """Cell index per node, -1 for nodes on a boundary (tied)."""
        lab = np.argmax(self.members, axis=1)
        lab[self.members.sum(axis=1) != 1] = -1
        return lab

    @property
    def total(self) -> float:
        return float(self.node_mass.sum())


def energy_masses(R: ReflectorSpec, grid: QuadratureGrid, intensity=None,
                  tie_tol: float = TIE_TOL) -> CellDecomposition:
    """G_i = sum of I * weight over the nodes whose ray reflects into y_i.

    A node tied between several cells gives each an equal share.
    """
    I = np.ones(len(grid)) if intensity is None else np.asarray(intensity, float)
    if np.any(I < 0):
        raise ValueError("intensity must be nonnegative")
    node_mass = I * grid.weights
    _, tied = envelope_radius(R, grid.nodes, tie_tol)
    share = node_mass / tied.sum(axis=1)
    G = tied.T.astype(float) @ share
    return CellDecomposition(G, tied, node_mass)


@dataclass
class WeakSolution:
    spec: ReflectorSpec
    masses: np.ndarray
    target: np.ndarray
    iterations: int
    residual: float

    def rel_errors(self) -> np.ndarray:
        return (self.masses - self.target) / self.target

    def report_rows(self):
        rel = self.rel_errors()
        for i in range(len(self.target)):
            yield i, self.spec.focal_params[i], self.masses[i], self.target[i], rel[i]


def solve_weak_reflector(targets: DiscreteMeasure, grid: QuadratureGrid, intensity=None, tol: float = 1e-3,
                         max_iter: int = 5000, eta: float = 0.5, cap: float = 0.5) -> WeakSolution:
    """Focal parameters whose cells carry the target masses within ``tol`` (relative).

    Source energy is normalized to 1.  Iterates in log p: a cell with too much
    energy gets a larger focal parameter (its paraboloid moves out) and vice
    versa, by ``eta * clip(rel_err, -cap, cap)``.  The step is an ascent
    direction for the concave functional sum(mu log rho) - sum(nu log p); a
    step that fails to increase it is retried at half length, and successful
    steps let ``eta`` grow back.  The result is normalized so max p_i = 1.
    """
    nu = np.asarray(targets.weights, float)
    if abs(nu.sum() - 1.0) > 1e-10:
        raise ValueError("target measure must be a probability measure")
    if np.any(nu <= 0):
        raise ValueError("every target direction needs positive mass")
    I = np.ones(len(grid)) if intensity is None else np.asarray(intensity, float)
    I = I / float(np.dot(I, grid.weights))
    Y = targets.points
    step0 = eta

    def evaluate(logp):
        spec = ReflectorSpec(Y, np.exp(logp - logp.max()))
        cells = energy_masses(spec, grid, I)
        rho, _ = envelope_radius(spec, grid.nodes)
        phi = float(cells.node_mass @ np.log(rho)) - float(nu @ np.log(spec.focal_params))
        return spec, cells.masses, phi

    logp = np.zeros(len(nu))
    spec, G, phi = evaluate(logp)
    for it in range(max_iter + 1):
        rel = (G - nu) / nu
        res = float(np.max(np.abs(rel)))
        if res <= tol:
            return WeakSolution(spec, G, nu, it, res)
        if it == max_iter or eta < 1e-12:
            break
        trial = logp + eta * np.clip(rel, -cap, cap)
        t_spec, t_G, t_phi = evaluate(trial)
        if t_phi >= phi:
            logp, spec, G, phi = trial - trial.max(), t_spec, t_G, t_phi
            eta = min(1.5 * eta, 4 * step0)
        else:
            eta *= 0.5
    raise ConvergenceError(f"no convergence after {it} iterations (residual {res:.3e})",
                           residuals=rel, spec=spec)


def snell_reflect(x, n) -> np.ndarray:
    """Reflection law y = x - 2 (x.n) n."""
    x = np.asarray(x, float)
    n = np.asarray(n, float)
    return x - 2.0 * np.sum(x * n, axis=-1, keepdims=True) * n


def paraboloid_normal(x, y) -> np.ndarray:
    """Unit normal of the paraboloid with axis y at its point along ray x.

    The surface is F(P) = |P| - P.y - p = 0 and grad F = x - y there.
    """
    n = np.asarray(x, float) - np.asarray(y, float)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


@dataclass
class RayTraceReport:
    n_rays: int
    n_traced: int
    n_tied: int
    max_deviation: float
    max_surface_residual: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def ray_trace_verify(R: ReflectorSpec, rays, tie_tol: float = TIE_TOL) -> RayTraceReport:
    """Reflect each ray off its supporting paraboloid and compare with the reflector map.

    For every ray x with a single supporting paraboloid i, the hit point is
    rho(x) x; the reflected direction must equal y_i.  Tied rays are skipped.
    """
    X = unit(np.atleast_2d(rays))
    rho, tied = envelope_radius(R, X, tie_tol)
    single = tied.sum(axis=1) == 1
    idx = np.argmax(tied, axis=1)[single]
    Xs = X[single]
    Ys = R.directions[idx]
    P = rho[single, None] * Xs
    # hit point lies on paraboloid i: |P| - P.y - p = 0
    surf = np.abs(np.linalg.norm(P, axis=1) - np.sum(P * Ys, axis=1) - R.focal_params[idx])
    refl = snell_reflect(Xs, paraboloid_normal(Xs, Ys))
    dev = np.linalg.norm(refl - Ys, axis=1)
    return RayTraceReport(len(X), int(single.sum()), int((~single).sum()),
                          float(dev.max()) if len(dev) else 0.0,
                          float(surf.max() / R.focal_params.max()) if len(surf) else 0.0)


def radial_surface_normal(x, grad_log_rho) -> np.ndarray:
    """Outward unit normal of the surface rho(x) x given the tangential gradient of log rho."""
    n = np.asarray(x, float) - np.asarray(grad_log_rho, float)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def dual_pair(R: ReflectorSpec, X):
    """u(x) = log rho(x) on X and v_i = -log p_i."""
    rho, _ = envelope_radius(R, X)
    return np.log(rho), -np.log(R.focal_params)


# -- focal function and the position formula ---------------------------------


def _tangent_basis(y) -> np.ndarray:
    y = np.asarray(y, float)
    _, _, vt = np.linalg.svd(y[None, :])
    return vt[1:]


def _log_map(y, Z) -> np.ndarray:
    """Normal coordinates of points Z around y."""
    E = _tangent_basis(y)
    zy = np.clip(Z @ y, -1.0, 1.0)
    th = np.arccos(zy)
    par = Z - zy[:, None] * y[None, :]
    nrm = np.linalg.norm(par, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(nrm[:, None] > 0, par * (th / nrm)[:, None], 0.0)
    return s @ E.T, E


def quasipotential_position(points, values, y, value_at_y: float | None = None) -> np.ndarray:
    """Reflector point r(y) = -grad p(y) - (p(y) - rho(y)) y, rho = (p^2 + |grad p|^2) / 2p.

    The tangential gradient of p at y comes from a least-squares quadratic fit
    to samples (``points``, ``values``) around y in normal coordinates.
    """
    y = unit(np.asarray(y, float))
    Z = unit(np.atleast_2d(points))
    vals = np.asarray(values, float)
    s, E = _log_map(y, Z)
    d = s.shape[1]
    cols = [np.ones(len(s))] + [s[:, a] for a in range(d)]
    cols += [s[:, a] * s[:, b] for a in range(d) for b in range(a, d)]
    A = np.column_stack(cols)
    if len(s) < A.shape[1] or np.linalg.matrix_rank(A) < A.shape[1]:
        raise ValueError("degenerate stencil: cannot fit a quadratic around y")
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    p = coef[0] if value_at_y is None else float(value_at_y)
    if p <= 0:
        raise ValueError("focal function must be positive")
    grad = coef[1:1 + d] @ E
    rho = (p * p + grad @ grad) / (2.0 * p)
    return -grad - (p - rho) * y


def stencil(y, h: float = 1e-3, rings: int = 2, per_ring: int = 8) -> np.ndarray:
    """Points on small circles around y (plus y itself), for finite differences."""
    y = unit(np.asarray(y, float))
    E = _tangent_basis(y)
    pts = [y]
    for r in range(1, rings + 1):
        for k in range(per_ring):
            ang = 2 * math.pi * (k + 0.5 * (r % 2)) / per_ring
            v = math.cos(ang) * E[0] + (math.sin(ang) * E[1] if len(E) > 1 else 0.0)
            if len(E) == 1 and k >= 2:
                break
            if len(E) == 1:
                v = E[0] if k == 0 else -E[0]
            pts.append(math.cos(r * h) * y + math.sin(r * h) * v)
    return np.array(pts)


def focal_function(R: ReflectorSpec, Y, n_grid: int = 20000) -> np.ndarray:
    """Focal parameter of the supporting paraboloid with axis y, for each y.

    p(y) = max_x rho(x) (1 - x.y): grid search followed by an SLSQP polish of
    the max-min form max s, s <= log rho_i(x) + log(1 - x.y), |x| = 1.
    """
    from scipy.optimize import minimize

    from .sphere import fibonacci_nodes

    Y = np.atleast_2d(np.asarray(Y, float))
    dim = Y.shape[1] - 1
    if dim == 2:
        G = fibonacci_nodes(n_grid)
    elif dim == 1:
        t = 2 * np.pi * np.arange(n_grid) / n_grid
        G = np.column_stack((np.cos(t), np.sin(t)))
    else:
        raise ValueError("focal_function supports d = 1, 2")
    logp, Ydir = np.log(R.focal_params), R.directions
    rhoG, _ = envelope_radius(R, G)
    out = np.empty(len(Y))
    for k, y in enumerate(Y):
        with np.errstate(divide="ignore"):
            f = np.log(rhoG) + np.log(half_sq_dist(G, y))
        x0 = G[np.argmax(f)]

        def cons_ineq(z):
            s, x = z[0], z[1:]
            t = 1.0 - Ydir @ x / np.linalg.norm(x)
            ty = 1.0 - y @ x / np.linalg.norm(x)
            return logp - np.log(np.maximum(t, 1e-300)) + np.log(max(ty, 1e-300)) - s

        z0 = np.concatenate([[f.max()], x0])
        res = minimize(lambda z: -z[0], z0, method="SLSQP",
                       constraints=[{"type": "ineq", "fun": cons_ineq},
                                    {"type": "eq", "fun": lambda z: z[1:] @ z[1:] - 1.0}],
                       options={"ftol": 1e-15, "maxiter": 500})
        x = unit(res.x[1:])
        rho_x, _ = envelope_radius(R, x[None, :])
        cand = float(rho_x[0] * half_sq_dist(x, y))
        out[k] = max(cand, float(np.exp(f.max())))
    return out


# -- exports ------------------------------------------------------------------


def mesh_obj(R: ReflectorSpec, nodes, header: str = "") -> str:
    """OBJ text for the surface rho(x) x over ``nodes`` (triangles on S^2, a polygon on S^1)."""
    nodes = unit(np.atleast_2d(nodes))
    rho, _ = envelope_radius(R, nodes)
    V = rho[:, None] * nodes
    faces = triangulate(nodes)
    lines = [f"# {ln}" for ln in header.splitlines()] if header else []
    for v in V:
        lines.append("v " + " ".join(format(c, ".12g") for c in (list(v) + [0.0] * (3 - len(v)))))
    tag = "f" if faces.shape[1] == 3 else "l"
    for f in faces:
        lines.append(tag + " " + " ".join(str(i + 1) for i in f))
    return "\n".join(lines) + "\n"


def parse_obj(text: str):
    V, F = [], []
    for ln in text.splitlines():
        if ln.startswith("v "):
            V.append([float(t) for t in ln.split()[1:]])
        elif ln.startswith(("f ", "l ")):
            F.append([int(t) - 1 for t in ln.split()[1:]])
    return np.array(V), np.array(F)
