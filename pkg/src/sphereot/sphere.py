"""Geometry of the unit sphere S^d embedded in R^{d+1}.

Points are always stored in ambient coordinates; nothing here uses angles
except the d=1 grid generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

GEOM_TOL = 1e-12
MASS_TOL = 1e-12


def unit(v) -> np.ndarray:
    """Return ``v`` (shape (..., d+1)) renormalized onto the sphere."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] < 2:
        raise ValueError("points on S^d need at least 2 ambient coordinates (d >= 1)")
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cannot normalize the zero vector")
    return v / n


def tangential_project(y, x) -> np.ndarray:
    """Orthogonal projection of ``y`` onto the tangent space at ``x``: y - (x.y) x."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    return y - xy * x


def geodesic(x, v, s) -> np.ndarray:
    """Point at arclength ``s`` along the great circle through ``x`` with tangent ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    nv = np.linalg.norm(v)
    if nv == 0:
        return x.copy()
    e = v / nv
    return math.cos(s) * x + math.sin(s) * e


def sphere_area(d: int) -> float:
    """Surface measure |S^d| = 2 pi^{(d+1)/2} / Gamma((d+1)/2)."""
    return 2.0 * math.pi ** ((d + 1) / 2) / math.gamma((d + 1) / 2)


def random_tangent(x, rng) -> np.ndarray:
    v = rng.standard_normal(np.shape(x))
    v = tangential_project(v, x)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud on S^d.

    Points closer than ``GEOM_TOL`` are merged on construction by adding their
    weights, so supports are canonical.
    """

    points: np.ndarray
    weights: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        pts = unit(np.atleast_2d(np.asarray(self.points, dtype=float)))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(pts) != len(w):
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        pts, w = _merge_duplicates(pts, w)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1] - 1)

    def __len__(self):
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def normalized(self) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights / self.total_mass)

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = np.atleast_2d(points)
        return cls(pts, np.full(len(pts), 1.0 / len(pts)))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "weights": self.weights.tolist(),
        }

    def to_json(self) -> str:
        pts = ",".join("[" + ",".join(_num(c) for c in p) + "]" for p in self.points)
        ws = ",".join(_num(w) for w in self.weights)
        return f'{{"dim": {self.dim}, "points": [{pts}], "weights": [{ws}]}}'

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteMeasure":
        m = cls(np.asarray(data["points"], dtype=float), np.asarray(data["weights"], dtype=float))
        if "dim" in data and int(data["dim"]) != m.dim:
            raise ValueError(f"declared dim {data['dim']} but points live on S^{m.dim}")
        return m

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMeasure":
        return cls.from_dict(json.loads(text))


def _num(x: float) -> str:
    # 17 significant digits: exact float round trip
    return format(float(x), ".16e")


def _merge_duplicates(pts: np.ndarray, w: np.ndarray):
    n = len(pts)
    if n < 2:
        return pts.copy(), w.copy()
    order = np.argsort(pts[:, 0], kind="stable")
    group = np.arange(n)
    for a in range(n):
        i = order[a]
        if group[i] != i:
            continue
        b = a + 1
        while b < n and pts[order[b], 0] - pts[i, 0] <= GEOM_TOL:
            j = order[b]
            if group[j] == j and np.max(np.abs(pts[j] - pts[i])) <= GEOM_TOL:
                group[j] = i
            b += 1
    roots = group == np.arange(n)
    if roots.all():
        return pts.copy(), w.copy()
    # keep the lowest original index of each group as representative
    rep = np.full(n, n)
    np.minimum.at(rep, group, np.arange(n))
    first = rep[group]
    keep = np.unique(first)
    out_w = np.zeros(n)
    np.add.at(out_w, first, w)
    return pts[keep], out_w[keep]


def slab_mass(m: DiscreteMeasure, a: float, b: float) -> float:
    """Mass of ``m`` in the slab S(a, b) = {a <= x_{d+1} <= b}."""
    if not (-1.0 <= a <= b <= 1.0):
        raise ValueError(f"invalid slab [{a}, {b}]; need -1 <= a <= b <= 1")
    z = m.points[:, -1]
    return float(np.sum(m.weights[(z >= a) & (z <= b)]))


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    @property
    def dim(self) -> int:
        return self.nodes.shape[1] - 1

    def __len__(self):
        return len(self.weights)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def as_measure(self, intensity=None) -> DiscreteMeasure:
        """Atom cloud with mass ``intensity * weight`` per node, normalized to 1."""
        I = np.ones(len(self)) if intensity is None else np.asarray(intensity, dtype=float)
        w = I * self.weights
        return DiscreteMeasure(self.nodes, w / w.sum())


def fibonacci_nodes(n: int) -> np.ndarray:
    k = np.arange(n, dtype=float) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    golden = (1.0 + 5.0 ** 0.5) / 2.0
    theta = 2.0 * np.pi * k / golden
    return np.column_stack((r * np.cos(theta), r * np.sin(theta), z))


def make_grid(kind: str, n: int, seed: int = 0, dim: int = 2) -> QuadratureGrid:
    """Equal-weight quadrature grid on S^dim.

    ``fibonacci`` is the spherical Fibonacci lattice on S^2 (equispaced
    angles on S^1); ``random_uniform`` draws i.i.d. uniform nodes with
    ``numpy.random.default_rng(seed)``.
    """
    if n < 4:
        raise ValueError("need n >= 4 quadrature nodes")
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if kind == "fibonacci":
        if dim == 1:
            t = 2.0 * np.pi * (np.arange(n) + 0.5) / n
            nodes = np.column_stack((np.cos(t), np.sin(t)))
        elif dim == 2:
            nodes = fibonacci_nodes(n)
        else:
            raise ValueError(f"fibonacci grid supports dim 1 or 2, got {dim}")
    elif kind == "random_uniform":
        rng = np.random.default_rng(seed)
        nodes = unit(rng.standard_normal((n, dim + 1)))
    else:
        raise ValueError(f"unknown grid kind {kind!r}")
    w = np.full(n, sphere_area(dim) / n)
    return QuadratureGrid(nodes, w, kind)


def triangulate(nodes: np.ndarray) -> np.ndarray:
    """Faces of the sphere grid: triangles (d=2) or polygon edges (d=1).

    Face vertices are oriented so the normal points away from the origin.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape[1] == 2:
        order = np.argsort(np.arctan2(nodes[:, 1], nodes[:, 0]))
        return np.column_stack((order, np.roll(order, -1)))
    if nodes.shape[1] != 3:
        raise ValueError("triangulation only for d = 1 or 2")
    from scipy.spatial import ConvexHull

    faces = ConvexHull(nodes).simplices.copy()
    a, b, c = nodes[faces[:, 0]], nodes[faces[:, 1]], nodes[faces[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces
