"""Discrete Kantorovich transport on the sphere and its c-concavity toolkit.

The solver is an exact network simplex (see ``_simplex``).  Around it sit
the objects used to reason about optimality: c-transforms, c-superdifferentials,
c-cyclical monotonicity checks, chain (Rueschendorf) potentials built from a
monotone pair set, and the slab construction of a transport plan that keeps
every pair a positive distance apart.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ._simplex import OPTIMAL, network_simplex
from .kernels import CostKernel, cost_matrix
from .sphere import DiscreteMeasure

FEAS_TOL = 1e-10
OPT_TOL = 1e-9


class InfeasibleError(ValueError):
    """Source and target masses do not balance."""


class NoFinitePlanError(ValueError):
    """Every coupling puts mass on the diagonal, where the cost is infinite."""


class MonotonicityError(ValueError):
    """A pair set that should be c-cyclically monotone is not."""


class NoSeparatedPlanError(ValueError):
    pass


@dataclass
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray

    def __len__(self):
        return len(self.mass)

    @property
    def pairs(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def dense(self) -> np.ndarray:
        P = np.zeros((len(self.source), len(self.target)))
        np.add.at(P, (self.rows, self.cols), self.mass)
        return P

    def marginal_errors(self) -> tuple[float, float]:
        r = np.bincount(self.rows, self.mass, minlength=len(self.source))
        c = np.bincount(self.cols, self.mass, minlength=len(self.target))
        return float(np.max(np.abs(r - self.source.weights))), float(np.max(np.abs(c - self.target.weights)))

    def total_cost(self, k: CostKernel) -> float:
        c = pair_costs(k, self.source.points[self.rows], self.target.points[self.cols])
        return float(np.dot(self.mass, c))

    def support_points(self):
        return self.source.points[self.rows], self.target.points[self.cols]

    def min_distance(self) -> float:
        x, y = self.support_points()
        return float(np.min(np.linalg.norm(x - y, axis=1))) if len(self) else math.inf

    def is_permutation(self) -> bool:
        return len(set(self.rows.tolist())) == len(self) and len(set(self.cols.tolist())) == len(self)

    def as_map(self) -> np.ndarray:
        """Target index per source atom; only for plans that do not split mass."""
        T = np.full(len(self.source), -1)
        for i, j in zip(self.rows, self.cols):
            if T[i] >= 0:
                raise ValueError(f"source atom {i} is split; plan is not a map")
            T[i] = j
        return T


def pair_costs(k: CostKernel, X, Y) -> np.ndarray:
    from .kernels import cost

    return np.asarray(cost(k, X, Y), dtype=float).reshape(-1)


@dataclass
class DualPotentials:
    u: np.ndarray
    v: np.ndarray

    def value(self, mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
        return float(np.dot(self.u, mu.weights) + np.dot(self.v, nu.weights))

    def max_violation(self, C: np.ndarray) -> float:
        fin = np.isfinite(C)
        S = self.u[:, None] + self.v[None, :] - C
        return float(np.max(S[fin])) if fin.any() else -math.inf


@dataclass
class KantorovichResult:
    plan: TransportPlan
    duals: DualPotentials
    cost: float
    iterations: int = 0
    scale: int | None = None

    def to_dict(self) -> dict:
        return {
            "pairs": [[int(i), int(j), float(w)] for i, j, w in self.plan.pairs],
            "shape": [len(self.plan.source), len(self.plan.target)],
            "cost": self.cost,
            "dual_u": self.duals.u.tolist(),
            "dual_v": self.duals.v.tolist(),
        }

    def to_json(self, **extra) -> str:
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=1, sort_keys=True)


def plan_from_dict(data: dict, mu: DiscreteMeasure, nu: DiscreteMeasure) -> TransportPlan:
    """Rebuild a plan saved by ``KantorovichResult.to_dict`` against mu and nu.

    Raises ValueError when the recorded shape or any index does not fit.
    """
    shape = data.get("shape")
    if shape is not None and list(shape) != [len(mu), len(nu)]:
        raise ValueError(f"plan was built for {shape[0]} x {shape[1]} atoms, got {len(mu)} x {len(nu)}")
    arr = np.asarray(data["pairs"], dtype=float).reshape(-1, 3)
    if len(arr) and (arr[:, 0].min() < 0 or arr[:, 0].max() >= len(mu)
                     or arr[:, 1].min() < 0 or arr[:, 1].max() >= len(nu)):
        raise ValueError("plan indices out of range")
    return TransportPlan(mu, nu, arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2])


def _common_scale(a: np.ndarray, b: np.ndarray, max_den: int = 10**12):
    """Integer D with D*a and D*b integral (and equal totals), or None."""
    den = 1
    for w in np.concatenate([a, b]):
        f = Fraction(float(w)).limit_denominator(10**6)
        if abs(float(f) - w) > 1e-15 * max(1.0, abs(w)):
            f = Fraction(float(w)).limit_denominator(10**12)
            if abs(float(f) - w) > 1e-15 * max(1.0, abs(w)):
                return None
        den = den * f.denominator // math.gcd(den, f.denominator)
        if den > max_den:
            return None
    sa = np.round(a * den)
    sb = np.round(b * den)
    if sa.sum() != sb.sum() or max(sa.sum(), sb.sum()) > 2**52:
        return None
    return den, sa, sb


def solve_kantorovich(k: CostKernel, mu: DiscreteMeasure, nu: DiscreteMeasure, *, C=None,
                      duals: str = "auto", max_iter: int | None = None) -> KantorovichResult:
    """Exact optimal coupling of ``mu`` and ``nu`` for cost ``k``.

    Diagonal pairs (x_i == y_j) are excluded from the arc set.  ``duals``
    selects the reported dual solution: ``"simplex"`` (the basis potentials),
    ``"central"`` (average of all shortest-path vertices of the optimal dual
    face, strictly complementary on nondegenerate problems) or ``"auto"``
    (central when the instance is small enough for an O(N^3) pass).
    """
    if mu.dim != nu.dim:
        raise ValueError("measures live on spheres of different dimension")
    a, b = np.asarray(mu.weights, float), np.asarray(nu.weights, float)
    if abs(a.sum() - b.sum()) > FEAS_TOL:
        raise InfeasibleError(f"mass imbalance {a.sum() - b.sum():.3e}")
    if C is None:
        C = cost_matrix(k, mu.points, nu.points)
    m, n = C.shape
    pos_a, pos_b = a > 0, b > 0
    fin = np.isfinite(C) & pos_a[:, None] & pos_b[None, :]
    rows, cols = np.nonzero(fin)
    arc_cost = C[rows, cols]

    sc = _common_scale(a, b)
    if sc is not None:
        D, sa, sb = sc
        supply = np.concatenate([sa, -sb])
    else:
        D = None
        supply = np.concatenate([a, -b])
    scale_c = max(1.0, float(np.max(np.abs(arc_cost)))) if len(arc_cost) else 1.0
    eps = 1e-13 * scale_c
    if max_iter is None:
        max_iter = 200 * (len(rows) + m + n) + 1000
    flow, tree, piM, piR, status, iters = network_simplex(
        m, n, rows.astype(np.int64), (cols + m).astype(np.int64), arc_cost.astype(float),
        supply.astype(float), eps, max_iter)
    if status != OPTIMAL:
        raise RuntimeError("network simplex hit its iteration limit")

    A = len(rows)
    art = flow[A:]
    total = float(np.abs(supply).sum() / 2)
    if D is not None:
        art_mass = float(art.sum()) / D
    else:
        art_mass = float(art.sum())
    if art_mass > FEAS_TOL * max(1.0, total if D is None else total / D):
        raise NoFinitePlanError("no coupling of finite cost exists (diagonal forced)")

    f = flow[:A]
    keep = f > (0 if D is not None else 1e-15 * total)
    mass = f[keep] / (D if D is not None else 1.0)
    plan = TransportPlan(mu, nu, rows[keep], cols[keep], mass)

    u, v = _repair_duals(C, rows, cols, arc_cost, tree, piR, m, n)
    if duals == "central" or (duals == "auto" and m + n <= 400):
        u, v = central_duals(C, plan, u, v)
    elif duals == "auto" and min(m, n) <= 400:
        u, v = small_side_central_duals(C, plan, u, v)
    elif duals not in ("simplex", "auto"):
        raise ValueError(f"unknown dual mode {duals!r}")
    total_cost = float(np.dot(mass, C[plan.rows, plan.cols]))
    return KantorovichResult(plan, DualPotentials(u, v), total_cost, int(iters), D)


def _repair_duals(C, rows, cols, arc_cost, tree, piR, m, n):
    """Duals for the real arcs only, independent of the artificial phase.

    Tree arcs that are real fix potentials inside each connected piece of the
    final basis; the pieces are then offset against each other by a
    shortest-path pass so that every real arc keeps nonnegative reduced cost.
    """
    N = m + n
    A = len(rows)
    tails = np.concatenate([rows, np.arange(N)])
    heads = np.concatenate([cols + m, np.full(N, N)])
    parent = np.arange(N)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in tree:
        if e < A:
            ra, rb = find(tails[e]), find(heads[e])
            if ra != rb:
                parent[ra] = rb
    comp = np.array([find(x) for x in range(N)])
    _, comp = np.unique(comp, return_inverse=True)
    K = comp.max() + 1
    pi = piR[:N].copy()
    if K > 1:
        ct, ch = comp[rows], comp[cols + m]
        cross = ct != ch
        w = arc_cost[cross] + pi[rows[cross]] - pi[cols[cross] + m]
        ct, ch = ct[cross], ch[cross]
        dist = np.zeros(K)
        for _ in range(K + 1):
            cand = np.full(K, np.inf)
            np.minimum.at(cand, ch, dist[ct] + w)
            new = np.minimum(dist, cand)
            if np.all(new >= dist - 1e-15):
                break
            dist = new
        pi = pi + dist[comp]
    v = pi[m:].copy()
    with np.errstate(invalid="ignore"):
        u = np.min(np.where(np.isfinite(C), C - v[None, :], np.inf), axis=1)
    u = np.where(np.isfinite(u), u, -pi[:m])
    return u, v


def central_duals(C: np.ndarray, plan: TransportPlan, u: np.ndarray, v: np.ndarray):
    """Average the shortest-path vertices of the optimal dual face.

    Works on reduced costs r = C - u - v >= 0.  Arc i -> j carries r_ij for
    each finite cell; each support pair also gets j -> i with weight 0.  The
    shortest distances d_r from every root r are optimal dual shifts; their
    mean leaves slack on any non-support cell not forced tight by a
    zero-cost cycle.
    """
    m, n = C.shape
    N = m + n
    R = C - u[:, None] - v[None, :]
    W = np.full((N, N), np.inf)
    fin = np.isfinite(R)
    W[:m, m:] = np.where(fin, np.maximum(R, 0.0), np.inf)
    W[plan.cols + m, plan.rows] = 0.0
    np.fill_diagonal(W, 0.0)
    for kk in range(N):
        np.minimum(W, W[:, kk, None] + W[None, kk, :], out=W)
    good = np.all(np.isfinite(W), axis=1)
    if not good.any():
        return u, v
    d = W[good].mean(axis=0)
    u2 = u - d[:m]
    v2 = v + d[m:]
    # restore exact feasibility lost to rounding
    with np.errstate(invalid="ignore"):
        u2 = np.minimum(u2, np.min(np.where(fin, C - v2[None, :], np.inf), axis=1))
    return u2, v2


# -- brute-force oracle ---------------------------------------------------


def small_side_central_duals(C: np.ndarray, plan: TransportPlan, u: np.ndarray, v: np.ndarray):
    """Central duals when one side is small (semi-discrete-like instances).

    On the optimal face, the potentials of the smaller side obey difference
    constraints v_i - v_j <= min over support rows x of j of C[x, i] - C[x, j].
    We average the shortest-path solutions of that small system and recover
    the other side by the c-transform.
    """
    m, n = C.shape
    if m < n:
        v2, u2 = small_side_central_duals(
            C.T, TransportPlan(plan.target, plan.source, plan.cols, plan.rows, plan.mass), v, u)
        return u2, v2
    W = np.full((n, n), np.inf)
    for j in range(n):
        S = plan.rows[plan.cols == j]
        if len(S):
            with np.errstate(invalid="ignore"):
                D = C[S] - C[S, j][:, None]
            W[j] = np.min(np.where(np.isfinite(D), D, np.inf), axis=0)
    np.fill_diagonal(W, 0.0)
    for kk in range(n):
        np.minimum(W, W[:, kk, None] + W[None, kk, :], out=W)
    good = np.all(np.isfinite(W), axis=1)
    if not good.any() or np.any(np.diag(W) < 0):
        return u, v
    v2 = W[good].mean(axis=0)
    v2 = v2 - v2.mean() + v.mean()
    with np.errstate(invalid="ignore"):
        u2 = np.min(np.where(np.isfinite(C), C - v2[None, :], np.inf), axis=1)
    return np.where(np.isfinite(u2), u2, u), v2


def brute_force(C: np.ndarray, a=None, b=None) -> float:
    """Optimal cost by enumeration, independent of the simplex code.

    Square problems with uniform equal masses enumerate permutations (the
    vertices of the Birkhoff polytope); anything else enumerates candidate
    bases of the transportation polytope restricted to finite cells.
    """
    C = np.asarray(C, dtype=float)
    m, n = C.shape
    a = np.full(m, 1.0 / m) if a is None else np.asarray(a, float)
    b = np.full(n, 1.0 / n) if b is None else np.asarray(b, float)
    if m == n and np.allclose(a, a[0], rtol=0, atol=1e-15) and np.allclose(b, a[0], rtol=0, atol=1e-15):
        best = math.inf
        perms = np.array(list(itertools.permutations(range(n))))
        for chunk in np.array_split(perms, max(1, len(perms) // 20000)):
            vals = C[np.arange(n)[None, :], chunk].sum(axis=1)
            best = min(best, float(vals.min()))
        if not math.isfinite(best):
            raise NoFinitePlanError("every permutation hits the diagonal")
        return best * a[0]
    return _vertex_enumeration(C, a, b)


def _vertex_enumeration(C, a, b, max_subsets=3_000_000):
    m, n = C.shape
    cells = [(i, j) for i in range(m) for j in range(n) if np.isfinite(C[i, j])]
    Afull = np.zeros((m + n, len(cells)))
    for k, (i, j) in enumerate(cells):
        Afull[i, k] = 1.0
        Afull[m + j, k] = 1.0
    rhs = np.concatenate([a, b])
    r = np.linalg.matrix_rank(Afull)
    if math.comb(len(cells), r) > max_subsets:
        raise ValueError("instance too large for vertex enumeration")
    best = math.inf
    for sub in itertools.combinations(range(len(cells)), r):
        M = Afull[:, sub]
        if np.linalg.matrix_rank(M) < r:
            continue
        x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        if np.any(x < -1e-12) or np.max(np.abs(M @ x - rhs)) > 1e-10:
            continue
        val = sum(x[k] * C[cells[s]] for k, s in enumerate(sub))
        best = min(best, val)
    if not math.isfinite(best):
        raise NoFinitePlanError("no feasible vertex with finite cost")
    return float(best)


# -- Monge functional -----------------------------------------------------


def monge_cost(k: CostKernel, T, mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float = FEAS_TOL) -> float:
    """Cost of the map sending source atom i to target atom T[i]."""
    T = np.asarray(T, dtype=int)
    if T.shape != (len(mu),) or np.any(T < 0) or np.any(T >= len(nu)):
        raise ValueError("T must give a target index for every source atom")
    pushed = np.bincount(T, mu.weights, minlength=len(nu))
    err = float(np.max(np.abs(pushed - nu.weights)))
    if err > tol:
        raise ValueError(f"T does not push mu onto nu (max deviation {err:.3e})")
    c = pair_costs(k, mu.points, nu.points[T])
    return float(np.dot(mu.weights, c))


# -- cyclical monotonicity -------------------------------------------------


@dataclass
class MonotonicityReport:
    monotone: bool
    checked: int
    max_deficit: float
    violation: tuple | None = None  # (pair indices, permutation, deficit)
    sampled: bool = False

    def to_dict(self) -> dict:
        d = {"monotone": self.monotone, "checked": self.checked,
             "max_deficit": self.max_deficit, "sampled": self.sampled}
        if self.violation is not None:
            idx, perm, deficit = self.violation
            d["violation"] = {"pairs": list(map(int, idx)), "permutation": list(map(int, perm)),
                              "deficit": float(deficit)}
        return d


def check_cyclical_monotonicity(k: CostKernel, X, Y, max_n: int = 4, tol: float = OPT_TOL,
                                n_samples: int = 20000, seed: int = 0) -> MonotonicityReport:
    """Test sum c(x_i, y_i) <= sum c(x_i, y_sigma(i)) over tuples of pairs.

    Every subset of size <= min(max_n, 5) is checked against every
    permutation; larger sizes use ``n_samples`` random subsets.  Permuted sums
    that are infinite never count as violations.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    L = len(X)
    Cp = cost_matrix(k, X, Y)
    if np.any(~np.isfinite(np.diag(Cp))):
        raise ValueError("pairs must be off-diagonal")
    diag = np.diag(Cp)
    rng = np.random.default_rng(seed)
    checked = 0
    worst = -math.inf
    first = None
    sampled = False
    for s in range(2, min(max_n, L) + 1):
        perms = np.array([p for p in itertools.permutations(range(s)) if p != tuple(range(s))])
        if s <= 5:
            combos = itertools.combinations(range(L), s)
            total = math.comb(L, s)
        else:
            sampled = True
            total = min(n_samples, math.comb(L, s))
            combos = (tuple(sorted(rng.choice(L, s, replace=False))) for _ in range(total))
        chunk = max(1, 2_000_000 // (len(perms) * s))
        while True:
            sub = np.array(list(itertools.islice(combos, chunk)), dtype=int).reshape(-1, s)
            if len(sub) == 0:
                break
            ident = diag[sub].sum(axis=1)
            permuted = Cp[sub[:, None, :], sub[:, perms]].sum(axis=2)
            with np.errstate(invalid="ignore"):
                deficit = ident[:, None] - permuted
            deficit = np.where(np.isfinite(permuted), deficit, -math.inf)
            checked += deficit.size
            mx = float(deficit.max())
            worst = max(worst, mx)
            if first is None and mx > tol:
                r, c = np.argwhere(deficit > tol)[0]
                first = (tuple(sub[r]), tuple(perms[c]), float(deficit[r, c]))
            if len(sub) < chunk:
                break
    if checked == 0:
        worst = 0.0
    return MonotonicityReport(first is None, checked, worst, first, sampled)


# -- c-concave potentials ---------------------------------------------------


@dataclass
class PotentialFn:
    """psi(x) = min_j c(x, y_j) + lam_j over a finite anchor set."""

    kernel: CostKernel
    anchors: np.ndarray
    lam: np.ndarray
    delta: float | None = None

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, float))
        self.lam = np.asarray(self.lam, float).reshape(-1)
        if len(self.anchors) == 0:
            raise ValueError("potential needs at least one anchor")
        if not np.all(np.isfinite(self.lam)):
            raise ValueError("anchor offsets must be finite")

    def _blocks(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        step = max(1, 4_000_000 // len(self.anchors))
        for s in range(0, len(X), step):
            yield s, cost_matrix(self.kernel, X[s:s + step], self.anchors) + self.lam[None, :]

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        out = np.empty(len(X))
        for s, V in self._blocks(X):
            out[s:s + len(V)] = V.min(axis=1)
        return out

    def active(self, X, tie_tol: float = 1e-9):
        """Value, argmin anchor and a uniqueness flag at each point of X.

        An argmin is unique when the runner-up exceeds the minimum by more
        than ``tie_tol * max(1, |min|)``.
        """
        X = np.atleast_2d(np.asarray(X, float))
        val = np.empty(len(X))
        arg = np.empty(len(X), dtype=int)
        unique = np.empty(len(X), dtype=bool)
        for s, V in self._blocks(X):
            j = np.argmin(V, axis=1)
            best = V[np.arange(len(V)), j]
            if V.shape[1] > 1:
                part = np.partition(V, 1, axis=1)[:, 1]
            else:
                part = np.full(len(V), np.inf)
            with np.errstate(invalid="ignore"):
                gap = part - best
            thr = tie_tol * np.maximum(1.0, np.abs(best))
            sl = slice(s, s + len(V))
            val[sl], arg[sl] = best, j
            unique[sl] = np.isfinite(best) & (~(gap <= thr))
        return val, arg, unique


def c_transform(k: CostKernel, psi: PotentialFn, X) -> PotentialFn:
    """psi^c(y) = min_{x in X} c(x, y) - psi(x), as a potential anchored at X.

    Points of X where psi is infinite are skipped.
    """
    X = np.atleast_2d(np.asarray(X, float))
    vals = psi(X)
    ok = np.isfinite(vals)
    if not ok.any():
        raise ValueError("psi is not finite anywhere on X")
    return PotentialFn(k, X[ok], -vals[ok])


@dataclass
class SuperdifferentialResult:
    pairs: list
    delta: float
    max_violation: float


def superdifferential(k: CostKernel, psi: PotentialFn, X, Y, tol: float = OPT_TOL) -> SuperdifferentialResult:
    """Pairs (x, y) in X x Y with |psi(x) + psi^c(y) - c(x, y)| <= tol.

    psi^c is taken over X.  ``max_violation`` is the largest excess of
    c(x, y) - psi(x) over min_v c(v, y) - psi(v) among returned pairs; it is
    at most 2 * tol.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    px = psi(X)
    C = cost_matrix(k, X, Y)
    with np.errstate(invalid="ignore"):
        G = C - px[:, None]
    G = np.where(np.isfinite(px)[:, None], G, np.inf)
    psic = G.min(axis=0)
    with np.errstate(invalid="ignore"):
        gap = np.abs(px[:, None] + psic[None, :] - C)
    mask = np.isfinite(C) & (gap <= tol)
    ii, jj = np.nonzero(mask)
    pairs = list(zip(ii.tolist(), jj.tolist()))
    if pairs:
        viol = float(np.max(G[ii, jj] - psic[jj]))
        delta = float(np.min(np.linalg.norm(X[ii] - Y[jj], axis=1)))
    else:
        viol, delta = 0.0, math.inf
    return SuperdifferentialResult(pairs, delta, viol)


def chain_potential(k: CostKernel, X, Y, base: int = 0, tol: float = OPT_TOL) -> PotentialFn:
    """c-concave psi whose c-superdifferential contains the pairs (X[i], Y[i]).

    psi(x) = min over chains from the base pair of
    c(x, y_n) + sum c(x_{j+1}, y_j) - sum c(x_j, y_j), computed as
    shortest paths with edge weight w(i -> j) = c(x_j, y_i) - c(x_i, y_i).
    A negative cycle means the pair set is not c-cyclically monotone.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    L = len(X)
    if not 0 <= base < L:
        raise IndexError("base index out of range")
    Cp = cost_matrix(k, X, Y)
    diag = np.diag(Cp).copy()
    if not np.all(np.isfinite(diag)):
        raise ValueError("pairs must be off-diagonal")
    rep = check_cyclical_monotonicity(k, X, Y, max_n=min(3, L), tol=tol)
    if not rep.monotone:
        raise MonotonicityError(f"pair set not c-cyclically monotone: {rep.violation}")
    # W[i, j] = c(x_j, y_i) - c(x_i, y_i)
    W = Cp.T - diag[:, None]
    np.fill_diagonal(W, 0.0)
    D = W.copy()
    for kk in range(L):
        np.minimum(D, D[:, kk, None] + D[None, kk, :], out=D)
    if np.any(np.diag(D) < -tol):
        bad = int(np.argmin(np.diag(D)))
        raise MonotonicityError(f"negative cycle through pair {bad} (weight {D[bad, bad]:.3e})")
    phi = D[base].copy()
    phi[base] = 0.0
    ok = np.isfinite(phi)
    lam = phi[ok] - diag[ok]
    psi = PotentialFn(k, Y[ok], lam)
    return psi


# -- separated coupling -----------------------------------------------------


def _split_lower(idx, mass, z, amount):
    """Split a piece list (sorted by z ascending) into the lowest ``amount`` of mass and the rest."""
    cum = np.cumsum(mass)
    before = cum - mass
    lo_idx, lo_m, lo_z, hi_idx, hi_m, hi_z = [], [], [], [], [], []
    for t in range(len(mass)):
        take = min(max(amount - before[t], 0.0), mass[t])
        if take > 0:
            lo_idx.append(idx[t]); lo_m.append(take); lo_z.append(z[t])
        rest = mass[t] - take
        if rest > 0:
            hi_idx.append(idx[t]); hi_m.append(rest); hi_z.append(z[t])
    mk = lambda a, dt=float: np.asarray(a, dtype=dt)
    return (mk(lo_idx, int), mk(lo_m), mk(lo_z)), (mk(hi_idx, int), mk(hi_m), mk(hi_z))


def _sorted_pieces(idx, mass, z):
    o = np.lexsort((idx, z))
    return idx[o], mass[o], z[o]


def _product(a, b, total):
    ia, ma, _ = a
    ib, mb, _ = b
    r = np.repeat(ia, len(ib))
    c = np.tile(ib, len(ia))
    w = np.outer(ma, mb).reshape(-1) / total
    return r, c, w


def _case_one(mu_p, nu_p, orient):
    """mu pieces below nu pieces along orient * z; pair far halves with near halves."""
    T = float(mu_p[1].sum())
    if T <= 0:
        return []
    mu_s = _sorted_pieces(mu_p[0], mu_p[1], orient * mu_p[2])
    nu_s = _sorted_pieces(nu_p[0], nu_p[1], orient * nu_p[2])
    half = 0.5 * T
    mu_far, mu_near = _split_lower(*mu_s, half)
    nu_near, nu_far = _split_lower(*nu_s, half)
    # product weights use the exact block masses so marginals close up to rounding
    out = []
    for a, b in ((mu_far, nu_near), (mu_near, nu_far)):
        tot = 0.5 * (a[1].sum() + b[1].sum())
        if tot > 0:
            out.append(_product(a, b, tot))
    return out


def separated_plan(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """A coupling of mu and nu whose support stays a positive distance off the diagonal.

    Cut the sphere at a height c with mu[z >= c] = nu[z <= c] = m (atoms at
    the cut are split), then couple the upper part of mu with the lower part
    of nu and vice versa; each block has its two measures on opposite sides
    of the cut and is coupled by pairing far halves with near halves.
    Returns (plan, epsilon) with epsilon the minimal pair distance.
    """
    a, b = mu.weights, nu.weights
    total = a.sum()
    if abs(total - b.sum()) > FEAS_TOL:
        raise InfeasibleError("mass imbalance")
    zm, zn = mu.points[:, -1], nu.points[:, -1]
    levels = np.unique(np.concatenate([zm, zn]))
    m_cut = None
    for L in levels:
        mu_gt, mu_ge = a[zm > L].sum(), a[zm >= L].sum()
        nu_lt, nu_le = b[zn < L].sum(), b[zn <= L].sum()
        lo, hi = max(mu_gt, nu_lt), min(mu_ge, nu_le)
        if lo <= hi + 1e-15:
            m_cut, cut = lo, L
            break
    if m_cut is None:
        raise NoSeparatedPlanError("no balanced cut level found")

    ia, ib = np.arange(len(a)), np.arange(len(b))
    # mu+: everything above the cut plus a share of the atoms at the cut
    mu_pc = _sorted_pieces(ia, a.copy(), zm)
    mu_minus, mu_plus = _split_lower(*mu_pc, total - m_cut)
    nu_pc = _sorted_pieces(ib, b.copy(), zn)
    nu_minus, nu_plus = _split_lower(*nu_pc, m_cut)

    blocks = []
    if mu_plus[1].sum() > 0:
        blocks += _case_one(mu_plus, nu_minus, -1.0)
    if mu_minus[1].sum() > 0:
        blocks += _case_one(mu_minus, nu_plus, +1.0)
    if not blocks:
        raise NoSeparatedPlanError("empty construction")
    r = np.concatenate([x[0] for x in blocks])
    c = np.concatenate([x[1] for x in blocks])
    w = np.concatenate([x[2] for x in blocks])
    key = r * len(b) + c
    uk, inv = np.unique(key, return_inverse=True)
    mass = np.bincount(inv, w)
    keep = mass > 0
    plan = TransportPlan(mu, nu, (uk // len(b))[keep], (uk % len(b))[keep], mass[keep])
    eps = plan.min_distance()
    if not eps > 0:
        raise NoSeparatedPlanError("construction pairs coincident points; mass concentrated at the cut")
    return plan, eps
