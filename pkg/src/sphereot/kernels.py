"""Costs of the form c(x, y) = l(|x - y|^2 / 2) on the sphere.

A kernel carries l, l', l''.  From them we get the tangential gradient of the
cost, the admissibility function g(t) = t (2 - t) l'(t)^2 and the map M that
inverts the gradient: M(grad_x c(x, y), x) = y.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sphere import tangential_project


class DomainError(ValueError):
    """Argument outside the domain where a cost-derived map is defined."""


def _log_l(t):
    with np.errstate(divide="ignore"):
        return -np.log(t)


@dataclass(frozen=True)
class CostKernel:
    name: str
    l: Callable
    l_prime: Callable
    l_second: Callable
    # closed forms, optional
    g_closed: Callable | None = field(default=None, repr=False)
    g_inv_closed: Callable | None = field(default=None, repr=False)

    def __str__(self):
        return self.name


def log_kernel() -> CostKernel:
    """The reflector cost -log(1 - x.y) = -log(|x - y|^2 / 2)."""
    return CostKernel(
        name="log",
        l=_log_l,
        l_prime=lambda t: -1.0 / t,
        l_second=lambda t: 1.0 / (t * t),
        g_closed=lambda t: (2.0 - t) / t,
        g_inv_closed=lambda r: 2.0 / (1.0 + r),
    )


def power_kernel(q: float) -> CostKernel:
    """l(t) = t^(-q).  Only q > 0 satisfies the blow-up condition at 0."""
    q = float(q)
    if q == 0:
        raise ValueError("power kernel needs q != 0")

    def l(t):
        with np.errstate(divide="ignore"):
            return np.power(t, -q)

    return CostKernel(
        name=f"power:{q:g}",
        l=l,
        l_prime=lambda t: -q * np.power(t, -q - 1.0),
        l_second=lambda t: q * (q + 1.0) * np.power(t, -q - 2.0),
    )


def kernel_from_name(name: str) -> CostKernel:
    """Parse ``"log"`` or ``"power:q"``."""
    name = name.strip()
    if name == "log":
        return log_kernel()
    if name.startswith("power:"):
        try:
            q = float(name.split(":", 1)[1])
        except ValueError as e:
            raise ValueError(f"bad power exponent in kernel name {name!r}") from e
        return power_kernel(q)
    raise ValueError(f"unknown kernel {name!r}; expected 'log' or 'power:q'")


def half_sq_dist(x, y) -> np.ndarray:
    """t = |x - y|^2 / 2, which equals 1 - x.y on the sphere."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return 0.5 * np.sum(d * d, axis=-1)


def cost(k: CostKernel, x, y) -> np.ndarray | float:
    """c(x, y) with +inf exactly on the diagonal.  Broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = half_sq_dist(x, y)
    same = np.all(x == y, axis=-1)
    with np.errstate(divide="ignore", over="ignore"):
        c = np.where(same | (t == 0), np.inf, k.l(np.where(t == 0, 1.0, t)))
    if np.any(np.isnan(c)):
        raise FloatingPointError("NaN cost")
    return float(c) if np.ndim(c) == 0 else c


def cost_matrix(k: CostKernel, X, Y) -> np.ndarray:
    """Matrix C[i, j] = c(X[i], Y[j])."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return np.asarray(cost(k, X[:, None, :], Y[None, :, :]))


def tangential_gradient(k: CostKernel, x, y) -> np.ndarray:
    """Gradient on the sphere of x -> c(x, y): -l'(t) (y - (x.y) x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = half_sq_dist(x, y)
    if np.any(t == 0):
        raise DomainError("cost is not differentiable on the diagonal x = y")
    lp = np.asarray(k.l_prime(t))
    return -lp[..., None] * tangential_project(y, x)


def g_value(k: CostKernel, t):
    """g(t) = t (2 - t) l'(t)^2."""
    t = np.asarray(t, dtype=float)
    if k.g_closed is not None:
        return k.g_closed(t)
    with np.errstate(over="ignore"):
        lp = k.l_prime(t)
        return t * (2.0 - t) * lp * lp


def g_derivative(k: CostKernel, t):
    t = np.asarray(t, dtype=float)
    with np.errstate(over="ignore"):
        lp = k.l_prime(t)
        return (2.0 - 2.0 * t) * lp * lp + 2.0 * t * (2.0 - t) * lp * k.l_second(t)


def _g_bracket(k: CostKernel):
    lo, hi = 1e-300, 2.0
    # shrink lo until g is finite there
    g_lo = g_value(k, lo)
    while not np.isfinite(g_lo):
        lo *= 1e10
        g_lo = g_value(k, lo)
    return lo, hi


def g_inverse(k: CostKernel, r, *, closed_form: bool = True):
    """Solve g(t) = r for t in (0, 2].

    Uses the closed form when the kernel provides one, else bisection run to
    full float resolution (relies on g being monotone on (0, 2]).
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r_arr)) or np.any(r_arr < 0):
        raise DomainError("g^{-1} needs finite r >= 0")
    if closed_form and k.g_inv_closed is not None:
        t = k.g_inv_closed(r_arr)
        return float(t) if t.ndim == 0 else t
    lo, hi = _g_bracket(k)
    g_lo, g_hi = float(g_value(k, lo)), float(g_value(k, hi))
    decreasing = g_lo > g_hi
    rmin, rmax = min(g_lo, g_hi), max(g_lo, g_hi)
    if np.any(r_arr < rmin) or np.any(r_arr > rmax):
        raise DomainError(f"r outside the range [{rmin:g}, {rmax:g}] of g on (0, 2]")
    a = np.full(r_arr.shape, lo)
    b = np.full(r_arr.shape, hi)
    for _ in range(1100):
        # bisect in log-space first (g spans many decades near 0), then linearly
        m = np.where(b / a > 4.0, np.sqrt(a * b), 0.5 * (a + b))
        if np.all((m == a) | (m == b)):
            break
        gm = g_value(k, m)
        go_right = (gm > r_arr) if decreasing else (gm < r_arr)
        a = np.where(go_right, m, a)
        b = np.where(go_right, b, m)
    t = 0.5 * (a + b)
    return float(t) if t.ndim == 0 else t


@dataclass
class AdmissibilityReport:
    g_monotone: bool
    direction: str  # "decreasing", "increasing" or "none"
    blowup_at_zero: bool
    lprime_nonzero: bool
    domain_of_M: tuple[float, float] | None
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.g_monotone and self.blowup_at_zero and self.lprime_nonzero

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "g_monotone": self.g_monotone,
            "direction": self.direction,
            "blowup_at_zero": self.blowup_at_zero,
            "lprime_nonzero": self.lprime_nonzero,
            "domain_of_M": list(self.domain_of_M) if self.domain_of_M else None,
            "failures": [[float(t), msg] for t, msg in self.failures],
        }


def admissibility(k: CostKernel, delta: float = 0.1, n: int = 2000) -> AdmissibilityReport:
    """Check the hypotheses on l numerically and report where M is defined.

    ``delta`` is a lower bound on |x - y|; the matching gradient norms are
    g([delta^2 / 2, 2]).
    """
    t = np.concatenate([np.geomspace(1e-8, 1e-2, n // 4, endpoint=False), np.linspace(1e-2, 2.0, n)])
    failures = []
    lp = np.asarray(k.l_prime(t), dtype=float)
    bad = np.abs(lp) == 0
    for ti in t[bad][:5]:
        failures.append((ti, "l'(t) = 0"))
    lprime_nonzero = not bad.any()

    seq = 10.0 ** -np.arange(1, 13, dtype=float)
    lv = np.asarray(k.l(seq), dtype=float)
    inc = np.diff(lv)
    # divergence cannot be observed directly; require increments that do not die out
    blowup = bool(np.all(np.isfinite(lv)) and np.all(inc > 0) and inc[-1] >= 0.5 * inc[0])
    if not blowup:
        failures.append((float(seq[-1]), "l(t) does not blow up as t -> 0+"))

    g = np.asarray(g_value(k, t), dtype=float)
    dg = np.diff(g)
    gp = np.asarray(g_derivative(k, t), dtype=float)
    if np.all(dg < 0) and np.all(gp[:-1] <= 0):
        direction = "decreasing"
    elif np.all(dg > 0) and np.all(gp[:-1] >= 0):
        direction = "increasing"
    else:
        direction = "none"
        flips = np.nonzero(np.diff(np.sign(dg)))[0]
        for i in flips[:5]:
            failures.append((float(t[i + 1]), "g changes monotonicity"))
    monotone = direction != "none"

    dom = None
    if monotone:
        t_min = 0.5 * delta * delta
        ga, gb = float(g_value(k, t_min)), float(g_value(k, 2.0))
        dom = (min(ga, gb), max(ga, gb))
    return AdmissibilityReport(monotone, direction, blowup, lprime_nonzero, dom, failures)


def inverse_map_M(k: CostKernel, a, x, domain: tuple[float, float] | None = None):
    """Recover y on the sphere from the tangential gradient a = grad_x c(x, y).

    M(a, x) = (1 - g^{-1}(|a|^2)) x - a / l'(g^{-1}(|a|^2)).
    ``domain`` optionally restricts |a|^2 to a closed interval (values within
    1e-12 relative of its ends are clamped onto it).
    """
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    r = np.sum(a * a, axis=-1)
    if np.any(r == 0):
        raise DomainError("M needs a nonzero gradient")
    if domain is not None:
        lo, hi = domain
        slack = 1e-12 * max(1.0, abs(hi))
        if np.any(r < lo - slack) or np.any(r > hi + slack):
            raise DomainError(f"|a|^2 outside [{lo:g}, {hi:g}]")
        r = np.clip(r, lo, hi)
    t = np.asarray(g_inverse(k, r))
    lp = np.asarray(k.l_prime(t))
    return (1.0 - t)[..., None] * x - a / lp[..., None]


def near_boundary(k: CostKernel, a, domain: tuple[float, float], rel: float = 1e-9) -> np.ndarray:
    """Flag gradients whose |a|^2 sits within ``rel`` of an end of ``domain``."""
    r = np.sum(np.asarray(a, dtype=float) ** 2, axis=-1)
    lo, hi = domain
    scale = max(1.0, abs(hi))
    return (np.abs(r - lo) <= rel * scale) | (np.abs(r - hi) <= rel * scale)


LOG2 = math.log(2.0)
