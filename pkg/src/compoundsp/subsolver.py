"""Certified inexact solver for the proximal subproblem

    minimize_{x in X}  Phi(x) = V(x) + |x - c|^2 / (2 rho)

with ``V`` convex and available through value/subgradient calls.

The method keeps a cutting-plane model of ``V`` and treats the prox term
exactly (a proximal bundle method with a fixed center), interleaved with
projected-gradient steps using a Barzilai-Borwein step size. Two lower bounds
on ``min Phi`` are maintained, and the reported gap is ``Phi(best) - max(LB)``:

* the dual value of the cutting-plane master problem, which is a lower bound
  for any dual multipliers on the simplex;
* the strong-convexity bound at the incumbent,
  ``Phi(x) + g^T d + |d|^2 / (2 rho)`` with ``d = P_X(x - rho g) - x``.

The prox center is evaluated first and the best evaluated point is returned,
so ``Phi(x_out) <= Phi(P_X(c))`` always holds.
"""

from __future__ import annotations

from dataclasses import dataclass
import warnings
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .sets import FeasibleSet, project_simplex

__all__ = [
    "SubsolverConfig",
    "SubsolveResult",
    "FunctionModel",
    "solve_prox",
    "solve_prox_enumerated",
    "delta_schedule",
]


@dataclass(frozen=True)
class SubsolverConfig:
    max_iters: int = 400
    delta0: float = 1e-3
    tight_delta: float = 1e-12
    max_cuts: int = 120
    master_iters: int = 3000
    enum_cap: int = 64

    def __post_init__(self):
        if self.max_iters < 1 or not self.delta0 > 0 or not self.tight_delta > 0:
            raise ValueError("max_iters >= 1, delta0 > 0 and tight_delta > 0 required")


def delta_schedule(cfg: SubsolverConfig, nu: int) -> float:
    """Accuracy requested at outer iteration ``nu``; summable in ``nu``."""
    return cfg.delta0 / float(nu) ** 2


@dataclass
class SubsolveResult:
    x_out: np.ndarray
    value: float
    certified_gap: float
    iters_used: int
    certified: bool
    evals: int = 0


@dataclass(frozen=True)
class FunctionModel:
    """Wrap a plain convex ``f(x) -> (value, subgradient)`` as a prox model."""

    fn: Callable[[np.ndarray], Tuple[float, np.ndarray]]
    rho: Optional[float] = None
    center: Optional[np.ndarray] = None

    def with_prox(self, rho, center):
        return FunctionModel(self.fn, float(rho), np.asarray(center, dtype=float))

    def without_prox(self):
        return FunctionModel(self.fn)

    def value_subgrad(self, x):
        v, g = self.fn(x)
        v, g = float(v), np.asarray(g, dtype=float).reshape(x.shape)
        if self.rho is not None:
            d = x - self.center
            v += (d @ d) / (2.0 * self.rho)
            g = g + d / self.rho
        return v, g

    def value(self, x):
        return self.value_subgrad(x)[0]


class _Cuts:
    def __init__(self, n):
        self.a = np.zeros(0)
        self.G = np.zeros((0, n))
        self.lam = np.zeros(0)

    def add(self, x, v, g):
        # cut on V: v + g^T (y - x)
        self.a = np.append(self.a, v - g @ x)
        self.G = np.vstack([self.G, g])
        self.lam = np.append(self.lam, 0.0)

    def prune(self, cap):
        m = self.a.size
        if m <= cap:
            return
        keep = np.ones(m, dtype=bool)
        idle = np.nonzero(self.lam[:-1] <= 1e-12)[0]
        drop = idle[: m - cap]
        keep[drop] = False
        if keep.sum() > cap:
            busy = np.nonzero(keep[:-1])[0]
            keep[busy[np.argsort(self.lam[busy])[: keep.sum() - cap]]] = False
        self.a, self.G, self.lam = self.a[keep], self.G[keep], self.lam[keep]
        s = self.lam.sum()
        self.lam = self.lam / s if s > 0 else np.full(self.lam.size, 1.0 / self.lam.size)


def _dual(cuts: _Cuts, X: FeasibleSet, c, rho, lam):
    """Dual value, cut residuals and primal point for multipliers ``lam`` on the simplex."""
    y = X.project(c - rho * (cuts.G.T @ lam))
    d = y - c
    r = cuts.a + cuts.G @ y
    return lam @ r + (d @ d) / (2 * rho), r, y


def _master_fista(cuts: _Cuts, X: FeasibleSet, c, rho, iters, target_gap, lam0=None):
    """Maximize the dual of ``min_X max_j(a_j + G_j x) + |x - c|^2 / (2 rho)`` over the simplex.

    Returns (dual lower bound, primal point of the best dual iterate).
    """
    a, G = cuts.a, cuts.G
    m = a.size
    lam = cuts.lam if lam0 is None else lam0
    lam = project_simplex(lam) if lam.sum() > 0 else np.full(m, 1.0 / m)
    L = rho * max(np.linalg.norm(G, 2) ** 2, 1e-300)
    best_D, _, best_y = _dual(cuts, X, c, rho, lam)
    best_lam = lam
    z, lam_prev, t = lam.copy(), lam.copy(), 1.0
    D_prev = best_D
    for _ in range(iters):
        _, rz, _ = _dual(cuts, X, c, rho, z)
        lam_new = project_simplex(z + rz / L)
        D_new, r_new, y_new = _dual(cuts, X, c, rho, lam_new)
        if D_new > best_D:
            best_D, best_lam, best_y = D_new, lam_new, y_new
        if D_new < D_prev:  # adaptive restart
            t, z, lam_prev = 1.0, best_lam.copy(), best_lam.copy()
            D_prev = best_D
            continue
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = lam_new + ((t - 1) / t_new) * (lam_new - lam_prev)
        lam_prev, t, D_prev = lam_new, t_new, D_new
        model = np.max(r_new) + ((y_new - c) @ (y_new - c)) / (2 * rho)
        if model - D_new <= target_gap:
            break
    cuts.lam = best_lam
    return best_D, best_y


def _master_qp(cuts: _Cuts, X: FeasibleSet, c, rho, y0):
    """Solve the master problem in epigraph form as a QP over a polyhedral ``X``.

    Returns the primal point and multipliers recovered from its active cuts
    and constraints, or ``None`` when ``X`` has no polyhedral description.
    """
    poly = X.polyhedral()
    if poly is None:
        return None
    lo, hi, Aeq, beq = poly
    a, G = cuts.a, cuts.G
    m, n = G.shape
    ones = np.ones((m, 1))

    def obj(z):
        d = z[:n] - c
        return z[n] + (d @ d) / (2 * rho)

    def grad(z):
        return np.append((z[:n] - c) / rho, 1.0)

    cons = [{"type": "ineq", "fun": lambda z: z[n] - a - G @ z[:n], "jac": lambda z: np.hstack([-G, ones])}]
    if Aeq.shape[0]:
        Ez = np.hstack([Aeq, np.zeros((Aeq.shape[0], 1))])
        cons.append({"type": "eq", "fun": lambda z: Aeq @ z[:n] - beq, "jac": lambda z: Ez})
    z0 = np.append(y0, np.max(a + G @ y0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(obj, z0, jac=grad, method="SLSQP", constraints=cons,
                                bounds=list(zip(lo, hi)) + [(None, None)],
                                options={"ftol": 1e-16, "maxiter": 400})
    y = X.project(res.x[:n])

    # multipliers from the stationarity condition restricted to nearly active pieces;
    # a loose activity threshold costs up to lam_j * slack_j in the bound, so try several
    r = a + G @ y
    top = r.max()
    best = None
    for tol in (1e-13, 1e-11, 1e-9):
        J = np.nonzero(r >= top - tol * (1.0 + abs(top)))[0]
        N = X.active_normals(y, max(tol, 1e-10))
        if N is None:
            N = np.zeros((0, n))
        w = 1e3 * (1.0 + np.abs(G[J]).max())
        M = np.vstack([np.hstack([G[J].T, N.T]), np.append(np.full(J.size, w), np.zeros(N.shape[0]))])
        rhs = np.append(-(y - c) / rho, w)
        sol, _ = optimize.nnls(M, rhs, maxiter=50 * M.shape[1])
        lam = np.zeros(m)
        lam[J] = sol[:J.size]
        lam = project_simplex(lam) if lam.sum() > 0 else np.full(m, 1.0 / m)
        D = _dual(cuts, X, c, rho, lam)[0]
        if best is None or D > best[0]:
            best = (D, lam)
    return y, best[1]


def _master(cuts: _Cuts, X: FeasibleSet, c, rho, iters, target_gap, y0):
    qp = _master_qp(cuts, X, c, rho, y0)
    if qp is None:
        return _master_fista(cuts, X, c, rho, iters, target_gap)
    y, lam = qp
    D, r, _ = _dual(cuts, X, c, rho, lam)
    model = np.max(r) + ((y - c) @ (y - c)) / (2 * rho)
    cuts.lam = lam
    if model - D > target_gap:
        D2, _ = _master_fista(cuts, X, c, rho, min(iters, 300), target_gap, lam)
        D = max(D, D2)
    return D, y


def solve_prox(model, X: FeasibleSet, cfg: SubsolverConfig, delta: float,
               rho: Optional[float] = None, center=None) -> SubsolveResult:
    """Approximately minimize ``model + |x - center|^2 / (2 rho)`` over ``X`` to certified gap ``delta``.

    ``model`` must expose ``value_subgrad(x)``. When ``rho``/``center`` are
    omitted the prox term already attached to the model is used.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if rho is None:
        rho, center = model.rho, model.center
        base = model.without_prox()
    else:
        base = model.without_prox() if getattr(model, "rho", None) is not None else model
    if rho is None or not rho > 0:
        raise ValueError("a prox weight rho > 0 is required")
    c = np.asarray(center, dtype=float)
    n = c.size
    cuts = _Cuts(n)
    evals = 0

    def phi(x):
        nonlocal evals
        evals += 1
        v, g = base.value_subgrad(x)
        cuts.add(x, v, g)
        d = x - c
        return v + (d @ d) / (2 * rho), g + d / rho

    x_best = X.project(c)
    f_best, g_best = phi(x_best)
    lb = -np.inf
    step = rho
    x_prev, g_prev = None, None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        # strong-convexity bound at the incumbent
        d = X.project(x_best - rho * g_best) - x_best
        lb = max(lb, f_best + g_best @ d + (d @ d) / (2 * rho))
        if f_best - lb <= delta:
            break

        # projected gradient step with a Barzilai-Borwein length
        if x_prev is not None:
            s, y = x_best - x_prev, g_best - g_prev
            sy = s @ y
            if sy > 0:
                step = min(max((s @ s) / sy, 1e-12 * rho), rho)
        for _ in range(4):
            x_try = X.project(x_best - step * g_best)
            f_try, g_try = phi(x_try)
            dd = x_try - x_best
            if f_try <= f_best + g_best @ dd + (dd @ dd) / (2 * step):
                break
            step *= 0.25
        if f_try < f_best:
            x_prev, g_prev = x_best, g_best
            x_best, f_best, g_best = x_try, f_try, g_try

        # cutting-plane master problem with the exact prox term
        D, y = _master(cuts, X, c, rho, cfg.master_iters, 0.1 * max(f_best - lb, delta), x_best)
        lb = max(lb, D)
        if f_best - lb <= delta:
            break
        if y is not None:
            f_y, g_y = phi(y)
            if f_y < f_best:
                x_prev, g_prev = x_best, g_best
                x_best, f_best, g_best = y, f_y, g_y
        cuts.prune(cfg.max_cuts)

    gap = max(f_best - lb, 0.0)
    return SubsolveResult(x_best, f_best, gap, it, bool(gap <= delta), evals)


def solve_prox_enumerated(models: Sequence, X: FeasibleSet, cfg: SubsolverConfig, delta: float,
                          rho: Optional[float] = None, center=None) -> Tuple[SubsolveResult, int]:
    """Solve one prox problem per model and keep the lowest objective; exact ties go to the lowest index."""
    models = list(models)
    if not models:
        raise ValueError("need at least one model")
    if len(models) > cfg.enum_cap:
        from .surrogate import EnumerationCapError

        raise EnumerationCapError(
            f"{len(models)} active tuples exceed the cap {cfg.enum_cap}; use a smaller eps or raise enum_cap"
        )
    best, win = None, -1
    for i, m in enumerate(models):
        r = solve_prox(m, X, cfg, delta, rho, center)
        if best is None or r.value < best.value:
            best, win = r, i
    return best, win
