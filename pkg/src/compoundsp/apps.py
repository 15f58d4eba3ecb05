"""Builders turning risk-aware decision problems into compound stochastic programs.

Bilinear products ``a * v`` of a lifted scalar ``a`` and an affine loss ``v``
are split into a difference of convex quadratics,

    a * v = P - Q,   P = (gamma a + v / gamma)^2 / 4,   Q = (gamma a - v / gamma)^2 / 4,

and the concave part is linearized by the surrogate machinery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .problem import (
    CompoundProblem,
    DcSmoothConcave,
    InnerMap,
    OuterMap,
    ProblemStructureError,
    RandomFn,
    ScalarConvexOracle,
    Smooth,
    VecOracle,
    phi_identity,
    phi_positive_part,
    phi_sum_positive,
    psi_identity,
    psi_weighted_max,
)
from .risk import EmpiricalRV, UtilitySpec, bpoe
from .sets import Box, FeasibleSet, Product, Simplex
from .streams import DistributionSpec, EmpiricalRows, SampleBatch, Stacked

__all__ = [
    "LossSpec",
    "LiftedBounds",
    "build_oce_deviation",
    "build_bpoe_deviation",
    "build_dr_mixed_bpoe",
    "build_bpoe_multiclass",
    "build_quadratic",
    "read_labeled_csv",
    "predict_class",
    "psi_group_max_sum",
    "SAFETY",
    "WIDEN",
]

SAFETY = 10.0
WIDEN = 0.1


@dataclass(frozen=True)
class LossSpec:
    """Loss ``f(x, xi)``, batched over rows of ``xi``.

    Affine losses ``f = coef(xi) . x + const(xi)`` are given by ``coef`` and
    ``const``; a general smooth loss by ``value``/``grad`` and a curvature
    bound ``kappa``.
    """

    n: int
    coef: Optional[Callable[[np.ndarray], np.ndarray]] = None
    const: Optional[Callable[[np.ndarray], np.ndarray]] = None
    value_fn: Optional[Callable] = None
    grad_fn: Optional[Callable] = None
    kappa: Optional[float] = None

    @classmethod
    def portfolio(cls, n: int) -> "LossSpec":
        """Negative portfolio return ``-xi . x`` on the first ``n`` columns."""
        return cls(n, coef=lambda xi: -xi[:, :n], const=lambda xi: np.zeros(xi.shape[0]))

    @property
    def affine(self) -> bool:
        return self.coef is not None

    def value(self, x, xi) -> np.ndarray:
        if self.affine:
            return self.coef(xi) @ x + self.const(xi)
        return np.asarray(self.value_fn(x, xi), dtype=float)

    def grad(self, x, xi) -> np.ndarray:
        if self.affine:
            return self.coef(xi)
        return np.asarray(self.grad_fn(x, xi), dtype=float)


@dataclass
class LiftedBounds:
    eta_range: Optional[Tuple[float, float]] = None
    a_bounds: Optional[np.ndarray] = None
    pilot_size: int = 0
    safety: float = SAFETY
    widen: float = WIDEN
    gamma: Optional[float] = None
    warnings: List[str] = field(default_factory=list)


def _pilot_rows(pilot) -> np.ndarray:
    rows = pilot.rows if isinstance(pilot, SampleBatch) else np.atleast_2d(np.asarray(pilot, dtype=float))
    if rows.shape[0] == 0:
        raise ValueError("pilot sample is empty")
    return rows


def _probe_points(X: FeasibleSet, k: int = 16) -> np.ndarray:
    rng = np.random.default_rng(12345)
    pts = [X.sample(rng, k)]
    if isinstance(X, Simplex):
        pts.append(X.radius * np.eye(X.n))
    if isinstance(X, Box):
        pts.append(np.vstack([X.lo, X.hi, 0.5 * (X.lo + X.hi)]))
    return np.vstack(pts)


def _split_products(gamma, a, v, dv_dx):
    """Values and gradients of ``P(a, v)`` and ``Q(a, v)`` with respect to ``(x, a)``.

    ``a``: scalar, ``v``: (N,), ``dv_dx``: (N, n). Gradients are (N, n + 1).
    """
    p = gamma * a + v / gamma
    q = gamma * a - v / gamma
    P, Q = 0.25 * p * p, 0.25 * q * q
    dP = np.hstack([0.5 * p[:, None] * dv_dx / gamma, 0.5 * gamma * p[:, None]])
    dQ = np.hstack([-0.5 * q[:, None] * dv_dx / gamma, 0.5 * gamma * q[:, None]])
    return P, Q, dP, dQ


def _empirical_kappa(coef_rows: np.ndarray, gamma: float) -> float:
    """Curvature of ``Q`` (and ``P``) in ``(x, a)``, maximized over the given rows."""
    s = float(np.max(np.sum(coef_rows ** 2, axis=1))) if coef_rows.size else 0.0
    return 0.5 * (s / gamma ** 2 + gamma ** 2)


def _gamma_from(coef_rows: np.ndarray) -> float:
    s = float(np.max(np.linalg.norm(coef_rows, axis=1))) if coef_rows.size else 0.0
    return float(np.sqrt(s)) if s > 0 else 1.0


# ---------------------------------------------------------------------------
# OCE of deviation


def build_oce_deviation(loss: LossSpec, u: UtilitySpec, X: FeasibleSet, pilot,
                        distribution: Optional[DistributionSpec] = None) -> CompoundProblem:
    """OCE of the deviation ``f - E f`` with a lifted scalar ``eta``.

    Variables ``(x, eta)``; ``G = (-f, -eta)``, ``F = f + eta`` and
    ``phi(y1, y2, y3) = -u(-y1 - y3) + y2``. For fixed ``x`` the minimum over
    ``eta`` equals ``-OCE_u(f - E f)``, which for the piecewise-linear
    utility with level ``alpha`` is ``CVaR_alpha(E f - f)``.
    """
    rows = _pilot_rows(pilot)
    n = loss.n
    if X.dim != n:
        raise ProblemStructureError(f"X has dimension {X.dim}, loss expects {n}")
    devs = []
    for x in _probe_points(X):
        fx = loss.value(x, rows)
        devs.append(fx - fx.mean())
    D = np.concatenate(devs)
    lo, hi = float(D.min()), float(D.max())
    if not hi - lo > 1e-12 * (1.0 + max(abs(lo), abs(hi))):
        raise ValueError("pilot deviations are degenerate (zero range)")
    w = WIDEN * (hi - lo)
    bounds = LiftedBounds(eta_range=(lo - w, hi + w), pilot_size=rows.shape[0])

    def g_val(z, xi):
        x, eta = z[:n], z[n]
        return np.column_stack([-loss.value(x, xi), np.full(xi.shape[0], -eta)])

    def g_jac(z, xi):
        x = z[:n]
        J = np.zeros((xi.shape[0], 2, n + 1))
        J[:, 0, :n] = -loss.grad(x, xi)
        J[:, 1, n] = -1.0
        return J

    def f_val(z, xi):
        return (loss.value(z[:n], xi) + z[n])[:, None]

    def f_jac(z, xi):
        J = np.zeros((xi.shape[0], 1, n + 1))
        J[:, 0, :n] = loss.grad(z[:n], xi)
        J[:, 0, n] = 1.0
        return J

    G = _tagged(VecOracle(g_val, g_jac), 2, loss)
    F = _tagged(VecOracle(f_val, f_jac), 1, loss)

    def phi_eval(Z):
        s = -Z[:, 0] - Z[:, 2]
        return (-u.u(s) + Z[:, 1])[:, None]

    def phi_jac(Z):
        du = u.du(-Z[:, 0] - Z[:, 2])
        return np.stack([du, np.ones_like(du), du], axis=1)[:, None, :]

    outer = OuterMap(psi_identity(), InnerMap(phi_eval, phi_jac, 3, 1))
    Xl = Product([X, Box([bounds.eta_range[0]], [bounds.eta_range[1]])])
    dist = distribution or EmpiricalRows(rows)
    return CompoundProblem(outer, G, F, Xl, dist, name="oce-deviation", lifted={"bounds": bounds, "n": n})


def _tagged(oracle: VecOracle, dim: int, loss: LossSpec) -> RandomFn:
    if loss.affine:
        zero = VecOracle(lambda z, xi: np.zeros((xi.shape[0], dim)),
                         lambda z, xi: np.zeros((xi.shape[0], dim, z.size)))
        return RandomFn(dim, DcSmoothConcave(oracle, zero, kappa0=0.0))
    if loss.kappa is None:
        raise ValueError("a non-affine loss needs a curvature bound kappa")
    return RandomFn(dim, Smooth(oracle, float(loss.kappa)))


# ---------------------------------------------------------------------------
# bPOE of deviation


def _a_bound_from(samples: Sequence[np.ndarray], tau: float, fallback_scale: float) -> Tuple[float, List[float]]:
    """Largest finite right endpoint of the optimal-``a`` interval over a set of pilot variables."""
    ends = []
    for s in samples:
        r = bpoe(EmpiricalRV(s), tau)
        if r.edge is None and np.isfinite(r.a_hi):
            ends.append(r.a_hi)
    if ends:
        return max(ends), ends
    return 1.0 / max(fallback_scale, 1e-12), ends


def build_bpoe_deviation(loss: LossSpec, tau: float, X: FeasibleSet, pilot,
                         distribution: Optional[DistributionSpec] = None, safety: float = SAFETY) -> CompoundProblem:
    """bPOE at threshold ``tau`` of the deviation ``f - E f``, lifted by ``a in [0, A]``.

    ``G = a (f - tau) + 1``, ``F = -a f``, ``phi(b1, b2) = [b1 + b2]_+``.
    """
    if not loss.affine:
        raise ValueError("the bPOE builders need an affine loss")
    rows = _pilot_rows(pilot)
    n = loss.n
    if X.dim != n:
        raise ProblemStructureError(f"X has dimension {X.dim}, loss expects {n}")
    devs = []
    for x in _probe_points(X):
        fx = loss.value(x, rows)
        devs.append(fx - fx.mean())
    sup_min = min(float(d.max()) for d in devs)
    bounds = LiftedBounds(pilot_size=rows.shape[0], safety=safety)
    a_end, _ = _a_bound_from(devs, tau, float(np.mean([d.std() for d in devs])))
    A = safety * a_end
    if not tau < sup_min:
        msg = f"threshold {tau:g} is not below the smallest pilot sup deviation {sup_min:g}; bound on a enlarged"
        bounds.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        A *= safety
    coef_rows = loss.coef(rows)
    gamma = _gamma_from(coef_rows)
    bounds.a_bounds = np.array([A])
    bounds.gamma = gamma
    kappa = _empirical_kappa(coef_rows, gamma) if distribution is None else None

    def parts(z, xi):
        x, a = z[:n], z[n]
        return _split_products(gamma, a, loss.value(x, xi), loss.coef(xi))

    def gG(z, xi):
        P, _, _, _ = parts(z, xi)
        return (P - z[n] * tau + 1.0)[:, None]

    def gG_jac(z, xi):
        _, _, dP, _ = parts(z, xi)
        dP[:, n] -= tau
        return dP[:, None, :]

    def hG(z, xi):
        return parts(z, xi)[1][:, None]

    def hG_jac(z, xi):
        return parts(z, xi)[3][:, None, :]

    G = RandomFn(1, DcSmoothConcave(VecOracle(gG, gG_jac), VecOracle(hG, hG_jac), kappa0=kappa))
    F = RandomFn(1, DcSmoothConcave(VecOracle(hG, hG_jac),
                                    VecOracle(lambda z, xi: parts(z, xi)[0][:, None],
                                              lambda z, xi: parts(z, xi)[2][:, None, :]),
                                    kappa0=kappa))
    outer = OuterMap(psi_identity(), phi_sum_positive(2))
    Xl = Product([X, Box([0.0], [A])])
    dist = distribution or EmpiricalRows(rows)
    return CompoundProblem(outer, G, F, Xl, dist, name="bpoe-deviation",
                           lifted={"bounds": bounds, "n": n, "tau": float(tau)})


# ---------------------------------------------------------------------------
# distributionally robust mixed bPOE


def build_dr_mixed_bpoe(loss: LossSpec, taus: Sequence[float], betas: Sequence[float],
                        components: Sequence[DistributionSpec], X: FeasibleSet, pilots: Sequence,
                        safety: float = SAFETY) -> CompoundProblem:
    """Worst case over mixtures of ``K`` distributions of ``sum_j beta_j bPOE_{tau_j}(f)``.

    Variables ``(x, a_1..a_J)``. Each sample row stacks one draw per component;
    ``G_{jk} = a_j (f(x, xi_k) - tau_j) + 1``, ``phi = [.]_+`` componentwise and
    ``psi(y) = max_k sum_j beta_j y_{jk}``.
    """
    taus = np.asarray(taus, dtype=float).ravel()
    betas = np.asarray(betas, dtype=float).ravel()
    components = list(components)
    J, K = taus.size, len(components)
    if J == 0 or K == 0:
        raise ValueError("need at least one threshold and one component")
    if betas.size != J or np.any(betas < 0):
        raise ValueError("betas must be J nonnegative weights")
    if len(pilots) != K:
        raise ValueError("one pilot sample per component required")
    if not loss.affine:
        raise ValueError("the bPOE builders need an affine loss")
    n = loss.n
    rows = [_pilot_rows(p) for p in pilots]
    probes = _probe_points(X)
    bounds = LiftedBounds(pilot_size=min(r.shape[0] for r in rows), safety=safety)
    sup_all = max(float(loss.value(x, r).max()) for x in probes for r in rows)
    A = np.empty(J)
    for j, tau in enumerate(taus):
        if not tau < sup_all:
            msg = f"threshold tau_{j}={tau:g} is not below the largest pilot loss {sup_all:g}; bound enlarged"
            bounds.warnings.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        losses = [loss.value(x, r) for r in rows for x in probes]
        end, _ = _a_bound_from(losses, tau, float(np.mean([s.std() for s in losses])))
        A[j] = safety * end * (safety if not tau < sup_all else 1.0)
    coef_rows = np.vstack([loss.coef(r) for r in rows])
    gamma = _gamma_from(coef_rows)
    bounds.a_bounds = A
    bounds.gamma = gamma
    kappa = None
    if all(isinstance(c, EmpiricalRows) for c in components):
        kappa = _empirical_kappa(np.vstack([loss.coef(c.rows) for c in components]), gamma)
    dist = Stacked(components)
    blocks = dist.blocks
    L = J * K

    def make(part):
        def value(z, xi):
            return _dr_eval(z, xi, part, False)[0]

        def jac(z, xi):
            return _dr_eval(z, xi, part, True)[1]

        return VecOracle(value, jac)

    def _dr_eval(z, xi, part, want):
        x, a = z[:n], z[n:]
        N = xi.shape[0]
        val = np.empty((N, L))
        jac = np.zeros((N, L, n + J)) if want else None
        for k, b in enumerate(blocks):
            xk = xi[:, b]
            v, dv = loss.value(x, xk), loss.coef(xk)
            for j in range(J):
                P, Q, dP, dQ = _split_products(gamma, a[j], v, dv)
                col = j * K + k
                if part == "g":
                    val[:, col] = P - a[j] * taus[j] + 1.0
                    d = dP.copy()
                    d[:, n] -= taus[j]
                else:
                    val[:, col] = Q
                    d = dQ
                if want:
                    jac[:, col, :n] = d[:, :n]
                    jac[:, col, n + j] = d[:, n]
        return val, jac

    G = RandomFn(L, DcSmoothConcave(make("g"), make("h"), kappa0=kappa))
    groups = [[j * K + k for j in range(J)] for k in range(K)]
    outer = OuterMap(psi_weighted_max(groups, [betas] * K, L), phi_positive_part(L))
    Xl = Product([X, Box(np.zeros(J), A)])
    return CompoundProblem(outer, G, RandomFn.absent(), Xl, dist, name="dr-mixed-bpoe",
                           lifted={"bounds": bounds, "n": n, "taus": taus, "betas": betas, "K": K})


# ---------------------------------------------------------------------------
# cost-sensitive multiclass classification


def psi_group_max_sum(groups: Sequence[Sequence[int]], weights: Sequence[float], dim: int) -> ScalarConvexOracle:
    """``sum_s w_s max_{i in groups[s]} y_i``; ties in each max go to the lowest index."""
    groups = [np.asarray(g, dtype=int) for g in groups]
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("group weights must be nonnegative")

    def ev(y):
        return float(sum(ws * y[g].max() for ws, g in zip(w, groups)))

    def sub(y):
        out = np.zeros(dim)
        for ws, g in zip(w, groups):
            out[g[int(np.argmax(y[g]))]] += ws
        return out

    return ScalarConvexOracle(ev, sub)


def read_labeled_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Rows ``class_index, attr_1, ..., attr_d`` with 0-based integer classes."""
    data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    labels = data[:, 0]
    if np.any(labels != np.round(labels)) or np.any(labels < 0):
        raise ValueError(f"{path}: class indices must be nonnegative integers")
    return labels.astype(int), data[:, 1:]


def predict_class(mu: np.ndarray, attrs: np.ndarray) -> np.ndarray:
    """Class with the largest score ``mu_m . x``; ties go to the lowest index."""
    scores = np.atleast_2d(attrs) @ np.asarray(mu).T
    return np.argmax(scores, axis=1)


def build_bpoe_multiclass(labels, attrs, M: int, partitions: Sequence[Sequence[Tuple[int, int]]],
                          alphas: Sequence[float], taus, mu_bound: float = 1.0,
                          safety: float = SAFETY) -> CompoundProblem:
    """Buffered cost-sensitive multiclass model with linear scores ``mu_m . x``.

    For each misclassification pair ``(i, j)`` the bPOE at ``-tau_ij`` of
    ``mu_j . X_i - max_m mu_m . X_i`` is lifted by its own ``a_ij``. Each
    sample row stacks one attribute vector drawn from every class.
    Variables are ``(mu_1, .., mu_M, a_p for p in pairs)``.
    """
    labels = np.asarray(labels, dtype=int)
    attrs = np.atleast_2d(np.asarray(attrs, dtype=float))
    if M < 2:
        raise ValueError("need at least two classes")
    class_rows = [attrs[labels == m] for m in range(M)]
    for m, r in enumerate(class_rows):
        if r.shape[0] == 0:
            raise ValueError(f"class {m} has no rows")
    pairs = [(i, j) for i in range(M) for j in range(M) if i != j]
    flat = [tuple(p) for part in partitions for p in part]
    if sorted(flat) != pairs:
        raise ValueError("partitions must cover every ordered pair (i, j), i != j, exactly once")
    alphas = np.asarray(alphas, dtype=float)
    if alphas.size != len(partitions) or np.any(alphas < 0):
        raise ValueError("one nonnegative weight per group required")
    tau = np.asarray(taus, dtype=float)
    tau = np.full((M, M), float(tau)) if tau.ndim == 0 else tau
    d = attrs.shape[1]
    nmu = M * d
    P_ = len(pairs)
    pidx = {p: k for k, p in enumerate(pairs)}

    # pilot bounds on each a_ij from random score vectors in the box
    rng = np.random.default_rng(2024)
    probes = rng.uniform(-mu_bound, mu_bound, size=(16, M, d))
    A = np.empty(P_)
    for k, (i, j) in enumerate(pairs):
        zs = []
        for mu in probes:
            sc = class_rows[i] @ mu.T
            zs.append(sc[:, j] - sc.max(axis=1))
        end, _ = _a_bound_from(zs, -tau[i, j], float(max(tau[i, j], np.mean([z.std() for z in zs]))))
        A[k] = safety * max(end, 1.0 / max(tau[i, j], 1e-12) if tau[i, j] > 0 else end)
    bounds = LiftedBounds(a_bounds=A, pilot_size=int(labels.size), safety=safety)
    gamma = _gamma_from(attrs)
    bounds.gamma = gamma
    dist = Stacked([EmpiricalRows(r) for r in class_rows])
    blocks = dist.blocks

    def evaluate(z, xi, part, want):
        mu = z[:nmu].reshape(M, d)
        a = z[nmu:]
        N = xi.shape[0]
        val = np.empty((N, P_))
        jac = np.zeros((N, P_, nmu + P_)) if want else None
        for k, (i, j) in enumerate(pairs):
            Xi = xi[:, blocks[i]]
            v = Xi @ mu.T  # (N, M)
            p = gamma * a[k] + v / gamma
            q = gamma * a[k] - v / gamma
            P, Q = 0.25 * p * p, 0.25 * q * q
            SQ = Q.sum(axis=1)
            if part == "g":
                val[:, k] = P[:, j] + SQ + a[k] * tau[i, j] + 1.0
                if want:
                    jac[:, k, j * d:(j + 1) * d] += 0.5 * p[:, j, None] * Xi / gamma
                    jac[:, k, nmu + k] += 0.5 * gamma * p[:, j] + tau[i, j]
                    for m in range(M):
                        jac[:, k, m * d:(m + 1) * d] += -0.5 * q[:, m, None] * Xi / gamma
                    jac[:, k, nmu + k] += 0.5 * gamma * q.sum(axis=1)
            else:
                pieces = P + (SQ[:, None] - Q)  # (N, M)
                mstar = np.argmax(pieces, axis=1)
                rowsN = np.arange(N)
                val[:, k] = Q[:, j] + pieces[rowsN, mstar]
                if want:
                    # gradient of Q(v_j)
                    jac[:, k, j * d:(j + 1) * d] += -0.5 * q[:, j, None] * Xi / gamma
                    jac[:, k, nmu + k] += 0.5 * gamma * q[:, j]
                    # gradient of the selected piece P(v_m*) + sum_{l != m*} Q(v_l)
                    for m in range(M):
                        on = (mstar == m)[:, None]
                        jac[:, k, m * d:(m + 1) * d] += np.where(on, 0.5 * p[:, m, None] * Xi / gamma,
                                                                 -0.5 * q[:, m, None] * Xi / gamma)
                    jac[:, k, nmu + k] += 0.5 * gamma * (p[rowsN, mstar] + q.sum(axis=1) - q[rowsN, mstar])
        return val, jac

    g = VecOracle(lambda z, xi: evaluate(z, xi, "g", False)[0], lambda z, xi: evaluate(z, xi, "g", True)[1])
    h = VecOracle(lambda z, xi: evaluate(z, xi, "h", False)[0], lambda z, xi: evaluate(z, xi, "h", True)[1])
    G = RandomFn(P_, DcSmoothConcave(g, h, kappa0=None))
    groups = [[pidx[tuple(p)] for p in part] for part in partitions]
    outer = OuterMap(psi_group_max_sum(groups, alphas, P_), phi_positive_part(P_))
    Xl = Product([Box(np.full(nmu, -mu_bound), np.full(nmu, mu_bound)), Box(np.zeros(P_), A)])
    return CompoundProblem(outer, G, RandomFn.absent(), Xl, dist, name="bpoe-multiclass",
                           lifted={"bounds": bounds, "M": M, "d": d, "pairs": pairs})


# ---------------------------------------------------------------------------
# deterministic reference instance


def build_quadratic(b, lo, hi) -> CompoundProblem:
    """Deterministic convex ``0.5 |x - b|^2`` on the box ``[lo, hi]``; its surrogate is exact."""
    b = np.asarray(b, dtype=float)
    n = b.size

    def value(x, xi):
        return np.full((xi.shape[0], 1), 0.5 * np.sum((x - b) ** 2))

    def jac(x, xi):
        return np.broadcast_to(x - b, (xi.shape[0], 1, n)).copy()

    zero = VecOracle(lambda x, xi: np.zeros((xi.shape[0], 1)), lambda x, xi: np.zeros((xi.shape[0], 1, n)))
    G = RandomFn(1, DcSmoothConcave(VecOracle(value, jac), zero, kappa0=0.0))
    return CompoundProblem(OuterMap(psi_identity(), phi_identity(1)), G, RandomFn.absent(),
                           Box(lo, hi), EmpiricalRows([[0.0]]), name="quadratic")
