"""Risk measures of discrete random variables: VaR, CVaR, POE, bPOE and OCE.

All routines work on a finite set of atoms with probabilities and use exact
breakpoint enumeration wherever the objective is piecewise linear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special

__all__ = [
    "EmpiricalRV",
    "UtilitySpec",
    "BpoeResult",
    "OceResult",
    "var",
    "var_plus",
    "cvar",
    "cvar_minimization",
    "poe",
    "bpoe",
    "bpoe_objective",
    "oce",
    "oce_search",
]

_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalRV:
    """Discrete distribution; atoms are stored sorted with duplicates merged."""

    values: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.values, dtype=float)).ravel()
        if z.size == 0 or not np.all(np.isfinite(z)):
            raise ValueError("need at least one finite atom")
        w = np.full(z.size, 1.0 / z.size) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.shape != z.shape or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector matching the atoms")
        uz, inv = np.unique(z, return_inverse=True)
        uw = np.bincount(inv, weights=w)
        keep = uw > 0
        object.__setattr__(self, "values", uz[keep])
        object.__setattr__(self, "weights", uw[keep] / uw[keep].sum())

    @property
    def cdf(self):
        return np.cumsum(self.weights)

    @property
    def mean(self) -> float:
        return float(self.weights @ self.values)

    @property
    def sup(self) -> float:
        return float(self.values[-1])

    def shift(self, c: float) -> "EmpiricalRV":
        return EmpiricalRV(self.values + c, self.weights)

    def negate(self) -> "EmpiricalRV":
        return EmpiricalRV(-self.values, self.weights)


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def var(Z: EmpiricalRV, alpha: float) -> float:
    """Left quantile ``min{z : F(z) >= alpha}``."""
    _check_alpha(alpha)
    k = int(np.searchsorted(Z.cdf, alpha - _TOL, side="left"))
    return float(Z.values[min(k, Z.values.size - 1)])


def var_plus(Z: EmpiricalRV, alpha: float) -> float:
    """Right quantile ``inf{z : F(z) > alpha}``."""
    _check_alpha(alpha)
    k = int(np.searchsorted(Z.cdf, alpha + _TOL, side="right"))
    return float(Z.values[min(k, Z.values.size - 1)])


def cvar_minimization(Z: EmpiricalRV, alpha: float) -> float:
    """``min_eta eta + E[Z - eta]_+ / (1 - alpha)`` over the atoms (the minimum is attained at one)."""
    _check_alpha(alpha)
    z, p = Z.values, Z.weights
    # E[Z - z_j]_+ from suffix sums
    tail_p = np.cumsum(p[::-1])[::-1]
    tail_pz = np.cumsum((p * z)[::-1])[::-1]
    tp = np.append(tail_p[1:], 0.0)
    tpz = np.append(tail_pz[1:], 0.0)
    excess = tpz - z * tp
    return float(np.min(z + excess / (1.0 - alpha)))


def cvar(Z: EmpiricalRV, alpha: float) -> float:
    """Upper-tail conditional expectation; checked against the minimization formula."""
    v = var(Z, alpha)
    z, p = Z.values, Z.weights
    above = z > v
    # tail mean with the atom at VaR split, written as v + E[Z - v]_+ / (1 - alpha)
    tail = v + float(p[above] @ (z[above] - v)) / (1.0 - alpha)
    alt = cvar_minimization(Z, alpha)
    if abs(tail - alt) > 1e-9 * (1.0 + abs(tail)):
        raise ArithmeticError(f"cvar formulas disagree: {tail!r} vs {alt!r}")
    return tail


def poe(Z: EmpiricalRV, tau: float) -> float:
    return float(Z.weights[Z.values > tau].sum())


@dataclass(frozen=True)
class BpoeResult:
    value: float
    a_lo: float
    a_hi: float
    edge: Optional[str] = None

    def __iter__(self):
        return iter((self.value, (self.a_lo, self.a_hi)))


def bpoe_objective(Z: EmpiricalRV, tau: float, a) -> np.ndarray:
    """``E[a (Z - tau) + 1]_+`` for scalar or array ``a``."""
    a = np.asarray(a, dtype=float)
    return np.maximum(a[..., None] * (Z.values - tau) + 1.0, 0.0) @ Z.weights


def bpoe(Z: EmpiricalRV, tau: float) -> BpoeResult:
    """Buffered probability of exceedance with the set of optimal ``a`` in ``min_{a>=0} E[a(Z-tau)+1]_+``.

    Edge cases: ``tau <= E Z`` gives 1 at ``a = 0``; ``tau = sup Z`` gives the
    limit ``P(Z = sup Z)`` (flagged ``"at-sup"``, not attained); ``tau > sup Z``
    gives 0 for every ``a >= 1/(tau - sup Z)`` (flagged ``"above-sup"``).
    """
    z, p = Z.values, Z.weights
    tau = float(tau)
    sup = z[-1]
    if tau > sup:
        return BpoeResult(0.0, 1.0 / (tau - sup), np.inf, "above-sup")
    if tau == sup:
        return BpoeResult(float(p[-1]), np.inf, np.inf, "at-sup")
    if tau <= Z.mean:
        return BpoeResult(1.0, 0.0, 0.0, "below-mean")
    below = z < tau
    zb = z[below]
    a_bp = 1.0 / (tau - zb)
    # at a = 1/(tau - z_j) the active atoms are those strictly above z_j
    tail_p = np.cumsum(p[::-1])[::-1]
    tail_pd = np.cumsum((p * (z - tau))[::-1])[::-1]
    idx = np.nonzero(below)[0] + 1
    S0 = np.where(idx < z.size, tail_p[np.minimum(idx, z.size - 1)], 0.0)
    S1 = np.where(idx < z.size, tail_pd[np.minimum(idx, z.size - 1)], 0.0)
    vals = a_bp * S1 + S0
    best = float(np.min(vals))
    if best >= 1.0:
        return BpoeResult(1.0, 0.0, 0.0, None)
    flat = np.nonzero(vals <= best + 1e-12 * (1.0 + abs(best)))[0]
    return BpoeResult(best, float(a_bp[flat].min()), float(a_bp[flat].max()), None)


@dataclass(frozen=True)
class UtilitySpec:
    """Normalized concave nondecreasing utility: ``linear``, ``cvar`` (with ``alpha``) or ``exponential`` (with ``gamma``)."""

    kind: str = "linear"
    alpha: float = 0.5
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cvar", "exponential"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "cvar":
            _check_alpha(self.alpha)
        if self.kind == "exponential" and not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def u(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return t.copy()
        if self.kind == "cvar":
            return -np.maximum(-t, 0.0) / (1.0 - self.alpha)
        return -np.expm1(-self.gamma * t) / self.gamma

    def du(self, t):
        """A supergradient; at the kink of the piecewise-linear utility the flat slope 0 is used."""
        t = np.asarray(t, dtype=float)
        if self.kind == "linear":
            return np.ones_like(t)
        if self.kind == "cvar":
            return np.where(t < 0, 1.0 / (1.0 - self.alpha), 0.0)
        return np.exp(-self.gamma * t)


@dataclass(frozen=True)
class OceResult:
    value: float
    eta_star: float

    def __iter__(self):
        return iter((self.value, self.eta_star))


def oce(Z: EmpiricalRV, u: UtilitySpec) -> OceResult:
    """``sup_eta eta + E u(Z - eta)``; the supremum is attained in ``[min Z, max Z]``."""
    z, p = Z.values, Z.weights
    if z.size == 1:
        return OceResult(float(z[0]), float(z[0]))
    if u.kind == "linear":
        return OceResult(Z.mean, Z.mean)
    if u.kind == "cvar":
        # eta - E[eta - Z]_+/(1-alpha) is concave piecewise linear with kinks at atoms
        cp = np.cumsum(p)
        cpz = np.cumsum(p * z)
        shortfall = z * cp - cpz
        vals = z - shortfall / (1.0 - u.alpha)
        k = int(np.argmax(vals))
        return OceResult(float(vals[k]), float(z[k]))
    # exponential utility: first-order condition has a closed form
    eta = -special.logsumexp(-u.gamma * z, b=p) / u.gamma
    eta = float(np.clip(eta, z[0], z[-1]))
    val = eta + float(p @ u.u(z - eta))
    return OceResult(val, eta)


def oce_search(Z: EmpiricalRV, u: Callable[[np.ndarray], np.ndarray], xtol: float = 1e-9) -> OceResult:
    """Generic bounded scalar search for a user utility."""
    z, p = Z.values, Z.weights
    if z.size == 1:
        return OceResult(float(z[0]), float(z[0]))
    res = optimize.minimize_scalar(lambda e: -(e + p @ u(z - e)), bounds=(z[0], z[-1]), method="bounded",
                                   options={"xatol": xtol})
    return OceResult(float(-res.fun), float(res.x))
