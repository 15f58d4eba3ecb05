"""Data model for compound stochastic programs

    minimize_{x in X}  psi( E[ phi( G(x, xi), E[F(x, xi)] ) ] )

with isotone convex outer maps ``psi`` and ``phi`` and random inner maps ``G``
and ``F`` whose structure tag tells the surrogate builder how to majorize them.

All random oracles are vectorised over a batch of samples: for ``x`` of shape
``(n,)`` and ``xi`` of shape ``(N, m)`` a value oracle returns ``(N, l)`` and a
Jacobian oracle returns ``(N, l, n)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .sets import FeasibleSet
from .streams import DistributionSpec, SampleStream

__all__ = [
    "ProblemStructureError",
    "VecOracle",
    "Piece",
    "Smooth",
    "DcSmoothConcave",
    "DcMaxSmooth",
    "Stack",
    "RandomFn",
    "ScalarConvexOracle",
    "InnerMap",
    "OuterMap",
    "CompoundProblem",
    "ContractResult",
    "ValidationReport",
    "validate_problem",
    "penalize_constraints",
    "psi_identity",
    "psi_weighted_sum",
    "psi_weighted_max",
    "phi_identity",
    "phi_positive_part",
    "phi_sum_positive",
    "stack_fns",
    "linear_fn",
    "compound_value",
]


class ProblemStructureError(ValueError):
    """Raised when the dimensions of psi, phi, G and F do not fit together."""


# ---------------------------------------------------------------------------
# random inner maps


@dataclass(frozen=True)
class VecOracle:
    """A batched random map ``value(x, xi) -> (N, l)`` with ``jac(x, xi) -> (N, l, n)``."""

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Piece:
    """A deterministic smooth convex map ``value(x) -> (l,)``, ``grad(x) -> (l, n)``."""

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Smooth:
    """``G`` itself, with gradient modulus ``kappa0``; surrogate adds ``kappa0/2 |x - x'|^2``."""

    fn: VecOracle
    kappa0: float


@dataclass(frozen=True)
class DcSmoothConcave:
    """``G = g - h`` with ``g``, ``h`` convex in x.

    ``h.jac`` must return one element of the subdifferential; at kinks the
    oracle is expected to pick the lowest-index active piece. ``kappa0`` is
    the declared constant of the upper bound ``G + kappa0/2 |x-x'|^2 >= G_hat``,
    or ``None`` when no such constant is claimed.
    """

    g: VecOracle
    h: VecOracle
    kappa0: Optional[float] = None


@dataclass(frozen=True)
class DcMaxSmooth:
    """``G_i = g_i - max_k h_{i,k}(x)`` with deterministic smooth convex pieces."""

    g: VecOracle
    pieces: Sequence[Piece]
    kappa0: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces:
            raise ValueError("DcMaxSmooth needs at least one piece")


@dataclass(frozen=True)
class Stack:
    parts: Sequence["RandomFn"]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))


@dataclass(frozen=True)
class RandomFn:
    dim_out: int
    structure: object = None

    @classmethod
    def absent(cls) -> "RandomFn":
        return cls(0, None)

    def __call__(self, x, xi) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        s = self.structure
        if self.dim_out == 0 or s is None:
            return np.zeros((xi.shape[0], 0))
        if isinstance(s, Smooth):
            out = s.fn.value(x, xi)
        elif isinstance(s, DcSmoothConcave):
            out = s.g.value(x, xi) - s.h.value(x, xi)
        elif isinstance(s, DcMaxSmooth):
            hmax = np.max(np.stack([p.value(x) for p in s.pieces]), axis=0)
            out = s.g.value(x, xi) - hmax[None, :]
        elif isinstance(s, Stack):
            out = np.hstack([f(x, xi) for f in s.parts])
        else:
            raise ProblemStructureError(f"unknown structure tag {type(s).__name__}")
        return np.asarray(out, dtype=float).reshape(xi.shape[0], self.dim_out)

    def leaves(self) -> List["RandomFn"]:
        if isinstance(self.structure, Stack):
            return [leaf for f in self.structure.parts for leaf in f.leaves()]
        return [self] if self.dim_out > 0 else []

    def declared_kappa0(self) -> Optional[float]:
        ks = []
        for leaf in self.leaves():
            k = getattr(leaf.structure, "kappa0", None)
            if k is None:
                return None
            ks.append(float(np.max(k)))
        return max(ks) if ks else 0.0


def stack_fns(fns: Sequence[RandomFn]) -> RandomFn:
    fns = [f for f in fns if f.dim_out > 0]
    if not fns:
        return RandomFn.absent()
    if len(fns) == 1:
        return fns[0]
    return RandomFn(sum(f.dim_out for f in fns), Stack(fns))


def linear_fn(coef: Callable, const: Callable, dim_out: int) -> RandomFn:
    """Affine random map ``A(xi) x + b(xi)`` with ``coef(xi) -> (N, l, n)``, ``const(xi) -> (N, l)``.

    Tagged as convex with a zero concave part, so its surrogate is exact.
    """

    def value(x, xi):
        return np.einsum("tin,n->ti", coef(xi), x) + const(xi)

    def jac(x, xi):
        return coef(xi)

    zero = VecOracle(lambda x, xi: np.zeros((xi.shape[0], dim_out)),
                     lambda x, xi: np.zeros((xi.shape[0], dim_out, x.size)))
    return RandomFn(dim_out, DcSmoothConcave(VecOracle(value, jac), zero, kappa0=0.0))


# ---------------------------------------------------------------------------
# outer maps


@dataclass(frozen=True)
class ScalarConvexOracle:
    eval: Callable[[np.ndarray], float]
    subgrad: Callable[[np.ndarray], np.ndarray]

    def __call__(self, y):
        return self.eval(y)


@dataclass(frozen=True)
class InnerMap:
    """phi, batched: ``eval(Z (N, l)) -> (N, l_phi)`` and ``jac(Z) -> (N, l_phi, l)``."""

    eval: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    dim_in: int
    dim_out: int

    @classmethod
    def from_components(cls, comps: Sequence[ScalarConvexOracle], dim_in: int) -> "InnerMap":
        comps = tuple(comps)

        def ev(Z):
            return np.stack([np.apply_along_axis(c.eval, 1, Z) for c in comps], axis=1)

        def jac(Z):
            return np.stack([np.apply_along_axis(c.subgrad, 1, Z) for c in comps], axis=1)

        return cls(ev, jac, dim_in, len(comps))


@dataclass(frozen=True)
class OuterMap:
    psi: ScalarConvexOracle
    phi: InnerMap
    lip_psi: Optional[float] = None
    lip_phi: Optional[float] = None
    isotone: bool = True

    @property
    def dim_in(self):
        return self.phi.dim_in

    @property
    def dim_mid(self):
        return self.phi.dim_out


def psi_identity() -> ScalarConvexOracle:
    return ScalarConvexOracle(lambda y: float(y[0]), lambda y: np.ones(1))


def psi_weighted_sum(weights) -> ScalarConvexOracle:
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("isotone sum needs nonnegative weights")
    return ScalarConvexOracle(lambda y: float(w @ y), lambda y: w.copy())


def psi_weighted_max(groups: Sequence[Sequence[int]], weights: Sequence[Sequence[float]], dim: int) -> ScalarConvexOracle:
    """``max_k sum_i weights[k][i] * y[groups[k][i]]``; ties go to the lowest k."""
    groups = [np.asarray(g, dtype=int) for g in groups]
    weights = [np.asarray(w, dtype=float) for w in weights]
    if any(np.any(w < 0) for w in weights):
        raise ValueError("isotone max needs nonnegative weights")

    def vals(y):
        return np.array([w @ y[g] for g, w in zip(groups, weights)])

    def sub(y):
        k = int(np.argmax(vals(y)))
        out = np.zeros(dim)
        np.add.at(out, groups[k], weights[k])
        return out

    return ScalarConvexOracle(lambda y: float(np.max(vals(y))), sub)


def phi_identity(dim: int) -> InnerMap:
    eye = np.eye(dim)
    return InnerMap(lambda Z: np.array(Z, dtype=float), lambda Z: np.broadcast_to(eye, (Z.shape[0], dim, dim)), dim, dim)


def phi_positive_part(dim: int) -> InnerMap:
    """Componentwise ``max(0, z)``; slope 0 at the kink."""

    def jac(Z):
        J = np.zeros((Z.shape[0], dim, dim))
        idx = np.arange(dim)
        J[:, idx, idx] = (Z > 0).astype(float)
        return J

    return InnerMap(lambda Z: np.maximum(Z, 0.0), jac, dim, dim)


def phi_sum_positive(dim: int) -> InnerMap:
    """``[z_1 + ... + z_dim]_+`` as a one-output map; slope 0 at the kink."""

    def ev(Z):
        return np.maximum(Z.sum(axis=1, keepdims=True), 0.0)

    def jac(Z):
        on = (Z.sum(axis=1) > 0).astype(float)
        return np.repeat(on[:, None, None], dim, axis=2)

    return InnerMap(ev, jac, dim, 1)


def compound_value(outer: OuterMap, Gv: np.ndarray, Fv: np.ndarray) -> float:
    """``psi(mean_t phi(Gv[t], mean_s Fv[s]))`` for already evaluated inner maps."""
    Gv = np.asarray(Gv, dtype=float)
    n = Gv.shape[0]
    if Fv.shape[1]:
        Z = np.hstack([Gv, np.broadcast_to(Fv.mean(axis=0), (n, Fv.shape[1]))])
    else:
        Z = Gv
    return float(outer.psi(outer.phi.eval(Z).mean(axis=0)))


# ---------------------------------------------------------------------------
# problem


@dataclass(frozen=True)
class CompoundProblem:
    outer: OuterMap
    G: RandomFn
    F: RandomFn
    X: FeasibleSet
    distribution: Optional[DistributionSpec] = None
    name: str = ""
    lifted: dict = field(default_factory=dict)

    def __post_init__(self):
        lG, lF = self.G.dim_out, self.F.dim_out
        if lG + lF <= 0:
            raise ProblemStructureError("need l_G + l_F > 0")
        if self.outer.dim_in != lG + lF:
            raise ProblemStructureError(
                f"phi takes {self.outer.dim_in} inputs but l_G + l_F = {lG} + {lF} = {lG + lF}"
            )

    @property
    def n(self) -> int:
        return self.X.dim


# ---------------------------------------------------------------------------
# validation


@dataclass
class ContractResult:
    name: str
    passed: bool
    worst_violation: float
    skipped: bool = False
    note: str = ""


@dataclass
class ValidationReport:
    contracts: List[ContractResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.contracts)

    def __getitem__(self, name) -> ContractResult:
        for c in self.contracts:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> List[ContractResult]:
        return [c for c in self.contracts if not c.passed]

    def __str__(self):
        lines = []
        for c in self.contracts:
            tag = "skip" if c.skipped else ("pass" if c.passed else "FAIL")
            lines.append(f"{tag:4s} {c.name:28s} worst={c.worst_violation:.3e} {c.note}".rstrip())
        return "\n".join(lines)


def _contract(name, violations, note=""):
    v = np.asarray(violations, dtype=float).ravel()
    worst = float(np.max(v)) if v.size else 0.0
    return ContractResult(name, bool(worst <= 0.0), max(worst, 0.0), note=note)


def _probe_inputs(p: CompoundProblem, xs, xi, rng):
    """Points in the domains of phi and psi near the values the problem produces."""
    Z = []
    for x in xs:
        g = p.G(x, xi)
        fbar = np.broadcast_to(p.F(x, xi).mean(axis=0), (xi.shape[0], p.F.dim_out))
        Z.append(np.hstack([g, fbar]))
    Z = np.vstack(Z)
    scale = 1.0 + np.abs(Z)
    Z = Z + scale * rng.standard_normal(Z.shape)
    Y = p.outer.phi.eval(Z)
    Y = Y + (1.0 + np.abs(Y)) * rng.standard_normal(Y.shape)
    return Z, Y


def validate_problem(p: CompoundProblem, probe_count: int = 64, rng_seed: int = 0,
                     xi: Optional[np.ndarray] = None, tol: float = 1e-9) -> ValidationReport:
    """Spot-check the standing contracts of ``p`` on random probes.

    Checks convexity, isotonicity and subgradients of the outer maps, and
    touching, majorization, convexity and the declared ``kappa0`` upper bound
    of the canonical surrogates of ``G`` and ``F``. Probes draw ``xi`` from
    ``p.distribution`` unless a sample matrix is passed.
    """
    from .surrogate import build_surrogate

    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    if xi is None:
        if p.distribution is None:
            raise ValueError("problem has no distribution; pass xi probes explicitly")
        xi = SampleStream(p.distribution, rng_seed, role="validate").draw(max(4, min(probe_count, 64)))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))

    results: List[ContractResult] = []
    xs = p.X.sample(rng, probe_count)
    Z, Y = _probe_inputs(p, xs[: min(8, probe_count)], xi, rng)
    Z = Z[rng.integers(0, Z.shape[0], size=probe_count)]
    Y = Y[rng.integers(0, Y.shape[0], size=probe_count)]
    phi, psi = p.outer.phi, p.outer.psi

    # convexity on sampled triples
    perm = rng.permutation(probe_count)
    lam = rng.random(probe_count)
    Zm = lam[:, None] * Z + (1 - lam[:, None]) * Z[perm]
    pv, pv2, pvm = phi.eval(Z), phi.eval(Z[perm]), phi.eval(Zm)
    viol_phi = pvm - (lam[:, None] * pv + (1 - lam[:, None]) * pv2) - tol * (1 + np.abs(pv) + np.abs(pv2))
    Ym = lam[:, None] * Y + (1 - lam[:, None]) * Y[perm]
    sv = np.array([psi(y) for y in Y])
    svm = np.array([psi(y) for y in Ym])
    viol_psi = svm - (lam * sv + (1 - lam) * sv[perm]) - tol * (1 + np.abs(sv) + np.abs(sv[perm]))
    results.append(_contract("outer.convexity", np.concatenate([viol_phi.ravel(), viol_psi])))

    # isotonicity on ordered pairs u <= v
    if p.outer.isotone:
        Zv = Z + np.abs(rng.standard_normal(Z.shape)) * (1 + np.abs(Z))
        Yv = Y + np.abs(rng.standard_normal(Y.shape)) * (1 + np.abs(Y))
        pvv = phi.eval(Zv)
        svv = np.array([psi(y) for y in Yv])
        viol = np.concatenate([
            (pv - pvv - tol * (1 + np.abs(pv))).ravel(),
            sv - svv - tol * (1 + np.abs(sv)),
        ])
        results.append(_contract("outer.isotonicity", viol))

    # subgradient inequality
    J = phi.jac(Z)
    lin = pv + np.einsum("toi,ti->to", J, Z[perm] - Z)
    viol_phi = lin - pv2 - tol * (1 + np.abs(pv2))
    gs = np.array([psi.subgrad(y) for y in Y])
    viol_psi = sv + np.einsum("ti,ti->t", gs, Y[perm] - Y) - sv[perm] - tol * (1 + np.abs(sv[perm]))
    results.append(_contract("outer.subgradient", np.concatenate([viol_phi.ravel(), viol_psi])))

    # surrogate contracts for each inner map
    touch, major, cvx, srst = [], [], [], []
    kappas = {}
    for label, fn in (("G", p.G), ("F", p.F)):
        if fn.dim_out == 0:
            continue
        kappas[label] = fn.declared_kappa0()
        for i in range(probe_count):
            xb = xs[i]
            piece = build_surrogate(fn, xb, xi)
            base_val = fn(xb, xi)
            touch.append(np.abs(piece.value(xb) - base_val) - tol * (1 + np.abs(base_val)))
            x1, x2 = xs[perm[i]], xs[(i + 1) % probe_count]
            for x in (x1, x2):
                gx = fn(x, xi)
                hx = piece.value(x)
                major.append(gx - hx - tol * (1 + np.abs(gx)))
                if kappas[label] is not None:
                    bound = gx + 0.5 * kappas[label] * np.sum((x - xb) ** 2)
                    srst.append(hx - bound - tol * (1 + np.abs(bound)))
            t = lam[i]
            xm = t * x1 + (1 - t) * x2
            h1, h2, hm = piece.value(x1), piece.value(x2), piece.value(xm)
            cvx.append(hm - (t * h1 + (1 - t) * h2) - tol * (1 + np.abs(h1) + np.abs(h2)))
    results.append(_contract("surrogate.touching", np.concatenate([v.ravel() for v in touch]) if touch else []))
    results.append(_contract("surrogate.majorization", np.concatenate([v.ravel() for v in major]) if major else []))
    results.append(_contract("surrogate.convexity", np.concatenate([v.ravel() for v in cvx]) if cvx else []))
    if any(k is None for k in kappas.values()):
        results.append(ContractResult("surrogate.sr_st", True, 0.0, skipped=True,
                                      note="no kappa0 declared"))
    else:
        results.append(_contract("surrogate.sr_st", np.concatenate([v.ravel() for v in srst]) if srst else []))
    return ValidationReport(results)


# ---------------------------------------------------------------------------
# exact penalization of compound constraints


def _same_set(a, b) -> bool:
    if a is b:
        return True
    if type(a) is not type(b) or not dataclasses.is_dataclass(a):
        return False
    for f in dataclasses.fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
            if not np.array_equal(va, vb):
                return False
        elif isinstance(va, tuple) and va and isinstance(va[0], FeasibleSet):
            if len(va) != len(vb) or not all(_same_set(u, v) for u, v in zip(va, vb)):
                return False
        elif va != vb:
            return False
    return True


def penalize_constraints(objective: CompoundProblem, constraints: Sequence[CompoundProblem],
                         rho_pen: float) -> CompoundProblem:
    """Fold constraints ``psi_i(...) <= 0`` into the objective as ``rho_pen * sum_i max(psi_i, 0)``.

    The stacked problem evaluates every block on the same samples, so all
    problems must share the feasible set and the xi-distribution.
    """
    constraints = list(constraints)
    if not constraints:
        return objective
    if rho_pen <= 0:
        raise ValueError("rho_pen must be positive")
    probs = [objective] + constraints
    for c in constraints:
        if not _same_set(c.X, objective.X):
            raise ProblemStructureError("penalized constraints must share the feasible set X")

    lGs = [q.G.dim_out for q in probs]
    lFs = [q.F.dim_out for q in probs]
    lG, lF = sum(lGs), sum(lFs)
    gstart = np.concatenate([[0], np.cumsum(lGs)])
    fstart = lG + np.concatenate([[0], np.cumsum(lFs)])
    cols = [np.r_[gstart[i]:gstart[i + 1], fstart[i]:fstart[i + 1]].astype(int) for i in range(len(probs))]
    mids = [q.outer.dim_mid for q in probs]
    mstart = np.concatenate([[0], np.cumsum(mids)])
    dim_mid = int(mstart[-1])

    def phi_eval(Z):
        return np.hstack([q.outer.phi.eval(Z[:, c]) for q, c in zip(probs, cols)])

    def phi_jac(Z):
        J = np.zeros((Z.shape[0], dim_mid, lG + lF))
        for i, (q, c) in enumerate(zip(probs, cols)):
            J[:, mstart[i]:mstart[i + 1], c] = q.outer.phi.jac(Z[:, c])
        return J

    def psi_eval(y):
        total = objective.outer.psi(y[mstart[0]:mstart[1]])
        for i, q in enumerate(constraints, start=1):
            total += rho_pen * max(q.outer.psi(y[mstart[i]:mstart[i + 1]]), 0.0)
        return float(total)

    def psi_sub(y):
        g = np.zeros(dim_mid)
        g[mstart[0]:mstart[1]] = objective.outer.psi.subgrad(y[mstart[0]:mstart[1]])
        for i, q in enumerate(constraints, start=1):
            yi = y[mstart[i]:mstart[i + 1]]
            if q.outer.psi(yi) > 0:
                g[mstart[i]:mstart[i + 1]] = rho_pen * q.outer.psi.subgrad(yi)
        return g

    outer = OuterMap(ScalarConvexOracle(psi_eval, psi_sub),
                     InnerMap(phi_eval, phi_jac, lG + lF, dim_mid),
                     isotone=all(q.outer.isotone for q in probs))
    return CompoundProblem(outer, stack_fns([q.G for q in probs]), stack_fns([q.F for q in probs]),
                           objective.X, objective.distribution, name=f"penalized({objective.name})")
