"""Convex majorants of the inner maps and the sampled surrogate of the objective.

One canonical family member is built per structure tag:

* ``Smooth``: ``G(x) + kappa0/2 |x - x'|^2``
* ``DcSmoothConcave``: ``g(x) - h(x') - a^T (x - x')`` with ``a`` from ``h.jac``
* ``DcMaxSmooth``: the same linearization of the lowest-index maximizing piece,
  or, for the enhanced method, of any piece in the eps-active set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .problem import (
    CompoundProblem,
    DcMaxSmooth,
    DcSmoothConcave,
    OuterMap,
    RandomFn,
    Smooth,
    Stack,
    VecOracle,
)
from .streams import SampleBatch

__all__ = [
    "LinearizedPiece",
    "StackedPiece",
    "MaxSmoothFamily",
    "EpsActiveSet",
    "EnumerationCapError",
    "SurrogateModel",
    "default_eps",
    "build_smooth_surrogate",
    "build_dc_surrogate",
    "build_maxsmooth_surrogate",
    "build_surrogate",
    "active_set",
    "build_model",
    "surrogate_value_subgrad",
]


class EnumerationCapError(ValueError):
    """Too many eps-active tuples for the enhanced method."""


def default_eps(hmax) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(hmax))


@dataclass(frozen=True)
class LinearizedPiece:
    """``g(x, xi) - h0 - slope (x - base) + kappa/2 |x - base|^2``, batched over the rows of ``xi``.

    ``h0`` is ``(N, l)`` or ``(l,)``; ``slope`` is ``(N, l, n)`` or ``(l, n)``.
    """

    base: np.ndarray
    xi: np.ndarray
    convex: VecOracle
    h0: np.ndarray
    slope: np.ndarray
    kappa: float = 0.0

    @property
    def dim_out(self):
        return self.h0.shape[-1]

    def value(self, x):
        d = x - self.base
        v = self.convex.value(x, self.xi) - self.h0 - self.slope @ d
        if self.kappa:
            v = v + 0.5 * self.kappa * (d @ d)
        return v

    def jac(self, x):
        J = self.convex.jac(x, self.xi) - self.slope
        if self.kappa:
            J = J + self.kappa * (x - self.base)
        return J


@dataclass(frozen=True)
class StackedPiece:
    parts: Tuple

    @property
    def dim_out(self):
        return sum(p.dim_out for p in self.parts)

    def value(self, x):
        return np.hstack([p.value(x) for p in self.parts])

    def jac(self, x):
        return np.concatenate([p.jac(x) for p in self.parts], axis=1)


def build_smooth_surrogate(fn: RandomFn, x_base, xi) -> LinearizedPiece:
    tag = fn.structure
    if not isinstance(tag, Smooth):
        raise TypeError("build_smooth_surrogate needs a Smooth tag")
    x_base = np.asarray(x_base, dtype=float)
    l, n = fn.dim_out, x_base.size
    return LinearizedPiece(x_base, np.atleast_2d(xi), tag.fn, np.zeros(l), np.zeros((l, n)), float(tag.kappa0))


def _max_pieces_at(tag: DcMaxSmooth, x_base):
    hv = np.stack([np.asarray(p.value(x_base), dtype=float) for p in tag.pieces])  # (K, l)
    hg = np.stack([np.asarray(p.grad(x_base), dtype=float) for p in tag.pieces])   # (K, l, n)
    return hv, hg


def build_dc_surrogate(fn: RandomFn, x_base, xi, choice: Optional[Sequence[int]] = None) -> LinearizedPiece:
    """Linearize the concave part at ``x_base``.

    For a max-smooth concave part, ``choice`` names the linearized piece per
    component; by default the lowest-index maximizer is used.
    """
    tag = fn.structure
    x_base = np.asarray(x_base, dtype=float)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    if isinstance(tag, DcSmoothConcave):
        return LinearizedPiece(x_base, xi, tag.g, tag.h.value(x_base, xi), tag.h.jac(x_base, xi))
    if isinstance(tag, DcMaxSmooth):
        hv, hg = _max_pieces_at(tag, x_base)
        k = np.argmax(hv, axis=0) if choice is None else np.asarray(choice, dtype=int)
        idx = np.arange(fn.dim_out)
        return LinearizedPiece(x_base, xi, tag.g, hv[k, idx], hg[k, idx])
    raise TypeError("build_dc_surrogate needs a DC tag")


@dataclass(frozen=True)
class MaxSmoothFamily:
    """All eps-active linearizations of one max-smooth map, keyed by per-component piece tuple."""

    sets: Tuple[Tuple[int, ...], ...]
    pieces: Dict[Tuple[int, ...], LinearizedPiece]
    tag: DcMaxSmooth = field(repr=False, default=None)

    def min_value(self, x):
        """Componentwise minimum over active linearizations."""
        any_piece = next(iter(self.pieces.values()))
        base, xi = any_piece.base, any_piece.xi
        hv, hg = _max_pieces_at(self.tag, base)
        gx = self.tag.g.value(x, xi)
        lin = hv + hg @ (x - base)  # (K, l)
        best = np.array([max(lin[k, i] for k in ks) for i, ks in enumerate(self.sets)])
        return gx - best


def _active_indices(hv, eps) -> Tuple[Tuple[int, ...], ...]:
    hmax = hv.max(axis=0)
    e = default_eps(hmax) if eps is None else np.broadcast_to(float(eps), hmax.shape)
    return tuple(tuple(int(k) for k in np.nonzero(hv[:, i] >= hmax[i] - e[i])[0]) for i in range(hv.shape[1]))


def build_maxsmooth_surrogate(fn: RandomFn, x_base, xi, eps=None) -> MaxSmoothFamily:
    tag = fn.structure
    if not isinstance(tag, DcMaxSmooth):
        raise TypeError("build_maxsmooth_surrogate needs a DcMaxSmooth tag")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be positive")
    x_base = np.asarray(x_base, dtype=float)
    hv, _ = _max_pieces_at(tag, x_base)
    sets = _active_indices(hv, eps)
    pieces = {ks: build_dc_surrogate(fn, x_base, xi, ks) for ks in itertools.product(*sets)}
    return MaxSmoothFamily(sets, pieces, tag)


def build_surrogate(fn: RandomFn, x_base, xi, choice: Optional[Iterator[int]] = None):
    """Canonical surrogate of any tagged map; ``choice`` feeds piece indices to max-smooth slots in order."""
    tag = fn.structure
    if isinstance(tag, Stack):
        return StackedPiece(tuple(build_surrogate(f, x_base, xi, choice) for f in tag.parts))
    if isinstance(tag, Smooth):
        return build_smooth_surrogate(fn, x_base, xi)
    if isinstance(tag, DcMaxSmooth) and choice is not None:
        return build_dc_surrogate(fn, x_base, xi, [next(choice) for _ in range(fn.dim_out)])
    return build_dc_surrogate(fn, x_base, xi)


@dataclass(frozen=True)
class EpsActiveSet:
    """Eps-active piece indices for every max-smooth component slot, G slots first."""

    epsilon: Optional[float]
    G_sets: Tuple[Tuple[int, ...], ...]
    F_sets: Tuple[Tuple[int, ...], ...]

    @property
    def slots(self):
        return self.G_sets + self.F_sets

    @property
    def size(self) -> int:
        return int(np.prod([len(s) for s in self.slots])) if self.slots else 1

    def tuples(self) -> List[Tuple[int, ...]]:
        return list(itertools.product(*self.slots))

    def canonical(self) -> Tuple[int, ...]:
        """The lowest active index of every slot."""
        return tuple(s[0] for s in self.slots)


def _slot_sets(fn: RandomFn, x_base, eps):
    out = []
    for leaf in fn.leaves():
        if isinstance(leaf.structure, DcMaxSmooth):
            hv, _ = _max_pieces_at(leaf.structure, x_base)
            out.extend(_active_indices(hv, eps))
    return tuple(out)


def active_set(p: CompoundProblem, x_base, eps=None) -> EpsActiveSet:
    x_base = np.asarray(x_base, dtype=float)
    return EpsActiveSet(eps, _slot_sets(p.G, x_base, eps), _slot_sets(p.F, x_base, eps))


@dataclass(frozen=True)
class SurrogateModel:
    """``V(x) = psi(mean_t phi(G_hat_t(x), mean_s F_hat_s(x)))`` plus an optional prox term."""

    base: np.ndarray
    outer: OuterMap
    G_piece: Optional[object]
    F_piece: Optional[object]
    n_xi: int
    n_eta: int
    rho: Optional[float] = None
    center: Optional[np.ndarray] = None

    def with_prox(self, rho: float, center=None) -> "SurrogateModel":
        if not rho > 0:
            raise ValueError("rho must be positive")
        c = self.base if center is None else np.asarray(center, dtype=float)
        return SurrogateModel(self.base, self.outer, self.G_piece, self.F_piece, self.n_xi, self.n_eta, float(rho), c)

    def without_prox(self) -> "SurrogateModel":
        return SurrogateModel(self.base, self.outer, self.G_piece, self.F_piece, self.n_xi, self.n_eta)

    def _inner(self, x, need_jac):
        Gv = self.G_piece.value(x) if self.G_piece is not None else np.zeros((self.n_xi, 0))
        Fv = self.F_piece.value(x) if self.F_piece is not None else np.zeros((self.n_eta, 0))
        lF = Fv.shape[1]
        Fbar = Fv.mean(axis=0)
        N = Gv.shape[0] if Gv.shape[1] else 1
        Z = np.hstack([Gv, np.broadcast_to(Fbar, (N, lF))]) if Gv.shape[1] else Fbar[None, :]
        if not need_jac:
            return Z, None, None
        GJ = self.G_piece.jac(x) if self.G_piece is not None else None
        FJ = self.F_piece.jac(x).mean(axis=0) if self.F_piece is not None else None
        return Z, GJ, FJ

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        Z, _, _ = self._inner(x, False)
        v = float(self.outer.psi(self.outer.phi.eval(Z).mean(axis=0)))
        if self.rho is not None:
            d = x - self.center
            v += (d @ d) / (2.0 * self.rho)
        return v

    def value_subgrad(self, x):
        x = np.asarray(x, dtype=float)
        Z, GJ, FJ = self._inner(x, True)
        Y = self.outer.phi.eval(Z)
        ybar = Y.mean(axis=0)
        v = float(self.outer.psi(ybar))
        gpsi = np.asarray(self.outer.psi.subgrad(ybar), dtype=float)
        w = np.einsum("o,toi->ti", gpsi, self.outer.phi.jac(Z))  # (N, lG + lF)
        lG = 0 if self.G_piece is None else self.G_piece.dim_out
        g = np.zeros(x.size)
        if lG:
            g += np.einsum("ti,tin->n", w[:, :lG], GJ) / w.shape[0]
        if FJ is not None:
            g += w[:, lG:].mean(axis=0) @ FJ
        if self.rho is not None:
            d = x - self.center
            v += (d @ d) / (2.0 * self.rho)
            g += d / self.rho
        return v, g


def surrogate_value_subgrad(m: SurrogateModel, x):
    return m.value_subgrad(x)


def _rows(batch):
    if batch is None:
        return None
    return batch.rows if isinstance(batch, SampleBatch) else np.atleast_2d(np.asarray(batch, dtype=float))


def build_model(p: CompoundProblem, x_base, xi_batch, eta_batch, choice: Optional[Sequence[int]] = None) -> SurrogateModel:
    """Surrogate of the SAA objective at ``x_base``; ``choice`` selects max-smooth pieces (G slots then F slots)."""
    x_base = np.asarray(x_base, dtype=float)
    xi, eta = _rows(xi_batch), _rows(eta_batch)
    if xi is None or eta is None or xi.shape[0] == 0 or eta.shape[0] == 0:
        raise ValueError("sample batches must be nonempty")
    it = iter(choice) if choice is not None else None
    Gp = build_surrogate(p.G, x_base, xi, it) if p.G.dim_out else None
    Fp = build_surrogate(p.F, x_base, eta, it) if p.F.dim_out else None
    return SurrogateModel(x_base, p.outer, Gp, Fp, xi.shape[0], eta.shape[0])
