"""Compact convex feasible sets with exact Euclidean projections."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "FeasibleSet",
    "Box",
    "Simplex",
    "Ball",
    "Custom",
    "Product",
    "project",
    "project_simplex",
]


def project_simplex(y, radius=1.0):
    """Project ``y`` onto ``{x >= 0, sum(x) = radius}`` by the sort-threshold rule."""
    y = np.asarray(y, dtype=float)
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - radius
    ind = np.arange(1, y.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(y - theta, 0.0)


class FeasibleSet:
    """Base class. Subclasses provide ``dim``, ``project`` and ``diameter``."""

    dim: int

    def project(self, y):
        raise NotImplementedError

    @property
    def diameter(self) -> Optional[float]:
        return None

    def contains(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.linalg.norm(self.project(x) - x) <= tol * (1.0 + np.linalg.norm(x)))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        """Draw ``k`` points of the set (used for contract probes, not for SAA)."""
        raise NotImplementedError

    def polyhedral(self):
        """``(lo, hi, A_eq, b_eq)`` when the set is a box intersected with equalities, else ``None``."""
        return None

    def active_normals(self, y, tol=1e-9) -> Optional[np.ndarray]:
        """Generators of the normal cone at ``y`` (rows); ``None`` if unknown."""
        return None

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {y.shape}")
        return y


@dataclass(frozen=True)
class Box(FeasibleSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(lo > hi) or not np.all(np.isfinite(lo + hi)):
            raise ValueError("Box needs finite bounds with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def project(self, y):
        return np.clip(self._check(y), self.lo, self.hi)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    def sample(self, rng, k):
        return self.lo + (self.hi - self.lo) * rng.random((k, self.dim))

    def polyhedral(self):
        return self.lo, self.hi, np.zeros((0, self.dim)), np.zeros(0)

    def active_normals(self, y, tol=1e-9):
        eye = np.eye(self.dim)
        scale = tol * (1.0 + np.abs(self.hi - self.lo))
        return np.vstack([-eye[y <= self.lo + scale], eye[y >= self.hi - scale]])


@dataclass(frozen=True)
class Simplex(FeasibleSet):
    n: int
    radius: float = 1.0

    @property
    def dim(self):
        return self.n

    def project(self, y):
        return project_simplex(self._check(y), self.radius)

    @property
    def diameter(self):
        return float(np.sqrt(2.0) * self.radius) if self.n > 1 else 0.0

    def sample(self, rng, k):
        return self.radius * rng.dirichlet(np.ones(self.n), size=k)

    def polyhedral(self):
        return (np.zeros(self.n), np.full(self.n, float(self.radius)), np.ones((1, self.n)),
                np.array([float(self.radius)]))

    def active_normals(self, y, tol=1e-9):
        eye = np.eye(self.n)
        one = np.ones((1, self.n))
        return np.vstack([-eye[y <= tol * (1.0 + self.radius)], one, -one])


@dataclass(frozen=True)
class Ball(FeasibleSet):
    center: np.ndarray
    radius: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius < 0:
            raise ValueError("Ball radius must be nonnegative")

    @property
    def dim(self):
        return self.center.size

    def project(self, y):
        d = self._check(y) - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return self.center + d
        return self.center + d * (self.radius / nrm)

    @property
    def diameter(self):
        return 2.0 * float(self.radius)

    def active_normals(self, y, tol=1e-9):
        d = y - self.center
        if np.linalg.norm(d) >= self.radius * (1.0 - tol):
            return d[None, :]
        return np.zeros((0, self.dim))

    def sample(self, rng, k):
        d = rng.standard_normal((k, self.dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.random(k) ** (1.0 / self.dim)
        return self.center + d * r[:, None]


@dataclass(frozen=True)
class Custom(FeasibleSet):
    """User-supplied projection oracle. The caller is responsible for convexity."""

    n: int
    projector: Callable[[np.ndarray], np.ndarray]
    diam: Optional[float] = None
    probe_scale: float = 1.0

    @property
    def dim(self):
        return self.n

    def project(self, y):
        return np.asarray(self.projector(self._check(y)), dtype=float)

    @property
    def diameter(self):
        return self.diam

    def sample(self, rng, k):
        return np.array([self.project(v) for v in self.probe_scale * rng.standard_normal((k, self.n))])


@dataclass(frozen=True)
class Product(FeasibleSet):
    """Cartesian product of sets, e.g. portfolio weights times a lifted scalar."""

    blocks: Sequence[FeasibleSet] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("Product needs at least one block")

    @property
    def dim(self):
        return sum(b.dim for b in self.blocks)

    def _splits(self):
        return np.cumsum([b.dim for b in self.blocks])[:-1]

    def project(self, y):
        y = self._check(y)
        out, start = np.empty_like(y), 0
        for b in self.blocks:
            out[start:start + b.dim] = b.project(y[start:start + b.dim])
            start += b.dim
        return out

    @property
    def diameter(self):
        ds = [b.diameter for b in self.blocks]
        if any(d is None for d in ds):
            return None
        return float(np.sqrt(sum(d * d for d in ds)))

    def sample(self, rng, k):
        return np.hstack([b.sample(rng, k) for b in self.blocks])

    def polyhedral(self):
        parts = [b.polyhedral() for b in self.blocks]
        if any(p is None for p in parts):
            return None
        lo = np.concatenate([p[0] for p in parts])
        hi = np.concatenate([p[1] for p in parts])
        rows, rhs, start = [], [], 0
        for b, p in zip(self.blocks, parts):
            A = np.zeros((p[2].shape[0], self.dim))
            A[:, start:start + b.dim] = p[2]
            rows.append(A)
            rhs.append(p[3])
            start += b.dim
        return lo, hi, np.vstack(rows), np.concatenate(rhs)

    def active_normals(self, y, tol=1e-9):
        out, start = [], 0
        for b, part in zip(self.blocks, np.split(y, self._splits())):
            nb = b.active_normals(part, tol)
            if nb is None:
                return None
            A = np.zeros((nb.shape[0], self.dim))
            A[:, start:start + b.dim] = nb
            out.append(A)
            start += b.dim
        return np.vstack(out)


def project(set: FeasibleSet, y) -> np.ndarray:
    """Euclidean projection of ``y`` onto ``set``."""
    return set.project(y)
