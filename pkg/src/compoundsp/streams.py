"""Seeded sample streams.

Every stream is a PCG64 generator seeded through ``numpy.random.SeedSequence``
with a spawn key hashed from a role tag, so the xi-, eta- and residual streams
of one run never share draws. Each distribution consumes a fixed number of
uniform doubles per row, which makes a draw of ``a + b`` rows identical to a
draw of ``a`` rows followed by ``b`` rows.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "DistributionSpec",
    "EmpiricalRows",
    "Gaussian",
    "FiniteMixture",
    "Stacked",
    "SampleBatch",
    "SampleStream",
    "role_seed_sequence",
    "read_rows_csv",
]


def role_seed_sequence(seed: int, role: str) -> np.random.SeedSequence:
    """Seed sequence for the sub-stream ``role`` of master ``seed``."""
    tag = zlib.crc32(role.encode("utf-8"))
    return np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(tag,))


class DistributionSpec:
    dim: int
    n_uniforms: int

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map a ``(k, n_uniforms)`` block of uniforms on [0, 1) to ``(k, dim)`` rows."""
        raise NotImplementedError


@dataclass(frozen=True)
class EmpiricalRows(DistributionSpec):
    """Uniform resampling, with replacement, of the rows of a data matrix."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.shape[0] == 0:
            raise ValueError("EmpiricalRows needs at least one row")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self):
        return self.rows.shape[1]

    n_uniforms = 1

    def transform(self, u):
        idx = np.minimum((u[:, 0] * self.rows.shape[0]).astype(np.int64), self.rows.shape[0] - 1)
        return self.rows[idx]


@dataclass(frozen=True)
class Gaussian(DistributionSpec):
    """Independent normal coordinates, generated by the cosine branch of Box-Muller."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.broadcast_to(np.asarray(self.var, dtype=float), mean.shape).copy()
        if np.any(var < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self):
        return self.mean.size

    @property
    def n_uniforms(self):
        return 2 * self.dim

    def transform(self, u):
        m = self.dim
        r = np.sqrt(-2.0 * np.log1p(-u[:, :m]))
        z = r * np.cos(2.0 * np.pi * u[:, m:])
        return self.mean + np.sqrt(self.var) * z


@dataclass(frozen=True)
class FiniteMixture(DistributionSpec):
    """Draw a component index with probabilities ``weights``, then a row from it."""

    weights: np.ndarray
    components: Sequence[DistributionSpec]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if w.ndim != 1 or w.size != len(comps) or w.size == 0:
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be a probability vector")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("mixture components must share a dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self):
        return self.components[0].dim

    @property
    def n_uniforms(self):
        return 1 + max(c.n_uniforms for c in self.components)

    def transform(self, u):
        cum = np.cumsum(self.weights)
        k = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), len(self.components) - 1)
        out = np.empty((u.shape[0], self.dim))
        for j, comp in enumerate(self.components):
            sel = k == j
            if np.any(sel):
                out[sel] = comp.transform(u[sel, 1 : 1 + comp.n_uniforms])
        return out


@dataclass(frozen=True)
class Stacked(DistributionSpec):
    """Independent draws from each component, concatenated into one row."""

    components: Sequence[DistributionSpec] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("Stacked needs at least one component")

    @property
    def dim(self):
        return sum(c.dim for c in self.components)

    @property
    def n_uniforms(self):
        return sum(c.n_uniforms for c in self.components)

    @property
    def blocks(self):
        """Column slices of each component inside a stacked row."""
        edges = np.concatenate([[0], np.cumsum([c.dim for c in self.components])])
        return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def transform(self, u):
        parts, start = [], 0
        for c in self.components:
            parts.append(c.transform(u[:, start : start + c.n_uniforms]))
            start += c.n_uniforms
        return np.hstack(parts)


@dataclass(frozen=True)
class SampleBatch:
    """Immutable block of xi rows; ``rows[:N_prev]`` is the previous batch."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("a batch is a 2-D array of rows")
        if rows.flags.writeable:
            rows = rows.copy()
            rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def __len__(self):
        return self.size

    def is_prefix_of(self, other: "SampleBatch") -> bool:
        return self.size <= other.size and np.array_equal(self.rows, other.rows[: self.size])


class SampleStream:
    """Single-owner stream of i.i.d. rows; the draw counter only moves forward."""

    def __init__(self, distribution: DistributionSpec, seed: int, role: str = "xi"):
        self.distribution = distribution
        self.seed = int(seed)
        self.role = role
        self.counter = 0
        self._gen = np.random.Generator(np.random.PCG64(role_seed_sequence(seed, role)))

    def draw(self, k: int) -> np.ndarray:
        if k < 0:
            raise ValueError("cannot draw a negative number of rows")
        u = self._gen.random((k, self.distribution.n_uniforms))
        self.counter += k
        return self.distribution.transform(u)

    def batch(self, k: int) -> SampleBatch:
        return SampleBatch(self.draw(k))

    def extend(self, batch: SampleBatch | None, size: int) -> SampleBatch:
        """Grow ``batch`` to ``size`` rows by appending fresh draws."""
        have = 0 if batch is None else batch.size
        if size < have:
            raise ValueError("batches only grow")
        new = self.draw(size - have)
        if batch is None:
            return SampleBatch(new)
        return SampleBatch(np.vstack([batch.rows, new]))


def read_rows_csv(path) -> np.ndarray:
    """Read xi rows from a headerless CSV of decimal floats."""
    data = np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: no rows")
    return data
