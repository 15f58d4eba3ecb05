import numpy as np
import pytest

from compoundsp.problem import (
    CompoundProblem,
    DcSmoothConcave,
    OuterMap,
    RandomFn,
    Smooth,
    VecOracle,
    phi_identity,
    psi_identity,
)
from compoundsp.sets import Box
from compoundsp.streams import EmpiricalRows


def det_oracle(value, grad):
    """Deterministic scalar oracle in vectorized form from ``value(x) -> (l,)`` and ``grad(x) -> (l, n)``."""

    def v(x, xi):
        return np.broadcast_to(np.atleast_1d(value(x)), (xi.shape[0], np.atleast_1d(value(x)).size)).copy()

    def j(x, xi):
        g = np.atleast_2d(grad(x))
        return np.broadcast_to(g, (xi.shape[0],) + g.shape).copy()

    return VecOracle(v, j)


def zero_oracle(l, n):
    return VecOracle(lambda x, xi: np.zeros((xi.shape[0], l)), lambda x, xi: np.zeros((xi.shape[0], l, n)))


def dc_fn(g, dg, h, dh, kappa0=None, n=1):
    return RandomFn(1, DcSmoothConcave(det_oracle(g, dg), det_oracle(h, dh), kappa0=kappa0))


def convex_fn(g, dg, n=1):
    return RandomFn(1, DcSmoothConcave(det_oracle(g, dg), zero_oracle(1, n), kappa0=0.0))


def smooth_fn(g, dg, kappa0):
    return RandomFn(1, Smooth(det_oracle(g, dg), kappa0))


def deterministic_problem(G, X, outer=None):
    outer = outer or OuterMap(psi_identity(), phi_identity(1))
    return CompoundProblem(outer, G, RandomFn.absent(), X, EmpiricalRows([[0.0]]))


@pytest.fixture
def xi1():
    return np.zeros((1, 1))


@pytest.fixture
def box1():
    return Box([-2.0], [2.0])
