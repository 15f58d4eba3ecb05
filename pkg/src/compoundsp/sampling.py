"""Sample-size schedules, SAA evaluation and the empirical SAA error rate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .problem import (
    CompoundProblem,
    OuterMap,
    RandomFn,
    VecOracle,
    DcSmoothConcave,
    compound_value,
    phi_positive_part,
    psi_identity,
)
from .sets import Box
from .streams import (
    DistributionSpec,
    EmpiricalRows,
    FiniteMixture,
    Gaussian,
    SampleBatch,
    SampleStream,
    Stacked,
)

__all__ = [
    "GrowthSchedule",
    "ScheduleError",
    "ScheduleCheck",
    "schedule_generate",
    "schedule_validate",
    "saa_objective",
    "RateTable",
    "saa_rate_experiment",
    "gaussian_hinge_instance",
    "SampleStream",
    "SampleBatch",
    "DistributionSpec",
    "EmpiricalRows",
    "Gaussian",
    "FiniteMixture",
    "Stacked",
]


class ScheduleError(ValueError):
    def __init__(self, k: int, lower: float, upper: float):
        super().__init__(f"schedule infeasible at k={k}: lower bound {lower:g} exceeds upper bound {upper:g}")
        self.k = k
        self.lower = lower
        self.upper = upper


@dataclass(frozen=True)
class GrowthSchedule:
    """Polynomial sample-size growth ``N_k ~ c2 k^(1+2 c1)`` with ratio cap ``1/(1 - c3/k)`` past ``k_bar``."""

    c1: float = 0.25
    c2: float = 4.0
    c3: float = 2.0
    k_bar: int = 3
    N_init: int = 4
    horizon: int = 30

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("c1 and c2 must be positive")
        if not self.c3 < self.k_bar:
            raise ValueError("need c3 < k_bar")
        if self.N_init < 1 or self.horizon < 0:
            raise ValueError("N_init >= 1 and horizon >= 0 required")

    def lower(self, k: int, prev: int) -> float:
        return max(prev + 1, self.c2 * k ** (1 + 2 * self.c1))

    def upper(self, k: int, prev: int) -> float:
        return prev / (1.0 - self.c3 / k)


@dataclass(frozen=True)
class ScheduleCheck:
    ok: bool
    first_violation: Optional[int] = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def schedule_generate(s: GrowthSchedule) -> List[int]:
    """``N_1..N_horizon``; warm-up ``N_k = N_{k-1} + k`` (at least the polynomial floor) up to ``k_bar``."""
    seq: List[int] = []
    for k in range(1, s.horizon + 1):
        floor_k = math.ceil(s.c2 * k ** (1 + 2 * s.c1) - 1e-9)
        if k == 1:
            N = s.N_init
        elif k <= s.k_bar:
            N = max(seq[-1] + k, floor_k)
        else:
            prev = seq[-1]
            N = max(prev + 1, floor_k)
            if N > s.upper(k, prev) * (1 + 1e-12):
                raise ScheduleError(k, s.lower(k, prev), s.upper(k, prev))
        seq.append(int(N))
    return seq


def schedule_validate(seq: Sequence[int], s: GrowthSchedule) -> ScheduleCheck:
    if len(seq) == 0:
        raise ValueError("empty schedule")
    for k in range(s.k_bar + 1, len(seq) + 1):
        prev, cur = seq[k - 2], seq[k - 1]
        lo = s.lower(k, prev)
        hi = s.upper(k, prev)
        if cur < lo - 1e-9:
            return ScheduleCheck(False, k, f"N_{k}={cur} below lower bound {lo:g}")
        if cur > hi * (1 + 1e-12):
            return ScheduleCheck(False, k, f"N_{k}={cur} above ratio bound {hi:g}")
    return ScheduleCheck(True)


def _rows(batch) -> np.ndarray:
    rows = batch.rows if isinstance(batch, SampleBatch) else np.atleast_2d(np.asarray(batch, dtype=float))
    if rows.shape[0] == 0:
        raise ValueError("sample batch is empty")
    return rows


def saa_objective(p: CompoundProblem, xi_batch, eta_batch, x) -> float:
    """SAA value ``psi(1/n sum_t phi(G(x, xi_t), 1/m sum_s F(x, eta_s)))``."""
    x = np.asarray(x, dtype=float)
    xi, eta = _rows(xi_batch), _rows(eta_batch)
    return compound_value(p.outer, p.G(x, xi), p.F(x, eta))


@dataclass
class RateTable:
    sizes: List[int]
    mean_abs_error: List[float]
    slope: Optional[float]
    exact: bool
    high_variance: bool

    def to_csv(self) -> str:
        lines = ["N,mean_abs_error"]
        lines += [f"{n},{e:.12g}" for n, e in zip(self.sizes, self.mean_abs_error)]
        return "\n".join(lines) + "\n"


def saa_rate_experiment(p: CompoundProblem, theta: Callable[[np.ndarray], float], x, sizes: Sequence[int],
                        trials: int, seed: int) -> RateTable:
    """Mean ``|SAA_{N,N}(x) - theta(x)|`` over independent trials, and its log-log slope in ``N``."""
    sizes = [int(n) for n in sizes]
    if len(sizes) < 2:
        raise ValueError("need at least two sample sizes")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = np.asarray(x, dtype=float)
    target = float(theta(x))
    errs = []
    for N in sizes:
        xs = SampleStream(p.distribution, seed, role=f"rate-xi-{N}")
        es = SampleStream(p.distribution, seed, role=f"rate-eta-{N}")
        e = [abs(saa_objective(p, xs.draw(N), es.draw(N), x) - target) for _ in range(trials)]
        errs.append(float(np.mean(e)))
    errs_a = np.asarray(errs)
    exact = bool(np.all(errs_a <= 1e-14 * (1 + abs(target))))
    slope = None
    if not exact and np.all(errs_a > 0):
        slope = float(np.polyfit(np.log(sizes), np.log(errs_a), 1)[0])
    return RateTable(sizes, errs, slope, exact, trials < 30)


def gaussian_hinge_instance(x0: float = 0.0) -> Tuple[CompoundProblem, np.ndarray, Callable]:
    """``E[x - xi]_+`` with ``xi ~ N(0, 1)`` on ``X = [-1, 1]``, with a quadrature value oracle."""

    def value(x, xi):
        return x[0] - xi[:, :1]

    def jac(x, xi):
        return np.ones((xi.shape[0], 1, 1))

    zero = VecOracle(lambda x, xi: np.zeros((xi.shape[0], 1)), lambda x, xi: np.zeros((xi.shape[0], 1, 1)))
    G = RandomFn(1, DcSmoothConcave(VecOracle(value, jac), zero, kappa0=0.0))
    p = CompoundProblem(OuterMap(psi_identity(), phi_positive_part(1)), G, RandomFn.absent(),
                        Box([-1.0], [1.0]), Gaussian([0.0], [1.0]), name="gaussian-hinge")

    def theta(x):
        pdf = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
        val, _ = integrate.quad(lambda t: (x[0] - t) * pdf(t), -np.inf, x[0], epsabs=1e-13, epsrel=1e-13)
        return val

    return p, np.array([x0]), theta
