"""The stochastic majorization-minimization driver, its enhanced variant and the residual stopping rule."""

from __future__ import annotations

import io
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .problem import CompoundProblem, DcMaxSmooth
from .sampling import GrowthSchedule, saa_objective, schedule_generate, schedule_validate
from .streams import SampleBatch, SampleStream
from .subsolver import SubsolverConfig, delta_schedule, solve_prox, solve_prox_enumerated
from .surrogate import active_set, build_model

__all__ = [
    "StoppingRule",
    "SmmConfig",
    "IterRecord",
    "IterateTrace",
    "ResidualReport",
    "run_smm",
    "run_enhanced_smm",
    "fixed_point_residual",
    "TRACE_HEADER",
]

TRACE_HEADER = "iter,N,theta_saa,step_norm,delta,gap,residual,wall_ms"


@dataclass(frozen=True)
class StoppingRule:
    residual_tol: Optional[float] = None
    residual_N: int = 10_000
    check_every: int = 1

    def __post_init__(self):
        if self.residual_N < 1 or self.check_every < 1:
            raise ValueError("residual_N and check_every must be >= 1")


@dataclass(frozen=True)
class SmmConfig:
    rho: float = 1.0
    schedule: GrowthSchedule = field(default_factory=GrowthSchedule)
    subsolver: SubsolverConfig = field(default_factory=SubsolverConfig)
    max_outer_iters: int = 30
    stopping: StoppingRule = field(default_factory=StoppingRule)
    seed: int = 0
    record_time: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")


@dataclass
class IterRecord:
    iter: int
    N: int
    theta_saa: float
    step_norm: float
    delta: float
    gap: float
    certified: bool
    residual: Optional[float]
    wall_ms: float
    surrogate_before: float
    surrogate_after: float
    winning_tuple: Optional[Tuple[int, ...]] = None
    x: Optional[np.ndarray] = field(default=None, repr=False)

    def descent_ok(self, rho: float) -> bool:
        """Surrogate-plus-prox at the new point does not exceed the surrogate at the old one plus delta."""
        return self.surrogate_after <= self.surrogate_before + self.delta


@dataclass
class IterateTrace:
    records: List[IterRecord] = field(default_factory=list)
    status: str = "IterLimit"
    structure: str = ""
    x0: Optional[np.ndarray] = field(default=None, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(TRACE_HEADER + "\n")
        for r in self.records:
            res = "" if r.residual is None else f"{r.residual:.17g}"
            buf.write(
                f"{r.iter},{r.N},{r.theta_saa:.17g},{r.step_norm:.17g},{r.delta:.17g},"
                f"{r.gap:.17g},{res},{r.wall_ms:.3f}\n"
            )
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


@dataclass
class ResidualReport:
    x_hat: np.ndarray
    r: float
    N: int
    certified_gap: float
    certified: bool
    x_map: np.ndarray
    rho: float

    @property
    def tolerance(self) -> float:
        """Distance bound between the computed and the exact map value implied by the gap."""
        return float(np.sqrt(2.0 * self.rho * self.certified_gap))


class _ResidualStreams:
    def __init__(self, p: CompoundProblem, seed: int):
        self.xi = SampleStream(p.distribution, seed, role="residual-xi")
        self.eta = SampleStream(p.distribution, seed, role="residual-eta")


def fixed_point_residual(p: CompoundProblem, x_hat, rho: float, N: int, seed: int,
                         cfg: Optional[SubsolverConfig] = None, streams: Optional[_ResidualStreams] = None) -> ResidualReport:
    """``|x_hat - argmin_X {V_N(.; x_hat) + |. - x_hat|^2 / (2 rho)}|`` with fresh samples of size ``N``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    cfg = cfg or SubsolverConfig()
    x_hat = p.X.project(np.asarray(x_hat, dtype=float))
    streams = streams or _ResidualStreams(p, seed)
    model = build_model(p, x_hat, streams.xi.draw(N), streams.eta.draw(N))
    res = solve_prox(model, p.X, cfg, cfg.tight_delta, rho, x_hat)
    return ResidualReport(x_hat, float(np.linalg.norm(x_hat - res.x_out)), N, res.certified_gap,
                          res.certified, res.x_out, rho)


def _structure_name(p: CompoundProblem) -> str:
    names = sorted({type(leaf.structure).__name__ for fn in (p.G, p.F) for leaf in fn.leaves()})
    return "+".join(names)


def _run(p: CompoundProblem, x0, cfg: SmmConfig, enhanced: bool, eps) -> Tuple[np.ndarray, IterateTrace]:
    if p.distribution is None:
        raise ValueError("problem has no distribution to sample from")
    seq = schedule_generate(cfg.schedule)
    check = schedule_validate(seq, cfg.schedule) if seq else None
    if check is not None and not check:
        raise ValueError(f"schedule infeasible: {check.reason}")
    x = p.X.project(np.asarray(x0, dtype=float))
    trace = IterateTrace(structure=_structure_name(p), x0=x.copy())
    xi_s = SampleStream(p.distribution, cfg.seed, role="xi")
    eta_s = SampleStream(p.distribution, cfg.seed, role="eta")
    res_streams = _ResidualStreams(p, cfg.seed)
    xi_b: Optional[SampleBatch] = None
    eta_b: Optional[SampleBatch] = None
    stop = cfg.stopping
    streak = 0
    uncertified = False
    converged = False
    n_iters = min(cfg.max_outer_iters, len(seq))
    for nu in range(1, n_iters + 1):
        t0 = time.perf_counter()
        N = seq[nu - 1]
        xi_b = xi_s.extend(xi_b, N)
        eta_b = eta_s.extend(eta_b, N)
        delta = delta_schedule(cfg.subsolver, nu)
        canonical = build_model(p, x, xi_b, eta_b)
        before = canonical.value(x)
        win = None
        if enhanced:
            act = active_set(p, x, eps)
            tuples = act.tuples()
            if len(tuples) > cfg.subsolver.enum_cap:
                from .surrogate import EnumerationCapError

                raise EnumerationCapError(
                    f"{len(tuples)} active tuples at iteration {nu} exceed the cap {cfg.subsolver.enum_cap}; "
                    "use a smaller eps or raise enum_cap"
                )
            models = [build_model(p, x, xi_b, eta_b, tp) for tp in tuples]
            res, k = solve_prox_enumerated(models, p.X, cfg.subsolver, delta, cfg.rho, x)
            win = tuples[k]
        else:
            res = solve_prox(canonical, p.X, cfg.subsolver, delta, cfg.rho, x)
        x_new = res.x_out
        uncertified |= not res.certified
        theta = saa_objective(p, xi_b, eta_b, x_new)
        step = float(np.linalg.norm(x_new - x))
        x = x_new

        residual = None
        if stop.residual_tol is not None and nu % stop.check_every == 0 and stop.residual_N >= N:
            rep = fixed_point_residual(p, x, cfg.rho, stop.residual_N, cfg.seed, cfg.subsolver, res_streams)
            residual = rep.r
            streak = streak + 1 if rep.r <= stop.residual_tol else 0
        wall = (time.perf_counter() - t0) * 1e3 if cfg.record_time else 0.0
        trace.records.append(IterRecord(nu, N, theta, step, delta, res.certified_gap, res.certified,
                                        residual, wall, before, res.value, win, x.copy()))
        if streak >= 2:
            converged = True
            break

    if uncertified:
        trace.status = "Uncertified"
    elif converged:
        trace.status = "Converged"
    else:
        trace.status = "IterLimit"
    return x, trace


def run_smm(p: CompoundProblem, x0, cfg: SmmConfig) -> Tuple[np.ndarray, IterateTrace]:
    """Run the SMM iteration from ``x0``; returns the last iterate and the trace."""
    return _run(p, x0, cfg, False, None)


def run_enhanced_smm(p: CompoundProblem, x0, cfg: SmmConfig, eps=None) -> Tuple[np.ndarray, IterateTrace]:
    """SMM where each step minimizes over every eps-active choice of max-smooth pieces."""
    leaves = [leaf for fn in (p.G, p.F) for leaf in fn.leaves()]
    if not any(isinstance(leaf.structure, DcMaxSmooth) for leaf in leaves):
        raise ValueError("enhanced SMM needs at least one max-smooth concave part")
    if eps is not None and not eps > 0:
        raise ValueError("eps must be positive")
    return _run(p, x0, cfg, True, eps)
