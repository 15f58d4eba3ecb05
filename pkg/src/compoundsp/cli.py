"""Command-line entry point ``compoundsp``.

Commands: ``solve``, ``risk``, ``saa-rate``, ``schedule-check`` and
``residual``. Experiments are described by INI files; see the README for the
schema. Exit codes: 0 success (``Converged`` for ``solve``), 1 configuration
or input error, 2 ``IterLimit``, 3 ``Uncertified`` (also an uncertified
residual solve), 4 schedule check failed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import apps, risk
from .problem import CompoundProblem
from .sampling import GrowthSchedule, gaussian_hinge_instance, saa_rate_experiment, schedule_generate, schedule_validate
from .sets import Ball, Box, FeasibleSet, Product, Simplex
from .smm import SmmConfig, StoppingRule, fixed_point_residual, run_enhanced_smm, run_smm
from .streams import EmpiricalRows, read_rows_csv
from .subsolver import SubsolverConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ITERLIMIT = 2
EXIT_UNCERTIFIED = 3
EXIT_SCHEDULE_FAIL = 4

STATUS_EXIT = {"Converged": EXIT_OK, "IterLimit": EXIT_ITERLIMIT, "Uncertified": EXIT_UNCERTIFIED}
SEED_ENV = "SMM_SEED"


class ConfigError(Exception):
    pass


# config parsing


def _floats(text: str) -> np.ndarray:
    return np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()])


def _path(base: Path, text: str) -> Path:
    p = Path(text.strip())
    p = p if p.is_absolute() else base / p
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    return p


def _read_rows(path: Path) -> np.ndarray:
    try:
        return read_rows_csv(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def resolve_seed(config_seed: int) -> int:
    """The ``SMM_SEED`` environment variable, when set, overrides the configured seed."""
    text = os.environ.get(SEED_ENV)
    seed = config_seed if text is None or not text.strip() else text.strip()
    try:
        seed = int(seed, 10) if isinstance(seed, str) else int(seed)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be a decimal integer, got {text!r}") from exc
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must lie in [0, 2^64)")
    return seed


def _feasible_set(sec, n: int) -> FeasibleSet:
    kind = sec.get("set", "simplex").strip().lower()
    if kind == "simplex":
        return Simplex(n, sec.getfloat("radius", 1.0))
    if kind == "box":
        return Box(_floats(sec["lo"]) * np.ones(n), _floats(sec["hi"]) * np.ones(n))
    if kind == "ball":
        center = _floats(sec["center"]) if "center" in sec else np.zeros(n)
        return Ball(center * np.ones(n), sec.getfloat("radius", 1.0))
    raise ConfigError(f"unknown set {kind!r}")


def _utility(sec) -> risk.UtilitySpec:
    return risk.UtilitySpec(sec.get("utility", "cvar"), sec.getfloat("alpha", 0.5), sec.getfloat("gamma", 1.0))


def _tau(sec, rows: np.ndarray) -> float:
    if "tau" in sec:
        return sec.getfloat("tau")
    if "tau_std" in sec:
        return sec.getfloat("tau_std") * float(rows[:, 0].std())
    raise ConfigError("[problem] needs tau or tau_std")


def build_problem(cp: configparser.ConfigParser, base: Path) -> CompoundProblem:
    """Instantiate the problem described by the ``[problem]`` section."""
    if not cp.has_section("problem"):
        raise ConfigError("missing [problem] section")
    sec = cp["problem"]
    kind = sec.get("kind", "").strip().lower()
    safety = sec.getfloat("safety", apps.SAFETY)
    if kind == "quadratic":
        b = _floats(sec["b"])
        return apps.build_quadratic(b, _floats(sec["lo"]) * np.ones(b.size), _floats(sec["hi"]) * np.ones(b.size))
    if kind == "gaussian-hinge":
        return gaussian_hinge_instance()[0]
    if kind in ("bpoe-deviation", "oce-deviation"):
        rows = _read_rows(_path(base, sec["data"]))
        loss = apps.LossSpec.portfolio(rows.shape[1])
        X = _feasible_set(sec, rows.shape[1])
        if kind == "bpoe-deviation":
            return apps.build_bpoe_deviation(loss, _tau(sec, rows), X, rows, safety=safety)
        return apps.build_oce_deviation(loss, _utility(sec), X, rows)
    if kind == "dr-mixed-bpoe":
        comps = [_read_rows(_path(base, t)) for t in sec["data"].split(",") if t.strip()]
        if any(c.shape[1] != comps[0].shape[1] for c in comps):
            raise ConfigError("all component data files need the same number of columns")
        n = comps[0].shape[1]
        taus = _floats(sec["taus"])
        betas = _floats(sec["betas"]) if "betas" in sec else np.ones(taus.size)
        return apps.build_dr_mixed_bpoe(apps.LossSpec.portfolio(n), taus, betas,
                                        [EmpiricalRows(c) for c in comps], _feasible_set(sec, n), comps, safety)
    if kind == "bpoe-multiclass":
        labels, attrs = apps.read_labeled_csv(_path(base, sec["data"]))
        M = int(labels.max()) + 1
        pairs = [(i, j) for i in range(M) for j in range(M) if i != j]
        if sec.get("partition", "pairs").strip() == "single":
            parts, alphas = [pairs], [1.0]
        else:
            parts, alphas = [[q] for q in pairs], [1.0 / len(pairs)] * len(pairs)
        return apps.build_bpoe_multiclass(labels, attrs, M, parts, alphas, sec.getfloat("tau", 0.1),
                                          sec.getfloat("mu_bound", 1.0), safety)
    raise ConfigError(f"unknown problem kind {kind!r}")


def default_start(X: FeasibleSet) -> np.ndarray:
    """Barycenter of a simplex, midpoint of a box, center of a ball; blockwise for products."""
    if isinstance(X, Product):
        return np.concatenate([default_start(b) for b in X.blocks])
    if isinstance(X, Simplex):
        return np.full(X.n, X.radius / X.n)
    if isinstance(X, Box):
        lo, hi = np.maximum(X.lo, -1e6), np.minimum(X.hi, 1e6)
        return X.project(0.5 * (lo + hi))
    if isinstance(X, Ball):
        return X.center.copy()
    return X.project(np.zeros(X.dim))


def _section(cp, name):
    return cp[name] if cp.has_section(name) else cp[configparser.DEFAULTSECT]


def build_config(cp: configparser.ConfigParser, base: Path,
                 problem: Optional[CompoundProblem] = None) -> Tuple[SmmConfig, dict]:
    """SMM settings; without an explicit ``rho`` the diameter of the problem's feasible set is used."""
    smm, sch, sub, stop = (_section(cp, s) for s in ("smm", "schedule", "subsolver", "stopping"))
    try:
        schedule = GrowthSchedule(sch.getfloat("c1", 0.25), sch.getfloat("c2", 4.0), sch.getfloat("c3", 2.0),
                                  sch.getint("k_bar", 3), sch.getint("N_init", 4), sch.getint("horizon", 30))
        sub_cfg = SubsolverConfig(max_iters=sub.getint("max_iters", 400), delta0=sub.getfloat("delta0", 1e-3),
                                  tight_delta=sub.getfloat("tight_delta", SubsolverConfig.tight_delta),
                                  max_cuts=sub.getint("max_cuts", 120), enum_cap=sub.getint("enum_cap", 64))
        tol = stop.get("residual_tol", "").strip()
        stopping = StoppingRule(float(tol) if tol else None, stop.getint("residual_N", 10_000),
                                stop.getint("check_every", 1))
        seed = resolve_seed(cp.getint("run", "seed", fallback=cp.getint(configparser.DEFAULTSECT, "seed", fallback=0)))
        rho = smm.getfloat("rho", None)
        if rho is None:
            diam = problem.X.diameter if problem is not None else None
            rho = float(diam) if diam and np.isfinite(diam) else 1.0
        cfg = SmmConfig(rho=rho, schedule=schedule, subsolver=sub_cfg,
                        max_outer_iters=smm.getint("max_outer_iters", 30), stopping=stopping, seed=seed,
                        record_time=smm.getboolean("record_time", False))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    extra = {"enhanced": smm.getboolean("enhanced", False)}
    eps = smm.get("eps", "").strip()
    extra["eps"] = float(eps) if eps else None
    return cfg, extra


def load_config(path) -> Tuple[configparser.ConfigParser, Path]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return cp, path.resolve().parent


def _output_paths(cp, base: Path) -> Tuple[Optional[Path], Optional[Path]]:
    if not cp.has_section("output"):
        return None, None
    out = cp["output"]
    paths = []
    for key in ("trace", "summary"):
        text = out.get(key, "").strip()
        if not text:
            paths.append(None)
            continue
        p = Path(text)
        paths.append(p if p.is_absolute() else base / p)
    return paths[0], paths[1]


def _start(cp, p: CompoundProblem) -> np.ndarray:
    text = cp.get("problem", "x0", fallback="").strip()
    if not text:
        return default_start(p.X)
    x0 = _floats(text)
    if x0.size != p.X.dim:
        raise ConfigError(f"x0 has {x0.size} entries, the problem has {p.X.dim} variables")
    return x0


# commands


def cmd_solve(config_path) -> int:
    """Run SMM per the config, write trace CSV and JSON summary; the exit code encodes the status."""
    try:
        cp, base = load_config(config_path)
        p = build_problem(cp, base)
        cfg, extra = build_config(cp, base, p)
        x0 = _start(cp, p)
        trace_path, summary_path = _output_paths(cp, base)
        if extra["enhanced"]:
            x, trace = run_enhanced_smm(p, x0, cfg, extra["eps"])
        else:
            x, trace = run_smm(p, x0, cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    last = trace.records[-1] if trace.records else None
    residuals = [r.residual for r in trace.records if r.residual is not None]
    summary = {
        "status": trace.status,
        "structure": trace.structure,
        "iterations": len(trace.records),
        "N_final": last.N if last else 0,
        "x_final": [float(v) for v in x],
        "theta_saa": last.theta_saa if last else None,
        "residual": residuals[-1] if residuals else None,
        "seed": cfg.seed,
    }
    if trace_path is not None:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        trace.write_csv(trace_path)
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    if summary_path is not None:
        summary_path.parent.mkdir(parents=True, exist_ok=True)
        summary_path.write_text(text)
    else:
        sys.stdout.write(text)
    return STATUS_EXIT[trace.status]


def cmd_risk(measure: str, data_csv, params: dict) -> int:
    """Print a risk measure of the first column of ``data_csv`` with 12 significant digits."""
    measure = measure.lower()
    if measure not in ("var", "cvar", "poe", "bpoe", "oce"):
        print(f"error: unknown measure {measure!r}; choose var, cvar, poe, bpoe or oce", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if not Path(data_csv).exists():
            raise ConfigError(f"file not found: {data_csv}")
        Z = risk.EmpiricalRV(_read_rows(Path(data_csv))[:, 0])
        alpha, tau = params.get("alpha"), params.get("tau")
        if measure in ("var", "cvar") and alpha is None:
            raise ConfigError(f"{measure} needs --alpha")
        if measure in ("poe", "bpoe") and tau is None:
            raise ConfigError(f"{measure} needs --tau")
        if measure == "var":
            print(f"{risk.var(Z, alpha):.12g}")
        elif measure == "cvar":
            print(f"{risk.cvar(Z, alpha):.12g}")
        elif measure == "poe":
            print(f"{risk.poe(Z, tau):.12g}")
        elif measure == "bpoe":
            res = risk.bpoe(Z, tau)
            print(f"{res.value:.12g}")
            print(f"a_interval {res.a_lo:.12g} {res.a_hi:.12g}" + (f" ({res.edge})" if res.edge else ""))
        else:
            u = risk.UtilitySpec(params.get("utility") or "cvar", alpha if alpha is not None else 0.5,
                                 params.get("gamma") or 1.0)
            res = risk.oce(Z, u)
            print(f"{res.value:.12g}")
            print(f"eta {res.eta_star:.12g}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def cmd_saa_rate(sizes: List[int], trials: int, seed: int, x0: float = 0.0, out=None) -> int:
    """SAA error table for the Gaussian hinge instance, followed by the fitted log-log slope."""
    try:
        p, x, theta = gaussian_hinge_instance(x0)
        table = saa_rate_experiment(p, theta, x, sizes, trials, resolve_seed(seed))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = table.to_csv()
    if out:
        Path(out).write_text(text)
    sys.stdout.write(text)
    print("slope " + ("nan" if table.slope is None else f"{table.slope:.6f}"))
    if table.high_variance:
        print("warning: fewer than 30 trials, the slope estimate is noisy")
    return EXIT_OK


def cmd_schedule_check(params: dict) -> int:
    """Generate the sample-size schedule and verify its growth conditions."""
    try:
        s = GrowthSchedule(**params)
        seq = schedule_generate(s)
    except ValueError as exc:
        print(f"FAIL {exc}")
        return EXIT_SCHEDULE_FAIL
    check = schedule_validate(seq, s)
    print(",".join(str(n) for n in seq))
    if check:
        print("PASS")
        return EXIT_OK
    print(f"FAIL {check.reason}")
    return EXIT_SCHEDULE_FAIL


def cmd_residual(config_path, point_csv, N: Optional[int] = None) -> int:
    """Fixed-point residual at the point stored in ``point_csv`` (one row or one column)."""
    try:
        cp, base = load_config(config_path)
        p = build_problem(cp, base)
        cfg, _ = build_config(cp, base, p)
        if not Path(point_csv).exists():
            raise ConfigError(f"file not found: {point_csv}")
        x = _read_rows(Path(point_csv)).ravel()
        if x.size != p.X.dim:
            raise ConfigError(f"point has {x.size} entries, the problem has {p.X.dim} variables")
        rep = fixed_point_residual(p, x, cfg.rho, N or cfg.stopping.residual_N, cfg.seed, cfg.subsolver)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{rep.r:.12g}")
    if not rep.certified:
        print(f"warning: subproblem gap {rep.certified_gap:.3g} not certified", file=sys.stderr)
        return EXIT_UNCERTIFIED
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="compoundsp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run SMM from an INI config")
    s.add_argument("config")

    r = sub.add_parser("risk", help="evaluate a risk measure on a one-column CSV")
    r.add_argument("measure")
    r.add_argument("data")
    r.add_argument("--alpha", type=float)
    r.add_argument("--tau", type=float)
    r.add_argument("--utility", choices=["linear", "cvar", "exponential"])
    r.add_argument("--gamma", type=float)

    q = sub.add_parser("saa-rate", help="SAA error rate on the Gaussian hinge instance")
    q.add_argument("--sizes", default="100,1000,10000")
    q.add_argument("--trials", type=int, default=200)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--x", type=float, default=0.0)
    q.add_argument("--out")

    c = sub.add_parser("schedule-check", help="verify the sample-size growth conditions")
    c.add_argument("--c1", type=float, default=0.25)
    c.add_argument("--c2", type=float, default=4.0)
    c.add_argument("--c3", type=float, default=2.0)
    c.add_argument("--k-bar", type=int, default=3)
    c.add_argument("--N-init", type=int, default=4)
    c.add_argument("--horizon", type=int, default=30)

    e = sub.add_parser("residual", help="fixed-point residual at a stored point")
    e.add_argument("config")
    e.add_argument("point")
    e.add_argument("--N", type=int)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "solve":
        return cmd_solve(args.config)
    if args.command == "risk":
        return cmd_risk(args.measure, args.data, {"alpha": args.alpha, "tau": args.tau,
                                                  "utility": args.utility, "gamma": args.gamma})
    if args.command == "saa-rate":
        try:
            sizes = [int(t) for t in args.sizes.split(",") if t.strip()]
        except ValueError:
            print(f"error: bad --sizes {args.sizes!r}", file=sys.stderr)
            return EXIT_CONFIG
        return cmd_saa_rate(sizes, args.trials, args.seed, args.x, args.out)
    if args.command == "schedule-check":
        return cmd_schedule_check({"c1": args.c1, "c2": args.c2, "c3": args.c3, "k_bar": args.k_bar,
                                   "N_init": args.N_init, "horizon": args.horizon})
    return cmd_residual(args.config, args.point, args.N)


if __name__ == "__main__":
    sys.exit(main())
