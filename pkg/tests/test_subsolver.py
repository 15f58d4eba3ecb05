import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from compoundsp.sets import Ball, Box, Simplex
from compoundsp.subsolver import (
    FunctionModel,
    SubsolverConfig,
    delta_schedule,
    solve_prox,
    solve_prox_enumerated,
)
from compoundsp.surrogate import EnumerationCapError

CFG = SubsolverConfig()


def quad(a, s=1.0, b=0.0):
    return FunctionModel(lambda x: (s * (x[0] - a) ** 2 + b, np.array([2 * s * (x[0] - a)])))


def test_quadratic_interior_stationary_point():
    # the stationary point 7/3 of (x-3)^2 + (x-1)^2/2 lies outside [-2, 2]
    r = solve_prox(quad(3.0), Box([-5.0], [5.0]), CFG, 1e-10, 1.0, np.array([1.0]))
    assert r.x_out[0] == pytest.approx(7 / 3, abs=1e-5) and r.certified
    r = solve_prox(quad(3.0), Box([-2.0], [2.0]), CFG, 1e-10, 1.0, np.array([1.0]))
    assert r.x_out[0] == pytest.approx(2.0, abs=1e-7) and r.certified


def test_abs_soft_threshold():
    m = FunctionModel(lambda x: (abs(x[0]), np.array([1.0 if x[0] >= 0 else -1.0])))
    r = solve_prox(m, Box([-2.0], [2.0]), CFG, 1e-10, 1.0, np.array([1.0]))
    assert r.x_out[0] == pytest.approx(0.0, abs=1e-5) and r.certified


def test_linear_descends_to_boundary():
    m = FunctionModel(lambda x: (-x[0], np.array([-1.0])))
    r = solve_prox(m, Box([0.0], [1.0]), CFG, 1e-10, 100.0, np.array([0.0]))
    assert r.x_out[0] == pytest.approx(1.0, abs=1e-9)


def test_prox_attached_to_model_is_used():
    m = quad(3.0).with_prox(1.0, np.array([1.0]))
    r = solve_prox(m, Box([-5.0], [5.0]), CFG, 1e-10)
    assert r.x_out[0] == pytest.approx(7 / 3, abs=1e-5)
    with pytest.raises(ValueError):
        solve_prox(quad(3.0), Box([-5.0], [5.0]), CFG, 1e-10)
    with pytest.raises(ValueError):
        solve_prox(quad(3.0), Box([-5.0], [5.0]), CFG, 0.0, 1.0, np.zeros(1))


def test_output_feasible_and_no_worse_than_projected_center():
    rng = np.random.default_rng(0)
    X = Simplex(4)
    for _ in range(20):
        G, a = rng.normal(size=(6, 4)), rng.normal(size=6)
        m = FunctionModel(lambda x: (float(np.max(a + G @ x)), G[int(np.argmax(a + G @ x))]))
        c = rng.normal(size=4) * 2
        r = solve_prox(m, X, CFG, 1e-9, 0.5, c)
        assert np.allclose(X.project(r.x_out), r.x_out, atol=1e-12)
        pc = X.project(c)
        assert r.value <= m.value(pc) + (pc - c) @ (pc - c) / 1.0 + 1e-15


def _prox_value(f, x, c, rho):
    return f(x) + (x - c) @ (x - c) / (2 * rho)


def test_certificate_bounds_true_gap_on_polyhedral_max():
    """Oracle: epigraph form solved by SLSQP from many starts."""
    rng = np.random.default_rng(1)
    for trial in range(15):
        n, k = 3, 5
        G, a = rng.normal(size=(k, n)), rng.normal(size=k)
        X = Box(-np.ones(n), np.ones(n)) if trial % 2 else Simplex(n)
        f = lambda x: float(np.max(a + G @ x))
        m = FunctionModel(lambda x: (f(x), G[int(np.argmax(a + G @ x))]))
        c, rho = rng.normal(size=n), float(rng.uniform(0.2, 3))
        r = solve_prox(m, X, CFG, 1e-9, rho, c)
        cons = [{"type": "ineq", "fun": lambda z: z[-1] - a - G @ z[:-1], "jac": lambda z: np.hstack([-G, np.ones((k, 1))])}]
        if isinstance(X, Simplex):
            cons.append({"type": "eq", "fun": lambda z: np.sum(z[:-1]) - 1, "jac": lambda z: np.r_[np.ones(n), 0.0]})
            bounds = [(0, None)] * n + [(None, None)]
        else:
            bounds = [(-1, 1)] * n + [(None, None)]
        best = np.inf
        for z0 in rng.normal(size=(5, n)):
            x0 = X.project(z0)
            z0 = np.r_[x0, f(x0)]
            res = optimize.minimize(lambda z: z[-1] + (z[:-1] - c) @ (z[:-1] - c) / (2 * rho), z0,
                                    jac=lambda z: np.r_[(z[:-1] - c) / rho, 1.0], bounds=bounds,
                                    constraints=cons, method="SLSQP", options={"ftol": 1e-15, "maxiter": 500})
            xo = X.project(res.x[:-1])
            best = min(best, _prox_value(f, xo, c, rho))
        true_gap = _prox_value(f, r.x_out, c, rho) - best
        assert r.certified
        assert true_gap <= r.certified_gap + 1e-9
        assert abs(r.value - best) <= 1e-8


def test_uncertified_when_iterations_run_out():
    m = FunctionModel(lambda x: (float(np.abs(x).sum()), np.sign(x) + (x == 0)))
    r = solve_prox(m, Ball(np.zeros(5), 3.0), SubsolverConfig(max_iters=1), 1e-14, 1.0, np.arange(5.0) - 2)
    assert not r.certified and r.certified_gap > 1e-14 and r.iters_used == 1


@pytest.mark.parametrize("n", [1, 3, 10])
def test_smooth_strongly_convex_reaches_tight_gap(n):
    rng = np.random.default_rng(n)
    B = rng.normal(size=(n, n))
    H, q = B.T @ B, rng.normal(size=n)
    m = FunctionModel(lambda x: (0.5 * x @ H @ x + q @ x, H @ x + q))
    X = Box(-np.ones(n), np.ones(n))
    c = rng.normal(size=n)
    r = solve_prox(m, X, SubsolverConfig(max_iters=10_000), 1e-8, 1.0, c)
    assert r.certified and r.certified_gap <= 1e-8
    obj = lambda x: 0.5 * x @ H @ x + q @ x + (x - c) @ (x - c) / 2
    ref = optimize.minimize(obj, np.zeros(n), jac=lambda x: H @ x + q + (x - c), bounds=[(-1, 1)] * n,
                            method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
    assert r.value <= ref.fun + 1e-8


# enumeration


def test_enumeration_picks_lowest_objective():
    X, rho = Box([0.0], [3.0]), 1e8
    models = [quad(1.0), quad(2.0, b=0.5)]
    r, win = solve_prox_enumerated(models, X, CFG, 1e-10, rho, np.array([1.5]))
    assert win == 0 and r.x_out[0] == pytest.approx(1.0, abs=1e-4)
    r, win = solve_prox_enumerated(models[::-1], X, CFG, 1e-10, rho, np.array([1.5]))
    assert win == 1


def test_enumeration_single_and_tie():
    X, c = Box([0.0], [3.0]), np.array([0.5])
    single, win = solve_prox_enumerated([quad(1.0)], X, CFG, 1e-10, 1.0, c)
    direct = solve_prox(quad(1.0), X, CFG, 1e-10, 1.0, c)
    assert win == 0 and np.array_equal(single.x_out, direct.x_out)
    _, win = solve_prox_enumerated([quad(1.0), quad(1.0)], X, CFG, 1e-10, 1.0, c)
    assert win == 0


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError, match="eps"):
        solve_prox_enumerated([quad(1.0)] * 3, Box([0.0], [1.0]), SubsolverConfig(enum_cap=2), 1e-6, 1.0, np.zeros(1))
    with pytest.raises(ValueError):
        solve_prox_enumerated([], Box([0.0], [1.0]), CFG, 1e-6, 1.0, np.zeros(1))


def test_delta_schedule_summable():
    cfg = SubsolverConfig(delta0=1e-3)
    d = np.array([delta_schedule(cfg, nu) for nu in range(1, 10001)])
    assert d[0] == 1e-3 and d[1] == pytest.approx(2.5e-4)
    assert d.sum() < 1e-3 * np.pi ** 2 / 6
    with pytest.raises(ValueError):
        SubsolverConfig(delta0=0.0)


# perturbation of minimizers of strongly convex functions


def perturbed_argmins(zeta, a, amp, freq, phase):
    f = lambda x: 0.5 * zeta * (x - a) ** 2
    g = lambda x: f(x) + amp * np.sin(freq * x + phase)
    half = 2 * np.sqrt(amp / zeta) + 1.0
    grid = np.linspace(a - half, a + half, 200_001)
    i = int(np.argmin(g(grid)))
    h = grid[1] - grid[0]
    res = optimize.minimize_scalar(g, bounds=(grid[i] - h, grid[i] + h), method="bounded", options={"xatol": 1e-12})
    return a, float(res.x)


@settings(max_examples=100, deadline=None)
@given(zeta=st.floats(0.1, 10), a=st.floats(-3, 3), amp=st.floats(1e-4, 1.0),
       freq=st.floats(0.5, 20), phase=st.floats(0, 6.28))
def test_argmin_perturbation_bound(zeta, a, amp, freq, phase):
    xf, xg = perturbed_argmins(zeta, a, amp, freq, phase)
    assert abs(xf - xg) <= (2 / np.sqrt(zeta)) * np.sqrt(amp) + 1e-9
