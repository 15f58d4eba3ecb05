import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize

from compoundsp.sets import Ball, Box, Custom, Product, Simplex, project, project_simplex


def test_box_clamps():
    assert np.allclose(project(Box([0, 0], [1, 1]), [-1, 0.5]), [0, 0.5])


def test_ball_scales_radially():
    assert np.allclose(project(Ball([0, 0], 1.0), [3, 4]), [0.6, 0.8])


def test_simplex_example_matches_qp_oracle():
    y = np.array([0.5, 0.5, 2.0])
    x = project(Simplex(3), y)
    assert np.allclose(x, [0, 0, 1])
    # independent oracle: constrained least squares
    res = optimize.minimize(lambda z: np.sum((z - y) ** 2), np.full(3, 1 / 3), method="SLSQP",
                            bounds=[(0, None)] * 3, constraints=[{"type": "eq", "fun": lambda z: z.sum() - 1}],
                            options={"ftol": 1e-14})
    assert np.allclose(x, res.x, atol=1e-6)


def test_simplex_kkt_threshold():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = rng.normal(size=6) * 3
        x = project_simplex(y)
        assert abs(x.sum() - 1) < 1e-12 and np.all(x >= 0)
        pos = x > 0
        theta = (y - x)[pos]
        # y - x is constant on the support and dominates off the support
        assert np.ptp(theta) < 1e-12
        assert np.all(y[~pos] <= theta[0] + 1e-12)


def test_custom_and_product():
    half = Custom(1, lambda y: np.clip(y, 0, 0.5), diam=0.5)
    P = Product([Simplex(2), half])
    assert P.dim == 3
    assert np.allclose(P.project([2.0, 0.0, 3.0]), [1.0, 0.0, 0.5])
    assert P.diameter == pytest.approx(np.sqrt(2 + 0.25))


def test_diameters():
    assert Box([0, 0], [3, 4]).diameter == pytest.approx(5.0)
    assert Simplex(3).diameter == pytest.approx(np.sqrt(2))
    assert Ball([0, 0, 0], 2.0).diameter == pytest.approx(4.0)


def test_invalid_sets():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        Ball([0.0], -1.0)


def test_polyhedral_description():
    lo, hi, A, b = Product([Simplex(2), Box([0.0], [5.0])]).polyhedral()
    assert np.allclose(lo, 0) and np.allclose(hi, [1.0, 1.0, 5.0])
    assert np.allclose(A, [[1, 1, 0]]) and np.allclose(b, [1])
    assert Ball([0.0], 1.0).polyhedral() is None


SETS = [
    Box([-1, 0, 2], [1, 0.5, 3]),
    Simplex(3),
    Simplex(3, radius=2.5),
    Ball([1.0, -1.0, 0.0], 0.7),
    Product([Simplex(2), Box([0.0], [4.0])]),
]
vec3 = arrays(np.float64, 3, elements=st.floats(-50, 50, allow_nan=False))


@pytest.mark.parametrize("S", SETS, ids=lambda s: type(s).__name__)
@settings(max_examples=300, deadline=None)
@given(y=vec3, z=vec3)
def test_projection_idempotent_and_nonexpansive(S, y, z):
    py, pz = S.project(y), S.project(z)
    assert np.allclose(S.project(py), py, atol=1e-10)
    assert np.linalg.norm(py - pz) <= np.linalg.norm(y - z) + 1e-9
    assert S.contains(py)


@pytest.mark.parametrize("S", SETS, ids=lambda s: type(s).__name__)
def test_projection_properties_on_many_pairs(S):
    rng = np.random.default_rng(1)
    Y = rng.normal(scale=5, size=(1000, 3))
    Z = rng.normal(scale=5, size=(1000, 3))
    for y, z in zip(Y, Z):
        py, pz = S.project(y), S.project(z)
        assert np.allclose(S.project(py), py, atol=1e-10)
        assert np.linalg.norm(py - pz) <= np.linalg.norm(y - z) + 1e-9


@pytest.mark.parametrize("S", SETS, ids=lambda s: type(s).__name__)
def test_projection_variational_inequality(S):
    # (y - P y) . (x - P y) <= 0 for every x in the set
    rng = np.random.default_rng(2)
    X = S.sample(rng, 200)
    for y in rng.normal(scale=4, size=(50, 3)):
        py = S.project(y)
        assert np.max((X - py) @ (y - py)) <= 1e-9
