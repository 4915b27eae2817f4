import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize, minimize_scalar

from ddanet.proximal import (ConstraintSet, ProximalError, Regularizer, composite_project,
                             entropic_setup, lipschitz_audit, project, quadratic_setup,
                             simplex_projection, soft_threshold)

SETUPS = [quadratic_setup(3, "unconstrained"), quadratic_setup(3, "ball", radius=5.0),
          quadratic_setup(3, "box", lo=-1.0, hi=2.0), quadratic_setup(3, "simplex"), entropic_setup(3)]

vec3 = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)
alphas = st.floats(1e-3, 10)


def scalar_min(fun, lo, hi):
    # grid then bounded refinement: an oracle independent of any closed form
    grid = np.linspace(lo, hi, 20001)
    vals = np.array([fun(v) for v in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(fun, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    return res.x if res.fun <= vals[k] else grid[k]


def test_quadratic_unconstrained():
    z = np.array([1.0, -2.0, 0.5])
    np.testing.assert_allclose(project(z, 0.3, SETUPS[0]), -0.3 * z)


@pytest.mark.parametrize("z,alpha", [([1.0, 2.0, -2.0], 0.5), ([10.0, -3.0, 4.0], 2.0), ([0.2, 0.1, 0.0], 1.0)])
def test_ball_projection_ray_oracle(z, alpha):
    z = np.asarray(z)
    setup = SETUPS[1]
    # minimize along the ray x = -s z / |z| for s in [0, 5]
    u = z / np.linalg.norm(z)
    s = scalar_min(lambda s: -s * (z @ u) + 0.5 * s * s / alpha, 0.0, 5.0)
    np.testing.assert_allclose(project(z, alpha, setup), -s * u, atol=1e-7)
    expect = -alpha * z if np.linalg.norm(alpha * z) <= 5 else -5 * u
    np.testing.assert_allclose(project(z, alpha, setup), expect, atol=1e-12)


@pytest.mark.parametrize("z,alpha", [([0.3, -1.0, 2.0], 1.0), ([5.0, 5.0, -5.0], 0.7), ([0, 0, 0], 2.0)])
def test_entropic_matches_constrained_minimization(z, alpha):
    z = np.asarray(z, float)
    setup = entropic_setup(3)

    def obj(x):
        x = np.clip(x, 1e-300, None)
        return z @ x + (np.sum(x * np.log(x)) + np.log(3)) / alpha

    res = minimize(obj, np.full(3, 1 / 3), method="SLSQP", bounds=[(1e-12, 1)] * 3,
                   constraints={"type": "eq", "fun": lambda x: x.sum() - 1},
                   options={"ftol": 1e-15, "maxiter": 500})
    np.testing.assert_allclose(project(z, alpha, setup), res.x, atol=1e-6)
    e = np.exp(-alpha * z)
    np.testing.assert_allclose(project(z, alpha, setup), e / e.sum(), atol=1e-14)


def test_simplex_quadratic_projection_oracle(rng):
    for _ in range(20):
        v = rng.standard_normal(4) * 2
        res = minimize(lambda x: 0.5 * np.sum((x - v) ** 2), np.full(4, 0.25), method="SLSQP",
                       bounds=[(0, 1)] * 4, constraints={"type": "eq", "fun": lambda x: x.sum() - 1},
                       options={"ftol": 1e-14})
        np.testing.assert_allclose(simplex_projection(v), res.x, atol=1e-6)


def test_project_zero_is_anchor():
    for s in SETUPS:
        x = project(np.zeros(3), 0.7, s)
        np.testing.assert_allclose(x, s.anchor, atol=1e-15)
        assert s.psi(x) == pytest.approx(0, abs=1e-12)


def test_project_rejects_bad_input():
    with pytest.raises(ProximalError):
        project(np.array([np.nan, 0, 0]), 1.0, SETUPS[0])
    with pytest.raises(ProximalError):
        project(np.zeros(3), 0.0, SETUPS[0])
    with pytest.raises(ProximalError):
        ConstraintSet("sphere", 3)
    with pytest.raises(ProximalError):
        from ddanet.proximal import ProximalSetup
        ProximalSetup("entropic", ConstraintSet("ball", 3))


@settings(max_examples=200, deadline=None)
@given(z=vec3, alpha=alphas, idx=st.integers(0, len(SETUPS) - 1))
def test_projection_lands_in_set(z, alpha, idx):
    s = SETUPS[idx]
    assert s.constraint.contains(project(z, alpha, s))


@settings(max_examples=300, deadline=None)
@given(u=vec3, v=vec3, alpha=alphas, idx=st.integers(0, len(SETUPS) - 1))
def test_projection_lipschitz(u, v, alpha, idx):
    ok, ratio = lipschitz_audit(SETUPS[idx], alpha, u, v)
    assert ok, ratio


def test_lipschitz_examples():
    ok, ratio = lipschitz_audit(SETUPS[0], 0.5, np.ones(3), np.ones(3))
    assert ok and ratio == 0
    ok, ratio = lipschitz_audit(SETUPS[0], 0.5, np.array([1.0, 0, 0]), np.array([0, 2.0, 0]))
    assert ok and ratio == pytest.approx(1.0)


@pytest.mark.parametrize("idx", range(len(SETUPS)))
def test_strong_convexity(idx, rng):
    s = SETUPS[idx]
    for _ in range(200):
        x = project(rng.standard_normal(3) * 3, 1.0, s)
        y = project(rng.standard_normal(3) * 3, 1.0, s)
        if s.kind == "entropic":
            x, y = np.clip(x, 1e-12, None), np.clip(y, 1e-12, None)
            x, y = x / x.sum(), y / y.sum()
        lhs = s.psi(y)
        rhs = s.psi(x) + s.grad_psi(x) @ (y - x) + 0.5 * s.norm(x - y) ** 2
        assert lhs >= rhs - 1e-9
        assert s.psi(x) >= -1e-12


def test_composite_examples():
    s = quadratic_setup(2, "unconstrained")
    reg = Regularizer("l1", 1.0)
    alpha = 0.4
    np.testing.assert_allclose(composite_project(np.array([3.0, -1.0]), 2, alpha, s, reg), [-alpha, 0.0])
    np.testing.assert_array_equal(composite_project(np.zeros(2), 3, alpha, s, reg), [0.0, 0.0])
    z = np.array([0.7, -2.0])
    np.testing.assert_array_equal(composite_project(z, 5, alpha, s, Regularizer()), project(z, alpha, s))


def test_composite_grid_oracle(rng):
    s = quadratic_setup(1, "unconstrained")
    for _ in range(25):
        z, lam, t, alpha = rng.uniform(-5, 5), rng.uniform(0, 1), int(rng.integers(1, 6)), rng.uniform(0.1, 2)
        reg = Regularizer("l1", lam)
        f = lambda x: z * x + t * lam * abs(x) + x * x / (2 * alpha)
        x = scalar_min(f, -12.0, 12.0)
        assert composite_project(np.array([z]), t, alpha, s, reg)[0] == pytest.approx(x, abs=1e-6)


def test_composite_ball_oracle(rng):
    s = quadratic_setup(2, "ball", radius=1.0)
    reg = Regularizer("l1", 0.3)
    for _ in range(10):
        z, t, alpha = rng.standard_normal(2) * 4, int(rng.integers(1, 4)), rng.uniform(0.2, 2)
        obj = lambda x: z @ x + t * 0.3 * np.abs(x).sum() + x @ x / (2 * alpha)
        res = minimize(obj, np.zeros(2), method="SLSQP",
                       constraints={"type": "ineq", "fun": lambda x: 1 - x @ x}, options={"ftol": 1e-14})
        got = composite_project(z, t, alpha, s, reg)
        assert obj(got) <= res.fun + 1e-7
        np.testing.assert_allclose(got, res.x, atol=1e-4)


@settings(max_examples=200, deadline=None)
@given(u=vec3, v=vec3, alpha=alphas, t=st.integers(0, 10), lam=st.floats(0, 3))
def test_composite_lipschitz(u, v, alpha, t, lam):
    s = quadratic_setup(3, "ball", radius=2.0)
    reg = Regularizer("l1", lam)
    d = np.linalg.norm(composite_project(u, t, alpha, s, reg) - composite_project(v, t, alpha, s, reg))
    assert d <= alpha * np.linalg.norm(u - v) * (1 + 1e-8) + 1e-12


def test_composite_rejects_unsupported():
    with pytest.raises(ProximalError):
        composite_project(np.ones(3), 1, 1.0, entropic_setup(3), Regularizer("l1", 1.0))
    with pytest.raises(ProximalError):
        composite_project(np.ones(3), 1, 1.0, quadratic_setup(3, "box"), Regularizer("l1", 1.0))
    with pytest.raises(ProximalError):
        Regularizer("l2", 1.0)
    with pytest.raises(ProximalError):
        Regularizer("l1", -1.0)


def test_soft_threshold_and_norms():
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -2.0]), 1.0), [2.0, 0.0, -1.0])
    e = entropic_setup(3)
    assert e.dual_norm(np.array([1.0, -3.0, 2.0])) == 3.0
    assert e.norm(np.array([1.0, -3.0, 2.0])) == 6.0
    assert SETUPS[1].constraint.diameter_bound == pytest.approx(5 / np.sqrt(2))
