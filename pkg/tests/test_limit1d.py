import numpy as np
import pytest
from hypothesis import given, strategies as st

from oscithin.cell_homog import HomogenizedCoefficients
from oscithin.errors import ConfigError
from oscithin.limit1d import (
    LimitOperator, Nonlinearity, dual_residual, equilibria_limit, imex_run, nonlinearity_from_config,
    solve_limit_elliptic, solve_limit_parabolic,
)
from oscithin.mesh import mesh_1d

UNIT = HomogenizedCoefficients.constant(1.0, 1.0)


def l2_error(u, exact):
    m = u.mesh
    g, w = np.polynomial.legendre.leggauss(4)
    a, b = m.nodes[:-1], m.nodes[1:]
    x = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * g
    W = (0.5 * (b - a))[:, None] * w
    return float(np.sqrt(np.sum(W * (u(x) - exact(x)) ** 2)))


def test_constant_solution():
    u = solve_limit_elliptic(UNIT, 1.0, mesh_1d(32))
    np.testing.assert_allclose(u.values, 1.0, atol=1e-12)


def test_manufactured_cosine_order():
    errs = []
    for n in (32, 64, 128, 256):
        u = solve_limit_elliptic(UNIT, lambda x: (1 + np.pi ** 2) * np.cos(np.pi * x), mesh_1d(n))
        errs.append(l2_error(u, lambda x: np.cos(np.pi * x)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def two_piece_oracle(q1, q2, xi):
    """Exact solution of -(q u')' + u = x with natural ends and flux matching at xi."""
    k1, k2 = 1 / np.sqrt(q1), 1 / np.sqrt(q2)
    # u = x + A cosh(k1 x) + B sinh(k1 x) on the left, x + C cosh(k2 (x-1)) + D sinh(k2 (x-1)) on the right
    M = np.array([
        [0, k1, 0, 0],                                   # u'(0) = 0
        [0, 0, 0, k2],                                   # u'(1) = 0
        [np.cosh(k1 * xi), np.sinh(k1 * xi), -np.cosh(k2 * (xi - 1)), -np.sinh(k2 * (xi - 1))],
        [q1 * k1 * np.sinh(k1 * xi), q1 * k1 * np.cosh(k1 * xi),
         -q2 * k2 * np.sinh(k2 * (xi - 1)), -q2 * k2 * np.cosh(k2 * (xi - 1))],
    ])
    rhs = np.array([-1.0, -1.0, 0.0, -(q1 - q2)])
    A, B, C, D = np.linalg.solve(M, rhs)

    def u(x):
        x = np.asarray(x, dtype=float)
        left = x + A * np.cosh(k1 * x) + B * np.sinh(k1 * x)
        right = x + C * np.cosh(k2 * (x - 1)) + D * np.sinh(k2 * (x - 1))
        return np.where(x <= xi, left, right)

    return u


def test_piecewise_coefficient_closed_form():
    xi = 0.375
    c = HomogenizedCoefficients.constant([1.0, 2.0], 1.0, partition=(0.0, xi, 1.0))
    exact = two_piece_oracle(1.0, 2.0, xi)
    coarse = solve_limit_elliptic(c, lambda x: x, mesh_1d(1024, c.partition))
    fine = solve_limit_elliptic(c, lambda x: x, mesh_1d(2048, c.partition))
    # nodal errors expand in h^2; one Richardson step removes the leading term
    extrap = (4 * fine.values[::2] - coarse.values) / 3
    np.testing.assert_allclose(extrap, exact(coarse.mesh.nodes), atol=1e-8)
    assert l2_error(fine, exact) < 1e-6


def test_decay_without_reaction():
    m = mesh_1d(16)
    tr = solve_limit_parabolic(UNIT, Nonlinearity(), 2.0, T=0.05, dt=0.01, m=m, save_every=1)
    for t, s in zip(tr.times, tr.snapshots):
        n = round(t / 0.01)
        np.testing.assert_allclose(s.values, 2.0 / 1.01 ** n, rtol=1e-12)
    assert tr.energy_monotone


def test_logistic_converges_to_positive_equilibrium():
    nl = Nonlinearity("logistic-cubic", 10.0)
    m = mesh_1d(64)
    tr = solve_limit_parabolic(UNIT, nl, 0.1, T=50.0, dt=1e-2, m=m, stop_residual=1e-10)
    assert tr.energy_monotone
    assert 1e-2 <= tr.dt_stable
    assert tr.info["residual"] < 1e-8
    np.testing.assert_allclose(tr.final.values, 3.0, atol=1e-8)


def test_energy_nonincreasing_nonconstant_coefficients():
    c = HomogenizedCoefficients(np.array([0.0, 0.5, 1.0]), np.array([1.0, 1.6, 1.2]), np.array([2.0, 2.0, 2.0]),
                                np.ones(3), np.zeros(3, int), (0.0, 1.0))
    nl = Nonlinearity("logistic-cubic", 10.0)
    m = mesh_1d(64)
    u0 = 0.5 * np.cos(3 * np.pi * m.nodes)
    tr = solve_limit_parabolic(c, nl, u0, T=2.0, dt=1e-2, m=m)
    assert tr.dt_stable >= 1e-2
    assert tr.energy_monotone


def test_bad_step_rejected():
    with pytest.raises(ConfigError):
        solve_limit_parabolic(UNIT, Nonlinearity(), 1.0, T=1.0, dt=0.0, m=mesh_1d(4))


def test_equilibria_without_reaction():
    E = equilibria_limit(UNIT, Nonlinearity(), mesh_1d(32))
    assert len(E) == 1
    assert np.max(np.abs(E.fields[0].values)) <= 1e-12


def test_equilibria_constants_below_gap():
    nl = Nonlinearity("logistic-cubic", 5.0)  # lam - 1 < pi^2
    E = equilibria_limit(UNIT, nl, mesh_1d(64))
    assert len(E) == 3
    means = sorted(float(np.mean(f.values)) for f in E.fields)
    np.testing.assert_allclose(means, [-2.0, 0.0, 2.0], atol=1e-10)
    for f in E.fields:
        assert np.ptp(f.values) <= 1e-10
    assert max(E.residuals) < 1e-10


def test_equilibria_match_time_marching():
    c = HomogenizedCoefficients(np.array([0.0, 0.5, 1.0]), np.array([0.05, 0.08, 0.06]),
                                np.array([2.0, 2.0, 2.0]), np.ones(3), np.zeros(3, int), (0.0, 1.0))
    nl = Nonlinearity("logistic-cubic", 10.0)
    m = mesh_1d(128)
    E = equilibria_limit(c, nl, m)
    assert len(E) > 3  # small diffusion: nonconstant equilibria exist
    assert max(E.residuals) < 1e-10
    M = LimitOperator.build(c, m).M
    for u0 in (0.1 + 0.2 * np.cos(np.pi * m.nodes), -0.3 * np.cos(2 * np.pi * m.nodes)):
        tr = solve_limit_parabolic(c, nl, u0, T=200.0, dt=1e-2, m=m, stop_residual=1e-11)
        v = tr.final.values
        d = min(np.sqrt((v - f.values) @ (M @ (v - f.values))) for f in E.fields)
        assert d < 1e-6


def test_nonlinearity_shape():
    nl = Nonlinearity("logistic-cubic", 10.0, clip=3.0)
    s = np.linspace(-2.9, 2.9, 11)
    np.testing.assert_allclose(nl.f(s), 10 * s - s ** 3, atol=1e-12)
    for v in (30.0, -30.0):
        assert nl.f(v) / v < 0
    assert nl.constant_roots() == pytest.approx([-3.0, 0.0, 3.0])
    assert np.max(np.abs(nl.df(np.linspace(-1e3, 1e3, 20001)))) <= nl.slope_at_infinity


@given(st.floats(-40, 40))
def test_nonlinearity_smoothness(s):
    nl = Nonlinearity("logistic-cubic", 10.0, clip=3.0)
    h = 1e-5
    assert (nl.F(s + h) - nl.F(s - h)) / (2 * h) == pytest.approx(float(nl.f(s)), abs=1e-5 * (1 + abs(s)))
    assert (nl.f(s + h) - nl.f(s - h)) / (2 * h) == pytest.approx(float(nl.df(s)), abs=1e-4 * (1 + abs(s)))


def test_nonlinearity_c2_at_joins():
    nl = Nonlinearity("logistic-cubic", 10.0, clip=3.0)
    for j in (3.0, 4.5, -3.0, -4.5):
        h = 1e-6
        left = (nl.df(j) - nl.df(j - h)) / h
        right = (nl.df(j + h) - nl.df(j)) / h
        assert left == pytest.approx(right, abs=1e-3)


def test_nonlinearity_config():
    nl = nonlinearity_from_config({"preset": "logistic-cubic", "lam": 4})
    assert nl.lam == 4.0
    with pytest.raises(ConfigError):
        nonlinearity_from_config({"preset": "logistic-cubic", "bad": 1})
    with pytest.raises(ConfigError):
        Nonlinearity("logistic-cubic", 100.0, clip=1.0)


def test_imex_run_generic_operator():
    op = LimitOperator.build(UNIT, mesh_1d(8))
    times, snaps, energies, dt_stable = imex_run(op, Nonlinearity(), np.ones(9), 0.1, 0.05)
    assert times[-1] == pytest.approx(0.1)
    assert np.isinf(dt_stable)
    assert dual_residual(op, np.zeros(9), Nonlinearity()) == 0
