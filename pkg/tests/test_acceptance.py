"""Acceptance gate: one PASS/FAIL line per criterion (shown in the terminal summary)."""
import time

import numpy as np
import pytest

from oscithin.assembly import TRI_BARY, quadrature_points
from oscithin.cell_homog import HomogenizedCoefficients, cell_area, homogenized_p, solve_cell_problem
from oscithin.config import load_config
from oscithin.fullsolver import (
    ThinOperator, error_L2, fem_fiber_deviation, fiber_decay_rate, rectangle_fourier, solve_eps_elliptic,
    solve_rectangle_fem,
)
from oscithin.geometry import (
    Boundary, DomainSpec, Harmonic, constant_profile, default_profile, period_average, piecewise_periodic,
    two_harmonic,
)
from oscithin.limit1d import solve_limit_elliptic
from oscithin.mesh import ResolutionPolicy, mesh_1d
from oscithin.study import coefficients, run_convergence, run_equilibria_usc, run_perturbation, run_spectrum


@pytest.fixture(scope="module")
def default_cfg():
    return load_config()


@pytest.fixture(scope="module")
def default_coef(default_cfg):
    return coefficients(default_cfg)


@pytest.fixture(scope="module")
def convergence(default_cfg, default_coef, tmp_path_factory):
    out = tmp_path_factory.mktemp("convergence")
    t0 = time.perf_counter()
    rows = run_convergence(default_cfg, out, coef=default_coef)
    return rows, out, time.perf_counter() - t0


def strictly_decreasing(v):
    return all(b < a for a, b in zip(v, v[1:]))


def test_criterion_01_flat_profile_exactness(report_criterion):
    t0 = time.perf_counter()
    p = constant_profile()
    cell = solve_cell_problem(p, 0.5)
    q, pv = cell.q, homogenized_p(p, 0.5)
    d = DomainSpec(p, 0.1)
    op = ThinOperator.build(d, ResolutionPolicy(h_max=1 / 256, ny=8))
    f0 = lambda x: np.cos(np.pi * x) + x
    sol = solve_eps_elliptic(d, lambda x1, x2: f0(x1), op=op)
    uh = solve_limit_elliptic(HomogenizedCoefficients.constant(q, pv), lambda x: pv * f0(x), op.mesh_1d())
    err = error_L2(sol.u, uh)
    dt = time.perf_counter() - t0
    ok = (not np.any(cell.X.values) and abs(q - 2) <= 1e-10 and abs(pv - 2) <= 1e-12 and err <= 1e-4 and dt < 60)
    report_criterion(1, ok, f"X=0, q={q:.12f}, p={pv:.12f}, L2 discrepancy {err:.2e} (<= 1e-4), {dt:.1f}s")


def test_criterion_02_coefficient_identities(report_criterion):
    t0 = time.perf_counter()
    p = default_profile()
    worst_route, worst_p, ok = 0.0, 0.0, True
    for x in np.linspace(0.0, 1.0, 20):
        s = solve_cell_problem(p, x)
        area = cell_area(p, x)
        pv = homogenized_p(p, x)
        route = abs(s.q_div - s.q_energy) / abs(s.q_energy)
        pgap = abs(pv - (period_average(p, "G", x) + period_average(p, "H", x)))
        worst_route, worst_p = max(worst_route, route), max(worst_p, pgap)
        ok &= s.q > 0 and s.q <= area / p.l_h
    dt = time.perf_counter() - t0
    ok &= worst_route <= 1e-6 and worst_p <= 1e-8 and dt < 120
    report_criterion(2, ok, f"20 samples: 0 < q <= |Y*|/l_h, route gap {worst_route:.1e} (<= 1e-6), "
                            f"p identity gap {worst_p:.1e} (<= 1e-8), {dt:.1f}s")


def test_criterion_03_a_priori_estimate(report_criterion, convergence):
    rng = np.random.default_rng(7)
    cases = [
        (DomainSpec(constant_profile(), 0.1), lambda x1, x2: np.cos(np.pi * x1)),
        (DomainSpec(default_profile(), 0.2), 1.0),
        (DomainSpec(default_profile(2.0), 0.1), lambda x1, x2: x1 * x2),
        (DomainSpec(two_harmonic(g_amps=(0.2, 0.1), h_amps=(0.3, 0.1)), 0.15), None),
        (DomainSpec(piecewise_periodic([Boundary(1.0), Boundary(0.7)],
                                       [Boundary(1.0, 1.0, (Harmonic(0.3),)), Boundary(1.2)], (0, 0.5, 1)), 0.1),
         lambda x1, x2: np.sin(5 * x1) + x2 ** 2),
    ]
    worst = 0.0
    ok = True
    for d, f in cases:
        op = ThinOperator.build(d, ResolutionPolicy())
        if f is None:
            f = rng.standard_normal(op.mesh.n_nodes)
        dg = solve_eps_elliptic(d, f, op=op).diagnostics
        worst = max(worst, dg["energy"] / dg["energy_bound"] - 1)
        ok &= dg["energy_ok"]
    rows = convergence[0]
    ok &= all(r["apriori_ok"] for r in rows)
    worst = max([worst] + [r["energy"] / r["energy_bound"] - 1 for r in rows])
    ok &= worst <= 1e-9
    report_criterion(3, ok, f"{len(cases) + len(rows)} elliptic solves, max relative excess {worst:.1e} (<= 1e-9)")


def test_criterion_04_fourier_oracle(report_criterion):
    t0 = time.perf_counter()
    eps, alpha = 0.3, 2.0
    L = eps ** alpha
    phi = lambda x: eps ** (-alpha / 2) * np.cos(np.pi * x / L)
    series = rectangle_fourier(phi, eps, alpha, K_terms=64)
    u = solve_rectangle_fem(phi, eps, alpha, ny=128, nx=32)
    pts, w = quadrature_points(u.mesh)
    uq = np.einsum("qa,ta->tq", TRI_BARY, u.values[u.mesh.triangles])
    err = float(np.sqrt(np.sum(w * (uq - series(pts[..., 0], pts[..., 1])) ** 2)))
    ys = np.linspace(0.05, 0.6, 12)
    rate = fiber_decay_rate(fem_fiber_deviation(u, ys), ys)
    target = 0.9 * 2 * np.pi / eps ** (alpha - 1)
    dt = time.perf_counter() - t0
    ok = err <= 1e-3 and rate >= target and dt < 60
    report_criterion(4, ok, f"L2(FEM - series) {err:.2e} (<= 1e-3), decay exponent {rate:.2f} (>= {target:.2f}), "
                            f"{dt:.1f}s")


def test_criterion_05_homogenization_convergence(report_criterion, convergence):
    rows, _, dt = convergence
    errs = [r["err_omega_eps"] for r in rows]
    ok = all(r["status"] == "ok" for r in rows) and strictly_decreasing(errs) and errs[-1] <= 0.5 * errs[0]
    ok &= dt < 600
    report_criterion(5, ok, "errors " + ", ".join(f"{e:.3e}" for e in errs) +
                     f"; last/first {errs[-1] / errs[0]:.3f} (<= 0.5), {dt:.1f}s")


def test_criterion_06_spectrum(report_criterion, default_cfg, default_coef):
    t0 = time.perf_counter()
    rows = run_spectrum(default_cfg, 4, coef=default_coef)
    dt = time.perf_counter() - t0
    ok = all(r["status"] == "ok" for r in rows)
    ok &= all(abs(r["lam_eps_1"] - 1) <= 1e-8 and r["first_vector_spread"] <= 1e-6 for r in rows)
    # both first eigenvalues equal 1 exactly, so the j = 1 gap is roundoff; it must stay at that floor
    ok &= all(r["gap_1"] <= 1e-8 for r in rows)
    for j in (2, 3, 4):
        ok &= strictly_decreasing([r[f"gap_{j}"] for r in rows])
    ok &= dt < 300
    gaps = "; ".join(f"j={j}: " + ", ".join(f"{r[f'gap_{j}']:.2e}" for r in rows) for j in range(1, 5))
    report_criterion(6, ok, f"lambda_1 = 1 with constant vector; gaps {gaps}; {dt:.1f}s")


def test_criterion_07_boundary_perturbation(report_criterion, default_cfg):
    t0 = time.perf_counter()
    deltas = [0.1, 0.05, 0.025, 0.0]
    rows = run_perturbation(default_cfg, deltas)
    dt = time.perf_counter() - t0
    ok = all(r["status"] == "ok" for r in rows)
    table = {}
    for r in rows:
        table.setdefault(r["delta"], []).append(r["total"])
    for e in default_cfg.eps:
        col = [r["total"] for r in rows if r["eps"] == e]
        ok &= strictly_decreasing(col)
    maxima = [max(table[d]) for d in deltas]
    ok &= strictly_decreasing(maxima) and maxima[-1] <= 1e-9
    spread = max(max(table[d]) / min(table[d]) for d in deltas[:-1])
    ok &= spread <= 5 and dt < 300
    report_criterion(7, ok, "max over eps " + ", ".join(f"d={d}: {m:.3e}" for d, m in zip(deltas, maxima)) +
                     f"; cross-eps ratio {spread:.2f} (<= 5); {dt:.1f}s")


def test_criterion_08_equilibria_usc(report_criterion, default_cfg, default_coef):
    t0 = time.perf_counter()
    rows, details = run_equilibria_usc(default_cfg, coef=default_coef)
    dt = time.perf_counter() - t0
    dist = [r["distance"] for r in rows]
    ok = all(r["status"] == "ok" for r in rows) and strictly_decreasing(dist)
    const = [d["distance"] for d in details if d["constant"]]
    ok &= len(const) >= 3 * len(rows) and max(const) <= 1e-9
    ok &= max(r["max_residual"] for r in rows) < 1e-9 and dt < 300
    report_criterion(8, ok, "distance " + ", ".join(f"{v:.3e}" for v in dist) +
                     f"; constant equilibria distance {max(const):.1e}; {dt:.1f}s")


def test_criterion_09_determinism(report_criterion, convergence, tmp_path):
    _, first, _ = convergence
    run_convergence(load_config(), tmp_path)
    names = ["convergence.csv", "meta.json"]
    same = [(first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names]
    report_criterion(9, all(same), "rerun of the convergence study: " +
                     ", ".join(f"{n} {'identical' if s else 'DIFFERS'}" for n, s in zip(names, same)))


def test_criterion_10_manufactured_order(report_criterion):
    c = HomogenizedCoefficients.constant(1.0, 1.0)
    g, w = np.polynomial.legendre.leggauss(4)
    errs = []
    for n in (32, 64, 128, 256):
        m = mesh_1d(n)
        u = solve_limit_elliptic(c, lambda x: (1 + np.pi ** 2) * np.cos(np.pi * x), m)
        a, b = m.nodes[:-1], m.nodes[1:]
        x = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * g
        W = (0.5 * (b - a))[:, None] * w
        errs.append(float(np.sqrt(np.sum(W * (u(x) - np.cos(np.pi * x)) ** 2))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    report_criterion(10, bool(np.all(orders >= 1.9)), "L2 orders " + ", ".join(f"{o:.3f}" for o in orders) +
                     " (>= 1.9)")
