from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from oscithin.errors import MeshBudgetError
from oscithin.geometry import (
    Boundary, DomainSpec, Harmonic, ProfileSpec, constant_profile, default_profile, single_harmonic, two_harmonic,
)
from oscithin.mesh import (
    LEFT, LOWER, RIGHT, UPPER, Mesh2D, ResolutionPolicy, dump_mesh, grid_mesh, mesh_1d, mesh_cell,
    mesh_rectangle_Qeps, mesh_thin_domain, read_mesh, refine,
)


def check_mesh_invariants(m: Mesh2D, tol=1e-8):
    assert np.all(m.signed_areas() > 0)
    edges = np.sort(np.vstack([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1)
    counts = Counter(map(tuple, edges.tolist()))
    bnd = {tuple(sorted(e)) for e in m.boundary_edges.tolist()}
    assert len(bnd) == len(m.boundary_edges)  # each boundary edge carries one tag
    for e, c in counts.items():
        assert c == (1 if e in bnd else 2)
    assert all(counts[e] == 1 for e in bnd)
    # tagged lengths add up to the perimeter
    total = sum(m.edge_lengths(t).sum() for t in (LOWER, UPPER, LEFT, RIGHT))
    assert total == pytest.approx(m.edge_lengths().sum(), rel=tol)


def test_flat_structured_grid():
    d = DomainSpec(constant_profile(), 0.3)
    m = mesh_thin_domain(d, ResolutionPolicy(n_per=8, ny=4, h_max=0.25))
    assert m.n_triangles == 32
    assert m.nodes[:, 0].min() == 0 and m.nodes[:, 0].max() == 1
    assert m.nodes[:, 1].min() == -1 and m.nodes[:, 1].max() == 1
    assert m.area == pytest.approx(2.0, abs=1e-14)
    check_mesh_invariants(m)


def test_thin_domain_area_matches_quadrature():
    d = DomainSpec(default_profile(1.5), 0.2)
    m = mesh_thin_domain(d, ResolutionPolicy())
    oracle, _ = quad(lambda x: float(d.G_eps(x) + d.H_eps(x)), 0, 1, limit=400, epsabs=1e-13, epsrel=1e-13)
    assert m.area == pytest.approx(oracle, abs=1e-8)
    check_mesh_invariants(m)


def test_boundary_nodes_on_profile_graphs():
    d = DomainSpec(two_harmonic(g_amps=(0.2, 0.1), h_amps=(0.3, 0.1), alpha=2.0), 0.3)
    m = mesh_thin_domain(d, ResolutionPolicy())
    low = m.tagged_nodes(LOWER)
    up = m.tagged_nodes(UPPER)
    np.testing.assert_allclose(m.nodes[low, 1], -d.G_eps(m.nodes[low, 0]), atol=1e-12)
    np.testing.assert_allclose(m.nodes[up, 1], d.H_eps(m.nodes[up, 0]), atol=1e-12)


def test_budget_refusal():
    p = single_harmonic(g_amp=0.2, alpha=2.0)
    with pytest.raises(MeshBudgetError) as exc:
        mesh_thin_domain(DomainSpec(p, 1e-4), ResolutionPolicy(node_budget=10**7))
    assert exc.value.estimated > 10**7


def test_breakpoints_are_columns():
    from oscithin.geometry import piecewise_periodic
    p = piecewise_periodic([Boundary(1.0), Boundary(1.2)],
                           [Boundary(1.0, 1.0, (Harmonic(0.3),)), Boundary(1.0)], (0.0, 0.37, 1.0))
    m = mesh_thin_domain(DomainSpec(p, 0.2), ResolutionPolicy())
    assert np.any(m.stations == 0.37)
    assert 0.37 in mesh_1d(10, p.partition).nodes


def test_flat_cell_rectangle():
    m = mesh_cell(constant_profile(), 0.5, ResolutionPolicy(cell_columns=8, cell_rows=6))
    assert m.area == pytest.approx(2.0, abs=1e-14)
    assert m.nodes[:, 1].min() == -1 and m.nodes[:, 1].max() == 1
    pairs = m.periodic_pairs
    assert len(pairs) == 7
    np.testing.assert_array_equal(m.nodes[pairs[:, 0], 1], m.nodes[pairs[:, 1], 1])
    check_mesh_invariants(m)


def test_cosine_cell_area():
    m = mesh_cell(default_profile(), 0.3)
    assert m.area == pytest.approx(2.0, abs=1e-8)


def test_two_harmonic_cell_area_matches_quadrature():
    p = two_harmonic(h_amps=(0.4, 0.15), l_h=1.3)
    m = mesh_cell(p, 0.5)
    oracle, _ = quad(lambda y: float(p.H(0.5, y)) + 1.0, 0, 1.3, epsabs=1e-13, epsrel=1e-13)
    assert m.area == pytest.approx(oracle, abs=1e-8)
    check_mesh_invariants(m)


def test_cell_pairs_bijection_and_offsets():
    p = two_harmonic(h_amps=(0.4, 0.15), l_h=1.3)
    m = mesh_cell(p, 0.5)
    pr = m.periodic_pairs
    assert len(np.unique(pr[:, 0])) == len(pr) == len(np.unique(pr[:, 1]))
    assert set(pr[:, 0].tolist()) == set(m.tagged_nodes(LEFT).tolist())
    assert set(pr[:, 1].tolist()) == set(m.tagged_nodes(RIGHT).tolist())
    np.testing.assert_allclose(m.nodes[pr[:, 1], 1] - m.nodes[pr[:, 0], 1], 0, atol=1e-12)
    np.testing.assert_allclose(m.nodes[pr[:, 1], 0] - m.nodes[pr[:, 0], 0], 1.3, atol=1e-12)


def test_rectangle_Qeps():
    m = mesh_rectangle_Qeps(0.5, 2.0, 4)
    assert m.n_triangles == 2 * 4 * 4
    assert m.nodes[:, 0].min() == pytest.approx(-0.25) and m.nodes[:, 0].max() == pytest.approx(0.25)
    assert m.area == pytest.approx(0.5, abs=1e-15)
    r = mesh_rectangle_Qeps(0.3, 1.5, 8)
    assert np.ptp(r.nodes[:, 0]) == pytest.approx(2 * 0.3 ** 1.5, abs=1e-12)
    assert 2 * 0.3 ** 1.5 == pytest.approx(0.3286, abs=1e-4)


@given(st.floats(0.05, 1.0), st.sampled_from([1.5, 2.0]), st.integers(1, 12))
def test_rectangle_area(eps, alpha, ny):
    m = mesh_rectangle_Qeps(eps, alpha, ny)
    assert m.area == pytest.approx(2 * eps ** alpha, rel=1e-12)


def test_refine_square():
    m = grid_mesh([0.0, 1.0], [[0.0, 1.0], [0.0, 1.0]])
    assert m.n_triangles == 2
    r = refine(m)
    assert r.n_triangles == 8
    assert r.area == pytest.approx(1.0, abs=1e-12)
    check_mesh_invariants(r)


def test_refine_cell_pairs_count():
    m = mesh_cell(default_profile(), 0.2, ResolutionPolicy(cell_columns=8, cell_rows=5))
    n_left = int((m.boundary_tags == LEFT).sum())
    r = refine(m)
    assert len(r.periodic_pairs) == len(m.periodic_pairs) + n_left
    assert r.area == pytest.approx(m.area, abs=1e-12)
    pr = r.periodic_pairs
    np.testing.assert_allclose(r.nodes[pr[:, 1], 1], r.nodes[pr[:, 0], 1], atol=1e-12)
    check_mesh_invariants(r)
    # the refined grid layout still supports point location
    pts = np.array([[0.3, 0.1], [0.77, -0.4]])
    tri, bary, inside = r.locate(pts)
    assert np.all(inside)
    np.testing.assert_allclose(np.einsum("ij,ijk->ik", bary, r.nodes[r.triangles[tri]]), pts, atol=1e-12)


@given(st.floats(0.1, 0.4), st.floats(0.0, 0.45), st.floats(0.0, 0.3))
def test_random_thin_meshes_are_valid(eps, h_amp, g_amp):
    p = single_harmonic(g_amp=g_amp, h_amp=h_amp, alpha=1.5)
    m = mesh_thin_domain(DomainSpec(p, eps), ResolutionPolicy(n_per=8, ny=4, h_max=1 / 16))
    check_mesh_invariants(m)


def test_dump_roundtrip(tmp_path):
    m = mesh_cell(default_profile(), 0.4, ResolutionPolicy(cell_columns=6, cell_rows=3))
    path = tmp_path / "cell.txt"
    dump_mesh(m, path)
    text = path.read_text()
    for head in ("NODES", "TRIANGLES", "BOUNDARY", "PAIRS"):
        assert head in text
    back = read_mesh(path)
    np.testing.assert_array_equal(back.nodes, m.nodes)
    np.testing.assert_array_equal(back.triangles, m.triangles)
    np.testing.assert_array_equal(back.boundary_tags, m.boundary_tags)
    np.testing.assert_array_equal(back.periodic_pairs, m.periodic_pairs)


def test_mesh_1d_contains_breakpoints():
    m = mesh_1d(7, (0.0, 0.3, 1.0))
    assert m.nodes[0] == 0 and m.nodes[-1] == 1
    assert 0.3 in m.nodes
    assert np.all(np.diff(m.nodes) > 0)
