"""Structured column triangulations of oscillating domains, cells and rectangles.

Every 2D mesh built here comes from a node grid ``grid[i, k]``: column line
``i`` sits at abscissa ``stations[i]`` and carries ``ny + 1`` nodes stacked
between the lower and upper boundary.  Each quad ``(i, k)`` is split along the
diagonal from its lower-left to its upper-right node.  Red refinement keeps
this layout, so point location stays a pair of sorted searches.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ConfigError, MeshBudgetError
from .geometry import DomainSpec, ProfileSpec, min_over_period

LOWER, UPPER, LEFT, RIGHT = 0, 1, 2, 3
TAG_NAMES = ("LOWER", "UPPER", "LEFT", "RIGHT")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ResolutionPolicy:
    """Mesh resolution controls.

    ``n_per`` columns per fastest oscillation period, ``ny`` vertical
    intervals per column, ``h_max`` largest column width, ``cell_columns``
    columns per period in cell meshes (``cell_rows`` rows, automatic when
    ``None``), and ``node_budget`` as a guard rail.
    """

    n_per: int = 16
    ny: int = 16
    h_max: float = 1.0 / 64
    cell_columns: int = 64
    cell_rows: int | None = None
    node_budget: int = 2_000_000

    def __post_init__(self):
        if self.n_per < 8:
            raise ConfigError(f"n_per must be at least 8, got {self.n_per}")
        if self.ny < 1 or self.cell_columns < 2:
            raise ConfigError("ny must be >= 1 and cell_columns >= 2")


@dataclass(frozen=True, eq=False)
class Mesh2D:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    periodic_pairs: np.ndarray | None = None
    grid: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, float))
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.int64))
        object.__setattr__(self, "boundary_edges", _frozen(self.boundary_edges, np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_tags", _frozen(self.boundary_tags, np.int8))
        if self.periodic_pairs is not None:
            object.__setattr__(self, "periodic_pairs", _frozen(self.periodic_pairs, np.int64).reshape(-1, 2))
        if self.grid is not None:
            object.__setattr__(self, "grid", _frozen(self.grid, np.int64))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self):
        return float(self.signed_areas().sum())

    def edge_lengths(self, tag=None):
        e = self.boundary_edges if tag is None else self.boundary_edges[self.boundary_tags == tag]
        d = self.nodes[e[:, 1]] - self.nodes[e[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def tagged_nodes(self, tag):
        return np.unique(self.boundary_edges[self.boundary_tags == tag])

    @property
    def stations(self):
        if self.grid is None:
            raise AttributeError("mesh has no column layout")
        return self.nodes[self.grid[:, 0], 0]

    def locate(self, points):
        """Find the containing triangle and barycentric coordinates of each point.

        Returns ``(tri, bary, inside)``.  Points outside the mesh are snapped
        to the nearest column/row; ``inside`` flags them.
        """
        if self.grid is None:
            raise AttributeError("point location needs a column-layout mesh")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        grid = self.grid
        nx, ny = grid.shape[0] - 1, grid.shape[1] - 1
        xs = self.stations
        px, py = pts[:, 0], pts[:, 1]
        i = np.clip(np.searchsorted(xs, px, side="right") - 1, 0, nx - 1)
        t = (px - xs[i]) / (xs[i + 1] - xs[i])
        Y = self.nodes[grid, 1]
        tri = np.empty(len(pts), dtype=np.int64)
        bary = np.empty((len(pts), 3))
        inside = np.empty(len(pts), dtype=bool)
        chunk = max(1, 4_000_000 // (ny + 1))
        for s in range(0, len(pts), chunk):
            sl = slice(s, s + chunk)
            ii, tt, yy = i[sl], t[sl], py[sl]
            lev = (1.0 - tt)[:, None] * Y[ii] + tt[:, None] * Y[ii + 1]
            k = np.clip((lev <= yy[:, None]).sum(axis=1) - 1, 0, ny - 1)
            tol = 1e-10 * (1.0 + np.abs(lev[:, -1] - lev[:, 0]))
            inside[sl] = (tt >= -1e-12) & (tt <= 1 + 1e-12) & (yy >= lev[:, 0] - tol) & (yy <= lev[:, -1] + tol)
            a = self.nodes[grid[ii, k]]
            b = self.nodes[grid[ii + 1, k]]
            c = self.nodes[grid[ii + 1, k + 1]]
            d = self.nodes[grid[ii, k + 1]]
            p = np.column_stack([px[sl], yy])
            ca = c - a
            pa = p - a
            below = ca[:, 0] * pa[:, 1] - ca[:, 1] * pa[:, 0] <= 0
            v1 = np.where(below[:, None], b, c)
            v2 = np.where(below[:, None], c, d)
            e1, e2 = v1 - a, v2 - a
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            l1 = (pa[:, 0] * e2[:, 1] - pa[:, 1] * e2[:, 0]) / det
            l2 = (e1[:, 0] * pa[:, 1] - e1[:, 1] * pa[:, 0]) / det
            bary[sl] = np.column_stack([1.0 - l1 - l2, l1, l2])
            quad = ii * ny + k
            tri[sl] = 2 * quad + np.where(below, 0, 1)
        return tri, bary, inside

    def interpolate(self, values, points):
        """P1 interpolation of nodal ``values`` at ``points``."""
        tri, bary, _ = self.locate(points)
        return np.einsum("ij,ij->i", bary, np.asarray(values)[self.triangles[tri]])

    def gradients(self, values):
        """Per-triangle gradient of the P1 field with nodal ``values``."""
        p = self.nodes[self.triangles]
        u = np.asarray(values)[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        du1 = u[:, 1] - u[:, 0]
        du2 = u[:, 2] - u[:, 0]
        gx = (du1 * d2[:, 1] - du2 * d1[:, 1]) / det
        gy = (du2 * d1[:, 0] - du1 * d2[:, 0]) / det
        return np.column_stack([gx, gy])


@dataclass(frozen=True, eq=False)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        x = _frozen(self.nodes, float)
        if x.ndim != 1 or len(x) < 2 or x[0] != 0.0 or x[-1] != 1.0 or np.any(np.diff(x) <= 0):
            raise ConfigError("1D mesh must increase strictly from 0 to 1")
        object.__setattr__(self, "nodes", x)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def h(self):
        return np.diff(self.nodes)


def mesh_1d(n, breakpoints=(0.0, 1.0)):
    """Uniform-per-piece interval mesh with about ``n`` elements including all breakpoints."""
    bp = np.asarray(sorted(set(breakpoints) | {0.0, 1.0}), dtype=float)
    parts = []
    for a, b in zip(bp[:-1], bp[1:]):
        m = max(1, int(math.ceil(n * (b - a) - 1e-9)))
        parts.append(np.linspace(a, b, m + 1)[:-1])
    return Mesh1D(np.concatenate(parts + [[1.0]]))


def mesh_from_stations(stations, breakpoints=(0.0, 1.0)):
    x = np.union1d(np.asarray(stations, dtype=float), np.asarray(breakpoints, dtype=float))
    return Mesh1D(x)


def _grid_triangles(grid):
    # quad (i, k) -> triangles 2*(i*ny + k) and 2*(i*ny + k) + 1; locate() relies on it
    a = grid[:-1, :-1].ravel()
    b = grid[1:, :-1].ravel()
    c = grid[1:, 1:].ravel()
    d = grid[:-1, 1:].ravel()
    tris = np.empty((2 * len(a), 3), dtype=np.int64)
    tris[0::2] = np.column_stack([a, b, c])
    tris[1::2] = np.column_stack([a, c, d])
    return tris


def grid_mesh(stations, levels, pairs=False):
    """Triangulate a column grid; ``levels[i]`` holds the node heights on column ``i``."""
    xs = np.asarray(stations, dtype=float)
    Y = np.asarray(levels, dtype=float)
    nx, ny = Y.shape[0] - 1, Y.shape[1] - 1
    if len(xs) != nx + 1 or nx < 1 or ny < 1:
        raise ConfigError("levels must have one row per station and at least 2 entries per row")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(Y, axis=1) <= 0):
        raise AssemblyError("column grid must be strictly increasing in both directions")
    grid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    nodes = np.column_stack([np.repeat(xs, ny + 1), Y.ravel()])
    tris = _grid_triangles(grid)
    edges = [
        np.column_stack([grid[:-1, 0], grid[1:, 0]]),
        np.column_stack([grid[1:, -1], grid[:-1, -1]]),
        np.column_stack([grid[0, 1:], grid[0, :-1]]),
        np.column_stack([grid[-1, :-1], grid[-1, 1:]]),
    ]
    tags = np.concatenate([np.full(len(e), t) for e, t in zip(edges, (LOWER, UPPER, LEFT, RIGHT))])
    pp = np.column_stack([grid[0], grid[-1]]) if pairs else None
    return Mesh2D(nodes, tris, np.vstack(edges), tags, pp, grid)


def _stations(profile: ProfileSpec, h_target):
    parts = []
    part = profile.partition
    for a, b in zip(part[:-1], part[1:]):
        m = max(1, int(math.ceil((b - a) / h_target - 1e-9)))
        parts.append(a + (b - a) * np.arange(m) / m)
    return np.concatenate(parts + [[1.0]])


def thin_domain_stations(d: DomainSpec, res: ResolutionPolicy):
    h = min(res.h_max, d.fastest_period / res.n_per)
    return _stations(d.profile, h)


def mesh_thin_domain(d: DomainSpec, res: ResolutionPolicy = ResolutionPolicy()):
    """Column mesh of ``{0 < x1 < 1, -G_eps(x1) < x2 < H_eps(x1)}``."""
    h = min(res.h_max, d.fastest_period / res.n_per)
    estimate = (math.ceil(1.0 / h) + len(d.profile.partition)) * (res.ny + 1)
    if estimate > res.node_budget:
        raise MeshBudgetError(estimate, res.node_budget)
    xs = _stations(d.profile, h)
    lo = -d.G_eps(xs)
    hi = d.H_eps(xs)
    frac = np.arange(res.ny + 1) / res.ny
    levels = lo[:, None] + (hi - lo)[:, None] * frac[None, :]
    levels[:, 0], levels[:, -1] = lo, hi
    return grid_mesh(xs, levels)


def cell_rows(profile: ProfileSpec, G0, hmax, n_cols):
    return max(2, int(math.ceil(n_cols * (G0 + hmax) / profile.l_h)))


def mesh_cell(p: ProfileSpec, x, res: ResolutionPolicy = ResolutionPolicy(), piece=None, G0=None, n_cols=None):
    """Mesh of the cell ``{0 < y1 < l_h, -G0(x) < y2 < H(x, y1)}`` with periodic pairs.

    Tags: LOWER is the flat bottom, UPPER the graph of ``H(x, .)`` and
    LEFT/RIGHT the lateral sides, whose nodes are paired row by row.
    """
    n_cols = res.cell_columns if n_cols is None else int(n_cols)
    if G0 is None:
        G0 = min_over_period(p, "G", x, piece=piece)
    l = p.l_h
    ys = l * np.arange(n_cols + 1) / n_cols
    top = p.H(x, ys, piece=piece)
    top[-1] = top[0]
    rows = res.cell_rows or cell_rows(p, G0, float(top.max()), n_cols)
    if (n_cols + 1) * (rows + 1) > res.node_budget:
        raise MeshBudgetError((n_cols + 1) * (rows + 1), res.node_budget)
    frac = np.arange(rows + 1) / rows
    levels = -G0 + (top + G0)[:, None] * frac[None, :]
    levels[:, -1] = top
    return grid_mesh(ys, levels, pairs=True)


def mesh_rectangle_Qeps(eps, alpha, ny, nx=None):
    """Structured mesh of ``(-eps**alpha, eps**alpha) x (0, 1)``; LOWER is the Dirichlet side."""
    nx = ny if nx is None else nx
    L = eps ** alpha
    xs = np.linspace(-L, L, nx + 1)
    levels = np.tile(np.linspace(0.0, 1.0, ny + 1), (nx + 1, 1))
    return grid_mesh(xs, levels)


def refine(m: Mesh2D):
    """Uniform red refinement: every triangle is split into four."""
    tris = m.triangles
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e.sort(axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    n0 = m.n_nodes
    mids = 0.5 * (m.nodes[uniq[:, 0]] + m.nodes[uniq[:, 1]])
    nodes = np.vstack([m.nodes, mids])
    nt = len(tris)
    m01, m12, m20 = (n0 + inv[:nt], n0 + inv[nt:2 * nt], n0 + inv[2 * nt:])
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new = np.empty((4 * nt, 3), dtype=np.int64)
    new[0::4] = np.column_stack([a, m01, m20])
    new[1::4] = np.column_stack([m01, b, m12])
    new[2::4] = np.column_stack([m20, m12, c])
    new[3::4] = np.column_stack([m01, m12, m20])

    def mid(i, j):
        key = np.sort(np.column_stack([i, j]), axis=1)
        pos = np.searchsorted(uniq[:, 0] * (n0 + 1) + uniq[:, 1], key[:, 0] * (n0 + 1) + key[:, 1])
        return n0 + pos

    be = m.boundary_edges
    bm = mid(be[:, 0], be[:, 1])
    edges = np.empty((2 * len(be), 2), dtype=np.int64)
    edges[0::2] = np.column_stack([be[:, 0], bm])
    edges[1::2] = np.column_stack([bm, be[:, 1]])
    tags = np.repeat(m.boundary_tags, 2)

    pairs = None
    if m.periodic_pairs is not None:
        partner = dict(m.periodic_pairs.tolist())
        left = be[m.boundary_tags == LEFT]
        extra = []
        for i, j in left.tolist():
            if i not in partner or j not in partner:
                raise AssemblyError(f"left edge ({i}, {j}) has no periodic partner")
            extra.append((int(mid([i], [j])[0]), int(mid([partner[i]], [partner[j]])[0])))
        pairs = np.vstack([m.periodic_pairs, np.asarray(extra, dtype=np.int64).reshape(-1, 2)])

    grid = None
    if m.grid is not None:
        g = m.grid
        nx, ny = g.shape[0] - 1, g.shape[1] - 1
        grid = np.empty((2 * nx + 1, 2 * ny + 1), dtype=np.int64)
        grid[0::2, 0::2] = g
        grid[1::2, 0::2] = mid(g[:-1, :].ravel(), g[1:, :].ravel()).reshape(nx, ny + 1)
        grid[0::2, 1::2] = mid(g[:, :-1].ravel(), g[:, 1:].ravel()).reshape(nx + 1, ny)
        grid[1::2, 1::2] = mid(g[:-1, :-1].ravel(), g[1:, 1:].ravel()).reshape(nx, ny)
        # same triangle set as the red split, reordered to the grid layout
        new = _grid_triangles(grid)
    return Mesh2D(nodes, new, edges, tags, pairs, grid)


# -- text dump -------------------------------------------------------------

def dump_mesh(m: Mesh2D, path):
    """Write the plain-text NODES / TRIANGLES / BOUNDARY / PAIRS format."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"NODES {m.n_nodes}\n")
        for i, (x, y) in enumerate(m.nodes.tolist()):
            fh.write(f"{i} {x!r} {y!r}\n")
        fh.write(f"TRIANGLES {m.n_triangles}\n")
        for t in m.triangles.tolist():
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")
        fh.write(f"BOUNDARY {len(m.boundary_edges)}\n")
        for (i, j), tag in zip(m.boundary_edges.tolist(), m.boundary_tags.tolist()):
            fh.write(f"{i} {j} {TAG_NAMES[tag]}\n")
        pairs = m.periodic_pairs if m.periodic_pairs is not None else np.empty((0, 2), int)
        fh.write(f"PAIRS {len(pairs)}\n")
        for i, j in pairs.tolist():
            fh.write(f"{i} {j}\n")


def read_mesh(path):
    sections = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0
    while pos < len(lines):
        name, count = lines[pos].split()
        count = int(count)
        sections[name] = [ln.split() for ln in lines[pos + 1: pos + 1 + count]]
        pos += count + 1
    nodes = np.array([[float(r[1]), float(r[2])] for r in sections["NODES"]]).reshape(-1, 2)
    tris = np.array([[int(v) for v in r] for r in sections["TRIANGLES"]], dtype=np.int64).reshape(-1, 3)
    edges = np.array([[int(r[0]), int(r[1])] for r in sections["BOUNDARY"]], dtype=np.int64).reshape(-1, 2)
    tags = np.array([TAG_NAMES.index(r[2]) for r in sections["BOUNDARY"]], dtype=np.int8)
    pairs = np.array([[int(v) for v in r] for r in sections.get("PAIRS", [])], dtype=np.int64).reshape(-1, 2)
    return Mesh2D(nodes, tris, edges, tags, pairs if len(pairs) else None)
