"""Cell problem on one period of the upper oscillation and the homogenized coefficients."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .assembly import (
    Field, SparseSystem, apply_periodic, assemble_B1_load, assemble_mass,
    assemble_stiffness, lumped, solve_mean_zero,
)
from .errors import ConsistencyError
from .geometry import ProfileSpec, min_over_period, period_average
from .mesh import Mesh2D, ResolutionPolicy, mesh_cell

Q_AGREE = 1e-6


@dataclass(frozen=True, eq=False)
class CellSolution:
    """Corrector on the cell mesh with the two evaluations of the diffusion coefficient."""

    x: float
    G0: float
    X: Field
    q_div: float
    q_energy: float
    area: float
    l_h: float

    @property
    def mesh(self) -> Mesh2D:
        return self.X.mesh

    @property
    def q(self):
        return self.q_energy

    @property
    def energy(self):
        """Dirichlet energy of the corrector."""
        K = assemble_stiffness(self.mesh)
        return float(self.X.values @ (K @ self.X.values))


def solve_cell_problem(p: ProfileSpec, x, res: ResolutionPolicy = ResolutionPolicy(), piece=None,
                       n_cols=None, slope="secant", G0=None) -> CellSolution:
    """Solve the periodic cell problem at slow position ``x``.

    The corrector is harmonic in the cell, periodic across the lateral sides,
    has zero flux through the flat bottom, flux ``N1`` through the top and
    zero mean.
    """
    if G0 is None:
        G0 = min_over_period(p, "G", x, piece=piece)
    m = mesh_cell(p, x, res, piece=piece, G0=G0, n_cols=n_cols)
    K = assemble_stiffness(m)
    b = assemble_B1_load(m, p, x, piece=piece, slope=slope)
    red = apply_periodic(SparseSystem(K, b), m.periodic_pairs)
    w = red.P.T @ lumped(assemble_mass(m))
    X = red.expand(solve_mean_zero(red.matrix, red.rhs, w))

    area = m.area
    l = p.l_h
    tri_area = m.signed_areas()
    dX1 = m.gradients(X)[:, 0]
    q_div = (area - float(tri_area @ dX1)) / l
    e = m.nodes[:, 0] - X
    q_energy = float(e @ (K @ e)) / l
    rel = abs(q_div - q_energy) / abs(q_energy)
    if slope == "secant" and rel > Q_AGREE:
        raise ConsistencyError(
            f"diffusion coefficient routes disagree at x={x}: divergence {q_div!r}, energy {q_energy!r}"
        )
    return CellSolution(float(x), float(G0), Field(m, X), q_div, q_energy, area, l)


def homogenized_q(p: ProfileSpec, x, res: ResolutionPolicy = ResolutionPolicy(), piece=None, n_cols=None):
    """Effective diffusion at ``x`` on a fixed cell resolution."""
    return solve_cell_problem(p, x, res, piece=piece, n_cols=n_cols).q


def converged_q(p: ProfileSpec, x, res: ResolutionPolicy = ResolutionPolicy(), piece=None,
                start=64, cap=512, rtol=5e-3, extrapolate=True):
    """Effective diffusion with column doubling until the relative change is below ``rtol``.

    Returns ``(q, info)``.  With ``extrapolate`` the last two values are
    combined by one Richardson step (the energy error is second order).
    """
    G0 = min_over_period(p, "G", x, piece=piece)
    n = start
    prev = solve_cell_problem(p, x, res, piece=piece, n_cols=n, G0=G0)
    history = [(n, prev.q)]
    if prev.q_div == prev.area / p.l_h and np.all(prev.X.values == 0):
        return prev.q, {"columns": n, "history": history, "G0": G0, "change": 0.0}
    change = np.inf
    while n < cap:
        n *= 2
        cur = solve_cell_problem(p, x, res, piece=piece, n_cols=n, G0=G0)
        history.append((n, cur.q))
        change = abs(cur.q - prev.q) / cur.q
        prev = cur
        if change < rtol:
            break
    q = prev.q
    if extrapolate and len(history) > 1:
        q = (4 * history[-1][1] - history[-2][1]) / 3
    return q, {"columns": n, "history": history, "G0": G0, "change": change}


def cell_area(p: ProfileSpec, x, piece=None, G0=None):
    """``|Y*(x)|`` by adaptive quadrature of ``H + G0`` over one period."""
    if G0 is None:
        G0 = min_over_period(p, "G", x, piece=piece)
    val, _ = quad(lambda y: float(p.H(x, y, piece=piece)) + G0, 0.0, p.l_h, limit=200,
                  epsabs=1e-13, epsrel=1e-13)
    return val


def homogenized_p(p: ProfileSpec, x, piece=None):
    """Effective weight ``|Y*|/l_h + <G> - G0``."""
    G0 = min_over_period(p, "G", x, piece=piece)
    return cell_area(p, x, piece, G0) / p.l_h + period_average(p, "G", x, piece=piece) - G0


def lobatto_points(a, b, n):
    """``n`` Chebyshev-Lobatto points on ``[a, b]``, ascending, endpoints included."""
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (a + b) + 0.5 * (b - a) * t


@dataclass(frozen=True, eq=False)
class HomogenizedCoefficients:
    """Samples of ``q``, ``p`` and ``G0`` with piecewise-linear interpolation per piece."""

    x: np.ndarray
    q: np.ndarray
    p: np.ndarray
    G0: np.ndarray
    piece: np.ndarray
    partition: tuple
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("x", "q", "p", "G0", "piece"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def constant(cls, q, p, G0=0.0, partition=(0.0, 1.0)):
        """Coefficients constant on every piece (useful for tests and flat profiles)."""
        xs, qs, ps, gs, ix = [], [], [], [], []
        for i in range(len(partition) - 1):
            qi = q[i] if np.ndim(q) else q
            pi = p[i] if np.ndim(p) else p
            xs += [partition[i], partition[i + 1]]
            qs += [qi, qi]
            ps += [pi, pi]
            gs += [G0, G0]
            ix += [i, i]
        return cls(np.array(xs, float), np.array(qs, float), np.array(ps, float),
                   np.array(gs, float), np.array(ix), tuple(partition))

    def piece_of(self, x):
        inner = np.asarray(self.partition[1:-1])
        return np.searchsorted(inner, np.asarray(x, dtype=float), side="left")

    def _interp(self, vals, x, piece=None):
        x = np.asarray(x, dtype=float)
        idx = self.piece_of(x) if piece is None else np.full(x.shape, piece)
        out = np.empty(x.shape)
        for i in range(len(self.partition) - 1):
            mask = idx == i
            if np.any(mask):
                sel = self.piece == i
                out[mask] = np.interp(x[mask], self.x[sel], vals[sel])
        return out

    def q_at(self, x, piece=None):
        return self._interp(self.q, x, piece)

    def p_at(self, x, piece=None):
        return self._interp(self.p, x, piece)

    def G0_at(self, x, piece=None):
        return self._interp(self.G0, x, piece)

    def rows(self):
        return list(zip(self.x.tolist(), self.q.tolist(), self.p.tolist(), self.G0.tolist()))


def coefficient_table(p: ProfileSpec, n=8, res: ResolutionPolicy = ResolutionPolicy(), start=64,
                      cap=512, rtol=5e-3, extrapolate=True, executor=None) -> HomogenizedCoefficients:
    """Sample the homogenized coefficients at ``n`` Lobatto points per piece.

    Pieces on which the profile does not depend on ``x`` are solved once.
    """
    if n < 2:
        raise ValueError("need at least 2 samples per piece")
    jobs = []
    for i in range(p.n_pieces):
        xs = lobatto_points(p.partition[i], p.partition[i + 1], n)
        if p.x_independent_piece(i):
            jobs.append((i, xs, [float(xs[0])]))
        else:
            jobs.append((i, xs, [float(v) for v in xs]))
    tasks = [(i, xv) for i, _, xl in jobs for xv in xl]

    def one(task):
        i, xv = task
        q, info = converged_q(p, xv, res, piece=i, start=start, cap=cap, rtol=rtol, extrapolate=extrapolate)
        return q, homogenized_p(p, xv, piece=i), info["G0"], info

    results = list(executor.map(one, tasks)) if executor else [one(t) for t in tasks]
    lookup = dict(zip(tasks, results))
    X, Q, P, G, I, infos = [], [], [], [], [], []
    for i, xs, xl in jobs:
        for xv in xs:
            key = (i, float(xv)) if len(xl) > 1 else (i, xl[0])
            q, pv, g0, info = lookup[key]
            X.append(xv)
            Q.append(q)
            P.append(pv)
            G.append(g0)
            I.append(i)
        infos.append({"piece": i, "columns": [lookup[(i, v)][3]["columns"] for v in xl]})
    return HomogenizedCoefficients(np.array(X), np.array(Q), np.array(P), np.array(G), np.array(I),
                                   tuple(p.partition), {"pieces": infos, "rtol": rtol, "cap": cap})
