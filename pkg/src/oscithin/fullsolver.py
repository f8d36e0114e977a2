"""Problems on the rescaled thin domain, transfer operators and comparison norms."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import (
    TRI_BARY, Field, StiffnessForm, assemble_load, assemble_mass, assemble_stiffness, factorize, lumped,
    quadrature_points, solve_spd,
)
from .errors import ConvergenceError, DomainError
from .geometry import DomainSpec
from .limit1d import Nonlinearity, Trajectory, _monotone, dedupe, dual_residual, imex_run, newton_equilibrium
from .mesh import LOWER, Mesh1D, Mesh2D, ResolutionPolicy, mesh_from_stations, mesh_rectangle_Qeps, mesh_thin_domain

OMEGA_EPS = "OMEGA_EPS"
OMEGA_TILDE = "OMEGA_TILDE"

_GX, _GW = np.polynomial.legendre.leggauss(8)


@dataclass(eq=False)
class ThinOperator:
    """Assembled operator ``-d11 - eps^-2 d22 + I`` on a mesh of the thin domain."""

    domain: DomainSpec
    mesh: Mesh2D
    K: sp.csr_matrix
    M: sp.csr_matrix
    _lu: object = None

    @classmethod
    def build(cls, d: DomainSpec, res: ResolutionPolicy = ResolutionPolicy(), mesh=None):
        m = mesh if mesh is not None else mesh_thin_domain(d, res)
        return cls(d, m, assemble_stiffness(m, 1.0, d.eps ** -2), assemble_mass(m))

    @property
    def A(self):
        return (self.K + self.M).tocsr()

    @property
    def ML(self):
        return lumped(self.M)

    @property
    def S(self):
        if getattr(self, "_S", None) is None:
            self._S = StiffnessForm(self.mesh, 1.0, self.domain.eps ** -2)
        return self._S

    def apply(self, u):
        return self.S.apply(u) + self.M @ u

    def energy(self, u, nl: Nonlinearity):
        """Lyapunov functional ``0.5 (u, A u) - sum ML F(u)``."""
        return 0.5 * (self.S.energy(u) + float(u @ (self.M @ u))) - float(self.ML @ nl.F(u))

    def solve(self, b, tol_rel=1e-10):
        if self._lu is None:
            self._lu = factorize(self.A)
        return solve_spd(self.A, b, tol_rel=tol_rel, method="direct", lu=self._lu)

    def mesh_1d(self):
        """Interval mesh on the same stations, so lifts are exact P1 functions."""
        return mesh_from_stations(self.mesh.stations, self.domain.profile.partition)

    def norms(self, u):
        """``(|u|^2, |d1 u|^2, eps^-2 |d2 u|^2)``."""
        g = self.mesh.gradients(u)
        a = self.mesh.signed_areas()
        return (float(u @ (self.M @ u)), float(a @ g[:, 0] ** 2),
                float(a @ g[:, 1] ** 2) / self.domain.eps ** 2)


@dataclass(eq=False)
class EpsSolution:
    u: Field
    op: ThinOperator
    diagnostics: dict = field(default_factory=dict)


def _source(op: ThinOperator, feps):
    """Load vector and quadrature L2 norm of the source."""
    m = op.mesh
    if isinstance(feps, Field):
        feps = feps.values
    if isinstance(feps, np.ndarray) and feps.shape == (m.n_nodes,):
        b = op.M @ feps
        return b, float(np.sqrt(max(feps @ b, 0.0)))
    pts, w = quadrature_points(m)
    if callable(feps):
        fv = np.asarray(feps(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(w.shape)
    else:
        fv = np.full(w.shape, float(feps))
    return assemble_load(m, feps if callable(feps) else float(feps)), float(np.sqrt(np.sum(w * fv * fv)))


def a_priori(op: ThinOperator, u, fnorm):
    """Discrete energy estimate: ``|u|^2 + |d1u|^2 + eps^-2|d2u|^2 <= |f| |u|``."""
    n0, n1, n2 = op.norms(u)
    lhs = n0 + n1 + n2
    rhs = fnorm * np.sqrt(n0)
    bound = np.sqrt(n0) + np.sqrt(n1) + np.sqrt(n2)
    return {
        "energy": lhs,
        "energy_bound": rhs,
        "energy_ok": bool(lhs <= rhs * (1 + 1e-9) + 1e-300),
        "norm_sum": bound,
        "norm_sum_ratio": bound / fnorm if fnorm > 0 else 0.0,
    }


def solve_eps_elliptic(d: DomainSpec, feps, res: ResolutionPolicy = ResolutionPolicy(), op: ThinOperator = None,
                       tol_rel=1e-10) -> EpsSolution:
    """Solve the Neumann problem ``-u_11 - eps^-2 u_22 + u = f`` on the thin domain.

    ``feps`` is a callable ``f(x1, x2)``, a constant, or nodal values.
    """
    op = op or ThinOperator.build(d, res)
    b, fnorm = _source(op, feps)
    u = op.solve(b, tol_rel) if np.any(b) else np.zeros(op.mesh.n_nodes)
    diag = a_priori(op, u, fnorm)
    diag["residual"] = float(np.linalg.norm(b - op.A @ u) / max(np.linalg.norm(b), 1e-300))
    diag["nodes"] = op.mesh.n_nodes
    return EpsSolution(Field(op.mesh, u), op, diag)


def solve_eps_parabolic(d: DomainSpec, nl: Nonlinearity, u0, T=5.0, dt=1e-3, res: ResolutionPolicy = ResolutionPolicy(),
                        op: ThinOperator = None, save_every=None, stop_residual=None) -> Trajectory:
    """IMEX march of ``u_t - u_11 - eps^-2 u_22 + u = f(u)`` from ``u0`` (Field, nodal array or constant)."""
    op = op or (ThinOperator.build(d, res, mesh=u0.mesh) if isinstance(u0, Field) else ThinOperator.build(d, res))
    v0 = u0.values if isinstance(u0, Field) else np.broadcast_to(np.asarray(u0, float), (op.mesh.n_nodes,)).copy()
    times, snaps, energies, dt_stable = imex_run(op, nl, v0, T, dt, save_every, mu=0.25,
                                                 stop_residual=stop_residual)
    info = {"residual": dual_residual(op, snaps[-1], nl)}
    n0, _, n2 = op.norms(snaps[-1])
    info["vertical_variation"] = float(np.sqrt(n2) * d.eps / np.sqrt(n0)) if n0 > 0 else 0.0
    return Trajectory(times, [Field(op.mesh, s) for s in snaps], energies, _monotone(energies), dt_stable, info)


# -- transfer operators ----------------------------------------------------

def _fiber_gauss(a, b, n_sub=4):
    edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, n_sub + 1)[None, :]
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])
    pts = (mid[..., None] + half[..., None] * _GX).reshape(len(a), -1)
    w = (half[..., None] * _GW).reshape(len(a), -1)
    return pts, w


def hat_average(d: DomainSpec, g, x=None, n_sub=4):
    """Vertical fiber integral ``int_{-G_eps(x)}^{H_eps(x)} g(x, s) ds``.

    For a Field on a column-layout mesh and ``x`` at its stations the
    integral of the P1 function along the column is exact (trapezoid).
    """
    if isinstance(g, Field):
        m = g.mesh
        if x is None:
            Y = m.nodes[m.grid, 1]
            v = g.values[m.grid]
            return np.sum(0.5 * (v[:, 1:] + v[:, :-1]) * np.diff(Y, axis=1), axis=1)
        x = np.asarray(x, dtype=float)
        lo, hi = column_bounds(m, x)
        s, w = _fiber_gauss(lo, hi, n_sub)
        X = np.broadcast_to(x[:, None], s.shape)
        vals = m.interpolate(g.values, np.column_stack([X.ravel(), s.ravel()])).reshape(s.shape)
        return np.sum(w * vals, axis=1)
    x = np.asarray(x, dtype=float)
    lo, hi = -d.G_eps(x), d.H_eps(x)
    s, w = _fiber_gauss(lo, hi, n_sub)
    if callable(g):
        vals = np.asarray(g(np.broadcast_to(x[:, None], s.shape), s), dtype=float) * np.ones(s.shape)
    else:
        vals = np.full(s.shape, float(g))
    return np.sum(w * vals, axis=1)


def M_eps(d: DomainSpec, g, x=None, p=None, normalize="p"):
    """Averaging operator: fiber integral divided by ``p(x)`` or by the fiber length.

    ``normalize="p"`` divides by the homogenized weight ``p`` (a callable or
    array); ``"fiber"`` divides by ``G_eps + H_eps`` so constants in ``x2``
    are reproduced exactly.
    """
    fh = hat_average(d, g, x)
    if isinstance(g, Field) and x is None:
        x = g.mesh.stations
    if normalize == "fiber":
        if isinstance(g, Field):
            lo, hi = column_bounds(g.mesh, x)
            return fh / (hi - lo)
        return fh / (d.G_eps(x) + d.H_eps(x))
    if normalize != "p":
        raise ValueError(f"unknown normalization {normalize!r}")
    pv = p(x) if callable(p) else np.asarray(p, dtype=float)
    return fh / pv


def lift_E(u: Field, m: Mesh2D) -> Field:
    """Extend a 1D function to the thin domain as a function of ``x1`` alone."""
    return Field(m, np.interp(m.nodes[:, 0], u.mesh.nodes, u.values))


def column_bounds(m: Mesh2D, x):
    """Bottom and top of the discrete domain along vertical lines at ``x``."""
    xs = m.stations
    bot = m.nodes[m.grid[:, 0], 1]
    top = m.nodes[m.grid[:, -1], 1]
    return np.interp(x, xs, bot), np.interp(x, xs, top)


def fold_points(m: Mesh2D, points, H1=None, max_folds=64):
    """Map points of the extended region into the discrete domain by repeated reflection.

    Points above the top are reflected across it; if the image falls below
    the bottom it is reflected back across the bottom, and so on.
    """
    pts = np.array(np.atleast_2d(points), dtype=float)
    lo, hi = column_bounds(m, pts[:, 0])
    tol = 1e-12 * (1 + np.abs(hi - lo))
    if np.any(pts[:, 1] < lo - tol):
        raise DomainError("point lies below the lower boundary")
    if H1 is not None and np.any(pts[:, 1] > H1 + 1e-12):
        raise DomainError(f"point lies above the extension height {H1}")
    y = pts[:, 1]
    for _ in range(max_folds):
        up = y > hi
        y = np.where(up, 2 * hi - y, y)
        down = y < lo
        y = np.where(down, 2 * lo - y, y)
        if not (np.any(up) or np.any(down)):
            break
    pts[:, 1] = np.clip(y, lo, hi)
    return pts


def extend_P(u: Field, points, H1=None):
    """Value of the reflection extension of ``u`` at ``points``."""
    m = u.mesh
    return m.interpolate(u.values, fold_points(m, points, H1))


def _tilde_strip(m: Mesh2D, H1, n_x=4, n_s=16):
    """Quadrature on ``{top(x1) < x2 < H1}`` column by column."""
    xs = m.stations
    gx, gw = np.polynomial.legendre.leggauss(n_x)
    sx, sw = np.polynomial.legendre.leggauss(n_s)
    a, b = xs[:-1], xs[1:]
    X = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * gx[None, :]
    WX = (0.5 * (b - a))[:, None] * gw[None, :]
    X, WX = X.ravel(), WX.ravel()
    _, top = column_bounds(m, X)
    half = 0.5 * np.maximum(H1 - top, 0.0)
    S = (top + half)[:, None] + half[:, None] * sx[None, :]
    W = WX[:, None] * half[:, None] * sw[None, :]
    return np.broadcast_to(X[:, None], S.shape), S, W


def error_L2(u: Field, v: Field, region=OMEGA_EPS, H1=None, n_s=16):
    """``|P u - E v|`` in L2 of the discrete domain or of the extended region up to ``H1``."""
    m = u.mesh
    pts, w = quadrature_points(m)
    uq = np.einsum("qa,ta->tq", TRI_BARY, u.values[m.triangles])
    vq = np.interp(pts[..., 0], v.mesh.nodes, v.values)
    total = float(np.sum(w * (uq - vq) ** 2))
    if region == OMEGA_EPS:
        return float(np.sqrt(total))
    if region != OMEGA_TILDE:
        raise ValueError(f"unknown region {region!r}")
    if H1 is None:
        raise ValueError("OMEGA_TILDE needs the extension height H1")
    X, S, W = _tilde_strip(m, H1, n_s=n_s)
    P = np.column_stack([X.ravel(), S.ravel()])
    pu = extend_P(u, P).reshape(S.shape)
    ev = np.interp(X, v.mesh.nodes, v.values)
    return float(np.sqrt(total + np.sum(W * (pu - ev) ** 2)))


def extended_norm(u: Field, H1, n_s=16):
    """``|P u|`` in L2 of the extended region."""
    m = u.mesh
    X, S, W = _tilde_strip(m, H1, n_s=n_s)
    pu = extend_P(u, np.column_stack([X.ravel(), S.ravel()])).reshape(S.shape)
    return float(np.sqrt(u.values @ (assemble_mass(m) @ u.values) + np.sum(W * pu ** 2)))


def _column_quadrature(xs, lo, hi, n_x, n_s):
    """Tensor Gauss points on ``{x in column, lo(x) < s < hi(x)}`` for every column."""
    gx, gw = np.polynomial.legendre.leggauss(n_x)
    sx, sw = np.polynomial.legendre.leggauss(n_s)
    a, b = xs[:-1], xs[1:]
    X = ((0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * gx[None, :]).ravel()
    WX = ((0.5 * (b - a))[:, None] * gw[None, :]).ravel()
    l, h = lo(X), hi(X)
    half = 0.5 * np.maximum(h - l, 0.0)
    S = (l + half)[:, None] + half[:, None] * sx[None, :]
    W = WX[:, None] * half[:, None] * sw[None, :]
    return np.broadcast_to(X[:, None], S.shape).ravel(), S.ravel(), W.ravel()


def _field_and_grad(u: Field, X, S):
    m = u.mesh
    tri, bary, _ = m.locate(np.column_stack([X, S]))
    val = np.einsum("ij,ij->i", bary, u.values[m.triangles[tri]])
    return val, m.gradients(u.values)[tri]


def perturbation_error(u: Field, v: Field, eps, n_x=4, n_s=8):
    """Distance of two solutions on domains with shared stations.

    Returns the ``H^1_eps`` norm of ``u - v`` on the intersection of the two
    discrete domains and the ``H^1_eps`` norms of each field on the part of
    its domain outside the other one.
    """
    mu, mv = u.mesh, v.mesh
    xs = mu.stations
    if len(xs) != len(mv.stations) or np.any(xs != mv.stations):
        raise DomainError("perturbation comparison needs meshes with identical stations")
    w2 = eps ** -2

    def h1(vals, grads, W):
        return float(np.sum(W * (vals ** 2 + grads[:, 0] ** 2 + w2 * grads[:, 1] ** 2)))

    lo = lambda x: np.maximum(column_bounds(mu, x)[0], column_bounds(mv, x)[0])
    hi = lambda x: np.minimum(column_bounds(mu, x)[1], column_bounds(mv, x)[1])
    X, S, W = _column_quadrature(xs, lo, hi, n_x, n_s)
    fu, gu = _field_and_grad(u, X, S)
    fv, gv = _field_and_grad(v, X, S)
    inter = h1(fu - fv, gu - gv, W)
    exterior = {}
    for name, a, b in (("u", u, mv), ("v", v, mu)):
        ma = a.mesh
        total = 0.0
        # slivers below the other bottom and above the other top
        for lo_f, hi_f in (
            (lambda x, ma=ma: column_bounds(ma, x)[0],
             lambda x, ma=ma, b=b: np.maximum(column_bounds(ma, x)[0], np.minimum(column_bounds(b, x)[0], column_bounds(ma, x)[1]))),
            (lambda x, ma=ma, b=b: np.minimum(column_bounds(ma, x)[1], np.maximum(column_bounds(b, x)[1], column_bounds(ma, x)[0])),
             lambda x, ma=ma: column_bounds(ma, x)[1]),
        ):
            Xe, Se, We = _column_quadrature(xs, lo_f, hi_f, n_x, n_s)
            if np.any(We > 0):
                fa, ga = _field_and_grad(a, Xe, Se)
                total += h1(fa, ga, We)
        exterior[name] = float(np.sqrt(total))
    return {
        "intersection": float(np.sqrt(inter)),
        "exterior_u": exterior["u"],
        "exterior_v": exterior["v"],
        "total": float(np.sqrt(inter + exterior["u"] ** 2 + exterior["v"] ** 2)),
    }


# -- equilibria on the thin domain ------------------------------------------

def equilibria_eps(op: ThinOperator, nl: Nonlinearity, guesses, tol=1e-10, min_dist=1e-4):
    """Newton from each guess (nodal arrays); returns ``(fields, residuals, report)``."""
    ML = op.ML
    found, report = [], []
    for j, g in enumerate(guesses):
        g = g.values if isinstance(g, Field) else np.asarray(g, dtype=float)
        try:
            u, rn, it = newton_equilibrium(op, nl, g, tol=tol)
        except ConvergenceError as exc:
            report.append({"guess": j, "status": "dropped", "reason": str(exc)})
            continue
        report.append({"guess": j, "status": "converged", "iterations": it, "residual": rn})
        found.append(u)
    found.sort(key=lambda u: (round(float(ML @ u) / float(ML.sum()), 8), round(float(u[0]), 8)))
    kept = dedupe(found, op.M, min_dist)
    res = [dual_residual(op, u, nl) for u in kept]
    return [Field(op.mesh, u) for u in kept], res, report


# -- rectangle oracle --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RectangleSeries:
    """Truncated Neumann-cosine series for the harmonic problem on ``(-L, L) x (0, 1)``.

    Modes are ``psi_m(x) = L**-0.5 cos(m pi (x + L) / (2 L))``; even ``m``
    are the symmetric cosines, odd ``m`` the antisymmetric ones.
    """

    eps: float
    alpha: float
    mean: float
    coef: np.ndarray
    tail: float

    @property
    def L(self):
        return self.eps ** self.alpha

    def _rates(self):
        m = np.arange(1, len(self.coef) + 1)
        return m * np.pi / (2 * self.eps ** (self.alpha - 1))

    def _decay(self, y):
        r = self._rates()
        y = np.asarray(y, dtype=float)[..., None]
        # cosh(r (1 - y)) / cosh(r), stable for large r
        return np.exp(-r * y) * (1 + np.exp(-2 * r * (1 - y))) / (1 + np.exp(-2 * r))

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        L = self.L
        m = np.arange(1, len(self.coef) + 1)
        psi = np.cos(m * np.pi * (x[..., None] + L) / (2 * L)) / np.sqrt(L)
        return self.mean + np.sum(self.coef * psi * self._decay(y), axis=-1)

    def fiber_deviation(self, y):
        """``int |u(., y) - mean|^2 dx`` from Parseval."""
        return np.sum((self.coef * self._decay(y)) ** 2, axis=-1)

    def tail_bound(self, y):
        """Bound on the L2(-L, L) norm of the truncated modes at height ``y``."""
        r = (len(self.coef) + 1) * np.pi / (2 * self.eps ** (self.alpha - 1))
        y = np.asarray(y, dtype=float)
        return self.tail * np.exp(-r * y) * (1 + np.exp(-2 * r * (1 - y))) / (1 + np.exp(-2 * r))


def rectangle_fourier(u0, eps, alpha, K_terms=64, n_quad=None) -> RectangleSeries:
    """Series solution of ``-u_xx - eps^-2 u_yy = 0`` with ``u = u0`` at ``y = 0``.

    Keeps the modes with wave numbers up to ``K_terms * pi / eps**alpha``
    (``2 K_terms`` cosines of the full Neumann basis).  The reported tail is
    the L2 norm of ``u0`` not captured by the kept modes (Bessel).
    """
    if K_terms < 1:
        raise ValueError("K_terms must be at least 1")
    L = eps ** alpha
    n_modes = 2 * K_terms
    n_quad = n_quad or max(64, 8 * n_modes)
    edges = np.linspace(-L, L, n_quad + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    xq = (mid[:, None] + half[:, None] * _GX[None, :]).ravel()
    wq = (half[:, None] * _GW[None, :]).ravel()
    fq = np.asarray(u0(xq), dtype=float) * np.ones_like(xq) if callable(u0) else np.full_like(xq, float(u0))
    mean = float(wq @ fq) / (2 * L)
    m = np.arange(1, n_modes + 1)
    psi = np.cos(m[:, None] * np.pi * (xq[None, :] + L) / (2 * L)) / np.sqrt(L)
    coef = psi @ (wq * fq)
    total = float(wq @ (fq - mean) ** 2)
    tail = float(np.sqrt(max(total - float(coef @ coef), 0.0)))
    return RectangleSeries(float(eps), float(alpha), mean, coef, tail)


def solve_rectangle_fem(u0, eps, alpha, ny=128, nx=32):
    """P1 solve of the rectangle problem with Dirichlet data on the bottom side."""
    m = mesh_rectangle_Qeps(eps, alpha, ny, nx)
    K = assemble_stiffness(m, 1.0, eps ** -2)
    bnd = m.tagged_nodes(LOWER)
    g = np.asarray(u0(m.nodes[bnd, 0]), dtype=float) * np.ones(len(bnd)) if callable(u0) else np.full(len(bnd), float(u0))
    free = np.setdiff1d(np.arange(m.n_nodes), bnd)
    u = np.zeros(m.n_nodes)
    u[bnd] = g
    rhs = -(K[free][:, bnd] @ g)
    if np.any(rhs):
        u[free] = solve_spd(K[free][:, free], rhs, method="direct")
    else:
        u[free] = 0.0 if not np.any(g) else g[0]
    return Field(m, u)


def fiber_decay_rate(fiber_deviation, ys):
    """Least-squares slope of ``-log(deviation)`` against ``y``."""
    ys = np.asarray(ys, dtype=float)
    dev = np.asarray(fiber_deviation, dtype=float)
    slope, _ = np.polyfit(ys, np.log(dev), 1)
    return -float(slope)


def fem_fiber_deviation(u: Field, ys):
    """``int |u(x, y) - mean|^2 dx`` of a FEM field on the rectangle, sampled at heights ``ys``."""
    m = u.mesh
    L = m.stations[-1]
    xg, wg = np.polynomial.legendre.leggauss(4)
    edges = m.stations
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    xq = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    wq = (half[:, None] * wg[None, :]).ravel()
    out = []
    for y in np.atleast_1d(ys):
        v = m.interpolate(u.values, np.column_stack([xq, np.full_like(xq, y)]))
        mean = float(wq @ v) / (2 * L)
        out.append(float(wq @ (v - mean) ** 2))
    return np.array(out)
