"""P1 finite elements: assembly, constraints, linear solves and eigenpairs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, CompatibilityError, ConstraintError, ConvergenceError
from .mesh import UPPER, Mesh1D, Mesh2D

# interior 3-point rule on the reference triangle, exact for degree 2
TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI_W = np.full(3, 1 / 3)
GAUSS3_X, GAUSS3_W = np.polynomial.legendre.leggauss(3)


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficients of a P1 function on ``mesh`` (2D or 1D)."""

    mesh: Mesh2D | Mesh1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise AssemblyError(f"field has {v.shape} values for {self.mesh.n_nodes} nodes")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, points):
        if isinstance(self.mesh, Mesh1D):
            return np.interp(points, self.mesh.nodes, self.values)
        return self.mesh.interpolate(self.values, points)


@dataclass(eq=False)
class SparseSystem:
    """Sparse symmetric matrix with right-hand side and constraint record.

    ``P`` maps reduced unknowns back to mesh nodes after periodic folding;
    ``mean_weights`` is the multiplier row of a mean-zero constraint.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    P: sp.csr_matrix | None = None
    mean_weights: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def expand(self, u):
        return u if self.P is None else self.P @ u


# -- geometry helpers ------------------------------------------------------

def _tri_geometry(m: Mesh2D):
    p = m.nodes[m.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    bad = np.flatnonzero(det <= 1e-14 * (np.abs(d1).max() * np.abs(d2).max() + 1e-300))
    if len(bad):
        t = int(bad[0])
        raise AssemblyError(f"degenerate or inverted triangle {t}: nodes {m.triangles[t].tolist()}")
    # gradients of the barycentric coordinates, shape (ntri, 3, 2)
    grads = np.empty((len(p), 3, 2))
    grads[:, 1, 0] = d2[:, 1] / det
    grads[:, 1, 1] = -d2[:, 0] / det
    grads[:, 2, 0] = -d1[:, 1] / det
    grads[:, 2, 1] = d1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return 0.5 * det, grads


def quadrature_points(m: Mesh2D):
    """Points ``(ntri, 3, 2)`` and weights ``(ntri, 3)`` of the 3-point rule."""
    area, _ = _tri_geometry(m)
    p = m.nodes[m.triangles]
    pts = np.einsum("qj,tjd->tqd", TRI_BARY, p)
    return pts, area[:, None] * TRI_W[None, :]


def _scatter(m, local, n):
    tris = m.triangles
    rows = np.repeat(tris, tris.shape[1], axis=1).ravel()
    cols = np.tile(tris, (1, tris.shape[1])).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _eval_weight(weight, pts, planar):
    """Evaluate a weight at quadrature points; ``planar`` means pts[..., :2] are (x1, x2)."""
    shape = pts.shape[:-1] if planar else pts.shape
    if weight is None:
        return np.ones(shape)
    if np.isscalar(weight):
        return np.full(shape, float(weight))
    if planar:
        return np.asarray(weight(pts[..., 0], pts[..., 1]), dtype=float) * np.ones(shape)
    return np.asarray(weight(pts), dtype=float) * np.ones(shape)


# -- 2D assembly -----------------------------------------------------------

def assemble_stiffness(m: Mesh2D, a11=1.0, a22=1.0):
    """Matrix of ``int a11 u_x1 v_x1 + a22 u_x2 v_x2`` for constant ``a11, a22 > 0``."""
    if not (a11 > 0 and a22 > 0):
        raise AssemblyError(f"stiffness weights must be positive, got {a11}, {a22}")
    area, g = _tri_geometry(m)
    local = area[:, None, None] * (
        a11 * g[:, :, None, 0] * g[:, None, :, 0] + a22 * g[:, :, None, 1] * g[:, None, :, 1]
    )
    return _scatter(m, local, m.n_nodes)


class StiffnessForm:
    """Matrix-free stiffness evaluated from nodal differences.

    ``apply(u)`` equals ``K @ u`` but is exact on constants and its roundoff
    scales with the gradient of ``u`` rather than with ``|K| |u|``; this is
    what makes equilibrium residuals below 1e-10 attainable.
    """

    def __init__(self, m, a11=1.0, a22=1.0, weight=None):
        self.n = m.n_nodes
        if isinstance(m, Mesh1D):
            pts, w = _mesh1d_quadrature(m)
            qv = _eval_weight(weight, pts, False)
            self.k = (w * qv).sum(axis=1) / np.diff(m.nodes) ** 2
            self.dim = 1
            return
        self.dim = 2
        t = m.triangles
        self.a, self.b, self.c = t[:, 0], t[:, 1], t[:, 2]
        area, g = _tri_geometry(m)
        p = m.nodes[t]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = 2 * area
        # gradient = (du1 * r1 + du2 * r2) with du1 = u_b - u_a, du2 = u_c - u_a
        self.r1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
        self.r2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
        self.wx = area * a11
        self.wy = area * a22

    def _grad(self, u):
        du1 = u[self.b] - u[self.a]
        du2 = u[self.c] - u[self.a]
        return du1[:, None] * self.r1 + du2[:, None] * self.r2

    def apply(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(self.n)
        if self.dim == 1:
            flux = self.k * np.diff(u)
            out[:-1] -= flux
            out[1:] += flux
            return out
        g = self._grad(u)
        fx, fy = self.wx * g[:, 0], self.wy * g[:, 1]
        cb = fx * self.r1[:, 0] + fy * self.r1[:, 1]
        cc = fx * self.r2[:, 0] + fy * self.r2[:, 1]
        np.add.at(out, self.b, cb)
        np.add.at(out, self.c, cc)
        np.add.at(out, self.a, -(cb + cc))
        return out

    def energy(self, u):
        """``u^T K u`` as a sum of nonnegative element terms."""
        u = np.asarray(u, dtype=float)
        if self.dim == 1:
            return float(self.k @ np.diff(u) ** 2)
        g = self._grad(u)
        return float(self.wx @ g[:, 0] ** 2 + self.wy @ g[:, 1] ** 2)


def _mesh1d_quadrature(m: Mesh1D):
    x = m.nodes
    h = np.diff(x)
    mid = 0.5 * (x[1:] + x[:-1])
    pts = mid[:, None] + 0.5 * h[:, None] * GAUSS3_X[None, :]
    w = 0.5 * h[:, None] * GAUSS3_W[None, :]
    return pts, w


def assemble_mass(m, weight=None):
    """Weighted mass matrix ``int w u v`` on a 2D or 1D mesh."""
    if isinstance(m, Mesh1D):
        pts, w = _mesh1d_quadrature(m)
        wv = _eval_weight(weight, pts, False)
        if np.any(wv <= 0):
            raise AssemblyError("mass weight must be positive at every quadrature point")
        xe = m.nodes
        h = np.diff(xe)
        phi0 = (xe[1:, None] - pts) / h[:, None]
        phi = np.stack([phi0, 1.0 - phi0], axis=1)  # (nel, 2, nq)
        local = np.einsum("eaq,ebq,eq->eab", phi, phi, w * wv)
        n = m.n_nodes
        idx = np.column_stack([np.arange(n - 1), np.arange(1, n)])
        rows = np.repeat(idx, 2, axis=1).ravel()
        cols = np.tile(idx, (1, 2)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    pts, w = quadrature_points(m)
    wv = _eval_weight(weight, pts, True)
    if np.any(wv <= 0):
        raise AssemblyError("mass weight must be positive at every quadrature point")
    local = np.einsum("qa,qb,tq->tab", TRI_BARY, TRI_BARY, w * wv)
    return _scatter(m, local, m.n_nodes)


def lumped(M):
    return np.asarray(M.sum(axis=1)).ravel()


def assemble_load(m, f):
    """Load vector ``int f phi_i``; ``f`` is callable (or a constant)."""
    if isinstance(m, Mesh1D):
        pts, w = _mesh1d_quadrature(m)
        fv = _eval_weight(f, pts, False)
        xe = m.nodes
        phi0 = (xe[1:, None] - pts) / np.diff(xe)[:, None]
        b = np.zeros(m.n_nodes)
        np.add.at(b, np.arange(m.n_nodes - 1), (w * fv * phi0).sum(axis=1))
        np.add.at(b, np.arange(1, m.n_nodes), (w * fv * (1 - phi0)).sum(axis=1))
        return b
    pts, w = quadrature_points(m)
    fv = _eval_weight(f, pts, True)
    local = np.einsum("qa,tq->ta", TRI_BARY, w * fv)
    b = np.zeros(m.n_nodes)
    np.add.at(b, m.triangles.ravel(), local.ravel())
    return b


def assemble_stiffness_1d(m: Mesh1D, weight=None):
    """Matrix of ``int q u' v'`` on an interval mesh."""
    pts, w = _mesh1d_quadrature(m)
    qv = _eval_weight(weight, pts, False)
    if np.any(qv <= 0):
        raise AssemblyError("diffusion weight must be positive at every quadrature point")
    h = np.diff(m.nodes)
    k = (w * qv).sum(axis=1) / h ** 2  # per-element int q / h^2
    n = m.n_nodes
    i = np.arange(n - 1)
    rows = np.concatenate([i, i + 1, i, i + 1])
    cols = np.concatenate([i, i + 1, i + 1, i])
    vals = np.concatenate([k, k, -k, -k])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def assemble_B1_load(cell: Mesh2D, p, x, piece=None, slope="secant"):
    """Boundary load ``b_i = int_{B1} N1 phi_i dS = -int H'(x, y1) phi_i dy1``.

    ``slope="secant"`` uses the slope of the discrete (polygonal) top
    boundary, which makes the divergence and energy expressions for the
    homogenized diffusion agree to solver precision.  ``"analytic"`` uses
    the exact ``dH/dy`` with 3-point Gauss quadrature per edge.
    """
    e = cell.boundary_edges[cell.boundary_tags == UPPER]
    y = cell.nodes[e]
    left = y[:, 0, 0] <= y[:, 1, 0]
    iL = np.where(left, e[:, 0], e[:, 1])
    iR = np.where(left, e[:, 1], e[:, 0])
    yL, yR = cell.nodes[iL], cell.nodes[iR]
    b = np.zeros(cell.n_nodes)
    if slope == "secant":
        c = -0.5 * (yR[:, 1] - yL[:, 1])
        np.add.at(b, iL, c)
        np.add.at(b, iR, c)
    elif slope == "analytic":
        dy = yR[:, 0] - yL[:, 0]
        s = 0.5 * (1 + GAUSS3_X)
        pts = yL[:, 0, None] + dy[:, None] * s[None, :]
        dh = p.dHdy(x, pts, piece=piece)
        w = 0.5 * dy[:, None] * GAUSS3_W[None, :]
        np.add.at(b, iL, -(w * dh * (1 - s)).sum(axis=1))
        np.add.at(b, iR, -(w * dh * s).sum(axis=1))
    else:
        raise AssemblyError(f"unknown slope rule {slope!r}")
    return b


# -- constraints -----------------------------------------------------------

def periodic_prolongation(n, pairs):
    """Matrix ``P`` with ``u_full = P u_reduced``; each slave copies its master."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return sp.identity(n, format="csr")
    masters, slaves = pairs[:, 0], pairs[:, 1]
    if (len(np.unique(masters)) != len(masters) or len(np.unique(slaves)) != len(slaves)
            or np.intersect1d(masters, slaves).size or pairs.min() < 0 or pairs.max() >= n):
        raise ConstraintError("periodic pairs must form a bijection between disjoint node sets")
    target = np.arange(n)
    target[slaves] = masters
    keep = np.ones(n, dtype=bool)
    keep[slaves] = False
    red = -np.ones(n, dtype=np.int64)
    red[keep] = np.arange(keep.sum())
    cols = red[target]
    return sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, int(keep.sum())))


def apply_periodic(sys: SparseSystem, pairs):
    """Fold slave rows/columns into their masters."""
    P = periodic_prolongation(sys.matrix.shape[0], pairs)
    A = (P.T @ sys.matrix @ P).tocsr()
    return SparseSystem(A, P.T @ sys.rhs, P if sys.P is None else sys.P @ P,
                        None if sys.mean_weights is None else P.T @ sys.mean_weights, dict(sys.info))


# -- solvers ---------------------------------------------------------------

def _pcg(A, b, tol, maxiter, x0=None):
    d = A.diagonal()
    if np.any(d <= 0):
        raise ConvergenceError("matrix has a nonpositive diagonal entry; not SPD")
    dinv = 1.0 / d
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bn = np.linalg.norm(b)
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(maxiter):
        if np.linalg.norm(r) <= tol * bn:
            return x, it
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise ConvergenceError("matrix is not positive definite", np.linalg.norm(r) / bn)
        a = rz / pAp
        x += a * p
        r -= a * Ap
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    res = np.linalg.norm(b - A @ x) / bn
    if res <= tol:
        return x, maxiter
    raise ConvergenceError(f"PCG did not converge in {maxiter} iterations (relative residual {res:.3e})", res)


def factorize(A):
    """Sparse LU factorization; returns a callable solving ``A x = b``."""
    return spla.splu(sp.csc_matrix(A)).solve


def solve_spd(A, b, tol_rel=1e-10, method="cg", maxiter=None, x0=None, lu=None):
    """Solve an SPD system to relative residual ``tol_rel``.

    ``method="cg"`` runs Jacobi-preconditioned conjugate gradients with an
    iteration cap of ``50 sqrt(n)``; ``"direct"`` uses a sparse LU
    factorization followed by residual checks and iterative refinement.
    """
    if isinstance(A, SparseSystem):
        A, b = A.matrix, A.rhs
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    bn = np.linalg.norm(b)
    if bn == 0:
        return np.zeros_like(b)
    if method == "cg":
        cap = maxiter if maxiter is not None else int(50 * math.sqrt(len(b))) + 10
        x, _ = _pcg(A, b, tol_rel, cap, x0)
        return x
    if method != "direct":
        raise ValueError(f"unknown solve method {method!r}")
    solve = lu or factorize(A)
    x = solve(b)
    anorm = spla.norm(A, 1)
    for _ in range(4):
        r = b - A @ x
        res = np.linalg.norm(r) / bn
        # accept at the normwise backward-stability floor when tol_rel lies below it
        backward = np.linalg.norm(r) / (anorm * np.linalg.norm(x) + bn)
        if res <= tol_rel or backward <= 64 * np.finfo(float).eps:
            return x
        x = x + solve(r)
    raise ConvergenceError(f"direct solve residual {res:.3e} above {tol_rel:.1e}", res)


def solve_mean_zero(K, b, weights, tol_rel=1e-10, compat_tol=1e-8):
    """Solve the singular Neumann system ``K u = b`` subject to ``weights . u = 0``.

    One Lagrange multiplier row borders ``K``; ``b`` must be orthogonal to
    constants (the kernel of ``K``).
    """
    K = sp.csr_matrix(K)
    b = np.asarray(b, dtype=float)
    w = np.asarray(weights, dtype=float)
    scale = np.abs(b).sum()
    if scale == 0:
        return np.zeros_like(b)
    if abs(b.sum()) > compat_tol * scale:
        raise CompatibilityError(f"load not orthogonal to constants: sum(b)={b.sum():.3e}, sum|b|={scale:.3e}")
    b = b - w * (b.sum() / w.sum()) if b.sum() != 0 else b
    n = len(b)
    wcol = sp.csr_matrix(w.reshape(-1, 1))
    S = sp.bmat([[K, wcol], [wcol.T, None]], format="csc")
    rhs = np.append(b, 0.0)
    lu = spla.splu(S)
    z = lu.solve(rhs)
    for _ in range(3):
        r = rhs - S @ z
        if np.linalg.norm(r) <= tol_rel * np.linalg.norm(rhs):
            break
        z = z + lu.solve(r)
    u = z[:n]
    u -= w @ u / w.sum()
    return u


def eig_smallest(K, M, k, sigma=0.9, tol=1e-8, maxiter=2000, block=None, seed=0):
    """``k`` smallest eigenpairs of ``K u = lam M u`` by blocked inverse iteration.

    Shift-invert about ``sigma`` with Rayleigh-Ritz on a block of
    ``max(2k, k + 4)`` vectors.  Eigenvectors are returned M-orthonormal as
    columns.  Convergence uses ``|K u - lam M u| / (|lam| |M u|)``.
    """
    K = sp.csr_matrix(K)
    M = sp.csr_matrix(M)
    n = K.shape[0]
    if k > 10:
        raise ValueError("eig_smallest supports k <= 10")
    p = min(n, block or max(2 * k, k + 4))
    solve = factorize(K - sigma * M)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X[:, 0] = 1.0
    res = np.full(k, np.inf)
    for it in range(maxiter):
        Y = np.column_stack([solve(M @ X[:, j]) for j in range(p)])
        Kr = Y.T @ (K @ Y)
        Mr = Y.T @ (M @ Y)
        Kr = 0.5 * (Kr + Kr.T)
        Mr = 0.5 * (Mr + Mr.T)
        lam, V = sla.eigh(Kr, Mr)
        X = Y @ V
        X /= np.sqrt(np.einsum("ij,ij->j", X, M @ X))
        R = K @ X[:, :k] - (M @ X[:, :k]) * lam[:k]
        MX = M @ X[:, :k]
        res = np.linalg.norm(R, axis=0) / (np.abs(lam[:k]) * np.linalg.norm(MX, axis=0))
        if np.all(res <= tol):
            return lam[:k], X[:, :k], res
    raise ConvergenceError(f"eigensolver stalled after {maxiter} iterations; residuals {res}", res)
