"""One-dimensional homogenized problem: elliptic solve, IMEX time stepping and equilibria."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import (
    Field, StiffnessForm, assemble_load, assemble_mass, assemble_stiffness_1d, factorize, lumped, solve_spd,
)
from .cell_homog import HomogenizedCoefficients
from .errors import ConfigError, ConvergenceError
from .mesh import Mesh1D


# -- nonlinearity ----------------------------------------------------------

@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term ``f(s)``.

    ``"logistic-cubic"`` is ``lam*s - s**3`` for ``|s| <= clip``.  Beyond the
    clip level the cubic's slope is bent over ``[clip, 1.5*clip]`` by a
    quadratic so that ``f`` stays C^2, then continues with constant slope.
    ``f'`` is bounded and ``f(s)/s`` tends to ``lam - 3*clip**2 - 1.5*clip**2``.
    """

    kind: str = "zero"
    lam: float = 0.0
    clip: float = 3.0

    def __post_init__(self):
        if self.kind not in ("zero", "logistic-cubic"):
            raise ConfigError(f"unknown nonlinearity {self.kind!r}")
        if self.kind == "logistic-cubic":
            if not self.clip > 0:
                raise ConfigError("clip level must be positive")
            if self.lam >= self.slope_at_infinity:
                raise ConfigError(f"lam={self.lam} is not dissipative for clip={self.clip}")

    @property
    def is_zero(self):
        return self.kind == "zero"

    @property
    def _w(self):
        return 0.5 * self.clip

    @property
    def slope_at_infinity(self):
        M, w = self.clip, 0.5 * self.clip
        return 3 * M * M + 3 * M * w

    def _parts(self, s):
        s = np.asarray(s, dtype=float)
        a = np.abs(s)
        M, w = self.clip, self._w
        dinf = self.slope_at_infinity
        t = np.clip(a - M, 0.0, w)
        u = np.maximum(a - M - w, 0.0)
        inner = a <= M
        cw = M ** 3 + 3 * M * M * w + 2 * M * w * w
        Cw = M ** 4 / 4 + M ** 3 * w + 1.5 * M * M * w * w + 0.75 * M * w ** 3
        c = np.where(inner, a ** 3, M ** 3 + 3 * M * M * t + 3 * M * t * t - (M / w) * t ** 3 + dinf * u)
        dc = np.where(inner, 3 * a * a, np.where(u > 0, dinf, 3 * M * M + 6 * M * t - (3 * M / w) * t * t))
        C = np.where(
            inner, a ** 4 / 4,
            np.where(u > 0, Cw + cw * u + 0.5 * dinf * u * u,
                     M ** 4 / 4 + M ** 3 * t + 1.5 * M * M * t * t + M * t ** 3 - M / (4 * w) * t ** 4),
        )
        return s, np.sign(s) * c, dc, C

    def f(self, s):
        if self.is_zero:
            return np.zeros_like(np.asarray(s, dtype=float))
        s, c, _, _ = self._parts(s)
        return self.lam * s - c

    def df(self, s):
        if self.is_zero:
            return np.zeros_like(np.asarray(s, dtype=float))
        _, _, dc, _ = self._parts(s)
        return self.lam - dc

    def F(self, s):
        """Primitive with ``F(0) = 0``."""
        if self.is_zero:
            return np.zeros_like(np.asarray(s, dtype=float))
        s, _, _, C = self._parts(s)
        return 0.5 * self.lam * s * s - C

    @property
    def max_positive_slope(self):
        """``sup max(f', 0)``, used for the energy-stable step bound."""
        return max(self.lam, 0.0) if not self.is_zero else 0.0

    def constant_roots(self):
        """Roots of ``f(s) = s`` (the constant equilibria), ascending."""
        if self.is_zero or self.lam <= 1:
            return [0.0]
        r = float(np.sqrt(self.lam - 1))
        if r > self.clip:
            from scipy.optimize import brentq
            r = brentq(lambda s: float(self.f(s)) - s, self.clip, 1e3)
        return [-r, 0.0, r]


def nonlinearity_from_config(cfg):
    if cfg is None:
        return Nonlinearity()
    cfg = dict(cfg)
    kind = cfg.pop("preset", cfg.pop("kind", "zero"))
    lam, clip = float(cfg.pop("lam", 0.0)), float(cfg.pop("clip", 3.0))
    if cfg:
        raise ConfigError(f"unknown nonlinearity keys {sorted(cfg)}")
    return Nonlinearity(kind, lam, clip)


# -- operators -------------------------------------------------------------

@dataclass(eq=False)
class LimitOperator:
    """Assembled 1D operator: ``A = K_q + M_p`` and the weighted masses."""

    mesh: Mesh1D
    A: sp.csr_matrix
    M: sp.csr_matrix
    ML: np.ndarray
    S: StiffnessForm
    info: dict = field(default_factory=dict)
    _lu: object = None

    @classmethod
    def build(cls, c: HomogenizedCoefficients, m: Mesh1D):
        K = assemble_stiffness_1d(m, c.q_at)
        M = assemble_mass(m, c.p_at)
        return cls(m, (K + M).tocsr(), M, lumped(M), StiffnessForm(m, weight=c.q_at))

    def apply(self, u):
        return self.S.apply(u) + self.M @ u

    def solve(self, b):
        if self._lu is None:
            self._lu = factorize(self.A)
        return self._lu(b)

    def quadratic(self, u):
        return self.S.energy(u) + float(u @ (self.M @ u))

    def energy(self, u, nl: Nonlinearity):
        return 0.5 * self.quadratic(u) - float(self.ML @ nl.F(u))

    def residual(self, u, nl: Nonlinearity):
        return dual_residual(self, u, nl)


def energy_dual_norm(op, r):
    """``sqrt(r^T A^-1 r)``: the residual measured in the dual of the energy norm."""
    return float(np.sqrt(max(float(r @ op.solve(r)), 0.0)))


def dual_residual(op, u, nl: Nonlinearity):
    """Equilibrium residual ``A u - ML f(u)`` in the energy-dual norm.

    Roundoff in ``u`` alone produces residuals of order ``|A| eps |u|`` in
    nodal norms; the energy-dual norm stays at the level of ``eps |u|``.
    """
    return energy_dual_norm(op, op.apply(u) - op.ML * nl.f(u))


def _load(m, fhat):
    if isinstance(fhat, Field):
        return assemble_mass(m) @ fhat.values
    if isinstance(fhat, np.ndarray) and fhat.shape == (m.n_nodes,):
        return assemble_mass(m) @ fhat
    return assemble_load(m, fhat)


def solve_limit_elliptic(c: HomogenizedCoefficients, fhat, m: Mesh1D, tol_rel=1e-10, method="direct"):
    """Solve ``int q u' v' + p u v = int fhat v`` with natural boundary conditions.

    ``fhat`` is a callable of ``x``, a constant, or nodal values on ``m``.
    """
    op = LimitOperator.build(c, m)
    u = solve_spd(op.A, _load(m, fhat), tol_rel=tol_rel, method=method)
    return Field(m, u)


# -- time stepping ---------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    times: list
    snapshots: list
    energies: list
    energy_monotone: bool
    dt_stable: float
    info: dict = field(default_factory=dict)

    @property
    def final(self):
        return self.snapshots[-1]


def imex_run(op, nl: Nonlinearity, u0, T, dt, save_every=None, mu=1 / 3, stop_residual=None):
    """IMEX Euler: ``(M + dt A) u1 = M u0 + dt ML f(u0)`` for an operator with ``A, M, ML``.

    Returns ``(times, snapshots, energies, dt_stable)``; ``dt_stable`` is the
    step below which the discrete energy is provably nonincreasing.
    """
    if not dt > 0:
        raise ConfigError(f"time step must be positive, got {dt}")
    if not T >= 0:
        raise ConfigError(f"final time must be nonnegative, got {T}")
    M, ML = op.M, op.ML
    n_steps = int(round(T / dt))
    save_every = save_every or max(1, n_steps // 50)
    solve = factorize((M + dt * op.A).tocsc())
    u = np.array(u0, dtype=float)
    times, snaps, energies = [0.0], [u.copy()], [op.energy(u, nl)]
    for n in range(1, n_steps + 1):
        rhs = M @ u
        if not nl.is_zero:
            rhs = rhs + dt * ML * nl.f(u)
        u = solve(rhs)
        energies.append(op.energy(u, nl))
        done = stop_residual is not None and dual_residual(op, u, nl) < stop_residual
        if n % save_every == 0 or n == n_steps or done:
            times.append(n * dt)
            snaps.append(u.copy())
        if done:
            break
    slope = nl.max_positive_slope
    dt_stable = np.inf if slope == 0 else 2 * mu / slope
    return times, snaps, energies, dt_stable


def _monotone(energies, tol=1e-12):
    e = np.asarray(energies)
    return bool(np.all(np.diff(e) <= tol * (1 + np.abs(e[:-1]))))


def solve_limit_parabolic(c: HomogenizedCoefficients, nl: Nonlinearity, u0, T=50.0, dt=1e-3, m: Mesh1D = None,
                          save_every=None, stop_residual=None) -> Trajectory:
    """March ``u_t + L0 u = f(u)`` from ``u0`` (a Field, nodal array, or constant)."""
    if isinstance(u0, Field):
        m = u0.mesh
        v0 = u0.values
    else:
        if m is None:
            raise ConfigError("a mesh is required when u0 is not a Field")
        v0 = np.broadcast_to(np.asarray(u0, dtype=float), (m.n_nodes,)).copy()
    op = LimitOperator.build(c, m)
    times, snaps, energies, dt_stable = imex_run(op, nl, v0, T, dt, save_every, stop_residual=stop_residual)
    return Trajectory(times, [Field(m, s) for s in snaps], energies, _monotone(energies), dt_stable,
                      {"residual": op.residual(snaps[-1], nl)})


# -- equilibria ------------------------------------------------------------

def newton_equilibrium(op, nl: Nonlinearity, u0, tol=1e-10, maxiter=60):
    """Newton with backtracking for ``A u = ML f(u)``; returns ``(u, residual, iterations)``."""
    A, ML = op.A, op.ML

    def res(v):
        r = op.apply(v) - ML * nl.f(v)
        return r, energy_dual_norm(op, r)

    u = np.array(u0, dtype=float)
    r, rn = res(u)
    for it in range(maxiter):
        if rn < tol:
            return u, rn, it
        J = (A - sp.diags(ML * nl.df(u))).tocsc()
        try:
            du = factorize(J)(-r)
        except RuntimeError as exc:  # exactly singular Jacobian
            raise ConvergenceError(f"singular Jacobian: {exc}", rn) from None
        if not np.all(np.isfinite(du)):
            raise ConvergenceError("Newton step is not finite", rn)
        step = 1.0
        while step > 1e-6:
            cand = u + step * du
            rc, rcn = res(cand)
            if rcn < (1 - 1e-4 * step) * rn:
                break
            step *= 0.5
        else:
            raise ConvergenceError(f"line search failed at residual {rn:.3e}", rn)
        u, r, rn = cand, rc, rcn
    if rn < tol:
        return u, rn, maxiter
    raise ConvergenceError(f"Newton did not converge in {maxiter} iterations", rn)


def dedupe(fields, M, min_dist=1e-4):
    """Drop members within weighted L2 distance ``min_dist`` of an earlier one."""
    kept = []
    for u in fields:
        if all(np.sqrt(max(float((u - v) @ (M @ (u - v))), 0.0)) > min_dist for v in kept):
            kept.append(u)
    return kept


def default_guesses(x, nl: Nonlinearity, n_random=4, seed=0, modes=3):
    """Constants at the roots of ``f(s) = s``, cosine modes and smooth random perturbations."""
    x = np.asarray(x, dtype=float)
    roots = nl.constant_roots()
    amp = max(abs(r) for r in roots) or 1.0
    out = [np.full_like(x, r) for r in roots]
    for k in range(1, modes + 1):
        for s in (1.0, -1.0):
            out.append(s * amp * np.cos(k * np.pi * x))
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        coef = rng.standard_normal(modes + 1) / (1.0 + np.arange(modes + 1))
        out.append(amp * sum(c * np.cos(k * np.pi * x) for k, c in enumerate(coef)))
    return out


@dataclass(eq=False)
class EquilibriumSet:
    fields: list
    residuals: list
    report: list

    def __len__(self):
        return len(self.fields)


def _order_key(u, ML):
    return (round(float(ML @ u) / float(ML.sum()), 8), round(float(u[0]), 8))


def equilibria_limit(c: HomogenizedCoefficients, nl: Nonlinearity, m: Mesh1D, guesses=None, tol=1e-10,
                     n_random=4, seed=0, min_dist=1e-4) -> EquilibriumSet:
    """Equilibria of the limit problem reached by Newton from a set of guesses."""
    op = LimitOperator.build(c, m)
    if guesses is None:
        guesses = default_guesses(m.nodes, nl, n_random=n_random, seed=seed)
    found, report = [], []
    for j, g in enumerate(guesses):
        g = g.values if isinstance(g, Field) else np.broadcast_to(np.asarray(g, float), (m.n_nodes,))
        try:
            u, rn, it = newton_equilibrium(op, nl, g, tol=tol)
        except ConvergenceError as exc:
            report.append({"guess": j, "status": "dropped", "reason": str(exc)})
            continue
        report.append({"guess": j, "status": "converged", "iterations": it, "residual": rn})
        found.append(u)
    found.sort(key=lambda u: _order_key(u, op.ML))
    kept = dedupe(found, op.M, min_dist)
    return EquilibriumSet([Field(m, u) for u in kept], [op.residual(u, nl) for u in kept], report)
