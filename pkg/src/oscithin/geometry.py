"""Oscillating boundary profiles and their eps-scaled evaluation.

A profile is a pair of positive functions ``G(x, y)`` (bottom) and ``H(x, y)``
(top), periodic in the fast variable ``y`` and piecewise C^1 in the slow
variable ``x`` with breakpoints ``partition``.  The thin domain for a given
``eps`` is bounded by ``-G(x, x / eps**alpha)`` and ``H(x, x / eps)``.

Profiles are built from a small closed set of presets (constant, harmonic,
piecewise-periodic); arbitrary expressions are not parsed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError, DomainError

N_MIN_SAMPLES = 2048
TOL_MIN = 1e-10

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class Harmonic:
    """One term ``(amp + slope * x) * trig(2 pi mode y / period)``."""

    amp: float
    slope: float = 0.0
    mode: int = 1
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ConfigError(f"harmonic kind must be 'cos' or 'sin', got {self.kind!r}")
        if int(self.mode) != self.mode or self.mode < 1:
            raise ConfigError(f"harmonic mode must be a positive integer, got {self.mode!r}")


@dataclass(frozen=True)
class Boundary:
    """A single smooth periodic profile ``F(x, y)`` on one piece of (0, 1)."""

    base: float
    period: float = 1.0
    harmonics: tuple[Harmonic, ...] = ()
    base_slope: float = 0.0
    bump: float = 0.0

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigError(f"period must be positive, got {self.period}")
        object.__setattr__(self, "harmonics", tuple(self.harmonics))

    @property
    def is_flat(self):
        """True when the profile does not depend on the fast variable."""
        return all(h.amp == 0 and h.slope == 0 for h in self.harmonics)

    @property
    def x_independent(self):
        return self.base_slope == 0 and self.bump == 0 and all(h.slope == 0 for h in self.harmonics)

    def value(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = self.base + self.base_slope * x + self.bump * bump_shape(x) + 0.0 * y
        for h in self.harmonics:
            arg = 2.0 * np.pi * h.mode * y / self.period
            trig = np.cos(arg) if h.kind == "cos" else np.sin(arg)
            out = out + (h.amp + h.slope * x) * trig
        return out

    def dy(self, x, y):
        """Analytic derivative with respect to the fast variable."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = 0.0 * (x + y)
        for h in self.harmonics:
            k = 2.0 * np.pi * h.mode / self.period
            trig = -np.sin(k * y) if h.kind == "cos" else np.cos(k * y)
            out = out + (h.amp + h.slope * x) * k * trig
        return out


def bump_shape(x):
    """Smooth bump ``sin(pi x)**2`` with values in [0, 1], used for boundary perturbations."""
    return np.sin(np.pi * np.asarray(x, dtype=float)) ** 2


def _as_piece_tuple(pieces):
    if isinstance(pieces, Boundary):
        return (pieces,)
    return tuple(pieces)


@dataclass(frozen=True)
class ProfileSpec:
    """Bottom/top profiles ``G``, ``H`` on the pieces of ``partition``.

    ``G_pieces[i]`` and ``H_pieces[i]`` describe the profile on
    ``(partition[i], partition[i + 1])``.  At a breakpoint the left limit is
    used unless a piece is requested explicitly.
    """

    G_pieces: tuple[Boundary, ...]
    H_pieces: tuple[Boundary, ...]
    alpha: float = 1.5
    partition: tuple[float, ...] = (0.0, 1.0)
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "G_pieces", _as_piece_tuple(self.G_pieces))
        object.__setattr__(self, "H_pieces", _as_piece_tuple(self.H_pieces))
        object.__setattr__(self, "partition", tuple(float(v) for v in self.partition))
        part = np.asarray(self.partition)
        if len(part) < 2 or part[0] != 0.0 or part[-1] != 1.0 or np.any(np.diff(part) <= 0):
            raise ConfigError(f"partition must increase strictly from 0 to 1, got {self.partition}")
        n = len(part) - 1
        if len(self.G_pieces) != n or len(self.H_pieces) != n:
            raise ConfigError(f"need {n} G and H pieces for partition {self.partition}")
        if not self.alpha > 1:
            raise ConfigError(f"alpha must exceed 1, got {self.alpha}")
        if len({b.period for b in self.G_pieces}) != 1 or len({b.period for b in self.H_pieces}) != 1:
            raise ConfigError("all pieces must share the same period l_g (resp. l_h)")

    @property
    def n_pieces(self):
        return len(self.G_pieces)

    @property
    def l_g(self):
        return self.G_pieces[0].period

    @property
    def l_h(self):
        return self.H_pieces[0].period

    @property
    def G_oscillates(self):
        return not all(b.is_flat for b in self.G_pieces)

    @property
    def H_oscillates(self):
        return not all(b.is_flat for b in self.H_pieces)

    def piece_index(self, x):
        """Index of the piece containing ``x`` (left limit at breakpoints)."""
        inner = np.asarray(self.partition[1:-1])
        return np.searchsorted(inner, np.asarray(x, dtype=float), side="left")

    def _pieces(self, which):
        if which == "G":
            return self.G_pieces
        if which == "H":
            return self.H_pieces
        raise ConfigError(f"which must be 'G' or 'H', got {which!r}")

    def _eval(self, which, method, x, y, piece):
        pieces = self._pieces(which)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if piece is not None:
            return getattr(pieces[piece], method)(x, y)
        if len(pieces) == 1:
            return getattr(pieces[0], method)(x, y)
        x, y = np.broadcast_arrays(x, y)
        idx = self.piece_index(x)
        out = np.empty(x.shape)
        for i, b in enumerate(pieces):
            mask = idx == i
            if np.any(mask):
                out[mask] = getattr(b, method)(x[mask], y[mask])
        return out

    def G(self, x, y, piece=None):
        return self._eval("G", "value", x, y, piece)

    def H(self, x, y, piece=None):
        return self._eval("H", "value", x, y, piece)

    def dHdy(self, x, y, piece=None):
        return self._eval("H", "dy", x, y, piece)

    def evaluate(self, which, x, y, piece=None):
        return self._eval(which, "value", x, y, piece)

    def x_independent_piece(self, piece):
        return self.G_pieces[piece].x_independent and self.H_pieces[piece].x_independent

    @cached_property
    def bounds(self):
        """``(G0_, G1_, H0_, H1_)``: refined per-x extrema over one period on an x grid."""
        xs = np.linspace(0.0, 1.0, 41)
        out = []
        for which in ("G", "H"):
            lo, hi = np.inf, -np.inf
            for i in range(self.n_pieces):
                a, b = self.partition[i], self.partition[i + 1]
                xx = np.union1d(xs[(xs >= a) & (xs <= b)], [a, b])
                if self.x_independent_piece(i):
                    xx = xx[:1]
                for xv in xx:
                    lo = min(lo, min_over_period(self, which, xv, piece=i, n_samples=256))
                    hi = max(hi, max_over_period(self, which, xv, piece=i, n_samples=256))
            out += [float(lo), float(hi)]
        return tuple(out)

    def validate(self, n_x=21, n_y=64):
        """Check periodicity and positivity on a sampling grid; raise on failure."""
        G0, _, H0, _ = self.bounds
        if G0 <= 0 or H0 <= 0:
            raise ConfigError(f"profiles must be positive; sampled minima G={G0}, H={H0}")
        for i in range(self.n_pieces):
            xs = np.linspace(self.partition[i], self.partition[i + 1], n_x)
            for which, l in (("G", self.l_g), ("H", self.l_h)):
                ys = np.linspace(-l, 2 * l, n_y)
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                a = self.evaluate(which, X, Y, piece=i)
                b = self.evaluate(which, X, Y + l, piece=i)
                if not np.allclose(a, b, rtol=0, atol=1e-10):
                    raise ConfigError(f"{which} is not {l}-periodic on piece {i}")
        return self


@dataclass(frozen=True)
class DomainSpec:
    """A profile together with a value of ``eps``."""

    profile: ProfileSpec
    eps: float

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise DomainError(f"eps must lie in (0, 1], got {self.eps}")

    def G_eps(self, x):
        x = np.asarray(x, dtype=float)
        return self.profile.G(x, x / self.eps ** self.profile.alpha)

    def H_eps(self, x):
        x = np.asarray(x, dtype=float)
        return self.profile.H(x, x / self.eps)

    def dH_eps(self, x):
        """Derivative of ``H_eps`` with respect to ``x`` along the fast variable only."""
        x = np.asarray(x, dtype=float)
        return self.profile.dHdy(x, x / self.eps) / self.eps

    @property
    def fastest_period(self):
        """Smallest oscillation period in x, or ``inf`` for flat profiles."""
        p = self.profile
        periods = []
        if p.G_oscillates:
            periods.append(p.l_g * self.eps ** p.alpha)
        if p.H_oscillates:
            periods.append(p.l_h * self.eps)
        return min(periods) if periods else np.inf


def _check_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(x > 1) or np.any(~np.isfinite(x)):
        raise DomainError(f"x must lie in [0, 1], got {x}")
    return x


def eval_scaled_boundaries(d: DomainSpec, x):
    """Return ``(G_eps(x), H_eps(x))``."""
    x = _check_unit(x)
    return d.G_eps(x), d.H_eps(x)


def _period(p, which):
    return p.l_g if which == "G" else p.l_h


def _extremum(p: ProfileSpec, which, x, piece, n_samples, tol, sign):
    """Signed minimum of ``sign * F(x, .)``: uniform scan then golden-section refinement."""
    l = _period(p, which)
    ys = np.arange(n_samples) * (l / n_samples)
    vals = sign * p.evaluate(which, x, ys, piece=piece)
    k = int(np.argmin(vals))
    best = float(vals[k])
    if np.ptp(vals) < tol:
        return sign * best
    h = l / n_samples
    a, b, c = ys[k] - h, ys[k], ys[k] + h
    f = lambda y: sign * float(p.evaluate(which, x, y, piece=piece))
    if not (f(b) < f(a) and f(b) < f(c)):
        return sign * best
    res = minimize_scalar(f, bracket=(a, b, c), method="golden", options={"xtol": 1e-12})
    return sign * min(best, float(res.fun))


def min_over_period(p: ProfileSpec, which, x, piece=None, n_samples=N_MIN_SAMPLES, tol=TOL_MIN):
    """Minimum of ``y -> F(x, y)`` over one period.

    A uniform scan locates the basin; golden-section search then refines it.
    """
    return _extremum(p, which, float(_check_unit(x)), piece, n_samples, tol, 1.0)


def max_over_period(p: ProfileSpec, which, x, piece=None, n_samples=N_MIN_SAMPLES, tol=TOL_MIN):
    """Maximum of ``y -> F(x, y)`` over one period, found like :func:`min_over_period`."""
    return _extremum(p, which, float(_check_unit(x)), piece, n_samples, tol, -1.0)


def period_average(p: ProfileSpec, which, x, piece=None, n_sub=32):
    """``(1/l) * int_0^l F(x, y) dy`` by composite Gauss-Legendre quadrature."""
    x = float(_check_unit(x))
    l = _period(p, which)
    edges = np.linspace(0.0, l, n_sub + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    ys = (mid[:, None] + half[:, None] * _GAUSS_X[None, :]).ravel()
    ws = (half[:, None] * _GAUSS_W[None, :]).ravel()
    return float(np.dot(ws, p.evaluate(which, x, ys, piece=piece)) / l)


# -- presets ---------------------------------------------------------------

def constant_profile(g=1.0, h=1.0, alpha=1.5, l_g=1.0, l_h=1.0):
    return ProfileSpec(Boundary(g, l_g), Boundary(h, l_h), alpha=alpha, name="constant")


def single_harmonic(
    g=1.0, g_amp=0.0, h=1.0, h_amp=0.5, alpha=1.5, l_g=1.0, l_h=1.0,
    g_slope=0.0, h_slope=0.0, g_kind="sin", h_kind="cos",
):
    """``G = g + (g_amp + g_slope x) trig(2 pi y / l_g)``, same form for ``H``."""
    G = Boundary(g, l_g, (Harmonic(g_amp, g_slope, 1, g_kind),) if (g_amp or g_slope) else ())
    H = Boundary(h, l_h, (Harmonic(h_amp, h_slope, 1, h_kind),) if (h_amp or h_slope) else ())
    return ProfileSpec(G, H, alpha=alpha, name="single-harmonic")


def two_harmonic(
    g=1.0, g_amps=(0.0, 0.0), h=1.0, h_amps=(0.5, 0.2), modes=(1, 2),
    alpha=1.5, l_g=1.0, l_h=1.0, g_kind="sin", h_kind="cos",
):
    def terms(amps, kind):
        return tuple(Harmonic(a, 0.0, m, kind) for a, m in zip(amps, modes) if a)

    G = Boundary(g, l_g, terms(g_amps, g_kind))
    H = Boundary(h, l_h, terms(h_amps, h_kind))
    return ProfileSpec(G, H, alpha=alpha, name="two-harmonic")


def piecewise_periodic(G_pieces, H_pieces, partition, alpha=1.5):
    """Profiles independent of ``x`` on every piece of ``partition``."""
    for b in list(G_pieces) + list(H_pieces):
        if not b.x_independent:
            raise ConfigError("piecewise-periodic pieces must not depend on x")
    return ProfileSpec(tuple(G_pieces), tuple(H_pieces), alpha=alpha, partition=tuple(partition),
                       name="piecewise")


def perturbed(p: ProfileSpec, delta):
    """Copy of ``p`` with ``delta * sin(pi x)**2`` added to both ``G`` and ``H``."""
    from dataclasses import replace
    G = tuple(replace(b, bump=b.bump + delta) for b in p.G_pieces)
    H = tuple(replace(b, bump=b.bump + delta) for b in p.H_pieces)
    return ProfileSpec(G, H, alpha=p.alpha, partition=p.partition, name=f"{p.name}+bump")


def default_profile(alpha=1.5):
    """The oscillating preset used by the default studies: flat bottom, one cosine on top."""
    return single_harmonic(g=1.0, g_amp=0.0, h=1.0, h_amp=0.5, alpha=alpha)


def _boundary_from_dict(d):
    d = dict(d)
    harmonics = tuple(
        Harmonic(float(h.get("amp", 0.0)), float(h.get("slope", 0.0)), int(h.get("mode", 1)),
                 h.get("kind", "cos"))
        for h in d.pop("harmonics", ())
    )
    known = {"base", "period", "base_slope", "bump"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown boundary keys {sorted(unknown)}")
    return Boundary(float(d.get("base", 1.0)), float(d.get("period", 1.0)), harmonics,
                    float(d.get("base_slope", 0.0)), float(d.get("bump", 0.0)))


_PRESETS = {
    "constant": constant_profile,
    "single-harmonic": single_harmonic,
    "two-harmonic": two_harmonic,
    "default": default_profile,
}


def profile_from_config(cfg):
    """Build a :class:`ProfileSpec` from the ``profile`` section of a config.

    Either ``{"preset": name, **params}`` or, for piecewise profiles,
    ``{"preset": "piecewise", "partition": [...], "alpha": a,
    "G": [boundary, ...], "H": [boundary, ...]}`` where each boundary is
    ``{"base": b, "period": l, "harmonics": [{"amp", "slope", "mode", "kind"}]}``.
    """
    cfg = dict(cfg)
    preset = cfg.pop("preset", "default")
    try:
        if preset == "piecewise":
            G = [_boundary_from_dict(b) for b in cfg.pop("G")]
            H = [_boundary_from_dict(b) for b in cfg.pop("H")]
            prof = piecewise_periodic(G, H, cfg.pop("partition"), alpha=float(cfg.pop("alpha", 1.5)))
            if cfg:
                raise ConfigError(f"unknown profile keys {sorted(cfg)}")
        elif preset == "custom":
            prof = ProfileSpec(
                tuple(_boundary_from_dict(b) for b in cfg.pop("G")),
                tuple(_boundary_from_dict(b) for b in cfg.pop("H")),
                alpha=float(cfg.pop("alpha", 1.5)),
                partition=tuple(cfg.pop("partition", (0.0, 1.0))),
            )
        elif preset in _PRESETS:
            for key in ("g_amps", "h_amps", "modes"):
                if key in cfg:
                    cfg[key] = tuple(cfg[key])
            prof = _PRESETS[preset](**cfg)
        else:
            raise ConfigError(f"unknown profile preset {preset!r}")
    except TypeError as exc:
        raise ConfigError(f"bad parameters for profile preset {preset!r}: {exc}") from None
    except KeyError as exc:
        raise ConfigError(f"profile preset {preset!r} is missing key {exc}") from None
    return prof.validate()
