"""Experiment drivers: convergence, spectrum, boundary perturbation and equilibria.

Every driver returns its rows and, given an output directory, writes one CSV
plus a ``meta.json`` sidecar.  Rows are computed per ``eps`` (optionally in a
process pool) and written in configured order, so outputs are byte-identical
across reruns.
"""
from __future__ import annotations

import csv
import json
import subprocess
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import eig_smallest
from .cell_homog import HomogenizedCoefficients, coefficient_table
from .config import StudyConfig
from .errors import ConvergenceError, MeshBudgetError, StudyError
from .fullsolver import (
    OMEGA_EPS, OMEGA_TILDE, ThinOperator, equilibria_eps, error_L2, lift_E,
    perturbation_error, solve_eps_elliptic,
)
from .geometry import DomainSpec, perturbed
from .limit1d import LimitOperator, equilibria_limit, solve_limit_elliptic


def version_string():
    """``git describe`` of the working tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             timeout=10, cwd=Path(__file__).resolve().parent)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h, "")) for h in header])


def write_meta(out, name, cfg: StudyConfig, extra=None):
    meta = {
        "study": name,
        "version": version_string(),
        "config": cfg.raw,
        "tolerances": cfg.tol,
        "resolution": cfg.raw["resolution"],
    }
    if extra:
        meta.update(extra)
    path = Path(out) / "meta.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_fmt) + "\n", encoding="utf-8")


def _map(fn, items, workers):
    if workers and workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def coefficients(cfg: StudyConfig) -> HomogenizedCoefficients:
    return coefficient_table(cfg.profile, res=cfg.resolution, **cfg.cell_kwargs)


# -- convergence -------------------------------------------------------------

CONVERGENCE_HEADER = ["eps", "status", "nodes", "err_omega_eps", "err_omega_tilde", "energy", "energy_bound",
                      "apriori_ok", "norm_sum_ratio", "u_norm"]


def _convergence_row(args):
    cfg, coef, eps = args
    d = DomainSpec(cfg.profile, eps)
    f0 = cfg.f0
    try:
        op = ThinOperator.build(d, cfg.resolution)
    except MeshBudgetError as exc:
        return {"eps": eps, "status": f"skipped: {exc}"}
    sol = solve_eps_elliptic(d, lambda x1, x2: f0(x1), op=op, tol_rel=cfg.tol["solver"])
    m1 = op.mesh_1d()
    uh = solve_limit_elliptic(coef, lambda x: coef.p_at(x) * f0(x), m1, tol_rel=cfg.tol["solver"])
    H1 = cfg.profile.bounds[3]
    dg = sol.diagnostics
    return {
        "eps": eps, "status": "ok", "nodes": op.mesh.n_nodes,
        "err_omega_eps": error_L2(sol.u, uh, OMEGA_EPS),
        "err_omega_tilde": error_L2(sol.u, uh, OMEGA_TILDE, H1=H1),
        "energy": dg["energy"], "energy_bound": dg["energy_bound"], "apriori_ok": dg["energy_ok"],
        "norm_sum_ratio": dg["norm_sum_ratio"], "u_norm": float(np.sqrt(op.norms(sol.u.values)[0])),
    }


def run_convergence(cfg: StudyConfig, out=None, coef=None):
    """Distance between the thin-domain solution and the lifted limit solution for each eps."""
    coef = coef or coefficients(cfg)
    rows = _map(_convergence_row, [(cfg, coef, e) for e in cfg.eps], cfg.raw["workers"])
    if out is not None:
        write_csv(Path(out) / "convergence.csv", CONVERGENCE_HEADER, rows)
        write_meta(out, "convergence", cfg, {"q": coef.q.tolist(), "p": coef.p.tolist()})
    return rows


# -- spectrum ----------------------------------------------------------------

def _spectrum_row(args):
    cfg, coef, eps, k = args
    d = DomainSpec(cfg.profile, eps)
    row = {"eps": eps}
    try:
        op = ThinOperator.build(d, cfg.resolution)
        lam, X, res = eig_smallest(op.A, op.M, k)
        L0 = LimitOperator.build(coef, op.mesh_1d())
        lam0, _, _ = eig_smallest(L0.A, L0.M, k)
    except MeshBudgetError as exc:
        row["status"] = f"skipped: {exc}"
        return row
    except ConvergenceError as exc:
        row["status"] = f"failed: {exc}"
        return row
    v = X[:, 0]
    row["status"] = "ok"
    row["first_vector_spread"] = float(np.ptp(v) / np.max(np.abs(v)))
    row["max_residual"] = float(np.max(res))
    for j in range(k):
        row[f"lam_eps_{j + 1}"] = float(lam[j])
        row[f"lam_0_{j + 1}"] = float(lam0[j])
        row[f"gap_{j + 1}"] = float(abs(lam[j] - lam0[j]))
    return row


def spectrum_header(k):
    h = ["eps", "status"]
    h += [f"lam_eps_{j}" for j in range(1, k + 1)]
    h += [f"lam_0_{j}" for j in range(1, k + 1)]
    h += [f"gap_{j}" for j in range(1, k + 1)]
    return h + ["first_vector_spread", "max_residual"]


def run_spectrum(cfg: StudyConfig, k=None, out=None, coef=None):
    """Smallest eigenvalues of the thin-domain and limit operators for each eps."""
    k = int(k or cfg.raw["spectrum_k"])
    if not 1 <= k <= 6:
        raise StudyError("spectrum study supports 1 <= k <= 6")
    coef = coef or coefficients(cfg)
    rows = _map(_spectrum_row, [(cfg, coef, e, k) for e in cfg.eps], cfg.raw["workers"])
    if out is not None:
        write_csv(Path(out) / "spectrum.csv", spectrum_header(k), rows)
        write_meta(out, "spectrum", cfg, {"k": k})
    return rows


# -- boundary perturbation ----------------------------------------------------

PERTURBATION_HEADER = ["eps", "delta", "status", "intersection", "exterior_u", "exterior_v", "total"]


def _perturbation_rows(args):
    cfg, eps, deltas = args
    f0 = cfg.f0
    src = lambda x1, x2: f0(x1)
    try:
        base = solve_eps_elliptic(DomainSpec(cfg.profile, eps), src, cfg.resolution, tol_rel=cfg.tol["solver"])
    except MeshBudgetError as exc:
        return [{"eps": eps, "delta": d, "status": f"skipped: {exc}"} for d in deltas]
    rows = []
    for delta in deltas:
        if delta == 0:
            other = base
        else:
            other = solve_eps_elliptic(DomainSpec(perturbed(cfg.profile, delta), eps), src, cfg.resolution,
                                       tol_rel=cfg.tol["solver"])
        r = perturbation_error(base.u, other.u, eps)
        rows.append({"eps": eps, "delta": delta, "status": "ok", **r})
    return rows


def run_perturbation(cfg: StudyConfig, deltas=None, out=None):
    """Solution change under the bump perturbation of both boundaries, per eps and delta."""
    deltas = [float(d) for d in (deltas if deltas is not None else cfg.raw["deltas"])]
    chunks = _map(_perturbation_rows, [(cfg, e, deltas) for e in cfg.eps], cfg.raw["workers"])
    rows = [r for c in chunks for r in c]
    if out is not None:
        write_csv(Path(out) / "perturbation.csv", PERTURBATION_HEADER, rows)
        summary = []
        for d in deltas:
            vals = [r["total"] for r in rows if r["delta"] == d and r["status"] == "ok"]
            summary.append({"delta": d, "max_total": max(vals) if vals else float("nan")})
        write_csv(Path(out) / "perturbation_summary.csv", ["delta", "max_total"], summary)
        write_meta(out, "perturbation", cfg, {"deltas": deltas})
    return rows


# -- equilibria ----------------------------------------------------------------

USC_HEADER = ["eps", "status", "n_limit", "n_eps", "distance", "constant_distance", "max_residual"]
EQUILIBRIA_HEADER = ["eps", "index", "mean", "l2_norm", "nearest_limit", "distance", "residual", "constant"]


def _usc_row(args):
    cfg, coef, eps = args
    nl = cfg.nonlinearity
    d = DomainSpec(cfg.profile, eps)
    try:
        op = ThinOperator.build(d, cfg.resolution)
    except MeshBudgetError as exc:
        return {"eps": eps, "status": f"skipped: {exc}"}, []
    m1 = op.mesh_1d()
    E0 = equilibria_limit(coef, nl, m1, tol=cfg.tol["newton"], seed=int(cfg.raw["seed"]))
    lifts = [lift_E(f, op.mesh).values for f in E0.fields]
    rng = np.random.default_rng(int(cfg.raw["seed"]))
    x1, x2 = op.mesh.nodes[:, 0], op.mesh.nodes[:, 1]
    guesses = list(lifts)
    for v in lifts:
        # perturb in both variables so the search is not confined to x1-functions
        guesses.append(v + 0.05 * rng.standard_normal() * np.cos(np.pi * x1) * (1 + 0.1 * x2))
    fields, residuals, _ = equilibria_eps(op, nl, guesses, tol=cfg.tol["newton_eps"])
    if not fields:
        raise StudyError(f"no equilibrium of the thin-domain problem found at eps={eps}")
    ML = op.ML
    details, dists, const_dists = [], [], []
    for i, (u, r) in enumerate(zip(fields, residuals)):
        ds = [error_L2(u, v) for v in E0.fields]
        j = int(np.argmin(ds))
        const = bool(np.ptp(u.values) <= 1e-8 * (1 + np.max(np.abs(u.values))))
        dists.append(ds[j])
        if const:
            const_dists.append(ds[j])
        details.append({
            "eps": eps, "index": i, "mean": float(ML @ u.values / ML.sum()),
            "l2_norm": float(np.sqrt(u.values @ (op.M @ u.values))), "nearest_limit": j,
            "distance": ds[j], "residual": r, "constant": const,
        })
    row = {
        "eps": eps, "status": "ok", "n_limit": len(E0), "n_eps": len(fields),
        "distance": max(dists), "constant_distance": max(const_dists) if const_dists else 0.0,
        "max_residual": max(residuals),
    }
    return row, details


def run_equilibria_usc(cfg: StudyConfig, out=None, coef=None):
    """One-sided distance from thin-domain equilibria to lifted limit equilibria, per eps."""
    coef = coef or coefficients(cfg)
    results = _map(_usc_row, [(cfg, coef, e) for e in cfg.eps], cfg.raw["workers"])
    rows = [r for r, _ in results]
    details = [d for _, ds in results for d in ds]
    if out is not None:
        write_csv(Path(out) / "usc.csv", USC_HEADER, rows)
        write_csv(Path(out) / "equilibria.csv", EQUILIBRIA_HEADER, details)
        write_meta(out, "equilibria", cfg)
    return rows, details


# -- coefficient table ----------------------------------------------------------

def run_cell(cfg: StudyConfig, out=None):
    coef = coefficients(cfg)
    rows = [{"x": x, "q": q, "p": p, "G0": g} for x, q, p, g in coef.rows()]
    if out is not None:
        write_csv(Path(out) / "cell.csv", ["x", "q", "p", "G0"], rows)
        write_meta(out, "cell", cfg, {"cell": coef.info})
    return rows, coef
