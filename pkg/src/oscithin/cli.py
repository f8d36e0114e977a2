"""Command-line entry point ``oscithin``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import ConfigError, DomainError, OscithinError
from .fullsolver import ThinOperator, solve_eps_elliptic
from .geometry import DomainSpec
from .limit1d import solve_limit_parabolic, solve_limit_elliptic
from .mesh import dump_mesh, mesh_1d, mesh_thin_domain
from .study import (
    coefficients, run_cell, run_convergence, run_equilibria_usc, run_perturbation, run_spectrum,
    write_csv, write_meta,
)

COMMANDS = ("cell", "solve-eps", "solve-limit", "parabolic", "converge", "spectrum", "perturb", "equilibria")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _eps_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty eps list")
    return vals


def build_parser():
    p = _Parser(prog="oscithin", description="Thin-domain homogenization studies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON configuration file (defaults are used when omitted)")
        s.add_argument("--out", default="out", help="output directory (default: out)")
        s.add_argument("--dump-mesh", action="store_true", help="also write the thin-domain meshes used")
        s.add_argument("--eps", type=_eps_list, help="comma-separated eps values overriding the config")
        s.add_argument("--workers", type=int, help="process count for per-eps work (default: config)")
        if name == "solve-limit":
            s.add_argument("--n", type=int, default=512, help="interval elements (default: 512)")
        if name == "parabolic":
            s.add_argument("--n", type=int, default=256, help="interval elements (default: 256)")
            s.add_argument("--u0", type=float, default=0.1, help="constant initial value (default: 0.1)")
        if name == "spectrum":
            s.add_argument("--k", type=int, help="number of eigenvalues (1..6)")
    return p


def _dump_meshes(args, cfg):
    if not args.dump_mesh:
        return
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for eps in cfg.eps:
        dump_mesh(mesh_thin_domain(DomainSpec(cfg.profile, eps), cfg.resolution), out / f"mesh_eps_{eps!r}.txt")


def _cmd_cell(args, cfg):
    rows, _ = run_cell(cfg, args.out)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'cell.csv'}")


def _cmd_solve_eps(args, cfg):
    eps = cfg.eps[0]
    d = DomainSpec(cfg.profile, eps)
    op = ThinOperator.build(d, cfg.resolution)
    f0 = cfg.f0
    sol = solve_eps_elliptic(d, lambda x1, x2: f0(x1), op=op, tol_rel=cfg.tol["solver"])
    m = op.mesh
    rows = [{"x1": a, "x2": b, "u": v} for (a, b), v in zip(m.nodes.tolist(), sol.u.values.tolist())]
    write_csv(Path(args.out) / "solution_eps.csv", ["x1", "x2", "u"], rows)
    if args.dump_mesh:
        dump_mesh(m, Path(args.out) / f"mesh_eps_{eps!r}.txt")
    write_meta(args.out, "solve-eps", cfg, {"eps": eps, "diagnostics": sol.diagnostics})
    print(f"eps={eps}: {m.n_nodes} nodes, a priori bound {'holds' if sol.diagnostics['energy_ok'] else 'FAILS'}")


def _cmd_solve_limit(args, cfg):
    coef = coefficients(cfg)
    m = mesh_1d(args.n, cfg.profile.partition)
    f0 = cfg.f0
    u = solve_limit_elliptic(coef, lambda x: coef.p_at(x) * f0(x), m, tol_rel=cfg.tol["solver"])
    write_csv(Path(args.out) / "solution_limit.csv", ["x", "u"],
              [{"x": x, "u": v} for x, v in zip(m.nodes.tolist(), u.values.tolist())])
    write_meta(args.out, "solve-limit", cfg, {"elements": args.n})
    print(f"wrote {m.n_nodes} nodes to {Path(args.out) / 'solution_limit.csv'}")


def _cmd_parabolic(args, cfg):
    coef = coefficients(cfg)
    m = mesh_1d(args.n, cfg.profile.partition)
    t = cfg.raw["time"]
    tr = solve_limit_parabolic(coef, cfg.nonlinearity, args.u0, T=float(t["T"]), dt=float(t["dt"]), m=m)
    out = Path(args.out)
    index = []
    for i, (time, snap) in enumerate(zip(tr.times, tr.snapshots)):
        name = f"snapshot_{i:04d}.csv"
        write_csv(out / name, ["x", "u"], [{"x": x, "u": v} for x, v in zip(m.nodes.tolist(), snap.values.tolist())])
        index.append({"file": name, "t": time})
    (out / "index.json").write_text(json.dumps({
        "snapshots": index, "energy_monotone": tr.energy_monotone, "dt_stable": tr.dt_stable,
        "final_residual": tr.info["residual"],
    }, indent=2) + "\n", encoding="utf-8")
    write_meta(out, "parabolic", cfg)
    print(f"wrote {len(index)} snapshots; energy {'nonincreasing' if tr.energy_monotone else 'NOT monotone'}")


def _cmd_converge(args, cfg):
    rows = run_convergence(cfg, args.out)
    for r in rows:
        print(f"eps={r['eps']}: {r['status']} err={r.get('err_omega_eps', float('nan')):.6g}")


def _cmd_spectrum(args, cfg):
    rows = run_spectrum(cfg, args.k, args.out)
    for r in rows:
        print(f"eps={r['eps']}: {r['status']}")


def _cmd_perturb(args, cfg):
    rows = run_perturbation(cfg, out=args.out)
    for r in rows:
        print(f"eps={r['eps']} delta={r['delta']}: {r.get('total', float('nan')):.6g}")


def _cmd_equilibria(args, cfg):
    rows, _ = run_equilibria_usc(cfg, args.out)
    for r in rows:
        print(f"eps={r['eps']}: {r['status']} distance={r.get('distance', float('nan')):.6g}")


HANDLERS = {
    "cell": _cmd_cell, "solve-eps": _cmd_solve_eps, "solve-limit": _cmd_solve_limit, "parabolic": _cmd_parabolic,
    "converge": _cmd_converge, "spectrum": _cmd_spectrum, "perturb": _cmd_perturb, "equilibria": _cmd_equilibria,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        overrides = {}
        if args.eps is not None:
            overrides["eps"] = args.eps
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("--workers must be at least 1")
            overrides["workers"] = args.workers
        cfg = load_config(args.config, overrides)
        HANDLERS[args.command](args, cfg)
        if args.command != "solve-eps":
            _dump_meshes(args, cfg)
    except (ConfigError, DomainError) as exc:
        print(f"oscithin: configuration error: {exc}", file=sys.stderr)
        return 1
    except (OscithinError, np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"oscithin: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
