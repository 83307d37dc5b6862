"""Command line front end.

Exit codes: 0 pass, 1 domain or validation failure, 2 input error.
"""
from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
import time
from pathlib import Path

import numpy as np

from .errors import AffineError, ConstructionError, DomainError
from .families import FamilySpec, make_family, shipped_specs
from .io import RunManifest, dump_json, dumps
from .params import AffineParams, check_all
from .riccati import SolverOpts, solve_riccati
from .simulate import SimConfig, simulate_ou_exact, simulate_paths
from .verify import (
    affine_identity_test,
    cone_invariance_test,
    default_u_batch,
    joint_laplace_test,
    martingale_test,
    pathwise_uniqueness_test,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
SUITES = ("affine", "martingale", "joint", "uniqueness", "cone")


class InputError(Exception):
    pass


def load_params(path) -> AffineParams:
    """Parameter JSON or FamilySpec JSON (recognised by its ``family`` key)."""
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise InputError(f"{path}: expected a JSON object")
    try:
        if "family" in d:
            return make_family(FamilySpec.from_json(d))
        return AffineParams.from_json(d)
    except (ConstructionError, DomainError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def _floats(text: str, n: int, name: str) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InputError(f"--{name}: cannot parse {text!r}") from exc
    if vals.size == 1 and n > 1:
        vals = np.full(n, vals[0])
    if vals.size != n:
        raise InputError(f"--{name}: expected {n} values, got {vals.size}")
    return vals


def _complexes(text: str, n: int, name: str = "u") -> np.ndarray:
    try:
        vals = np.array([complex(v.strip().replace(" ", "")) for v in text.split(",")])
    except ValueError as exc:
        raise InputError(f"--{name}: cannot parse {text!r}") from exc
    if vals.size == 1 and n > 1:
        vals = np.full(n, vals[0])
    if vals.size != n:
        raise InputError(f"--{name}: expected {n} values, got {vals.size}")
    return vals


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    env = os.environ.get("AFFINE_HILBERT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InputError(f"AFFINE_HILBERT_THREADS={env!r} is not an integer") from exc
    return 1


def _seed(args) -> int:
    return int(args.seed) if args.seed is not None else secrets.randbits(63)


def _finish(manifest: RunManifest, path, t0: float) -> None:
    if path is None:
        return
    manifest.wall_clock_s = time.perf_counter() - t0
    dump_json(manifest.to_json(), path)


def _manifest_path(args, primary):
    if getattr(args, "manifest", None):
        return args.manifest
    if primary:
        return str(primary) + ".manifest.json"
    return None


# Commands ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    t0 = time.perf_counter()
    p = load_params(args.params)
    reports = check_all(p, tol=args.tol)
    if args.checks:
        keep = set(args.checks.split(","))
        unknown = keep - set(reports)
        if unknown:
            raise InputError(f"unknown checks {sorted(unknown)}")
        reports = {k: v for k, v in reports.items() if k in keep}
    ok = all(r.overall for r in reports.values())
    out = {"pass": ok, "tol": args.tol, "reports": {k: r.to_json() for k, r in reports.items()}}
    for name, r in reports.items():
        for f in r.findings:
            if not f.passed:
                print(f"{name}: {f.condition}: {f.status} (residual {f.residual:.3e}) {f.detail}")
    print("validate:", "pass" if ok else "fail")
    if args.out:
        dump_json(out, args.out)
    m = RunManifest("validate", sys.argv[1:], {"tol": args.tol, "checks": args.checks})
    m.add_input(args.params)
    if args.out:
        m.add_output(args.out)
    _finish(m, _manifest_path(args, args.out), t0)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_riccati(args) -> int:
    t0 = time.perf_counter()
    p = load_params(args.params)
    u = _complexes(args.u, p.n)
    if args.dt is not None:
        opts = SolverOpts(method="rk4", dt=args.dt, strict=not args.warn_only)
    else:
        opts = SolverOpts(method="rk45", atol=args.atol, rtol=args.rtol or args.atol,
                          strict=not args.warn_only)
    sol = solve_riccati(p, u, args.t_end, opts)
    sol.to_csv(args.out)
    end = sol.psi_end
    print("phi(t_end) =", repr(sol.phi_end))
    print("psi(t_end) =", ", ".join(repr(complex(z)) for z in end))
    m = RunManifest("riccati", sys.argv[1:],
                    {"u": [str(z) for z in u], "t_end": args.t_end, **{k: getattr(opts, k) for k in
                     ("method", "dt", "atol", "rtol", "cert_tol", "strict", "j_mode")}})
    m.add_input(args.params)
    m.add_output(args.out)
    _finish(m, _manifest_path(args, args.out), t0)
    return EXIT_FAIL if sol.violations else EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    p = load_params(args.params)
    x0 = _floats(args.x0, p.n, "x0") if args.x0 else np.zeros(p.n)
    cfg = SimConfig(t_end=args.t_end, dt=args.dt, n_paths=args.paths, scheme=args.scheme,
                    master_seed=_seed(args), store=args.store, threads=_threads(args))
    if args.exact:
        if p.partition.nI:
            raise DomainError("--exact needs an OU parameter set (I empty)")
        ens = simulate_ou_exact(p, x0, cfg)
    else:
        ens = simulate_paths(p, x0, cfg)
    ens.to_csv(args.out)
    summary = ens.summary()
    summary["sampler"] = "ou_exact" if args.exact else "euler"
    summary_path = args.summary or str(Path(args.out).with_suffix(".summary.json"))
    dump_json(summary, summary_path)
    print("terminal mean:", ", ".join(repr(v) for v in summary["terminal_mean"]))
    m = RunManifest("simulate", sys.argv[1:], {**cfg.to_json(), "x0": x0.tolist(),
                                               "exact": bool(args.exact)}, master_seed=cfg.master_seed)
    m.add_input(args.params)
    m.add_output(args.out)
    m.add_output(summary_path)
    _finish(m, _manifest_path(args, args.out), t0)
    return EXIT_OK


def _corrupt(p: AffineParams, control: str | None) -> AffineParams | None:
    if control is None:
        return None
    if control == "sign-flip-M":
        return p.replace(M=-p.M)
    raise InputError(f"unknown control {control!r}")


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    p = load_params(args.params)
    x0 = _floats(args.x0, p.n, "x0") if args.x0 else np.zeros(p.n)
    seed = _seed(args)
    cfg = SimConfig(t_end=args.t, dt=args.dt, n_paths=args.paths, master_seed=seed,
                    threads=_threads(args))
    suites = SUITES if args.suite == "all" else (args.suite,)
    if args.u:
        batch = [_complexes(s, p.n) for s in args.u.split(";")]
    else:
        batch = default_u_batch(p)
    u_one = batch[-1]
    reports = []
    ensemble = None
    if "affine" in suites or "cone" in suites:
        from .verify import _pair
        ensemble = _pair(p, x0, cfg, True)
    if "affine" in suites:
        reports.append(affine_identity_test(p, x0, args.t, batch, cfg, z_crit=args.z_crit,
                                            analytic_params=_corrupt(p, args.control),
                                            ensemble=ensemble))
    if "martingale" in suites:
        reports.append(martingale_test(p, x0, args.t, u_one, (0.0, args.t / 2, args.t), cfg,
                                       z_crit=args.z_crit))
    if "joint" in suites:
        half = np.where(np.isin(np.arange(p.n), p.partition.i_idx), -0.5, 0.0) + 0j
        half[p.partition.j_idx] = 0.5j
        reports.append(joint_laplace_test(p, x0, args.t / 2, args.t, half, half, cfg,
                                          z_crit=args.z_crit))
    if "uniqueness" in suites:
        from dataclasses import replace
        ucfg = replace(cfg, n_paths=min(cfg.n_paths, 1000))
        reports.append(pathwise_uniqueness_test(p, x0, 0.0, ucfg))
        reports.append(pathwise_uniqueness_test(p, x0, 1e-6, ucfg))
    if "cone" in suites:
        reports.append(cone_invariance_test(ensemble[0], p))
    ok = all(r.passed for r in reports)
    for r in reports:
        print(f"{r.test}: {'pass' if r.passed else 'FAIL'}")
        for w in r.warnings:
            print(f"warning: {r.test}: {w}", file=sys.stderr)
    if len(reports) == 1:
        out = reports[0].to_json()
    else:
        out = {"test": "all", "pass": ok, "config": cfg.to_json(),
               "reports": [r.to_json() for r in reports]}
    m = RunManifest("verify", sys.argv[1:], {**cfg.to_json(), "suite": args.suite,
                                             "x0": x0.tolist(), "z_crit": args.z_crit,
                                             "control": args.control}, master_seed=seed)
    m.add_input(args.params)
    if args.out:
        dump_json(out, args.out)
        m.add_output(args.out)
    else:
        sys.stdout.write(dumps(out))
    if args.csv:
        from .io import write_csv
        rows = []
        for r in reports:
            for rec in r.records:
                rows.append([r.test, rec.label, rec.mc.real, rec.mc.imag, rec.stderr,
                             rec.analytic.real, rec.analytic.imag, rec.gap, rec.z,
                             rec.allowance, rec.passed])
        write_csv(args.csv, ["test", "label", "mc_re", "mc_im", "stderr", "analytic_re",
                             "analytic_im", "gap", "z_score", "allowance", "pass"], rows)
        m.add_output(args.csv)
    _finish(m, _manifest_path(args, args.out), t0)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_families(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, spec in shipped_specs().items():
        dump_json(spec.to_json(), out / f"{name}.json")
        if args.params:
            dump_json(make_family(spec).to_json(), out / f"{name}.params.json")
        print(out / f"{name}.json")
    return EXIT_OK


# Parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="affine-hilbert",
                                 description="Truncated affine diffusions on the canonical cone.")
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="run the static parameter checks")
    v.add_argument("params")
    v.add_argument("--tol", type=float, default=1e-10)
    v.add_argument("--checks", help="comma list of admissibility,inward,parallel,existence,uniqueness")
    v.add_argument("--out")
    v.add_argument("--manifest")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("riccati", help="solve the Riccati system")
    r.add_argument("params")
    r.add_argument("--u", required=True, help="comma separated complex values, e.g. -1,0.5j")
    r.add_argument("--t-end", type=float, required=True)
    g = r.add_mutually_exclusive_group()
    g.add_argument("--dt", type=float, help="fixed-step RK4")
    g.add_argument("--atol", type=float, default=1e-9, help="adaptive RK45 tolerance")
    r.add_argument("--rtol", type=float)
    r.add_argument("--warn-only", action="store_true", help="certificate breaches are warnings")
    r.add_argument("--out", required=True)
    r.add_argument("--manifest")
    r.set_defaults(func=cmd_riccati)

    s = sub.add_parser("simulate", help="simulate a path ensemble")
    s.add_argument("params")
    s.add_argument("--x0")
    s.add_argument("--paths", type=int, default=1000)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--t-end", type=float, default=1.0)
    s.add_argument("--seed", type=int)
    s.add_argument("--scheme", choices=("full-truncation", "absorbed"), default="full-truncation")
    s.add_argument("--store", choices=("terminal", "full"), default="terminal")
    s.add_argument("--exact", action="store_true", help="exact OU sampler")
    s.add_argument("--threads", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--summary")
    s.add_argument("--manifest")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("verify", help="Monte Carlo verification suites")
    q.add_argument("params")
    q.add_argument("--suite", choices=SUITES + ("all",), default="all")
    q.add_argument("--x0")
    q.add_argument("--t", type=float, default=1.0)
    q.add_argument("--dt", type=float, default=1e-3)
    q.add_argument("--paths", type=int, default=10_000)
    q.add_argument("--seed", type=int)
    q.add_argument("--u", help="semicolon separated u vectors")
    q.add_argument("--z-crit", type=float, default=4.0)
    q.add_argument("--control", choices=("sign-flip-M",),
                   help="negative control: corrupt the analytic side")
    q.add_argument("--threads", type=int)
    q.add_argument("--out")
    q.add_argument("--csv")
    q.add_argument("--manifest")
    q.set_defaults(func=cmd_verify)

    f = sub.add_parser("families", help="emit the shipped family specs")
    f.add_argument("--out-dir", default=".")
    f.add_argument("--params", action="store_true", help="also write expanded parameter files")
    f.set_defaults(func=cmd_families)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConstructionError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AffineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
