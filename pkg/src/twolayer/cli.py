"""Command-line front end: solve, branch, sweep, fields and verify.

Every command reads a JSON config (``--config``) and writes under
``--out`` (or $TWOLAYER_OUT).  Exit codes: 0 success, 1 a verify check
failed, 2 Newton failure, 3 inadmissible solution, 4 I/O or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .continuation import (Branch, ContinuationPolicy, classify_termination, continue_to_amplitude,
                           extend_branch, load_branch, start_branch, sweep)
from .errors import Inadmissible, InsufficientEvidence, NonConvergence, SingularJacobian
from .io import dumps, read_solution, write_solution
from .model import critical_speed, shear_solution
from .params import PhysParams
from .residual import ClosureSpec, ResidualSystem, admissibility
from .solver import NewtonOptions
from .state import SolutionVector, amplitude, decay_metric

log = logging.getLogger("twolayer")

EXIT_OK, EXIT_CHECK, EXIT_NEWTON, EXIT_INADMISSIBLE, EXIT_IO = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    params: PhysParams | None = None
    N: int = 64
    A: float = 0.0
    c: float | None = None
    A0: float = 0.01
    newton: NewtonOptions = field(default_factory=NewtonOptions)
    continuation: ContinuationPolicy = field(default_factory=ContinuationPolicy)
    output_dir: Path | None = None
    sweep_k: float | None = None
    sweep_H: list[float] = field(default_factory=list)
    sweep_omega0: list[float] = field(default_factory=list)
    workers: int = 1
    continuation_set: bool = False


def _known(cls, d: dict[str, Any], where: str) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")
    return d


def load_config(path: str | Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: top level must be an object")
    allowed = {"params", "N", "A", "c", "A0", "newton", "continuation", "output_dir", "sweep"}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(sorted(extra))}")
    try:
        if "params" in raw:
            p = raw["params"]
            cfg.params = PhysParams(float(p["k"]), float(p["H"]), float(p["omega0"]))
        cfg.N = int(raw.get("N", cfg.N))
        if cfg.N < 8:
            raise ConfigError("N must be at least 8")
        cfg.A = float(raw.get("A", cfg.A))
        cfg.c = None if raw.get("c") is None else float(raw["c"])
        cfg.A0 = float(raw.get("A0", cfg.A0))
        if "newton" in raw:
            cfg.newton = NewtonOptions(**_known(NewtonOptions, raw["newton"], "newton"))
        if "continuation" in raw:
            cont = dict(raw["continuation"])
            cont.setdefault("newton", asdict(NewtonOptions(max_iterations=15)))
            cfg.continuation = ContinuationPolicy.from_dict(_known(ContinuationPolicy, cont, "continuation"))
            cfg.continuation_set = True
        if raw.get("output_dir"):
            cfg.output_dir = Path(raw["output_dir"])
        if "sweep" in raw:
            sw = raw["sweep"]
            cfg.sweep_k = float(sw["k"]) if "k" in sw else (cfg.params.k if cfg.params else None)
            cfg.sweep_H = [float(v) for v in sw.get("H", [])]
            cfg.sweep_omega0 = [float(v) for v in sw.get("omega0", [])]
            cfg.workers = int(sw.get("workers", 1))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: invalid value: {exc}") from None
    return cfg


def _out_dir(args, cfg: RunConfig) -> Path:
    out = args.out or os.environ.get("TWOLAYER_OUT") or cfg.output_dir or "."
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _tag(params: PhysParams) -> str:
    return f"k{params.k:.6g}_H{params.H:.6g}_w{params.omega0:.6g}"


def _need_params(cfg: RunConfig) -> PhysParams:
    if cfg.params is None:
        raise ConfigError("config needs a 'params' object with k, H and omega0")
    return cfg.params


def _solution_meta(sol: SolutionVector, params: PhysParams) -> dict[str, Any]:
    rep = ResidualSystem(params, sol.N, ClosureSpec.amplitude_target(amplitude(sol))).report(sol)
    adm = admissibility(sol, params)
    return {
        "amplitude": amplitude(sol),
        "residual_max": rep.max_abs,
        "unused_point_residual": rep.unused_point_residual,
        "decay_metric": decay_metric(sol),
        "admissible": adm.ok,
        "admissibility": adm.reason,
        "min_interface_speed": adm.min_interface_speed,
        "lower_clearance": adm.lower_clearance,
        "upper_clearance": adm.upper_clearance,
    }


# --- commands -------------------------------------------------------------

def solve_amplitude(params: PhysParams, A: float, N: int, cfg: RunConfig) -> SolutionVector:
    """Solution at amplitude A: shear for A = 0, otherwise :func:`continue_to_amplitude`."""
    if A == 0.0:
        c = critical_speed(params) if cfg.c is None else cfg.c
        return shear_solution(params, c, N)
    return continue_to_amplitude(params, A, N, cfg.continuation, A0=cfg.A0, newton=cfg.newton)


def cmd_solve(args, cfg: RunConfig) -> int:
    params = _need_params(cfg)
    out = _out_dir(args, cfg)
    sol = solve_amplitude(params, cfg.A, cfg.N, cfg)
    meta = _solution_meta(sol, params)
    path = out / f"solution_{_tag(params)}_A{cfg.A:.6g}_N{sol.N}.json"
    write_solution(path, sol, params, meta)
    print(f"wrote {path}  residual={meta['residual_max']:.3e}  amplitude={meta['amplitude']:.6g}")
    return EXIT_OK


def _summary_rows(branch: Branch) -> list[dict[str, Any]]:
    rows = []
    for i, p in enumerate(branch.points):
        d = p.diagnostics
        rows.append({"index": i, "amplitude": d.amplitude, "N": d.N, "L": d.L,
                     "min_interface_speed": d.min_interface_speed,
                     "lower_clearance": d.lower_clearance, "upper_clearance": d.upper_clearance,
                     "decay_metric": d.decay_metric, "iterations": d.iterations,
                     "final_residual": d.final_residual, "closure": d.closure})
    return rows


def _write_csv(path: Path, rows: Sequence[dict[str, Any]]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            return
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        for r in rows:
            wr.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def cmd_branch(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    if args.resume:
        try:
            branch = load_branch(args.resume)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot resume from {args.resume}: {exc}") from None
        params = branch.params
        policy = cfg.continuation if cfg.continuation_set else branch.policy
    else:
        params = _need_params(cfg)
        policy = cfg.continuation
        path = out / f"branch_{_tag(params)}.jsonl"
        branch = start_branch(params, cfg.A0, cfg.N, policy, path)
    extend_branch(branch, policy)
    rows = _summary_rows(branch)
    stem = Path(branch.path).name.removesuffix(".jsonl") if branch.path else f"branch_{_tag(params)}"
    _write_csv(out / f"{stem}_summary.csv", rows)
    try:
        rep = classify_termination(branch)
        verdict, reason, evidence = rep.verdict, rep.reason, rep.evidence
    except InsufficientEvidence as exc:
        verdict, reason, evidence = "Undetermined", str(exc), {}
    (out / f"{stem}_termination.json").write_text(dumps({
        "verdict": verdict, "reason": reason, "stop_reason": branch.stop_reason,
        "max_amplitude": float(np.max(np.abs(branch.amplitudes))), "evidence": evidence,
    }, indent=1) + "\n")
    print(f"{'A':>10} {'N':>5} {'min speed':>10} {'lower':>8} {'upper':>8} {'decay':>9}")
    for r in rows:
        print(f"{r['amplitude']:10.5f} {r['N']:5d} {r['min_interface_speed']:10.4f} "
              f"{r['lower_clearance']:8.4f} {r['upper_clearance']:8.4f} {r['decay_metric']:9.1e}")
    print(f"stop: {branch.stop_reason}  verdict: {verdict}  "
          f"max amplitude: {np.max(np.abs(branch.amplitudes)):.5f}")
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig) -> int:
    if not cfg.sweep_H or not cfg.sweep_omega0 or cfg.sweep_k is None:
        raise ConfigError("usage: sweep needs a 'sweep' object with k and nonempty H and omega0 lists")
    out = _out_dir(args, cfg)
    branch_dir = out / "branches"
    branch_dir.mkdir(exist_ok=True)
    cells = sweep(cfg.sweep_k, cfg.sweep_H, cfg.sweep_omega0, cfg.continuation,
                  workers=cfg.workers, out_dir=branch_dir)
    from .svg import sweep_figure

    stem = f"sweep_k{cfg.sweep_k:.6g}"
    _write_csv(out / f"{stem}.csv", [{"H": c.H, "omega0": c.omega0, "verdict": c.verdict,
                                      "max_amplitude": c.max_amplitude, "points": c.points,
                                      "reason": c.reason} for c in cells])
    sweep_figure(out / f"{stem}.svg", cells, cfg.sweep_k)
    for c in cells:
        print(f"H={c.H:<8.4g} omega0={c.omega0:<8.4g} {c.verdict:<15} A_max={c.max_amplitude:.4f}")
    return EXIT_OK


def _load_record(path: str) -> tuple[SolutionVector, PhysParams]:
    try:
        sol, params, _ = read_solution(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read solution record {path}: {exc}") from None
    return sol, params


def _parse_grid(spec: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in spec.split(","))
    except ValueError:
        raise ConfigError(f"--grid expects NX,NY, got {spec!r}") from None
    if min(nx, ny) < 32:
        raise ConfigError(f"--grid must be at least 32,32, got {spec!r}")
    return nx, ny


def cmd_fields(args, cfg: RunConfig) -> int:
    from .fields import interface_polyline, stagnation_points, stream_function_grid, streamlines
    from .svg import field_figure, finite_polylines

    sol, params = _load_record(args.solution)
    rep = admissibility(sol, params)
    if not rep.ok:
        raise Inadmissible(rep.reason)
    out = _out_dir(args, cfg)
    nx, ny = _parse_grid(args.grid)
    grid = stream_function_grid(sol, params, nx, ny)
    stem = Path(args.solution).name.removesuffix(".json")
    grid.to_csv(out / f"{stem}_field.csv")
    stag = stagnation_points(grid)
    counted = [s for s in stag if s.kind != "degenerate"]
    # degenerate candidates (lines of zeros in shear-like regions) are left out
    (out / f"{stem}_stagnation.json").write_text(dumps([
        {"x": s.position[0], "y": s.position[1], "kind": s.kind, "layer": s.layer_name,
         "velocity_gradient": s.velocity_gradient} for s in counted], indent=1) + "\n")
    psi = grid.Psi[np.isfinite(grid.Psi)]
    levels = np.linspace(psi.min(), psi.max(), 22)[1:-1]
    lines = streamlines(grid, levels)
    (out / f"{stem}_streamlines.json").write_text(dumps(
        [{"level": lev, "points": pts} for lev, pts in lines]) + "\n")
    field_figure(out / f"{stem}.svg", 2 * math.pi / params.k, interface_polyline(sol, params),
                 finite_polylines(p for _, p in lines), [s.position for s in counted],
                 title=f"k={params.k:.4g} H={params.H:.4g} omega0={params.omega0:.4g} "
                       f"A={amplitude(sol):.5g}")
    for s in counted:
        print(f"{s.layer_name:6} {s.kind:10} x={s.position[0]:.6f} y={s.position[1]:.6f}")
    if len(stag) > len(counted):
        print(f"{len(stag) - len(counted)} degenerate candidate(s) excluded")
    print(f"wrote {out / (stem + '.svg')}")
    return EXIT_OK


def verify_solution(sol: SolutionVector, params: PhysParams, grid: tuple[int, int] = (64, 64),
                    tol: float = 1e-10) -> list[dict[str, Any]]:
    """All end-to-end checks on one record, each as {name, passed, value, limit}."""
    from .fields import invariants, pde_residual, psi_on_interface, stream_function_grid

    checks: list[dict[str, Any]] = []

    def add(name, passed, value, limit):
        checks.append({"name": name, "passed": bool(passed), "value": value, "limit": limit})

    rep = ResidualSystem(params, sol.N, ClosureSpec.amplitude_target(amplitude(sol))).report(sol)
    add("residual", rep.max_abs <= tol, rep.max_abs, tol)
    unused = float(np.max(np.abs(rep.unused_point_residual)))
    add("unused_midpoint", unused <= 10 * max(rep.max_abs, tol), unused, 10 * max(rep.max_abs, tol))
    adm = admissibility(sol, params)
    add("admissibility", adm.ok, adm.reason, "ok")
    if not adm.ok:
        return checks
    stations = np.linspace(0.0, math.pi / params.k, 8)
    inv = invariants(sol, params, stations)
    spread = max(inv.spread_lower, inv.spread_upper, inv.spread_force)
    add("invariants", spread <= 1e-6, spread, 1e-6)
    nx, ny = grid
    coarse = stream_function_grid(sol, params, nx, ny)
    fine = stream_function_grid(sol, params, 2 * nx, 2 * ny - 1)
    band = 1.5 * max(coarse.dx, coarse.dy)
    r1 = pde_residual(coarse, params, band)
    r2 = pde_residual(fine, params, band)
    for i, name in enumerate(("pde_divergence", "pde_vorticity")):
        if max(r1[i], r2[i]) <= 1e-9:
            add(name, True, [r1[i], r2[i]], "both <= 1e-9 or ratio >= 3")
        else:
            ratio = r1[i] / max(r2[i], 1e-300)
            add(name, ratio >= 3.0, [r1[i], r2[i], ratio], "both <= 1e-9 or ratio >= 3")
    level = float(np.max(np.abs(psi_on_interface(sol, params, np.linspace(0.0, math.pi, 17)))))
    add("level_set", level <= 1e-6, level, 1e-6)
    return checks


def cmd_verify(args, cfg: RunConfig) -> int:
    sol, params = _load_record(args.solution)
    out = _out_dir(args, cfg)
    checks = verify_solution(sol, params)
    stem = Path(args.solution).name.removesuffix(".json")
    (out / f"{stem}_verify.json").write_text(dumps(checks, indent=1) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']:<16} {c['value']}  (limit {c['limit']})")
    return EXIT_OK if all(c["passed"] for c in checks) else EXIT_CHECK


# --- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twolayer", description="Steady interfacial waves between "
                                 "two constant-vorticity layers.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default $TWOLAYER_OUT or .)")

    common(sub.add_parser("solve", help="solve for one wave at a given amplitude"))
    p = sub.add_parser("branch", help="follow a branch from the bifurcation point")
    common(p, config_required=False)
    p.add_argument("--resume", help="branch file to continue")
    common(sub.add_parser("sweep", help="classify limiting types over an (H, omega0) grid"))
    p = sub.add_parser("fields", help="reconstruct the interior flow of a solution")
    p.add_argument("solution", help="solution record (JSON)")
    p.add_argument("--grid", default="64,64", help="NX,NY")
    common(p, config_required=False)
    p = sub.add_parser("verify", help="run end-to-end checks on a solution record")
    p.add_argument("solution", help="solution record (JSON)")
    common(p, config_required=False)
    return ap


COMMANDS = {"solve": cmd_solve, "branch": cmd_branch, "sweep": cmd_sweep,
            "fields": cmd_fields, "verify": cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "branch" and not args.resume and not args.config:
            raise ConfigError("branch needs --config or --resume")
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Inadmissible as exc:
        print(f"inadmissible: {exc.reason}", file=sys.stderr)
        return EXIT_INADMISSIBLE
    except (NonConvergence, SingularJacobian) as exc:
        print(f"newton failure: {exc}", file=sys.stderr)
        return EXIT_NEWTON


if __name__ == "__main__":
    sys.exit(main())
