"""Command line: run presets or config files, sweep parameters, audit outputs.

Subcommands::

    nonlocal-lwr run <preset|config> --out DIR [--snapshots]
    nonlocal-lwr sweep <preset|config> --grid KEY=V1,V2 [--grid ...] --out DIR --jobs N
    nonlocal-lwr check DIR
    nonlocal-lwr weights <kernel> <dx> <eta>

Exit codes: 0 success, 1 validation error, 2 runtime/solver error, 3 check failure.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .config import PRESETS, format_config, load_config, resolved_mapping, source_mapping
from .diagnostics import CSV_HEADER
from .errors import ConfigurationError, NonlocalLWRError
from .macro import run_macro
from .micro import run_micro
from .model import Kernel, kernel_weights
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

#: slack on the decay bound, relative in L
BOUND_REL_TOL = 1e-6
MAX_PRINCIPLE_TOL = 1e-12
MASS_REL_TOL = 1e-9


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    return repr(x)


@dataclass
class RunManifest:
    scenario: str
    config: dict
    artifacts: list = field(default_factory=list)
    wall_time: float = 0.0
    status: int = EXIT_OK
    message: str = ""
    summary: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default))
        return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def _snapshot_writer(directory: Path, artifacts: list):
    directory.mkdir(parents=True, exist_ok=True)

    def write(grid, snap):
        path = directory / f"snap_t{snap.t:.4f}.csv"
        _write_csv(path, ("x", "rho", "V"), zip(grid.centers, snap.rho, snap.V))
        artifacts.append(str(path))

    return write


def run_scenario(source: Union[str, Path, Mapping, ScenarioConfig], out_dir: Union[str, Path],
                 snapshots: bool = False) -> RunManifest:
    """Run one scenario and write its diagnostics, manifest and optional snapshots.

    Validation failures raise :class:`ConfigurationError`; solver failures are
    recorded in the returned manifest with status 2.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = source if isinstance(source, ScenarioConfig) else load_config(source)
    cfg.validate()
    resolved = resolved_mapping(cfg)
    manifest = RunManifest(scenario=cfg.name, config=resolved)
    (out / "config.txt").write_text(format_config(resolved))
    manifest.artifacts.append(str(out / "config.txt"))
    t0 = time.perf_counter()
    try:
        if cfg.model == "micro":
            _run_micro_outputs(cfg, out, snapshots, manifest)
        else:
            _run_macro_outputs(cfg, out, snapshots, manifest)
    except NonlocalLWRError as exc:
        manifest.status = EXIT_RUNTIME
        manifest.message = f"{type(exc).__name__}: {exc}"
        log.error("run %s failed: %s", cfg.name, exc)
    manifest.wall_time = time.perf_counter() - t0
    manifest.artifacts.append(str(out / "manifest.json"))
    manifest.write(out)
    return manifest


def _common_summary(cfg: ScenarioConfig, diag) -> dict:
    return {
        "model": cfg.model, "kernel": cfg.kernel.kind, "rho_bar": cfg.rho_bar,
        "rho_min": cfg.rho_min, "rho_sup": cfg.rho_sup,
        "vprime_max": diag.meta["vprime_max"], "rate": diag.meta["rate"],
        "L0": diag.records[0].L, "left_boundary": "constant far-field ghost rho0(x_left)",
    }


def _write_diagnostics(out: Path, diag, manifest: RunManifest) -> None:
    path = out / "diagnostics.csv"
    _write_csv(path, CSV_HEADER, diag.csv_rows())
    raw = out / "lyapunov_raw.csv"
    _write_csv(raw, ("t", "L", "L_bound", "L_tilde"),
               ((r.t, r.L, r.L_bound, r.L_tilde) for r in diag.records))
    manifest.artifacts += [str(path), str(raw)]


def _run_macro_outputs(cfg, out, snapshots, manifest):
    callback = _snapshot_writer(out / "snapshots", manifest.artifacts) if snapshots else None
    run = run_macro(cfg, snapshot_callback=callback)
    _write_diagnostics(out, run.diagnostics, manifest)
    manifest.summary = {**_common_summary(cfg, run.diagnostics), "n_steps": run.n_steps,
                        "n_cells": run.grid.n_cells, "total_mass0": run.total_mass0,
                        "tail_mass": run.weights.tail_mass,
                        "cfl_margin": run.diagnostics.meta["cfl_margin"]}


def _run_micro_outputs(cfg, out, snapshots, manifest):
    run = run_micro(cfg, keep_trajectory=snapshots)
    _write_diagnostics(out, run.diagnostics, manifest)
    events = out / "events.csv"
    rows = [("crossing", c.t, c.vehicle, c.edge, c.direction) for c in run.crossings]
    for j in run.jumps:
        vehicles = ";".join(str(c.vehicle) for c in j["crossings"])
        rows.append(("jump", j["t"], vehicles, "", "attributed" if j["crossings"] else "unattributed"))
    _write_csv(events, ("kind", "t", "vehicle", "edge", "detail"), rows)
    manifest.artifacts.append(str(events))
    if snapshots:
        path = out / "trajectory.csv"
        _write_csv(path, ("t", "i", "x", "V"),
                   ((t, i, x, v) for t, xs, vs in run.trajectory
                    for i, (x, v) in enumerate(zip(xs, vs))))
        manifest.artifacts.append(str(path))
    manifest.summary = {**_common_summary(cfg, run.diagnostics), "n_steps": run.n_steps,
                        "n_vehicles": run.n_vehicles, "min_gap": run.min_gap,
                        "n_crossings": len(run.crossings), "n_jumps": len(run.jumps),
                        "n_jumps_attributed": sum(1 for j in run.jumps if j["crossings"])}


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def parse_grid(specs: Sequence[str]) -> dict:
    """``["kernel.kind=const,lin", "grid.dx=0.01,0.005"]`` -> ``{key: [values]}``."""
    grid = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigurationError(f"grid spec must be KEY=V1,V2,...; got {spec!r}")
        key, values = spec.split("=", 1)
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigurationError(f"no values for {key!r}")
        grid[key.strip()] = vals
    return grid


def _sweep_worker(args):
    mapping, out_dir = args
    try:
        return run_scenario(mapping, out_dir)
    except ConfigurationError as exc:
        m = RunManifest(scenario=str(mapping.get("scenario", "custom")), config=dict(mapping),
                        status=EXIT_VALIDATION, message=f"ConfigurationError: {exc}")
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        m.write(Path(out_dir))
        return m


def sweep(template, grid: Mapping, out_dir: Union[str, Path], jobs: int = 1) -> list:
    """One run per point of the Cartesian product of ``grid`` over ``template``.

    Runs are isolated: a failing point yields a manifest with nonzero status.
    ``index.csv`` lists the points in grid order.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigurationError("sweep grid is empty")
    base = source_mapping(template)
    keys = list(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for n, values in enumerate(points):
        mapping = {**base, **dict(zip(keys, values))}
        mapping["scenario"] = f"{base.get('scenario', 'sweep')}-{n:03d}"
        tasks.append((mapping, str(out / f"run_{n:03d}")))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            manifests = list(pool.map(_sweep_worker, tasks))
    else:
        manifests = [_sweep_worker(t) for t in tasks]
    _write_csv(out / "index.csv", ("run", "status", "out_dir", *keys),
               ((n, m.status, tasks[n][1], *points[n]) for n, m in enumerate(manifests)))
    return manifests


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def read_diagnostics(path: Union[str, Path]) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"missing diagnostics file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigurationError(f"empty diagnostics file {path}") from None
        if tuple(header) != CSV_HEADER:
            raise ConfigurationError(f"unexpected diagnostics header {header}")
        rows = []
        for n, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise ConfigurationError(f"corrupt row in {path}", line=n)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ConfigurationError(f"non-numeric value in {path}", line=n) from None
    if not rows:
        raise ConfigurationError(f"no data rows in {path}")
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(CSV_HEADER)}


def check(target: Union[str, Path]) -> dict:
    """Audit a run directory; returns a report with ``passed`` over the hard checks.

    Hard checks (macro runs): maximum principle, mass balance, and for the
    constant kernel the decay bound and a non-increasing ``L``.  The bound for
    other kernels and every micro check are reported as soft.
    """
    out = Path(target)
    if out.is_file():
        out = out.parent
    d = read_diagnostics(out / "diagnostics.csv")
    mpath = out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.is_file() else {}
    summary = manifest.get("summary", {})
    cfg = manifest.get("config", {})
    model = cfg.get("model", summary.get("model", "macro"))
    kernel = cfg.get("kernel.kind", summary.get("kernel", "constant"))
    macro = model == "macro"
    theory = macro and kernel == "constant"
    checks = []

    def add(name, passed, hard, detail):
        checks.append({"name": name, "passed": bool(passed), "hard": bool(hard), "detail": detail})

    lnL, lnB = d["lnL"], d["lnL_bound"]
    ok = np.isfinite(lnL) & np.isfinite(lnB)
    excess = lnL[ok] - lnB[ok]
    worst = float(np.max(excess)) if excess.size else -math.inf
    add("bound_dominance", worst <= math.log1p(BOUND_REL_TOL), theory,
        {"max_lnL_minus_bound": worst, "tolerance": math.log1p(BOUND_REL_TOL)})

    if "rho_min" in summary and "rho_sup" in summary:
        under = float(summary["rho_min"] - np.min(d["rho_min_obs"]))
        over = float(np.max(d["rho_max_obs"]) - summary["rho_sup"])
        add("max_principle", under <= MAX_PRINCIPLE_TOL and over <= MAX_PRINCIPLE_TOL, macro,
            {"undershoot": under, "overshoot": over, "tolerance": MAX_PRINCIPLE_TOL})
    if macro and "total_mass0" in summary:
        worst_mass = float(np.max(np.abs(d["mass_residual"])))
        limit = MASS_REL_TOL * abs(summary["total_mass0"])
        add("mass", worst_mass <= limit, True, {"max_abs_residual": worst_mass, "limit": limit})
    if theory:
        L = np.exp(lnL)
        L = np.where(np.isnan(lnL), 0.0, L)
        rise = np.diff(L) - 1e-12 * L[:-1]
        add("monotone_L", bool(np.all(rise <= 0)),
            True, {"max_increase": float(np.max(np.diff(L))) if len(L) > 1 else 0.0})
    if not macro and summary:
        add("jumps_attributed",
            summary.get("n_jumps", 0) >= 1
            and summary.get("n_jumps_attributed", 0) == summary.get("n_jumps", 0),
            False, {"n_jumps": summary.get("n_jumps"),
                    "n_attributed": summary.get("n_jumps_attributed")})
    if manifest and manifest.get("status", 0) != 0:
        add("run_status", False, True, {"status": manifest["status"],
                                        "message": manifest.get("message", "")})

    report = {
        "directory": str(out), "scenario": manifest.get("scenario"), "model": model,
        "kernel": kernel, "checks": checks,
        "passed": all(c["passed"] for c in checks if c["hard"]),
        "warnings": [c["name"] for c in checks if not c["hard"] and not c["passed"]],
    }
    (out / "check.json").write_text(json.dumps(report, indent=2, default=_json_default))
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-lwr", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or config file")
    r.add_argument("source", help=f"preset ({', '.join(PRESETS)}) or config path")
    r.add_argument("--out", required=True)
    r.add_argument("--snapshots", action="store_true",
                   help="write per-output density snapshots (micro: trajectory.csv)")

    s = sub.add_parser("sweep", help="run a parameter grid")
    s.add_argument("template")
    s.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)

    c = sub.add_parser("check", help="audit a run directory")
    c.add_argument("target")

    w = sub.add_parser("weights", help="print the convolution weights")
    w.add_argument("kernel")
    w.add_argument("dx", type=float)
    w.add_argument("eta", type=float)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            m = run_scenario(args.source, args.out, snapshots=args.snapshots)
            print(json.dumps({"scenario": m.scenario, "status": m.status, "message": m.message,
                              "wall_time": round(m.wall_time, 3), "out": args.out}))
            return m.status
        if args.command == "sweep":
            manifests = sweep(args.template, parse_grid(args.grid), args.out, args.jobs)
            for n, m in enumerate(manifests):
                print(f"run_{n:03d} {m.scenario} status={m.status} {m.message}")
            return EXIT_OK if all(m.status == 0 for m in manifests) else EXIT_RUNTIME
        if args.command == "check":
            report = check(args.target)
            print(json.dumps(report, indent=2, default=_json_default))
            return EXIT_OK if report["passed"] else EXIT_CHECK
        if args.command == "weights":
            table = kernel_weights(Kernel.from_name(args.kernel, args.eta), args.dx)
            print("k,gamma")
            for k, g in enumerate(table.gamma):
                print(f"{k},{fmt(g)}")
            print(f"# sum={fmt(table.gamma.sum())} tail_mass={fmt(table.tail_mass)}")
            return EXIT_OK
    except ConfigurationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NonlocalLWRError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
