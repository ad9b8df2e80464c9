"""Command line front end.

Subcommands: green-check, simulate, compare, bounds, optimize, reproduce.
Every run writes its artifacts into --out plus a manifest.json listing
file checksums and a pass/fail summary.  Artifacts other than the
manifest carry no timestamps and floats are written with 17 significant
digits, so identical config and seed reproduce identical bytes.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a verified bound or check failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, acceptance
from .config import ConfigError, load_config
from .estimates import (
    c_gamma,
    c_star,
    c_star_upper_bound,
    deviation_series,
    energy_identity_residual,
    flux_bound_lemma61,
    uhat_on_grid,
    verify_main_theorem,
)
from .exterior import (
    FieldTrajectory,
    NumericalFailure,
    field_h1_l2_norms,
    mass_balance_residual,
    solve_full,
    write_fields_binary,
    write_norms_csv,
)
from .matching import optimize

SCHEMA_VERSION = 1

_SOLVE_KEYS = ("model", "curve", "grid", "flux", "phibar", "initial")


# ---------------------------------------------------------------------------
# deterministic artifact helpers
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header, columns) -> None:
    """Numeric CSV with fixed column order and 17 significant digits."""
    columns = [np.asarray(c, dtype=float) for c in columns]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(columns[0].size):
            fh.write(",".join("%.17g" % c[k] for c in columns) + "\n")


def _read_csv(path) -> dict:
    """Inverse of _write_csv: column name -> float array."""
    with open(path) as fh:
        rows = [line.strip() for line in fh if line.strip()]
    names = rows[0].split(",")
    data = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    if data.size == 0:
        data = data.reshape(0, len(names))
    return {name: data[:, j] for j, name in enumerate(names)}


def _results_table(path, results) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["criterion", "title", "passed", "summary"])
        for r in results:
            writer.writerow([r.number, r.title, int(r.passed), r.summary])


def _solve_hash(cfg) -> str:
    """Hash of only the sections that determine trajectories and series."""
    sub = {k: cfg.data[k] for k in _SOLVE_KEYS}
    blob = json.dumps(sub, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _map(jobs, fn, items) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


class Run:
    """One invocation's output directory, artifact list, and manifest."""

    def __init__(self, out_dir, command, config_hash, trajectory_hash=None):
        self.out = str(out_dir)
        self.command = command
        self.config_hash = config_hash
        self.trajectory_hash = trajectory_hash
        self.files = []
        self.started = _utcnow()
        os.makedirs(self.out, exist_ok=True)

    def path(self, name) -> str:
        return os.path.join(self.out, name)

    def record(self, *names) -> None:
        for name in names:
            if name not in self.files:
                self.files.append(name)

    def finish(self, checks) -> None:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "artifact_version": __version__,
            "config_hash": self.config_hash,
            "trajectory_hash": self.trajectory_hash,
            "started": self.started,
            "finished": _utcnow(),
            "files": [{"name": name,
                       "sha256": _sha256(self.path(name)),
                       "bytes": os.path.getsize(self.path(name))}
                      for name in self.files],
            "checks": checks,
        }
        _write_json(self.path("manifest.json"), manifest)


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# shared experiment plumbing
# ---------------------------------------------------------------------------

def _load(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return None
    return load_config(args.config, overrides=args.tol_override,
                       seed=args.seed)


def _solve_from_config(cfg):
    grid = cfg.grid()
    g = cfg.data["grid"]
    traj = solve_full(grid, cfg.initial_mixture(), cfg.flux(), cfg.horizon,
                      g["n_steps"], cfg.params(),
                      stamp_every=g.get("stamp_every"))
    return grid, traj


def _model_trajectory(cfg, grid, times):
    params = cfg.params()
    fields = uhat_on_grid(grid, cfg.initial_mixture(), cfg.phibar(), params,
                          times)
    l2 = np.empty(len(times))
    h1 = np.empty(len(times))
    for k in range(len(times)):
        l2[k], h1[k] = field_h1_l2_norms(fields[k], grid)
    mass = np.sum(grid.weights * fields, axis=(1, 2))
    return FieldTrajectory(grid, params.d, np.asarray(times, dtype=float),
                           fields, l2, h1, mass)


def _series_from_solve(cfg):
    """Solve the reference trajectory and derive every per-stamp series."""
    params = cfg.params()
    grid, traj = _solve_from_config(cfg)
    disc = grid.boundary_discretization()
    u0 = cfg.initial_mixture()
    phibar = cfg.phibar()
    model = uhat_on_grid(grid, u0, phibar, params, traj.times)
    dev = deviation_series(traj, u0, phibar, disc, params,
                           model_fields=model)
    if traj.n_stamps >= 3:
        energy = energy_identity_residual(traj, cfg.flux(), u0, phibar, disc,
                                          params, model_fields=model)
        energy_times = energy.times
        energy_cols = (energy.times, energy.dt_term, energy.grad_term,
                       energy.boundary_term, energy.residual)
    else:
        energy_times = None
        energy_cols = ((), (), (), (), ())
    return {
        "times": traj.times,
        "w_l2": dev.l2,
        "w_h1": dev.h1,
        "gamma_l2": dev.gamma_l2,
        "energy_times": energy_times,
        "energy_residuals": (None if energy_times is None
                             else energy_cols[4]),
        "energy_cols": energy_cols,
    }


def _series_from_cache(out_dir, trajectory_hash):
    """Reload the per-stamp series written by an earlier matching run.

    Returns None unless the manifest in out_dir was produced for the same
    solve-determining config sections and the series files on disk still
    match their recorded checksums.
    """
    manifest_path = os.path.join(out_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if manifest.get("trajectory_hash") != trajectory_hash:
        return None
    listed = {f.get("name"): f.get("sha256")
              for f in manifest.get("files", [])}
    needed = ("deviation_series.csv", "energy_identity.csv")
    for name in needed:
        path = os.path.join(out_dir, name)
        if name not in listed or not os.path.exists(path):
            return None
        if _sha256(path) != listed[name]:
            return None
    dev = _read_csv(os.path.join(out_dir, needed[0]))
    energy = _read_csv(os.path.join(out_dir, needed[1]))
    has_energy = energy["time"].size > 0
    return {
        "times": dev["time"],
        "w_l2": dev["deviation_l2"],
        "w_h1": dev["deviation_h1"],
        "gamma_l2": dev["boundary_deviation_l2"],
        "energy_times": energy["time"] if has_energy else None,
        "energy_residuals": energy["residual"] if has_energy else None,
        "energy_cols": (energy["time"], energy["dt_term"],
                        energy["grad_term"], energy["boundary_term"],
                        energy["residual"]),
    }


def _bound_report(cfg, series):
    """Mismatch energy, its bound, and the deviation margins per stamp."""
    params = cfg.params()
    disc = cfg.grid().boundary_discretization()
    b = cfg.data["bounds"]
    flux, u0, phibar = cfg.flux(), cfg.initial_mixture(), cfg.phibar()
    times = series["times"]
    star = c_star(disc, flux, u0, phibar, times, params,
                  tau_refine=b["tau_refine"])
    bound = c_star_upper_bound(disc, flux, u0, phibar, b["p"], times, params)
    report = verify_main_theorem(
        times, series["w_l2"], series["w_h1"], series["gamma_l2"], star,
        bound, c_gamma(disc), np.asarray(b["epsilon_grid"]), params,
        tol_slack=b["tol_slack"], energy_times=series["energy_times"],
        energy_residuals=series["energy_residuals"])
    return report


def _write_series_artifacts(run, series) -> None:
    _write_csv(run.path("deviation_series.csv"),
               ["time", "deviation_l2", "deviation_h1",
                "boundary_deviation_l2"],
               [series["times"], series["w_l2"], series["w_h1"],
                series["gamma_l2"]])
    _write_csv(run.path("energy_identity.csv"),
               ["time", "dt_term", "grad_term", "boundary_term", "residual"],
               list(series["energy_cols"]))
    run.record("deviation_series.csv", "energy_identity.csv")


def _write_bound_artifacts(run, cfg, report, source) -> int:
    doc = report.to_dict()
    doc["config_hash"] = cfg.config_hash
    doc["trajectory_hash"] = _solve_hash(cfg)
    doc["trajectory_source"] = source
    _write_json(run.path("bound_report.json"), doc)
    header = ["time", "mismatch_energy", "mismatch_energy_bound"]
    columns = [report.times, report.c_star, report.c_star_bound]
    for i, eps in enumerate(report.epsilon_grid):
        header += ["l2_margin_eps%g" % eps, "h1_margin_eps%g" % eps]
        columns += [report.l2_margins[i], report.h1_margins[i]]
    header += ["best_epsilon_l2", "best_epsilon_h1"]
    columns += [report.best_epsilon_l2, report.best_epsilon_h1]
    _write_csv(run.path("bound_margins.csv"), header, columns)
    run.record("bound_report.json", "bound_margins.csv")
    checks = {"passed": report.passed,
              "bound_dominates": report.bound_dominates,
              "l2_passed": report.l2_passed,
              "h1_passed": report.h1_passed,
              "trajectory_source": source}
    run.finish(checks)
    print("trace constant %.6g, max margins: squared-norm %.4g, "
          "cumulative-gradient %.4g (allowed %.4g)"
          % (report.trace_constant, np.max(report.l2_margins),
             np.max(report.h1_margins), 1.0 + report.tol_slack))
    print("bound check %s; artifacts in %s"
          % ("passed" if report.passed else "FAILED", run.out))
    return 0 if report.passed else 4


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_green_check(args) -> int:
    cfg = _load(args, required=False)
    run = Run(args.out, "green-check", cfg.config_hash if cfg else None)
    results = _map(args.jobs, lambda fn: fn(), acceptance.ALL_CRITERIA[:3])
    for r in results:
        print(r.line)
    _results_table(run.path("green_check.csv"), results)
    _write_json(run.path("green_check.json"), {
        "schema_version": SCHEMA_VERSION,
        "all_passed": all(r.passed for r in results),
        "results": [{"number": r.number, "title": r.title,
                     "passed": r.passed, "summary": r.summary,
                     "metrics": r.metrics} for r in results]})
    run.record("green_check.csv", "green_check.json")
    run.finish({"criterion_%d" % r.number: r.passed for r in results})
    return 0 if all(r.passed for r in results) else 4


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    run = Run(args.out, "simulate", cfg.config_hash, _solve_hash(cfg))
    checks = {"completed": True}
    grid = None
    if args.which in ("full", "both"):
        grid, traj = _solve_from_config(cfg)
        write_norms_csv(traj, run.path("full_norms.csv"))
        write_fields_binary(traj, run.path("full_fields.bin"))
        run.record("full_norms.csv", "full_fields.bin",
                   "full_fields.bin.json")
        residual = float(np.max(mass_balance_residual(traj, cfg.flux(),
                                                      grid)))
        checks["mass_balance_max_residual"] = residual
        print("full solve: %d stamps to t=%.17g, final L2 %.6g, "
              "max mass-balance residual %.3g"
              % (traj.n_stamps, traj.times[-1], traj.l2[-1], residual))
    if args.which in ("model", "both"):
        if grid is None:
            grid = cfg.grid()
        model = _model_trajectory(cfg, grid, cfg.stamp_times())
        write_norms_csv(model, run.path("model_norms.csv"))
        write_fields_binary(model, run.path("model_fields.bin"))
        run.record("model_norms.csv", "model_fields.bin",
                   "model_fields.bin.json")
        print("model sampling: %d stamps to t=%.17g, final L2 %.6g"
              % (model.n_stamps, model.times[-1], model.l2[-1]))
    run.finish(checks)
    print("artifacts in %s" % run.out)
    return 0


def _cmd_compare(args) -> int:
    cfg = _load(args)
    run = Run(args.out, "compare", cfg.config_hash, _solve_hash(cfg))
    series = _series_from_solve(cfg)
    _write_series_artifacts(run, series)
    if cfg.initial_mixture().is_empty:
        stamps = series["times"]
        flux_rep = flux_bound_lemma61(
            cfg.grid().boundary_discretization(), cfg.phibar(),
            stamps[stamps > 0.0], cfg.params(),
            tau_refine=cfg.data["bounds"]["tau_refine"])
        _write_csv(run.path("flux_energy_bound.csv"),
                   ["time", "flux_energy", "flux_energy_bound"],
                   [flux_rep.times, flux_rep.lhs, flux_rep.rhs])
        run.record("flux_energy_bound.csv")
    report = _bound_report(cfg, series)
    return _write_bound_artifacts(run, cfg, report, "solved")


def _cmd_bounds(args) -> int:
    cfg = _load(args)
    trajectory_hash = _solve_hash(cfg)
    series = _series_from_cache(args.out, trajectory_hash)
    source = "cache" if series is not None else "solved"
    run = Run(args.out, "bounds", cfg.config_hash, trajectory_hash)
    if series is None:
        series = _series_from_solve(cfg)
        _write_series_artifacts(run, series)
    else:
        run.record("deviation_series.csv", "energy_identity.csv")
    print("trajectory series: %s" % source)
    report = _bound_report(cfg, series)
    return _write_bound_artifacts(run, cfg, report, source)


def _cmd_optimize(args) -> int:
    cfg = _load(args)
    try:
        problem = cfg.matching_problem()
    except ValueError as exc:
        raise ConfigError("matching: %s" % exc)
    if problem is None:
        raise ConfigError("matching: section required for optimize")
    run = Run(args.out, "optimize", cfg.config_hash)
    budget = cfg.data["matching"]["budget"]
    trace = optimize(problem, budget=budget, seed=cfg.seed)
    n_knots = problem.phibar_knots
    names = (["emission_knot_%d" % i for i in range(n_knots)]
             + ["source_weight_%d" % j
                for j in range(len(problem.v0_components))])
    with open(run.path("optimize_trace.csv"), "w") as fh:
        fh.write("evaluation,objective," + ",".join(names) + "\n")
        for k, (theta, value) in enumerate(trace.iterates):
            fh.write(("%d,%.17g," % (k, value))
                     + ",".join("%.17g" % v for v in theta) + "\n")
    values, weights = problem.split(trace.best)
    ratio = trace.best_objective / trace.baseline_objective
    _write_json(run.path("optimize_summary.json"), {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "budget": budget,
        "n_evaluations": trace.n_evaluations,
        "converged": trace.converged,
        "baseline_objective": trace.baseline_objective,
        "best_objective": trace.best_objective,
        "objective_ratio": ratio,
        "transition_timescale": trace.timescale,
        "best": {"knot_times": problem.knot_times,
                 "emission_values": values,
                 "source_weights": weights}})
    run.record("optimize_trace.csv", "optimize_summary.json")
    run.finish({"improved": bool(trace.best_objective
                                 <= trace.baseline_objective),
                "converged": trace.converged})
    print("baseline %.6g, best %.6g (ratio %.4f) after %d evaluations"
          % (trace.baseline_objective, trace.best_objective, ratio,
             trace.n_evaluations))
    print("artifacts in %s" % run.out)
    return 0


def _cmd_reproduce(args) -> int:
    cfg = _load(args, required=False)
    run = Run(args.out, "reproduce", cfg.config_hash if cfg else None)
    results = _map(args.jobs, lambda fn: fn(), acceptance.ALL_CRITERIA)
    for r in results:
        print(r.line)
    all_passed = all(r.passed for r in results)
    _results_table(run.path("acceptance_table.csv"), results)
    _write_json(run.path("acceptance_report.json"), {
        "schema_version": SCHEMA_VERSION,
        "all_passed": all_passed,
        "results": [{"number": r.number, "title": r.title,
                     "passed": r.passed, "summary": r.summary,
                     "metrics": r.metrics} for r in results]})
    run.record("acceptance_table.csv", "acceptance_report.json")
    run.finish({"criterion_%d" % r.number: r.passed for r in results})
    print("%d of %d criteria passed"
          % (sum(r.passed for r in results), len(results)))
    return 0 if all_passed else 4


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

_COMMANDS = (
    ("green-check", _cmd_green_check, False,
     "run the kernel and geometry property checks"),
    ("simulate", _cmd_simulate, True,
     "solve the full exterior problem and sample the point-source model"),
    ("compare", _cmd_compare, True,
     "solve, measure deviations, and verify the published bounds"),
    ("bounds", _cmd_bounds, True,
     "recompute the bound margins, reusing cached series when valid"),
    ("optimize", _cmd_optimize, True,
     "search emission schedules that imitate the prescribed boundary flux"),
    ("reproduce", _cmd_reproduce, False,
     "run the complete numbered verification suite"),
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointlab",
        description="Point-source reduction laboratory for exterior "
                    "diffusion problems.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, handler, needs_config, help_text in _COMMANDS:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", metavar="PATH", default=None,
                       required=needs_config,
                       help="TOML experiment file (one file, one experiment)")
        p.add_argument("--out", metavar="DIR", default="pointlab-out",
                       help="output directory (default: %(default)s)")
        p.add_argument("--jobs", metavar="N", type=int, default=1,
                       help="worker threads for independent checks")
        p.add_argument("--seed", metavar="N", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--tol-override", metavar="KEY=VAL", dest="tol_override",
                       action="append", default=[],
                       help="override a config entry by dotted path, e.g. "
                            "bounds.tol_slack=0.1 (repeatable)")
        if name == "simulate":
            p.add_argument("--which", choices=("full", "model", "both"),
                           default="both",
                           help="which trajectories to produce")
        p.set_defaults(handler=handler)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return args.handler(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
