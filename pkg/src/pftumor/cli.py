"""Command line front end.

    pftumor run|sweep|check|diag [--config PATH] [--out DIR] [--stride N] [SNAPSHOT ...]

Exit codes: 0 success, 2 validation failure, 3 solver abort.
Environment: ``PFTG_OUT`` sets the output directory (``--out`` wins),
``PFTG_THREADS`` the number of FFT worker threads.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from scipy import fft

from . import diagnostics as diag
from .config import ConfigError, RunConfig, dump_config, parse_config
from .model import (GlobalTimeStatus, ModelError, Problem, check_assumptions,
                    mass_confinement_bound, precheck_global_time)
from .snapshot import SnapshotError, read_snapshot, write_snapshot
from .solver import SolverError, initial_state, run
from .sweep import REPORT_COLUMNS, GeometryError, SweepError, run_sweep, well_prepared_initial

log = logging.getLogger("pftumor")

EXIT_OK, EXIT_INVALID, EXIT_ABORT = 0, 2, 3

DIAG_COLUMNS = ("file", "t", "E", "half_sigma_l2", "mass_phi", "mass_sigma", "mass_sum",
                "disc_pos", "mu_avg", "mu_bound_rhs", "qc_measure", "w_distance",
                "phase_deviation", "stress_residual", "gt_residual")


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return "%.17g" % v


class CsvSink:
    """Append-only CSV writer that flushes every row."""

    def __init__(self, path, header):
        self.fh = open(path, "w", encoding="utf-8", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(header)
        self.fh.flush()

    def __call__(self, row):
        self.writer.writerow([fmt(v) for v in row])
        self.fh.flush()

    def close(self):
        self.fh.close()


def _initial_phi(cfg: RunConfig, spec, grid):
    phi0 = well_prepared_initial(cfg.geometry_object(), spec, grid, cfg.clearance)
    return phi0 + cfg.perturbation(grid)


def _hypotheses_ok(spec) -> bool:
    report = check_assumptions(spec)
    if not report.ok:
        print(report.format())
        print("model hypotheses fail; refusing to run", file=sys.stderr)
    return report.ok


def cmd_run(cfg: RunConfig, out: Path, stride: int) -> int:
    spec = cfg.model_spec()
    if not _hypotheses_ok(spec):
        return EXIT_INVALID
    grid = cfg.grid()
    try:
        phi0 = _initial_phi(cfg, spec, grid)
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    n_steps, dt = cfg.time_steps()
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(dump_config(cfg))
    snap_dir = out / "snapshots"
    snap_dir.mkdir(exist_ok=True)

    def save(k, state):
        write_snapshot(snap_dir / f"snap_{k:07d}.pftg", state, grid, spec.epsilon)

    sink = CsvSink(out / "trace.csv", diag.TRACE_COLUMNS)
    try:
        state = initial_state(phi0, cfg.initial_sigma, spec, grid)
        traj = run(state, spec, cfg.step_config(dt), grid, n_steps, observers=[save],
                   stride=stride or n_steps, trace_stride=cfg.trace_stride, on_record=sink)
    except SolverError as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    finally:
        sink.close()
    tr = traj.trace
    print(f"run finished: t = {tr.times[-1]:.6g}, {n_steps} steps of dt = {dt:.6g}, "
          f"grid {grid.n_x} x {grid.n_y}")
    print(f"E: {tr.energy[0]:.10g} -> {tr.energy[-1]:.10g}; "
          f"balance residual {tr.eb_residual[-1]:.3e}")
    return EXIT_OK


def _write_report(path: Path, report) -> None:
    sink = CsvSink(path, REPORT_COLUMNS)
    for row in report.as_table():
        sink(row)
    sink.close()


def cmd_sweep(cfg: RunConfig, out: Path, stride: int) -> int:
    try:
        plan = cfg.sweep_plan()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if not _hypotheses_ok(plan.spec):
        return EXIT_INVALID
    if stride:
        plan.snapshot_stride = stride
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(dump_config(cfg))
    sinks = []

    def trace_sink(eps):
        d = out / f"eps_{eps:g}"
        d.mkdir(exist_ok=True)
        sinks.append(CsvSink(d / "trace.csv", diag.TRACE_COLUMNS))
        return sinks[-1]

    code = EXIT_OK
    try:
        report = run_sweep(plan, check=False, trace_sink=trace_sink)
    except GeometryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SweepError as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        report, code = exc.partial, EXIT_ABORT
    finally:
        for s in sinks:
            s.close()
    _write_report(out / "sweep_report.csv", report)
    for (eps, (state, grid)) in report.finals.items():
        write_snapshot(out / f"eps_{eps:g}" / "final.pftg", state, grid, eps)
    print(f"sweep: {len(report.rows)} of {len(plan.epsilons)} runs complete; E0 = {report.E0:.6g}")
    if report.global_time is not None:
        print(f"global-time precheck: {report.global_time.value}, m0 = {report.m0:.6g}")
    for name, order in sorted(report.orders.items()):
        print(f"fitted order of {name} in epsilon: {order:.3f}")
    return code


def cmd_check(cfg: RunConfig) -> int:
    spec = cfg.model_spec()
    report = check_assumptions(spec)
    print(f"model: problem {spec.problem.value}, potential {spec.potential.name}, "
          f"{spec.source_function().name}, epsilon = {spec.epsilon:g}, theta = {spec.theta:.10f}")
    print(report.format())
    if spec.problem is Problem.P:
        grid = cfg.grid()
        try:
            phi0 = _initial_phi(cfg, spec, grid)
        except GeometryError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        sigma0 = cfg.initial_sigma
        E0 = diag.energy(phi0, spec, grid) + 0.5 * sigma0 ** 2 * grid.measure
        c0 = abs(grid.average(phi0))
        d0 = abs(grid.average(phi0) + sigma0)
        consts = (spec.potential.c_F, spec.potential.C_F, spec.proliferation.C_P)
        try:
            status = precheck_global_time(spec.T, E0, c0, d0, spec.omega_measure, consts)
        except ModelError as exc:
            print(f"global-time precheck not applicable: {exc}")
        else:
            m0 = mass_confinement_bound(status, spec.T, E0, c0, d0, spec.omega_measure, consts)
            print(f"global-time precheck: {status.value} (T = {spec.T:g}, E0 = {E0:.6g}, "
                  f"c0 = {c0:.6g}, d0 = {d0:.6g})"
                  + (f", m0 = {m0:.6g}" if status is not GlobalTimeStatus.NEITHER else ""))
    if not report.ok:
        names = ", ".join(r.name for r in report.failed())
        print(f"hypothesis check failed: {names}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def diagnose_snapshot(path, cfg: RunConfig) -> tuple:
    snap = read_snapshot(path)
    grid, st = snap.grid, snap.state
    spec = replace(cfg.model_spec(snap.epsilon), lengths=grid.lengths)
    E = diag.energy(st.phi, spec, grid)
    gt = math.nan
    if grid.dim == 2:
        try:
            curve = diag.extract_interface(st.phi, grid)
            gt = diag.gibbs_thomson_residual(curve, st.mu, spec.theta, grid)
        except diag.EmptyInterfaceError:
            pass
    return (str(path), st.t, E, 0.5 * grid.inner(st.sigma, st.sigma),
            grid.average(st.phi), grid.average(st.sigma), grid.average(st.phi + st.sigma),
            diag.discrepancy_positive(st.phi, spec, grid), grid.average(st.mu),
            E + math.sqrt(max(grid.dirichlet(st.mu), 0.0)), diag.qc_measure(st.phi, grid),
            diag.w_distance_to_limit(st.phi, spec, grid), diag.phase_deviation(st.phi, grid),
            diag.stress_tensor_residual(st, spec, grid), gt)


def cmd_diag(paths, cfg: RunConfig, out: Path | None) -> int:
    if not paths:
        print("error: diag needs at least one snapshot path", file=sys.stderr)
        return EXIT_INVALID
    rows = []
    for p in paths:
        try:
            rows.append(diagnose_snapshot(p, cfg))
        except (OSError, SnapshotError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    out_csv = csv.writer(sys.stdout, lineterminator="\n")
    out_csv.writerow(DIAG_COLUMNS)
    for row in rows:
        out_csv.writerow([fmt(v) for v in row])
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        sink = CsvSink(out / "diag.csv", DIAG_COLUMNS)
        for row in rows:
            sink(row)
        sink.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pftumor", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=("run", "sweep", "check", "diag"))
    ap.add_argument("snapshots", nargs="*", help="snapshot files (diag only)")
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--out", type=Path, help="output directory")
    ap.add_argument("--stride", type=int, help="snapshot stride in steps")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.snapshots and args.command != "diag":
        print("error: snapshot paths are only accepted by diag", file=sys.stderr)
        return EXIT_INVALID
    if args.stride is not None and args.stride < 0:
        print("error: --stride must be nonnegative", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    out = args.out or (Path(os.environ["PFTG_OUT"]) if os.environ.get("PFTG_OUT") else None)
    stride = args.stride if args.stride is not None else cfg.stride
    try:
        threads = int(os.environ.get("PFTG_THREADS", "1"))
    except ValueError:
        print("error: PFTG_THREADS must be an integer", file=sys.stderr)
        return EXIT_INVALID
    with fft.set_workers(max(threads, 1)):
        try:
            if args.command == "check":
                return cmd_check(cfg)
            if args.command == "diag":
                return cmd_diag(args.snapshots, cfg, out)
            out = out or Path(cfg.out_dir)
            if args.command == "run":
                return cmd_run(cfg, out, stride)
            return cmd_sweep(cfg, out, stride)
        except ModelError as exc:
            print(f"model error: {exc}", file=sys.stderr)
            return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
