"""Command-line entry point: ``pharmonic <run|denoise|sweep|check>``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import math
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_checks
from .config import ConfigError, RunConfig, build_config, load_config
from .energy import total_energy_unregularized
from .flow import LinearSolveFailure, NonConvergence, run_flow
from .imaging import (decompose, field_to_chroma, image_to_field, read_ppm, recompose,
                      write_ppm)
from .mesh import build_rect_mesh, write_vtk
from .presets import initial_data
from .sphere import constraint_report

log = logging.getLogger("pharmonic")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4

SUMMARY_COLUMNS = ("axis", "value", "nx", "ny", "steps", "time", "e_diffusion", "e_pterm",
                   "e_penalty", "e_fidelity", "e_total", "unregularized", "cum_dissipation",
                   "constraint_l2", "scaled_violation", "max_modulus")
SWEEP_AXES = ("delta", "eps", "tau", "h")


class InputError(Exception):
    pass


def version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Flat ``key = value`` record of one invocation."""

    def __init__(self, command: str, cfg: RunConfig):
        self.entries: list[tuple[str, str]] = [("command", command), ("version", version_string())]
        self.entries += [(f"config.{k}", v) for k, v in cfg.items()]
        self.outputs: list[Path] = []
        self._t = time.perf_counter()

    def add(self, key, value):
        self.entries.append((key, str(value)))

    def output(self, path: Path):
        self.outputs.append(Path(path))

    def stage(self, name):
        now = time.perf_counter()
        self.add(f"wall_clock.{name}", f"{now - self._t:.3f}")
        self._t = now

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.txt"
        lines = [f"{k} = {v}" for k, v in self.entries]
        lines += [f"output = {p}" for p in self.outputs + [path]]
        path.write_text("\n".join(lines) + "\n")
        missing = [p for p in self.outputs if not p.exists()]
        if missing:
            raise OSError(f"declared outputs missing: {missing}")
        return path


def make_mesh(cfg: RunConfig):
    return build_rect_mesh(cfg.nx, cfg.ny, cfg.lx, cfg.ly)


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _solve_run(cfg: RunConfig, out_dir: Path, tag: str = "", manifest: Manifest | None = None):
    """One synthetic flow run; writes trace and snapshots, returns (mesh, result, g)."""
    mesh = make_mesh(cfg)
    u0 = initial_data(mesh, cfg.preset, cfg.n_components, seed=cfg.seed, radius=cfg.vortex_radius)
    g = u0.copy()
    snaps = []

    def snapshot(k, u):
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            path = out_dir / f"snapshot{tag}_{k:05d}.vtk"
            write_vtk(path, mesh, {"u": u}, title=f"pharmonic step {k}")
            snaps.append(path)

    snapshot(0, u0)
    result = run_flow(mesh, u0, g, cfg.solver, stop_tol=cfg.stationarity_tol, callback=snapshot)
    trace_path = out_dir / f"trace{tag}.csv"
    trace_path.write_text(result.trace.to_csv())
    final_path = out_dir / f"final{tag}.vtk"
    write_vtk(final_path, mesh, {"u": result.field}, title="pharmonic final")
    if manifest is not None:
        manifest.add(f"mesh{tag}", mesh.describe())
        for p in [trace_path, final_path, *snaps]:
            manifest.output(p)
    return mesh, result, g


def cmd_run(cfg: RunConfig, out_dir: Path) -> int:
    manifest = Manifest("run", cfg)
    mesh, result, _ = _solve_run(cfg, out_dir, manifest=manifest)
    manifest.stage("flow")
    tr = result.trace
    manifest.add("steps", len(tr) - 1)
    manifest.add("final_energy", _fmt(tr.rows[-1].energy.total))
    manifest.add("max_energy_estimate_excess", _fmt(tr.energy_estimate_excess().max()))
    manifest.write(out_dir)
    print(f"run: {len(tr) - 1} steps on {mesh.describe()}, "
          f"J {tr.rows[0].energy.total:.6g} -> {tr.rows[-1].energy.total:.6g}")
    return EXIT_OK


def cmd_denoise(cfg: RunConfig, out_dir: Path) -> int:
    if not cfg.input:
        raise ConfigError("denoise needs an input image (--input or key 'input')")
    output = Path(cfg.output) if cfg.output else out_dir / "denoised.ppm"
    cfg = cfg.replace(n_components=3)
    manifest = Manifest("denoise", cfg)
    try:
        img = read_ppm(cfg.input)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {cfg.input}: {exc}") from exc
    manifest.add("input_sha256", sha256(cfg.input))
    fallback = tuple(cfg.fallback)
    chroma = decompose(img, fallback)
    try:
        mesh, g, u0 = image_to_field(chroma)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    manifest.add("mesh", mesh.describe())
    manifest.add("fallback_pixels", chroma.fallback_count)
    manifest.stage("load")

    result = run_flow(mesh, u0, g, cfg.solver, stop_tol=cfg.stationarity_tol)
    manifest.stage("flow")
    j0 = total_energy_unregularized(mesh, u0, g, cfg.solver)
    j1 = total_energy_unregularized(mesh, result.field, g, cfg.solver)
    report = constraint_report(mesh, result.field, cfg.solver.delta)

    out_chroma = field_to_chroma(result.field, mesh, img.width, img.height, chroma.brightness, fallback)
    out_img, clamped = recompose(out_chroma)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(output, out_img)
    trace_path = out_dir / "trace.csv"
    trace_path.write_text(result.trace.to_csv())
    manifest.stage("write")
    for key, val in [("steps", len(result.trace) - 1), ("stopped_early", result.stopped_early),
                     ("initial_unregularized_J", _fmt(j0)), ("final_unregularized_J", _fmt(j1)),
                     ("constraint_l2", _fmt(report.l2_violation)), ("clamped_channels", clamped)]:
        manifest.add(key, val)
    manifest.output(output)
    manifest.output(trace_path)
    manifest.write(out_dir)
    print(f"denoise: J_p,lambda {j0:.6g} -> {j1:.6g} after {len(result.trace) - 1} steps; wrote {output}")
    return EXIT_OK


def _axis_config(cfg: RunConfig, axis: str, value: float) -> RunConfig:
    if axis == "h":
        return cfg.replace(nx=max(1, round(cfg.lx / value)), ny=max(1, round(cfg.ly / value)))
    return cfg.replace(solver=cfg.solver.replace(**{axis: value}))


def _sweep_one(args):
    cfg, axis, value, out_dir, tag = args
    mesh, result, g = _solve_run(cfg, Path(out_dir), tag)
    last = result.trace.rows[-1]
    rep = constraint_report(mesh, result.field, cfg.solver.delta)
    e = last.energy
    unreg = total_energy_unregularized(mesh, result.field, g, cfg.solver)
    row = [axis, value, cfg.nx, cfg.ny, last.step, last.time, e.diffusion, e.p_term, e.penalty,
           e.fidelity, e.total, unreg, last.cum_dissipation, rep.l2_violation,
           rep.scaled_violation, last.max_modulus]
    return row, [Path(out_dir) / f"trace{tag}.csv", Path(out_dir) / f"final{tag}.vtk"]


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def cmd_sweep(cfg: RunConfig, out_dir: Path, jobs: int = 1) -> int:
    axis, values = cfg.sweep_axis, list(cfg.sweep_values)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    if not values or any(not v > 0 for v in values):
        raise ConfigError("sweep values must be a nonempty list of positive numbers")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep values must be sorted in strictly descending order")
    manifest = Manifest("sweep", cfg)
    tasks = [(_axis_config(cfg, axis, v), axis, v, str(out_dir), f"_{axis}_{v!r}") for v in values]
    rows = []
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_sweep_one, tasks))
        else:
            results = [_sweep_one(t) for t in tasks]
    except (NonConvergence, LinearSolveFailure) as exc:
        raise type(exc)(f"sweep {axis}: {exc}") from exc
    for row, outputs in results:
        rows.append(row)
        for p in outputs:
            manifest.output(p)
    manifest.stage("runs")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    summary = out_dir / f"summary_{axis}.csv"
    summary.write_text(buf.getvalue())
    manifest.output(summary)
    print(f"sweep {axis}: {len(rows)} runs -> {summary}")
    if axis == "delta" and len(rows) >= 2:
        slope = loglog_slope([r[1] for r in rows], [r[13] for r in rows])
        manifest.add("delta_slope_constraint_l2", _fmt(slope))
        print(f"log-log slope of constraint_l2 vs delta: {slope:.4f}")
    manifest.write(out_dir)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pharmonic", description=__doc__)
    ap.add_argument("command", choices=("run", "denoise", "sweep", "check"))
    ap.add_argument("--config", help="flat key = value configuration file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a configuration key (repeatable)")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--input", help="denoise: input PPM (same as --set input=...)")
    ap.add_argument("--output", help="denoise: output PPM (same as --set output=...)")
    ap.add_argument("--axis", choices=SWEEP_AXES, help="sweep: parameter to vary")
    ap.add_argument("--values", help="sweep: comma-separated values, descending")
    ap.add_argument("--jobs", type=int, default=1, help="sweep: concurrent runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--perturb-gradient", action="store_true", help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check":
        return EXIT_OK if run_checks(perturb_gradient=args.perturb_gradient) else EXIT_FAIL

    overrides = list(args.overrides)
    for key in ("input", "output"):
        if getattr(args, key):
            overrides.append(f"{key}={getattr(args, key)}")
    if args.axis:
        overrides.append(f"sweep_axis={args.axis}")
    if args.values:
        overrides.append(f"sweep_values={args.values}")
    try:
        cfg = load_config(args.config, overrides)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            return cmd_run(cfg, out_dir)
        if args.command == "denoise":
            return cmd_denoise(cfg, out_dir)
        return cmd_sweep(cfg, out_dir, jobs=args.jobs)
    except ConfigError as exc:
        print(f"pharmonic: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergence, LinearSolveFailure) as exc:
        print(f"pharmonic: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InputError, OSError) as exc:
        print(f"pharmonic: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
