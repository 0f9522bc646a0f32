"""Experiment drivers and bit-stable output files.

Subcommands:
  conserve  -- conservation run (energy/helicity/Gauss diagnostics per step)
  compare   -- conservative scheme vs the non-conservative baseline
  converge  -- manufactured-solution refinement study
  solve     -- plain run with field dumps

Configuration is a flat ``key = value`` text file; any ``--key value``
command-line pair overrides the file.  Unknown keys are rejected.  Every run
writes a ``manifest`` copy of the resolved configuration next to its
outputs.  Exit codes: 2 config parse error, 3 step/solver failure,
4 source-validation gate failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import diagnostics, linalg, mms, vtkio
from .feec import SpaceKind, eval_curl_field, eval_div_field
from .mesh import build_structured_mesh
from .timestepper import (
    Operators,
    SimParams,
    Sources,
    StepFailure,
    initial_state,
    simulate,
)

TIMESERIES_HEADER = ("step,time,energy,hm,hc,div_b_l2,div_b_max,"
                     "res_energy,res_hm,res_hc,picard_iters,inner_iters")

EXIT_CONFIG = 2
EXIT_STEP = 3
EXIT_ORACLE = 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "conserve"
    n: int = 8
    dt: float = 1.0 / 200
    t_end: float = 1.0
    re_inv: float = 0.0
    rm_inv: float = 0.0
    coupling: float = 1.0
    picard_tol: float = 1e-10
    picard_max: int = 80
    krylov_tol: float = 1e-12
    scheme: str = "main"
    output_dir: str = "runs/out"
    dump_every: int = 0
    mesh_list: str = "4,8,16"

    def sim_params(self, scheme: str | None = None) -> SimParams:
        return SimParams(
            n=self.n, dt=self.dt, t_end=self.t_end, re_inv=self.re_inv,
            rm_inv=self.rm_inv, coupling=self.coupling,
            picard_tol=self.picard_tol, picard_max=self.picard_max,
            krylov_tol=self.krylov_tol, scheme=scheme or self.scheme)

    def meshes(self):
        try:
            out = [int(s) for s in self.mesh_list.split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"bad mesh_list {self.mesh_list!r}") from e
        if not out:
            raise ConfigError("mesh_list is empty")
        return out


_FIELD_TYPES = {f.name: f.type for f in dc_fields(RunConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    ftype = _FIELD_TYPES[key]
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from e


def parse_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Flat key = value file plus overrides; round-trips via the manifest."""
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as e:
            raise ConfigError(f"cannot read config {path!r}: {e}") from e
        for ln, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{ln}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            key = key.strip()
            values[key] = _convert(key, raw.strip())
    for key, raw in (overrides or {}).items():
        values[key] = _convert(key, raw)
    return RunConfig(**values)


def write_manifest(config: RunConfig, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        for f in dc_fields(RunConfig):
            v = getattr(config, f.name)
            if isinstance(v, float):
                fh.write(f"{f.name} = {v:.17g}\n")
            else:
                fh.write(f"{f.name} = {v}\n")


def write_timeseries(records, path: str) -> None:
    """Frozen-schema CSV, 17 significant digits, LF endings."""
    with open(path, "w", newline="\n") as fh:
        fh.write(TIMESERIES_HEADER + "\n")
        for r in records:
            row = r.as_row()
            parts = [f"{row[0]:d}"]
            parts += [f"{v:.17g}" for v in row[1:10]]
            parts += [f"{row[10]:d}", f"{row[11]:d}"]
            fh.write(",".join(parts) + "\n")


def write_fields(ops: Operators, state, path: str) -> None:
    """VTK dump: vertex-averaged velocity vectors, cell-constant B."""
    mesh = ops.mesh
    corners = np.eye(4)
    u_at_corners = eval_curl_field(state.u, corners)  # (T, 4, 3)
    u_vert = np.zeros((mesh.num_vertices, 3))
    count = np.zeros(mesh.num_vertices)
    np.add.at(u_vert, mesh.tets.ravel(), u_at_corners.reshape(-1, 3))
    np.add.at(count, mesh.tets.ravel(), 1.0)
    u_vert /= count[:, None]

    center = np.full((1, 4), 0.25)
    if state.B.space.kind is SpaceKind.DIV:
        b_cell = eval_div_field(state.B, center)[:, 0, :]
    else:
        b_cell = eval_curl_field(state.B, center)[:, 0, :]
    vtkio.write_vtk(mesh, path, point_vectors={"u": u_vert},
                    cell_vectors={"B": b_cell})


# ---------------------------------------------------------------------------
# Initial data: counter-rotating vortex pair with a matched planar field
# (divergence-free, tangential-velocity / normal-flux free on the cube,
#  and with vanishing initial magnetic and cross helicity)
# ---------------------------------------------------------------------------

def vortex_velocity(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        -np.sin(np.pi * (x - 0.5)) * np.cos(np.pi * (y - 0.5)) * z * (z - 1.0),
        np.cos(np.pi * (x - 0.5)) * np.sin(np.pi * (y - 0.5)) * z * (z - 1.0),
        np.zeros_like(x)], axis=-1)


def vortex_magnetic(p):
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        -np.sin(np.pi * x) * np.cos(np.pi * y),
        np.cos(np.pi * x) * np.sin(np.pi * y),
        np.zeros_like(x)], axis=-1)


# ---------------------------------------------------------------------------
# Experiment drivers
# ---------------------------------------------------------------------------

def _run_timeseries(ops: Operators, params: SimParams, config: RunConfig,
                    csv_path: str, sources: Sources | None = None,
                    dump_prefix: str | None = None):
    state0 = initial_state(ops, params, vortex_velocity, vortex_magnetic)
    records = []
    prev = None
    prev_hm = None
    for state in simulate(ops, params, state0, sources):
        rec, prev_hm = diagnostics.compute_record(
            ops, state, params, prev, sources=sources, prev_hm=prev_hm)
        records.append(rec)
        prev = state
        if (dump_prefix and config.dump_every
                and state.step % config.dump_every == 0):
            write_fields(ops, state,
                         f"{dump_prefix}_{state.step:06d}.vtk")
    write_timeseries(records, csv_path)
    return records


def run_conserve(config: RunConfig) -> int:
    ops = Operators(build_structured_mesh(config.n))
    params = config.sim_params(scheme="main")
    out = config.output_dir
    prefix = os.path.join(out, "fields") if config.dump_every else None
    _run_timeseries(ops, params, config,
                    os.path.join(out, "timeseries.csv"), dump_prefix=prefix)
    return 0


def run_compare(config: RunConfig) -> int:
    ops = Operators(build_structured_mesh(config.n))
    out = config.output_dir
    _run_timeseries(ops, config.sim_params(scheme="main"), config,
                    os.path.join(out, "timeseries_main.csv"))
    _run_timeseries(ops, config.sim_params(scheme="reference"), config,
                    os.path.join(out, "timeseries_reference.csv"))
    return 0


def run_converge(config: RunConfig) -> int:
    exact = mms.ExactSolution(re_inv=config.re_inv, rm_inv=config.rm_inv,
                              coupling=config.coupling)
    report = mms.validate_sources(exact, samples=50)
    if not report.passed:
        print(f"source validation failed: momentum "
              f"{report.max_momentum_residual:.3e}, induction "
              f"{report.max_induction_residual:.3e}", file=sys.stderr)
        return EXIT_ORACLE
    table = mms.run_convergence(
        config.meshes(), config.sim_params(scheme="main"), exact,
        validate=False,
        progress=lambda n, eb, eu, ep: print(
            f"n={n}: err_b={eb:.6e} err_u={eu:.6e} err_p={ep:.6e}"))
    table.write_csv(os.path.join(config.output_dir, "convergence.csv"))
    return 0


def run_solve(config: RunConfig) -> int:
    ops = Operators(build_structured_mesh(config.n))
    params = config.sim_params()
    out = config.output_dir
    prefix = os.path.join(out, "fields")
    state0 = initial_state(ops, params, vortex_velocity, vortex_magnetic)
    records = []
    prev = None
    prev_hm = None
    final = state0
    for state in simulate(ops, params, state0):
        rec, prev_hm = diagnostics.compute_record(
            ops, state, params, prev, prev_hm=prev_hm)
        records.append(rec)
        prev = state
        final = state
        if config.dump_every and state.step % config.dump_every == 0:
            write_fields(ops, state, f"{prefix}_{state.step:06d}.vtk")
    write_timeseries(records, os.path.join(out, "timeseries.csv"))
    write_fields(ops, final, os.path.join(out, "fields_final.vtk"))
    return 0


_DRIVERS = {
    "conserve": run_conserve,
    "compare": run_compare,
    "converge": run_converge,
    "solve": run_solve,
}


def run_experiment(config: RunConfig) -> int:
    os.makedirs(config.output_dir, exist_ok=True)
    write_manifest(config, os.path.join(config.output_dir, "manifest"))
    try:
        return _DRIVERS[config.experiment](config)
    except (StepFailure, linalg.SolverFailure) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_STEP


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhd",
        description="Structure-preserving incompressible MHD experiments")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in _DRIVERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value file")
        for f in dc_fields(RunConfig):
            if f.name == "experiment":
                continue
            p.add_argument(f"--{f.name}", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name)
                 for f in dc_fields(RunConfig)
                 if f.name != "experiment" and getattr(args, f.name) is not None}
    try:
        config = parse_config(args.config, overrides)
        config.experiment = args.experiment
        if args.experiment == "converge":
            config.meshes()  # fail fast on a malformed list
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
