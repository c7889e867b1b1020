"""Batch runner: ``leraylab run <subcommand> --config cfg.json --out dir``.

Every subcommand writes ``manifest.json`` first (config echo, code version,
measured constants with provenance), then its CSV/JSON outputs and a
``summary.json`` listing each check with its value and tolerance.

Exit codes: 0 ok, 2 check failure, 3 config error, 4 unresolved run.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from importlib import metadata
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import analysis, kernels, nse, structure
from . import fields as fl
from . import stokes as st
from .fields import Grid
from .stokes import TimeMesh

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNRESOLVED = 0, 2, 3, 4

DEFAULT_TOL = {
    "slope": 0.03,
    "decay_slope": 0.05,
    "laplace_rel": 1e-4,
    "heat_reduction": 1e-10,
    "energy_defect_stokes": 1e-5,
    "route_equivalence": 1e-6,
    "picard_tol": 1e-8,
    "lambda_slack": 0.05,
    "energy_defect": 1e-4,
    "cancellation": 1e-8,
    "volterra_rel": 1e-6,
    "phi1": 1e-2,
    "dimension": 0.05,
}


# ---------------------------------------------------------------------------
# config


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Strict):
    L: float = Field(12.0, gt=0)
    N: int = 32


class MeshConfig(_Strict):
    T: float = Field(1.0, gt=0)
    M: int = Field(40, ge=1)
    scheme: Literal["uniform", "graded"] = "uniform"


class DataConfig(_Strict):
    preset: Literal["zero", "bump", "taylor_green", "random"] = "bump"
    amplitude: float = Field(1.0, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)
    radius: float = Field(3.0, gt=0)


class VolterraConfig(_Strict):
    C: float = Field(1.0, ge=0)
    D: float = Field(1.0, ge=0)
    x_max: float = Field(1.0, gt=0)
    M: int = Field(2048, ge=8)


class DimsConfig(_Strict):
    power: float = Field(1.0, gt=0)
    n_max: int = Field(200000, ge=10)
    delta_min: float = Field(1e-4, gt=0)
    delta_max: float = Field(1e-1, gt=0)
    expected: float | None = None


class ExperimentConfig(_Strict):
    grid: GridConfig = GridConfig()
    mesh: MeshConfig = MeshConfig()
    initial_data: DataConfig = DataConfig()
    eps_ladder: list[float] = [0.4, 0.2, 0.1]
    norms: list[float] = [4.0, 6.0]
    checkpoints: list[float] = [0.25, 0.5, 1.0]
    seed: int = Field(0, ge=0, lt=2**64)
    constants_batch: int = Field(50, ge=1)
    volterra: VolterraConfig = VolterraConfig()
    dims: DimsConfig = DimsConfig()
    tolerances: dict[str, float] = {}
    output: str | None = None

    @model_validator(mode="after")
    def _preconditions(self):
        Grid(self.grid.L, self.grid.N)
        unknown = set(self.tolerances) - set(DEFAULT_TOL)
        if unknown:
            raise ValueError(f"unknown tolerance keys: {sorted(unknown)}")
        lad = self.eps_ladder
        if not lad or any(e <= 0 for e in lad):
            raise ValueError("eps_ladder must be non-empty and positive")
        if any(b >= a for a, b in zip(lad[:-1], lad[1:])):
            raise ValueError("eps_ladder must be strictly decreasing")
        if max(lad) >= self.grid.L / 4:
            raise ValueError("every eps must be below L/4")
        if any(p <= 3 for p in self.norms):
            raise ValueError("recorded L^p norms need p > 3")
        nodes = self.time_mesh().nodes
        for c in self.checkpoints:
            if not np.any(np.isclose(nodes, c, rtol=1e-9, atol=1e-12)):
                raise ValueError(f"checkpoint {c} is not a mesh node")
        if self.dims.delta_max / self.dims.delta_min < 100:
            raise ValueError("delta ladder must span at least two decades")
        return self

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, DEFAULT_TOL[key])

    def make_grid(self) -> Grid:
        return Grid(self.grid.L, self.grid.N)

    def time_mesh(self) -> TimeMesh:
        m = self.mesh
        if m.scheme == "graded":
            return TimeMesh.graded(m.T, m.M)
        return TimeMesh.uniform(m.T, m.M)

    def snap(self, t: float) -> float:
        nodes = self.time_mesh().nodes
        return float(nodes[np.argmin(np.abs(nodes - t))])


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.model_validate(json.load(fh))


def initial_data(cfg: ExperimentConfig, grid: Grid) -> np.ndarray:
    d = cfg.initial_data
    if d.preset == "zero" or d.amplitude == 0:
        return np.zeros((3,) + (grid.N,) * 3)
    if d.preset == "bump":
        return fl.bump_field(grid, d.radius, d.amplitude, d.seed)
    if d.preset == "taylor_green":
        return fl.taylor_green(grid, d.amplitude)
    rng = np.random.Generator(np.random.Philox(d.seed))
    return fl.random_solenoidal(grid, rng, amplitude=d.amplitude)


# ---------------------------------------------------------------------------
# artifacts


def _version() -> str:
    try:
        return metadata.version("leraylab")
    except metadata.PackageNotFoundError:
        from . import __version__
        return __version__


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False)
        fh.write("\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


class Artifact:
    """Per-run output directory: manifest first, then outputs, then the summary."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig):
        self.out = out
        self.command = command
        self.cfg = cfg
        self.checks = []
        self.constants = {}
        self.notes = []
        self.unresolved = False

    def manifest(self) -> dict:
        return {"command": self.command, "version": _version(),
                "config": self.cfg.model_dump(mode="json"),
                "constants": self.constants, "notes": self.notes}

    def open(self, constants: dict | None = None):
        self.out.mkdir(parents=True, exist_ok=True)
        if constants:
            self.constants.update(constants)
        write_json(self.out / "manifest.json", self.manifest())

    def check(self, name: str, value: float, tol: float, relation: str = "<=", bound: float | None = None):
        """Record ``value relation bound`` (bound defaults to ``tol``)."""
        bound = tol if bound is None else bound
        ok = {"<=": value <= bound, ">=": value >= bound, "abs<=": abs(value) <= bound}[relation]
        self.checks.append({"name": name, "value": float(value), "tolerance": float(tol),
                            "relation": relation, "bound": float(bound), "passed": bool(ok)})
        return ok

    def close(self) -> int:
        write_json(self.out / "manifest.json", self.manifest())
        passed = all(c["passed"] for c in self.checks)
        status = "unresolved" if self.unresolved else ("pass" if passed else "fail")
        write_json(self.out / "summary.json", {"command": self.command, "status": status,
                                               "checks": self.checks})
        if self.unresolved:
            return EXIT_UNRESOLVED
        return EXIT_OK if passed else EXIT_FAIL


def _constants(cfg: ExperimentConfig, grid: Grid) -> nse.MeasuredConstants:
    return nse.measure_constants(grid, seed=cfg.seed, n_fields=cfg.constants_batch,
                                 ps=tuple(cfg.norms), eps=tuple(cfg.eps_ladder))


# ---------------------------------------------------------------------------
# subcommands


def cmd_kernels(cfg: ExperimentConfig, art: Artifact) -> None:
    art.open()
    grid = cfg.make_grid()
    ts = np.geomspace(1e-2, 1.0, 9)
    rows = []
    for fam, p, expect in (("Oseen", 2, -0.75), ("GradOseen", 1, -0.5), ("Heat", 2, -0.75)):
        norms = [kernels.kernel_time_norm(fam, t, p) for t in ts]
        s = kernels.loglog_slope(ts, norms)
        art.check(f"{fam}_L{p}_slope", s - expect, cfg.tol("slope"), "abs<=")
        rows.append(("norm", fam, p, s, expect))
    for m, radii in ((0, np.geomspace(2, 20, 12)), (1, np.geomspace(20, 200, 12)),
                     (2, np.geomspace(20, 200, 12))):
        fit = kernels.potential_decay_fit(m, radii)
        art.check(f"potential_decay_m{m}", fit.exponent + (m + 1) / 2, cfg.tol("decay_slope"), "abs<=")
        rows.append(("decay", "OseenPotential", m, fit.exponent, -(m + 1) / 2))
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    x = rng.normal(size=(20, 3))
    lap = -np.trace(kernels.potential_derivative(x, 0.5, 2), axis1=-2, axis2=-1)
    rel = np.max(np.abs(lap - kernels.heat_phi(x, 0.5)) / kernels.heat_phi(x, 0.5))
    art.check("laplace_relation", rel, cfg.tol("laplace_rel"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fl.h1_seminorm(grid, fl.gaussian(grid, grid.L / 16))
    for w in caught:
        if issubclass(w.category, fl.AliasingWarning):
            art.notes.append(f"AliasingWarning: {w.message}")
    write_csv(art.out / "fits.csv", ("kind", "family", "order", "exponent", "expected"), rows)


def cmd_stokes(cfg: ExperimentConfig, art: Artifact) -> None:
    art.open()
    grid = cfg.make_grid()
    mesh = cfg.time_mesh()
    u0 = initial_data(cfg, grid)
    heat = st.stokes_solve_general(grid, u0, None, mesh)
    err = max(fl.lp_norm(grid, u - st.heat_evolve(grid, u0, float(t)), math.inf)
              for u, t in zip(heat.u, mesh.nodes))
    art.check("heat_reduction", err, cfg.tol("heat_reduction"))
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    Y = fl.random_solenoidal(grid, rng, amplitude=0.5)
    Ys = [Y] * len(mesh)
    adv = st.stokes_solve_advective(grid, u0, Ys, Ys, mesh)
    gen = st.stokes_solve_general(grid, u0, [-st.convective_term(grid, Y, Y)] * len(mesh), mesh)
    scale = max(1.0, max(fl.lp_norm(grid, u, 2) for u in adv.u))
    diff = max(fl.lp_norm(grid, a - b, 2) for a, b in zip(adv.u, gen.u)) / scale
    art.check("route_equivalence", diff, cfg.tol("route_equivalence"))
    art.check("energy_defect", st.energy_dissipation_check(adv), cfg.tol("energy_defect_stokes"))
    write_csv(art.out / "trace.csv", ("t", "l2", "h1semi", "linf"),
              zip(mesh.nodes, adv.norms("l2"), adv.norms("h1"), adv.norms("linf")))


def cmd_picard(cfg: ExperimentConfig, art: Artifact) -> None:
    grid = cfg.make_grid()
    consts = _constants(cfg, grid)
    art.open({"measured": consts.to_record()})
    u0 = initial_data(cfg, grid)
    tol = cfg.tol("picard_tol")
    traj, run = nse.picard_solve(grid, u0, consts, tol=tol, M=cfg.mesh.M)
    art.check("converged", float(run.converged), 1.0, ">=")
    art.check("lambda_observed", run.lambda_observed, cfg.tol("lambda_slack"),
              bound=1 / math.sqrt(2) + cfg.tol("lambda_slack"))
    art.check("fixed_point_residual", run.residual, tol, bound=10 * tol)
    art.check("energy_defect", run.energy_defect, cfg.tol("energy_defect"))
    write_json(art.out / "picard.json", run.to_record())
    write_csv(art.out / "trace.csv", ("t", "l2", "h1semi", "linf"),
              zip(traj.mesh.nodes, traj.norms("l2"), traj.norms("h1"), traj.norms("linf")))


def cmd_leray(cfg: ExperimentConfig, art: Artifact) -> None:
    grid = cfg.make_grid()
    consts = _constants(cfg, grid)
    art.open({"measured": consts.to_record()})
    u0 = initial_data(cfg, grid)
    mesh = cfg.time_mesh()
    for eps in cfg.eps_ladder:
        run = nse.leray_solve(grid, u0, eps, mesh)
        maj = nse.attach_majorant(run, consts)
        art.unresolved |= not run.resolved
        art.check(f"energy_defect_eps{eps}", run.max_energy_defect(), cfg.tol("energy_defect"))
        with np.errstate(invalid="ignore"):
            dom = float(np.max(run.trace.linf - maj))
        art.check(f"majorant_eps{eps}", dom, 0.0)
        art.check(f"cancellation_eps{eps}", float(run.cancellation.max()), cfg.tol("cancellation"))
        write_csv(art.out / f"trace_eps{eps}.csv", nse.FlowTrace.COLUMNS, run.trace.rows())


def cmd_sweep(cfg: ExperimentConfig, art: Artifact) -> None:
    grid = cfg.make_grid()
    consts = _constants(cfg, grid)
    art.open({"measured": consts.to_record()})
    u0 = initial_data(cfg, grid)
    mesh = cfg.time_mesh()
    cps = tuple(cfg.snap(c) for c in cfg.checkpoints)
    sweep = structure.eps_sweep(grid, u0, cfg.eps_ladder, mesh, cps)
    art.unresolved = not sweep.resolved
    if len(cfg.eps_ladder) >= 3:
        sing = structure.detect_singular_times(sweep.times, sweep.grad_traces(), sweep.ladder)
        rep = structure.strong_l2_convergence_check(sweep, cps, sing)
        for t, r in rep.items():
            art.check(f"strong_l2_t{t}", float(r["status"] != "fail"), 1.0, ">=")
        write_json(art.out / "intervals.json", sing.to_json())
        write_json(art.out / "convergence.json", {str(k): v for k, v in rep.items()})
    R1, R2 = 2.0, 4.0
    if R2 < grid.L / 2:
        for run in sweep.runs:
            for t in cps:
                art.check(f"tail_slack_eps{run.eps}_t{t}",
                          structure.tail_energy_bound_check(run, R1, R2, t), 0.0, ">=")
    for run in sweep.runs:
        write_csv(art.out / f"trace_eps{run.eps}.csv", nse.FlowTrace.COLUMNS, run.trace.rows())
    rows = [(t, i, j, sweep.distances[t][i, j]) for t in cps
            for i in range(len(sweep.ladder)) for j in range(i + 1, len(sweep.ladder))]
    write_csv(art.out / "distances.csv", ("t", "i", "j", "distance"), rows)


def cmd_volterra(cfg: ExperimentConfig, art: Artifact) -> None:
    art.open()
    v = cfg.volterra
    prob = analysis.VolterraProblem(C=v.C, D=v.D, x_max=v.x_max, M=v.M)
    x, phi = analysis.volterra_solve(prob)
    exact = analysis.volterra_closed_form(v.C, v.D, x)
    rel = float(np.max(np.abs(phi - exact) / np.abs(exact))) if v.D > 0 else float(np.max(np.abs(phi)))
    art.check("closed_form_rel", rel, cfg.tol("volterra_rel"))
    if v.C == 1 and v.D == 1 and v.x_max >= 1:
        p1 = float(np.interp(1.0, x, phi))
        art.check("phi_at_1", abs(p1 - 45.998), cfg.tol("phi1"))
    write_csv(art.out / "profile.csv", ("x", "phi", "closed_form"), zip(x, phi, exact))


def cmd_dims(cfg: ExperimentConfig, art: Artifact) -> None:
    art.open()
    d = cfg.dims
    pts = structure.power_sequence(d.power, d.n_max)
    deltas = structure.default_deltas(d.delta_min, d.delta_max)
    est = structure.box_dimension_estimate(pts, deltas)
    expected = 1.0 / (1.0 + d.power) if d.expected is None else d.expected
    art.check("dimension", est.dimension - expected, cfg.tol("dimension"), "abs<=")
    write_csv(art.out / "dims.csv", ("delta", "measure", "count"), est.rows())
    write_json(art.out / "dimension.json", dict(est.summary(), expected=expected))


COMMANDS = {
    "kernels": cmd_kernels,
    "stokes": cmd_stokes,
    "picard": cmd_picard,
    "leray": cmd_leray,
    "sweep": cmd_sweep,
    "volterra": cmd_volterra,
    "dims": cmd_dims,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leraylab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    run = sub.add_parser("run", help="run one experiment pipeline")
    run.add_argument("subcommand", choices=sorted(COMMANDS))
    run.add_argument("--config", default=None, help="JSON config (defaults when omitted)")
    run.add_argument("--out", default=None, help="output directory (overrides config 'output')")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, json.JSONDecodeError, ValidationError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output
    if out is None:
        print("config error: no output directory", file=sys.stderr)
        return EXIT_CONFIG
    art = Artifact(Path(out), args.subcommand, cfg)
    COMMANDS[args.subcommand](cfg, art)
    code = art.close()
    print(f"{args.subcommand}: exit {code} -> {out}")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
