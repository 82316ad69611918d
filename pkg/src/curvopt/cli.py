"""Batch command-line harness: mesh generation, optimization runs, benchmark tables, statistics."""

from __future__ import annotations

import argparse
import importlib
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distortion import element_quality, mesh_statistics, statistics_csv
from .fileio import MeshFormatError, read_mesh, write_mesh, write_vtk_quality
from .globalization import LineSearchConfig
from .mesh import HighOrderMesh, generate_structured_mesh
from .metric import Metric, builtin_metrics, get_metric
from .solver import (
    SPECIFIC,
    STANDARD,
    InvalidMeshError,
    SolverConfig,
    SolverResult,
    optimize,
)

EXIT_OK = 0
EXIT_UNCONVERGED = 1
EXIT_INVALID = 2

MAX_DEGREE = {2: 8, 3: 4}
DEFAULT_RESOLUTION = {2: 16, 3: 8}
DEFAULT_DEGREES = {2: [1, 2, 4, 8], 3: [1, 2, 4]}
DEFAULT_METRIC = {2: "Line", 3: "Plane"}


class InputError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    metric: str = "Line"
    dim: int = 2
    degrees: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    resolution: int = 16
    modes: list[str] = field(default_factory=lambda: [STANDARD, SPECIFIC])
    out: Path = Path("out")
    solver: dict = field(default_factory=dict)
    ls: dict = field(default_factory=dict)
    ordering: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.dim not in MAX_DEGREE:
            raise InputError(f"dimension must be 2 or 3, got {self.dim}")
        for p in self.degrees:
            if not 1 <= p <= MAX_DEGREE[self.dim]:
                raise InputError(f"degree {p} unsupported in {self.dim}D (1..{MAX_DEGREE[self.dim]})")
            if self.resolution % p:
                raise InputError(f"resolution {self.resolution} is not a multiple of degree {p}")
        for m in self.modes:
            if m not in (STANDARD, SPECIFIC):
                raise InputError(f"unknown mode {m!r}")
        for name in self.metric_names:
            resolve_metric(name, self.dim)

    @property
    def metric_names(self) -> list[str]:
        return [m.strip() for m in self.metric.split(",") if m.strip()]

    def solver_config(self, mode: str) -> SolverConfig:
        ls = LineSearchConfig(**{k: float(v) for k, v in self.ls.items()})
        kw: dict = {"mode": mode, "ls_config": ls}
        conv = {"rms_tol": float, "max_nonlinear": int, "delta": float, "linear": str, "globalization": str}
        for k, v in self.solver.items():
            if k == "mode":
                continue
            if k not in conv:
                raise InputError(f"unknown solver option {k!r}")
            kw[k] = conv[k](v)
        for k, v in self.ordering.items():
            if k not in ("spectral", "mdf"):
                raise InputError(f"unknown ordering option {k!r}")
            kw[k] = _parse_bool(v)
        return SolverConfig(**kw)


def _parse_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("on", "true", "1", "yes"):
        return True
    if s in ("off", "false", "0", "no"):
        return False
    raise InputError(f"expected on/off, got {v!r}")


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; keys may carry dotted sections."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected key = value")
        k, v = (t.strip() for t in line.split("=", 1))
        if not k:
            raise InputError(f"config line {n}: empty key")
        out[k] = v
    return out


def parse_degrees(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    try:
        return [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise InputError(f"bad degree list {text!r}") from exc


def resolve_metric(name: str, dim: int) -> Metric:
    """Builtin metric by name, or ``package.module:attribute`` (a Metric or a factory taking ``dim``)."""
    if ":" in name:
        mod, attr = name.split(":", 1)
        try:
            obj = getattr(importlib.import_module(mod), attr)
        except (ImportError, AttributeError) as exc:
            raise InputError(f"cannot import metric {name!r}: {exc}") from exc
        metric = obj if isinstance(obj, Metric) else obj(dim)
    else:
        try:
            metric = get_metric(name, dim)
        except (KeyError, ValueError) as exc:
            known = ", ".join(sorted(k for k, v in builtin_metrics().items() if v.dim == dim))
            raise InputError(f"unknown metric {name!r} for {dim}D (known: {known}, Identity)") from exc
    if metric.dim != dim:
        raise InputError(f"metric {name!r} is {metric.dim}D, mesh is {dim}D")
    return metric


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    cfg = parse_config(Path(args.config).read_text()) if getattr(args, "config", None) else {}
    spec = ExperimentSpec()
    sections: dict[str, dict] = {"solver": spec.solver, "ls": spec.ls, "ordering": spec.ordering}
    for k, v in cfg.items():
        head, _, tail = k.partition(".")
        if head in sections and tail:
            sections[head][tail] = v
        elif k in ("metric", "metric.name"):
            spec.metric = v
        elif k in ("dim", "mesh.dim"):
            spec.dim = int(v)
        elif k in ("resolution", "mesh.resolution"):
            spec.resolution = int(v)
        elif k in ("degree", "degrees", "mesh.degree", "mesh.degrees"):
            spec.degrees = parse_degrees(v)
        elif k in ("out", "output"):
            spec.out = Path(v)
        else:
            raise InputError(f"unknown config key {k!r}")
    if "dim" in cfg or "mesh.dim" in cfg or getattr(args, "dim", None) is not None:
        spec.dim = args.dim if getattr(args, "dim", None) is not None else spec.dim
        if not any(k in cfg for k in ("resolution", "mesh.resolution")):
            spec.resolution = DEFAULT_RESOLUTION.get(spec.dim, spec.resolution)
        if not any(k in cfg for k in ("degree", "degrees", "mesh.degree", "mesh.degrees")):
            spec.degrees = list(DEFAULT_DEGREES.get(spec.dim, spec.degrees))
    if getattr(args, "resolution", None) is not None:
        spec.resolution = args.resolution
    if getattr(args, "degree", None) is not None:
        spec.degrees = parse_degrees(args.degree)
    if getattr(args, "metric", None) is not None:
        spec.metric = args.metric
    elif not any(k in cfg for k in ("metric", "metric.name")):
        spec.metric = DEFAULT_METRIC[spec.dim] if spec.dim in DEFAULT_METRIC else spec.metric
    if getattr(args, "out", None) is not None:
        spec.out = Path(args.out)
    mode = getattr(args, "mode", None) or spec.solver.get("mode")
    if mode:
        spec.modes = [STANDARD, SPECIFIC] if mode == "both" else [mode]
    spec.validate()
    return spec


# -- commands ----------------------------------------------------------------------


def mesh_filename(dim: int, degree: int) -> str:
    return f"mesh_{dim}d_p{degree}.txt"


def cmd_generate(spec: ExperimentSpec, out=None) -> int:
    out = out or sys.stdout
    spec.out.mkdir(parents=True, exist_ok=True)
    for p in spec.degrees:
        mesh = generate_structured_mesh(spec.dim, spec.resolution, p)
        path = spec.out / mesh_filename(spec.dim, p)
        write_mesh(mesh, path)
        print(f"{path}: degree {p}, {mesh.n_nodes} nodes, {mesh.n_elements} elements", file=out)
    return EXIT_OK


def _run_one(mesh: HighOrderMesh, metric: Metric, spec: ExperimentSpec, mode: str, stem: Path, out) -> SolverResult:
    res = optimize(mesh, metric, spec.solver_config(mode))
    final = mesh.with_coords(res.coords)
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(final, stem.with_name(stem.name + "_optimized.txt"))
    stem.with_name(stem.name + "_trace.csv").write_text(res.stats.trace_csv())
    before = mesh_statistics(mesh, metric)
    after = mesh_statistics(final, metric)
    stem.with_name(stem.name + "_stats.csv").write_text(_stats_table(before, after))
    write_vtk_quality(mesh, metric, stem.with_name(stem.name + "_initial.vtk"))
    write_vtk_quality(final, metric, stem.with_name(stem.name + "_optimized.vtk"))
    s = res.stats
    status = "converged" if res.converged else f"NOT converged ({res.reason})"
    print(
        f"{stem.name} [{mode}] {status}: NL {s.nonlinear_iters}, LS {s.ls_iters}, MV {s.matvec_products}, "
        f"rms {res.rms_residual:.3e}, f {res.f0:.6g} -> {res.f:.6g}",
        file=out,
    )
    return res


def _stats_table(before, after) -> str:
    lines = ["state,quantity,min,max,mean,std"]
    for tag, rows in (("initial", before), ("optimized", after)):
        for r in rows:
            lines.append(f"{tag},{r.measure},{r.min:.10g},{r.max:.10g},{r.mean:.10g},{r.std:.10g}")
    return "\n".join(lines) + "\n"


def _load_mesh(path) -> HighOrderMesh:
    try:
        return read_mesh(path)
    except MeshFormatError as exc:
        raise InputError(str(exc)) from exc


def cmd_optimize(spec: ExperimentSpec, mesh_path: str | None = None, out=None) -> int:
    out = out or sys.stdout
    metric = resolve_metric(spec.metric, spec.dim)
    if mesh_path is not None:
        mesh = _load_mesh(mesh_path)
        if mesh.dim != spec.dim:
            metric = resolve_metric(spec.metric, mesh.dim)
        meshes = [(Path(mesh_path).stem, mesh)]
    else:
        meshes = [
            (f"{spec.metric}_{spec.dim}d_p{p}", generate_structured_mesh(spec.dim, spec.resolution, p))
            for p in spec.degrees
        ]
    code = EXIT_OK
    for name, mesh in meshes:
        for mode in spec.modes:
            try:
                res = _run_one(mesh, metric, spec, mode, spec.out / f"{name}_{mode}", out)
            except InvalidMeshError as exc:
                raise InputError(str(exc)) from exc
            if not res.converged:
                code = EXIT_UNCONVERGED
    return code


@dataclass
class BenchRow:
    metric: str
    degree: int
    nl: dict
    ls: dict
    mv: dict
    converged: dict

    @property
    def speedup(self) -> float | None:
        std, spec = self.mv.get(STANDARD), self.mv.get(SPECIFIC)
        if std is None or not spec:
            return None
        return std / spec


BENCH_COLUMNS = ("metric", "degree", "NL-std", "NL-spec", "LS-std", "LS-spec", "MV-std", "MV-spec", "speedup")


def bench_rows(spec: ExperimentSpec, metrics: list[str]) -> list[BenchRow]:
    rows = []
    for name in metrics:
        metric = resolve_metric(name, spec.dim)
        for p in spec.degrees:
            mesh = generate_structured_mesh(spec.dim, spec.resolution, p)
            row = BenchRow(name, p, {}, {}, {}, {})
            for mode in (STANDARD, SPECIFIC):
                try:
                    res = optimize(mesh, metric, spec.solver_config(mode))
                except Exception:  # failed cell: marked in the table
                    continue
                s = res.stats
                row.nl[mode], row.ls[mode], row.mv[mode] = s.nonlinear_iters, s.ls_iters, s.matvec_products
                row.converged[mode] = res.converged
            rows.append(row)
    return rows


def _cell(row: BenchRow, table: dict, mode: str) -> str:
    if mode not in table:
        return "failed"
    mark = "" if row.converged.get(mode) else "*"
    return f"{table[mode]}{mark}"


def bench_markdown(rows: list[BenchRow]) -> str:
    head = "| " + " | ".join(BENCH_COLUMNS) + " |"
    sep = "|" + "|".join("---" for _ in BENCH_COLUMNS) + "|"
    lines = [head, sep]
    for r in rows:
        sp_ = r.speedup
        cells = [r.metric, str(r.degree)]
        for tab in (r.nl, r.ls, r.mv):
            cells += [_cell(r, tab, STANDARD), _cell(r, tab, SPECIFIC)]
        cells.append("failed" if sp_ is None else f"{sp_:.2f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def bench_csv(rows: list[BenchRow]) -> str:
    lines = [",".join(BENCH_COLUMNS)]
    for r in rows:
        sp_ = r.speedup
        vals = [r.metric, str(r.degree)]
        for tab in (r.nl, r.ls, r.mv):
            vals += [str(tab.get(STANDARD, "failed")), str(tab.get(SPECIFIC, "failed"))]
        vals.append("failed" if sp_ is None else repr(sp_))
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def cmd_bench(spec: ExperimentSpec, out=None) -> int:
    out = out or sys.stdout
    rows = bench_rows(spec, spec.metric_names)
    spec.out.mkdir(parents=True, exist_ok=True)
    (spec.out / "bench.csv").write_text(bench_csv(rows))
    table = bench_markdown(rows)
    (spec.out / "bench.md").write_text(table)
    print(table, end="", file=out)
    ok = all(r.converged.get(m, False) for r in rows for m in (STANDARD, SPECIFIC))
    return EXIT_OK if ok else EXIT_UNCONVERGED


def cmd_stats(spec: ExperimentSpec, mesh_path: str | None, out=None) -> int:
    out = out or sys.stdout
    if mesh_path is None:
        raise InputError("stats needs --mesh")
    mesh = _load_mesh(mesh_path)
    metric = resolve_metric(spec.metric, mesh.dim)
    text = statistics_csv(mesh_statistics(mesh, metric))
    print(text, end="", file=out)
    q = element_quality(mesh, metric)
    print(f"# elements {mesh.n_elements}, min quality {q.min():.6g}, mean quality {np.mean(q):.6g}", file=out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file (solver.mode, ls.c_max, ordering.mdf, ...)")
    common.add_argument("--metric", help="builtin metric name or package.module:attribute")
    common.add_argument("--degree", help="degree list, e.g. '1,2,4,8'")
    common.add_argument("--dim", type=int, choices=(2, 3))
    common.add_argument("--resolution", type=int, help="node intervals per side")
    common.add_argument("--out", help="output directory")

    ap = argparse.ArgumentParser(prog="curvopt", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write structured meshes, one per degree")
    p = sub.add_parser("optimize", parents=[common], help="optimize meshes and write artifacts")
    p.add_argument("--mode", choices=(STANDARD, SPECIFIC, "both"))
    p.add_argument("--mesh", help="mesh file; generated from --dim/--resolution/--degree when absent")
    b = sub.add_parser("bench", parents=[common], help="standard vs specific comparison table")
    b.add_argument("--mode", choices=("both",), help=argparse.SUPPRESS)
    s = sub.add_parser("stats", parents=[common], help="quality statistics of a mesh file")
    s.add_argument("--mesh")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        spec = build_spec(args)
        if args.command == "generate":
            return cmd_generate(spec)
        if args.command == "optimize":
            return cmd_optimize(spec, args.mesh)
        if args.command == "bench":
            return cmd_bench(spec)
        return cmd_stats(spec, args.mesh)
    except (InputError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
