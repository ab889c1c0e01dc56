"""Command-line entry point: ``treereach {reach,oracle,compare} CONFIG``.

``CONFIG`` is a TOML problem file (see :mod:`treereach.models`) or the name of
a built-in problem. Outputs go to ``--out``, else ``$REACH_OUT_DIR``, else
``./reach-out``. Every file starts with a schema header line. The report JSON
is deterministic; wall-clock timings are written to ``timings.json``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from treereach import geometry, oracle_fd, tree
from treereach.errors import (CapabilityError, CapacityError, ConfigError, ConsistencyError,
                              DegenerateHullError, InputError, NumericError)
from treereach.geometry import SCHEMA
from treereach.models import BUILTIN_NAMES, ProblemSpec, builtin, problem_from_dict

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("treereach")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
DEFAULT_OUT = "reach-out"


@dataclass
class RunReport:
    """Everything a run measured, minus wall-clock timings."""

    command: str
    config: dict
    tolerances: dict = field(default_factory=dict)
    tree: dict | None = None
    oracle: dict | None = None
    comparison: dict | None = None
    schema_version: str = SCHEMA

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite(x: float):
    """JSON has no infinity; encode it as a string."""
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def load_problem(source: str) -> ProblemSpec:
    path = Path(source)
    if not path.exists() and source in BUILTIN_NAMES:
        return builtin(source)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config {source!r} not found (built-ins: {', '.join(BUILTIN_NAMES)})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    return problem_from_dict(raw)


def _apply_flags(problem: ProblemSpec, args) -> ProblemSpec:
    changes = {}
    if getattr(args, "seed_count", None) is not None:
        changes["n0"] = args.seed_count
    if getattr(args, "input_count", None) is not None:
        changes["n_u"] = args.input_count
    if getattr(args, "eps", None) is not None:
        changes["eps"] = args.eps
    opts = problem.tree
    if getattr(args, "keep_levels", False):
        opts = replace(opts, keep_levels=True)
    if getattr(args, "threads", None):
        opts = replace(opts, workers=args.threads)
    changes["tree"] = opts
    return replace(problem, **changes)


def _header(fh, kind: str):
    fh.write(f"# schema: {SCHEMA} {kind}\n")


def _write_nodes(levels: list[tree.TreeLevel], path: Path):
    dim = levels[-1].dim
    with path.open("w", newline="") as fh:
        _header(fh, "tree-nodes")
        w = csv.writer(fh)
        w.writerow(["level", "t"] + [f"x{i + 1}" for i in range(dim)]
                   + ["value", "parent", "input_index"])
        for lvl in levels:
            for i in range(len(lvl)):
                node = lvl.node(i)
                w.writerow([lvl.k, lvl.t] + node.state.tolist() + [
                    "" if node.value is None else node.value,
                    "" if node.parent is None else node.parent,
                    "" if node.input_index is None else node.input_index,
                ])


def _write_metrics(run: tree.ReachRun, path: Path):
    with path.open("w", newline="") as fh:
        _header(fh, "node-growth")
        w = csv.writer(fh)
        w.writerow(["k", "t", "nodes", "candidates", "hull_measure"])
        measures = run.hull_measures or [""] * run.n_levels
        for k in range(run.n_levels):
            w.writerow([k, run.times[k], run.counts[k], run.candidate_counts[k], measures[k]])


def _write_timings(path: Path, **timings):
    path.write_text(json.dumps(dict(timings, schema_version=SCHEMA), indent=2, sort_keys=True) + "\n")


def run_tree(problem: ProblemSpec, algorithm: str = "tree-pruned") -> tuple[tree.ReachRun, geometry.Hull | None]:
    """Run a tree algorithm; returns the run and the hull of the reported set."""
    f = problem.flow_field()
    inputs = problem.input_grid()
    if algorithm == "tree-pruned":
        run = tree.run_algorithm2(f, problem.terminal_set, inputs, problem.stepper,
                                  problem.horizon, problem.n0, problem.tree)
        return run, run.final_hull
    if algorithm == "tree-full":
        run = tree.run_algorithm1(f, problem.terminal_set, inputs, problem.stepper,
                                  problem.horizon, problem.n0, problem.eps,
                                  u_set=problem.input_set,
                                  g=problem.terminal_level_fn("quadratic"), options=problem.tree)
        try:
            hull = tree.value_sublevel_hull(run.final, 0.0)
        except DegenerateHullError:
            hull = None
        return run, hull
    raise ConfigError(f"unknown algorithm {algorithm!r}")


def run_oracle(problem: ProblemSpec) -> oracle_fd.GridField:
    if problem.oracle is None:
        raise ConfigError("problem has no [oracle] grid")
    o = problem.oracle
    return oracle_fd.solve(o.grid, problem.terminal_level_fn(o.level_fn), problem.flow_field(),
                           problem.input_grid(), problem.horizon, u_set=problem.input_set,
                           cfl=o.cfl, order=o.order, dissipation=o.dissipation)


def _tree_section(run: tree.ReachRun, hull, algorithm: str) -> dict:
    return {
        "algorithm": algorithm,
        "levels": run.n_levels - 1,
        "node_counts": run.counts,
        "candidate_counts": run.candidate_counts,
        "max_level_count": max(run.counts),
        "final_level_count": run.counts[-1],
        "level_hull_measures": run.hull_measures,
        "degenerate_levels": run.degenerate_levels,
        "final_hull_measure": 0.0 if hull is None else geometry.hull_measure(hull),
        "final_hull_vertices": 0 if hull is None else int(len(hull.vertex_indices)),
    }


def _tolerances(problem: ProblemSpec, algorithm: str | None) -> dict:
    tol = {
        "tree": problem.tree.to_dict(),
        "hull_dedup_rel": geometry.DEDUP_REL,
        "eps": _finite(problem.eps),
        "stepper": {"scheme": problem.stepper.scheme, "dt": problem.stepper.dt},
        "steps": tree.num_steps(problem.horizon, problem.stepper.dt),
        "input_points": problem.input_grid().points.tolist(),
        "seed_mode": "filled" if algorithm == "tree-full" else "boundary",
    }
    return tol


def _emit_tree(run, hull, out: Path):
    _write_nodes(run.levels, out / "nodes.csv")
    if hull is not None:
        geometry.write_hull_csv(hull, out / "hull_vertices.csv", out / "hull_facets.csv")
    _write_metrics(run, out / "metrics.csv")


def cmd_reach(problem: ProblemSpec, out: Path, algorithm: str) -> RunReport:
    run, hull = run_tree(problem, algorithm)
    _emit_tree(run, hull, out)
    report = RunReport("reach", problem.to_config(), _tolerances(problem, algorithm),
                       tree=_tree_section(run, hull, algorithm))
    _write_timings(out / "timings.json", tree_level_wall_ms=run.wall_ms,
                   tree_total_ms=float(sum(run.wall_ms)))
    return report


def _oracle_section(field: oracle_fd.GridField, contour: oracle_fd.Contour) -> dict:
    return {
        "sublevel_measure": oracle_fd.sublevel_measure(field),
        "grid": field.spec.to_config(),
        "time": field.time,
        "contour_empty": contour.empty,
        "meta": field.meta,
    }


def _emit_oracle(field, out: Path) -> oracle_fd.Contour:
    contour = oracle_fd.zero_contour(field)
    oracle_fd.write_field_csv(field, out / "field.csv")
    oracle_fd.write_contour(contour, out / ("contour.csv" if field.spec.dim == 2 else "contour.obj"))
    return contour


def cmd_oracle(problem: ProblemSpec, out: Path) -> RunReport:
    t0 = time.perf_counter()
    field = run_oracle(problem)
    ms = 1e3 * (time.perf_counter() - t0)
    contour = _emit_oracle(field, out)
    report = RunReport("oracle", problem.to_config(), {"oracle": problem.oracle.to_config()},
                       oracle=_oracle_section(field, contour))
    _write_timings(out / "timings.json", oracle_ms=ms)
    return report


def _write_overlay(hull, contour: oracle_fd.Contour, path: Path):
    """Tree hull boundary and oracle contour as one table in state coordinates."""
    with path.open("w", newline="") as fh:
        _header(fh, "overlay")
        w = csv.writer(fh)
        dim = contour.dim
        w.writerow(["source", "part"] + [f"x{i + 1}" for i in range(dim)])
        if hull is not None:
            verts = hull.vertices
            if dim == 2:
                verts = np.vstack([verts, verts[:1]])
            for row in verts.tolist():
                w.writerow(["tree-hull", 0] + row)
        if dim == 2:
            for i, line in enumerate(contour.polylines):
                for row in line.tolist():
                    w.writerow(["oracle-contour", i] + row)
        elif not contour.empty:
            for row in contour.vertices.tolist():
                w.writerow(["oracle-contour", 0] + row)


def cmd_compare(problem: ProblemSpec, out: Path, algorithm: str = "tree-pruned") -> RunReport:
    run, hull = run_tree(problem, algorithm)
    _emit_tree(run, hull, out)
    t0 = time.perf_counter()
    field = run_oracle(problem)
    oracle_ms = 1e3 * (time.perf_counter() - t0)
    contour = _emit_oracle(field, out)
    _write_overlay(hull, contour, out / "overlay.csv")
    tree_sec = _tree_section(run, hull, algorithm)
    oracle_sec = _oracle_section(field, contour)
    t_m, o_m = tree_sec["final_hull_measure"], oracle_sec["sublevel_measure"]
    comparison = {
        "tree_measure": t_m,
        "oracle_measure": o_m,
        "ratio_tree_over_oracle": t_m / o_m if o_m > 0 else None,
        "relative_difference": abs(t_m - o_m) / o_m if o_m > 0 else None,
    }
    tol = _tolerances(problem, algorithm)
    tol["oracle"] = problem.oracle.to_config()
    report = RunReport("compare", problem.to_config(), tol, tree=tree_sec,
                       oracle=oracle_sec, comparison=comparison)
    _write_timings(out / "timings.json", tree_level_wall_ms=run.wall_ms,
                   tree_total_ms=float(sum(run.wall_ms)), oracle_ms=oracle_ms)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treereach", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, hlp in (("reach", "tree-based backward reachable set"),
                      ("oracle", "grid level-set reference solution"),
                      ("compare", "run both and compare measures")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("config", help=f"TOML file or built-in name ({', '.join(BUILTIN_NAMES)})")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--threads", type=int, default=None, help="cap on worker threads")
        if name != "oracle":
            s.add_argument("--algorithm", choices=("tree-pruned", "tree-full"), default="tree-pruned")
            s.add_argument("--eps", type=float, default=None,
                           help="tree-full: drop nodes with value below -eps")
            s.add_argument("--keep-levels", action="store_true",
                           help="keep and write every level, not just the last")
            s.add_argument("--seed-count", type=int, default=None, help="override n0")
            s.add_argument("--input-count", type=int, default=None, help="override n_u")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    out = args.out or Path(os.environ.get("REACH_OUT_DIR", DEFAULT_OUT))
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        problem = _apply_flags(load_problem(args.config), args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "reach":
            report = cmd_reach(problem, out, args.algorithm)
        elif args.command == "oracle":
            report = cmd_oracle(problem, out)
        else:
            report = cmd_compare(problem, out, args.algorithm)
        (out / "report.json").write_text(report.to_json())
    except (ConfigError, InputError, CapabilityError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (NumericError, ConsistencyError, CapacityError, DegenerateHullError) as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    summary = {"report": str(out / "report.json")}
    if report.tree:
        summary["tree_measure"] = report.tree["final_hull_measure"]
        summary["final_level_count"] = report.tree["final_level_count"]
    if report.oracle:
        summary["oracle_measure"] = report.oracle["sublevel_measure"]
    print(json.dumps(summary))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
