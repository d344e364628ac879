"""Command-line front end: problem loading, solver orchestration, CSV export.

Configurations are strict JSON documents (unknown keys are errors); every
run writes long-form CSV slices plus a JSON manifest carrying the config
hash, so reruns are verifiable byte for byte.  No plotting happens here;
the column contract is documented in the README so any external plotter
can reproduce the figures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import catalog, cdf_solver, control, discrete, simulate
from .errors import ConfigError, ConvergenceError, NumericsError, PdmpError
from .model import (
    ControlSet,
    ExitSpec,
    Grid,
    ModeSpec,
    ProblemSpec,
    RateBounds,
    RateMatrix,
    ScalarField,
    VectorField,
    build_grid,
    cfl_max_ds,
)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICS = 3
EXIT_CONVERGENCE = 4


# ---------------------------------------------------------------------------
# strict config validation
# ---------------------------------------------------------------------------


def _check_keys(doc: dict, allowed: set[str], path: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys at {path}: {sorted(unknown)}")


def _need(doc: dict, key: str, path: str):
    if key not in doc:
        raise ConfigError(f"missing required key {path}.{key}")
    return doc[key]


def _scalar_field(doc: dict, path: str) -> ScalarField:
    _check_keys(doc, {"kind", "value", "values"}, path)
    kind = _need(doc, "kind", path)
    if kind == "constant":
        return ScalarField.constant(float(_need(doc, "value", path)))
    if kind == "tabulated":
        return ScalarField("tabulated", values=np.array(_need(doc, "values", path), dtype=float))
    raise ConfigError(f"unknown scalar field kind {kind!r} at {path}")


def _vector_field(doc: dict, path: str) -> VectorField:
    _check_keys(doc, {"kind", "vector", "offset", "values"}, path)
    kind = _need(doc, "kind", path)
    if kind == "constant":
        return VectorField.constant(_need(doc, "vector", path))
    if kind == "control_offset":
        return VectorField.control_offset(_need(doc, "offset", path))
    if kind == "tabulated":
        return VectorField("tabulated", values=np.array(_need(doc, "values", path), dtype=float))
    raise ConfigError(f"unknown velocity field kind {kind!r} at {path}")


def _exit_spec(doc: dict, path: str) -> ExitSpec:
    _check_keys(doc, {"kind", "faces", "boxes"}, path)
    kind = _need(doc, "kind", path)
    if kind in ("boundary", "none"):
        return ExitSpec(kind)
    if kind == "faces":
        return ExitSpec("faces", faces=tuple(_need(doc, "faces", path)))
    if kind == "boxes":
        boxes = tuple(
            tuple((float(lo), float(hi)) for lo, hi in box)
            for box in _need(doc, "boxes", path)
        )
        return ExitSpec("boxes", boxes=boxes)
    raise ConfigError(f"unknown exit set kind {kind!r} at {path}")


def _controls(doc: dict, path: str) -> ControlSet:
    _check_keys(doc, {"kind", "vectors", "n_angles"}, path)
    kind = _need(doc, "kind", path)
    if kind == "none":
        return ControlSet.none()
    if kind == "list":
        return ControlSet.from_list(_need(doc, "vectors", path))
    if kind == "unit_circle":
        return ControlSet.unit_circle(int(_need(doc, "n_angles", path)))
    raise ConfigError(f"unknown control set kind {kind!r} at {path}")


def parse_graph(doc: dict) -> "discrete.RoutedGraph":
    """Build a routed graph from a problem document with kind 'graph'."""
    path = "problem"
    _check_keys(doc, {"kind", "name", "successors", "step_costs", "exit_costs",
                      "exit_nodes", "switch_probs"}, path)
    succ = np.array(_need(doc, "successors", path), dtype=int)
    n = succ.shape[1] if succ.ndim == 2 else 0
    mask = np.zeros(n, dtype=bool)
    mask[np.array(_need(doc, "exit_nodes", path), dtype=int)] = True
    return discrete.RoutedGraph(
        successors=succ,
        step_costs=np.array(_need(doc, "step_costs", path), dtype=float),
        exit_costs=np.array(_need(doc, "exit_costs", path), dtype=float),
        exit_mask=mask,
        switch_probs=np.array(_need(doc, "switch_probs", path), dtype=float),
    )


def parse_problem(doc: dict | str, n_angles: int | None = None) -> ProblemSpec:
    """Build a ProblemSpec from a builtin name or a full problem document."""
    if isinstance(doc, str):
        return catalog.builtin(doc, n_angles=n_angles)
    path = "problem"
    _check_keys(doc, {"name", "dimension", "domain", "exit", "modes", "rates", "controls"}, path)
    dim = int(_need(doc, "dimension", path))
    dom = _need(doc, "domain", path)
    _check_keys(dom, {"lo", "hi"}, f"{path}.domain")
    modes = []
    for k, mdoc in enumerate(_need(doc, "modes", path)):
        mpath = f"{path}.modes[{k}]"
        _check_keys(mdoc, {"dynamics", "cost", "exit_cost"}, mpath)
        modes.append(ModeSpec(
            dynamics=_vector_field(_need(mdoc, "dynamics", mpath), f"{mpath}.dynamics"),
            cost=_scalar_field(_need(mdoc, "cost", mpath), f"{mpath}.cost"),
            exit_cost=_scalar_field(_need(mdoc, "exit_cost", mpath), f"{mpath}.exit_cost"),
        ))
    rdoc = _need(doc, "rates", path)
    _check_keys(rdoc, {"kind", "matrix", "lower", "upper"}, f"{path}.rates")
    rkind = _need(rdoc, "kind", f"{path}.rates")
    if rkind == "fixed":
        rates = RateMatrix(np.array(_need(rdoc, "matrix", f"{path}.rates"), dtype=float))
    elif rkind == "bounds":
        rates = RateBounds(
            np.array(_need(rdoc, "lower", f"{path}.rates"), dtype=float),
            np.array(_need(rdoc, "upper", f"{path}.rates"), dtype=float),
        )
    else:
        raise ConfigError(f"unknown rates kind {rkind!r} at {path}.rates")
    controls = _controls(doc["controls"], f"{path}.controls") if "controls" in doc else ControlSet.none()
    return ProblemSpec(
        dim=dim, lo=np.array(dom["lo"], dtype=float), hi=np.array(dom["hi"], dtype=float),
        exit_set=_exit_spec(_need(doc, "exit", path), f"{path}.exit"),
        modes=tuple(modes), rates=rates, controls=controls,
        name=str(doc.get("name", "custom")),
    )


def serialize_problem(spec: ProblemSpec) -> dict:
    """Inverse of ``parse_problem`` for full problem documents."""
    def scalar(f: ScalarField) -> dict:
        if f.kind == "constant":
            return {"kind": "constant", "value": f.value}
        return {"kind": "tabulated", "values": np.asarray(f.values).tolist()}

    def vector(f: VectorField) -> dict:
        if f.kind == "constant":
            return {"kind": "constant", "vector": f.vector.tolist()}
        if f.kind == "control_offset":
            return {"kind": "control_offset", "offset": f.vector.tolist()}
        return {"kind": "tabulated", "values": np.asarray(f.values).tolist()}

    exit_doc: dict = {"kind": spec.exit_set.kind}
    if spec.exit_set.kind == "faces":
        exit_doc["faces"] = list(spec.exit_set.faces)
    if spec.exit_set.kind == "boxes":
        exit_doc["boxes"] = [[[lo, hi] for lo, hi in box] for box in spec.exit_set.boxes]
    if spec.controls.empty:
        controls: dict = {"kind": "none"}
    elif spec.controls.kind == "unit_circle":
        controls = {"kind": "unit_circle", "n_angles": spec.controls.n_angles}
    else:
        controls = {"kind": "list", "vectors": spec.controls.vectors.tolist()}
    if spec.fixed_rates:
        rates = {"kind": "fixed", "matrix": spec.rates.off_diagonal().tolist()}
    else:
        rates = {"kind": "bounds", "lower": spec.rates.lower.tolist(),
                 "upper": spec.rates.upper.tolist()}
    return {
        "name": spec.name,
        "dimension": spec.dim,
        "domain": {"lo": spec.lo.tolist(), "hi": spec.hi.tolist()},
        "exit": exit_doc,
        "modes": [
            {"dynamics": vector(m.dynamics), "cost": scalar(m.cost),
             "exit_cost": scalar(m.exit_cost)}
            for m in spec.modes
        ],
        "rates": rates,
        "controls": controls,
    }


_NUMERICS_KEYS = {"dx", "ds", "s_max", "tau", "n_angles", "tol", "max_iter", "prob_method"}
_RUN_KEYS = {"slices", "thresholds", "threshold", "rates", "samples", "seed", "start",
             "restrict", "horizon_cap", "dump_samples"}
_OUTPUT_KEYS = {"dir", "format"}


def load_config(path_or_name: str) -> dict:
    """Read a config file, or synthesize one from a builtin problem name."""
    if path_or_name in catalog.BUILTIN_NAMES:
        return {"schema_version": SCHEMA_VERSION, "problem": path_or_name,
                "numerics": {}, "run": {}, "output": {}}
    p = Path(path_or_name)
    if not p.exists():
        raise ConfigError(f"no such problem file or builtin name: {path_or_name}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path_or_name} is not valid JSON: {exc}") from exc
    _check_keys(doc, {"schema_version", "problem", "numerics", "run", "output"}, "config")
    version = _need(doc, "schema_version", "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; this tool reads {SCHEMA_VERSION}")
    _check_keys(doc.get("numerics", {}), _NUMERICS_KEYS, "config.numerics")
    _check_keys(doc.get("run", {}), _RUN_KEYS, "config.run")
    _check_keys(doc.get("output", {}), _OUTPUT_KEYS, "config.output")
    doc.setdefault("numerics", {})
    doc.setdefault("run", {})
    doc.setdefault("output", {})
    return doc


def load_problem(path_or_name: str, overrides: dict | None = None):
    """Load, validate, and discretize a problem configuration.

    Returns (spec, grid, numerics, run, output).  Validation rejects
    non-causal step policies outright; the uniform-step inequality is
    enforced only for space-varying velocities, where the exact boundary
    capping used by the solvers is unavailable.
    """
    doc = load_config(path_or_name)
    if overrides:
        for section in ("numerics", "run", "output"):
            doc[section].update({k: v for k, v in overrides.get(section, {}).items() if v is not None})
    numerics = doc["numerics"]
    name = doc["problem"] if isinstance(doc["problem"], str) else None
    defaults = dict(catalog.DEFAULT_NUMERICS.get(name, {})) if name else {}
    merged = {**defaults, **{k: v for k, v in numerics.items() if v is not None}}
    spec = parse_problem(doc["problem"], n_angles=merged.get("n_angles"))
    for key in ("dx", "ds", "s_max"):
        if key not in merged:
            raise ConfigError(f"config.numerics.{key} is required for custom problems")
    grid = build_grid(spec, merged["dx"], merged["ds"], merged["s_max"])

    min_c = spec.min_cost_rate()
    tau = merged.get("tau")
    if tau is not None and tau * min_c < grid.ds * (1 - 1e-9):
        raise NumericsError(
            f"configured tau={tau:.6g} breaks causality: tau*minC={tau*min_c:.6g} < ds={grid.ds:.6g}"
        )
    ds_max = cfl_max_ds(spec, merged["dx"])
    exact_capping = all(m.dynamics.constant_in_space for m in spec.modes)
    if merged["ds"] > ds_max * (1 + 1e-9) and not exact_capping:
        raise NumericsError(
            f"threshold spacing ds={merged['ds']:.6g} exceeds the uniform-step limit "
            f"{ds_max:.6g} and the velocity fields are space-varying; refine ds or dx"
        )
    return spec, grid, merged, doc["run"], doc["output"]


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


class Exporter:
    """Writes long-form CSV slices plus a manifest for one run."""

    def __init__(self, out_dir: str, config_doc: dict, grid: Grid, seed=None):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.t0 = time.time()
        canonical = json.dumps(config_doc, sort_keys=True, default=str).encode()
        self.config_hash = hashlib.sha256(canonical).hexdigest()
        self.grid_desc = {
            "lo": grid.lo.tolist(), "dx": grid.dx.tolist(), "shape": list(grid.shape),
            "ds": grid.ds, "n_levels": grid.n_levels,
        }
        self.seed = seed

    def write_rows(self, name: str, header: list[str], rows) -> Path:
        path = self.dir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
        self.files.append(name)
        return path

    def finish(self, extra: dict | None = None) -> Path:
        from . import __version__
        manifest = {
            "config_sha256": self.config_hash,
            "tool_version": __version__,
            "grid": self.grid_desc,
            "seed": self.seed,
            "wall_time_s": round(time.time() - self.t0, 3),
            "files": self.files,
        }
        if extra:
            manifest.update(extra)
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return path


def _parse_slices(texts: list[str], dim: int) -> list[tuple[str, list]]:
    """Parse slice requests: 's=0.25,0.5' sheets, 'x=0.3,0.7' or 'at=0.4:0.3' curves."""
    out: list[tuple[str, list]] = []
    for text in texts:
        if "=" not in text:
            raise ConfigError(f"bad slice {text!r}; use s=..., x=..., or at=...")
        axis, _, vals = text.partition("=")
        axis = axis.strip()
        if axis == "s":
            out.append(("s", [float(v) for v in vals.split(",")]))
        elif axis == "x" and dim == 1:
            out.append(("point", [[float(v)] for v in vals.split(",")]))
        elif axis == "at":
            pts = []
            for chunk in vals.split(","):
                coords = [float(v) for v in chunk.split(":")]
                if len(coords) != dim:
                    raise ConfigError(f"slice point {chunk!r} has wrong dimension")
                pts.append(coords)
            out.append(("point", pts))
        else:
            raise ConfigError(f"bad slice axis {axis!r} for dimension {dim}")
    return out


def _field_rows(field_values, grid: Grid, slices, lo=None, hi=None):
    """Long-form rows (x[, y], mode, s, value[, lo, hi]) for requested slices."""
    rows = []
    m = field_values.shape[0]
    for kind, items in slices:
        if kind == "s":
            for s in items:
                n = int(round(s / grid.ds))
                if not 0 <= n < grid.n_levels:
                    raise ConfigError(f"slice threshold {s} is outside the grid")
                if abs(n * grid.ds - s) > 1e-9 * max(1.0, abs(s)):
                    raise ConfigError(
                        f"slice threshold {s} is not a grid level (spacing {grid.ds:.6g})")
                for i in range(m):
                    for k in range(grid.n_nodes):
                        row = [*(float(c) for c in grid.points[k]), i + 1, float(n * grid.ds),
                               float(field_values[i, n, k])]
                        if lo is not None:
                            row += [float(lo[i, n, k]), float(hi[i, n, k])]
                        rows.append(row)
        else:
            for pt in items:
                idx, wts = grid.spatial_stencil(np.atleast_2d(np.array(pt, dtype=float)))
                for i in range(m):
                    curve = np.einsum("c,nc->n", wts[:, 0], field_values[i][:, idx[:, 0]])
                    for n in range(grid.n_levels):
                        row = [*(float(c) for c in pt), i + 1, float(n * grid.ds), float(curve[n])]
                        if lo is not None:
                            lo_c = np.einsum("c,nc->n", wts[:, 0], lo[i][:, idx[:, 0]])
                            hi_c = np.einsum("c,nc->n", wts[:, 0], hi[i][:, idx[:, 0]])
                            row += [float(lo_c[n]), float(hi_c[n])]
                        rows.append(row)
    return rows


def _header(dim: int, with_bounds: bool = False, extra: list[str] | None = None) -> list[str]:
    cols = ["x", "y"][:dim] + ["mode", "s", "value"]
    if with_bounds:
        cols += ["value_lo", "value_hi"]
    return cols + (extra or [])


def _default_slices(run: dict, args, dim: int):
    texts = args.slice if args.slice else run.get("slices")
    if not texts:
        texts = ["s=0.25,0.5,0.75,1.0"] if dim >= 1 else []
    if isinstance(texts, str):
        texts = [texts]
    return _parse_slices(texts, dim)


def _workers() -> int:
    env = os.environ.get("PDMP_THREADS")
    return max(1, int(env)) if env else 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _graph_doc(args) -> dict | None:
    if args.problem in catalog.BUILTIN_NAMES:
        return None
    p = Path(args.problem)
    if not p.exists():
        return None
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError:
        return None
    prob = doc.get("problem")
    if isinstance(prob, dict) and prob.get("kind") == "graph":
        return doc
    return None


class _GraphExporter(Exporter):
    def __init__(self, out_dir, config_doc, n_nodes, n_routes, ds, n_levels, seed=None):
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        self.dir = Path(out_dir)
        self.files = []
        self.t0 = time.time()
        canonical = json.dumps(config_doc, sort_keys=True, default=str).encode()
        self.config_hash = hashlib.sha256(canonical).hexdigest()
        self.grid_desc = {"nodes": n_nodes, "routes": n_routes, "ds": ds, "n_levels": n_levels}
        self.seed = seed


def _cmd_solve_cdf(args) -> int:
    gdoc = _graph_doc(args)
    if gdoc is not None:
        g = parse_graph(gdoc["problem"])
        numerics = gdoc.get("numerics", {})
        ds = float(numerics.get("ds", 1.0))
        s_max = float(numerics.get("s_max", 10.0))
        w = discrete.solve_cdf(g, s_max=s_max, ds=ds)
        exporter = _GraphExporter(args.out, gdoc, g.n_nodes, g.n_routes, ds, w.n_levels)
        rows = [[k, i + 1, float(n * ds), float(w.values[i, n, k])]
                for k in range(g.n_nodes) for i in range(g.n_routes)
                for n in range(w.n_levels)]
        exporter.write_rows("cdf.csv", ["node", "route", "s", "value"], rows)
        exporter.finish()
        return EXIT_OK
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "solve-cdf", "problem": args.problem, "numerics": numerics, "run": run}, grid)
    restrict = None
    if run.get("restrict", True):
        restrict = cdf_solver.solve_min_cost(spec, grid)
    field = cdf_solver.solve_cdf(spec, grid, tau=numerics.get("tau"), restrict=restrict,
                                 prob_method=numerics.get("prob_method", "first_order"))
    slices = _default_slices(run, args, spec.dim)
    exporter.write_rows("cdf.csv", _header(spec.dim), _field_rows(field.values, grid, slices))
    exporter.finish()
    return EXIT_OK


def _cmd_min_cost(args) -> int:
    gdoc = _graph_doc(args)
    if gdoc is not None:
        g = parse_graph(gdoc["problem"])
        s0, w0 = discrete.solve_min_cost(g)
        exporter = _GraphExporter(args.out, gdoc, g.n_nodes, g.n_routes, 1.0, 0)
        rows = [[k, i + 1, float(s0[i, k]) if np.isfinite(s0[i, k]) else "inf",
                 float(w0[i, k])]
                for k in range(g.n_nodes) for i in range(g.n_routes)]
        exporter.write_rows("min_cost.csv", ["node", "route", "min_cost", "attain_prob"], rows)
        exporter.finish()
        return EXIT_OK
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "min-cost", "problem": args.problem, "numerics": numerics}, grid)
    mc = cdf_solver.solve_min_cost(spec, grid)
    rows = []
    for k in range(grid.n_nodes):
        for i in range(spec.n_modes):
            rows.append([*(float(c) for c in grid.points[k]), i + 1,
                         float(mc.s0[k]) if np.isfinite(mc.s0[k]) else "inf",
                         float(mc.w0[i, k])])
    exporter.write_rows("min_cost.csv", ["x", "y"][:spec.dim] + ["mode", "min_cost", "attain_prob"], rows)
    exporter.finish()
    return EXIT_OK


def _cmd_bounds(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "bounds", "problem": args.problem, "numerics": numerics, "run": run}, grid)
    restrict = None
    if run.get("restrict", True):
        restrict = bounds_mod.solve_min_cost_bounds(spec, grid)
    pair = bounds_mod.solve_bounds(spec, grid, tau=numerics.get("tau"), restrict=restrict)
    mid = 0.5 * (pair.lower.values + pair.upper.values)
    slices = _default_slices(run, args, spec.dim)
    exporter.write_rows(
        "bounds.csv", _header(spec.dim, with_bounds=True),
        _field_rows(mid, grid, slices, lo=pair.lower.values, hi=pair.upper.values))
    exporter.finish()
    return EXIT_OK


def _cmd_sweep(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "sweep", "problem": args.problem, "numerics": numerics, "run": run}, grid)
    if args.rates:
        levels = [float(v) for v in args.rates.split(",")]
    else:
        levels = run.get("rates", [1.0, 2.0, 3.0, 4.0])
    if spec.n_modes != 2:
        raise ConfigError("the rate sweep grid is defined for two-mode problems")
    rate_grid = bounds_mod.default_rate_grid(levels)
    fields = bounds_mod.fixed_rate_sweep(spec, grid, rate_grid,
                                         restrict=run.get("restrict", True),
                                         max_workers=_workers())
    slices = _default_slices(run, args, spec.dim)
    rows = []
    for rm, field in zip(rate_grid, fields):
        off = rm.off_diagonal()
        for row in _field_rows(field.values, grid, slices):
            rows.append(row + [float(off[0, 1]), float(off[1, 0]), "sample"])
    exporter.write_rows("sweep.csv", _header(spec.dim, extra=["rate_12", "rate_21", "kind"]), rows)
    exporter.finish()
    return EXIT_OK


def _cmd_hjb(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "hjb", "problem": args.problem, "numerics": numerics}, grid)
    value, policy = control.solve_hjb_expectation(
        spec, grid, tol=numerics.get("tol", 1e-8), max_iter=int(numerics.get("max_iter", 100000)))
    rows = []
    for k in range(grid.n_nodes):
        for i in range(spec.n_modes):
            rows.append([*(float(c) for c in grid.points[k]), i + 1,
                         float(value.u[i, k]), int(policy.actions[i, 0, k])])
    exporter.write_rows("expected_cost.csv", ["x", "y"][:spec.dim] + ["mode", "value", "action"], rows)
    if args.policy_out:
        control.save_policy(policy, args.policy_out)
    exporter.finish()
    return EXIT_OK


def _cmd_threshold(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    exporter = Exporter(args.out, {"cmd": "threshold", "problem": args.problem, "numerics": numerics, "run": run}, grid)
    restrict = cdf_solver.solve_min_cost(spec, grid) if run.get("restrict", False) else None
    tv = control.solve_threshold(spec, grid, tau=numerics.get("tau"), restrict=restrict,
                                 hjb_tol=numerics.get("tol", 1e-8))
    slices = _default_slices(run, args, spec.dim)
    thresholds = args.thresholds or run.get("thresholds")
    if thresholds:
        if isinstance(thresholds, str):
            thresholds = [float(v) for v in thresholds.split(",")]
        slices = slices + [("s", [float(v) for v in thresholds])]
    exporter.write_rows("threshold_cdf.csv", _header(spec.dim),
                        _field_rows(tv.w.values, grid, slices))
    # synthesized action map at the fixed-threshold slices; actions are
    # per-node labels, so only node-exact sheets are exported
    sheet_slices = [(kind, items) for kind, items in slices if kind == "s"]
    if sheet_slices:
        action_rows = [row[:-1] + [int(row[-1])]
                       for row in _field_rows(tv.actions.astype(float), grid, sheet_slices)]
        exporter.write_rows("policy_map.csv", ["x", "y"][:spec.dim] + ["mode", "s", "action"],
                            action_rows)
    policy = control.synthesize_policy(tv, spec, grid)
    if args.policy_out:
        control.save_policy(policy, args.policy_out)
    exporter.finish()
    return EXIT_OK


def _cmd_simulate(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    seed = args.seed if args.seed is not None else int(run.get("seed", 0))
    n = args.n if args.n is not None else int(run.get("samples", 10000))
    exporter = Exporter(args.out, {"cmd": "simulate", "problem": args.problem, "numerics": numerics,
                                   "run": run, "n": n, "seed": seed}, grid, seed=seed)
    policy = control.load_policy(args.policy_in) if args.policy_in else None
    threshold = args.threshold if args.threshold is not None else run.get("threshold")
    start_doc = run.get("start")
    if args.start:
        coords, mode = args.start.rsplit(":", 1)
        start = (np.array([float(v) for v in coords.split(",")]), int(mode) - 1)
    elif start_doc:
        start = (np.array(start_doc[0], dtype=float), int(start_doc[1]) - 1)
    else:
        start = (0.5 * (spec.lo + spec.hi), 0)
    batch = simulate.run_batch(spec, start, n, seed, policy=policy, threshold=threshold,
                               horizon_cap=run.get("horizon_cap"), grid=grid)
    ecdf = simulate.empirical_cdf(batch)
    rows = [[float(c), float(ecdf.evaluate(c))] for c in ecdf.costs]
    exporter.write_rows("empirical_cdf.csv", ["cost", "cdf"], rows)
    if args.dump_samples or run.get("dump_samples"):
        simulate.write_samples_csv(batch, str(Path(args.out) / "samples.csv"))
        exporter.files.append("samples.csv")
    extra = {
        "n_samples": n,
        "exited": int(batch.exited.sum()),
        "escaped": int(batch.escaped.sum()),
        "censored": int(batch.censored.sum()),
        "dkw_99": ecdf.dkw_epsilon(0.01),
    }
    if bool(batch.exited.all()):
        mean, se = simulate.estimate_mean(batch)
        extra.update({"mean": mean, "standard_error": se})
    exporter.finish(extra)
    return EXIT_OK


def _cmd_evaluate_policy(args) -> int:
    spec, grid, numerics, run, output = load_problem(args.problem, _overrides(args))
    if not args.policy_in:
        raise ConfigError("evaluate-policy requires --policy-in")
    exporter = Exporter(args.out, {"cmd": "evaluate-policy", "problem": args.problem,
                                   "numerics": numerics, "run": run}, grid)
    policy = control.load_policy(args.policy_in)
    field = control.evaluate_policy_cdf(policy, spec, grid, tau=numerics.get("tau"))
    slices = _default_slices(run, args, spec.dim)
    exporter.write_rows("policy_cdf.csv", _header(spec.dim), _field_rows(field.values, grid, slices))
    exporter.finish()
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _overrides(args) -> dict:
    return {
        "numerics": {"dx": args.dx, "ds": args.ds, "s_max": args.s_max,
                     "n_angles": getattr(args, "n_angles", None)},
        "run": {},
        "output": {},
    }


def _add_common(p: argparse.ArgumentParser, policy_io: bool = False) -> None:
    p.add_argument("--problem", required=True,
                   help="builtin name (example1..example6) or path to a JSON config")
    p.add_argument("--dx", type=float, default=None, help="spatial grid spacing")
    p.add_argument("--ds", type=float, default=None, help="cost-threshold spacing")
    p.add_argument("--s-max", dest="s_max", type=float, default=None, help="largest threshold")
    p.add_argument("--n-angles", dest="n_angles", type=int, default=None,
                   help="control directions for unit-circle control sets")
    p.add_argument("--slice", action="append", default=None,
                   help="export slice: 's=0.25,0.5', 'x=0.3' (1D) or 'at=0.4:0.3' (2D)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    if policy_io:
        p.add_argument("--policy-out", dest="policy_out", default=None,
                       help="write the synthesized policy to this file")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pdmp-cdf",
        description="Exit-cost CDFs, bounds, and threshold-optimal controls for "
                    "piecewise-deterministic Markov processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, policy_io in (
        ("solve-cdf", _cmd_solve_cdf, False),
        ("min-cost", _cmd_min_cost, False),
        ("bounds", _cmd_bounds, False),
        ("sweep", _cmd_sweep, False),
        ("hjb", _cmd_hjb, True),
        ("threshold", _cmd_threshold, True),
        ("simulate", _cmd_simulate, False),
        ("evaluate-policy", _cmd_evaluate_policy, False),
    ):
        p = sub.add_parser(name)
        _add_common(p, policy_io=policy_io)
        p.set_defaults(fn=fn)
        if name == "sweep":
            p.add_argument("--rates", default=None, help="comma list of sweep rate levels")
        if name == "threshold":
            p.add_argument("--thresholds", default=None,
                           help="comma list of deadline values to export as sheets")
        if name == "simulate":
            p.add_argument("--policy-in", dest="policy_in", default=None)
            p.add_argument("--threshold", type=float, default=None)
            p.add_argument("--n", type=int, default=None, help="sample count")
            p.add_argument("--seed", type=int, default=None)
            p.add_argument("--start", default=None, help="start as 'x[,y]:mode' (1-based mode)")
            p.add_argument("--dump-samples", dest="dump_samples", action="store_true")
        if name == "evaluate-policy":
            p.add_argument("--policy-in", dest="policy_in", default=None)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except PdmpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
