"""Command-line pipeline: ``plan``, ``path``, ``analyze`` and ``mesh-info``.

Exit codes: 0 success, 2 usage, 3 input, 4 solver, 5 internal. Every error
is reported on one line as ``error[<kind>]: <message>``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analysis, diffops, pipeline
from .config import ConfigError, PlannerConfig, load_config
from .diffops import DegenerateGradientError
from .energy import GougeError
from .estimator import make_boundary_condition
from .field import FieldFileError, ScalarField
from .isocurve import verify_topology
from .mesh import MeshError, load_mesh
from .optimize import SolverError, best_scale, solve, solve_laplacian_baseline

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SOLVER, EXIT_INTERNAL = 0, 2, 3, 4, 5

log = logging.getLogger("isolevel")


class CliError(Exception):
    def __init__(self, kind: str, code: int, message: str):
        super().__init__(message)
        self.kind, self.code = kind, code


def usage(msg):
    return CliError("usage", EXIT_USAGE, msg)


def input_error(msg):
    return CliError("input", EXIT_INPUT, msg)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise usage(message)


# -- helpers ---------------------------------------------------------------------

def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _write(out: Path, name: str, text: str, written: dict) -> None:
    p = out / name
    p.write_text(text, encoding="utf-8")
    written[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()


def _namespace(kind: str, *parts) -> str:
    h = hashlib.sha256(_dump_json(list(parts)).encode("utf-8")).hexdigest()
    return f"{kind}-{h[:12]}"


def _manifest(command, inputs, config, mode, out, outputs, deterministic, extra=None) -> str:
    doc = {
        "tool": "isolevel",
        "version": __version__,
        "command": command,
        "inputs": inputs,
        "config": config,
        "mode": mode,
        "output_dir": out.name,
        "outputs": outputs,
        "deterministic": deterministic,
        "created": None if deterministic else _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    if extra:
        doc.update(extra)
    return _dump_json(doc)


def _load_mesh(path):
    p = Path(path)
    if not p.is_file():
        raise input_error(f"mesh file not found: {path}")
    try:
        return load_mesh(p)
    except MeshError as exc:
        raise input_error(f"{path}: {exc}") from None


_CLI_KEYS = {
    "kappa_c": float,
    "h": float,
    "lam": float,
    "chord_tol": float,
    "eps_g": float,
    "max_outer": int,
    "max_inner": int,
    "grad_tol": float,
    "barrier_mu0": float,
    "barrier_shrink": float,
    "clearance": float,
    "feed": float,
}


def _add_config_flags(p: argparse.ArgumentParser, keys) -> None:
    p.add_argument("--config", help="YAML or JSON config file (flags override it)")
    for k in keys:
        p.add_argument("--" + k.replace("_", "-"), dest=k, type=_CLI_KEYS[k], default=None)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    g.add_argument("--no-deterministic", dest="deterministic", action="store_false")


def _config(args, base: dict | None = None, keys=_CLI_KEYS) -> PlannerConfig:
    data = dict(base or {})
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise input_error(f"config file not found: {args.config}")
        try:
            data.update(load_config(args.config))
        except ConfigError as exc:
            raise usage(str(exc)) from None
        except Exception as exc:  # yaml/json syntax errors
            raise usage(f"{args.config}: unreadable config ({exc.__class__.__name__})") from None
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            data[k] = v
    if getattr(args, "deterministic", None) is not None:
        data["deterministic_reduction"] = args.deterministic
    try:
        return PlannerConfig.from_dict(data)
    except ConfigError as exc:
        raise usage(str(exc)) from None


def _load_field(path) -> ScalarField:
    p = Path(path)
    if not p.is_file():
        raise input_error(f"field file not found: {path}")
    try:
        return ScalarField.load(p)
    except FieldFileError as exc:
        raise input_error(str(exc)) from None


def _field_mesh(field: ScalarField, mesh_arg):
    path = mesh_arg or field.meta.get("mesh_path")
    if not path:
        raise usage("field has no recorded mesh path; pass --mesh")
    mesh = _load_mesh(path)
    try:
        field.check_mesh(mesh)
    except FieldFileError as exc:
        raise input_error(str(exc)) from None
    return mesh, path


# -- commands ---------------------------------------------------------------------

def cmd_plan(args) -> int:
    cfg = _config(args)
    mesh = _load_mesh(args.mesh)
    if args.mode == "contour" and mesh.is_closed:
        raise usage("contour mode requires boundary")
    span = tuple(args.span) if args.span else None
    try:
        if args.mode == "direction" and not mesh.boundary_loops:
            raise usage("direction mode requires boundary")
        axis = args.seed_axis if (args.mode == "direction" and span is None and args.loop is None) else None
        bc = make_boundary_condition(mesh, args.mode, args.loop or 0, span, axis, args.seed_side)
    except MeshError as exc:
        raise usage(str(exc)) from None
    if args.baseline:
        phi = solve_laplacian_baseline(mesh, bc)
        curv = diffops.curvature_tensor(mesh)
        scale = best_scale(mesh, phi, cfg.kappa_c, curv)
        phi = scale * phi
        report = {"kind": "laplacian", "scale": scale}
    else:
        phi, rep = solve(mesh, bc, cfg)
        report = rep.to_dict(deterministic=cfg.deterministic_reduction)
        if not rep.converged:
            print(f"warning: solver stopped with status {rep.status!r}", file=sys.stderr)
            if args.strict:
                raise CliError("solver", EXIT_SOLVER, f"solver did not converge (status {rep.status})")
    meta = {
        "mesh_path": str(args.mesh),
        "mode": args.mode,
        "seed": bc.seed.tolist(),
        "config": cfg.to_dict(),
        "kind": "laplacian" if args.baseline else "optimized",
    }
    field = ScalarField.on(mesh, phi, **meta)
    name = _namespace("plan", mesh.checksum(), cfg.to_dict(), args.mode, bc.seed.tolist(), bool(args.baseline))
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    _write(out, "field.json", _dump_json(field.to_dict()), written)
    _write(out, "report.json", _dump_json(report), written)
    if not args.baseline:
        _write(out, "trace.csv", rep.trace_csv(), written)
    inputs = {"mesh": {"path": str(args.mesh), "sha256": _sha256_file(Path(args.mesh)), "checksum": mesh.checksum()}}
    extra = {"checksums": {"field": field.checksum()}}
    (out / "manifest.json").write_text(
        _manifest("plan", inputs, cfg.to_dict(), args.mode, out, written, cfg.deterministic_reduction, extra), encoding="utf-8"
    )
    print(out)
    return EXIT_OK


def cmd_path(args) -> int:
    field = _load_field(args.field)
    base = dict(field.meta.get("config", {}))
    cfg = _config(args, base)
    if args.h is not None and not args.h > 0:
        raise usage(f"invalid value for 'h': {args.h!r}")
    mesh, mesh_path = _field_mesh(field, args.mesh)
    mode = field.meta.get("mode", "direction")
    phi = np.asarray(field.values)
    try:
        if args.schedule == "adaptive":
            sched = pipeline.schedule_adaptive(mesh, phi, diffops.curvature_tensor(mesh), cfg.h, cfg.kappa_c, mode=mode)
        else:
            sched = pipeline.schedule_iso_scallop(phi, cfg.h, mode)
    except pipeline.ScheduleError as exc:
        raise CliError("solver", EXIT_SOLVER, str(exc)) from None
    snapshot = cfg.to_dict()
    tp = pipeline.build_toolpath(mesh, phi, sched, cfg.chord_tol, snapshot, field.checksum())
    topo = verify_topology(tp.raw, mesh, phi)
    name = _namespace("path", field.checksum(), snapshot, args.schedule)
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    _write(out, "toolpath.json", pipeline.toolpath_json(tp), written)
    _write(out, "toolpath.csv", pipeline.toolpath_csv(tp), written)
    _write(out, "toolpath.gcode", pipeline.toolpath_gcode(tp), written)
    _write(out, "schedule.json", _dump_json(sched.to_dict()), written)
    _write(out, "topology.json", _dump_json(topo.to_dict()), written)
    summary = {
        "n_curves": len(tp.curves),
        "n_points": tp.n_points(),
        "n_points_raw": sum(len(c) for c in tp.raw),
        "max_chord_error": tp.max_chord_error(),
        "chord_tol": cfg.chord_tol,
        "curves": tp.metadata(),
    }
    _write(out, "summary.json", _dump_json(summary), written)
    inputs = {
        "field": {"path": str(args.field), "sha256": _sha256_file(Path(args.field))},
        "mesh": {"path": str(mesh_path), "checksum": mesh.checksum()},
    }
    extra = {"checksums": {"field": field.checksum(), "schedule": written["schedule.json"], "path": written["toolpath.json"]}}
    (out / "manifest.json").write_text(
        _manifest("path", inputs, snapshot, mode, out, written, cfg.deterministic_reduction, extra), encoding="utf-8"
    )
    if not topo.ok:
        print(f"warning: {len(topo.violations)} topology violation(s), see topology.json", file=sys.stderr)
    print(out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    field = _load_field(args.field)
    cfg = _config(args, dict(field.meta.get("config", {})))
    mesh, mesh_path = _field_mesh(field, args.mesh)
    tp_path = Path(args.path)
    if tp_path.is_dir():
        tp_path = tp_path / "toolpath.json"
    if not tp_path.is_file():
        raise input_error(f"tool-path file not found: {args.path}")
    try:
        tp = pipeline.load_toolpath_json(tp_path)
    except (ValueError, KeyError) as exc:
        raise input_error(f"{tp_path}: {exc}") from None
    if tp.schedule.field_checksum != field.checksum():
        raise input_error("tool path was planned on a different field (checksum mismatch)")
    phi = np.asarray(field.values)
    curv = diffops.curvature_tensor(mesh)
    dev = analysis.deviation_stats(mesh, phi, cfg.kappa_c, curv)
    kap = analysis.curvature_stats(mesh, phi, tp, curv)
    oracle = _oracle_spot_checks(mesh, tp, cfg.cutter_radius, args.oracle_pairs)
    name = _namespace("analyze", field.checksum(), _sha256_file(tp_path), cfg.to_dict(), bool(args.baseline), args.oracle_pairs)
    out = Path(args.out) / name
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    _write(out, "deviation.json", _dump_json(dev.to_dict()), written)
    _write(out, "deviation_hist.csv", dev.histogram_csv(), written)
    _write(out, "curvature.json", _dump_json(kap.to_dict()), written)
    _write(out, "curvature_hist.csv", kap.histogram_csv(), written)
    _write(out, "oracle.json", _dump_json(oracle), written)
    if args.baseline:
        mode = field.meta.get("mode", "contour")
        seed = field.meta.get("seed")
        from .optimize import BoundaryCondition

        bc = BoundaryCondition(np.asarray(seed), mode) if seed else make_boundary_condition(mesh, mode)
        base = solve_laplacian_baseline(mesh, bc)
        base = best_scale(mesh, base, cfg.kappa_c, curv) * base
        bsched = pipeline.schedule_iso_scallop(base, cfg.h, mode)
        btp = pipeline.build_toolpath(mesh, base, bsched, cfg.chord_tol)
        bdev = analysis.deviation_stats(mesh, base, cfg.kappa_c, curv)
        bkap = analysis.curvature_stats(mesh, base, btp, curv)
        cmp_ = analysis.compare_fields([("field", dev, kap), ("laplacian", bdev, bkap)])
        _write(out, "comparison.json", cmp_.to_json(), written)
        _write(out, "comparison.csv", cmp_.table_csv(), written)
    inputs = {
        "field": {"path": str(args.field), "sha256": _sha256_file(Path(args.field))},
        "path": {"path": str(tp_path), "sha256": _sha256_file(tp_path)},
        "mesh": {"path": str(mesh_path), "checksum": mesh.checksum()},
    }
    (out / "manifest.json").write_text(
        _manifest("analyze", inputs, cfg.to_dict(), field.meta.get("mode"), out, written, cfg.deterministic_reduction),
        encoding="utf-8",
    )
    s = dev.summary()
    print(f"frac(delta>5%)={s['frac_gt_5pct']:.4f} median={s['median']:.4f}")
    print(out)
    return EXIT_OK


def _oracle_spot_checks(mesh, tp, radius, k) -> dict:
    """Scallop oracle on ``k`` evenly spaced pairs of neighbouring curves."""
    by_level = {}
    for c in tp.curves:
        by_level.setdefault(c.level, []).append(c)
    levels = sorted(by_level)
    pairs = []
    for a, b in zip(levels[:-1], levels[1:]):
        if len(by_level[a]) == 1 and len(by_level[b]) == 1:
            pairs.append((by_level[a][0], by_level[b][0]))
    if k <= 0 or not pairs:
        return {"pairs": []}
    pick = np.unique(np.linspace(0, len(pairs) - 1, min(k, len(pairs))).round().astype(int))
    query = analysis._SurfaceQuery(mesh)
    res = []
    for i in pick.tolist():
        ca, cb = pairs[i]
        o = analysis.scallop_oracle(mesh, ca, cb, radius, samples=50, query=query)
        res.append({"levels": [ca.level, cb.level], "h": tp.schedule.h, **o.summary()})
    return {"pairs": res}


def cmd_mesh_info(args) -> int:
    mesh = _load_mesh(args.mesh)
    V = mesh.vertices
    info = {
        "path": str(args.mesh),
        "vertices": mesh.n_vertices,
        "faces": mesh.n_faces,
        "edges": mesh.n_edges,
        "euler_characteristic": mesh.euler_characteristic,
        "closed": mesh.is_closed,
        "boundary_loops": [len(b) for b in mesh.boundary_loops],
        "total_area": mesh.total_area,
        "mean_edge_length": mesh.mean_edge_length(),
        "bbox": [V.min(axis=0).tolist(), V.max(axis=0).tolist()],
        "checksum": mesh.checksum(),
    }
    sys.stdout.write(_dump_json(info))
    return EXIT_OK


# -- entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="isolevel", description="Iso-scallop / smooth tool paths from optimised scalar fields.")
    p.add_argument("--version", action="version", version=f"isolevel {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    pl = sub.add_parser("plan", help="solve the scalar field")
    pl.add_argument("mesh")
    pl.add_argument("--mode", choices=["direction", "contour"], default="direction")
    pl.add_argument("--loop", type=int, default=None, help="boundary loop holding the seed (direction mode)")
    pl.add_argument("--span", type=int, nargs=2, metavar=("I", "J"), help="seed = loop positions I..J")
    pl.add_argument("--seed-axis", choices=["x", "y", "z"], default="x", help="default seed: boundary at an axis extreme")
    pl.add_argument("--seed-side", choices=["min", "max"], default="min")
    pl.add_argument("--baseline", action="store_true", help="harmonic baseline field instead of the optimised one")
    pl.add_argument("--strict", action="store_true", help="exit 4 unless the solver converged")
    pl.add_argument("--out", default="runs")
    _add_config_flags(pl, list(_CLI_KEYS))
    pl.set_defaults(func=cmd_plan)

    pa = sub.add_parser("path", help="schedule, extract, simplify and export tool paths")
    pa.add_argument("field")
    pa.add_argument("--mesh")
    pa.add_argument("--schedule", choices=["iso-scallop", "adaptive"], default="iso-scallop")
    pa.add_argument("--out", default="runs")
    _add_config_flags(pa, list(_CLI_KEYS))
    pa.set_defaults(func=cmd_path)

    an = sub.add_parser("analyze", help="deviation / curvature statistics and scallop spot checks")
    an.add_argument("field")
    an.add_argument("path", help="toolpath.json or the path output directory")
    an.add_argument("--mesh")
    an.add_argument("--baseline", action="store_true", help="compare with the harmonic baseline")
    an.add_argument("--oracle-pairs", type=int, default=3)
    an.add_argument("--out", default="runs")
    _add_config_flags(an, list(_CLI_KEYS))
    an.set_defaults(func=cmd_analyze)

    mi = sub.add_parser("mesh-info", help="mesh statistics as JSON")
    mi.add_argument("mesh")
    mi.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None) -> int:
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise usage("a command is required (plan, path, analyze, mesh-info)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except CliError as exc:
        _fail(exc.kind, str(exc))
        return exc.code
    except (SolverError, DegenerateGradientError, GougeError) as exc:
        _fail("solver", str(exc))
        return EXIT_SOLVER
    except (MeshError, FieldFileError, OSError) as exc:
        _fail("input", str(exc))
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - last resort
        _fail("internal", f"{exc.__class__.__name__}: {exc}")
        return EXIT_INTERNAL


def _fail(kind: str, msg: str) -> None:
    line = " ".join(str(msg).split())
    print(f"error[{kind}]: {line}", file=sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
