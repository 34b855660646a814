"""Command line entry point: solve, reconstruct, verify, export.

Exit codes: 0 success, 2 configuration error, 3 closure condition violated,
4 solver failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .body import BodyMesh, body_curvature, inequality_report, reconstruct
from .config import RunConfig, curvature_values, load_config
from .errors import (
    ClosureViolated,
    ConfigError,
    InvalidModel,
    IoError,
    MinkowskiError,
    NonPositiveField,
)
from .norms import verify_norm
from .solver import continuation_solve, enforce_ortho
from .wulff import build_mesh, closure_residual, geometry_selfcheck

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_CLOSURE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5
BODY_FILES = ("body.obj", "body.csv")


# ---------------------------------------------------------------------------
# deterministic serialisation


def _num(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON with floats written to 17 significant digits and sorted keys."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class RunResult:
    exit_code: int
    report: dict = field(default_factory=dict)
    body: Optional[BodyMesh] = None


def _clean(outdir: Path):
    for name in BODY_FILES + ("report.json",):
        try:
            (outdir / name).unlink(missing_ok=True)
        except OSError as exc:
            log.error("could not remove %s: %s", outdir / name, exc)
    shutil.rmtree(outdir / "plots", ignore_errors=True)


def export_artifacts(body: BodyMesh, report: dict, config: RunConfig, K=None, S=None) -> list:
    """Write body mesh, report and (n = 1) plot data; returns the written paths."""
    outdir = Path(config.output_dir)
    fmts = set(config.output_formats)
    written = []
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        mesh = body.mesh
        if mesh.n == 2 and "obj" in fmts:
            lines = [f"v {_num(x)} {_num(y)} {_num(z)}" for x, y, z in body.X]
            lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
            (outdir / "body.obj").write_text("\n".join(lines) + "\n")
            written.append(outdir / "body.obj")
        if mesh.n == 1 and "csv" in fmts:
            lines = [f"{_num(x)},{_num(y)}" for x, y in body.X]
            (outdir / "body.csv").write_text("\n".join(lines) + "\n")
            written.append(outdir / "body.csv")
            plots = outdir / "plots"
            plots.mkdir(exist_ok=True)
            theta = np.arctan2(mesh.p[:, 1], mesh.p[:, 0]) % (2.0 * np.pi)
            for name, head, vals in (
                ("support.csv", "theta,S", S),
                ("curvature.csv", "theta,K", K),
                ("recomputed_curvature.csv", "theta,K_recomputed", body.recomputed_K),
            ):
                if vals is None:
                    continue
                rows = [head] + [f"{_num(t)},{_num(v)}" for t, v in zip(theta, vals)]
                (plots / name).write_text("\n".join(rows) + "\n")
                written.append(plots / name)
        if "json" in fmts:
            (outdir / "report.json").write_text(dumps(report) + "\n")
            written.append(outdir / "report.json")
    except OSError as exc:
        raise IoError(f"cannot write artifacts to {str(outdir)!r}: {exc}") from exc
    return written


def _write_failure(config: RunConfig, report: dict):
    outdir = Path(config.output_dir)
    _clean(outdir)
    try:
        if "json" in config.output_formats:
            outdir.mkdir(parents=True, exist_ok=True)
            (outdir / "report.json").write_text(dumps(report) + "\n")
    except OSError as exc:
        log.error("could not write failure report: %s", exc)


def run_solve(config: RunConfig) -> RunResult:
    """Full pipeline; maps library errors onto exit codes."""
    report = {
        "status": "started",
        "config": config.as_dict(),
        "error": None,
    }

    def fail(code, status, exc, **extra):
        report.update(status=status, error=str(exc), exit_code=code, converged=False, **extra)
        log.info("%s: %s", status, exc)
        _write_failure(config, report)
        return RunResult(code, report)

    try:
        model = config.model()
        mesh = build_mesh(model, config.dimension, config.resolution)
        report["mesh"] = {"n": mesh.n, "resolution": mesh.resolution, "nodes": mesh.size,
                          "mesh_id": mesh.mesh_id, "spacing": mesh.spacing}
        K = curvature_values(config, mesh)
        if np.any(~(K > 0)):
            raise NonPositiveField("prescribed curvature must be positive at every node")
        closure = closure_residual(mesh, 1.0 / K)
        report["closure_residual"] = closure
        state, sreport = continuation_solve(mesh, mesh.field(K), config.solver_options())
        S = enforce_ortho(mesh, state.S)
        body = reconstruct(mesh, S)
        curv = body_curvature(body, model, K)
        ineq = inequality_report(mesh, S, body, K)
    except (ConfigError, InvalidModel, NonPositiveField) as exc:
        return fail(EXIT_CONFIG, "config_error", exc)
    except ClosureViolated as exc:
        return fail(EXIT_CLOSURE, "closure_violated", exc, closure_tol=exc.tolerance)
    except IoError as exc:
        return fail(EXIT_IO, "io_error", exc)
    except MinkowskiError as exc:
        extra = {}
        if getattr(exc, "report", None) is not None:
            extra["solver"] = exc.report.as_dict()
        return fail(EXIT_SOLVER, "solver_failure", exc, error_type=type(exc).__name__, **extra)

    measures = ineq.pop("measures")
    report.update(
        status="converged",
        exit_code=EXIT_OK,
        converged=sreport.converged,
        solver=sreport.as_dict(),
        final_residual=sreport.final_residual_inf,
        newton_iterations=sreport.newton_iterations_total,
        bounds={"m1": sreport.bounds[0], "m2": sreport.bounds[1]},
        diagnostic_norms=sreport.diagnostic_norms,
        roundtrip_error=curv.roundtrip_error,
        inequalities=ineq,
        measures=measures,
    )
    try:
        export_artifacts(body, report, config, K=K, S=mesh.values_of(S))
    except IoError as exc:
        return fail(EXIT_IO, "io_error", exc)
    return RunResult(EXIT_OK, report, body)


def run_verify(config: RunConfig) -> dict:
    model = config.model()
    mesh = build_mesh(model, config.dimension, config.resolution)
    return {
        "norm": verify_norm(model, 1000, 0).as_dict(),
        "geometry": geometry_selfcheck(mesh).as_dict(),
        "mesh": {"n": mesh.n, "resolution": mesh.resolution, "nodes": mesh.size, "mesh_id": mesh.mesh_id},
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="anisominkowski", description=__doc__.splitlines()[0])
    parser.add_argument("--config", required=True, help="path to a key = value config file")
    parser.add_argument("--verify-norm", action="store_true",
                        help="only check the norm contract and Wulff-shape geometry")
    parser.add_argument("--resolution-override", type=int, default=None, metavar="N",
                        help="replace mesh.resolution")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.resolution_override is not None:
            if args.resolution_override < (8 if config.dimension == 1 else 1):
                raise ConfigError([f"--resolution-override: {args.resolution_override} is too small"])
            config = config.with_resolution(args.resolution_override)
    except ConfigError as exc:
        for msg in exc.messages:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verify_norm:
        try:
            print(dumps(run_verify(config)))
        except InvalidModel as exc:
            print(f"invalid norm: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except MinkowskiError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        return EXIT_OK
    result = run_solve(config)
    if result.exit_code != EXIT_OK:
        print(f"{result.report.get('status')}: {result.report.get('error')}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
