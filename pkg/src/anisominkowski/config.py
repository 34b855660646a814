"""Run configuration: flat ``key = value`` text with ``#`` comments.

Recognised keys (defaults in parentheses)::

    norm.family         euclidean | quadratic | quartic     (euclidean)
    norm.matrix         row-major comma-separated SPD matrix (quadratic only)
    norm.delta          quartic perturbation weight           (quartic only)
    mesh.dimension      1 or 2                                (1)
    mesh.resolution     node count (n=1) or subdivision level (256 / 3)
    curvature.source    constant | file | body                (constant)
    curvature.constant  positive value                        (1.0)
    curvature.file      CSV of ``node_index,K_value`` lines
    curvature.body      ellipse (n=1) | ellipsoid (n=2)
    curvature.semi_axes comma-separated positive semi-axes
    solver.tol          (1e-9)
    solver.max_newton   (50)
    solver.closure_tol  (1e-6 * int(1/K) dmu)
    solver.t_step_init  (0.25)
    output.dir          (output)
    output.formats      subset of obj,csv,json                (obj,csv,json)
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, InvalidModel, IoError
from .norms import NormModel
from .solver import SolverOptions
from .wulff import WulffMesh

KEYS = (
    "norm.family", "norm.matrix", "norm.delta",
    "mesh.dimension", "mesh.resolution",
    "curvature.source", "curvature.constant", "curvature.file", "curvature.body", "curvature.semi_axes",
    "solver.tol", "solver.max_newton", "solver.closure_tol", "solver.t_step_init",
    "output.dir", "output.formats",
)
SOURCES = ("constant", "file", "body")
BODIES = {"ellipse": 1, "ellipsoid": 2}
FORMATS = ("obj", "csv", "json")
DEFAULT_RESOLUTION = {1: 256, 2: 3}


@dataclass(frozen=True)
class RunConfig:
    norm_family: str = "euclidean"
    norm_matrix: Optional[Tuple[Tuple[float, ...], ...]] = None
    norm_delta: Optional[float] = None
    dimension: int = 1
    resolution: int = 256
    curvature_source: str = "constant"
    curvature_constant: float = 1.0
    curvature_file: Optional[str] = None
    curvature_body: Optional[str] = None
    semi_axes: Optional[Tuple[float, ...]] = None
    tol: float = 1e-9
    max_newton: int = 50
    closure_tol: Optional[float] = None
    t_step_init: float = 0.25
    output_dir: str = "output"
    output_formats: Tuple[str, ...] = FORMATS

    def model(self) -> NormModel:
        dim = self.dimension + 1
        if self.norm_family == "euclidean":
            return NormModel.euclidean(dim)
        if self.norm_family == "quadratic":
            return NormModel.quadratic(np.array(self.norm_matrix, dtype=float))
        return NormModel.quartic(self.norm_delta, dim)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(
            tol=self.tol, max_newton=self.max_newton,
            closure_tol=self.closure_tol, t_step_init=self.t_step_init,
        )

    def with_resolution(self, resolution: int) -> "RunConfig":
        d = asdict(self)
        d["resolution"] = int(resolution)
        return RunConfig(**d)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["output_formats"] = list(self.output_formats)
        if self.norm_matrix is not None:
            d["norm_matrix"] = [list(r) for r in self.norm_matrix]
        if self.semi_axes is not None:
            d["semi_axes"] = list(self.semi_axes)
        return d


def parse_pairs(text: str):
    """Split config text into an ordered list of (line, key, value)."""
    pairs, errors = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((lineno, key, value))
    return pairs, errors


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def validate_config(raw: str, base_dir: Optional[str] = None) -> RunConfig:
    """Parse and validate config text; every violation is reported at once."""
    pairs, errors = parse_pairs(raw)
    values = {}
    for lineno, key, value in pairs:
        if key not in KEYS:
            errors.append(f"line {lineno}: unknown key {key!r}")
        elif key in values:
            errors.append(f"line {lineno}: duplicate key {key!r}")
        else:
            values[key] = value
    out = {}

    def number(key, kind, positive=True):
        if key not in values:
            return None
        try:
            v = kind(values[key])
        except ValueError:
            errors.append(f"{key}: cannot parse {values[key]!r} as {kind.__name__}")
            return None
        if positive and not v > 0:
            errors.append(f"{key}: must be positive, got {values[key]}")
            return None
        return v

    family = values.get("norm.family", "euclidean")
    if family not in ("euclidean", "quadratic", "quartic"):
        errors.append(f"norm.family: unknown family {family!r}")
    out["norm_family"] = family

    dim = number("mesh.dimension", int)
    if dim is not None and dim not in (1, 2):
        errors.append(f"mesh.dimension: must be 1 or 2, got {dim}")
        dim = None
    dim = dim or 1
    out["dimension"] = dim
    res = number("mesh.resolution", int)
    if res is not None and ((dim == 1 and res < 8) or (dim == 2 and not 1 <= res <= 7)):
        errors.append(f"mesh.resolution: {res} is out of range for mesh.dimension = {dim}")
    out["resolution"] = res or DEFAULT_RESOLUTION[dim]

    if family == "quadratic":
        if "norm.matrix" not in values:
            errors.append("norm.matrix: required when norm.family = quadratic")
        else:
            try:
                flat = _floats(values["norm.matrix"])
            except ValueError:
                errors.append(f"norm.matrix: cannot parse {values['norm.matrix']!r}")
                flat = None
            d = dim + 1
            if flat is not None and len(flat) != d * d:
                errors.append(f"norm.matrix: expected {d * d} entries for a {d}x{d} matrix, got {len(flat)}")
            elif flat is not None:
                out["norm_matrix"] = tuple(tuple(flat[i * d:(i + 1) * d]) for i in range(d))
    elif "norm.matrix" in values:
        errors.append("norm.matrix: only valid when norm.family = quadratic")
    if family == "quartic":
        if "norm.delta" not in values:
            errors.append("norm.delta: required when norm.family = quartic")
        else:
            delta = number("norm.delta", float, positive=False)
            if delta is not None and delta < 0:
                errors.append(f"norm.delta: must be >= 0, got {delta}")
            elif delta is not None:
                out["norm_delta"] = delta
    elif "norm.delta" in values:
        errors.append("norm.delta: only valid when norm.family = quartic")

    source = values.get("curvature.source", "constant")
    if source not in SOURCES:
        errors.append(f"curvature.source: must be one of {', '.join(SOURCES)}, got {source!r}")
    out["curvature_source"] = source
    owner = {"curvature.constant": "constant", "curvature.file": "file",
             "curvature.body": "body", "curvature.semi_axes": "body"}
    for key, src in owner.items():
        if key in values and source in SOURCES and src != source:
            errors.append(f"{key}: set while curvature.source = {source}")
    c = number("curvature.constant", float)
    if c is not None:
        out["curvature_constant"] = c
    if source == "file":
        path = values.get("curvature.file")
        if path is None:
            errors.append("curvature.file: required when curvature.source = file")
        else:
            full = Path(base_dir or ".") / path if not os.path.isabs(path) else Path(path)
            if not full.is_file():
                errors.append(f"curvature.file: no such file {str(full)!r}")
            out["curvature_file"] = str(full)
    if source == "body":
        body = values.get("curvature.body")
        if body is None:
            errors.append("curvature.body: required when curvature.source = body")
        elif body not in BODIES:
            errors.append(f"curvature.body: unknown body {body!r} (ellipse, ellipsoid)")
        elif BODIES[body] != dim:
            errors.append(f"curvature.body: {body} needs mesh.dimension = {BODIES[body]}")
        out["curvature_body"] = body
        if "curvature.semi_axes" not in values:
            errors.append("curvature.semi_axes: required when curvature.source = body")
        else:
            try:
                axes = _floats(values["curvature.semi_axes"])
            except ValueError:
                axes = None
                errors.append(f"curvature.semi_axes: cannot parse {values['curvature.semi_axes']!r}")
            if axes is not None and (len(axes) != dim + 1 or min(axes) <= 0):
                errors.append(f"curvature.semi_axes: need {dim + 1} positive values")
            elif axes is not None:
                out["semi_axes"] = axes

    for key, field_name, kind in (
        ("solver.tol", "tol", float), ("solver.max_newton", "max_newton", int),
        ("solver.closure_tol", "closure_tol", float), ("solver.t_step_init", "t_step_init", float),
    ):
        v = number(key, kind)
        if v is not None:
            out[field_name] = v
    if out.get("t_step_init", 0.25) > 1:
        errors.append("solver.t_step_init: must not exceed 1")

    outdir = values.get("output.dir", "output")
    full = Path(base_dir or ".") / outdir if not os.path.isabs(outdir) else Path(outdir)
    probe = full
    while not probe.exists() and probe != probe.parent:
        probe = probe.parent
    if full.exists() and not full.is_dir():
        errors.append(f"output.dir: {str(full)!r} exists and is not a directory")
    elif not os.access(probe, os.W_OK):
        errors.append(f"output.dir: {str(full)!r} is not writable")
    out["output_dir"] = str(full)
    if "output.formats" in values:
        fmts = tuple(sorted({f.strip() for f in values["output.formats"].split(",") if f.strip()}))
        bad = [f for f in fmts if f not in FORMATS]
        if bad or not fmts:
            errors.append(f"output.formats: must be a non-empty subset of {','.join(FORMATS)}, got {values['output.formats']!r}")
        else:
            out["output_formats"] = fmts

    if not errors:
        cfg = RunConfig(**out)
        try:
            cfg.model()
        except InvalidModel as exc:
            errors.append(f"norm: {exc}")
        except ValueError as exc:
            errors.append(f"norm: {exc}")
        else:
            return cfg
    raise ConfigError(errors)


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path!r}: {exc}"]) from exc
    return validate_config(text, base_dir=str(Path(path).parent))


# ---------------------------------------------------------------------------
# curvature sources


def read_curvature_file(path: str, count: int) -> np.ndarray:
    """K values from ``node_index,K_value`` lines (header optional)."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise IoError(f"cannot read curvature file {path!r}: {exc}") from exc
    K = np.full(count, np.nan)
    problems = []
    for i, row in enumerate(rows):
        try:
            node, value = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            if i == 0:
                continue   # header
            problems.append(f"curvature.file line {i + 1}: malformed row {row!r}")
            continue
        if not 0 <= node < count:
            problems.append(f"curvature.file line {i + 1}: node {node} outside 0..{count - 1}")
        elif not np.isnan(K[node]):
            problems.append(f"curvature.file line {i + 1}: node {node} listed twice")
        else:
            K[node] = value
    missing = np.flatnonzero(np.isnan(K))
    if len(missing):
        problems.append(f"curvature.file: {len(missing)} nodes have no value (first: {missing[0]})")
    if problems:
        raise ConfigError(problems)
    return K


def ellipse_curvature(mesh: WulffMesh, semi_axes) -> Tuple[np.ndarray, np.ndarray]:
    """Anisotropic curvature and support function of the axis-aligned ellipse/ellipsoid.

    Euclidean data at normal nubar: support hbar = |A nubar| and Gauss curvature
    Kbar = hbar^(n+2) / prod(a)^2.  The anisotropic versions are
    S = hbar / F0(nubar) and K = Kbar / (F0^n det(G(z) on nubar-perp)).
    """
    a = np.asarray(semi_axes, dtype=float)
    nu = mesh.p
    hbar = np.linalg.norm(nu * a, axis=1)
    Kbar = hbar ** (mesh.n + 2) / np.prod(a) ** 2
    F0 = mesh.F0
    _, _, Gz, _ = mesh.model.phi_derivatives(mesh.z)
    # orthonormal basis of nubar-perp: the sphere chart frame
    GT = np.einsum("aik,akl,ajl->aij", mesh.frame, Gz, mesh.frame)
    K = Kbar / (F0**mesh.n * np.linalg.det(GT))
    return K, hbar / F0


def curvature_values(cfg: RunConfig, mesh: WulffMesh) -> np.ndarray:
    if cfg.curvature_source == "constant":
        return np.full(mesh.size, cfg.curvature_constant)
    if cfg.curvature_source == "file":
        return read_curvature_file(cfg.curvature_file, mesh.size)
    return ellipse_curvature(mesh, cfg.semi_axes)[0]
