"""Reconstruct the convex body from its anisotropic support function.

The body point with anisotropic normal ``z`` is

    X(z) = g^{ij} S_j d_i z + S(z) z,

and its curvature is recomputed independently from the discrete surface:
Euclidean second fundamental form from chart second derivatives of X,
converted with ``h = hbar / F0(nubar)``, then ``K = det(g_M^{-1} h)`` with the
anisotropic metric ``g_M = G(z)(dX, dX)``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateBody, Inadmissible
from .norms import NormModel
from .solver import apriori_bounds, assemble_state, kernel_gram
from .wulff import ScalarField, WulffMesh, chart_partials, differentiate


@dataclass(frozen=True, eq=False)
class BodyMesh:
    """Reconstructed hypersurface, one point per Wulff-mesh node."""

    X: np.ndarray                 # (N, n+1) positions
    anisotropic_normal: np.ndarray  # (N, n+1), equals the Wulff node z
    euclidean_normal: np.ndarray  # (N, n+1) unit normals nubar
    recomputed_K: np.ndarray      # (N,)
    mesh: WulffMesh               # source mesh (connectivity, stencils)
    source_mesh_id: str
    S_hash: str

    @property
    def faces(self):
        return self.mesh.faces

    @property
    def size(self) -> int:
        return len(self.X)


@dataclass
class CurvatureResult:
    K: ScalarField
    roundtrip_error: Optional[float]


@dataclass
class BodyMeasures:
    volume: float
    aniso_area: float
    r_inner: float
    R_outer: float
    center_inner: np.ndarray
    center_outer: np.ndarray

    def as_dict(self) -> dict:
        return {
            "volume": self.volume,
            "aniso_area": self.aniso_area,
            "r_inner": self.r_inner,
            "R_outer": self.R_outer,
            "center_inner": [float(c) for c in self.center_inner],
            "center_outer": [float(c) for c in self.center_outer],
        }


def _field_hash(values: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(values, dtype=float).tobytes()).hexdigest()[:16]


def body_positions(mesh: WulffMesh, S) -> np.ndarray:
    """X = grad_g S + S z (affine in S).

    The kernel part of S is mapped exactly (l^alpha goes to the translation
    e_alpha) so that translations of the body carry no differentiation error.
    """
    s = mesh.values_of(S)
    c = np.linalg.solve(kernel_gram(mesh), mesh.kernel.T @ (s * mesh.mu))
    s = s - mesh.kernel @ c
    d = differentiate(mesh, s)
    up = np.einsum("aij,aj->ai", mesh.g_inv, d.grad)
    return np.einsum("ai,aik->ak", up, mesh.E) + s[:, None] * mesh.z + c


def _curvature(mesh: WulffMesh, X: np.ndarray, nubar: np.ndarray) -> np.ndarray:
    dX, ddX = chart_partials(mesh, X)             # (N, n, n+1), (N, n, n, n+1)
    _, _, Gz, _ = mesh.model.phi_derivatives(mesh.z)
    gM = np.einsum("aik,akl,ajl->aij", dX, Gz, dX)
    det_gM = np.linalg.det(gM)
    scale = np.max(np.abs(X)) + 1.0
    if np.any(~(det_gM > 1e-14 * scale ** (2 * mesh.n))):
        raise DegenerateBody("reconstructed surface has a degenerate tangent plane")
    hbar = -np.einsum("ak,aijk->aij", nubar, ddX)
    F0 = mesh.model.dual(nubar)[0]
    h = hbar / F0[:, None, None]
    return np.linalg.det(np.linalg.solve(gM, h))


def _check_nodes(mesh: WulffMesh, X: np.ndarray):
    # coincident neighbours break every chart fit
    d = np.linalg.norm(X[mesh.idx] - X[:, None, :], axis=2)
    other = mesh.idx != np.arange(mesh.size)[:, None]
    if np.any(d[other] <= 1e-12 * (np.max(np.abs(X)) + 1.0)):
        raise DegenerateBody("reconstructed body has coincident nodes")


def reconstruct(mesh: WulffMesh, S) -> BodyMesh:
    """Body whose anisotropic support function is S."""
    s = mesh.values_of(S)
    if not assemble_state(mesh, S).admissible:
        raise Inadmissible("support function is not admissible; no convex body")
    X = body_positions(mesh, S)
    _check_nodes(mesh, X)
    DF = mesh.model.evaluate(mesh.z)[1]
    nubar = DF / np.linalg.norm(DF, axis=1, keepdims=True)
    K = _curvature(mesh, X, nubar)
    return BodyMesh(
        X=X, anisotropic_normal=mesh.z.copy(), euclidean_normal=nubar, recomputed_K=K,
        mesh=mesh, source_mesh_id=mesh.mesh_id, S_hash=_field_hash(s),
    )


def body_curvature(body: BodyMesh, model: NormModel, K=None) -> CurvatureResult:
    """Recompute K from the body surface; compare to the prescribed K if given."""
    mesh = body.mesh
    if model is not mesh.model and model != mesh.model:
        raise ValueError("body was built for a different norm")
    _check_nodes(mesh, body.X)
    Krec = _curvature(mesh, body.X, body.euclidean_normal)
    err = None
    if K is not None:
        k = mesh.values_of(K)
        err = float(np.max(np.abs(Krec - k) / k))
    return CurvatureResult(mesh.field(Krec), err)


def roundtrip_error(body: BodyMesh, K) -> float:
    k = body.mesh.values_of(K)
    return float(np.max(np.abs(body.recomputed_K - k) / k))


def _support_radii(mesh: WulffMesh, s: np.ndarray):
    """Largest t W + y inside the body and smallest containing it (linear programs)."""
    L = mesh.kernel
    N, d = L.shape
    c = np.zeros(d + 1)
    c[0] = -1.0
    # t + l.y <= S
    inner = linprog(c, A_ub=np.hstack([np.ones((N, 1)), L]), b_ub=s,
                    bounds=[(None, None)] * (d + 1), method="highs")
    # S <= t + l.y
    c[0] = 1.0
    outer = linprog(c, A_ub=np.hstack([-np.ones((N, 1)), -L]), b_ub=-s,
                    bounds=[(None, None)] * (d + 1), method="highs")
    if inner.status != 0 or outer.status != 0:
        raise DegenerateBody("radius optimisation failed")
    return inner.x[0], inner.x[1:], outer.x[0], outer.x[1:]


def body_measures(body: BodyMesh, mesh: WulffMesh, S) -> BodyMeasures:
    """Enclosed volume, anisotropic area and anisotropic inner/outer radii."""
    if body.source_mesh_id != mesh.mesh_id:
        raise ValueError("body and mesh do not match")
    s = mesh.values_of(S)
    dX, _ = chart_partials(mesh, body.X)
    # divergence theorem: (n+1) Vol = int X . N dA, N dA = *(dX_1 ^ ... ^ dX_n)
    vol_density = np.linalg.det(np.concatenate([body.X[:, None, :], dX], axis=1))
    mu_density = np.linalg.det(np.concatenate([mesh.z[:, None, :], dX], axis=1))
    volume = float(np.dot(vol_density, mesh.area)) / (mesh.n + 1)
    aniso_area = float(np.dot(mu_density, mesh.area))
    if not volume > 0:
        raise DegenerateBody("reconstructed body encloses no volume")
    r, yr, R, yR = _support_radii(mesh, s)
    return BodyMeasures(volume, aniso_area, float(r), float(R), yr, yR)


def _check(lhs, rhs, ok):
    return {"lhs": lhs, "rhs": rhs, "pass": bool(ok)}


def inequality_report(mesh: WulffMesh, S, body: BodyMesh, K, slack: float = 1e-2) -> dict:
    """Minkowski identity, isoperimetric inequality, Andrews bound and C0 sandwich."""
    n = mesh.n
    s = mesh.values_of(S)
    k = mesh.values_of(K)
    meas = body_measures(body, mesh, S)
    wulff_area = float(np.sum(mesh.mu))

    mink_lhs = float(np.dot(s / k, mesh.mu))
    mink_rhs = (n + 1) * meas.volume
    iso_rhs = wulff_area ** (-1.0 / n) * meas.aniso_area ** ((n + 1.0) / n) / (n + 1)
    andrews_rhs = meas.volume / meas.aniso_area
    m1, m2 = apriori_bounds(mesh, K)
    lo, hi = float(s.min()), float(s.max())
    tol_lo, tol_hi = slack * max(1.0, m1), slack * max(1.0, m2)

    report = {
        "minkowski_identity": _check(mink_lhs, mink_rhs, abs(mink_lhs - mink_rhs) <= slack * abs(mink_rhs)),
        "isoperimetric": _check(meas.volume, iso_rhs, meas.volume <= iso_rhs * (1.0 + slack)),
        "andrews_inner_radius": _check(meas.r_inner, andrews_rhs, meas.r_inner >= andrews_rhs * (1.0 - slack)),
        "c0_sandwich": _check([lo, hi], [m1, m2], (m1 - tol_lo <= lo) and (hi <= m2 + tol_hi)),
    }
    report["isoperimetric"]["margin"] = 1.0 - meas.volume / iso_rhs
    report["measures"] = meas.as_dict()
    return report
