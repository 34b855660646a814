"""Discrete Wulff shape: nodes, metric, cubic form, measure and stencils.

The parameter domain is always the round sphere S^n; a node with unit
vector ``p`` sits at ``z = DF0(p)`` on the Wulff shape.  Each node ``a`` owns
a chart: the global angle for n = 1, the gnomonic projection onto the tangent
plane at ``p_a`` for n = 2.  Derivative stencils give chart partials at the
node; metric, cubic form and Christoffel symbols are expressed in that chart.

Stencil data is kept in padded form: ``idx[a]`` lists the neighbourhood of
node ``a`` (padding repeats ``a`` with zero weight), ``d1[a, i]`` and
``d2[a, i, j]`` are weights for first and second partials.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import MeshBuildFailure, MeshMismatch, NoConvergence, NonPositiveField
from .norms import NormModel, q_asymmetry

# n = 2 stencils: polyharmonic spline r^RBF_POWER plus polynomials of degree
# RBF_DEGREE, over the RBF_RINGS-ring neighbourhood of each node
RBF_POWER = 5
RBF_DEGREE = 4
RBF_RINGS = 3
_NPOLY = {2: 6, 3: 10, 4: 15}


# ---------------------------------------------------------------------------
# scalar fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values bound to one mesh."""

    mesh_id: str
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.mesh_id != self.mesh_id:
                raise MeshMismatch("fields live on different meshes")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.mesh_id, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.mesh_id, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.mesh_id, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.mesh_id, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.mesh_id, self.values / self._other(other))

    def __rtruediv__(self, other):
        return ScalarField(self.mesh_id, self._other(other) / self.values)

    def __neg__(self):
        return ScalarField(self.mesh_id, -self.values)


# ---------------------------------------------------------------------------
# icosphere


def icosahedron():
    t = (1.0 + 5.0**0.5) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def icosphere(level: int):
    """Unit icosphere after ``level`` midpoint subdivisions (outward-oriented faces)."""
    verts, faces = icosahedron()
    for _ in range(level):
        vlist = list(verts)
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                vlist.append(m / np.linalg.norm(m))
                cache[key] = len(vlist) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(vlist)
        faces = np.array(new_faces, dtype=np.int64)
    return verts, faces


def spherical_triangle_areas(verts, faces):
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def _rings(faces, count, depth):
    nbr = [set() for _ in range(count)]
    for f in faces:
        for i in range(3):
            for j in range(3):
                if i != j:
                    nbr[f[i]].add(int(f[j]))
    hoods = []
    for a in range(count):
        ring = {a}
        for _ in range(depth):
            ring = ring.union(*(nbr[b] for b in ring))
        ring.discard(a)
        hoods.append([a] + sorted(ring))
    return [sorted(s) for s in nbr], hoods


def _tangent_frames(p):
    """Orthonormal (t1, t2) with det[p, t1, t2] = +1 at each unit vector p."""
    e = np.zeros_like(p)
    e[np.arange(len(p)), np.argmin(np.abs(p), axis=1)] = 1.0
    t1 = np.cross(e, p)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(p, t1)
    return np.stack([t1, t2], axis=1)


def _taylor_basis(u, degree):
    u1, u2 = u[..., 0], u[..., 1]
    cols = [np.ones_like(u1), u1, u2, 0.5 * u1**2, u1 * u2, 0.5 * u2**2]
    if degree >= 3:
        cols += [u1**3 / 6.0, 0.5 * u1**2 * u2, 0.5 * u1 * u2**2, u2**3 / 6.0]
    if degree >= 4:
        cols += [u1**4, u1**3 * u2, u1**2 * u2**2, u1 * u2**3, u2**4]
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# mesh


@dataclass(frozen=True, eq=False)
class WulffMesh:
    """Discretised Wulff shape.  Treat as immutable."""

    model: NormModel
    n: int
    resolution: int
    p: np.ndarray          # (N, n+1) parameter-sphere points
    frame: np.ndarray      # (N, n, n+1) chart tangent vectors of the sphere at p
    z: np.ndarray          # (N, n+1) nodes on the Wulff shape
    F0: np.ndarray         # (N,) dual norm of p
    E: np.ndarray          # (N, n, n+1) tangent basis d_i z
    g: np.ndarray          # (N, n, n)
    g_inv: np.ndarray
    Q: np.ndarray          # (N, n, n, n) cubic form in chart coordinates
    mu: np.ndarray         # (N,) quadrature weights of the anisotropic measure
    area: np.ndarray       # (N,) quadrature weights of the parameter sphere
    idx: np.ndarray        # (N, m) stencil neighbourhoods
    d1: np.ndarray         # (N, n, m)
    d2: np.ndarray         # (N, n, n, m)
    pair_E: np.ndarray     # (N, m, n, n+1) chart-a tangent basis at neighbour idx[a, m]
    gamma: np.ndarray      # (N, n, n, n) gamma[a, k, i, j] = Christoffel^k_ij
    ucoef: np.ndarray      # (N, n, n, m) weights of S -> U(S) (except the S*g term)
    kernel: np.ndarray     # (N, n+1) kernel fields l^alpha(z) = G(z)(z, E^alpha)
    faces: Optional[np.ndarray]
    spacing: float
    mesh_id: str

    @property
    def size(self) -> int:
        return len(self.z)

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    def field(self, values) -> ScalarField:
        values = np.broadcast_to(np.asarray(values, dtype=float), (self.size,))
        return ScalarField(self.mesh_id, values)

    def constant(self, c: float) -> ScalarField:
        return self.field(np.full(self.size, float(c)))

    def kernel_field(self, alpha: int) -> ScalarField:
        return self.field(self.kernel[:, alpha])

    def values_of(self, f) -> np.ndarray:
        """Raw values of a field on this mesh (fail fast on foreign fields)."""
        if isinstance(f, ScalarField):
            if f.mesh_id != self.mesh_id:
                raise MeshMismatch("field belongs to another mesh")
            return f.values
        v = np.asarray(f, dtype=float)
        if v.shape != (self.size,):
            raise MeshMismatch(f"expected {self.size} nodal values, got shape {v.shape}")
        return v

    # sparse forms of the stencils, mostly for tests and spectra
    def gradient_matrix(self) -> sp.csr_matrix:
        N, n, m = self.d1.shape
        rows = np.broadcast_to((np.arange(N)[:, None] * n + np.arange(n)[None, :])[..., None], (N, n, m))
        cols = np.broadcast_to(self.idx[:, None, :], (N, n, m))
        return sp.csr_matrix((self.d1.ravel(), (rows.ravel(), cols.ravel())), shape=(N * n, N))

    def u_matrix(self) -> sp.csr_matrix:
        """Sparse map S -> U(S), rows ordered (node, i, j)."""
        N, n, _, m = self.ucoef.shape
        rows = np.arange(N * n * n).reshape(N, n, n)
        R = np.broadcast_to(rows[..., None], (N, n, n, m))
        C = np.broadcast_to(self.idx[:, None, None, :], (N, n, n, m))
        A = sp.csr_matrix((self.ucoef.ravel(), (R.ravel(), C.ravel())), shape=(N * n * n, N))
        D = sp.csr_matrix((self.g.ravel(), (rows.ravel(), np.repeat(np.arange(N), n * n))), shape=(N * n * n, N))
        return (A + D).tocsr()


def _build_sphere(n, resolution):
    if n == 1:
        if resolution < 8:
            raise ValueError("n=1 meshes need at least 8 nodes")
        theta = 2.0 * np.pi * np.arange(resolution) / resolution
        p = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        frame = np.stack([-np.sin(theta), np.cos(theta)], axis=1)[:, None, :]
        area = np.full(resolution, 2.0 * np.pi / resolution)
        return p, frame, None, area, 2.0 * np.pi / resolution
    if n == 2:
        if resolution < 1:
            raise ValueError("n=2 meshes need icosphere subdivision level >= 1")
        p, faces = icosphere(resolution)
        frame = _tangent_frames(p)
        tri = spherical_triangle_areas(p, faces)
        area = np.zeros(len(p))
        for k in range(3):
            np.add.at(area, faces[:, k], tri / 3.0)
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        spacing = float(np.mean(np.linalg.norm(p[edges[:, 0]] - p[edges[:, 1]], axis=1)))
        return p, frame, faces, area, spacing
    raise ValueError(f"only n = 1 and n = 2 are supported, got n = {n}")


def _fd_stencils(N):
    h = 2.0 * np.pi / N
    off = np.arange(-2, 3)
    idx = (np.arange(N)[:, None] + off[None, :]) % N
    w1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / (12.0 * h)
    w2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / (12.0 * h * h)
    d1 = np.broadcast_to(w1, (N, 1, 5)).copy()
    d2 = np.broadcast_to(w2, (N, 1, 1, 5)).copy()
    return idx, d1, d2


def _rbf_stencils(p, frame, faces, degree=None, depth=None, power=None):
    """Polyharmonic-spline RBF-FD weights (r^power plus polynomials) in gnomonic charts."""
    degree = RBF_DEGREE if degree is None else degree
    depth = RBF_RINGS if depth is None else depth
    power = RBF_POWER if power is None else power
    N = len(p)
    _, hoods = _rings(faces, N, depth)
    m = max(len(r) for r in hoods)
    idx = np.empty((N, m), dtype=np.int64)
    mask = np.zeros((N, m), dtype=bool)
    for a, ring in enumerate(hoods):
        idx[a, : len(ring)] = ring
        idx[a, len(ring):] = a
        mask[a, : len(ring)] = True
    pb = p[idx]
    cosang = np.einsum("amk,ak->am", pb, p)
    u = np.einsum("amk,aik->ami", pb, frame) / cosang[..., None]
    # padded slots get an identity row and zero weight
    diff = u[:, :, None, :] - u[:, None, :, :]
    r = np.linalg.norm(diff, axis=3)
    A = r**power
    A = np.where(mask[:, :, None] & mask[:, None, :], A, 0.0)
    A[:, np.arange(m), np.arange(m)] += np.where(mask, 0.0, 1.0)
    P = _taylor_basis(u, degree)[..., :_NPOLY[degree]] * mask[..., None]
    c = P.shape[2]
    Msys = np.zeros((N, m + c, m + c))
    Msys[:, :m, :m] = A
    Msys[:, :m, m:] = P
    Msys[:, m:, :m] = np.transpose(P, (0, 2, 1))
    # right-hand sides: operators applied to the basis, evaluated at the chart origin
    x, y = -u[..., 0], -u[..., 1]          # origin minus node
    rr = np.linalg.norm(u, axis=2)
    safe = np.where(rr > 0, rr, 1.0)
    k = power
    rp2 = np.where(rr > 0, safe ** (k - 2), 0.0)
    rp4 = np.where(rr > 0, safe ** (k - 4), 0.0)
    ops = np.stack(
        [
            k * x * rp2,
            k * y * rp2,
            k * rp2 + k * (k - 2) * x * x * rp4,
            k * (k - 2) * x * y * rp4,
            k * rp2 + k * (k - 2) * y * y * rp4,
        ],
        axis=-1,
    ) * mask[..., None]
    rhs = np.zeros((N, m + c, 5))
    rhs[:, :m] = ops
    # polynomial rows: the basis is scaled Taylor monomials, so each operator picks one unit entry
    for col, j in enumerate((1, 2, 3, 4, 5)):
        rhs[:, m + j, col] = 1.0
    w = np.linalg.solve(Msys, rhs)[:, :m, :]     # (N, m, 5)
    w = w * mask[..., None]
    d1 = np.transpose(w[..., 0:2], (0, 2, 1))
    d2 = np.stack(
        [np.stack([w[..., 2], w[..., 3]], axis=1), np.stack([w[..., 3], w[..., 4]], axis=1)], axis=1
    )
    dq = (frame[:, None, :, :] - pb[:, :, None, :] * np.einsum("amk,aik->ami", pb, frame)[..., None])
    dq = dq * cosang[..., None, None]
    return idx, d1, d2, dq


def build_mesh(model: NormModel, n: int, resolution: int) -> WulffMesh:
    """Discretise the Wulff shape of ``model`` (n = 1 circle-like, n = 2 icosphere)."""
    if model.dim != n + 1:
        raise ValueError(f"norm lives in R^{model.dim}, mesh needs R^{n + 1}")
    p, frame, faces, area, spacing = _build_sphere(n, resolution)
    try:
        F0, z, _ = model.dual(p)
    except NoConvergence as exc:
        raise MeshBuildFailure(f"dual map failed while placing nodes: {exc}") from exc
    H0 = model.hess_dual(p, F0, z)
    E = np.einsum("aij,anj->ani", H0, frame)
    _, Dphi, Gz, Qz = model.phi_derivatives(z)
    g = np.einsum("ani,aij,amj->anm", E, Gz, E)
    g = 0.5 * (g + np.transpose(g, (0, 2, 1)))
    g_inv = np.linalg.inv(g)
    Qc = np.einsum("aijk,ali,amj,ank->almn", Qz, E, E, E)

    if n == 1:
        idx, d1, d2 = _fd_stencils(len(p))
        pair_E = E[idx]
    else:
        idx, d1, d2, dq = _rbf_stencils(p, frame, faces)
        pair_E = np.einsum("amij,amnj->amni", H0[idx], dq)

    gpair = np.einsum("amni,amij,amkj->amnk", pair_E, Gz[idx], pair_E)
    dg = np.einsum("akm,amij->akij", d1, gpair)      # dg[a, k, i, j] = d_k g_ij
    # Christoffel^k_ij = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)
    # low[a, i, j, l] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    low = 0.5 * (
        np.einsum("aijl->aijl", dg) + np.einsum("ajil->aijl", dg) - np.einsum("alij->aijl", dg)
    )
    gamma = np.einsum("akl,aijl->akij", g_inv, low)

    Q_up = np.einsum("aijl,alk->aijk", Qc, g_inv)     # Q_ij^k
    ucoef = d2 - np.einsum("akij,akm->aijm", gamma + 0.5 * np.transpose(Q_up, (0, 3, 1, 2)), d1)

    det = np.linalg.det(np.concatenate([z[:, None, :], E], axis=1))
    mu = area * det
    if np.any(mu <= 0):
        raise MeshBuildFailure("non-positive anisotropic measure weight")

    h = hashlib.sha1()
    h.update(f"{model.family}|{model.delta!r}|{n}|{resolution}".encode())
    if model.matrix is not None:
        h.update(np.ascontiguousarray(model.matrix).tobytes())
    h.update(np.ascontiguousarray(z).tobytes())

    return WulffMesh(
        model=model, n=n, resolution=resolution, p=p, frame=frame, z=z, F0=F0, E=E,
        g=g, g_inv=g_inv, Q=Qc, mu=mu, area=area, idx=idx, d1=d1, d2=d2, pair_E=pair_E,
        gamma=gamma, ucoef=ucoef, kernel=Dphi, faces=faces, spacing=spacing,
        mesh_id=h.hexdigest()[:16],
    )


# ---------------------------------------------------------------------------
# operations


@dataclass
class Derivatives:
    grad: np.ndarray   # (N, n) S_i
    hess: np.ndarray   # (N, n, n) covariant Hessian


def chart_partials(mesh: WulffMesh, values: np.ndarray):
    """First and second chart partials of nodal values (trailing dims allowed)."""
    vals = values[mesh.idx]
    d1 = np.einsum("aim,am...->ai...", mesh.d1, vals)
    d2 = np.einsum("aijm,am...->aij...", mesh.d2, vals)
    return d1, d2


def differentiate(mesh: WulffMesh, S) -> Derivatives:
    s = mesh.values_of(S)
    d1, d2 = chart_partials(mesh, s)
    hess = d2 - np.einsum("akij,ak->aij", mesh.gamma, d1)
    return Derivatives(d1, hess)


def integrate_mu(mesh: WulffMesh, f) -> float:
    return float(np.dot(mesh.values_of(f), mesh.mu))


def closure_residual(mesh: WulffMesh, f) -> np.ndarray:
    """``int l^alpha f dmu`` for each alpha; ``f`` plays the role of 1/K."""
    v = mesh.values_of(f)
    if np.any(v <= 0):
        raise NonPositiveField("closure residual needs a positive field")
    return mesh.kernel.T @ (v * mesh.mu)


@dataclass
class GeometryReport:
    gauss_residual: float
    gauss_skipped: bool
    measure_density_residual: float
    q_radial_residual: float
    q_symmetry_residual: float
    codazzi_q_residual: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _pair_metric(mesh):
    Gz = mesh.model.phi_derivatives(mesh.z)[2]
    return np.einsum("amni,amij,amkj->amnk", mesh.pair_E, Gz[mesh.idx], mesh.pair_E)


def measure_density(mesh: WulffMesh) -> np.ndarray:
    """phi = dmu / dV_g at each node (chart independent)."""
    omega = np.linalg.det(np.concatenate([mesh.z[:, None, :], mesh.E], axis=1))
    return omega / np.sqrt(np.linalg.det(mesh.g))


def riemann_1212(mesh: WulffMesh) -> np.ndarray:
    """R_1212 = g(R(d1, d2) d2, d1) from second chart derivatives of g (n = 2)."""
    gpair = _pair_metric(mesh)
    dg = np.einsum("akm,amij->akij", mesh.d1, gpair)
    ddg = np.einsum("aklm,amij->aklij", mesh.d2, gpair)
    gi = mesh.g_inv
    # derivative of the inverse metric: d_l g^{mk}
    dgi = -np.einsum("amp,alpq,aqk->almk", gi, dg, gi)
    low = 0.5 * (np.einsum("aijl->aijl", dg) + np.einsum("ajil->aijl", dg) - np.einsum("alij->aijl", dg))
    dlow = 0.5 * (
        np.einsum("arijl->arijl", ddg) + np.einsum("arjil->arijl", ddg) - np.einsum("arlij->arijl", ddg)
    )
    # dgamma[a, r, k, i, j] = d_r Christoffel^k_ij
    dgamma = np.einsum("arkl,aijl->arkij", dgi, low) + np.einsum("akl,arijl->arkij", gi, dlow)
    gam = mesh.gamma
    # R^l_ijk = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    Rl = (
        np.einsum("ailjk->alijk", dgamma)
        - np.einsum("ajlik->alijk", dgamma)
        + np.einsum("alim,amjk->alijk", gam, gam)
        - np.einsum("aljm,amik->alijk", gam, gam)
    )
    return np.einsum("al,al->a", mesh.g[:, 0, :], Rl[:, :, 0, 1, 1])


def geometry_selfcheck(mesh: WulffMesh) -> GeometryReport:
    """Residuals of the intrinsic identities of the Wulff shape."""
    n = mesh.n
    Q, gi = mesh.Q, mesh.g_inv
    if n == 2:
        R = riemann_1212(mesh)
        Qup = np.einsum("aijl,alk->aijk", Q, gi)   # Q_ij^m
        g = mesh.g
        expected = (
            g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
            + 0.25 * np.einsum("am,am->a", Qup[:, 1, 0, :], Q[:, :, 1, 0])
            - 0.25 * np.einsum("am,am->a", Qup[:, 1, 1, :], Q[:, :, 0, 0])
        )
        gauss = float(np.max(np.abs(R - expected)))
        skipped = False
    else:
        gauss, skipped = 0.0, True

    logphi = np.log(measure_density(mesh))
    dlog = np.einsum("aim,am->ai", mesh.d1, logphi[mesh.idx])
    trace_q = np.einsum("ajk,aijk->ai", gi, Q)
    density = float(np.max(np.abs(dlog + 0.5 * trace_q)))

    _, _, _, Qz = mesh.model.phi_derivatives(mesh.z)
    q_radial = float(np.max(np.abs(np.einsum("aijk,ai->ajk", Qz, mesh.z))))

    if n == 2:
        Qpair = np.einsum(
            "amijk,amxi,amyj,amzk->amxyz", Qz[mesh.idx], mesh.pair_E, mesh.pair_E, mesh.pair_E
        )
        dQ = np.einsum("alm,amijk->alijk", mesh.d1, Qpair)
        gam = mesh.gamma
        nabla = (
            dQ
            - np.einsum("amli,amjk->alijk", gam, Q)
            - np.einsum("amlj,aimk->alijk", gam, Q)
            - np.einsum("amlk,aijm->alijk", gam, Q)
        )
        codazzi = float(np.max(np.abs(nabla - np.transpose(nabla, (0, 4, 2, 3, 1)))))
    else:
        codazzi = 0.0

    return GeometryReport(
        gauss_residual=gauss,
        gauss_skipped=skipped,
        measure_density_residual=density,
        q_radial_residual=q_radial,
        q_symmetry_residual=q_asymmetry(Q),
        codazzi_q_residual=codazzi,
    )


def mesh_table(mesh: WulffMesh) -> str:
    """Debug dump: ``index, z..., mu_weight`` per line."""
    lines = []
    for a in range(mesh.size):
        cols = [str(a)] + [f"{v:.17g}" for v in mesh.z[a]] + [f"{mesh.mu[a]:.17g}"]
        lines.append(", ".join(cols))
    return "\n".join(lines) + "\n"
