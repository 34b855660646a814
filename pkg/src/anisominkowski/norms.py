"""Minkowski norms, their derivatives up to third order, and numeric duals.

Every family is described through ``phi = F**2 / 2``, which is 2-homogeneous
and smooth away from the origin.  From it

* ``G = Hess(phi)`` is the position-dependent metric (0-homogeneous),
* ``Q = D^3(phi)`` is the cubic form (-1-homogeneous), zero for quadratic F.

All evaluators are vectorised over a leading batch axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidModel, NoConvergence, ZeroVector

FAMILIES = ("euclidean", "quadratic", "quartic")

# construction-time ellipticity margin and sampling density
MIN_EIG_MARGIN = 1e-3
EIG_SCAN_DIRECTIONS = 10_000

DUAL_MAX_ITER = 50
DUAL_TOL = 1e-12


def sphere_directions(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^dim."""
    if dim == 2:
        t = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        # Fibonacci lattice
        k = np.arange(count) + 0.5
        zc = 1.0 - 2.0 * k / count
        rad = np.sqrt(1.0 - zc**2)
        ang = np.pi * (1.0 + 5.0**0.5) * k
        return np.stack([rad * np.cos(ang), rad * np.sin(ang), zc], axis=1)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _canonical(Q: np.ndarray) -> np.ndarray:
    """Copy each entry from its sorted-index representative: exact slot symmetry."""
    d = Q.shape[-1]
    I, J, K = np.sort(np.stack(np.meshgrid(*(np.arange(d),) * 3, indexing="ij")), axis=0)
    return Q[..., I, J, K]


def _sym3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a_{ij} b_k + a_{ik} b_j + a_{jk} b_i for batched a (.., d, d), b (.., d)."""
    return (
        np.einsum("...ij,...k->...ijk", a, b)
        + np.einsum("...ik,...j->...ijk", a, b)
        + np.einsum("...jk,...i->...ijk", a, b)
    )


@dataclass(frozen=True, eq=False)
class NormModel:
    """A Minkowski norm on R^dim.

    Use the constructors :meth:`euclidean`, :meth:`quadratic` and
    :meth:`quartic` rather than calling the class directly.
    """

    family: str
    dim: int
    matrix: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    delta: float = 0.0
    min_sampled_eig: float = field(default=np.nan, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidModel(f"unknown norm family {self.family!r}")
        if self.dim < 2:
            raise InvalidModel("ambient dimension must be at least 2")
        if self.family == "quadratic":
            A = np.asarray(self.matrix, dtype=float)
            if A.shape != (self.dim, self.dim):
                raise InvalidModel(
                    f"quadratic norm needs a {self.dim}x{self.dim} matrix, got shape {A.shape}"
                )
            if not np.allclose(A, A.T, rtol=0, atol=1e-14 * np.abs(A).max()):
                raise InvalidModel("quadratic norm matrix is not symmetric")
            eig = np.linalg.eigvalsh(A)
            if eig[0] <= 0:
                raise InvalidModel("quadratic norm matrix is not positive definite", float(eig[0]))
            A = A.copy()
            A.setflags(write=False)
            object.__setattr__(self, "matrix", A)
            object.__setattr__(self, "min_sampled_eig", float(eig[0]))
        elif self.family == "euclidean":
            object.__setattr__(self, "min_sampled_eig", 1.0)
        else:
            if not np.isfinite(self.delta) or self.delta < 0:
                raise InvalidModel(f"quartic perturbation weight must be >= 0, got {self.delta}")
            eig = float(self.min_eigenvalue_scan(EIG_SCAN_DIRECTIONS))
            object.__setattr__(self, "min_sampled_eig", eig)
            if eig < MIN_EIG_MARGIN:
                raise InvalidModel(
                    f"quartic weight delta={self.delta} breaks ellipticity: "
                    f"sampled min eig(G) = {eig:.6g} < {MIN_EIG_MARGIN}",
                    eig,
                )

    def _key(self):
        mat = None if self.matrix is None else self.matrix.tobytes()
        return (self.family, self.dim, self.delta, mat)

    def __eq__(self, other):
        if not isinstance(other, NormModel):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    # -- constructors -------------------------------------------------------

    @classmethod
    def euclidean(cls, dim: int = 2) -> "NormModel":
        return cls("euclidean", dim)

    @classmethod
    def quadratic(cls, matrix) -> "NormModel":
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls("quadratic", A.shape[0], matrix=A)

    @classmethod
    def quartic(cls, delta: float, dim: int = 2) -> "NormModel":
        return cls("quartic", dim, delta=float(delta))

    # -- evaluation ---------------------------------------------------------

    def phi_derivatives(self, x: np.ndarray):
        """Return ``(phi, Dphi, G, Q)`` of ``phi = F^2/2`` at batched points."""
        x = np.asarray(x, dtype=float)
        d = self.dim
        if self.family == "euclidean" or self.family == "quadratic":
            A = np.eye(d) if self.family == "euclidean" else self.matrix
            Ax = x @ A
            phi = 0.5 * np.einsum("...i,...i->...", x, Ax)
            G = np.broadcast_to(A, x.shape[:-1] + (d, d)).copy()
            Q = np.zeros(x.shape[:-1] + (d, d, d))
            return phi, Ax, G, Q

        # phi = |x|^2/2 + (delta/2) * P/|x|^2 with P = sum x_i^4; product rule on P*s, s = 1/|x|^2
        eye = np.eye(d)
        r2 = np.einsum("...i,...i->...", x, x)
        s = 1.0 / r2
        s_ = s[..., None]
        P = np.sum(x**4, axis=-1)
        P1 = 4.0 * x**3
        P2 = 12.0 * np.einsum("...i,ij->...ij", x**2, eye)
        P3 = 24.0 * np.einsum("...i,ij,ik->...ijk", x, eye, eye)
        s1 = -2.0 * x * s_**2
        xx = np.einsum("...i,...j->...ij", x, x)
        s2 = -2.0 * eye * s[..., None, None] ** 2 + 8.0 * xx * s[..., None, None] ** 3
        s3 = 8.0 * _sym3(np.broadcast_to(eye, xx.shape), x) * s[..., None, None, None] ** 3 - 48.0 * np.einsum(
            "...i,...j,...k->...ijk", x, x, x
        ) * s[..., None, None, None] ** 4
        h0 = P * s
        h1 = P1 * s_ + P[..., None] * s1
        h2 = (
            P2 * s[..., None, None]
            + np.einsum("...i,...j->...ij", P1, s1)
            + np.einsum("...i,...j->...ij", s1, P1)
            + P[..., None, None] * s2
        )
        h3 = (
            P3 * s[..., None, None, None]
            + _sym3(P2, s1)
            + _sym3(s2, P1)
            + P[..., None, None, None] * s3
        )
        half = 0.5 * self.delta
        phi = 0.5 * r2 + half * h0
        Dphi = x + half * h1
        G = eye + half * h2
        Q = _canonical(half * h3)
        return phi, Dphi, G, Q

    def value(self, x: np.ndarray) -> np.ndarray:
        phi = self.phi_derivatives(x)[0]
        return np.sqrt(2.0 * phi)

    def evaluate(self, x: np.ndarray):
        """Batched ``(F, DF, G, Q)``."""
        phi, Dphi, G, Q = self.phi_derivatives(x)
        F = np.sqrt(2.0 * phi)
        return F, Dphi / F[..., None], G, Q

    def hess_F(self, x: np.ndarray) -> np.ndarray:
        F, DF, G, _ = self.evaluate(x)
        return (G - np.einsum("...i,...j->...ij", DF, DF)) / F[..., None, None]

    def min_eigenvalue_scan(self, count: int = EIG_SCAN_DIRECTIONS) -> float:
        dirs = sphere_directions(self.dim, count)
        G = self.phi_derivatives(dirs)[2]
        return float(np.linalg.eigvalsh(G)[:, 0].min())

    # -- duality ------------------------------------------------------------

    def dual(self, xi: np.ndarray):
        """Batched dual norm.

        Newton on ``mu * DF(x) = xi, F(x) = 1`` in the unknowns ``(x, mu)``.
        Returns ``(F0, DF0, iterations)``; raises :class:`NoConvergence`.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        scale = np.linalg.norm(xi, axis=1)
        if np.any(scale == 0):
            raise ZeroVector("dual norm evaluated at the zero vector")
        d = self.dim
        Fxi = self.value(xi)
        x = xi / Fxi[:, None]
        mu = Fxi.copy()
        it = 0
        for it in range(DUAL_MAX_ITER + 1):
            F, DF, G, _ = self.evaluate(x)
            res = np.concatenate([mu[:, None] * DF - xi, (F - 1.0)[:, None]], axis=1)
            err = np.max(np.abs(res[:, :d]) / scale[:, None], axis=1)
            err = np.maximum(err, np.abs(res[:, d]))
            if np.all(err <= DUAL_TOL):
                break
            if it == DUAL_MAX_ITER:
                raise NoConvergence(
                    f"dual norm Newton exceeded {DUAL_MAX_ITER} iterations (residual {err.max():.3e})"
                )
            HF = (G - np.einsum("bi,bj->bij", DF, DF)) / F[:, None, None]
            J = np.zeros((len(x), d + 1, d + 1))
            J[:, :d, :d] = mu[:, None, None] * HF
            J[:, :d, d] = DF
            J[:, d, :d] = DF
            step = np.linalg.solve(J, -res[..., None])[..., 0]
            x_new = x + step[:, :d]
            # keep iterates away from the origin
            shrink = np.linalg.norm(x_new, axis=1) < 0.1 * np.linalg.norm(x, axis=1)
            x_new[shrink] = x[shrink] + 0.5 * step[shrink, :d]
            x = x_new
            mu = mu + step[:, d]
        value = np.einsum("bi,bi->b", x, xi)
        return value, x, it

    def hess_dual(self, xi: np.ndarray, F0: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Hessian of F0 at ``xi`` given ``F0(xi)`` and ``z = DF0(xi)``.

        Uses ``Hess(F0^2/2)(xi) = G(z)^{-1}`` so no third dual derivative is
        ever formed.
        """
        G = self.phi_derivatives(z)[2]
        Ginv = np.linalg.inv(G)
        return (Ginv - np.einsum("...i,...j->...ij", z, z)) / np.asarray(F0)[..., None, None]


@dataclass(frozen=True)
class NormEval:
    F: float
    DF: np.ndarray
    G: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class DualResult:
    value: float
    point: np.ndarray
    iterations: int
    converged: bool


@dataclass
class NormReport:
    """Worst-case residuals of the norm contract over random directions."""

    sample_count: int
    euler_F: float            # |<DF(x),x> - F(x)| / F(x)
    euler_hess_F: float       # |Hess F(x) x| / |DF(x)|
    dual_on_wulff: float      # |F(DF0(xi)) - 1|
    dual_of_gradient: float   # |F0(DF(x)) - 1|
    inversion_dual: float     # |F0(xi) DF(DF0(xi)) - xi| / |xi|
    inversion_primal: float   # |F(x) DF0(DF(x)) - x| / |x|
    min_eig_G: float
    max_Q_radial: float       # max |Q(x)(x,.,.)|, scaled by |x|
    max_Q_asymmetry: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _check_nonzero(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("expected a single vector")
    if not np.any(x):
        raise ZeroVector("norm evaluated at the zero vector")
    return x


def norm_eval(model: NormModel, x) -> NormEval:
    x = _check_nonzero(x)
    F, DF, G, Q = model.evaluate(x[None])
    return NormEval(float(F[0]), DF[0], G[0], Q[0])


def dual_eval(model: NormModel, xi) -> DualResult:
    xi = _check_nonzero(xi)
    value, point, it = model.dual(xi[None])
    return DualResult(float(value[0]), point[0], int(it), True)


def q_asymmetry(Q: np.ndarray) -> float:
    """Largest deviation between slot permutations of a batched 3-tensor."""
    worst = 0.0
    for perm in itertools.permutations(range(3)):
        axes = tuple(range(Q.ndim - 3)) + tuple(Q.ndim - 3 + p for p in perm)
        worst = max(worst, float(np.max(np.abs(Q - np.transpose(Q, axes)), initial=0.0)))
    return worst


def verify_norm(model: NormModel, sample_count: int, seed: int = 0) -> NormReport:
    """Check the norm contract on ``sample_count`` random nonzero vectors.

    Raises :class:`InvalidModel` if any sampled ``G`` fails to be positive
    definite.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    rng = np.random.default_rng(seed)
    d = model.dim
    x = rng.standard_normal((sample_count, d)) * rng.uniform(0.2, 5.0, (sample_count, 1))
    xi = rng.standard_normal((sample_count, d)) * rng.uniform(0.2, 5.0, (sample_count, 1))

    F, DF, G, Q = model.evaluate(x)
    eig = np.linalg.eigvalsh(G)[:, 0]
    if eig.min() <= 0:
        raise InvalidModel(f"sampled G is not positive definite (min eigenvalue {eig.min():.6g})", float(eig.min()))
    xn = np.linalg.norm(x, axis=1)
    euler_F = np.abs(np.einsum("bi,bi->b", DF, x) - F) / F
    HF = (G - np.einsum("bi,bj->bij", DF, DF)) / F[:, None, None]
    euler_hess = np.linalg.norm(np.einsum("bij,bj->bi", HF, x), axis=1) / np.linalg.norm(DF, axis=1)
    Q_radial = np.abs(np.einsum("bijk,bi->bjk", Q, x)).max(axis=(1, 2))

    F0, z, _ = model.dual(xi)
    _, DFz, _, _ = model.evaluate(z)
    dual_on_wulff = np.abs(model.value(z) - 1.0)
    inv_dual = np.linalg.norm(F0[:, None] * DFz - xi, axis=1) / np.linalg.norm(xi, axis=1)

    F0_DF, z_DF, _ = model.dual(DF)
    dual_of_grad = np.abs(F0_DF - 1.0)
    inv_primal = np.linalg.norm(F[:, None] * z_DF - x, axis=1) / xn

    return NormReport(
        sample_count=sample_count,
        euler_F=float(euler_F.max()),
        euler_hess_F=float(euler_hess.max()),
        dual_on_wulff=float(dual_on_wulff.max()),
        dual_of_gradient=float(dual_of_grad.max()),
        inversion_dual=float(inv_dual.max()),
        inversion_primal=float(inv_primal.max()),
        min_eig_G=float(eig.min()),
        max_Q_radial=float(Q_radial.max()),
        max_Q_asymmetry=q_asymmetry(Q),
    )
