"""Newton and continuation solver for the anisotropic Monge-Ampere equation.

The unknown is the anisotropic support function ``S`` on the Wulff shape.
In chart coordinates the equation reads ``det(g^{-1} U(S)) = 1/K`` with

    U(S)_ij = S_;ij - 1/2 Q_ij^k S_k + S g_ij.

Newton works on the log form ``r = log det(g^{-1} U) + log K``.  The kernel
fields ``l^alpha`` are handled by bordering the Jacobian with ``n + 1``
multipliers and ``n + 1`` mu-weighted orthogonality constraints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AdmissibilityLost,
    ClosureViolated,
    ContinuationStalled,
    Inadmissible,
    LinearSolveFailure,
    MaxIterations,
    NonPositiveK,
    SingularGram,
    SolverFailure,
)
from .wulff import ScalarField, WulffMesh, closure_residual, differentiate

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    tol: float = 1e-9
    max_newton: int = 50
    closure_tol: Optional[float] = None     # None: 1e-6 * int(1/K) dmu
    t_step_init: float = 0.25
    min_t_step: float = 2.0**-12
    min_line_step: float = 2.0**-20
    sufficient_decrease: float = 1e-4


@dataclass
class AdmissibleState:
    S: ScalarField
    U: np.ndarray                  # (N, n, n)
    principal_radii: np.ndarray    # (N, n) eigenvalues of g^{-1} U
    admissible: bool
    residual_norm: float = float("nan")


@dataclass
class SolveReport:
    converged: bool = False
    newton_iterations_total: int = 0
    continuation_steps: List[Tuple[float, int, float]] = field(default_factory=list)
    final_residual_inf: float = float("nan")
    raw_residual_inf: float = float("nan")
    multipliers: Optional[np.ndarray] = None
    ortho_residual: Optional[np.ndarray] = None
    bounds: Optional[Tuple[float, float]] = None
    diagnostic_norms: dict = field(default_factory=dict)
    history: List[float] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "newton_iterations_total": self.newton_iterations_total,
            "continuation_steps": [list(s) for s in self.continuation_steps],
            "final_residual_inf": self.final_residual_inf,
            "raw_residual_inf": self.raw_residual_inf,
            "multipliers": None if self.multipliers is None else list(map(float, self.multipliers)),
            "ortho_residual": None if self.ortho_residual is None else list(map(float, self.ortho_residual)),
            "bounds": None if self.bounds is None else list(self.bounds),
            "diagnostic_norms": dict(self.diagnostic_norms),
        }


# ---------------------------------------------------------------------------
# state and residual


def apply_u(mesh: WulffMesh, s: np.ndarray) -> np.ndarray:
    """U(s) in chart coordinates, shape (N, n, n); linear in ``s``."""
    U = np.einsum("aijm,am->aij", mesh.ucoef, s[mesh.idx]) + s[:, None, None] * mesh.g
    return 0.5 * (U + np.transpose(U, (0, 2, 1)))


def _radii(mesh: WulffMesh, U: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(mesh.g)
    Li = np.linalg.inv(L)
    return np.linalg.eigvalsh(Li @ U @ np.transpose(Li, (0, 2, 1)))


def assemble_state(mesh: WulffMesh, S) -> AdmissibleState:
    """Evaluate U(S) and the principal radii; admissibility is only flagged."""
    s = mesh.values_of(S)
    if not isinstance(S, ScalarField):
        S = mesh.field(s)
    U = apply_u(mesh, s)
    radii = _radii(mesh, U)
    ok = bool(np.all(np.isfinite(radii)) and radii.min() > 0)
    return AdmissibleState(S=S, U=U, principal_radii=radii, admissible=ok)


def _log_k(mesh: WulffMesh, K) -> np.ndarray:
    k = mesh.values_of(K)
    if np.any(~(k > 0)):
        raise NonPositiveK("curvature must be positive at every node")
    return np.log(k)


def _detres(mesh: WulffMesh, state: AdmissibleState) -> np.ndarray:
    return np.sum(np.log(state.principal_radii), axis=1)


def residual_field(mesh: WulffMesh, state: AdmissibleState, K) -> ScalarField:
    """r = log det(g^{-1} U) + log K."""
    if not state.admissible:
        raise Inadmissible("log det undefined: state is not admissible")
    return mesh.field(_detres(mesh, state) + _log_k(mesh, K))


def _weighted_matrix(mesh: WulffMesh, W: np.ndarray) -> sp.csr_matrix:
    """Sparse v -> sum_ij W_ij U(v)_ij for per-node weights W (N, n, n)."""
    N, m = mesh.idx.shape
    vals = np.einsum("aij,aijm->am", W, mesh.ucoef)
    diag = np.einsum("aij,aij->a", W, mesh.g)
    rows = np.repeat(np.arange(N), m)
    A = sp.csr_matrix((vals.ravel(), (rows, mesh.idx.ravel())), shape=(N, N))
    return (A + sp.diags(diag)).tocsr()


def log_jacobian(mesh: WulffMesh, state: AdmissibleState) -> sp.csr_matrix:
    """Jacobian of the log residual: v -> tr(U^{-1} U(v))."""
    if not state.admissible:
        raise Inadmissible("Jacobian requested at an inadmissible state")
    return _weighted_matrix(mesh, np.linalg.inv(state.U))


def linearized_operator(mesh: WulffMesh, state: AdmissibleState) -> sp.csr_matrix:
    """L_S v = cof(U)^{ij} U(v)_ij / det g, the derivative of det(g^{-1} U(S))."""
    if not state.admissible:
        raise Inadmissible("linearisation requested at an inadmissible state")
    det = np.prod(state.principal_radii, axis=1)
    W = np.linalg.inv(state.U) * det[:, None, None]
    return _weighted_matrix(mesh, W)


def self_adjointness_defect(mesh: WulffMesh, state: AdmissibleState, v, w) -> float:
    """|int w L_S v dmu - int v L_S w dmu|."""
    vv, ww = mesh.values_of(v), mesh.values_of(w)
    L = linearized_operator(mesh, state)
    return float(abs(np.dot(ww * mesh.mu, L @ vv) - np.dot(vv * mesh.mu, L @ ww)))


# ---------------------------------------------------------------------------
# kernel handling


def kernel_gram(mesh: WulffMesh) -> np.ndarray:
    return mesh.kernel.T @ (mesh.kernel * mesh.mu[:, None])


def enforce_ortho(mesh: WulffMesh, S) -> ScalarField:
    """Remove the kernel components of S in the dmu inner product."""
    s = mesh.values_of(S)
    M = kernel_gram(mesh)
    if np.linalg.cond(M) > 1e12:
        raise SingularGram("kernel Gram matrix is singular")
    c = np.linalg.solve(M, mesh.kernel.T @ (s * mesh.mu))
    return mesh.field(s - mesh.kernel @ c)


def ortho_residual(mesh: WulffMesh, S) -> np.ndarray:
    return mesh.kernel.T @ (mesh.values_of(S) * mesh.mu)


# ---------------------------------------------------------------------------
# a priori bounds


def apriori_bounds(mesh: WulffMesh, K, chunk: int = 512) -> Tuple[float, float]:
    """C0 bounds (m1, m2) on S from the isoperimetric/Diskant chain."""
    f = np.exp(-_log_k(mesh, K))
    n = mesh.n
    area = float(np.sum(mesh.mu))
    fw = f * mesh.mu
    I0 = float(np.sum(fw))
    I1 = np.inf
    for start in range(0, mesh.size, chunk):
        y = mesh.z[start:start + chunk]
        h = np.maximum(0.0, mesh.kernel @ y.T)      # G(z)(z, y) for each candidate y
        I1 = min(I1, float(np.min(fw @ h)))
    R_up = area ** (-1.0 / n) * I0 ** ((n + 1.0) / n) / I1
    r_low = area ** (-1.0 / n) * I1 ** ((n + 1.0) / n) / I0 / (n + 1.0)
    return 2.0 * r_low, 2.0 * R_up


def diagnostic_norms(mesh: WulffMesh, S) -> dict:
    d = differentiate(mesh, S)
    gi = mesh.g_inv
    grad = np.sqrt(np.einsum("ai,aij,aj->a", d.grad, gi, d.grad))
    H = gi @ d.hess
    hess = np.sqrt(np.abs(np.einsum("aij,aji->a", H, H)))
    return {
        "sup_S": float(np.max(np.abs(mesh.values_of(S)))),
        "sup_grad_S": float(np.max(grad)),
        "sup_hess_S": float(np.max(hess)),
    }


# ---------------------------------------------------------------------------
# Newton


def _bordered(J: sp.csr_matrix, B: np.ndarray, C: np.ndarray) -> sp.csc_matrix:
    k = B.shape[1]
    return sp.bmat([[J, sp.csr_matrix(B)], [sp.csr_matrix(C.T), sp.csr_matrix((k, k))]], format="csc")


def _newton(mesh, logk, S0, lam0, opts, report):
    """Bordered damped Newton.  Returns (state, lam, iterations)."""
    B = mesh.kernel
    C = mesh.kernel * mesh.mu[:, None]
    s = mesh.values_of(enforce_ortho(mesh, S0)).copy()
    lam = np.zeros(B.shape[1]) if lam0 is None else np.array(lam0, dtype=float)
    state = assemble_state(mesh, s)
    if not state.admissible:
        raise AdmissibilityLost("initial state is not admissible", report)

    def merit(st, lm):
        aug = _detres(mesh, st) + logk + B @ lm
        return float(np.max(np.abs(aug))), aug

    res, aug = merit(state, lam)
    for it in range(opts.max_newton + 1):
        report.history.append(res)
        if res <= opts.tol:
            state.residual_norm = res
            return state, lam, it
        if it == opts.max_newton:
            break
        J = log_jacobian(mesh, state)
        rhs = np.concatenate([-aug, -(C.T @ s)])
        try:
            sol = spla.splu(_bordered(J, B, C)).solve(rhs)
        except RuntimeError as exc:
            raise LinearSolveFailure(f"sparse factorisation failed: {exc}", report) from exc
        if not np.all(np.isfinite(sol)):
            raise LinearSolveFailure("non-finite Newton update", report)
        ds, dl = sol[: mesh.size], sol[mesh.size:]
        step = 1.0
        while True:
            trial = assemble_state(mesh, s + step * ds)
            if trial.admissible:
                tres, taug = merit(trial, lam + step * dl)
                if tres <= (1.0 - opts.sufficient_decrease * step) * res:
                    break
            step *= 0.5
            if step < opts.min_line_step:
                raise AdmissibilityLost(
                    f"no admissible decreasing step at Newton iteration {it}", report
                )
        s, lam, state, res, aug = s + step * ds, lam + step * dl, trial, tres, taug
        report.newton_iterations_total += 1
    raise MaxIterations(f"residual {res:.3e} after {opts.max_newton} Newton iterations", report)


def _finish(mesh, K, state, lam, report):
    S = enforce_ortho(mesh, state.S)
    state = assemble_state(mesh, S)
    raw = _detres(mesh, state) + _log_k(mesh, K)
    state.residual_norm = float(np.max(np.abs(raw + mesh.kernel @ lam)))
    report.converged = state.admissible
    report.final_residual_inf = state.residual_norm
    report.raw_residual_inf = float(np.max(np.abs(raw)))
    report.multipliers = lam
    report.ortho_residual = ortho_residual(mesh, S)
    report.bounds = apriori_bounds(mesh, K)
    report.diagnostic_norms = diagnostic_norms(mesh, S)
    return state, report


def newton_solve(mesh: WulffMesh, K, S0, opts: Optional[SolverOptions] = None):
    """Damped Newton from ``S0``; returns (state, report)."""
    opts = opts or SolverOptions()
    report = SolveReport()
    logk = _log_k(mesh, K)
    state, lam, _ = _newton(mesh, logk, S0, None, opts, report)
    return _finish(mesh, K, state, lam, report)


def closure_gate(mesh: WulffMesh, K, closure_tol: Optional[float] = None) -> np.ndarray:
    """Raise ClosureViolated unless int l^alpha / K dmu vanishes within tolerance."""
    f = np.exp(-_log_k(mesh, K))
    res = closure_residual(mesh, f)
    tol = 1e-6 * float(np.dot(f, mesh.mu)) if closure_tol is None else closure_tol
    worst = float(np.max(np.abs(res)))
    if worst > tol:
        raise ClosureViolated(
            f"closure residual {worst:.6g} exceeds tolerance {tol:.3g}", residual=res, tolerance=tol
        )
    return res


def continuation_solve(mesh: WulffMesh, K, opts: Optional[SolverOptions] = None):
    """Follow 1/K_t = t/K + (1 - t) from the Wulff shape (t = 0) to t = 1."""
    opts = opts or SolverOptions()
    closure_gate(mesh, K, opts.closure_tol)
    invK = np.exp(-_log_k(mesh, K))
    report = SolveReport()
    s = np.ones(mesh.size)
    lam = None
    t, dt = 0.0, opts.t_step_init
    if np.max(np.abs(invK - 1.0)) <= 1e-14:
        dt = 1.0   # the path is constant
    state = None
    while t < 1.0:
        t_new = min(1.0, t + dt)
        logk_t = -np.log(t_new * invK + (1.0 - t_new))
        try:
            state, lam_new, iters = _newton(mesh, logk_t, s, lam, opts, report)
        except SolverFailure as exc:
            log.debug("continuation step to t=%.6g failed: %s", t_new, exc)
            dt *= 0.5
            if dt < opts.min_t_step:
                raise ContinuationStalled(f"step size fell below {opts.min_t_step:g} at t={t:.6g}", report)
            continue
        report.continuation_steps.append((t_new, iters, state.residual_norm))
        t, s, lam = t_new, mesh.values_of(state.S), lam_new
        if iters <= 3:
            dt *= 2.0
    return _finish(mesh, K, state, lam, report)
