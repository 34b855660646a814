import dataclasses

import numpy as np
import pytest
import scipy.linalg as sl

from anisominkowski import (
    AdmissibilityLost,
    ClosureViolated,
    ContinuationStalled,
    Inadmissible,
    MaxIterations,
    MeshMismatch,
    NonPositiveK,
    NormModel,
    SingularGram,
    SolverOptions,
    apriori_bounds,
    assemble_state,
    build_mesh,
    continuation_solve,
    enforce_ortho,
    linearized_operator,
    newton_solve,
    residual_field,
    self_adjointness_defect,
)
from anisominkowski.solver import _bordered, log_jacobian, ortho_residual
from conftest import NORMS
from oracles import decay_ratios, ellipse_curvature, ellipse_support, smooth_field


def theta(mesh):
    return np.arctan2(mesh.p[:, 1], mesh.p[:, 0])


@pytest.mark.parametrize("name", NORMS)
@pytest.mark.parametrize("n,res", [(1, 64), (2, 2)])
def test_unit_support_gives_metric(mesh_factory, name, n, res):
    mesh = mesh_factory(name, n, res)
    st = assemble_state(mesh, mesh.constant(1.0))
    assert st.admissible
    np.testing.assert_allclose(st.U, mesh.g, atol=1e-9)
    np.testing.assert_allclose(st.principal_radii, 1.0, atol=1e-9)


def test_translated_unit_support(mesh_factory):
    errs = []
    for res in (128, 256):
        mesh = mesh_factory("quartic", 1, res)
        st = assemble_state(mesh, 1 + 0.3 * mesh.kernel[:, 0])
        errs.append(np.abs(st.U - mesh.g).max())
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 4


def test_ellipse_principal_radius():
    mesh = build_mesh(NormModel.euclidean(2), 1, 256)
    S = ellipse_support(theta(mesh), 2, 1)
    st = assemble_state(mesh, S)
    assert np.abs(st.principal_radii[:, 0] - 4 / S**3).max() < 1e-5


def test_inadmissible_is_flagged_not_raised():
    mesh = build_mesh(NormModel.euclidean(2), 1, 32)
    st = assemble_state(mesh, mesh.constant(-1.0))
    assert not st.admissible
    with pytest.raises(Inadmissible):
        residual_field(mesh, st, mesh.constant(1.0))
    with pytest.raises(Inadmissible):
        linearized_operator(mesh, st)


def test_residual_examples():
    mesh = build_mesh(NormModel.quartic(0.2, 2), 1, 64)
    st = assemble_state(mesh, mesh.constant(1.0))
    assert np.abs(residual_field(mesh, st, mesh.constant(1.0)).values).max() <= 1e-12
    np.testing.assert_allclose(residual_field(mesh, st, mesh.constant(2.0)).values, np.log(2.0), atol=1e-12)
    with pytest.raises(NonPositiveK):
        residual_field(mesh, st, mesh.field(np.where(np.arange(64) == 3, 0.0, 1.0)))
    other = build_mesh(NormModel.quartic(0.2, 2), 1, 32)
    with pytest.raises(MeshMismatch):
        assemble_state(mesh, other.constant(1.0))


def test_ellipse_residual_second_order():
    errs = []
    for res in (64, 128):
        mesh = build_mesh(NormModel.euclidean(2), 1, res)
        t = theta(mesh)
        st = assemble_state(mesh, ellipse_support(t, 2, 1))
        errs.append(np.abs(residual_field(mesh, st, ellipse_curvature(t, 2, 1)).values).max())
    assert errs[0] / errs[1] >= 4


def test_linearization_on_circle_is_laplacian_plus_n():
    mesh = build_mesh(NormModel.euclidean(2), 1, 128)
    L = linearized_operator(mesh, assemble_state(mesh, mesh.constant(1.0)))
    v = np.cos(2 * theta(mesh))
    assert np.abs(L @ v + 3 * v).max() < 1e-5


def test_linearization_on_sphere():
    errs = []
    for subdiv in (3, 4):
        mesh = build_mesh(NormModel.euclidean(3), 2, subdiv)
        L = linearized_operator(mesh, assemble_state(mesh, mesh.constant(1.0)))
        x, y, z = mesh.p.T
        v = x * y + 0.5 * (z * z - x * x)    # degree-2 harmonic, L v = -4 v
        errs.append(np.abs(L @ v + 4 * v).max())
    assert errs[1] < 2e-3 and errs[0] / errs[1] > 4


@pytest.mark.parametrize("n,res", [(1, 256), (2, 3)])
def test_linearization_matches_finite_differences(n, res):
    mesh = build_mesh(NormModel.quartic(0.2, n + 1), n, res)
    if n == 1:
        t = theta(mesh)
        S = 1 + 0.15 * np.cos(2 * t)
        dirs = [smooth_field(t, seed) for seed in range(20)]
    else:
        S = 1 + 0.1 * mesh.p[:, 0] * mesh.p[:, 1]
        rng = np.random.default_rng(0)
        dirs = [mesh.p @ rng.normal(size=3) + (mesh.p @ rng.normal(size=3)) ** 2 for _ in range(20)]
    st = assemble_state(mesh, S)
    L = linearized_operator(mesh, st)
    det0 = np.prod(st.principal_radii, axis=1)
    eps = 1e-6
    for v in dirs:
        fd = (np.prod(assemble_state(mesh, S + eps * v).principal_radii, axis=1) - det0) / eps
        Lv = L @ v
        assert np.abs(fd - Lv).max() <= 1e-4 * np.abs(Lv).max()


def test_kernel_singular_values():
    mesh = build_mesh(NormModel.quartic(0.2, 2), 1, 256)
    st = assemble_state(mesh, 1 + 0.15 * np.cos(2 * theta(mesh)))
    L = linearized_operator(mesh, st).toarray()
    _, s, Vt = np.linalg.svd(L)
    small = s < 10 * mesh.spacing**2
    assert small.sum() == 2
    Q, _ = np.linalg.qr(mesh.kernel)
    assert np.max(sl.subspace_angles(Q, Vt[small].T)) <= 0.1
    # the bordered system is nonsingular
    A = _bordered(log_jacobian(mesh, st), mesh.kernel, mesh.kernel * mesh.mu[:, None]).toarray()
    assert np.linalg.cond(A) < 1e12


def test_self_adjointness():
    defects = []
    for res in (64, 128, 256):
        mesh = build_mesh(NormModel.quartic(0.2, 2), 1, res)
        t = theta(mesh)
        st = assemble_state(mesh, 1 + 0.15 * np.cos(2 * t))
        v, w = smooth_field(t, 11), smooth_field(t, 12)
        assert self_adjointness_defect(mesh, st, v, v) == 0.0
        defects.append(self_adjointness_defect(mesh, st, v, w))
        # v = l^1: bounded by |w|_inf |L l^1|_1
        l1 = mesh.kernel[:, 0]
        bound = np.abs(w).max() * np.sum(np.abs(linearized_operator(mesh, st) @ l1) * mesh.mu)
        assert self_adjointness_defect(mesh, st, l1, w) <= bound + 1e-12
    assert all(r >= 1.5 for r in decay_ratios(defects)), defects


def test_enforce_ortho():
    mesh = build_mesh(NormModel.euclidean(2), 1, 256)
    one = enforce_ortho(mesh, mesh.constant(1.0))
    assert np.abs(one.values - 1).max() <= 1e-12
    S = enforce_ortho(mesh, 1 + 0.3 * mesh.kernel[:, 0])
    assert np.abs(S.values - 1).max() <= 1e-6
    f = 1 + 0.2 * np.sin(theta(mesh)) + 0.1 * np.cos(3 * theta(mesh))
    once = enforce_ortho(mesh, f)
    np.testing.assert_allclose(enforce_ortho(mesh, once).values, once.values, atol=1e-12)
    assert np.abs(ortho_residual(mesh, once)).max() <= 1e-12


def test_singular_gram():
    mesh = build_mesh(NormModel.euclidean(2), 1, 16)
    bad = dataclasses.replace(mesh, kernel=np.zeros_like(mesh.kernel))
    with pytest.raises(SingularGram):
        enforce_ortho(bad, bad.constant(1.0))


def test_newton_from_scaled_wulff():
    mesh = build_mesh(NormModel.euclidean(2), 1, 128)
    st, rep = newton_solve(mesh, mesh.constant(1.0), mesh.constant(1.05))
    assert rep.converged and rep.newton_iterations_total <= 5
    assert np.abs(st.S.values - 1).max() <= 1e-10
    # quadratic convergence: each residual is far below the previous one
    h = rep.history
    assert all(h[i + 1] <= 10 * h[i] ** 2 for i in range(len(h) - 1) if h[i] < 0.1)


def test_newton_rejects_inadmissible_start():
    mesh = build_mesh(NormModel.euclidean(2), 1, 64)
    with pytest.raises(AdmissibilityLost) as err:
        newton_solve(mesh, mesh.constant(1.0), mesh.constant(-1.0))
    assert err.value.report.newton_iterations_total == 0


def test_newton_iteration_cap():
    mesh = build_mesh(NormModel.euclidean(2), 1, 128)
    K = ellipse_curvature(theta(mesh), 2, 1)
    with pytest.raises(MaxIterations):
        newton_solve(mesh, K, mesh.constant(1.0), SolverOptions(max_newton=1))


def test_newton_ellipse():
    mesh = build_mesh(NormModel.euclidean(2), 1, 512)
    t = theta(mesh)
    st, rep = newton_solve(mesh, ellipse_curvature(t, 2, 1), mesh.constant(1.0))
    assert rep.converged and st.admissible
    ref = enforce_ortho(mesh, ellipse_support(t, 2, 1)).values
    assert np.abs(st.S.values - ref).max() <= 1e-4
    # accepted steps never increase the residual
    assert all(b < a for a, b in zip(rep.history, rep.history[1:]))


def test_newton_on_sphere():
    mesh = build_mesh(NormModel.quartic(0.2, 3), 2, 2)
    st, rep = newton_solve(mesh, mesh.constant(1.0), mesh.constant(0.9))
    assert rep.converged
    assert np.abs(st.S.values - 1).max() <= 1e-8


def test_continuation_trivial():
    mesh = build_mesh(NormModel.quartic(0.2, 2), 1, 64)
    st, rep = continuation_solve(mesh, mesh.constant(1.0))
    assert len(rep.continuation_steps) == 1 and rep.continuation_steps[0][0] == 1.0
    assert np.abs(st.S.values - 1).max() <= 1e-12


def test_continuation_eccentric_ellipse():
    mesh = build_mesh(NormModel.euclidean(2), 1, 512)
    t = theta(mesh)
    st, rep = continuation_solve(mesh, ellipse_curvature(t, 3, 1))
    assert rep.converged and rep.final_residual_inf <= 1e-8
    assert [s[0] for s in rep.continuation_steps][-1] == 1.0
    ref = enforce_ortho(mesh, ellipse_support(t, 3, 1)).values
    assert np.abs(st.S.values - ref).max() <= 1e-6
    m1, m2 = rep.bounds
    assert m1 - 1e-2 <= st.S.values.min() and st.S.values.max() <= m2 + 1e-2
    assert set(rep.diagnostic_norms) == {"sup_S", "sup_grad_S", "sup_hess_S"}


def test_continuation_closure_gate():
    mesh = build_mesh(NormModel.euclidean(2), 1, 256)
    K = 1.0 / (1.0 + 0.5 * np.cos(theta(mesh)))
    with pytest.raises(ClosureViolated) as err:
        continuation_solve(mesh, K)
    assert err.value.residual[0] == pytest.approx(0.5 * np.pi, abs=1e-3)


def test_continuation_stalls():
    mesh = build_mesh(NormModel.euclidean(2), 1, 128)
    K = ellipse_curvature(theta(mesh), 3, 1)
    opts = SolverOptions(max_newton=1, min_t_step=0.1)
    with pytest.raises(ContinuationStalled):
        continuation_solve(mesh, K, opts)


def test_apriori_bounds_circle():
    mesh = build_mesh(NormModel.euclidean(2), 1, 512)
    m1, m2 = apriori_bounds(mesh, mesh.constant(1.0))
    # |W| = I0 = 2 pi, I1 = 2: m1 = 2 * (1/2) * 4 / (2 pi)^2
    assert m1 == pytest.approx(1 / np.pi**2, abs=1e-3)
    assert m2 == pytest.approx(2 * np.pi, abs=1e-3)


@pytest.mark.parametrize("n,res", [(1, 128), (2, 2)])
def test_apriori_bounds_scaling(n, res):
    mesh = build_mesh(NormModel.quartic(0.2, n + 1), n, res)
    K = 1 + 0.3 * mesh.p[:, 0] ** 2
    c = 3.7
    m1, m2 = apriori_bounds(mesh, K)
    s1, s2 = apriori_bounds(mesh, c * K)
    assert s1 == pytest.approx(m1 * c ** (-1.0 / n), rel=1e-12)
    assert s2 == pytest.approx(m2 * c ** (-1.0 / n), rel=1e-12)
    with pytest.raises(NonPositiveK):
        apriori_bounds(mesh, -K)
