"""Acceptance criteria, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python3 tests/test_acceptance.py``.

Refinement criteria use a roundoff floor: a sequence passes if every step
shrinks by the required factor or both values are already below 1e-9.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from anisominkowski import (  # noqa: E402
    NormModel,
    apriori_bounds,
    assemble_state,
    body_curvature,
    build_mesh,
    closure_residual,
    continuation_solve,
    enforce_ortho,
    geometry_selfcheck,
    inequality_report,
    linearized_operator,
    newton_solve,
    reconstruct,
    self_adjointness_defect,
    verify_norm,
)
from anisominkowski.cli import main  # noqa: E402
from anisominkowski.config import ellipse_curvature as synthetic_curvature  # noqa: E402
from anisominkowski.solver import apply_u  # noqa: E402
from conftest import ACCEPTANCE_LINES, NORMS, cached_mesh, norm_by_name  # noqa: E402
from oracles import ellipse_curvature, ellipse_point, ellipse_support, smooth_field  # noqa: E402

FLOOR = 1e-9
CHECKS = ("minkowski_identity", "isoperimetric", "andrews_inner_radius", "c0_sandwich")


def record(k, title, ok, detail):
    line = f"[criterion {k}] {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def refines(values, factor=1.5):
    return all((a <= FLOOR and b <= FLOOR) or a >= factor * b for a, b in zip(values, values[1:]))


def fmt(values):
    return ", ".join(f"{v:.3g}" for v in values)


def theta(mesh):
    return np.arctan2(mesh.p[:, 1], mesh.p[:, 0])


def kernel_distance(mesh, a, b):
    """Sup distance between two fields modulo kernel components."""
    return float(np.abs(enforce_ortho(mesh, a).values - enforce_ortho(mesh, b).values).max())


def solve_ellipse(a, b, res):
    mesh = build_mesh(NormModel.euclidean(2), 1, res)
    t = theta(mesh)
    K = ellipse_curvature(t, a, b)
    state, report = continuation_solve(mesh, K)
    return mesh, K, enforce_ortho(mesh, state.S), report


def quartic_target(res):
    mesh = build_mesh(NormModel.quartic(0.2, 2), 1, res)
    S_star = 1 + 0.15 * np.cos(2 * theta(mesh))
    K_star = 1.0 / np.prod(assemble_state(mesh, S_star).principal_radii, axis=1)
    return mesh, S_star, K_star


def test_criterion_1_norm_contract():
    worst, details = 0.0, []
    ok = True
    rng = np.random.default_rng(0)
    for name in NORMS:
        for dim in (2, 3):
            model = norm_by_name(name, dim)
            rep = verify_norm(model, 1000, 0)
            resid = max(rep.euler_F, rep.euler_hess_F, rep.dual_on_wulff, rep.dual_of_gradient,
                        rep.inversion_dual, rep.inversion_primal, rep.max_Q_radial, rep.max_Q_asymmetry)
            worst = max(worst, resid)
            ok &= resid <= 1e-8 and rep.min_eig_G > 0
            if name != "quartic":
                Q = model.phi_derivatives(rng.normal(size=(1000, dim)))[3]
                ok &= bool(np.all(Q == 0.0))
            details.append(f"{name}{dim} min eig {rep.min_eig_G:.3g}")
    assert record(1, "norm contract", ok, f"worst residual {worst:.2g}; Q identically 0 for euclidean/quadratic; "
                  + "; ".join(details))


def test_criterion_2_wulff_fixed_point():
    errs = {}
    for name in NORMS:
        for n, res in ((1, 256), (2, 3)):
            mesh = cached_mesh(name, n, res)
            state, _ = continuation_solve(mesh, mesh.constant(1.0))
            errs[f"{name} n={n}"] = float(np.abs(enforce_ortho(mesh, state.S).values - 1).max())
    ok = max(errs.values()) <= 1e-6
    assert record(2, "Wulff shape fixed point", ok, "; ".join(f"{k}: {v:.2g}" for k, v in errs.items()))


def test_criterion_3_ellipse_roundtrip():
    mesh, K, S, _ = solve_ellipse(2, 1, 512)
    t = theta(mesh)
    s_err = kernel_distance(mesh, S, ellipse_support(t, 2, 1))
    body = reconstruct(mesh, S)
    diff = body.X - ellipse_point(t, 2, 1)
    curve_err = float(np.abs(diff - diff.mean(axis=0)).max())
    rt = body_curvature(body, mesh.model, K).roundtrip_error
    ok = s_err <= 1e-4 and curve_err <= 1e-4 and rt <= 1e-2
    assert record(3, "ellipse roundtrip", ok,
                  f"support {s_err:.2g}, curve {curve_err:.2g}, curvature roundtrip {rt:.2g}")


def test_criterion_4_kernel_identity():
    ok, parts = True, []
    for name in NORMS:
        lin, ident = [], []
        for res in (128, 256, 512):
            mesh = cached_mesh(name, 1, res)
            st = assemble_state(mesh, 1 + 0.15 * np.cos(2 * theta(mesh)))
            L = linearized_operator(mesh, st)
            lin.append(max(np.abs(L @ mesh.kernel[:, a]).max() for a in range(2)))
            ident.append(max(np.abs(apply_u(mesh, mesh.kernel[:, a])).max() for a in range(2)))
        ok &= refines(lin) and refines(ident)
        parts.append(f"{name}: L l [{fmt(lin)}], identity [{fmt(ident)}]")
    assert record(4, "kernel identity", ok, "; ".join(parts))


def test_criterion_5_self_adjointness():
    ok, parts = True, []
    for name in NORMS:
        defects = []
        for res in (64, 128, 256):
            mesh = cached_mesh(name, 1, res)
            t = theta(mesh)
            st = assemble_state(mesh, 1 + 0.15 * np.cos(2 * t))
            defects.append(self_adjointness_defect(mesh, st, smooth_field(t, 11), smooth_field(t, 12)))
        ok &= refines(defects)
        parts.append(f"{name} [{fmt(defects)}]")
    assert record(5, "self-adjointness", ok, "; ".join(parts))


def test_criterion_6_closure_gate(tmp_path):
    mesh = build_mesh(NormModel.euclidean(2), 1, 256)
    t = theta(mesh)
    res = closure_residual(mesh, 1 + 0.5 * np.cos(t))
    kfile = tmp_path / "k.csv"
    kfile.write_text("".join(f"{i},{float(1 / (1 + 0.5 * np.cos(v)))!r}\n" for i, v in enumerate(t)))
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mesh.resolution = 256\ncurvature.source = file\ncurvature.file = k.csv\noutput.dir = out\n")
    code = main(["--config", str(cfg)])
    ok = abs(res[0] - 0.5 * np.pi) <= 1e-3 and abs(res[1]) <= 1e-3 and code == 3
    assert record(6, "closure gate", ok, f"residual ({res[0]:.8f}, {res[1]:.2g}) vs pi/2, exit code {code}")


def test_criterion_7_apriori_sandwich():
    mesh = build_mesh(NormModel.euclidean(2), 1, 512)
    m1, m2 = apriori_bounds(mesh, mesh.constant(1.0))
    # proof chain on the unit circle: |W| = I0 = 2 pi, I1 = min_y int <z, y>_+ = 2
    area, I0, I1, n = 2 * np.pi, 2 * np.pi, 2.0, 1
    e1 = 2 * area ** (-1 / n) * I1 ** ((n + 1) / n) / I0 / (n + 1)
    e2 = 2 * area ** (-1 / n) * I0 ** ((n + 1) / n) / I1
    ok = abs(m1 - e1) <= 1e-3 and abs(m2 - e2) <= 1e-3
    cases = []
    mesh_e, K_e, S_e, _ = solve_ellipse(2, 1, 256)
    cases.append(("ellipse", mesh_e, K_e, S_e.values))
    mesh_q, _, K_q = quartic_target(256)
    cases.append(("quartic", mesh_q, K_q, enforce_ortho(mesh_q, continuation_solve(mesh_q, K_q)[0].S).values))
    mesh_3 = build_mesh(NormModel.euclidean(3), 2, 3)
    K_3 = synthetic_curvature(mesh_3, (1.5, 1.0, 0.8))[0]
    cases.append(("ellipsoid", mesh_3, K_3, enforce_ortho(mesh_3, continuation_solve(mesh_3, K_3)[0].S).values))
    parts = []
    for label, msh, K, S in cases:
        b1, b2 = apriori_bounds(msh, K)
        inside = b1 - 1e-2 <= S.min() and S.max() <= b2 + 1e-2
        ok &= inside
        parts.append(f"{label} {b1:.3g} <= [{S.min():.3g}, {S.max():.3g}] <= {b2:.3g}")
    assert record(7, "a priori sandwich", ok,
                  f"circle m1 {m1:.6f} (formula {e1:.6f} = 1/pi^2; the quoted 2/pi^2 drops the 1/(n+1) factor), "
                  f"m2 {m2:.6f} (formula {e2:.6f}); "
                  + "; ".join(parts))


def test_criterion_8_inequalities():
    ok, parts = True, []
    for name in NORMS:
        for n, res in ((1, 256), (2, 3)):
            mesh = cached_mesh(name, n, res)
            one = mesh.constant(1.0)
            rep = inequality_report(mesh, one, reconstruct(mesh, one), one)
            ok &= abs(rep["isoperimetric"]["margin"]) <= 1e-2 and all(rep[c]["pass"] for c in CHECKS)
            parts.append(f"W {name} n={n} margin {rep['isoperimetric']['margin']:.2g}")
    mesh, K, S, _ = solve_ellipse(3, 1, 512)
    rep = inequality_report(mesh, S, reconstruct(mesh, S), K)
    ok &= rep["isoperimetric"]["margin"] >= 0.05 and all(rep[c]["pass"] for c in CHECKS)
    mink = abs(rep["minkowski_identity"]["lhs"] / rep["minkowski_identity"]["rhs"] - 1)
    parts.append(f"a/b=3 ellipse margin {rep['isoperimetric']['margin']:.3f}, Minkowski rel {mink:.2g}, "
                 f"Andrews r {rep['andrews_inner_radius']['lhs']:.4f} >= {rep['andrews_inner_radius']['rhs']:.4f}")
    mesh_q, _, K_q = quartic_target(256)
    S_q = enforce_ortho(mesh_q, continuation_solve(mesh_q, K_q)[0].S)
    rep = inequality_report(mesh_q, S_q, reconstruct(mesh_q, S_q), K_q)
    ok &= all(rep[c]["pass"] for c in CHECKS)
    parts.append(f"quartic solve margin {rep['isoperimetric']['margin']:.3f}")
    assert record(8, "inequality suite", ok, "; ".join(parts))


def test_criterion_9_uniqueness():
    mesh, K, S_a, _ = solve_ellipse(2, 1, 512)
    t = theta(mesh)
    S_true = ellipse_support(t, 2, 1)
    start = S_true + 0.2 * mesh.kernel[:, 0] + 0.01 * np.cos(3 * t)
    assert assemble_state(mesh, start).admissible
    state_b, _ = newton_solve(mesh, K, start)
    S_b = enforce_ortho(mesh, state_b.S)
    gap = float(np.abs(S_a.values - S_b.values).max())
    disc = kernel_distance(mesh, S_a, S_true)
    ok = gap <= 10 * max(disc, FLOOR)
    assert record(9, "uniqueness up to translation", ok,
                  f"two starts differ by {gap:.2g}, discretisation error {disc:.2g}")


def test_criterion_10_anisotropic_solve():
    mesh, S_star, K_star = quartic_target(512)
    state, report = continuation_solve(mesh, K_star)
    err = kernel_distance(mesh, state.S, S_star)
    ok = err <= 1e-5 and report.converged
    assert record(10, "anisotropic solve", ok,
                  f"quartic delta=0.2 res 512: |S - S*| mod kernel {err:.2g}, "
                  f"{report.newton_iterations_total} Newton iterations")


def test_criterion_11_geometry_selfcheck():
    keys = ("gauss_residual", "measure_density_residual", "q_symmetry_residual", "codazzi_q_residual")
    ok, parts = True, []
    for name in NORMS:
        reps = [geometry_selfcheck(cached_mesh(name, 2, s)).as_dict() for s in (3, 4)]
        for key in keys:
            seq = [r[key] for r in reps]
            ok &= refines(seq)
            parts.append(f"{name} {key.replace('_residual', '')} [{fmt(seq)}]")
    assert record(11, "geometry selfcheck", ok, "; ".join(parts))


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
