import math

import numpy as np
import pytest
import scipy.sparse as sp

from killingfem.analysis import eoc, error_norms
from killingfem.assembly import assemble_b, assemble_h1_scalar, assemble_rhs, assemble_strain
from killingfem.errors import DegeneracyError, SolverError
from killingfem.fespace import build_space, interpolate
from killingfem.fields import constant_field
from killingfem.kernel import discrete_kernel, empty_kernel, project_kernel, rigid_motion_basis
from killingfem.mesh import DomainSpec, build_hierarchy, generate_mesh
from killingfem.problems import deforming_ellipse_problem, rotating_ellipse_problem, synthetic_problem
from killingfem.saddle import (SolverSession, build_system, guard_degeneracy, nested_dissection_order, solve,
                               solve_problem)


def _pieces(problem, level=1, k=1):
    mesh = build_hierarchy(problem.domain, 1.0, level)[-1]
    ss = build_space(mesh, k)
    vs = ss.vector()
    A = assemble_strain(vs)
    B = assemble_b(ss, vs, problem.field, problem.t)
    M1 = assemble_h1_scalar(ss)
    Mv = sp.block_diag([M1, M1], format="csr")
    kb = discrete_kernel(B, M1, Mv, rigid_motion_basis(vs))
    g, c = assemble_rhs(ss, vs, problem.field, problem.t, None, kb.vectors)
    return A, B, M1, Mv, kb, g, c, vs


def test_unbordered_block_shape():
    A, B, M1, Mv, kb, g, c, vs = _pieces(rotating_ellipse_problem())
    assert kb.dim == 0
    system = build_system(A, B, Mv, kb, g, c)
    mat = system.matrix()
    assert mat.shape == (A.shape[0] + B.shape[0],) * 2
    assert abs(mat - mat.T).max() <= 1e-12 * abs(mat).max()


def test_border_column():
    A, B, M1, Mv, kb, g, c, vs = _pieces(synthetic_problem())
    system = build_system(A, B, Mv, kb, g, c)
    assert system.m == 1
    mat = system.matrix()
    n = A.shape[0] + B.shape[0]
    col = mat[:, n].toarray().ravel()
    np.testing.assert_allclose(col[:A.shape[0]], Mv @ kb.vectors[:, 0], atol=1e-15)
    assert np.all(col[A.shape[0]:] == 0)
    # the kernel vector is a multiple of the interpolated constant direction zperp
    w = kb.vectors[:, 0]
    zp = interpolate(vs, synthetic_problem().extras["zperp"])
    zp = zp / math.sqrt(zp @ Mv @ zp)
    assert min(np.abs(w - zp).max(), np.abs(w + zp).max()) <= 1e-8
    assert abs(mat - mat.T).max() <= 1e-12 * abs(mat).max()


def test_build_system_dimension_checks():
    A, B, M1, Mv, kb, g, c, vs = _pieces(synthetic_problem())
    with pytest.raises(ValueError):
        build_system(A, B, Mv, kb, g[:-1], c)
    with pytest.raises(ValueError):
        build_system(A, B[:, :-1], Mv, kb, g, c)
    with pytest.raises(ValueError):
        build_system(A, B, Mv, kb, g, np.zeros(2))


def test_zero_data():
    zero = constant_field((1.0, 2.0), lambda x, t=0.0: np.zeros(len(x)), lambda x, t=0.0: np.zeros((len(x), 2)))
    mesh = generate_mesh(DomainSpec.square(), 1.0)
    sol = SolverSession(mesh, 2).solve(zero)
    assert np.all(np.abs(sol.u) <= 1e-14) and np.all(np.abs(sol.lam) <= 1e-14)
    assert np.all(np.abs(sol.alpha) <= 1e-14)


def test_rigid_rotation_recovered():
    prob = rotating_ellipse_problem()
    mesh = build_hierarchy(prob.domain, 1.0, 1)[-1]
    sol = solve_problem(prob, mesh, 1, boost=2)
    uI = interpolate(sol.vspace, lambda p: prob.exact_u(p))
    M1 = sol.operators["M1"]
    Mv = sol.operators["Mv"]
    d = sol.u - uI
    assert math.sqrt(d @ Mv @ d) <= 1e-8
    assert math.sqrt(sol.lam @ M1 @ sol.lam) <= 1e-8
    assert sol.info["energy"] <= 1e-10
    assert sol.kernel.dim == 0
    np.testing.assert_allclose(uI[:3], [0.1 * v for v in mesh.vertices[:3, 1]], atol=1e-15)


def test_rigid_special_case_of_synthetic():
    # F(s) = s with zhat = (1, 0) on a symmetric domain: u = (y, -x), zero strain
    prob = synthetic_problem((1.0, 0.0), "linear")
    sol = solve_problem(prob, generate_mesh(prob.domain, 1.0), 1)
    assert sol.info["energy"] <= 1e-20
    uI = interpolate(sol.vspace, lambda p: np.column_stack([p[:, 1], -p[:, 0]]))
    assert np.abs(sol.u - uI).max() <= 1e-12


def test_positive_energy_cos():
    prob = synthetic_problem()
    sol = solve_problem(prob, build_hierarchy(prob.domain, 1.0, 2)[-1], 2)
    assert sol.info["energy"] > 0.01
    assert sol.info["ratio"] > 0


@pytest.mark.parametrize("prob", [synthetic_problem(), deforming_ellipse_problem("slot", 0.3)],
                         ids=["synthetic", "ellipse"])
@pytest.mark.parametrize("k", [1, 2, 3])
def test_residuals_and_alpha(prob, k):
    sol = solve_problem(prob, build_hierarchy(prob.domain, 1.0, 1)[-1], k)
    assert max(sol.residuals.values()) <= 1e-9 * sol.scale
    assert np.all(np.abs(sol.alpha) <= 1e-10)


def test_orderings_agree():
    A, B, M1, Mv, kb, g, c, vs = _pieces(deforming_ellipse_problem("slot", 0.6), k=2)
    system = build_system(A, B, Mv, kb, g, c)
    s1, s2 = solve(system, "nd"), solve(system, "colamd")
    assert s1.info["ordering"] == "nd" and s2.info["ordering"] == "colamd"
    np.testing.assert_allclose(s1.u, s2.u, atol=1e-9 * np.abs(s1.u).max())
    np.testing.assert_allclose(s1.lam, s2.lam, atol=1e-9 * np.abs(s1.lam).max())
    perm = nested_dissection_order(system)
    assert np.array_equal(np.sort(perm), np.arange(system.matrix().shape[0]))
    with pytest.raises(ValueError):
        solve(system, "amd")


def test_bordered_vs_projected_solve():
    """Solve with a perturbed border r = Mv w + noise, then restore the kernel component."""
    A, B, M1, Mv, kb, g, c, vs = _pieces(synthetic_problem(), level=2, k=2)
    ref = solve(build_system(A, B, Mv, kb, g, c))
    rng = np.random.default_rng(7)
    N = Mv @ kb.vectors + 0.3 * rng.normal(size=kb.vectors.shape)
    from killingfem.saddle import SaddleSystem
    alt = solve(SaddleSystem(A=A, B=B, N=N, g=g, c=rng.normal(size=1)))
    proj, rest = project_kernel(alt.u, kb, Mv)
    u = rest + kb.vectors @ c
    scale = np.abs(ref.u).max()
    assert np.abs(u - ref.u).max() <= 1e-8 * scale
    assert np.abs(alt.lam - ref.lam).max() <= 1e-8 * np.abs(ref.lam).max()


def test_lambda_unique_under_dof_permutation():
    A, B, M1, Mv, kb, g, c, vs = _pieces(synthetic_problem(), level=1, k=2)
    ref = solve(build_system(A, B, Mv, kb, g, c))
    rng = np.random.default_rng(11)
    ns = vs.nscalar
    p = rng.permutation(ns)
    pv = np.concatenate([p, p + ns])
    P = sp.identity(ns, format="csr")[p]
    Pv = sp.identity(2 * ns, format="csr")[pv]
    kbp = type(kb)(vectors=kb.vectors[pv], singular_values=kb.singular_values, tau=kb.tau)
    sol = solve(build_system(Pv @ A @ Pv.T, P @ B @ Pv.T, Pv @ Mv @ Pv.T, kbp, g[p], c))
    lam = np.empty(ns)
    lam[p] = sol.lam
    u = np.empty(2 * ns)
    u[pv] = sol.u
    assert np.abs(lam - ref.lam).max() <= 1e-9 * np.abs(ref.lam).max()
    assert np.abs(u - ref.u).max() <= 1e-9 * np.abs(ref.u).max()


def test_missing_kernel_is_solver_error():
    # without the border the saddle matrix is singular
    A, B, M1, Mv, kb, g, c, vs = _pieces(synthetic_problem(), level=1, k=1)
    system = build_system(A, B, Mv, empty_kernel(vs.ndofs), g, np.zeros(0))
    with pytest.raises(SolverError, match="tau"):
        solve(system)


def test_degeneracy_guard():
    prob = deforming_ellipse_problem("critical", 0.0)
    mesh = generate_mesh(prob.domain, 1.0)
    with pytest.raises(DegeneracyError):
        solve_problem(prob, mesh, 1)
    with pytest.warns(RuntimeWarning):
        guard_degeneracy(prob, mesh, 0.0, 2, policy="warn")
    assert guard_degeneracy(synthetic_problem(), mesh, 0.0, 2) is None


def test_session_reuse_matches_fresh_solve():
    prob = deforming_ellipse_problem("slot", 0.0)
    mesh = build_hierarchy(prob.domain, 1.0, 1)[-1]
    session = SolverSession(mesh, 2)
    for t in (0.0, 0.5):
        a = session.solve(prob.field, t)
        b = solve_problem(deforming_ellipse_problem("slot", t), mesh, 2)
        np.testing.assert_array_equal(a.u, b.u)
        assert b.info["t"] == t and b.info["min_grad_phi"] >= 0.1
    summary = a.summary()
    assert summary["kernel"]["dim"] == 0 and summary["k"] == 2


def test_synthetic_k2_rate():
    prob = synthetic_problem()
    errs = []
    for mesh in build_hierarchy(prob.domain, 1.0, 3):
        sol = solve_problem(prob, mesh, 2)
        errs.append(error_norms(sol, prob)["err_u_h1"])
    assert eoc(errs)[-1] == pytest.approx(2.0, abs=0.2)
