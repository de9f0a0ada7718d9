"""GMRES and preconditioner checks against dense LU."""

import numpy as np
import pytest
import scipy.sparse as sp

from phasefrac.fem import build_dof_map, condense_system, constraint_operator
from phasefrac.linsolve import (
    GmresSettings,
    build_preconditioner,
    gmres,
    solve_block_triangular,
)
from phasefrac.material import Assembler, MaterialParams
from phasefrac.mesh import build_rectangle_mesh


def well_conditioned(rng, n):
    a = rng.standard_normal((n, n))
    return sp.csr_matrix(a + n * np.eye(n))


def test_identity_converges_immediately():
    mat = sp.eye(8, format="csr")
    b = np.arange(8.0)
    res = gmres(mat, b, GmresSettings(preconditioner="none"))
    assert res.converged
    assert res.n_iters <= 1
    assert np.allclose(res.x, b)


def test_zero_rhs_returns_zero():
    mat = sp.eye(5, format="csr")
    res = gmres(mat, np.zeros(5))
    assert res.converged and res.n_iters == 0
    assert np.all(res.x == 0.0)


def test_diagonal_system_exact():
    d = np.array([2.0, 4.0, 0.5, 8.0])
    mat = sp.diags(d).tocsr()
    b = np.array([1.0, 1.0, 1.0, 1.0])
    res = gmres(mat, b, GmresSettings(preconditioner="jacobi"))
    assert res.converged
    assert np.allclose(res.x, 1.0 / d, atol=1e-12)


def test_gmres_matches_dense_lu_on_random_systems():
    rng = np.random.default_rng(31)
    settings = GmresSettings(rel_tol=1e-12, preconditioner="none", restart=60)
    for _ in range(30):
        n = rng.integers(5, 50)
        mat = well_conditioned(rng, int(n))
        b = rng.standard_normal(int(n))
        ref = np.linalg.solve(mat.toarray(), b)
        res = gmres(mat, b, settings)
        assert res.converged
        assert np.linalg.norm(res.x - ref) <= 1e-10 * max(1.0, np.linalg.norm(ref))


def test_residual_history_monotone_within_cycle():
    rng = np.random.default_rng(32)
    mat = well_conditioned(rng, 40)
    b = rng.standard_normal(40)
    res = gmres(mat, b, GmresSettings(preconditioner="none", restart=60))
    hist = np.array(res.residuals)
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])


def test_final_residual_meets_requested_tolerance():
    rng = np.random.default_rng(33)
    mat = well_conditioned(rng, 30)
    b = rng.standard_normal(30)
    for kind in ("none", "jacobi", "ilu0"):
        res = gmres(mat, b, GmresSettings(rel_tol=1e-9, preconditioner=kind))
        assert res.converged
        r = np.linalg.norm(b - mat @ res.x)
        assert r <= 1e-9 * np.linalg.norm(b) * (1.0 + 1e-6)


def test_jacobi_preconditioner_exact_on_diagonal():
    d = np.array([3.0, -2.0, 5.0])
    apply = build_preconditioner(sp.diags(d).tocsr(), "jacobi")
    y = np.array([6.0, 4.0, 10.0])
    assert np.allclose(apply(y), y / d)


def test_unknown_preconditioner_rejected():
    with pytest.raises(ValueError, match="preconditioner"):
        build_preconditioner(sp.eye(3).tocsr(), "amg")


def sneddon_phi_block():
    # small pressure-driven setup; the trailing block of the Jacobian is
    # the screened-Laplacian-like phase-field operator
    mesh = build_rectangle_mesh((-1.0, -1.0), (2.0, 2.0), (8, 8))
    dofmap = build_dof_map(mesh)
    params = MaterialParams(
        mu=0.42, lam=0.28, gc=1.0, eps=0.1, kappa=1e-10,
        pressure=1e-3, split="none",
    )
    asm = Assembler(mesh, dofmap, params)
    n = dofmap.n_nodes
    rng = np.random.default_rng(34)
    state = np.empty(3 * n)
    state[: 2 * n] = 1e-3 * rng.standard_normal(2 * n)
    state[2 * n:] = rng.uniform(0.5, 1.0, n)
    matrix, rhs = asm.system(state, state[2 * n:].copy())
    return matrix.tocsr()[2 * n:, 2 * n:], rhs[2 * n:]


def test_preconditioning_reduces_iterations_on_phi_block():
    block, rhs = sneddon_phi_block()
    plain = gmres(block, rhs, GmresSettings(rel_tol=1e-10, preconditioner="none"))
    ilu = gmres(block, rhs, GmresSettings(rel_tol=1e-10, preconditioner="ilu0"))
    assert plain.converged and ilu.converged
    assert ilu.n_iters <= plain.n_iters


def test_preconditioned_and_plain_solutions_agree():
    block, rhs = sneddon_phi_block()
    ref = gmres(block, rhs, GmresSettings(rel_tol=1e-12, preconditioner="none"))
    for kind in ("jacobi", "ilu0"):
        res = gmres(block, rhs, GmresSettings(rel_tol=1e-12, preconditioner=kind))
        denom = np.linalg.norm(ref.x)
        assert np.linalg.norm(res.x - ref.x) <= 1e-8 * denom


def test_max_iterations_reported_as_failure():
    rng = np.random.default_rng(35)
    n = 60
    # shifted skew matrix needs many iterations; cap far below that
    a = rng.standard_normal((n, n))
    mat = sp.csr_matrix(a @ a.T + 0.01 * np.eye(n))
    b = rng.standard_normal(n)
    res = gmres(mat, b, GmresSettings(preconditioner="none", max_iters=3, restart=3))
    assert not res.converged
    assert res.n_iters == 3


def test_warm_start_honored():
    rng = np.random.default_rng(36)
    mat = well_conditioned(rng, 20)
    b = rng.standard_normal(20)
    ref = np.linalg.solve(mat.toarray(), b)
    res = gmres(mat, b, GmresSettings(preconditioner="none"), x0=ref.copy())
    assert res.converged
    assert res.n_iters == 0


# ----------------------------------------------------------------------
# two-stage block-triangular solve
# ----------------------------------------------------------------------


def random_block_triangular(rng, n1, n2):
    a = rng.standard_normal((n1, n1)) + n1 * np.eye(n1)
    b = rng.standard_normal((n2, n2)) + n2 * np.eye(n2)
    c = rng.standard_normal((n2, n1))
    full = np.zeros((n1 + n2, n1 + n2))
    full[:n1, :n1] = a
    full[n1:, n1:] = b
    full[n1:, :n1] = c
    return sp.csr_matrix(full)


def test_block_triangular_matches_dense_lu():
    rng = np.random.default_rng(37)
    for _ in range(10):
        n1, n2 = int(rng.integers(4, 20)), int(rng.integers(4, 20))
        mat = random_block_triangular(rng, n1, n2)
        rhs = rng.standard_normal(n1 + n2)
        ref = np.linalg.solve(mat.toarray(), rhs)
        res = solve_block_triangular(
            mat, rhs, n1, GmresSettings(rel_tol=1e-12, preconditioner="none")
        )
        assert res.converged
        assert np.linalg.norm(res.x - ref) <= 1e-9 * max(1.0, np.linalg.norm(ref))


def test_block_triangular_matches_monolithic_on_assembled_system():
    # condensed phase-field Newton matrix is block lower-triangular in the
    # (u, phi) ordering; both solve paths must agree to solver tolerance
    mesh = build_rectangle_mesh((-1.0, -1.0), (2.0, 2.0), (6, 6))
    dofmap = build_dof_map(mesh)
    params = MaterialParams(
        mu=0.42, lam=0.28, gc=1.0, eps=0.1, kappa=1e-10,
        pressure=1e-3, split="none",
    )
    asm = Assembler(mesh, dofmap, params)
    n = dofmap.n_nodes
    rng = np.random.default_rng(38)
    state = np.empty(3 * n)
    state[: 2 * n] = 1e-3 * rng.standard_normal(2 * n)
    state[2 * n:] = rng.uniform(0.4, 1.0, n)
    matrix, rhs = asm.system(state, state[2 * n:].copy())
    fixed = np.zeros(dofmap.n_dofs, dtype=bool)
    left = np.isclose(mesh.nodes[:, 0], -1.0)
    fixed[2 * np.flatnonzero(left)] = True
    fixed[2 * np.flatnonzero(left) + 1] = True
    op = constraint_operator(dofmap, mesh.hanging, fixed)
    mat_red, rhs_red = condense_system(matrix, rhs, op)

    tol = 1e-10
    mono = gmres(mat_red, rhs_red, GmresSettings(rel_tol=tol))
    two = solve_block_triangular(
        mat_red, rhs_red, 2 * n, GmresSettings(rel_tol=tol)
    )
    assert mono.converged and two.converged
    norm_rhs = np.linalg.norm(rhs_red)
    # both residuals meet the shared tolerance, hence the solutions agree
    # to solver tolerance through the condensed operator
    assert np.linalg.norm(rhs_red - mat_red @ mono.x) <= tol * norm_rhs * 1.01
    assert np.linalg.norm(rhs_red - mat_red @ two.x) <= tol * norm_rhs * 1.01


def test_block_triangular_skips_negligible_stage():
    rng = np.random.default_rng(39)
    mat = random_block_triangular(rng, 10, 10)
    # zero the coupling block so the trailing rhs stays exactly zero
    dense = mat.toarray()
    dense[10:, :10] = 0.0
    mat = sp.csr_matrix(dense)
    rhs = np.concatenate([rng.standard_normal(10), np.zeros(10)])
    res = solve_block_triangular(
        mat, rhs, 10, GmresSettings(rel_tol=1e-10, preconditioner="none")
    )
    assert res.converged
    assert np.all(res.x[10:] == 0.0)
