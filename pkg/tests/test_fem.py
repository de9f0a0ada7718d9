import numpy as np
import pytest
import scipy.sparse as sp

from phasefrac.fem import (
    apply_hanging_to_field,
    apply_hanging_to_vector,
    assemble_mass_diagonal,
    build_dof_map,
    condense_system,
    constraint_operator,
    eliminated_dofs,
    expand_update,
    quadrature_points,
    reduce_residual,
    resolve_constraints,
)
from phasefrac.mesh import build_rectangle_mesh, refine_cells


def test_dof_counts_single_cell():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (1, 1))
    dm = build_dof_map(mesh)
    assert dm.n_u == 8
    assert dm.n_phi == 4
    assert dm.n_dofs == 12


def test_dof_counts_two_cells():
    mesh = build_rectangle_mesh((0.0, 0.0), (2.0, 1.0), (2, 1))
    dm = build_dof_map(mesh)
    assert mesh.n_nodes == 6
    assert dm.n_u == 12
    assert dm.n_phi == 6


def test_dof_ordering_u_first_then_phi():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (2, 2))
    dm = build_dof_map(mesh)
    n = mesh.n_nodes
    assert dm.u_dof(3, 0) == 6
    assert dm.u_dof(3, 1) == 7
    assert dm.phi_dof(0) == 2 * n
    assert dm.u_slice == slice(0, 2 * n)
    assert dm.phi_slice == slice(2 * n, 3 * n)
    # contiguous enumeration: cell dofs exactly cover 0..3n-1
    assert set(dm.cell_dofs.ravel()) == set(range(3 * n))


def test_quadrature_rule():
    pts, wts = quadrature_points()
    assert wts.sum() == pytest.approx(4.0)  # reference-square area
    g = 1.0 / np.sqrt(3.0)
    assert np.allclose(np.abs(pts), g)
    # exact for cubics per coordinate: int_{-1}^{1} x^2 dx = 2/3
    val = sum(w * p[0] ** 2 * p[1] ** 2 for p, w in zip(pts, wts))
    assert val == pytest.approx(4.0 / 9.0, rel=1e-14)
    val3 = sum(w * p[0] ** 3 for p, w in zip(pts, wts))
    assert val3 == pytest.approx(0.0, abs=1e-15)


def test_mass_diagonal_single_cell():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (1, 1))
    dm = build_dof_map(mesh)
    md = assemble_mass_diagonal(mesh, dm)
    assert np.allclose(md, 0.25)


def test_mass_diagonal_two_cells_shared_edge():
    mesh = build_rectangle_mesh((0.0, 0.0), (2.0, 1.0), (2, 1))
    dm = build_dof_map(mesh)
    md = assemble_mass_diagonal(mesh, dm)
    # corner nodes 0.25, the two shared mid-edge nodes 0.5
    assert sorted(np.round(md, 12).tolist()).count(0.5) == 2
    assert md.sum() == pytest.approx(2.0)


def test_mass_diagonal_positive_sums_to_area():
    mesh = build_rectangle_mesh(
        (-10.0, -10.0), (20.0, 20.0), (10, 10), global_refines=1,
        refine_boxes=[((-4.0, 4.0, -4.0, 4.0), 2)],
    )
    dm = build_dof_map(mesh)
    md = assemble_mass_diagonal(mesh, dm, mesh.hanging)
    assert (md > 0.0).all()
    # hanging rows are folded into masters and carry a 1.0 placeholder,
    # so the true mass lives on the free nodes and sums to the area
    free = np.ones(mesh.n_nodes, dtype=bool)
    free[mesh.hanging.nodes] = False
    assert np.allclose(md[~free], 1.0)
    assert md[free].sum() == pytest.approx(400.0, rel=1e-12)


def test_linear_field_gradient_exact():
    # Q1 interpolation of a + b x + c y differentiates exactly
    mesh = build_rectangle_mesh((0.0, 0.0), (2.0, 1.0), (3, 2))
    a, b, c = 0.3, -1.2, 2.5
    f = a + b * mesh.nodes[:, 0] + c * mesh.nodes[:, 1]
    pts, _ = quadrature_points()
    for cell in range(mesh.n_cells):
        fx = f[mesh.cells[cell]]
        dx, dy = mesh.cell_size[cell]
        for xi, eta in pts:
            dn_dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
            dn_deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
            gx = dn_dxi @ fx * (2.0 / dx)
            gy = dn_deta @ fx * (2.0 / dy)
            assert gx == pytest.approx(b, rel=1e-13)
            assert gy == pytest.approx(c, rel=1e-13)


def _hanging_mesh():
    mesh = build_rectangle_mesh((0.0, 0.0), (2.0, 1.0), (2, 1))
    return refine_cells(mesh, np.array([True, False]))


def test_resolve_constraints_flat():
    mesh = _hanging_mesh()
    nodes, masters, weights = resolve_constraints(mesh.hanging)
    assert not np.isin(np.concatenate([m.ravel() for m in masters]), nodes).any()
    for w in weights:
        assert w.sum() == pytest.approx(1.0)


def test_constraint_operator_shapes_and_identity():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (2, 2))
    dm = build_dof_map(mesh)
    fixed = np.zeros(dm.n_dofs, dtype=bool)
    P = constraint_operator(dm, mesh.hanging, fixed)
    assert P.shape == (dm.n_dofs, dm.n_dofs)
    assert (P != sp.eye(dm.n_dofs)).nnz == 0  # no constraints -> identity
    assert not eliminated_dofs(P).any()


def test_condense_identity_when_unconstrained():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (2, 2))
    dm = build_dof_map(mesh)
    rng = np.random.default_rng(3)
    A = sp.csr_matrix(rng.standard_normal((dm.n_dofs, dm.n_dofs)))
    r = rng.standard_normal(dm.n_dofs)
    P = constraint_operator(dm, mesh.hanging, np.zeros(dm.n_dofs, dtype=bool))
    Ac, rc = condense_system(A, r, P)
    assert np.allclose(Ac.toarray(), A.toarray())
    assert np.allclose(rc, r)


def test_condense_dirichlet_dof_2x2_hand_check():
    # hand elimination: fix dof 1 of [[4, 1], [1, 3]] x = [5, 7]
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (1, 1))
    dm = build_dof_map(mesh)
    A = sp.eye(dm.n_dofs, format="csr").tolil()
    A[0, 0], A[0, 2], A[2, 0], A[2, 2] = 4.0, 1.0, 1.0, 3.0
    r = np.zeros(dm.n_dofs)
    r[0], r[2] = 5.0, 7.0
    fixed = np.zeros(dm.n_dofs, dtype=bool)
    fixed[2] = True
    P = constraint_operator(dm, mesh.hanging, fixed)
    Ac, rc = condense_system(sp.csr_matrix(A), r, P)
    assert Ac[0, 0] == pytest.approx(4.0)
    assert Ac[0, 2] == 0.0 and Ac[2, 0] == 0.0
    assert Ac[2, 2] == pytest.approx(1.0)
    assert rc[0] == pytest.approx(5.0)
    assert rc[2] == 0.0
    # solving leaves the constrained dof unchanged
    x = np.array(np.linalg.solve(Ac.toarray(), rc))
    assert x[0] == pytest.approx(5.0 / 4.0)
    assert x[2] == 0.0


def test_condensed_update_zero_on_eliminated_dofs():
    mesh = _hanging_mesh()
    dm = build_dof_map(mesh)
    rng = np.random.default_rng(11)
    n = dm.n_dofs
    A = sp.csr_matrix(rng.standard_normal((n, n)) + 10.0 * np.eye(n))
    r = rng.standard_normal(n)
    fixed = np.zeros(n, dtype=bool)
    fixed[[0, 1, 5]] = True
    P = constraint_operator(dm, mesh.hanging, fixed)
    Ac, rc = condense_system(A, r, P)
    x = np.linalg.solve(Ac.toarray(), rc)
    dx = expand_update(x, P)
    assert np.allclose(dx[[0, 1, 5]], 0.0)
    # hanging dofs received the interpolated update
    nodes, masters, weights = resolve_constraints(mesh.hanging)
    for k, node in enumerate(nodes):
        hd = dm.phi_dof(node)
        md = dm.phi_dof(masters[k])
        assert dx[hd] == pytest.approx(float(weights[k] @ dx[md]), rel=1e-12)


def test_reduced_residual_folds_hanging_rows():
    mesh = _hanging_mesh()
    dm = build_dof_map(mesh)
    rng = np.random.default_rng(5)
    r = rng.standard_normal(dm.n_dofs)
    fixed = np.zeros(dm.n_dofs, dtype=bool)
    P = constraint_operator(dm, mesh.hanging, fixed)
    red = reduce_residual(r, P)
    nodes, masters, weights = resolve_constraints(mesh.hanging)
    hd = dm.phi_dof(nodes[0])
    md = dm.phi_dof(masters[0])
    assert red[hd] == 0.0
    assert red[md[0]] == pytest.approx(r[md[0]] + weights[0][0] * r[hd])


def test_apply_hanging_interpolates_state():
    mesh = _hanging_mesh()
    dm = build_dof_map(mesh)
    vec = np.arange(dm.n_dofs, dtype=float)
    apply_hanging_to_vector(vec, dm, mesh.hanging)
    nodes, masters, weights = resolve_constraints(mesh.hanging)
    for k, node in enumerate(nodes):
        for dof, mdofs in (
            (dm.u_dof(node, 0), dm.u_dof(masters[k], 0)),
            (dm.u_dof(node, 1), dm.u_dof(masters[k], 1)),
            (dm.phi_dof(node), dm.phi_dof(masters[k])),
        ):
            assert vec[dof] == pytest.approx(float(weights[k] @ vec[mdofs]))
    field = np.arange(mesh.n_nodes, dtype=float) ** 2
    apply_hanging_to_field(field, mesh.hanging)
    for k, node in enumerate(nodes):
        assert field[node] == pytest.approx(float(weights[k] @ field[masters[k]]))


def test_fixed_mask_size_checked():
    mesh = build_rectangle_mesh((0.0, 0.0), (1.0, 1.0), (1, 1))
    dm = build_dof_map(mesh)
    with pytest.raises(ValueError):
        constraint_operator(dm, mesh.hanging, np.zeros(3, dtype=bool))
