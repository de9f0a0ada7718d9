"""Q1 finite element infrastructure.

Degrees of freedom are ordered displacement-first: for a mesh with n
nodes, dof ``2*i`` is u_x at node i, dof ``2*i + 1`` is u_y at node i,
and dof ``2*n + i`` is the phase field at node i.  All solvers work on
this monolithic vector; the phase-field block can be sliced off the end.

Constraint handling (hanging nodes, Dirichlet dofs, active-set dofs)
keeps the full system size: constrained rows and columns are folded or
zeroed and the diagonal is set to one with a zero right-hand side, so a
solved update is identically zero on eliminated dofs and interpolated on
hanging dofs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import ConstraintSet, Mesh


@dataclass
class DofMap:
    """Monolithic dof layout for one displacement vector + phase field."""

    n_nodes: int
    cell_dofs: np.ndarray  # (n_cells, 12): ux0,uy0,...,ux3,uy3,phi0..phi3

    @property
    def n_u(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_phi(self) -> int:
        return self.n_nodes

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    @property
    def u_slice(self) -> slice:
        return slice(0, 2 * self.n_nodes)

    @property
    def phi_slice(self) -> slice:
        return slice(2 * self.n_nodes, 3 * self.n_nodes)

    def u_dof(self, node, component):
        return 2 * np.asarray(node) + component

    def phi_dof(self, node):
        return 2 * self.n_nodes + np.asarray(node)


def build_dof_map(mesh: Mesh) -> DofMap:
    """Number dofs displacement-first, node-major within each field."""
    cells = mesh.cells
    n = mesh.n_nodes
    cd = np.empty((len(cells), 12), dtype=np.int64)
    cd[:, 0:8:2] = 2 * cells
    cd[:, 1:8:2] = 2 * cells + 1
    cd[:, 8:12] = 2 * n + cells
    return DofMap(n_nodes=n, cell_dofs=cd)


def quadrature_points() -> tuple[np.ndarray, np.ndarray]:
    """2x2 Gauss rule on the reference square [-1, 1]^2.

    Exact for polynomials of degree three per coordinate, which covers
    every bilinear-times-bilinear integrand on affine rectangles.
    """
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    wts = np.ones(4)
    return pts, wts


def resolve_constraints(constraints: ConstraintSet):
    """Expand hanging-node constraints until no master is itself hanging.

    Chains occur where refinement levels step down twice within two
    cells; they are finite because every link moves to a coarser edge.
    Returns (nodes, masters_list, weights_list) with plain master nodes.
    """
    table = {
        int(n): list(zip(constraints.masters[k], constraints.weights[k]))
        for k, n in enumerate(constraints.nodes)
    }
    resolved = {}
    for node in table:
        entries = list(table[node])
        while any(int(m) in table for m, _ in entries):
            new = []
            for m, w in entries:
                m = int(m)
                if m in table:
                    new.extend((mm, w * ww) for mm, ww in table[m])
                else:
                    new.append((m, w))
            entries = new
        merged: dict[int, float] = {}
        for m, w in entries:
            m = int(m)
            merged[m] = merged.get(m, 0.0) + w
        resolved[node] = sorted(merged.items())
    nodes = np.array(sorted(resolved), dtype=np.int64)
    masters = [np.array([m for m, _ in resolved[int(n)]], dtype=np.int64) for n in nodes]
    weights = [np.array([w for _, w in resolved[int(n)]]) for n in nodes]
    return nodes, masters, weights


def assemble_mass_diagonal(mesh: Mesh, dofmap: DofMap, constraints: ConstraintSet | None = None) -> np.ndarray:
    """Row-sum lumped phase-field mass diagonal.

    On a rectangle the row sum of the Q1 mass matrix is area/4 at each
    corner.  Hanging rows are folded into their masters so the diagonal
    matches the constrained basis; hanging entries are set to 1.0 (they
    are never used as free dofs).
    """
    area4 = 0.25 * mesh.cell_size[:, 0] * mesh.cell_size[:, 1]
    diag = np.zeros(dofmap.n_phi)
    np.add.at(diag, mesh.cells.ravel(), np.repeat(area4, 4))
    if constraints is None:
        constraints = mesh.hanging
    if len(constraints):
        nodes, masters, weights = resolve_constraints(constraints)
        for k, n in enumerate(nodes):
            diag[masters[k]] += weights[k] * diag[n]
        diag[nodes] = 1.0
    return diag


def constraint_operator(dofmap: DofMap, constraints: ConstraintSet, fixed: np.ndarray) -> sp.csr_matrix:
    """Square operator P mapping free-dof updates to full-vector updates.

    P has a unit diagonal on free unconstrained dofs, interpolation
    weights on hanging rows (into master columns), and empty rows and
    columns for fixed dofs.  ``P^T M P`` with a unit diagonal restored on
    eliminated dofs is the condensed system.
    """
    n = dofmap.n_dofs
    fixed = np.asarray(fixed, dtype=bool)
    if fixed.shape != (n,):
        raise ValueError("fixed mask must cover all dofs")

    hang_dof_rows = []
    hang_entries = []
    if len(constraints):
        nodes, masters, weights = resolve_constraints(constraints)
        for k, node in enumerate(nodes):
            for comp_row, comp_master in (
                (2 * node, 2 * masters[k]),
                (2 * node + 1, 2 * masters[k] + 1),
                (2 * dofmap.n_nodes + node, 2 * dofmap.n_nodes + masters[k]),
            ):
                hang_dof_rows.append(int(comp_row))
                hang_entries.append((comp_master, weights[k]))

    is_hanging = np.zeros(n, dtype=bool)
    if hang_dof_rows:
        is_hanging[hang_dof_rows] = True

    keep = ~(fixed | is_hanging)
    rows = [np.flatnonzero(keep)]
    cols = [np.flatnonzero(keep)]
    vals = [np.ones(int(keep.sum()))]
    for row, (mcols, mw) in zip(hang_dof_rows, hang_entries):
        ok = ~fixed[mcols]
        rows.append(np.full(int(ok.sum()), row, dtype=np.int64))
        cols.append(mcols[ok])
        vals.append(mw[ok])
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    P.sum_duplicates()
    P.sort_indices()
    return P


def eliminated_dofs(P: sp.csr_matrix) -> np.ndarray:
    """Dofs with an empty column in P (fixed dofs and hanging dofs)."""
    col_counts = np.bincount(P.indices, minlength=P.shape[1])
    return col_counts == 0


def condense_system(matrix: sp.csr_matrix, rhs: np.ndarray, P: sp.csr_matrix):
    """Fold constraints into the system; eliminated dofs get identity rows.

    Returns (condensed matrix, condensed rhs).  The condensed matrix is
    P^T M P plus a unit diagonal on eliminated dofs, so it is square,
    nonsingular where M is, and a solve yields zero on eliminated dofs.
    """
    Mt = (P.T @ matrix @ P).tocsr()
    elim = eliminated_dofs(P)
    Mt = Mt + sp.diags(elim.astype(float), format="csr")
    Mt.sum_duplicates()
    Mt.sort_indices()
    rt = P.T @ rhs
    return Mt, rt


def reduce_residual(rhs: np.ndarray, P: sp.csr_matrix) -> np.ndarray:
    """Residual seen by the condensed system (constrained rows folded)."""
    return P.T @ rhs


def expand_update(delta: np.ndarray, P: sp.csr_matrix) -> np.ndarray:
    """Distribute a condensed update to the full vector (hanging filled)."""
    return P @ delta


def apply_hanging_to_vector(vec: np.ndarray, dofmap: DofMap, constraints: ConstraintSet) -> None:
    """Overwrite hanging entries of a full state vector by interpolation.

    Acts in place on a (n_dofs,) vector or on separate fields via
    ``apply_hanging_to_fields``.
    """
    if not len(constraints):
        return
    nodes, masters, weights = resolve_constraints(constraints)
    n = dofmap.n_nodes
    for k, node in enumerate(nodes):
        vec[2 * node] = weights[k] @ vec[2 * masters[k]]
        vec[2 * node + 1] = weights[k] @ vec[2 * masters[k] + 1]
        vec[2 * n + node] = weights[k] @ vec[2 * n + masters[k]]


def apply_hanging_to_field(values: np.ndarray, constraints: ConstraintSet) -> None:
    """Interpolate hanging entries of a nodal scalar or stacked field."""
    if not len(constraints):
        return
    nodes, masters, weights = resolve_constraints(constraints)
    for k, node in enumerate(nodes):
        values[node] = weights[k] @ values[masters[k]]
