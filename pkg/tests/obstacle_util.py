"""Small bound-constrained toy problems shared by solver tests.

A 1-D screened Laplacian quadratic with an upper bound: minimize
(1/2) phi^T A phi - b^T phi subject to phi <= ub, with unit "mass"
scaling so the recovered multiplier is simply the residual on the
active set.  Brute-force enumeration of active subsets provides the
reference solution.
"""

import numpy as np
import scipy.sparse as sp

from phasefrac.newton import BoundSystem


def screened_laplacian(n, shift=1.0, h=1.0):
    main = np.full(n, shift + 2.0 / h**2)
    off = np.full(n - 1, -1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1]).tocsr()


def obstacle_system(A, b, ub):
    """Wrap the quadratic obstacle problem as a BoundSystem."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    pdofs = np.arange(n)

    def residual(state):
        return b - A @ state

    def system(state):
        return A.copy(), b - A @ state

    def reduce(vec, act):
        out = vec.copy()
        out[pdofs[act]] = 0.0
        return out

    def condense(matrix, rhs, act):
        dense = matrix.toarray().copy()
        idx = pdofs[act]
        dense[idx, :] = 0.0
        dense[:, idx] = 0.0
        dense[idx, idx] = 1.0
        r = rhs.copy()
        r[idx] = 0.0
        return sp.csr_matrix(dense), r

    def expand(x, act):
        out = x.copy()
        out[pdofs[act]] = 0.0
        return out

    return BoundSystem(
        n_dofs=n,
        phi_dofs=pdofs,
        phi_upper=ub.astype(float).copy(),
        mass_diag=np.ones(n),
        classifiable=np.ones(n, dtype=bool),
        residual=residual,
        system=system,
        reduce=reduce,
        condense=condense,
        expand=expand,
    )


def qp_enumerate(A, b, ub, tol=1e-10):
    """Exact solution by trying every active subset; unique for SPD A."""
    A = np.asarray(A.toarray() if sp.issparse(A) else A)
    n = len(b)
    best = None
    for bits in range(2**n):
        act = np.array([(bits >> i) & 1 == 1 for i in range(n)])
        phi = np.empty(n)
        phi[act] = ub[act]
        free = ~act
        if free.any():
            rhs = b[free] - A[np.ix_(free, act)] @ ub[act]
            phi[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
        lam = np.zeros(n)
        lam[act] = (b - A @ phi)[act]
        feasible = np.all(phi <= ub + tol)
        dual_ok = np.all(lam[act] >= -tol)
        if feasible and dual_ok:
            candidate = (phi, lam)
            if best is None:
                best = candidate
            else:
                # SPD: the KKT point is unique; keep the first
                pass
    return best
