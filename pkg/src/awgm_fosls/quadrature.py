"""Reference-element quadrature and shape-function tables.

Everything downstream represents per-cell polynomials in the quadratic
nodal (P2) basis of a reference element, so a single family of tables
serves all bases: values/gradients at quadrature nodes, child-node
transfer matrices (used both for prolongation of coefficients and for
upward restriction of moment vectors), and edge traces.

Dyadic cell geometry is exactly representable in float64 up to level 26,
so quadrature maps introduce no geometric rounding.
"""

from functools import lru_cache

import numpy as np

# Degree-8 exactness (9 in 1D) with five Gauss points per direction covers
# every integrand in scope: cubic nonlinearity of a quadratic iterate tested
# against a quadratic wavelet tops out at degree 8.
DEFAULT_Q1D = 5
DATA_Q1D = 8  # only for data-oscillation integrals of raw forcings


def leggauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# interval


class RefInterval:
    """Reference interval [0,1] with a P2 nodal basis at (0, 1/2, 1)."""

    nnodes = 3
    nchildren = 2
    node_coords = np.array([0.0, 0.5, 1.0])

    @staticmethod
    def shapes(x):
        x = np.asarray(x, dtype=float)
        return np.stack(
            [(2 * x - 1) * (x - 1), 4 * x * (1 - x), x * (2 * x - 1)], axis=-1
        )

    @staticmethod
    def dshapes(x):
        x = np.asarray(x, dtype=float)
        return np.stack([4 * x - 3, 4 - 8 * x, 4 * x - 1], axis=-1)

    @staticmethod
    def child_to_parent(pos, x):
        return 0.5 * (pos + np.asarray(x, dtype=float))

    def __init__(self, nq=DEFAULT_Q1D):
        self.nq = nq
        self.qx, self.qw = leggauss01(nq)
        self.N = self.shapes(self.qx)            # (nq, 3)
        self.dN = self.dshapes(self.qx)          # (nq, 3)
        # transfer[c][i, j] = N_i^parent at child c's node j (parent coords);
        # child nodal coeffs = transfer[c].T @ parent coeffs, and the same
        # matrices push child moment vectors up to the parent.
        self.transfer = np.stack(
            [self.shapes(self.child_to_parent(c, self.node_coords)).T for c in range(2)]
        )
        # parent shape values at child quadrature nodes
        self.child_quad_N = np.stack(
            [self.shapes(self.child_to_parent(c, self.qx)) for c in range(2)]
        )

    def moment_matrix(self):
        """M[q, i] = w_q * N_i(x_q); reference moments are M.T @ values."""
        return self.qw[:, None] * self.N


# ---------------------------------------------------------------------------
# triangle


def duffy_rule(n):
    """Collapsed product Gauss rule on the unit triangle.

    Exact for total degree <= 2n - 2 (the collapse adds one degree in the
    first coordinate).
    """
    x1, w1 = leggauss01(n)
    xi, eta = np.meshgrid(x1, x1, indexing="ij")
    wx, wy = np.meshgrid(w1, w1, indexing="ij")
    pts = np.stack([xi.ravel(), (eta * (1 - xi)).ravel()], axis=1)
    w = (wx * wy * (1 - xi)).ravel()
    return pts, w


class RefTriangle:
    """Reference triangle (0,0),(1,0),(0,1) with the 6-node P2 basis.

    Node order: v0, v1, v2, m01, m12, m02. Children follow red refinement
    with the midpoint-triangle last; all four keep positive orientation.
    """

    nnodes = 6
    nchildren = 4
    node_coords = np.array(
        [[0, 0], [1, 0], [0, 1], [0.5, 0], [0.5, 0.5], [0, 0.5]], dtype=float
    )
    # child c: (v0, e1, e2) in parent reference coordinates
    child_maps = np.array(
        [
            [[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]],
            [[0.5, 0.0], [0.5, 0.0], [0.0, 0.5]],
            [[0.0, 0.5], [0.5, 0.0], [0.0, 0.5]],
            [[0.5, 0.0], [0.0, 0.5], [-0.5, 0.5]],
        ]
    )
    # edge k joins vertices edge_verts[k] and carries midpoint node edge_mid[k]
    edge_verts = ((0, 1), (1, 2), (2, 0))
    edge_mid = (3, 4, 5)

    @staticmethod
    def bary(p):
        p = np.asarray(p, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return np.stack([1 - x - y, x, y], axis=-1)

    @classmethod
    def shapes(cls, p):
        lam = cls.bary(p)
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        return np.stack(
            [
                l0 * (2 * l0 - 1),
                l1 * (2 * l1 - 1),
                l2 * (2 * l2 - 1),
                4 * l0 * l1,
                4 * l1 * l2,
                4 * l0 * l2,
            ],
            axis=-1,
        )

    @classmethod
    def dshapes(cls, p):
        """Reference gradients, shape (..., 6, 2)."""
        lam = cls.bary(p)
        l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
        # dl0 = (-1,-1), dl1 = (1,0), dl2 = (0,1)
        z = np.zeros_like(l0)
        gx = np.stack(
            [
                -(4 * l0 - 1),
                4 * l1 - 1,
                z,
                4 * (l0 - l1),
                4 * l2,
                -4 * l2,
            ],
            axis=-1,
        )
        gy = np.stack(
            [
                -(4 * l0 - 1),
                z,
                4 * l2 - 1,
                -4 * l1,
                4 * l1,
                4 * (l0 - l2),
            ],
            axis=-1,
        )
        return np.stack([gx, gy], axis=-1)

    @classmethod
    def child_to_parent(cls, c, p):
        v0, e1, e2 = cls.child_maps[c]
        p = np.asarray(p, dtype=float)
        return v0 + np.outer(p[..., 0].ravel(), e1).reshape(p[..., 0].shape + (2,)) + np.outer(
            p[..., 1].ravel(), e2
        ).reshape(p[..., 1].shape + (2,))

    def __init__(self, nq1=DEFAULT_Q1D):
        self.nq1 = nq1
        self.qp, self.qw = duffy_rule(nq1)
        self.nq = len(self.qw)
        self.N = self.shapes(self.qp)                  # (nq, 6)
        self.dN = self.dshapes(self.qp)                # (nq, 6, 2)
        self.transfer = np.stack(
            [self.shapes(self.child_to_parent(c, self.node_coords)).T for c in range(4)]
        )                                              # (4, 6, 6)
        self.child_quad_N = np.stack(
            [self.shapes(self.child_to_parent(c, self.qp)) for c in range(4)]
        )                                              # (4, nq, 6)
        # edge traces: per edge, P2 values at mapped 1D Gauss nodes
        ex, self.edge_qw = leggauss01(nq1)
        self.edge_qx = ex
        verts = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
        self.edge_N = []
        for (a, b) in self.edge_verts:
            pts = verts[a] + np.outer(ex, verts[b] - verts[a])
            self.edge_N.append(self.shapes(pts))
        self.edge_N = np.stack(self.edge_N)            # (3, nq1, 6)

    def moment_matrix(self):
        return self.qw[:, None] * self.N


@lru_cache(maxsize=None)
def ref_interval(nq=DEFAULT_Q1D):
    return RefInterval(nq)


@lru_cache(maxsize=None)
def ref_triangle(nq1=DEFAULT_Q1D):
    return RefTriangle(nq1)
