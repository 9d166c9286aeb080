"""Multi-to-single-scale transform, its transpose, and Gram operators.

A TransformPlan freezes, for a set of wavelet rows per basis and a working
tiling, all gather/scatter index arrays needed by the two kernels:

* synthesize: wavelet coefficients -> per-cell P2-nodal coefficients on the
  working tiling's ancestor closure (leaf rows form the single-scale
  representation). One top-down sweep, O(#closure) per apply.
* pair: per-cell moment vectors on the closure -> one inner product per
  wavelet row. One gather per level, O(#pieces) per apply.

Both kernels share the piece tables, so adjointness of the pair is exact
by construction and is asserted against the naive oracle in tests.
"""

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from . import counters
from .errors import CapExceededError, SingularBlockError
from .poly import ActiveTiling, PiecewisePolynomial, TreeTiling


class TransformPlan:
    """Frozen index structure for one basis over a working TreeTiling."""

    def __init__(self, basis, level_locs, tree: TreeTiling):
        self.basis = basis
        self.tree = tree
        self.levels = sorted(level_locs)
        self.locs = {lv: np.asarray(level_locs[lv], dtype=np.int64) for lv in self.levels}
        self.row_offset = {}
        n = 0
        for lv in self.levels:
            self.row_offset[lv] = n
            n += len(self.locs[lv])
        self.nrows = n
        # piece tables per level: closure slot, row index, nodal coeffs
        self.piece_slot = {}
        self.piece_row = {}
        self.piece_coeff = {}
        nn = tree.ref.nnodes
        for lv in self.levels:
            slots, rows, coeffs = [], [], []
            for i, loc in enumerate(self.locs[lv]):
                d = basis.descriptor(lv, int(loc))
                pos, ok = tree.slots(lv, d.cells)
                if not np.all(ok):
                    raise CapExceededError(
                        f"working tiling does not carry wavelet {d.index}"
                    )
                slots.append(pos)
                rows.append(np.full(len(pos), self.row_offset[lv] + i, dtype=np.int64))
                coeffs.append(d.coeffs)
            if slots:
                self.piece_slot[lv] = np.concatenate(slots)
                self.piece_row[lv] = np.concatenate(rows)
                self.piece_coeff[lv] = np.concatenate(coeffs).reshape(-1, nn)
            else:
                self.piece_slot[lv] = np.empty(0, dtype=np.int64)
                self.piece_row[lv] = np.empty(0, dtype=np.int64)
                self.piece_coeff[lv] = np.empty((0, nn))

    # -- vector layout -------------------------------------------------------

    def flat_from_vector(self, vec, tag=None):
        tag = tag or self.basis.tag
        x = np.zeros(self.nrows)
        for lv in self.levels:
            locs, vals = vec.arrays(tag, lv)
            if len(locs) == 0:
                continue
            pos = np.searchsorted(self.locs[lv], locs)
            ok = (pos < len(self.locs[lv])) & (
                self.locs[lv][np.minimum(pos, len(self.locs[lv]) - 1)] == locs
            )
            x[self.row_offset[lv] + pos[ok]] = vals[ok]
        return x

    def vector_from_flat(self, x, vec, tag=None):
        tag = tag or self.basis.tag
        for lv in self.levels:
            sl = slice(self.row_offset[lv], self.row_offset[lv] + len(self.locs[lv]))
            vec.set_arrays(tag, lv, self.locs[lv], np.asarray(x[sl], dtype=float))
        return vec

    # -- kernels ---------------------------------------------------------------

    def synthesize_closure(self, x, out=None):
        """Accumulate x's wavelet pieces into closure nodal arrays."""
        tree = self.tree
        nn = tree.ref.nnodes
        if out is None:
            out = {lv: np.zeros((len(tree.ids(lv)), nn)) for lv in tree.levels}
        for lv in self.levels:
            if len(self.piece_row[lv]) == 0:
                continue
            contrib = self.piece_coeff[lv] * x[self.piece_row[lv]][:, None]
            np.add.at(out[lv], self.piece_slot[lv], contrib)
            counters.add(len(self.piece_row[lv]) * nn)
        return out

    def pair(self, moments):
        """r[row] = sum over pieces of coeff . moments[cell]."""
        r = np.zeros(self.nrows)
        for lv in self.levels:
            if len(self.piece_row[lv]) == 0:
                continue
            m = moments.get(lv)
            if m is None or len(m) == 0:
                continue
            vals = np.einsum(
                "pn,pn->p", self.piece_coeff[lv], m[self.piece_slot[lv]]
            )
            np.add.at(r, self.piece_row[lv], vals)
            counters.add(len(self.piece_row[lv]) * self.tree.ref.nnodes)
        return r


def sweep_down(tree: TreeTiling, closure_vals):
    """Push nodal coefficient contributions from coarse to fine in place.

    After the sweep, leaf rows hold the single-scale representation of the
    summed contributions.
    """
    ref = tree.ref
    b = tree.domain.branching
    shift = 1 if b == 2 else 2
    for lv in tree.levels:
        if lv == 0:
            continue
        ids = tree.ids(lv)
        if len(ids) == 0:
            continue
        parents = ids >> shift
        ppos, ok = tree.slots(lv - 1, parents)
        child_pos = (ids & (b - 1)).astype(np.int64)
        src = closure_vals[lv - 1]
        dst = closure_vals[lv]
        for c in range(b):
            sel = child_pos == c
            if np.any(sel):
                dst[sel] += src[ppos[sel]] @ ref.transfer[c]
        counters.add(len(ids) * ref.nnodes)
    return closure_vals


def leaves_poly(tree: TreeTiling, closure_vals, tiling: ActiveTiling):
    out = PiecewisePolynomial(tiling)
    for lv in tiling.levels:
        ids = tiling.ids(lv)
        pos, ok = tree.slots(lv, ids)
        assert np.all(ok)
        out.coeffs[lv] = closure_vals[lv][pos]
    return out


def synthesize(plans_coeffs, tree: TreeTiling, tiling: ActiveTiling):
    """Sum of (plan, flat coeffs) synthesized on the tiling leaves."""
    out = None
    for plan, x in plans_coeffs:
        out = plan.synthesize_closure(x, out)
    if out is None:
        nn = tree.ref.nnodes
        out = {lv: np.zeros((len(tree.ids(lv)), nn)) for lv in tree.levels}
    sweep_down(tree, out)
    return leaves_poly(tree, out, tiling)


# ---------------------------------------------------------------------------
# moments


def leaf_moments_from_values(tree: TreeTiling, tiling: ActiveTiling, vals_by_level):
    """Per-leaf moment vectors from integrand values at quadrature nodes."""
    ref = tree.ref
    M = ref.moment_matrix()          # (nq, nn)
    out = {}
    for lv in tree.levels:
        out[lv] = np.zeros((len(tree.ids(lv)), ref.nnodes))
    for lv in tiling.levels:
        vals = vals_by_level.get(lv)
        if vals is None or len(vals) == 0:
            continue
        g = tiling.geo(lv)
        mom = (vals @ M) * g["scale"][:, None]
        pos, ok = tree.slots(lv, tiling.ids(lv))
        out[lv][pos] = mom
        counters.add(vals.size)
    return out


def propagate(tree: TreeTiling, leaf_m):
    ref = tree.ref
    b = tree.domain.branching
    shift = 1 if b == 2 else 2
    for lv in sorted(tree.levels, reverse=True):
        if lv == 0:
            continue
        ids = tree.ids(lv)
        if len(ids) == 0:
            continue
        parents = ids >> shift
        ppos, _ = tree.slots(lv - 1, parents)
        child_pos = (ids & (b - 1)).astype(np.int64)
        for c in range(b):
            sel = child_pos == c
            if np.any(sel):
                np.add.at(leaf_m[lv - 1], ppos[sel], leaf_m[lv][sel] @ ref.transfer[c].T)
        counters.add(len(ids) * ref.nnodes)
    return leaf_m


def value_moments(tree: TreeTiling, tiling: ActiveTiling, vals_by_level):
    return propagate(tree, leaf_moments_from_values(tree, tiling, vals_by_level))


def grad_combine(tree: TreeTiling, moment_list):
    """w[cell] = sum_d E_d[cell] @ m_d[cell] so that pairing w against a
    wavelet's nodal coefficients yields <grad psi, g>."""
    ref = tree.ref
    nn = ref.nnodes
    out = {}
    if tree.domain.dim == 1:
        E = ref.dshapes(ref.node_coords)        # (3 nodes, 3 funcs)
        for lv in tree.levels:
            g = tree.geo(lv)
            m = moment_list[0][lv]
            # d(b_i)/dx = sum_j E[j, i]? build E_mat[i, j] = b_i' (node j)
            Emat = E.T
            out[lv] = (m @ Emat.T) / g["h"][:, None] if len(m) else m
        return out
    dN_nodes = ref.dshapes(ref.node_coords)     # (6 nodes, 6 funcs, 2)
    # Eref[d][i, j] = d_hat_d b_i(node j)
    Eref = np.stack([dN_nodes[:, :, 0].T, dN_nodes[:, :, 1].T])
    for lv in tree.levels:
        g = tree.geo(lv)
        n = len(tree.ids(lv))
        acc = np.zeros((n, nn))
        if n == 0:
            out[lv] = acc
            continue
        for d in range(2):
            md = moment_list[d][lv]
            # physical derivative: sum_k invBT[d, k] * Eref[k]
            for k in range(2):
                coef = g["invBT"][:, d, k]
                acc += coef[:, None] * (md @ Eref[k].T)
        out[lv] = acc
        counters.add(n * nn)
    return out


# ---------------------------------------------------------------------------
# naive oracle evaluation (tests)


def eval_wavelet(basis, level, loc, points):
    """Pointwise wavelet values; slow, for oracle comparisons only."""
    d = basis.descriptor(level, int(loc))
    dom = basis.domain
    from .quadrature import ref_interval, ref_triangle

    reftab = ref_interval() if dom.dim == 1 else ref_triangle()
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if dom.dim == 1:
        pts = pts.reshape(-1, 1)
    out = np.zeros(len(pts))
    cells = d.cells
    for ip, p in enumerate(pts):
        if dom.dim == 1:
            cand = dom.cells_touching_point(float(p[0]), level)
        else:
            cand = dom.cells_touching_point(p, level)
        for cid in cand:
            pos = np.searchsorted(cells, cid)
            if pos < len(cells) and cells[pos] == cid:
                if dom.dim == 1:
                    a, h = dom.geometry(np.array([cid]))
                    xh = (p[0] - a[0]) / h[0]
                    out[ip] = float(reftab.shapes(np.array([xh]))[0] @ d.coeffs[pos])
                else:
                    lam = dom.barycentric(cid, p)
                    out[ip] = float(
                        reftab.shapes(np.array([[lam[1], lam[2]]]))[0] @ d.coeffs[pos]
                    )
                break
    return out


# ---------------------------------------------------------------------------
# level-truncated Gram / stiffness operators


def gram_operator(basis, L, form="mass", dense_cap=20000):
    """Matrix-free Gram (or stiffness) of all wavelets up to level L.

    Returns (n, matvec). form: 'mass' -> <psi, psi>, 'stiffness' ->
    <grad psi, grad psi>.
    """
    from . import mesh as mesh_mod

    dom = basis.domain
    level_locs = {lv: basis.locs_at_level(lv) for lv in range(basis.min_level, L + 1)}
    cells = mesh_mod.uniform_tiling(dom, L)
    tree = TreeTiling(dom, cells)
    tiling = ActiveTiling(dom, cells)
    plan = TransformPlan(basis, level_locs, tree)
    ref = tree.ref
    Mmat = ref.moment_matrix()

    def matvec(x):
        closure = plan.synthesize_closure(np.asarray(x, dtype=float))
        sweep_down(tree, closure)
        u = leaves_poly(tree, closure, tiling)
        if form == "mass":
            vals = {lv: u.values_at_quad(lv) for lv in tiling.levels}
            mom = value_moments(tree, tiling, vals)
            return plan.pair(mom)
        comps = u.gradient()
        moms = [
            value_moments(
                tree, tiling, {lv: c.values_at_quad(lv) for lv in tiling.levels}
            )
            for c in comps
        ]
        w = grad_combine(tree, moms)
        return plan.pair(w)

    return plan.nrows, matvec


def condition_number(n, matvec, dense_cap=20000, tol=1e-4):
    """Spectral condition number of an SPD operator."""
    if n <= 2:
        A = np.array([[float(matvec(np.eye(n)[i])[j]) for i in range(n)] for j in range(n)])
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        if ev[0] <= 0:
            raise SingularBlockError("non-SPD block: smallest Ritz value <= 0")
        return float(ev[-1] / ev[0])
    if n <= dense_cap:
        A = np.zeros((n, n))
        e = np.zeros(n)
        for i in range(n):
            e[i] = 1.0
            A[:, i] = matvec(e)
            e[i] = 0.0
        ev = np.linalg.eigvalsh(0.5 * (A + A.T))
        if ev[0] <= 0:
            raise SingularBlockError("non-SPD block: smallest Ritz value <= 0")
        return float(ev[-1] / ev[0])
    op = LinearOperator((n, n), matvec=matvec)
    lmax = eigsh(op, k=1, which="LA", tol=tol, return_eigenvectors=False, maxiter=5000)[0]
    lmin = eigsh(op, k=1, which="SA", tol=tol, return_eigenvectors=False, maxiter=5000)[0]
    if lmin <= 0:
        raise SingularBlockError("non-SPD block: smallest Ritz value <= 0")
    return float(lmax / lmin)
