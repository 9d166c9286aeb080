"""Single-scale piecewise polynomials on level-grouped tilings.

A PiecewisePolynomial stores, per cell of a tiling, coefficients in the
reference P2 nodal basis (degree <= 2 everywhere in this artifact; products
of higher degree are formed transiently as values at quadrature nodes).
Refinement to a finer tiling is an exact per-level sweep with the fixed
child transfer matrices, vectorized over cells.

TreeTiling is the ancestors-closure of a tiling with leaf masks; it carries
the upward moment propagation used by the transposed multi-to-single-scale
transform.
"""

import numpy as np

from . import mesh, quadrature
from .errors import MeshError


def _ref(domain):
    return quadrature.ref_interval() if domain.dim == 1 else quadrature.ref_triangle()


class ActiveTiling:
    """A tiling materialized as per-level sorted id arrays with geometry."""

    def __init__(self, domain, cells):
        self.domain = domain
        self.cells = frozenset(int(c) for c in cells)
        self.by_level = mesh.group_by_level(domain, self.cells)
        self.levels = sorted(self.by_level)
        self.ref = _ref(domain)
        self._geo = {}

    def __len__(self):
        return len(self.cells)

    def ids(self, level):
        return self.by_level.get(level, np.empty(0, dtype=np.int64))

    def geo(self, level):
        """Geometry arrays for one level: dict with keys depending on dim."""
        g = self._geo.get(level)
        if g is None:
            g = _level_geometry(self.domain, self.ids(level))
            self._geo[level] = g
        return g

    def slots(self, level, ids):
        arr = self.ids(level)
        pos = np.searchsorted(arr, ids)
        ok = (pos < len(arr)) & (arr[np.minimum(pos, len(arr) - 1)] == ids)
        return pos, ok

    def measure(self):
        return mesh.tiling_measure(self.domain, self.cells)


def _level_geometry(domain, ids):
    if len(ids) == 0:
        if domain.dim == 1:
            return {"a": np.empty(0), "h": np.empty(0), "scale": np.empty(0)}
        return {
            "v0": np.empty((0, 2)), "e1": np.empty((0, 2)), "e2": np.empty((0, 2)),
            "scale": np.empty(0), "invBT": np.empty((0, 2, 2)),
        }
    if domain.dim == 1:
        a, h = domain.geometry(ids)
        return {"a": a, "h": h, "scale": h}
    v0, e1, e2 = domain.geometry(ids)
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    # B^{-T} rows: physical gradient = invBT @ reference gradient
    invBT = np.empty((len(ids), 2, 2))
    invBT[:, 0, 0] = e2[:, 1] / det
    invBT[:, 0, 1] = -e1[:, 1] / det
    invBT[:, 1, 0] = -e2[:, 0] / det
    invBT[:, 1, 1] = e1[:, 0] / det
    return {"v0": v0, "e1": e1, "e2": e2, "scale": np.abs(det), "invBT": invBT}


def quad_points(domain, tiling, level):
    """Physical quadrature points for one level, shape (ncell, nq, dim)."""
    g = tiling.geo(level)
    ref = tiling.ref
    if domain.dim == 1:
        return (g["a"][:, None] + np.outer(g["h"], ref.qx))[..., None]
    pts = (
        g["v0"][:, None, :]
        + ref.qp[None, :, 0, None] * g["e1"][:, None, :]
        + ref.qp[None, :, 1, None] * g["e2"][:, None, :]
    )
    return pts


class PiecewisePolynomial:
    """Tiling plus per-cell P2-nodal coefficients."""

    def __init__(self, tiling: ActiveTiling, coeffs=None):
        self.tiling = tiling
        nn = tiling.ref.nnodes
        if coeffs is None:
            coeffs = {
                lv: np.zeros((len(tiling.ids(lv)), nn)) for lv in tiling.levels
            }
        self.coeffs = coeffs

    @property
    def domain(self):
        return self.tiling.domain

    def copy(self):
        return PiecewisePolynomial(
            self.tiling, {lv: c.copy() for lv, c in self.coeffs.items()}
        )

    # -- algebra on a shared tiling

    def add(self, other, alpha=1.0):
        assert other.tiling.cells == self.tiling.cells
        for lv in self.coeffs:
            self.coeffs[lv] += alpha * other.coeffs[lv]
        return self

    def scale(self, alpha):
        for lv in self.coeffs:
            self.coeffs[lv] *= alpha
        return self

    # -- evaluation

    def values_at_quad(self, level):
        return self.coeffs[level] @ self.tiling.ref.N.T

    def __call__(self, points):
        """Pointwise evaluation (test helper; O(level) point location each)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.domain.dim == 1:
            points = points.reshape(-1, 1)
        out = np.empty(len(points))
        for i, p in enumerate(points):
            out[i] = self._eval_one(p)
        return out

    def _eval_one(self, p):
        dom = self.domain
        for lv in self.tiling.levels:
            ids = self.tiling.ids(lv)
            if dom.dim == 1:
                cand = dom.cells_touching_point(float(p[0]), lv)
            else:
                cand = dom.cells_touching_point(p, lv)
            for cid in cand:
                pos = np.searchsorted(ids, cid)
                if pos < len(ids) and ids[pos] == cid:
                    return float(self._eval_in_cell(lv, pos, cid, p))
        raise MeshError("point not covered by tiling")

    def _eval_in_cell(self, level, slot, cid, p):
        ref = self.tiling.ref
        if self.domain.dim == 1:
            a, h = self.domain.geometry(np.array([cid]))
            xhat = (p[0] - a[0]) / h[0]
            return ref.shapes(np.array([xhat]))[0] @ self.coeffs[level][slot]
        lam = self.domain.barycentric(cid, p)
        return ref.shapes(np.array([[lam[1], lam[2]]]))[0] @ self.coeffs[level][slot]

    # -- refinement

    def refine_to(self, target: ActiveTiling):
        """Exact re-expression on a tiling that refines this one."""
        dom = self.domain
        ref = self.tiling.ref
        nn = ref.nnodes
        out = {lv: np.zeros((len(target.ids(lv)), nn)) for lv in target.levels}
        # working front: cells of self, pushed down until they land in target
        max_lv = max(target.levels) if target.levels else 0
        front = {lv: (self.tiling.ids(lv), self.coeffs[lv]) for lv in self.tiling.levels}
        for lv in range(0, max_lv + 1):
            if lv not in front:
                continue
            ids, cf = front.pop(lv)
            if len(ids) == 0:
                continue
            pos, ok = target.slots(lv, ids)
            if np.any(ok):
                out[lv][pos[ok]] = cf[ok]
            rest = ~ok
            if not np.any(rest):
                continue
            rids, rcf = ids[rest], cf[rest]
            b = dom.branching
            kid_ids = ((rids[:, None] << (1 if b == 2 else 2)) | np.arange(b, dtype=np.int64)).ravel()
            # child coeffs: transfer[c].T @ parent
            kid_cf = np.einsum("cij,ni->ncj", ref.transfer, rcf).reshape(-1, nn)
            nxt = front.get(lv + 1)
            if nxt is None:
                order = np.argsort(kid_ids)
                front[lv + 1] = (kid_ids[order], kid_cf[order])
            else:
                allids = np.concatenate([nxt[0], kid_ids])
                allcf = np.concatenate([nxt[1], kid_cf])
                order = np.argsort(allids)
                front[lv + 1] = (allids[order], allcf[order])
        if front:
            raise MeshError("target tiling does not refine the source tiling")
        return PiecewisePolynomial(target, out)

    # -- calculus

    def gradient(self):
        """Component-wise gradient, exact (degree drops by one).

        Returns a list of PiecewisePolynomial, one per space dimension.
        """
        ref = self.tiling.ref
        if self.domain.dim == 1:
            dN_nodes = ref.dshapes(ref.node_coords)      # (3, 3)
            comps = [PiecewisePolynomial(self.tiling)]
            for lv in self.tiling.levels:
                g = self.tiling.geo(lv)
                vals = self.coeffs[lv] @ dN_nodes.T
                comps[0].coeffs[lv] = vals / g["h"][:, None]
            return comps
        dN_nodes = ref.dshapes(ref.node_coords)          # (6, 6, 2)
        comps = [PiecewisePolynomial(self.tiling), PiecewisePolynomial(self.tiling)]
        for lv in self.tiling.levels:
            g = self.tiling.geo(lv)
            refgrad = np.einsum("ni,jid->njd", self.coeffs[lv], dN_nodes)
            phys = np.einsum("nkd,njd->njk", g["invBT"], refgrad)
            comps[0].coeffs[lv] = phys[..., 0]
            comps[1].coeffs[lv] = phys[..., 1]
        return comps

    # -- integrals

    def integrate(self):
        ref = self.tiling.ref
        total = 0.0
        for lv in self.tiling.levels:
            g = self.tiling.geo(lv)
            vals = self.values_at_quad(lv)
            total += float(np.sum(g["scale"] * (vals @ ref.qw)))
        return total

    def l2_inner(self, other):
        assert other.tiling.cells == self.tiling.cells
        ref = self.tiling.ref
        total = 0.0
        for lv in self.tiling.levels:
            g = self.tiling.geo(lv)
            u = self.values_at_quad(lv)
            v = other.values_at_quad(lv)
            total += float(np.sum(g["scale"] * ((u * v) @ ref.qw)))
        return total

    def l2_norm2(self):
        return self.l2_inner(self)

    def h1_semi2(self):
        return sum(c.l2_norm2() for c in self.gradient())


def zero_poly(domain, tiling_cells):
    return PiecewisePolynomial(ActiveTiling(domain, tiling_cells))


def from_callable(domain, tiling: ActiveTiling, fn):
    """Interpolate a (degree <= 2) callable exactly at the P2 nodes."""
    ref = tiling.ref
    out = PiecewisePolynomial(tiling)
    for lv in tiling.levels:
        g = tiling.geo(lv)
        if domain.dim == 1:
            pts = g["a"][:, None] + np.outer(g["h"], ref.node_coords)
            out.coeffs[lv] = fn(pts)
        else:
            pts = (
                g["v0"][:, None, :]
                + ref.node_coords[None, :, 0, None] * g["e1"][:, None, :]
                + ref.node_coords[None, :, 1, None] * g["e2"][:, None, :]
            )
            out.coeffs[lv] = fn(pts[..., 0], pts[..., 1])
    return out


class TreeTiling:
    """Ancestors-closure of a tiling with leaf masks and moment propagation."""

    def __init__(self, domain, cells):
        self.domain = domain
        self.leaf_cells = frozenset(int(c) for c in cells)
        closed = mesh.ancestors_closure(domain, self.leaf_cells)
        self.by_level = mesh.group_by_level(domain, closed)
        self.levels = sorted(self.by_level)
        self.ref = _ref(domain)
        self.leaf_mask = {
            lv: np.isin(ids, np.fromiter((c for c in self.leaf_cells), dtype=np.int64))
            if self.leaf_cells else np.zeros(len(ids), bool)
            for lv, ids in self.by_level.items()
        }
        self._geo = {}

    def ids(self, level):
        return self.by_level.get(level, np.empty(0, dtype=np.int64))

    def geo(self, level):
        g = self._geo.get(level)
        if g is None:
            g = _level_geometry(self.domain, self.ids(level))
            self._geo[level] = g
        return g

    def slots(self, level, ids):
        arr = self.ids(level)
        pos = np.searchsorted(arr, ids)
        ok = (pos < len(arr)) & (arr[np.minimum(pos, len(arr) - 1)] == ids)
        return pos, ok

    def propagate_moments(self, leaf_moments):
        """Push per-leaf moment vectors up the closure.

        leaf_moments: {level: (ncells_at_level, nnodes)} defined (at least)
        on leaves; entries on non-leaf cells are ignored and recomputed.
        Returns moments for every closure cell, same layout.
        """
        ref = self.ref
        nn = ref.nnodes
        b = self.domain.branching
        shift = 1 if b == 2 else 2
        out = {
            lv: np.zeros((len(self.ids(lv)), nn)) for lv in self.levels
        }
        for lv in self.levels:
            lm = leaf_moments.get(lv)
            if lm is not None:
                m = self.leaf_mask[lv]
                out[lv][m] = lm[m]
        for lv in sorted(self.levels, reverse=True):
            if lv == 0:
                continue
            ids = self.ids(lv)
            if len(ids) == 0:
                continue
            parents = ids >> shift
            child_pos = (ids & (b - 1)).astype(np.int64)
            ppos, ok = self.slots(lv - 1, parents)
            assert np.all(ok)
            for c in range(b):
                sel = child_pos == c
                if not np.any(sel):
                    continue
                contrib = out[lv][sel] @ ref.transfer[c].T
                np.add.at(out[lv - 1], ppos[sel], contrib)
        return out
