"""Boundary tilings, traces, and the piecewise-constant boundary basis.

Boundary segments reuse the heap id scheme from mesh.seg_* (facet root +
dyadic position). Traces of volume P2 polynomials along cell edges are P2
polynomials on segments, so the interval reference tables serve both.

The Dirichlet-trace basis is Haar-type per boundary facet chain, scaled by
2^{level/2} on top of L2 normalization so that the H^{-1}-norm decay
required of an H^{-1/2} Riesz candidate holds by construction.
"""

import numpy as np

from . import mesh, quadrature
from .indices import IndexSet, WaveletIndex


class SegTree:
    """Ancestor closure of a boundary tiling with moment propagation."""

    def __init__(self, domain, segs):
        self.domain = domain
        self.leaves = frozenset(int(s) for s in segs)
        closed = set()
        for s in self.leaves:
            s = int(s)
            while s not in closed:
                closed.add(s)
                if mesh.seg_level(s) == 0:
                    break
                s = mesh.seg_parent(s)
        for s in list(closed):
            kids = mesh.seg_children(s)
            if any(k in closed for k in kids):
                closed.update(kids)
        self.by_level = {}
        for s in closed:
            self.by_level.setdefault(mesh.seg_level(s), []).append(s)
        self.by_level = {
            lv: np.array(sorted(ids), dtype=np.int64) for lv, ids in self.by_level.items()
        }
        self.levels = sorted(self.by_level)
        self.ref = quadrature.ref_interval()
        self.leaf_mask = {
            lv: np.isin(ids, np.fromiter(self.leaves, dtype=np.int64))
            for lv, ids in self.by_level.items()
        }

    def ids(self, level):
        return self.by_level.get(level, np.empty(0, dtype=np.int64))

    def slots(self, level, ids):
        arr = self.ids(level)
        pos = np.searchsorted(arr, ids)
        ok = (pos < len(arr)) & (arr[np.minimum(pos, len(arr) - 1)] == ids)
        return pos, ok

    def lengths(self, level):
        ids = self.ids(level)
        if len(ids) == 0:
            return np.empty(0)
        return np.array([mesh.seg_measure(self.domain, int(s)) for s in ids])

    def propagate(self, m):
        ref = self.ref
        for lv in sorted(self.levels, reverse=True):
            if lv == 0:
                continue
            ids = self.ids(lv)
            if len(ids) == 0:
                continue
            parents = np.array([mesh.seg_parent(int(s)) for s in ids], dtype=np.int64)
            ppos, _ = self.slots(lv - 1, parents)
            heap = ids & ((np.int64(1) << 58) - 1)
            child_pos = (heap & 1).astype(np.int64)
            for c in range(2):
                sel = child_pos == c
                if np.any(sel):
                    np.add.at(m[lv - 1], ppos[sel], m[lv][sel] @ ref.transfer[c].T)
        return m

    def zero_moments(self):
        return {lv: np.zeros((len(self.ids(lv)), 3)) for lv in self.levels}


def trace_segments(domain, cells, part, split):
    """Boundary segments of `part` traced from a cell set, with owner info.

    Returns list of (seg_id, cell_id, local_edge).
    """
    out = []
    for cid in cells:
        lev = domain.level_of(int(cid))
        for edge, facet, k in domain.cell_boundary_edges(int(cid)):
            if split[facet] == part:
                out.append((mesh.seg_id(facet, lev, k), int(cid), edge))
    out.sort()
    return out


def edge_trace_coeffs(ref_tri, cell_coeffs, local_edge):
    """P2 coefficients along one edge, in interval node order (a, mid, b)."""
    a, b = ref_tri.edge_verts[local_edge]
    m = ref_tri.edge_mid[local_edge]
    return cell_coeffs[..., [a, m, b]]


class BoundaryHaarBasis:
    """Scaled Haar system on the Dirichlet part of the boundary.

    Level 0 holds one constant per Dirichlet root facet; level l >= 1 holds
    one Haar wavelet per level-(l-1) segment. Functions are L2(Gamma)
    normalized and then multiplied by 2^{l/2}.
    """

    s_rings = 0
    min_level = 0
    degree = 0

    def __init__(self, domain, tag, split):
        self.domain = domain
        self.tag = tag
        self.facets = sorted(f for f, t in split.items() if t == "D")
        self._desc = {}

    @staticmethod
    def make_loc(facet, k):
        return (int(facet) << 32) | int(k)

    @staticmethod
    def loc_parts(loc):
        return int(loc) >> 32, int(loc) & ((1 << 32) - 1)

    def locs_at_level(self, level):
        if level == 0:
            return np.array([self.make_loc(f, 0) for f in self.facets], dtype=np.int64)
        n = 1 << (level - 1)
        return np.array(
            [self.make_loc(f, k) for f in self.facets for k in range(n)],
            dtype=np.int64,
        )

    def parent(self, level, loc):
        if level == 0:
            return None
        f, k = self.loc_parts(loc)
        if level == 1:
            return WaveletIndex(self.tag, 0, self.make_loc(f, 0))
        return WaveletIndex(self.tag, level - 1, self.make_loc(f, k >> 1))

    def descriptor(self, level, loc):
        key = (level, int(loc))
        d = self._desc.get(key)
        if d is not None:
            return d
        f, k = self.loc_parts(loc)
        L = mesh.seg_measure(self.domain, mesh.seg_id(f, 0, 0))
        if level == 0:
            segs = np.array([mesh.seg_id(f, 0, 0)], dtype=np.int64)
            coeffs = np.full((1, 3), 1.0 / np.sqrt(L))
            moment = np.sqrt(L)
        else:
            segs = np.array(
                [mesh.seg_id(f, level, 2 * k), mesh.seg_id(f, level, 2 * k + 1)],
                dtype=np.int64,
            )
            amp = 2.0 ** ((level - 1) / 2.0) / np.sqrt(L) * 2.0 ** (level / 2.0)
            coeffs = np.array([[amp] * 3, [-amp] * 3])
            moment = 0.0
        d = _SegDescriptor(WaveletIndex(self.tag, level, int(loc)), segs, coeffs, moment)
        self._desc[key] = d
        return d

    def tree_of_boundary_tiling(self, segs, k):
        """Lambda*(T_Gamma, k) for this basis over a boundary tiling."""
        closed = set()
        for s in segs:
            s = int(s)
            while s not in closed:
                closed.add(s)
                if mesh.seg_level(s) == 0:
                    break
                s = mesh.seg_parent(s)
        by_level = {}
        for s in closed:
            by_level.setdefault(mesh.seg_level(s), set()).add(s)
        out = IndexSet()
        for lv in range(0, k + 1):
            out.add_array(self.tag, lv, self.locs_at_level(lv))
        top = max(by_level) if by_level else 0
        for lv in range(k + 1, top + k + 1):
            src = by_level.get(lv - k)
            if not src:
                continue
            found = set()
            for s in src:
                f, slv, pos = mesh.seg_parts(s)
                if f not in self.facets:
                    continue
                # wavelet kk at level lv has pieces at positions
                # [2kk, 2kk+1]; it meets s iff some piece descends from s
                lo_p, hi_p = pos << k, (pos + 1) << k
                found.update(
                    self.make_loc(f, kk) for kk in range(lo_p >> 1, ((hi_p - 1) >> 1) + 1)
                )
            out.add_array(self.tag, lv, np.array(sorted(found), dtype=np.int64))
        return out


class _SegDescriptor:
    __slots__ = ("index", "segs", "coeffs", "moment", "has_vanishing_moment")

    def __init__(self, index, segs, coeffs, moment):
        self.index = index
        self.segs = segs
        self.coeffs = coeffs
        self.moment = moment
        self.has_vanishing_moment = abs(moment) < 1e-12


class SegPlan:
    """Pairing plan for boundary-basis rows over a SegTree."""

    def __init__(self, basis: BoundaryHaarBasis, level_locs, tree: SegTree):
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
        self.piece_slot = {}
        self.piece_row = {}
        self.piece_coeff = {}
        for lv in self.levels:
            slots, rows, coeffs = [], [], []
            for i, loc in enumerate(self.locs[lv]):
                d = basis.descriptor(lv, int(loc))
                pos, ok = tree.slots(lv, d.segs)
                assert np.all(ok), "seg tree does not carry boundary wavelet"
                slots.append(pos)
                rows.append(np.full(len(pos), self.row_offset[lv] + i, dtype=np.int64))
                coeffs.append(d.coeffs)
            self.piece_slot[lv] = (
                np.concatenate(slots) if slots else np.empty(0, dtype=np.int64)
            )
            self.piece_row[lv] = (
                np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
            )
            self.piece_coeff[lv] = (
                np.concatenate(coeffs).reshape(-1, 3) if coeffs else np.empty((0, 3))
            )

    def pair(self, moments):
        r = np.zeros(self.nrows)
        for lv in self.levels:
            if len(self.piece_row[lv]) == 0 or moments.get(lv) is None:
                continue
            vals = np.einsum(
                "pn,pn->p", self.piece_coeff[lv], moments[lv][self.piece_slot[lv]]
            )
            np.add.at(r, self.piece_row[lv], vals)
        return r

    def synthesize_closure(self, x, out=None):
        if out is None:
            out = self.tree.zero_moments()
        for lv in self.levels:
            if len(self.piece_row[lv]) == 0:
                continue
            np.add.at(
                out[lv], self.piece_slot[lv],
                self.piece_coeff[lv] * x[self.piece_row[lv]][:, None],
            )
        return out

    def vector_from_flat(self, x, vec, tag=None):
        tag = tag or self.basis.tag
        for lv in self.levels:
            sl = slice(self.row_offset[lv], self.row_offset[lv] + len(self.locs[lv]))
            vec.set_arrays(tag, lv, self.locs[lv], np.asarray(x[sl], dtype=float))
        return vec


def sweep_down_segs(tree: SegTree, closure_vals):
    ref = tree.ref
    for lv in tree.levels:
        if lv == 0:
            continue
        ids = tree.ids(lv)
        if len(ids) == 0:
            continue
        parents = np.array([mesh.seg_parent(int(s)) for s in ids], dtype=np.int64)
        ppos, _ = tree.slots(lv - 1, parents)
        heap = ids & ((np.int64(1) << 58) - 1)
        child_pos = (heap & 1).astype(np.int64)
        for c in range(2):
            sel = child_pos == c
            if np.any(sel):
                closure_vals[lv][sel] += closure_vals[lv - 1][ppos[sel]] @ ref.transfer[c]
    return closure_vals
