"""Wavelet basis core: descriptors, tree structure, tree <-> tiling maps.

Each concrete basis owns an integer loc encoding per level and produces
WaveletDescriptor objects on demand (cached). Wavelet pieces are stored as
P2-nodal coefficients on carrier cells at the wavelet's own level, so a
single transform kernel serves linear and quadratic families alike.

The S-neighborhood of a wavelet is its support cells plus a fixed number
of same-level vertex rings (0 for Haar-type bases, 1 for the others); the
nesting S(child) within S(parent) is asserted by tests, per-basis.
"""

import numpy as np

from . import mesh
from .errors import NonTreeError
from .indices import IndexSet, WaveletIndex

MOMENT_TOL = 1e-12


class WaveletDescriptor:
    __slots__ = (
        "index", "cells", "coeffs", "s_cells", "moment",
        "has_vanishing_moment", "anchor",
    )

    def __init__(self, index, cells, coeffs, s_cells, moment, anchor):
        self.index = index
        self.cells = cells            # sorted int64 carrier cell ids, level |lambda|
        self.coeffs = coeffs          # (ncells, nnodes) P2-nodal coefficients
        self.s_cells = s_cells        # sorted int64 cell ids, level |lambda|
        self.moment = moment
        self.has_vanishing_moment = abs(moment) < MOMENT_TOL
        self.anchor = anchor          # representative point, used for searches


class Basis:
    """Abstract basis over a dyadic domain hierarchy."""

    #: rings of same-level cells added around the support to form S
    s_rings = 1
    #: bounding-box inflation for candidate searches, in units of 2^-level
    search_radius = 4.0

    def __init__(self, domain, tag):
        self.domain = domain
        self.tag = tag
        self._desc = {}
        self._parent = {}
        self._rev = {}

    # -- required subclass interface ---------------------------------------

    min_level = 0
    degree = 2

    def locs_at_level(self, level):
        raise NotImplementedError

    def locs_in_box(self, level, lo, hi):
        """Candidate locs whose anchor lies in the closed box [lo, hi]."""
        raise NotImplementedError

    def _build(self, level, loc):
        """Return (cells, coeffs, moment, anchor) for one wavelet."""
        raise NotImplementedError

    # -- descriptors --------------------------------------------------------

    def descriptor(self, level, loc):
        key = (level, int(loc))
        d = self._desc.get(key)
        if d is None:
            cells, coeffs, moment, anchor = self._build(level, int(loc))
            order = np.argsort(cells)
            cells = cells[order]
            coeffs = coeffs[order]
            s_cells = self._s_neighborhood(level, cells)
            d = WaveletDescriptor(
                WaveletIndex(self.tag, level, int(loc)), cells, coeffs,
                s_cells, moment, anchor,
            )
            self._desc[key] = d
        return d

    def _s_neighborhood(self, level, cells):
        out = set(int(c) for c in cells)
        frontier = set(out)
        for _ in range(self.s_rings):
            nxt = set()
            for cid in frontier:
                nxt.update(self._vertex_neighbors(level, cid))
            nxt -= out
            out |= nxt
            frontier = nxt
        return np.array(sorted(out), dtype=np.int64)

    def _vertex_neighbors(self, level, cid):
        dom = self.domain
        if dom.dim == 1:
            lev, k = dom.cell_index(cid)
            nb = []
            if k > 0:
                nb.append(cid - 1)
            if k < (1 << lev) - 1:
                nb.append(cid + 1)
            return nb
        out = set()
        for v in dom.vertices(cid):
            out.update(dom.cells_touching_point(v, level))
        out.discard(int(cid))
        return out

    # -- tree structure ------------------------------------------------------

    def parent(self, level, loc):
        """Index of the unique assigned parent, or None at the coarsest level.

        Maximal support-overlap measure among level-1 wavelets, ties broken
        by smallest loc.
        """
        if level <= self.min_level:
            return None
        key = (level, int(loc))
        if key in self._parent:
            return self._parent[key]
        d = self.descriptor(level, loc)
        dom = self.domain
        cand = self._candidates_near(level - 1, d.anchor)
        child_set = set(int(c) for c in d.cells)
        best = None
        shift = 1 if dom.branching == 2 else 2
        for c in cand:
            pd = self.descriptor(level - 1, c)
            overlap = 0
            for pc in pd.cells:
                base = int(pc) << shift
                overlap += sum(1 for j in range(dom.branching) if (base | j) in child_set)
            if overlap > 0 and (best is None or overlap > best[0] or
                                (overlap == best[0] and c < best[1])):
                best = (overlap, c)
        if best is None:
            raise NonTreeError(
                f"no parent with positive support overlap for {d.index}"
            )
        res = WaveletIndex(self.tag, level - 1, int(best[1]))
        self._parent[key] = res
        return res

    def children(self, level, loc):
        d = self.descriptor(level, loc)
        cand = self._candidates_near(level + 1, d.anchor)
        out = []
        for c in cand:
            p = self.parent(level + 1, c)
            if p is not None and p.loc == loc and p.level == level:
                out.append(WaveletIndex(self.tag, level + 1, int(c)))
        return sorted(out)

    def _candidates_near(self, level, anchor):
        r = self.search_radius * 2.0 ** (-level)
        a = np.atleast_1d(np.asarray(anchor, dtype=float))
        return self.locs_in_box(level, a - r, a + r)

    # -- reverse map: cell -> same-level wavelets with cell in S -------------

    def wavelets_with_s_cell(self, level, cid):
        key = (level, int(cid))
        hit = self._rev.get(key)
        if hit is not None:
            return hit
        dom = self.domain
        if dom.dim == 1:
            a, h = dom.geometry(np.array([cid]))
            lo, hi = np.array([a[0]]), np.array([a[0] + h[0]])
        else:
            verts = dom.vertices(cid)
            lo, hi = verts.min(axis=0), verts.max(axis=0)
        pad = self.search_radius * 2.0 ** (-level)
        out = []
        for loc in self.locs_in_box(level, lo - pad, hi + pad):
            s = self.descriptor(level, loc).s_cells
            pos = np.searchsorted(s, cid)
            if pos < len(s) and s[pos] == cid:
                out.append(int(loc))
        res = np.array(sorted(out), dtype=np.int64)
        self._rev[key] = res
        return res


# ---------------------------------------------------------------------------
# trees over one or several bases


def is_tree(basis, level_sets: IndexSet):
    """Check tree property for the part of `level_sets` in this basis."""
    levels = level_sets.levels(basis.tag)
    if not levels:
        return False
    base = set(level_sets.locs(basis.tag, basis.min_level).tolist())
    if base != set(basis.locs_at_level(basis.min_level).tolist()):
        return False
    for lv in levels:
        if lv == basis.min_level:
            continue
        for loc in level_sets.locs(basis.tag, lv):
            p = basis.parent(lv, int(loc))
            arr = level_sets.locs(basis.tag, lv - 1)
            pos = np.searchsorted(arr, p.loc)
            if pos >= len(arr) or arr[pos] != p.loc:
                return False
    return True


def complete_to_tree(bases, index_set: IndexSet):
    """Minimal tree superset per basis: ancestors plus all coarsest indices."""
    out = IndexSet()
    for basis in bases:
        tag = basis.tag
        out.add_array(tag, basis.min_level, basis.locs_at_level(basis.min_level))
        pending = []
        for lv in index_set.levels(tag):
            for loc in index_set.locs(tag, lv):
                pending.append((lv, int(loc)))
        seen = set(pending)
        while pending:
            lv, loc = pending.pop()
            out.add_array(tag, lv, np.array([loc], dtype=np.int64))
            if lv > basis.min_level:
                p = basis.parent(lv, loc)
                if (p.level, p.loc) not in seen:
                    seen.add((p.level, p.loc))
                    pending.append((p.level, p.loc))
    return out


def tiling_of_tree(bases, index_set: IndexSet, validate=True):
    """The minimal carrier tiling T(Lambda) for an admissible index set.

    For multiple bases this is the smallest common refinement of the
    per-basis carrier tilings.
    """
    if validate:
        for basis in bases:
            if index_set.count(basis.tag) and not is_tree(basis, index_set):
                raise NonTreeError(f"index set is not a tree for basis {basis.tag}")
    cells = set()
    domain = bases[0].domain
    for basis in bases:
        for lv in index_set.levels(basis.tag):
            for loc in index_set.locs(basis.tag, lv):
                cells.update(int(c) for c in basis.descriptor(lv, int(loc)).cells)
    cells.update(int(r) for r in domain.roots)
    return mesh.tiling_from_cells(domain, cells)


def tree_of_tiling(basis, tiling_cells, k):
    """Lambda*(T, k): wavelets whose S-neighborhood meets the k-coarsened
    ancestor closure of the tiling; always a tree.

    The coarsest basis level is always included so the result is a tree
    even for bases whose coarsest level is above 0.
    """
    dom = basis.domain
    closed = mesh.ancestors_closure(dom, tiling_cells)
    by_level = mesh.group_by_level(dom, closed)
    max_cell_level = max(by_level)
    out = IndexSet()
    # levels where max(|lambda|-k, 0) = 0 intersect the root cells: all locs
    top_full = max(k, basis.min_level)
    for lv in range(basis.min_level, top_full + 1):
        out.add_array(basis.tag, lv, basis.locs_at_level(lv))
    for lv in range(top_full + 1, max_cell_level + k + 1):
        src = by_level.get(lv - k)
        if src is None or len(src) == 0:
            continue
        srcset = src
        found = []
        for cid in srcset:
            found.extend(_wavelets_meeting_cell(basis, lv, int(cid), lv - k))
        out.add_array(basis.tag, lv, np.array(sorted(set(found)), dtype=np.int64))
    # S-nesting makes the set parent-closed already; enforce the contract
    # explicitly so downstream admissibility never depends on it silently.
    for lv in sorted(out.levels(basis.tag), reverse=True):
        if lv == basis.min_level:
            continue
        parents = []
        for loc in out.locs(basis.tag, lv):
            p = basis.parent(lv, int(loc))
            parents.append(p.loc)
        out.add_array(basis.tag, lv - 1, np.array(parents, dtype=np.int64))
    return out


def _wavelets_meeting_cell(basis, wav_level, cid, cell_level):
    """Locs at wav_level whose S (cells at wav_level) meets cell cid."""
    dom = basis.domain
    if dom.dim == 1:
        a, h = dom.geometry(np.array([cid]))
        lo = np.array([a[0]])
        hi = np.array([a[0] + h[0]])
    else:
        verts = dom.vertices(cid)
        lo, hi = verts.min(axis=0), verts.max(axis=0)
    pad = basis.search_radius * 2.0 ** (-wav_level)
    out = []
    for loc in basis.locs_in_box(wav_level, lo - pad, hi + pad):
        s = basis.descriptor(wav_level, int(loc)).s_cells
        anc = dom.ancestor(s, np.full(len(s), cell_level, dtype=np.int64)) \
            if not np.isscalar(s) else s
        if np.any(anc == cid):
            out.append(int(loc))
    return out


def tree_max_level(index_set: IndexSet, tag):
    levels = index_set.levels(tag)
    return levels[-1] if levels else -1
