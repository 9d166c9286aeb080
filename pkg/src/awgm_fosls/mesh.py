"""Dyadic cell hierarchies for the unit interval and the L-shaped polygon.

Cells are identified by heap-encoded integer ids, so parent/child/ancestor
queries are O(1) bit arithmetic and no global mesh table exists:

* interval: id = 2**level + k for [k*2^-l, (k+1)*2^-l]; children 2*id, 2*id+1.
* L-shape: id = (root + 16) << (2*level) | base-4 path; children (id<<2)|c.

The L-shape (0,1)^2 minus [1/2,1)^2 is meshed at level 0 by 12 right
isosceles triangles (each of the three half-unit squares split by both
diagonals, center vertex shared). Red refinement keeps every cell a right
isosceles triangle with |det| an exact power of two, so all vertex
coordinates and barycentric point tests are exact dyadic arithmetic in
float64 up to MAX_LEVEL.
"""

import numpy as np

from .errors import DegenerateBoundaryError, MeshError

MAX_LEVEL_1D = 50
MAX_LEVEL_2D = 26


# ---------------------------------------------------------------------------
# id arithmetic


def level_of_1d(ids):
    ids = np.asarray(ids, dtype=np.int64)
    return (np.int64(63) - _clz(ids)).astype(np.int64)


def _clz(ids):
    # count leading zeros of positive int64 via bit length
    ids = np.asarray(ids, dtype=np.int64)
    bl = np.zeros(ids.shape, dtype=np.int64)
    v = ids.copy()
    for shift in (32, 16, 8, 4, 2, 1):
        mask = v >= (np.int64(1) << shift)
        bl[mask] += shift
        v[mask] >>= shift
    return 63 - bl


class IntervalDomain:
    """The unit interval with dyadic bisection hierarchy."""

    name = "interval"
    dim = 1
    branching = 2
    measure = 1.0
    max_level = MAX_LEVEL_1D

    def __init__(self):
        self.roots = (1,)

    # -- id algebra

    @staticmethod
    def level_of(ids):
        if np.isscalar(ids) or isinstance(ids, (int, np.integer)):
            return int(ids).bit_length() - 1
        return level_of_1d(ids)

    @staticmethod
    def parent_id(ids):
        if isinstance(ids, (int, np.integer)):
            return int(ids) >> 1
        return np.asarray(ids, dtype=np.int64) >> 1

    @staticmethod
    def ancestor(ids, at_level):
        lev = IntervalDomain.level_of(ids)
        if isinstance(ids, (int, np.integer)):
            return int(ids) >> (lev - at_level)
        return np.asarray(ids, dtype=np.int64) >> (lev - at_level).astype(np.int64)

    @staticmethod
    def children_ids(cid):
        cid = int(cid)
        return [2 * cid, 2 * cid + 1]

    def cell_index(self, ids):
        """(level, k) of each cell."""
        lev = self.level_of(ids)
        return lev, np.asarray(ids, dtype=np.int64) - (np.int64(1) << np.asarray(lev, dtype=np.int64))

    def cell_id(self, level, k):
        return (1 << level) + int(k)

    def cells_at_level(self, level):
        return np.arange(1 << level, 1 << (level + 1), dtype=np.int64)

    # -- geometry

    def geometry(self, ids):
        """Left endpoints and widths, each shape (n,)."""
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        lev = level_of_1d(ids)
        h = np.ldexp(1.0, -lev)
        a = (ids - (np.int64(1) << lev)) * h
        return a, h

    def cell_measure(self, ids):
        return self.geometry(ids)[1]

    def cell_diameter(self, ids):
        return self.geometry(ids)[1]

    def locate(self, x, level):
        k = min(int(x * (1 << level)), (1 << level) - 1)
        return self.cell_id(level, max(k, 0))

    def cells_touching_point(self, x, level):
        out = []
        scaled = x * (1 << level)
        for k in (int(np.floor(scaled)) - 1, int(np.floor(scaled)), int(np.floor(scaled)) + 1):
            if 0 <= k < (1 << level):
                a = k / (1 << level)
                if a <= x <= a + 1.0 / (1 << level):
                    out.append(self.cell_id(level, k))
        return out

    def boundary_facets(self):
        raise DegenerateBoundaryError("1D boundary is two points; no facet tilings exist")


# ---------------------------------------------------------------------------
# L-shape


def _lshape_roots():
    """12 root triangles as (v0, v1, v2) with v2 the square center.

    Root order: squares S0=[0,.5]^2, S1=[.5,1]x[0,.5], S2=[0,.5]x[.5,1],
    each contributing (S, E, N, W) triangles. Edge 0 (v0-v1) is the outer
    square edge; its boundary facet id (or -1) follows the L polygon.
    """
    squares = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.5)]
    # outer-edge facet per (square, side): -1 means interior
    facets = {
        (0, "S"): 0, (0, "E"): -1, (0, "N"): -1, (0, "W"): 7,
        (1, "S"): 1, (1, "E"): 2, (1, "N"): 3, (1, "W"): -1,
        (2, "S"): -1, (2, "E"): 4, (2, "N"): 5, (2, "W"): 6,
    }
    roots = []
    root_facet = []
    for si, (x0, y0) in enumerate(squares):
        s = 0.5
        p = {
            "00": (x0, y0), "10": (x0 + s, y0),
            "11": (x0 + s, y0 + s), "01": (x0, y0 + s),
        }
        c = (x0 + s / 2, y0 + s / 2)
        for side, (a, b) in (("S", ("00", "10")), ("E", ("10", "11")),
                             ("N", ("11", "01")), ("W", ("01", "00"))):
            roots.append((p[a], p[b], c))
            root_facet.append(facets[(si, side)])
    return roots, root_facet


# child edge -> parent edge inheritance for red refinement (None if interior)
_EDGE_INHERIT = (
    {0: 0, 2: 2},
    {0: 0, 1: 1},
    {1: 1, 2: 2},
    {},
)

# 8 boundary root facets of the L polygon, as (start, end) points
LSHAPE_FACETS = (
    ((0.0, 0.0), (0.5, 0.0)),
    ((0.5, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (0.5, 0.5)),
    ((0.5, 0.5), (0.5, 1.0)),
    ((0.5, 1.0), (0.0, 1.0)),
    ((0.0, 1.0), (0.0, 0.5)),
    ((0.0, 0.5), (0.0, 0.0)),
)


class LShapeDomain:
    """L-shaped polygon (0,1)^2 minus [1/2,1)^2, 12 root triangles."""

    name = "lshape"
    dim = 2
    branching = 4
    measure = 0.75
    max_level = MAX_LEVEL_2D
    n_facets = 8

    def __init__(self):
        tri, facet = _lshape_roots()
        self.root_geo = []
        for (a, b, c) in tri:
            v0 = np.array(a)
            self.root_geo.append((v0, np.array(b) - v0, np.array(c) - v0))
        self.root_facet = facet
        self.roots = tuple((16 + r) << 0 for r in range(12))
        self._geo_cache = {}

    # -- id algebra

    @staticmethod
    def level_of(ids):
        if isinstance(ids, (int, np.integer)):
            return (int(ids).bit_length() - 5) // 2
        bl = 63 - _clz(np.asarray(ids, dtype=np.int64))
        return (bl - 4) // 2

    @staticmethod
    def parent_id(ids):
        if isinstance(ids, (int, np.integer)):
            return int(ids) >> 2
        return np.asarray(ids, dtype=np.int64) >> 2

    @staticmethod
    def ancestor(ids, at_level):
        lev = LShapeDomain.level_of(ids)
        if isinstance(ids, (int, np.integer)):
            return int(ids) >> (2 * (lev - at_level))
        shift = (2 * (lev - at_level)).astype(np.int64)
        return np.asarray(ids, dtype=np.int64) >> shift

    @staticmethod
    def children_ids(cid):
        cid = int(cid)
        return [(cid << 2) | c for c in range(4)]

    def root_of(self, cid):
        return (int(cid) >> (2 * self.level_of(cid))) - 16

    def path_of(self, cid):
        lev = self.level_of(cid)
        cid = int(cid)
        return [(cid >> (2 * (lev - 1 - i))) & 3 for i in range(lev)]

    def cells_at_level(self, level):
        out = np.array(self.roots, dtype=np.int64)
        for _ in range(level):
            out = ((out[:, None] << 2) | np.arange(4, dtype=np.int64)).ravel()
        return out

    # -- geometry

    def geometry_one(self, cid):
        """(v0, e1, e2) for a single cell, cached."""
        cid = int(cid)
        hit = self._geo_cache.get(cid)
        if hit is not None:
            return hit
        if cid < 64:
            g = self.root_geo[cid - 16]
        else:
            v0, e1, e2 = self.geometry_one(cid >> 2)
            c = cid & 3
            if c == 0:
                g = (v0, e1 / 2, e2 / 2)
            elif c == 1:
                g = (v0 + e1 / 2, e1 / 2, e2 / 2)
            elif c == 2:
                g = (v0 + e2 / 2, e1 / 2, e2 / 2)
            else:
                g = (v0 + e1 / 2, e2 / 2, (e2 - e1) / 2)
        self._geo_cache[cid] = g
        return g

    def geometry(self, ids):
        """Batched (v0, e1, e2), each (n, 2)."""
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        v0 = np.empty((len(ids), 2))
        e1 = np.empty((len(ids), 2))
        e2 = np.empty((len(ids), 2))
        for i, cid in enumerate(ids):
            g = self.geometry_one(int(cid))
            v0[i], e1[i], e2[i] = g
        return v0, e1, e2

    def cell_measure(self, ids):
        lev = self.level_of(np.atleast_1d(np.asarray(ids, dtype=np.int64)))
        return np.ldexp(1.0, -(2 * lev + 4))

    def cell_diameter(self, ids):
        lev = self.level_of(np.atleast_1d(np.asarray(ids, dtype=np.int64)))
        return np.ldexp(1.0, -(lev + 1))

    def vertices(self, cid):
        v0, e1, e2 = self.geometry_one(cid)
        return np.array([v0, v0 + e1, v0 + e2])

    def barycentric(self, cid, p):
        """Exact barycentric coordinates of p in cell cid (dyadic inputs)."""
        v0, e1, e2 = self.geometry_one(cid)
        d = p - v0
        det = e1[0] * e2[1] - e1[1] * e2[0]
        s = (d[0] * e2[1] - d[1] * e2[0]) / det
        t = (e1[0] * d[1] - e1[1] * d[0]) / det
        return np.array([1.0 - s - t, s, t])

    def contains(self, cid, p, tol=0.0):
        lam = self.barycentric(cid, p)
        return bool(np.all(lam >= -tol))

    def in_domain(self, p):
        x, y = p
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            return False
        return not (x > 0.5 and y > 0.5)

    def cells_touching_point(self, p, level):
        """All level-`level` cells whose closure contains p."""
        p = np.asarray(p, dtype=float)
        found = []
        stack = [r for r in self.roots if self.contains(r, p)]
        while stack:
            cid = stack.pop()
            if self.level_of(cid) == level:
                found.append(cid)
                continue
            stack.extend(ch for ch in self.children_ids(cid) if self.contains(ch, p))
        return sorted(found)

    def locate(self, p, level):
        cells = self.cells_touching_point(p, level)
        if not cells:
            raise MeshError(f"point {p} outside the L-shape")
        return cells[0]

    # -- boundary structure

    def boundary_facets(self):
        return LSHAPE_FACETS

    def cell_boundary_edges(self, cid):
        """[(local_edge, facet, seg_k)] for edges of cid on the L boundary.

        seg_k indexes the dyadic segment of the facet at the cell's level:
        the edge covers parameter range [seg_k, seg_k+1] / 2^level.
        """
        cid = int(cid)
        root = self.root_of(cid)
        facet = self.root_facet[root]
        if facet < 0:
            return []
        # walk the path tracking whether edge 0 survives and its offset
        edge = 0
        k = 0
        for c in self.path_of(cid):
            nxt = _EDGE_INHERIT[c].get(edge)
            if nxt is None:
                return []
            # parameter bookkeeping: along edge 0 of the root, child 0 covers
            # the first half and child 1 the second; other edges never map
            # back onto the root facet for these root triangles (edge 2 of
            # child 0 lies on parent edge 2, which is interior here).
            if edge == 0:
                k = 2 * k + (1 if c == 1 else 0)
            edge = nxt
        return [(0, facet, k)]


def make_domain(name):
    if name == "interval":
        return IntervalDomain()
    if name == "lshape":
        return LShapeDomain()
    raise MeshError(f"unknown domain '{name}'")


# ---------------------------------------------------------------------------
# tilings


def refine(domain, cid):
    """Children of a cell, deterministically ordered."""
    lev = domain.level_of(cid)
    if lev + 1 > domain.max_level:
        raise MeshError(f"refinement beyond level cap {domain.max_level}")
    return domain.children_ids(cid)


def uniform_tiling(domain, level):
    return frozenset(int(c) for c in domain.cells_at_level(level))


def ancestors_closure(domain, cells):
    """The refinement subtree t(T): cells plus all ancestors.

    The result is completed to a full subtree (every subdivided cell keeps
    all of its children) so its leaf set is always a covering tiling. For
    tiling inputs the completion adds nothing.
    """
    closed = set()
    for cid in cells:
        cid = int(cid)
        while cid not in closed:
            closed.add(cid)
            lev = domain.level_of(cid)
            if lev == 0:
                break
            cid = int(domain.parent_id(cid))
    closed.update(int(r) for r in domain.roots)
    for cid in list(closed):
        kids = domain.children_ids(cid)
        if any(k in closed for k in kids):
            closed.update(kids)
    return closed


def leaves_of(domain, closed):
    """Leaf cells of a parent-closed cell set."""
    return frozenset(
        cid for cid in closed if not any(ch in closed for ch in domain.children_ids(cid))
    )


def tiling_from_cells(domain, cells):
    """Leaf set of the refinement subtree generated by `cells`."""
    return leaves_of(domain, ancestors_closure(domain, cells))


def common_refinement(domain, t1, t2):
    """T1 (+) T2: leaves of the union of the two refinement subtrees."""
    return leaves_of(domain, ancestors_closure(domain, t1) | ancestors_closure(domain, t2))


def is_tiling(domain, cells):
    cells = frozenset(int(c) for c in cells)
    return tiling_from_cells(domain, cells) == cells


def tiling_measure(domain, cells):
    if len(cells) == 0:
        return 0.0
    arr = np.fromiter((int(c) for c in cells), dtype=np.int64)
    return float(np.sum(domain.cell_measure(arr)))


def group_by_level(domain, cells):
    """{level: sorted id array}; deterministic iteration order."""
    if len(cells) == 0:
        return {}
    arr = np.fromiter((int(c) for c in cells), dtype=np.int64)
    arr.sort()
    lev = domain.level_of(arr)
    out = {}
    for lv in np.unique(lev):
        out[int(lv)] = arr[lev == lv]
    return out


# ---------------------------------------------------------------------------
# boundary tilings (2D only)


def seg_id(facet, level, k):
    return (int(facet) << 58) | ((1 << level) + int(k))


def seg_parts(sid):
    sid = int(sid)
    facet = sid >> 58
    heap = sid & ((1 << 58) - 1)
    lev = heap.bit_length() - 1
    return facet, lev, heap - (1 << lev)


def seg_level(sid):
    return seg_parts(sid)[1]


def seg_parent(sid):
    facet, lev, k = seg_parts(sid)
    if lev == 0:
        raise MeshError("root boundary segment has no parent")
    return seg_id(facet, lev - 1, k >> 1)


def seg_children(sid):
    facet, lev, k = seg_parts(sid)
    return [seg_id(facet, lev + 1, 2 * k), seg_id(facet, lev + 1, 2 * k + 1)]


def seg_endpoints(domain, sid):
    facet, lev, k = seg_parts(sid)
    a, b = domain.boundary_facets()[facet]
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h = np.ldexp(1.0, -lev)
    return a + (k * h) * (b - a), a + ((k + 1) * h) * (b - a)


def seg_measure(domain, sid):
    p, q = seg_endpoints(domain, sid)
    return float(np.hypot(*(q - p)))


def boundary_restrict(domain, tiling, part, split):
    """Trace tiling {cell edge on `part`}, tagged with originating cell level.

    `split` maps root facet index -> 'D' | 'N'. Returns a frozenset of
    boundary segment ids; each segment's level equals its cell's level.
    """
    if domain.dim == 1:
        raise DegenerateBoundaryError("degenerate-boundary: 1D domains have point boundaries")
    if part not in ("D", "N"):
        raise MeshError(f"boundary part must be 'D' or 'N', got {part!r}")
    out = set()
    for cid in tiling:
        lev = domain.level_of(int(cid))
        for _, facet, k in domain.cell_boundary_edges(int(cid)):
            if split[facet] == part:
                out.add(seg_id(facet, lev, k))
    return frozenset(out)


def all_dirichlet_split(domain):
    return {f: "D" for f in range(domain.n_facets)}
