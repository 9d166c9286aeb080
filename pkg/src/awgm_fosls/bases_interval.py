"""Concrete wavelet bases on the unit interval.

* HaarBasis: orthonormal L2 Haar system (diagnostics and oracle tests only;
  it is not continuous, so the solver never places it in the flux space).
* ThreePointBasis1D: continuous piecewise linear wavelets, one vanishing
  moment from the classic fine-hat minus quarter-coarse-hats stencil, with
  optional homogeneous Dirichlet scaling.
* QuadraticBasis1D: continuous piecewise quadratic wavelets orthogonal to
  the continuous piecewise linears (one extra refinement level) on their
  own mesh, built from per-wavelet local nullspace problems.
"""

import numpy as np
from scipy.linalg import null_space

from . import quadrature
from .bases import Basis
from .errors import MeshError
from .indices import WaveletIndex


def _hat(x, v, h):
    return np.clip(1.0 - np.abs(x - v) / h, 0.0, None)


class HaarBasis(Basis):
    s_rings = 0
    search_radius = 2.0
    min_level = 0
    degree = 0

    def locs_at_level(self, level):
        n = 1 if level == 0 else 1 << (level - 1)
        return np.arange(n, dtype=np.int64)

    def locs_in_box(self, level, lo, hi):
        n = 1 if level == 0 else 1 << (level - 1)
        w = 1.0 if level == 0 else 2.0 ** (1 - level)
        k0 = max(0, int(np.floor(lo[0] / w)) - 1)
        k1 = min(n - 1, int(np.ceil(hi[0] / w)) + 1)
        if k1 < k0:
            return np.empty(0, dtype=np.int64)
        return np.arange(k0, k1 + 1, dtype=np.int64)

    def _build(self, level, loc):
        dom = self.domain
        if level == 0:
            cells = np.array([dom.cell_id(0, 0)], dtype=np.int64)
            coeffs = np.ones((1, 3))
            return cells, coeffs, 1.0, np.array([0.5])
        amp = 2.0 ** ((level - 1) / 2.0)
        cells = np.array(
            [dom.cell_id(level, 2 * loc), dom.cell_id(level, 2 * loc + 1)],
            dtype=np.int64,
        )
        coeffs = np.array([[amp] * 3, [-amp] * 3])
        anchor = np.array([(2 * loc + 1) * 2.0 ** (-level)])
        return cells, coeffs, 0.0, anchor

    def parent(self, level, loc):
        if level == 0:
            return None
        if level == 1:
            return WaveletIndex(self.tag, 0, 0)
        return WaveletIndex(self.tag, level - 1, int(loc) >> 1)


class ThreePointBasis1D(Basis):
    """Continuous piecewise linear three-point wavelets on (0,1).

    With `dirichlet`, hats at the endpoints are excluded and the coarsest
    populated level is 1 (the single hat at 1/2); the mass correction shifts
    entirely onto the interior neighbor so every wavelet above the coarsest
    level keeps its vanishing moment.
    """

    s_rings = 1
    search_radius = 5.0
    degree = 1

    def __init__(self, domain, tag, dirichlet, norm_target):
        super().__init__(domain, tag)
        self.dirichlet = dirichlet
        self.norm_target = norm_target  # 'L2' | 'H1' | 'H1semi'
        self.min_level = 1 if dirichlet else 0

    def locs_at_level(self, level):
        if self.dirichlet:
            if level == 1:
                return np.array([1], dtype=np.int64)
            return np.arange(1, 1 << level, 2, dtype=np.int64)
        if level == 0:
            return np.array([0, 1], dtype=np.int64)
        return np.arange(1, 1 << level, 2, dtype=np.int64)

    def locs_in_box(self, level, lo, hi):
        locs = self.locs_at_level(level)
        pos = locs * 2.0 ** (-level) if level > 0 else locs.astype(float)
        m = (pos >= lo[0]) & (pos <= hi[0])
        return locs[m]

    def _node_eval(self, level, loc, x):
        """Raw wavelet values at points x."""
        h = 2.0 ** (-level)
        v = loc * h
        scaling = (self.dirichlet and level == self.min_level) or level == 0
        if scaling:
            return _hat(x, v, 1.0 if level == 0 else h)
        H = 2.0 * h
        wl, wr = v - h, v + h
        out = _hat(x, v, h)
        mass_f = h  # interior fine hat integral (loc is odd, never 0 or 2^l)
        for w, side in ((wl, "l"), (wr, "r")):
            kw = int(round(w / H))
            boundary = kw in (0, 1 << (level - 1))
            if self.dirichlet and boundary:
                continue
            mass_c = H / 2.0 if boundary else H
            other_excluded = self.dirichlet and (
                (side == "l" and int(round(wr / H)) in (0, 1 << (level - 1)))
                or (side == "r" and int(round(wl / H)) in (0, 1 << (level - 1)))
            )
            q = mass_f / mass_c if other_excluded else mass_f / (2.0 * mass_c)
            out = out - q * _hat(x, w, H)
        return out

    def _build(self, level, loc):
        dom = self.domain
        h = 2.0 ** (-level)
        v = loc * h if level > 0 else float(loc)
        if level == 0:
            cells = np.array([dom.cell_id(0, 0)], dtype=np.int64)
        else:
            scaling = self.dirichlet and level == self.min_level
            lo = loc - (1 if scaling else 3)
            hi = loc + (1 if scaling else 3)
            ks = np.arange(max(0, lo), min(1 << level, hi), dtype=np.int64)
            cells = (np.int64(1) << np.int64(level)) + ks
        ref = quadrature.ref_interval()
        a, hs = dom.geometry(cells)
        nodes = a[:, None] + hs[:, None] * ref.node_coords[None, :]
        coeffs = self._node_eval(level, loc, nodes)
        keep = np.any(np.abs(coeffs) > 1e-14, axis=1)
        cells, coeffs = cells[keep], coeffs[keep]
        # exact moment and normalization from the P2 representation
        moment = float(np.sum((coeffs @ ref.N.T) @ ref.qw * hs[keep]))
        nrm = self._norm(coeffs, hs[keep])
        coeffs = coeffs / nrm
        return cells, coeffs, moment / nrm, np.array([v])

    def _norm(self, coeffs, hs):
        ref = quadrature.ref_interval()
        vals = coeffs @ ref.N.T
        l2 = float(np.sum(hs * (vals**2 @ ref.qw)))
        dvals = coeffs @ ref.dN.T
        h1 = float(np.sum((dvals**2 @ ref.qw) / hs))
        if self.norm_target == "L2":
            return np.sqrt(l2)
        if self.norm_target == "H1":
            return np.sqrt(l2 + h1)
        return np.sqrt(h1)


class QuadraticBasis1D(Basis):
    """Continuous piecewise quadratic H1_0 wavelets, one per cell.

    A wavelet for cell k at level l lives on the patch {k-1, k, k+1}, is
    orthogonal to every same-mesh interior linear hat (the coarse dual
    space at one extra refinement level), and is picked from the local
    nullspace by projecting the bubble of cell k. Interior wavelets then
    carry a vanishing moment automatically (the constrained hats sum to
    one on the patch).
    """

    s_rings = 1
    search_radius = 4.0
    min_level = 0
    degree = 2

    def __init__(self, domain, tag):
        super().__init__(domain, tag)
        self._stencils = {}

    def locs_at_level(self, level):
        if level == 0:
            return np.array([0], dtype=np.int64)
        return np.arange(1 << level, dtype=np.int64)

    def locs_in_box(self, level, lo, hi):
        if level == 0:
            return np.array([0], dtype=np.int64)
        n = 1 << level
        h = 2.0 ** (-level)
        k0 = max(0, int(np.floor(lo[0] / h)) - 1)
        k1 = min(n - 1, int(np.ceil(hi[0] / h)) + 1)
        if k1 < k0:
            return np.empty(0, dtype=np.int64)
        return np.arange(k0, k1 + 1, dtype=np.int64)

    def _build(self, level, loc):
        dom = self.domain
        if level == 0:
            cells = np.array([dom.cell_id(0, 0)], dtype=np.int64)
            coeffs = np.array([[0.0, 1.0, 0.0]])
            nrm = self._h1semi(coeffs, np.array([1.0]))
            coeffs /= nrm
            ref = quadrature.ref_interval()
            mom = float(((coeffs @ ref.N.T) @ ref.qw)[0])
            return cells, coeffs, mom, np.array([0.5])
        n = 1 << level
        h = 2.0 ** (-level)
        key = (min(int(loc), 2), min(n - 1 - int(loc), 2), level if n < 8 else -1)
        sten = self._stencils.get(key)
        if sten is None:
            sten = self._solve_local(level, loc)
            self._stencils[key] = sten
        rel_cells, pattern = sten
        cells = (np.int64(1) << np.int64(level)) + np.int64(loc) + rel_cells
        coeffs = pattern * np.sqrt(h)
        ref = quadrature.ref_interval()
        moment = float(np.sum((coeffs @ ref.N.T) @ ref.qw) * h)
        anchor = np.array([(loc + 0.5) * h])
        return cells, coeffs.copy(), moment, anchor

    def _solve_local(self, level, loc):
        """Nullspace pattern on the 3-cell patch, H1-normalized at h=1."""
        n = 1 << level
        cells_rel = [d for d in (-1, 0, 1) if 0 <= loc + d < n]
        ncell = len(cells_rel)
        # dofs: bubble per patch cell; interior patch vertices (not 0 or 1)
        verts_rel = []
        for v in range(cells_rel[0] + 1, cells_rel[-1] + 1):
            if 0 < loc + v < n:
                verts_rel.append(v)
        ndof = ncell + len(verts_rel)
        # constraints: dual hats at interior mesh vertices overlapping patch
        hats = [
            w for w in range(cells_rel[0], cells_rel[-1] + 2)
            if 0 < loc + w < n
        ]
        ref = quadrature.ref_interval()
        A = np.zeros((len(hats), ndof))
        # work on the patch in cell-local coordinates, h = 1 per cell
        for ci, c in enumerate(cells_rel):
            x = c + ref.qx  # patch coordinate in cell units
            for hi_, w in enumerate(hats):
                hat_vals = np.clip(1.0 - np.abs(x - w), 0.0, None)
                for di in range(ncell + len(verts_rel)):
                    dof_vals = self._dof_vals(di, ci, cells_rel, verts_rel, ref)
                    if dof_vals is None:
                        continue
                    A[hi_, di] += float((hat_vals * dof_vals) @ ref.qw)
        ns = null_space(A)
        if ns.shape[1] == 0:
            raise MeshError(f"empty local nullspace for quadratic wavelet {(level, loc)}")
        anchor_dof = cells_rel.index(0)
        pick = ns @ ns[anchor_dof]
        if np.linalg.norm(pick) < 1e-12:
            pick = ns[:, 0]
        if pick[anchor_dof] < 0:
            pick = -pick
        # assemble P2-nodal pattern per cell
        pattern = np.zeros((ncell, 3))
        for ci in range(ncell):
            pattern[ci, 1] += pick[ci]  # bubble
        for vi, v in enumerate(verts_rel):
            val = pick[ncell + vi]
            ci = cells_rel.index(v)  # vertex v is left end of cell v
            pattern[ci, 0] += val
            pattern[cells_rel.index(v - 1), 2] += val
        nrm = self._h1semi(pattern, np.ones(ncell))
        return np.array(cells_rel, dtype=np.int64), pattern / nrm

    @staticmethod
    def _dof_vals(di, ci, cells_rel, verts_rel, ref):
        ncell = len(cells_rel)
        if di < ncell:
            return ref.N[:, 1] if di == ci else None
        v = verts_rel[di - ncell]
        c = cells_rel[ci]
        if c == v:
            return ref.N[:, 0]
        if c == v - 1:
            return ref.N[:, 2]
        return None

    @staticmethod
    def _h1semi(coeffs, hs):
        ref = quadrature.ref_interval()
        dvals = coeffs @ ref.dN.T
        return float(np.sqrt(np.sum((dvals**2 @ ref.qw) / hs)))
