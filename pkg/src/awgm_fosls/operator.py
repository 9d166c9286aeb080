"""First-order-system least-squares operator in wavelet coordinates.

The solver state holds wavelet coefficients for u (tag 'u') and the flux
components (tags 't1', 't2'). A ResidualPlan freezes, for one admissible
set, eps and k, every index structure of the tree-local approximate
residual evaluation:

  (s1) T(Lambda, eps) = T(Lambda) (+) T(eps), with T(eps) from greedy
       data-oscillation refinement;
  (s2) strong-form volume (+ Neumann trace) moments against the dual-norm
       replacement basis restricted to Lambda^vhat(T(Lambda,eps), k),
       pushed forward through the DN(u) and gradient blocks;
  (s3) the flux-mismatch block restricted to Lambda(T(Lambda), k);
  (s4) the Dirichlet trace block through the boundary basis (2D
       inhomogeneous mode only).

The same plan evaluates the truncated least-squares functional, so the
residual is its exact gradient at matched truncation sets; finite
differences of eval_Q against apply are an oracle test, not a coincidence.
"""

import heapq

import numpy as np

from . import bases as bases_mod
from . import boundary, counters, mesh, transforms
from .errors import CapExceededError, OscillationBudgetError, QuadratureCapacityError
from .indices import CoeffVector, IndexSet
from .poly import ActiveTiling, PiecewisePolynomial, TreeTiling, quad_points
from .problem import osc_monomial
from .transforms import TransformPlan

U_TAG, VHAT_TAG, V2_TAG = "u", "vhat", "v2"


class WellPosednessBound:
    def __init__(self, r, R, g1_norm, g2_norm, lower_const, upper_const):
        self.r, self.R = r, R
        self.g1_norm, self.g2_norm = g1_norm, g2_norm
        self.lower_const = lower_const
        self.upper_const = upper_const


def wellposedness_bounds(r, R, g1_norm, g2_norm):
    """Equivalence constants of the first-order system derivative in terms
    of the original operator's coercivity/boundedness pair."""
    if r <= 0:
        raise ValueError("coercivity constant r must be positive")
    if min(R, g1_norm, g2_norm) < 0:
        raise ValueError("norms must be nonnegative")
    lower = ((1 + g2_norm) / r) ** 2 + (1 + (1 + g1_norm * (1 + g2_norm)) / r) ** 2
    upper = (R + (1 + g1_norm) * g2_norm) ** 2 + (1 + g1_norm) ** 2
    return WellPosednessBound(r, R, g1_norm, g2_norm, lower, upper)


# ---------------------------------------------------------------------------
# data oscillation (step s1)


def _seg_osc(domain, sid, fn, deg):
    """inf_p ||fn - p||^2_{L2(seg)} over degree-deg polynomials in arclength."""
    from .quadrature import DATA_Q1D, leggauss01

    p0, p1 = mesh.seg_endpoints(domain, sid)
    qx, qw = leggauss01(DATA_Q1D)
    pts = p0[None, :] + qx[:, None] * (p1 - p0)[None, :]
    L = float(np.hypot(*(p1 - p0)))
    v = fn(pts)
    P = np.stack([qx**j for j in range(deg + 1)], axis=1)
    G = L * (P.T @ (qw[:, None] * P))
    m = L * (P.T @ (qw * v))
    c = np.linalg.solve(G, m)
    return max(float(L * (qw @ v**2) - m @ c), 0.0)


def _cell_osc(problem, cid, deg):
    dom = problem.domain
    lev = dom.level_of(cid)
    diam = float(dom.cell_diameter(np.array([cid]))[0])
    total = diam**2 * osc_monomial(dom, cid, problem.forcing, deg)
    if dom.dim == 2:
        for _, facet, kseg in dom.cell_boundary_edges(int(cid)):
            sid = mesh.seg_id(facet, lev, kseg)
            if problem.split[facet] == "N" and problem.neumann is not None:
                total += diam * _seg_osc(dom, sid, problem.neumann, deg)
            if problem.split[facet] == "D" and problem.dirichlet is not None:
                total += (1.0 / diam) * _seg_osc(dom, sid, problem.dirichlet, deg)
    return total


def build_T_eps(problem, eps, degree=2, level_cap=30):
    """Greedy tiling with total data oscillation below eps^2 for (f, g, h).

    Repeatedly refines the cell with the largest contribution. Returns
    (tiling, measured oscillation squared).
    """
    dom = problem.domain
    if eps <= 0:
        raise ValueError("eps must be positive")
    if (
        problem.forcing.degree is not None
        and problem.forcing.degree <= degree
        and (dom.dim == 1 or (problem.dirichlet is None and problem.neumann is None))
    ):
        return mesh.uniform_tiling(dom, 0), 0.0
    contrib = {}
    for cid in sorted(mesh.uniform_tiling(dom, 0)):
        contrib[cid] = _cell_osc(problem, cid, degree)
    total = sum(contrib.values())
    heap = [(-v, cid) for cid, v in contrib.items()]
    heapq.heapify(heap)
    while total > eps**2:
        while heap and -heap[0][0] != contrib.get(heap[0][1]):
            heapq.heappop(heap)
        if not heap:
            break
        _, cid = heapq.heappop(heap)
        if dom.level_of(cid) + 1 > level_cap:
            raise OscillationBudgetError(
                f"oscillation-budget-unreachable: level cap {level_cap} hit at "
                f"oscillation {total:.3e} > {eps**2:.3e}"
            )
        total -= contrib.pop(cid)
        for ch in dom.children_ids(cid):
            v = _cell_osc(problem, ch, degree)
            contrib[ch] = v
            total += v
            heapq.heappush(heap, (-v, ch))
    return frozenset(contrib), max(total, 0.0)


def project_forcing(problem, tiling_cells, degree=2):
    """Per-cell best L2 approximation of the forcing (the f_eps of s1)."""
    dom = problem.domain
    tiling = ActiveTiling(dom, tiling_cells)
    out = PiecewisePolynomial(tiling)
    ref = tiling.ref
    Gref = ref.moment_matrix().T @ ref.N
    for lv in tiling.levels:
        g = tiling.geo(lv)
        m = problem.forcing.moments(dom, tiling, lv)
        out.coeffs[lv] = np.linalg.solve(Gref, (m / g["scale"][:, None]).T).T
    return out


# ---------------------------------------------------------------------------


class FoslsOperator:
    def __init__(self, problem, u_basis, t_bases, vhat_basis, v2_basis=None,
                 level_cap=30):
        self.problem = problem
        self.domain = problem.domain
        self.u_basis = u_basis
        self.t_bases = list(t_bases)
        self.vhat_basis = vhat_basis
        self.v2_basis = v2_basis
        self.level_cap = level_cap
        self.t_tags = [b.tag for b in self.t_bases]
        self.state_tags = [U_TAG] + self.t_tags
        self.state_bases = [u_basis] + self.t_bases
        self._check_capacity()
        if problem.has_dirichlet_block and v2_basis is None:
            raise CapExceededError("2D inhomogeneous Dirichlet mode needs a trace basis")

    def _check_capacity(self):
        from .quadrature import DEFAULT_Q1D

        cap = 2 * DEFAULT_Q1D - (2 if self.domain.dim == 2 else 1)
        need = self.problem.nonlin.degree_multiplier() * self.u_basis.degree + 2
        if need > cap:
            raise QuadratureCapacityError(
                f"integrand degree {need} exceeds quadrature capacity {cap}"
            )

    def basis_of(self, tag):
        if tag == U_TAG:
            return self.u_basis
        if tag == VHAT_TAG:
            return self.vhat_basis
        return self.t_bases[self.t_tags.index(tag)]

    def initial_set(self):
        out = IndexSet()
        for b in self.state_bases:
            out.add_array(b.tag, b.min_level, b.locs_at_level(b.min_level))
        return out

    def complete(self, index_set):
        return bases_mod.complete_to_tree(self.state_bases, index_set)

    def is_admissible(self, index_set):
        return all(bases_mod.is_tree(b, index_set) for b in self.state_bases)

    def plan(self, lam, eps, k, mode="residual"):
        return ResidualPlan(self, lam, eps, k, mode)

    def approx_residual(self, state, lam, eps, k):
        return self.plan(lam, eps, k, mode="residual").residual_report(state)

    def apply_DQ_galerkin(self, state, lam, k, eps=None):
        return self.plan(lam, eps, k, mode="galerkin").apply_vector(state)

    def eval_Q_truncated(self, state, lam, eps, k):
        return self.plan(lam, eps, k, mode="galerkin").eval_Q(state)

    def galerkin_condition_number(self, lam, k, eps=None, state0=None,
                                  dense_cap=3000, tol=1e-4):
        plan = self.plan(lam, eps, k, mode="galerkin")
        matvec = plan.linearized_matvec(state0 if state0 is not None else CoeffVector())
        return transforms.condition_number(
            plan.n_state, matvec, dense_cap=dense_cap, tol=tol
        )


class ResidualPlan:
    def __init__(self, op: FoslsOperator, lam: IndexSet, eps, k, mode):
        self.op = op
        self.problem = op.problem
        self.mode = mode
        self.eps = eps
        self.k = k
        dom = op.domain
        prob = op.problem
        self.has_nonlin = prob.nonlin.cubic != 0.0 or prob.nonlin.linear != 0.0
        self.has_neumann = dom.dim == 2 and bool(prob.gamma_n_facets()) \
            and prob.neumann is not None
        self.has_v2 = prob.has_dirichlet_block

        t_lam = bases_mod.tiling_of_tree(op.state_bases, lam, validate=False)
        if eps is None:
            t_eps, self.osc2 = mesh.uniform_tiling(dom, 0), 0.0
        else:
            t_eps, self.osc2 = build_T_eps(prob, eps, degree=2, level_cap=op.level_cap)
        base = mesh.common_refinement(dom, t_lam, t_eps)
        self.n_data_tiling = len(t_eps)
        self.lam = lam
        self.lam_v = bases_mod.tree_of_tiling(op.vhat_basis, base, k)

        if self.has_v2:
            base_d_segs = [s for s, _, _ in boundary.trace_segments(
                dom, base, "D", prob.split)]
            self.lam_v2 = op.v2_basis.tree_of_boundary_tiling(base_d_segs, k)
            v2_carrier_segs = set()
            for lv in self.lam_v2.levels(V2_TAG):
                for loc in self.lam_v2.locs(V2_TAG, lv):
                    v2_carrier_segs.update(
                        int(s) for s in op.v2_basis.descriptor(lv, int(loc)).segs
                    )
            self.rows_s4 = _volume_tree_of_boundary_segs(
                op.u_basis, v2_carrier_segs, k, prob.split)
            self.v2_carrier_segs = v2_carrier_segs
        else:
            self.lam_v2 = None
            self.rows_s4 = IndexSet()
            self.v2_carrier_segs = set()

        if mode == "residual":
            t_v = bases_mod.tiling_of_tree([op.vhat_basis], self.lam_v, validate=False)
            self.rows_s1, self.rows_s2, rows = {}, {}, {}
            for b in op.state_bases:
                r1 = bases_mod.tree_of_tiling(b, t_v, k)
                r2 = bases_mod.tree_of_tiling(b, t_lam, k)
                self.rows_s1[b.tag] = r1
                self.rows_s2[b.tag] = r2
                rows[b.tag] = r1.union(r2)
            if self.has_v2:
                rows[U_TAG] = rows[U_TAG].union(self.rows_s4)
            self.rows = rows
        else:
            self.rows = {b.tag: lam.restrict_basis(b.tag) for b in op.state_bases}
            self.rows_s1 = self.rows
            self.rows_s2 = self.rows
            if self.has_v2:
                self.rows_s4 = self.rows[U_TAG]

        cells = set(base)
        gather = [(op.vhat_basis, self.lam_v)]
        gather += [(op.basis_of(t), self.rows[t]) for t in sorted(self.rows)]
        gather += [(b, lam) for b in op.state_bases]
        for b, ls in gather:
            for lv in ls.levels(b.tag):
                for loc in ls.locs(b.tag, lv):
                    cells.update(int(c) for c in b.descriptor(lv, int(loc)).cells)
        w_cells = mesh.tiling_from_cells(dom, cells)
        self.tree = TreeTiling(dom, w_cells)
        self.tiling = ActiveTiling(dom, w_cells)
        self.n_work = len(w_cells)

        self.synth = {}
        for b in op.state_bases:
            locs = {lv: lam.locs(b.tag, lv) for lv in lam.levels(b.tag)}
            self.synth[b.tag] = TransformPlan(b, locs, self.tree)
        self.pair_rows = {}
        for tag in sorted(self.rows):
            ls = self.rows[tag]
            locs = {lv: ls.locs(tag, lv) for lv in ls.levels(tag)}
            self.pair_rows[tag] = TransformPlan(op.basis_of(tag), locs, self.tree)
        vlocs = {lv: self.lam_v.locs(VHAT_TAG, lv) for lv in self.lam_v.levels(VHAT_TAG)}
        self.vplan = TransformPlan(op.vhat_basis, vlocs, self.tree)

        self.mask_s1, self.mask_s2, self.mask_s4 = {}, {}, {}
        for tag in self.rows:
            plan = self.pair_rows[tag]
            m1 = np.zeros(plan.nrows, dtype=bool)
            m2 = np.zeros(plan.nrows, dtype=bool)
            m4 = np.zeros(plan.nrows, dtype=bool)
            for lv in plan.levels:
                sl = slice(plan.row_offset[lv], plan.row_offset[lv] + len(plan.locs[lv]))
                m1[sl] = self.rows_s1[tag].contains_arr(tag, lv, plan.locs[lv])
                m2[sl] = self.rows_s2[tag].contains_arr(tag, lv, plan.locs[lv])
                if tag == U_TAG and self.has_v2:
                    m4[sl] = self.rows_s4.contains_arr(tag, lv, plan.locs[lv])
            self.mask_s1[tag] = m1
            self.mask_s2[tag] = m2
            if tag == U_TAG:
                self.mask_s4[tag] = m4

        self.n_state = sum(self.synth[t].nrows for t in op.state_tags)
        self._static_data()
        if self.has_neumann or (dom.dim == 2 and prob.gamma_n_facets()):
            self._setup_neumann()
        if self.has_v2:
            self._setup_v2()

    # -- static per-level data -------------------------------------------

    def _static_data(self):
        prob = self.problem
        dom = self.op.domain
        self.qpts = {}
        self.lift_vals = {}
        self.lift_grad = prob.lift_grad() if dom.dim == 1 else 0.0
        for lv in self.tiling.levels:
            pts = quad_points(dom, self.tiling, lv)
            self.qpts[lv] = pts[..., 0] if dom.dim == 1 else pts
            self.lift_vals[lv] = (
                prob.lift_values(self.qpts[lv])
                if (dom.dim == 1 and prob.lift is not None)
                else 0.0
            )
        self.f_leaf_m = {
            lv: prob.forcing.moments(dom, self.tiling, lv) for lv in self.tiling.levels
        }

    def _setup_neumann(self):
        dom = self.op.domain
        traced = boundary.trace_segments(dom, self.tiling.cells, "N", self.problem.split)
        self.n_seg_owner = traced
        self.n_segtree = boundary.SegTree(dom, [t[0] for t in traced]) if traced else None
        self.v_trace = (
            self._trace_table(self.vplan, self.n_segtree, "N") if traced else []
        )

    def _trace_table(self, plan, segtree, part):
        """[(level, seg slots, row ids, interval trace coeffs)] per level."""
        dom = self.op.domain
        ref = self.tiling.ref
        out = []
        for lv in plan.levels:
            slots, rows, co = [], [], []
            for i, loc in enumerate(plan.locs[lv]):
                d = plan.basis.descriptor(lv, int(loc))
                for ci, cid in enumerate(d.cells):
                    for edge, facet, kseg in dom.cell_boundary_edges(int(cid)):
                        if self.problem.split[facet] != part:
                            continue
                        sid = mesh.seg_id(facet, lv, kseg)
                        pos, ok = segtree.slots(lv, np.array([sid], dtype=np.int64))
                        if not ok[0]:
                            continue
                        slots.append(pos[0])
                        rows.append(plan.row_offset[lv] + i)
                        co.append(boundary.edge_trace_coeffs(ref, d.coeffs[ci], edge))
            if slots:
                out.append((lv, np.array(slots), np.array(rows), np.array(co)))
        return out

    def _setup_v2(self):
        dom = self.op.domain
        prob = self.problem
        traced = boundary.trace_segments(dom, self.tiling.cells, "D", prob.split)
        self.d_trace_owner = {}  # trace seg -> (cell, edge)
        segs = set()
        for sid, cid, edge in traced:
            segs.add(sid)
            self.d_trace_owner[sid] = (cid, edge)
        segs |= self.v2_carrier_segs
        # own-level segments of U rows on Gamma_D (for the s4 pairing)
        uplan = self.pair_rows[U_TAG]
        for lv in uplan.levels:
            for loc in uplan.locs[lv]:
                d = uplan.basis.descriptor(lv, int(loc))
                for cid in d.cells:
                    for edge, facet, kseg in dom.cell_boundary_edges(int(cid)):
                        if prob.split[facet] == "D":
                            segs.add(mesh.seg_id(facet, lv, kseg))
        self.d_segtree = boundary.SegTree(dom, segs)
        v2locs = {lv: self.lam_v2.locs(V2_TAG, lv) for lv in self.lam_v2.levels(V2_TAG)}
        self.v2_plan = boundary.SegPlan(self.op.v2_basis, v2locs, self.d_segtree)
        self.u_d_trace = self._trace_table(uplan, self.d_segtree, "D")

    # -- value assembly -----------------------------------------------------

    def _synthesize_state(self, state):
        u = self._synth_one(U_TAG, state)
        thetas = [self._synth_one(t, state) for t in self.op.t_tags]
        return u, thetas

    def _synth_one(self, tag, state):
        x = self.synth[tag].flat_from_vector(state, tag)
        closure = self.synth[tag].synthesize_closure(x)
        transforms.sweep_down(self.tree, closure)
        return transforms.leaves_poly(self.tree, closure, self.tiling)

    def _flux_values(self, u, thetas, include_lift):
        """F_q = (A grad u)_q - theta_q per level, plus A F for the U rows."""
        grads = u.gradient()
        gvals = [{lv: g.values_at_quad(lv) for lv in self.tiling.levels} for g in grads]
        if include_lift and self.op.domain.dim == 1 and self.lift_grad:
            for lv in gvals[0]:
                gvals[0][lv] = gvals[0][lv] + self.lift_grad
        A = self.problem.diffusion
        agrad = gvals if A.is_identity else [
            {lv: sum(A.matrix[q, r] * gvals[r][lv] for r in range(len(gvals)))
             for lv in gvals[0]}
            for q in range(len(gvals))
        ]
        flux = [
            {lv: agrad[q][lv] - th.values_at_quad(lv) for lv in self.tiling.levels}
            for q, th in enumerate(thetas)
        ]
        aflux = flux if A.is_identity else [
            {lv: sum(A.matrix[q, r] * flux[r][lv] for r in range(len(flux)))
             for lv in flux[0]}
            for q in range(len(flux))
        ]
        return flux, aflux

    def _div_values(self, thetas):
        out = {lv: 0.0 for lv in self.tiling.levels}
        for q, th in enumerate(thetas):
            d = th.gradient()[q]
            for lv in self.tiling.levels:
                out[lv] = out[lv] + d.values_at_quad(lv)
        return out

    def _brace_moments(self, brace_vals, include_f):
        """Propagated moments of the strong-form volume residual."""
        leaf = {lv: np.zeros((len(self.tree.ids(lv)), self.tree.ref.nnodes))
                for lv in self.tree.levels}
        Mq = self.tree.ref.moment_matrix()
        for lv in self.tiling.levels:
            g = self.tiling.geo(lv)
            vals = brace_vals[lv]
            if np.isscalar(vals):
                vals = np.full((len(self.tiling.ids(lv)), len(self.tiling.ref.qw)), vals)
            mom = (vals @ Mq) * g["scale"][:, None]
            if include_f:
                mom = mom - self.f_leaf_m[lv]
            pos, _ = self.tree.slots(lv, self.tiling.ids(lv))
            leaf[lv][pos] = mom
            counters.add(np.size(vals))
        return transforms.propagate(self.tree, leaf)

    def _neumann_half(self, thetas, include_h):
        """<psi_vhat, theta.n - h> over Gamma_N."""
        dom = self.op.domain
        ref = self.tiling.ref
        tree = self.n_segtree
        m = tree.zero_moments()
        iref = tree.ref
        Mseg = iref.moment_matrix()
        for sid, cid, edge in self.n_seg_owner:
            lev = dom.level_of(cid)
            pos_c, _ = self.tiling.slots(lev, np.array([cid], dtype=np.int64))
            v0, e1, e2 = dom.geometry_one(cid)
            verts = [v0, v0 + e1, v0 + e2]
            a, b = ref.edge_verts[edge]
            tang = verts[b] - verts[a]
            L = float(np.hypot(*tang))
            nvec = np.array([tang[1], -tang[0]]) / L
            tr_vals = 0.0
            for q, th in enumerate(thetas):
                cf = th.coeffs[lev][pos_c[0]]
                tr = boundary.edge_trace_coeffs(ref, cf, edge)
                tr_vals = tr_vals + nvec[q] * (iref.N @ tr)
            if include_h:
                pts = verts[a][None, :] + iref.qx[:, None] * tang[None, :]
                tr_vals = tr_vals - self.problem.neumann(pts)
            pos, _ = tree.slots(lev, np.array([sid], dtype=np.int64))
            m[lev][pos[0]] += L * (Mseg.T @ tr_vals)
        tree.propagate(m)
        r = np.zeros(self.vplan.nrows)
        for lv, slots, rows, co in self.v_trace:
            np.add.at(r, rows, np.einsum("pn,pn->p", co, m[lv][slots]))
        return r

    def _v2_half(self, u, include_g):
        """<psi_v2, u - g> over Gamma_D, one entry per lam_v2 row."""
        dom = self.op.domain
        ref = self.tiling.ref
        tree = self.d_segtree
        iref = tree.ref
        Mseg = iref.moment_matrix()
        m = tree.zero_moments()
        for lv in tree.levels:
            ids = tree.ids(lv)
            mask = tree.leaf_mask[lv]
            for j in np.nonzero(mask)[0]:
                sid = int(ids[j])
                vals = self._u_trace_vals(u, sid, iref.qx)
                if include_g and self.problem.dirichlet is not None:
                    p0, p1 = mesh.seg_endpoints(dom, sid)
                    pts = p0[None, :] + iref.qx[:, None] * (p1 - p0)[None, :]
                    vals = vals - self.problem.dirichlet(pts)
                L = mesh.seg_measure(dom, sid)
                m[lv][j] += L * (Mseg.T @ vals)
        tree.propagate(m)
        self._v2_moments = m
        return self.v2_plan.pair(m)

    def _u_trace_vals(self, u, sid, ts):
        """Trace of u at parameters ts along a (possibly deep) Gamma_D seg."""
        dom = self.op.domain
        s = sid
        while s not in self.d_trace_owner:
            if mesh.seg_level(s) == 0:
                raise CapExceededError("boundary segment without owner cell")
            s = mesh.seg_parent(s)
        cid, edge = self.d_trace_owner[s]
        lev = dom.level_of(cid)
        f_s, lv_s, k_s = mesh.seg_parts(s)
        f_d, lv_d, k_d = mesh.seg_parts(sid)
        # parameter of sid inside the owner edge
        scalefac = 2.0 ** (lv_s - lv_d)
        local = (k_d * scalefac - k_s) + ts * scalefac
        pos_c, _ = self.tiling.slots(lev, np.array([cid], dtype=np.int64))
        ref = self.tiling.ref
        tr = boundary.edge_trace_coeffs(ref, u.coeffs[lev][pos_c[0]], edge)
        iref = self.d_segtree.ref
        return iref.shapes(local) @ tr

    def _v2_push(self, r3_half):
        """<psi_u, synthesized r3_half> over Gamma_D on the s4 rows."""
        closure = self.v2_plan.synthesize_closure(r3_half)
        boundary.sweep_down_segs(self.d_segtree, closure)
        # moments of the synthesized trace functional on each closure seg
        iref = self.d_segtree.ref
        Mseg = iref.moment_matrix()
        Gref = Mseg.T @ iref.N
        m = self.d_segtree.zero_moments()
        for lv in self.d_segtree.levels:
            mask = self.d_segtree.leaf_mask[lv]
            if not np.any(mask):
                continue
            lens = self.d_segtree.lengths(lv)[mask]
            vals = closure[lv][mask] @ iref.N.T
            m[lv][mask] = (vals @ Mseg) * lens[:, None]
        self.d_segtree.propagate(m)
        r = np.zeros(self.pair_rows[U_TAG].nrows)
        for lv, slots, rows, co in self.u_d_trace:
            np.add.at(r, rows, np.einsum("pn,pn->p", co, m[lv][slots]))
        return r * self.mask_s4[U_TAG]

    # -- public entry points -------------------------------------------------

    def eval_Q(self, state):
        u, thetas = self._synthesize_state(state)
        r_half = self._r_half(u, thetas, include_data=True)
        flux, _ = self._flux_values(u, thetas, include_lift=True)
        ref = self.tiling.ref
        flux_sq = 0.0
        for q in range(len(flux)):
            for lv in self.tiling.levels:
                g = self.tiling.geo(lv)
                flux_sq += float(np.sum(g["scale"] * (flux[q][lv] ** 2 @ ref.qw)))
        r3_sq = 0.0
        if self.has_v2:
            r3 = self._v2_half(u, include_g=True)
            r3_sq = float(r3 @ r3)
        return 0.5 * (float(r_half @ r_half) + flux_sq + r3_sq)

    def _r_half(self, u, thetas, include_data, dn_mult=None):
        div_vals = self._div_values(thetas)
        if dn_mult is None:
            brace = {
                lv: self.problem.nonlin.value(
                    u.values_at_quad(lv) + self.lift_vals[lv], self.qpts[lv]
                ) - div_vals[lv]
                for lv in self.tiling.levels
            }
        else:
            brace = {
                lv: dn_mult[lv] * u.values_at_quad(lv) - div_vals[lv]
                for lv in self.tiling.levels
            }
        mom = self._brace_moments(brace, include_f=include_data)
        r_half = self.vplan.pair(mom)
        if self.op.domain.dim == 2 and self.n_segtree is not None:
            r_half = r_half + self._neumann_half(
                thetas, include_h=include_data and self.has_neumann
            )
        return r_half

    def apply_flat(self, state):
        u, thetas = self._synthesize_state(state)
        return self._apply_core(u, thetas, include_data=True, dn_mult=None)

    def apply_vector(self, state):
        flat, _ = self.apply_flat(state)
        out = CoeffVector()
        for tag in self.op.state_tags:
            self.pair_rows[tag].vector_from_flat(flat[tag], out, tag)
        return out

    def _apply_core(self, u, thetas, include_data, dn_mult):
        prob = self.problem
        parts = {}
        r_half = self._r_half(u, thetas, include_data, dn_mult=dn_mult)
        if dn_mult is None:
            cur_dn = {
                lv: prob.nonlin.dvalue(
                    u.values_at_quad(lv) + self.lift_vals[lv], self.qpts[lv]
                )
                for lv in self.tiling.levels
            } if self.has_nonlin else None
        else:
            cur_dn = dn_mult if self.has_nonlin else None
        # s2b: push r_half forward
        closure = self.vplan.synthesize_closure(r_half)
        transforms.sweep_down(self.tree, closure)
        rh = transforms.leaves_poly(self.tree, closure, self.tiling)
        rh_grads = rh.gradient()
        out = {}
        if cur_dn is not None:
            mom_u = transforms.value_moments(
                self.tree, self.tiling,
                {lv: cur_dn[lv] * rh.values_at_quad(lv) for lv in self.tiling.levels},
            )
            ru = self.pair_rows[U_TAG].pair(mom_u) * self.mask_s1[U_TAG]
        else:
            ru = np.zeros(self.pair_rows[U_TAG].nrows)
        rts = []
        for q, tag in enumerate(self.op.t_tags):
            mq = transforms.value_moments(
                self.tree, self.tiling,
                {lv: rh_grads[q].values_at_quad(lv) for lv in self.tiling.levels},
            )
            rts.append(self.pair_rows[tag].pair(mq) * self.mask_s1[tag])
        parts["strong_pde"] = float(
            ru @ ru + sum(r @ r for r in rts)
        )
        # s3: flux mismatch
        flux, aflux = self._flux_values(
            u, thetas, include_lift=include_data and dn_mult is None
        )
        moms = [
            transforms.value_moments(self.tree, self.tiling, aflux[q])
            for q in range(len(aflux))
        ]
        w = transforms.grad_combine(self.tree, moms)
        du = self.pair_rows[U_TAG].pair(w) * self.mask_s2[U_TAG]
        ru = ru + du
        fpart = float(du @ du)
        for q, tag in enumerate(self.op.t_tags):
            mq = transforms.value_moments(self.tree, self.tiling, flux[q])
            dt = self.pair_rows[tag].pair(mq) * self.mask_s2[tag]
            rts[q] = rts[q] - dt
            fpart += float(dt @ dt)
        parts["flux_mismatch"] = fpart
        if self.has_v2:
            r3_half = self._v2_half(u, include_g=include_data and dn_mult is None)
            b = self._v2_push(r3_half)
            ru = ru + b
            parts["dirichlet_trace"] = float(b @ b)
        out[U_TAG] = ru
        for q, tag in enumerate(self.op.t_tags):
            out[tag] = rts[q]
        return out, parts

    def linearized_matvec(self, state0):
        u0, _ = self._synthesize_state(state0)
        prob = self.problem
        dn0 = {
            lv: prob.nonlin.dvalue(
                u0.values_at_quad(lv) + self.lift_vals[lv], self.qpts[lv]
            )
            for lv in self.tiling.levels
        }

        def matvec(x):
            vec = self.unpack(np.asarray(x, dtype=float))
            u, thetas = self._synthesize_state(vec)
            flat, _ = self._apply_core(u, thetas, include_data=False, dn_mult=dn0)
            return self.pack_flat(flat)

        return matvec

    def pack(self, vec):
        return np.concatenate(
            [self.synth[t].flat_from_vector(vec, t) for t in self.op.state_tags]
        )

    def pack_flat(self, flat_dict):
        return np.concatenate([flat_dict[t] for t in self.op.state_tags])

    def unpack(self, x):
        out = CoeffVector()
        off = 0
        for t in self.op.state_tags:
            n = self.synth[t].nrows
            self.synth[t].vector_from_flat(x[off:off + n], out, t)
            off += n
        return out

    def residual_report(self, state):
        before = counters.snapshot()
        flat, parts = self.apply_flat(state)
        vec = CoeffVector()
        for tag in self.op.state_tags:
            self.pair_rows[tag].vector_from_flat(flat[tag], vec, tag)
        return ResidualReport(
            vec, vec.norm(), parts, self.eps, self.k,
            self.n_work, self.n_data_tiling, counters.snapshot() - before,
        )

    # default attribute for 1D / no-Neumann plans
    n_segtree = None


def _volume_tree_of_boundary_segs(basis, segs, k, split):
    """Lambda^U(T_Gamma, k): volume wavelets whose S-trace meets the
    k-coarsened boundary tiling closure."""
    dom = basis.domain
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

    def s_trace_hits(desc, lv, src_level, src_set):
        for cid in desc.s_cells:
            for _, facet, kseg in dom.cell_boundary_edges(int(cid)):
                cand = mesh.seg_id(facet, src_level, kseg >> (lv - src_level)) \
                    if lv >= src_level else None
                if cand is not None and cand in src_set:
                    return True
        return False

    top_full = max(k, basis.min_level)
    for lv in range(basis.min_level, top_full + 1):
        keep = []
        for loc in basis.locs_at_level(lv):
            d = basis.descriptor(lv, int(loc))
            if s_trace_hits(d, lv, 0, by_level.get(0, set())):
                keep.append(int(loc))
        out.add_array(basis.tag, lv, np.array(sorted(keep), dtype=np.int64))
    top = max(by_level) if by_level else 0
    for lv in range(top_full + 1, top + k + 1):
        src = by_level.get(lv - k)
        if not src:
            continue
        found = set()
        for s in src:
            p0, p1 = mesh.seg_endpoints(dom, s)
            lo = np.minimum(p0, p1)
            hi = np.maximum(p0, p1)
            pad = basis.search_radius * 2.0 ** (-lv)
            for loc in basis.locs_in_box(lv, lo - pad, hi + pad):
                d = basis.descriptor(lv, int(loc))
                if s_trace_hits(d, lv, lv - k, src):
                    found.add(int(loc))
        out.add_array(basis.tag, lv, np.array(sorted(found), dtype=np.int64))
    # parent closure (S-nesting gives it; enforce the contract)
    for lv in sorted(out.levels(basis.tag), reverse=True):
        if lv == basis.min_level:
            continue
        parents = [basis.parent(lv, int(loc)).loc for loc in out.locs(basis.tag, lv)]
        out.add_array(basis.tag, lv - 1, np.array(parents, dtype=np.int64))
    return out


class ResidualReport:
    """Approximate residual with its provenance and cost accounting."""

    def __init__(self, vector, norm, parts, epsilon_used, k_used, n_work,
                 n_data_tiling, ops):
        self.vector = vector
        self.norm = norm
        self.parts = parts
        self.epsilon_used = epsilon_used
        self.k_used = k_used
        self.n_work_tiling = n_work
        self.n_data_tiling = n_data_tiling
        self.ops = ops
