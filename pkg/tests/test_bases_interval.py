import numpy as np
import pytest

from awgm_fosls import bases, mesh, quadrature
from awgm_fosls.bases_interval import HaarBasis, QuadraticBasis1D, ThreePointBasis1D
from awgm_fosls.indices import IndexSet, WaveletIndex


@pytest.fixture(scope="module")
def dom():
    return mesh.make_domain("interval")


@pytest.fixture(scope="module")
def haar(dom):
    return HaarBasis(dom, "haar")


@pytest.fixture(scope="module")
def tp_l2(dom):
    return ThreePointBasis1D(dom, "t1", dirichlet=False, norm_target="L2")


@pytest.fixture(scope="module")
def tp_h10(dom):
    return ThreePointBasis1D(dom, "vhat", dirichlet=True, norm_target="H1semi")


@pytest.fixture(scope="module")
def quad(dom):
    return QuadraticBasis1D(dom, "u")


def eval_descriptor(dom, d, x):
    """Pointwise evaluation of a wavelet from its P2 pieces."""
    ref = quadrature.ref_interval()
    out = np.zeros_like(np.atleast_1d(x), dtype=float)
    a, h = dom.geometry(d.cells)
    for i in range(len(d.cells)):
        xs = (np.atleast_1d(x) - a[i]) / h[i]
        m = (xs >= -1e-14) & (xs <= 1 + 1e-14)
        vals = ref.shapes(np.clip(xs[m], 0, 1)) @ d.coeffs[i]
        # half-weight on shared endpoints to avoid double counting
        w = np.where((np.abs(xs[m]) < 1e-14) | (np.abs(xs[m] - 1) < 1e-14), 0.5, 1.0)
        out[m] += vals * w
    return out


def test_haar_definition(dom, haar):
    d0 = haar.descriptor(0, 0)
    assert np.allclose(eval_descriptor(dom, d0, np.array([0.3, 0.77])), 1.0)
    d = haar.descriptor(1, 0)
    assert np.allclose(eval_descriptor(dom, d, np.array([0.2])), 1.0)
    assert np.allclose(eval_descriptor(dom, d, np.array([0.8])), -1.0)
    d3 = haar.descriptor(3, 0)
    # 2^{(l-1)/2} psi(2^{l-1} x) on [0, 1/4]
    assert np.allclose(eval_descriptor(dom, d3, np.array([0.05])), 2.0)
    assert np.allclose(eval_descriptor(dom, d3, np.array([0.2])), -2.0)
    assert d3.moment == 0.0 and d3.has_vanishing_moment
    assert d0.moment == pytest.approx(1.0)


def test_haar_parent_chain(haar):
    assert haar.parent(3, 0) == WaveletIndex("haar", 2, 0)
    assert haar.parent(1, 0) == WaveletIndex("haar", 0, 0)
    assert haar.parent(0, 0) is None
    assert haar.parent(4, 5) == WaveletIndex("haar", 3, 2)


def test_haar_s_equals_support(dom, haar):
    d = haar.descriptor(2, 1)
    assert np.array_equal(d.s_cells, d.cells)


def test_complete_to_tree_haar(dom, haar):
    got = bases.complete_to_tree([haar], IndexSet.from_indices([WaveletIndex("haar", 3, 0)]))
    expect = IndexSet.from_indices(
        [WaveletIndex("haar", lv, 0) for lv in range(4)]
    )
    assert got == expect
    # empty -> all level-0; idempotence
    empty = bases.complete_to_tree([haar], IndexSet())
    assert list(empty) == [WaveletIndex("haar", 0, 0)]
    assert bases.complete_to_tree([haar], got) == got


def test_tiling_of_tree_haar_worked_example(dom, haar):
    """Figure-1 round trip, bit exact."""
    tree = IndexSet.from_indices([WaveletIndex("haar", lv, 0) for lv in range(4)])
    tiling = bases.tiling_of_tree([haar], tree)
    expect = frozenset(
        {dom.cell_id(3, 0), dom.cell_id(3, 1), dom.cell_id(2, 1), dom.cell_id(1, 1)}
    )
    assert tiling == expect  # {[0,1/8],[1/8,1/4],[1/4,1/2],[1/2,1]}


def test_tree_of_tiling_haar_worked_example(dom, haar):
    tiling = frozenset(
        {dom.cell_id(3, 0), dom.cell_id(3, 1), dom.cell_id(2, 1), dom.cell_id(1, 1)}
    )
    got = bases.tree_of_tiling(haar, tiling, 1)
    expect = IndexSet.from_indices(
        [
            WaveletIndex("haar", 0, 0),
            WaveletIndex("haar", 1, 0),
            WaveletIndex("haar", 2, 0),
            WaveletIndex("haar", 2, 1),
            WaveletIndex("haar", 3, 0),
            WaveletIndex("haar", 3, 1),
            WaveletIndex("haar", 4, 0),
            WaveletIndex("haar", 4, 1),
        ]
    )
    assert got == expect


def test_tree_of_tiling_k0_level0(dom, haar, tp_l2):
    t0 = mesh.uniform_tiling(dom, 0)
    got = bases.tree_of_tiling(haar, t0, 0)
    assert got == IndexSet.from_indices([WaveletIndex("haar", 0, 0)])
    got2 = bases.tree_of_tiling(tp_l2, t0, 0)
    assert got2 == IndexSet.from_indices(
        [WaveletIndex("t1", 0, 0), WaveletIndex("t1", 0, 1)]
    )


def test_threepoint_moments_and_norms(dom, tp_l2):
    ref = quadrature.ref_interval()
    for lv, loc in [(1, 1), (2, 1), (3, 3), (4, 7), (5, 1), (5, 31)]:
        d = tp_l2.descriptor(lv, loc)
        assert abs(d.moment) < 1e-13
        a, h = dom.geometry(d.cells)
        vals = d.coeffs @ ref.N.T
        l2 = float(np.sum(h * (vals**2 @ ref.qw)))
        assert l2 == pytest.approx(1.0, rel=1e-12)
    d0 = tp_l2.descriptor(0, 0)
    assert not d0.has_vanishing_moment


def test_threepoint_dirichlet_vanishing(dom, tp_h10):
    # every wavelet above the coarsest level keeps one vanishing moment,
    # boundary-adjacent ones included (mass shifted to the interior side)
    for lv, loc in [(2, 1), (2, 3), (3, 1), (3, 7), (4, 3), (5, 17)]:
        d = tp_h10.descriptor(lv, loc)
        assert abs(d.moment) < 1e-13, (lv, loc)
    scaling = tp_h10.descriptor(1, 1)
    assert not scaling.has_vanishing_moment
    # H1-seminorm normalization
    ref = quadrature.ref_interval()
    d = tp_h10.descriptor(3, 3)
    a, h = dom.geometry(d.cells)
    dvals = d.coeffs @ ref.dN.T
    h1 = float(np.sum((dvals**2 @ ref.qw) / h))
    assert h1 == pytest.approx(1.0, rel=1e-12)
    # zero trace at the endpoints
    assert abs(eval_descriptor(dom, tp_h10.descriptor(2, 1), np.array([0.0]))[0]) < 1e-13


def test_threepoint_interior_stencil(dom, tp_l2):
    """Fine hat minus a quarter of each coarse neighbor hat."""
    lv, loc = 4, 7
    d = tp_l2.descriptor(lv, loc)
    h = 2.0**-lv
    v = loc * h
    x = np.linspace(v - 3 * h, v + 3 * h, 23)
    vals = eval_descriptor(dom, d, x)
    expect = (
        _hat(x, v, h) - 0.25 * _hat(x, v - h, 2 * h) - 0.25 * _hat(x, v + h, 2 * h)
    )
    nrm = np.max(np.abs(expect))
    got_peak = np.max(np.abs(vals))
    assert np.allclose(vals / got_peak, expect / nrm, atol=1e-12)


def _hat(x, v, h):
    return np.clip(1.0 - np.abs(x - v) / h, 0.0, None)


def test_threepoint_parent_and_s(dom, tp_l2):
    d = tp_l2.descriptor(3, 3)
    p = tp_l2.parent(3, 3)
    assert p.level == 2
    pd = tp_l2.descriptor(p.level, p.loc)
    # S-neighborhood: support plus one ring of same-level cells
    supp = set(d.cells.tolist())
    ring = set()
    for c in supp:
        lev, k = dom.cell_index(c)
        ring.update({c - 1, c + 1})
    expect = {c for c in (supp | ring) if (1 << 3) <= c < (1 << 4)}
    assert set(d.s_cells.tolist()) == expect


def test_s_nesting_invariant(dom, tp_l2, tp_h10, quad):
    """S(child) within S(parent) after refining to the child level."""
    rng = np.random.default_rng(7)
    for basis in (tp_l2, tp_h10, quad):
        for lv in range(basis.min_level + 1, 7):
            locs = basis.locs_at_level(lv)
            for loc in locs[rng.permutation(len(locs))[: min(8, len(locs))]]:
                d = basis.descriptor(lv, int(loc))
                p = basis.parent(lv, int(loc))
                pd = basis.descriptor(p.level, p.loc)
                parent_fine = {
                    (int(c) << 1) | j for c in pd.s_cells for j in range(2)
                }
                assert set(d.s_cells.tolist()) <= parent_fine, (basis.tag, lv, loc)


def test_quadratic_level0_is_bubble(dom, quad):
    d = quad.descriptor(0, 0)
    x = np.array([0.25, 0.5, 0.7])
    vals = eval_descriptor(dom, d, x)
    bubble = x * (1 - x)
    assert np.allclose(vals / vals[1], bubble / bubble[1], rtol=1e-12)
    # H1-seminorm 1
    ref = quadrature.ref_interval()
    dvals = d.coeffs @ ref.dN.T
    assert float(np.sum(dvals**2 @ ref.qw)) == pytest.approx(1.0, rel=1e-12)


def test_quadratic_wavelets_orthogonal_to_dual_hats(dom, quad):
    """Biorthogonality: every wavelet kills every interior same-mesh hat."""
    ref = quadrature.ref_interval()
    for lv in (1, 2, 3, 4):
        n = 1 << lv
        h = 2.0**-lv
        for loc in range(n):
            d = quad.descriptor(lv, int(loc))
            a, hs = dom.geometry(d.cells)
            for w in range(1, n):
                x = a[:, None] + hs[:, None] * ref.qx[None, :]
                hat = np.clip(1.0 - np.abs(x - w * h) / h, 0.0, None)
                vals = d.coeffs @ ref.N.T
                ip = float(np.sum(hs[:, None] * hat * vals * ref.qw[None, :]))
                assert abs(ip) < 1e-12, (lv, loc, w)


def test_quadratic_interior_vanishing_moment(dom, quad):
    for lv, loc in [(3, 3), (3, 4), (4, 7), (5, 13)]:
        d = quad.descriptor(lv, loc)
        assert d.has_vanishing_moment, (lv, loc)


def test_quadratic_level1_moment_element(dom, quad):
    """The level-1 pair spans a zero-moment wavelet on two cells."""
    d0 = quad.descriptor(1, 0)
    d1 = quad.descriptor(1, 1)
    m0, m1 = d0.moment, d1.moment
    assert abs(m0) + abs(m1) > 0  # near-boundary moments may be nonzero
    # combination c0*psi0 + c1*psi1 with zero moment exists and is nontrivial
    c0, c1 = m1, -m0
    if abs(c0) + abs(c1) == 0:
        c0, c1 = 1.0, 0.0
    assert abs(c0 * m0 + c1 * m1) < 1e-13
    # and its support stays within the 2 level-1 cells
    cells = set(d0.cells.tolist()) | set(d1.cells.tolist())
    assert cells <= {dom.cell_id(1, 0), dom.cell_id(1, 1)}


def test_quadratic_completion_spans_quadratics(dom, quad):
    """Wavelets up to level L span exactly the quadratics of mesh L."""
    from scipy.linalg import lstsq

    ref = quadrature.ref_interval()
    L = 3
    cols = []
    tiling = mesh.uniform_tiling(dom, L)
    ids = np.sort(np.fromiter(tiling, dtype=np.int64))
    for lv in range(L + 1):
        for loc in quad.locs_at_level(lv):
            d = quad.descriptor(lv, int(loc))
            # refine pieces to level L and collect nodal coefficients
            col = np.zeros((len(ids), 3))
            for ci, cid in enumerate(d.cells):
                stack = [(int(cid), d.coeffs[ci])]
                while stack:
                    c, cf = stack.pop()
                    if dom.level_of(c) == L:
                        col[np.searchsorted(ids, c)] += cf
                    else:
                        for j in range(2):
                            stack.append(
                                ((c << 1) | j, ref.transfer[j].T @ cf)
                            )
            cols.append(col.ravel())
        if lv == L:
            break
    M = np.array(cols).T
    assert M.shape[1] == 2 ** (L + 1) - 1  # dim of quadratic H1_0 space
    # target: u = x(1-x) exactly representable
    a, h = dom.geometry(ids)
    nodes = a[:, None] + h[:, None] * ref.node_coords[None, :]
    target = (nodes * (1 - nodes)).ravel()
    sol, res, rank, _ = lstsq(M, target)
    assert rank == M.shape[1]
    assert np.linalg.norm(M @ sol - target) < 1e-10
