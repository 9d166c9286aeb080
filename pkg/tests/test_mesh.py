import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awgm_fosls import mesh
from awgm_fosls.errors import DegenerateBoundaryError


@pytest.fixture(scope="module")
def interval():
    return mesh.make_domain("interval")


@pytest.fixture(scope="module")
def lshape():
    return mesh.make_domain("lshape")


def ival(domain, cid):
    a, h = domain.geometry(np.array([cid]))
    return a[0], a[0] + h[0]


def test_interval_refine_bisects(interval):
    root = interval.roots[0]
    c0, c1 = mesh.refine(interval, root)
    assert ival(interval, c0) == (0.0, 0.5)
    assert ival(interval, c1) == (0.5, 1.0)
    # [1/2,1] at level 1 -> [1/2,3/4],[3/4,1]
    g0, g1 = mesh.refine(interval, c1)
    assert ival(interval, g0) == (0.5, 0.75)
    assert ival(interval, g1) == (0.75, 1.0)
    # idempotent ids
    assert mesh.refine(interval, root) == [c0, c1]


def test_lshape_red_refinement(lshape):
    root = lshape.roots[0]
    kids = mesh.refine(lshape, root)
    assert len(kids) == 4
    total = sum(lshape.cell_measure(np.array([k]))[0] for k in kids)
    assert total == pytest.approx(lshape.cell_measure(np.array([root]))[0], rel=0, abs=0)
    # children partition the parent: vertices of each child inside parent
    for k in kids:
        for v in lshape.vertices(k):
            assert lshape.contains(root, v, tol=0.0)
    # congruent-similar: all children have 1/4 the area and half the diameter
    for k in kids:
        assert lshape.cell_measure(np.array([k]))[0] * 4 == lshape.cell_measure(np.array([root]))[0]


def test_level0_tiling_measures(interval, lshape):
    t1 = mesh.uniform_tiling(interval, 0)
    assert mesh.tiling_measure(interval, t1) == 1.0
    t2 = mesh.uniform_tiling(lshape, 0)
    assert len(t2) == 12
    assert mesh.tiling_measure(lshape, t2) == pytest.approx(0.75, rel=1e-15)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_uniform_tiling_measure_exact(lshape, level):
    t = mesh.uniform_tiling(lshape, level)
    assert abs(mesh.tiling_measure(lshape, t) - 0.75) <= 1e-12 * 0.75


def test_diameter_scaling(lshape):
    c = lshape.roots[3]
    for lev in range(6):
        d = lshape.cell_diameter(np.array([c]))[0]
        assert 2**lev * d == pytest.approx(0.5)
        c = mesh.refine(lshape, c)[lev % 4]


def test_common_refinement_examples(interval):
    r = interval.roots[0]
    c0, c1 = mesh.refine(interval, r)
    g0, g1 = mesh.refine(interval, c0)
    d0, d1 = mesh.refine(interval, c1)
    t = frozenset({c0, c1})
    assert mesh.common_refinement(interval, t, t) == t
    finer = frozenset({g0, g1, c1})
    assert mesh.common_refinement(interval, t, finer) == finer
    # {[0,1/4],[1/4,1/2],[1/2,1]} + {[0,1/2],[1/2,3/4],[3/4,1]}
    t1 = frozenset({g0, g1, c1})
    t2 = frozenset({c0, d0, d1})
    expect = frozenset({g0, g1, d0, d1})
    got = mesh.common_refinement(interval, t1, t2)
    assert got == expect
    assert mesh.tiling_measure(interval, got) == 1.0
    assert len(got) <= len(t1) + len(t2)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=200), min_size=1, max_size=40), st.data())
def test_common_refinement_commutative_associative(seeds, data):
    domain = mesh.make_domain("interval")

    def random_tiling(picks):
        t = set(domain.roots)
        for p in picks:
            leaves = sorted(t)
            cid = leaves[p % len(leaves)]
            if domain.level_of(cid) >= 8:
                continue
            t.remove(cid)
            t.update(domain.children_ids(cid))
        return frozenset(t)

    t1 = random_tiling(seeds)
    t2 = random_tiling(data.draw(st.lists(st.integers(0, 200), max_size=40)))
    t3 = random_tiling(data.draw(st.lists(st.integers(0, 200), max_size=40)))
    assert mesh.common_refinement(domain, t1, t2) == mesh.common_refinement(domain, t2, t1)
    lhs = mesh.common_refinement(domain, mesh.common_refinement(domain, t1, t2), t3)
    rhs = mesh.common_refinement(domain, t1, mesh.common_refinement(domain, t2, t3))
    assert lhs == rhs
    assert mesh.is_tiling(domain, lhs)


def test_boundary_restrict_level0(lshape):
    t = mesh.uniform_tiling(lshape, 0)
    split = mesh.all_dirichlet_split(lshape)
    segs = mesh.boundary_restrict(lshape, t, "D", split)
    assert len(segs) == 8
    assert all(mesh.seg_level(s) == 0 for s in segs)
    assert mesh.boundary_restrict(lshape, t, "N", split) == frozenset()
    total = sum(mesh.seg_measure(lshape, s) for s in segs)
    assert total == pytest.approx(4.0)


def test_boundary_restrict_refined_corner(lshape):
    # refine one boundary cell; its two sub-edges replace the parent edge
    t = set(mesh.uniform_tiling(lshape, 0))
    corner = lshape.roots[0]  # S-triangle of S0, outer edge on facet 0
    t.remove(corner)
    t.update(lshape.children_ids(corner))
    segs = mesh.boundary_restrict(lshape, frozenset(t), "D", mesh.all_dirichlet_split(lshape))
    lv = sorted(mesh.seg_level(s) for s in segs)
    assert lv == [0] * 7 + [1, 1]
    f0 = [mesh.seg_parts(s) for s in segs if mesh.seg_parts(s)[0] == 0]
    assert sorted(p[2] for p in f0) == [0, 1]
    total = sum(mesh.seg_measure(lshape, s) for s in segs)
    assert total == pytest.approx(4.0)


def test_boundary_restrict_1d_degenerate(interval):
    with pytest.raises(DegenerateBoundaryError):
        mesh.boundary_restrict(interval, mesh.uniform_tiling(interval, 0), "D", {})


def test_point_location(lshape):
    for p in [(0.1, 0.1), (0.7, 0.3), (0.2, 0.9), (0.49, 0.49)]:
        cid = lshape.locate(np.array(p), 3)
        assert lshape.contains(cid, np.array(p))
        assert lshape.level_of(cid) == 3
    with pytest.raises(mesh.MeshError):
        lshape.locate(np.array([0.9, 0.9]), 2)


def test_ancestor_arithmetic(lshape):
    c = lshape.roots[5]
    for _ in range(4):
        c = lshape.children_ids(c)[2]
    assert lshape.level_of(c) == 4
    assert lshape.ancestor(c, 0) == lshape.roots[5]
    assert lshape.ancestor(c, 4) == c
    arr = np.array([c], dtype=np.int64)
    assert lshape.ancestor(arr, np.array([2]))[0] == lshape.parent_id(lshape.parent_id(c))
