import numpy as np
import pytest
from hypothesis import given, strategies as st

from cilsynth.geometry import (Cone, Halfspace, IndexSets, Partition, PolyCell, adjacency,
                               build_index_sets, box_cell, cell_nonempty, conic_partition,
                               shared_facet, sector_cones)
from cilsynth import lpcore


def test_interval_nonempty():
    assert cell_nonempty(PolyCell([[1.0], [-1.0]], [1.0, 1.0]))


def test_contradictory_interval_empty():
    assert not cell_nonempty(PolyCell([[1.0], [-1.0]], [-2.0, 1.0]))


def test_random_cells_against_grid():
    rng = np.random.default_rng(3)
    g = np.arange(-10, 10 + 1e-9, 0.01)
    X = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2)
    agree = 0
    for _ in range(20):
        E = rng.standard_normal((5, 2))
        e = rng.uniform(-3, 3, 5)
        cell = PolyCell(E, e)
        sampled = bool(np.any(cell.contains(X, 0.0)))
        lp = cell_nonempty(cell)
        # the grid can only miss slivers thinner than its spacing
        if sampled:
            assert lp
        agree += sampled == lp
    assert agree >= 19


def test_dimension_checks():
    with pytest.raises(ValueError):
        PolyCell([[1.0, 0.0]], [1.0, 2.0])
    with pytest.raises(ValueError):
        Halfspace([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        Cone([[1.0, 0.0]], [0.0])


def test_quadrant_facet():
    a = Cone(np.eye(2), [0.0, 0.0])
    b = Cone([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    f = shared_facet(a, b)
    assert np.allclose(np.abs(f), [1.0, 0.0])
    # points from b into a
    assert f @ np.array([1.0, 0.5]) > 0 and f @ np.array([-1.0, 0.5]) < 0


def test_identical_cones_have_no_facet():
    a = Cone(np.eye(2), [0.0, 0.0])
    assert shared_facet(a, a) is None


def test_opposite_quadrants_touch_only_at_center():
    a = Cone(np.eye(2), [0.0, 0.0])
    b = Cone(-np.eye(2), [0.0, 0.0])
    assert shared_facet(a, b) is None


def test_sixteen_sector_facets():
    cones = sector_cones(16)
    for s in range(16):
        f = shared_facet(cones[(s + 1) % 16], cones[s])
        ang = 2 * np.pi * (s + 1) / 16
        ray = np.array([np.cos(ang), np.sin(ang)])
        assert abs(f @ ray) <= 1e-9
        assert np.linalg.norm(f) == pytest.approx(1.0)
    assert len(adjacency(cones)) == 16


def test_shared_facet_requires_common_center():
    with pytest.raises(ValueError):
        shared_facet(Cone(np.eye(2), [0.0, 0.0]), Cone(np.eye(2), [1.0, 0.0]))


def test_facet_points_belong_to_both_cones():
    rng = np.random.default_rng(4)
    center = np.array([0.3, -0.2])
    angles = np.sort(rng.uniform(0, 2 * np.pi, 7))
    cones = sector_cones(0, center, angles=angles)
    for i, j, f in adjacency(cones):
        ray = np.array([-f[1], f[0]])
        # pick the ray orientation that lies in both cones
        if not (cones[i].contains(center + ray, 1e-9) and cones[j].contains(center + ray, 1e-9)):
            ray = -ray
        pts = center + np.logspace(-3, 0, 100)[:, None] * ray
        assert np.all(cones[i].values(pts) >= -1e-9)
        assert np.all(cones[j].values(pts) >= -1e-9)
        assert np.all(np.abs((pts - center) @ f) <= 1e-9)


def test_sector_cones_are_pointed_and_cover_the_plane():
    rng = np.random.default_rng(5)
    cones = sector_cones(16, (1.0, 2.0))
    assert all(c.is_pointed() for c in cones)
    X = rng.uniform(-5, 5, (2000, 2)) + [1.0, 2.0]
    count = np.stack([c.contains(X, 0.0) for c in cones], axis=1).sum(axis=1)
    assert np.all(count >= 1)


def test_interiors_disjoint_sampled():
    rng = np.random.default_rng(6)
    cones = sector_cones(9, (0.0, 0.0), start_angle=0.3)
    X = rng.standard_normal((5000, 2))
    strict = np.stack([np.all(c.values(X) > 1e-9, axis=1) for c in cones], axis=1)
    assert strict.sum(axis=1).max() <= 1


def test_half_plane_is_not_pointed():
    assert not Cone([[1.0, 0.0]], [0.0, 0.0]).is_pointed()


def test_quadrant_index_sets():
    cones = sector_cones(4)
    P = conic_partition(cones)
    isets = build_index_sets(P, P, 1)
    assert isets.cont == [(0, 1), (0, 3), (1, 2), (2, 3)]
    # each quadrant meets itself and its two neighbors along a facet
    assert len(isets.dec) == 4 * 3
    for i in range(4):
        js = sorted(j for (a, j, _) in isets.dec if a == i)
        assert js == sorted({i, (i + 1) % 4, (i - 1) % 4})


def test_index_sets_match_lp_enumeration():
    """Every returned triple meets in a point other than the center, and no such pair is missed."""
    rng = np.random.default_rng(7)
    cones_p = sector_cones(0, angles=np.sort(rng.uniform(0, 2 * np.pi, 5)))
    cones_q = sector_cones(0, angles=np.sort(rng.uniform(0, 2 * np.pi, 6)))
    P, Q = conic_partition(cones_p), conic_partition(cones_q)
    isets = build_index_sets(P, Q, [1, 2, 1, 1, 1])
    pairs = {(i, j) for i, j, _ in isets.dec}
    for i, X in enumerate(cones_p):
        for j, Z in enumerate(cones_q):
            # maximize the distance from the center along the bisector-free box
            rows = np.vstack([X.F, Z.F])
            best = 0.0
            for d in np.eye(2).tolist() + (-np.eye(2)).tolist():
                sol = lpcore.solve(lpcore.LinearProgram.from_arrays(
                    -np.asarray(d), A_ub=-rows, b_ub=np.zeros(rows.shape[0]), lb=-1.0, ub=1.0))
                best = max(best, -sol.objective)
            assert ((i, j) in pairs) == (best > 1e-7)
    ks = [k for (i, _, k) in isets.dec if i == 1]
    assert set(ks) == {0, 1}


def test_single_cell_single_cone():
    P = Partition([box_cell([-1, -1], [1, 1])], [0.0, 0.0])
    Q = Partition([Cone(np.eye(2), [0.0, 0.0])], [0.0, 0.0])
    isets = build_index_sets(P, Q, 3)
    assert isets.cont == []
    assert isets.dec == [(0, 0, 0), (0, 0, 1), (0, 0, 2)]


def test_same_partition_triples():
    P = conic_partition(sector_cones(16))
    isets = build_index_sets(P, P, [2] * 16, same_partition=True)
    assert isets.same_partition
    assert isets.dec == [(i, i, k) for i in range(16) for k in range(2)]
    assert len(isets.cont) == 16


def test_build_index_sets_deterministic():
    P = conic_partition(sector_cones(6, start_angle=0.1))
    Q = conic_partition(sector_cones(5))
    a = build_index_sets(P, Q, 1)
    b = build_index_sets(P, Q, 1)
    assert a.to_dict() == b.to_dict()


def test_dimension_mismatch():
    P = Partition([PolyCell([[1.0]], [0.0])], [0.0])
    Q = conic_partition(sector_cones(4))
    with pytest.raises(ValueError):
        build_index_sets(P, Q)


def test_partition_json_roundtrip():
    P = conic_partition(sector_cones(5, (0.5, -1.0)))
    P2 = Partition.from_json(P.to_json())
    assert len(P2) == 5
    for a, b in zip(P.cells, P2.cells):
        assert np.allclose(a.F, b.F)
    for (i, j, f), (i2, j2, f2) in zip(P.adjacency, P2.adjacency):
        assert (i, j) == (i2, j2) and np.allclose(f, f2)
    d = P.to_dict()
    assert set(d) == {"cells", "center", "adjacency"}


def test_index_sets_roundtrip():
    s = IndexSets([(0, 1)], [(0, 0, 0), (1, 0, 1)], True)
    assert IndexSets.from_dict(s.to_dict()) == s


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 2), st.floats(0.1, 2))
def test_box_contains_its_corners(x, y, wx, wy):
    cell = box_cell([x - wx, y - wy], [x + wx, y + wy])
    assert cell.contains(np.array([x + wx, y - wy]))
    assert not cell.contains(np.array([x + 2 * wx, y]))
