import numpy as np
import pytest
from hypothesis import given, strategies as st

from cilsynth.geometry import Partition, box_cell, conic_partition, sector_cones
from cilsynth.model import (AffineInclusion, AffineVertex, FrenetState, PwaSystem,
                            SingularityError, build_unicycle_inclusions, frenet_dynamics,
                            hull_violation, inclusion_extremes)

states = st.tuples(st.floats(-3.0, 3.0), st.floats(-0.9, 0.9))


def test_straight_aligned_forward_is_at_rest():
    assert np.allclose(frenet_dynamics((0.0, 0.0), 1, rho=0.0, v_star=0.5), [0.0, 0.0])


def test_rotation_rate():
    assert np.allclose(frenet_dynamics((0.0, 0.0), 2, omega_star=0.15), [0.15, 0.0])
    assert np.allclose(frenet_dynamics((0.0, 0.0), 3, omega_star=0.15), [-0.15, 0.0])


def test_curved_forward_formula():
    f = frenet_dynamics((np.pi / 6, 0.5), 1, rho=1.0, v_star=0.5)
    assert f[0] == pytest.approx(0.5 * np.cos(np.pi / 6) / 0.5)
    assert f[0] == pytest.approx(0.8660254037844387)
    assert f[1] == pytest.approx(0.25)


def test_singularity():
    with pytest.raises(SingularityError):
        frenet_dynamics((0.0, 1.0), 1, rho=1.0)
    with pytest.raises(ValueError):
        frenet_dynamics((0.0, 0.0), 4)


def test_frenet_state():
    assert np.allclose(FrenetState(0.1, -0.2).as_array(), [0.1, -0.2])
    with pytest.raises(ValueError):
        FrenetState(np.pi, 0.0)
    assert np.allclose(frenet_dynamics(FrenetState(0.0, 0.0), 2), [0.15, 0.0])


@given(states)
def test_rotations_constant_in_state(x):
    assert np.allclose(frenet_dynamics(x, 2), [0.15, 0.0])
    assert np.allclose(frenet_dynamics(x, 3), [-0.15, 0.0])


@given(st.floats(-0.9, 0.9))
def test_straight_aligned_lateral_rest(d):
    assert frenet_dynamics((0.0, d), 1, rho=0.0)[1] == 0.0


def test_unicycle_vertices_for_symmetric_curvature():
    fwd, left, right = build_unicycle_inclusions(0.5, 0.15, (-1.0, 1.0))
    assert len(fwd) == 2
    v_lo, v_hi = fwd.vertices
    assert np.allclose(v_lo.a, [-0.5, 0.0]) and np.allclose(v_hi.a, [0.5, 0.0])
    assert v_lo.A[0, 1] == pytest.approx(0.5) and v_hi.A[0, 1] == pytest.approx(-0.5)
    assert v_lo.A[1, 0] == pytest.approx(0.5) and v_hi.A[1, 0] == pytest.approx(0.5)
    assert np.allclose(left.vertices[0].a, [0.15, 0.0])
    assert np.allclose(right.vertices[0].a, [-0.15, 0.0])
    assert np.allclose(left.vertices[0].A, 0.0)


def test_zero_curvature_single_vertex():
    fwd, _, _ = build_unicycle_inclusions(0.5, 0.15, (0.0, 0.0))
    assert len(fwd) == 1
    assert np.allclose(fwd.vertices[0].A, [[0.0, 0.0], [0.5, 0.0]])
    assert np.allclose(fwd.vertices[0].a, 0.0)


def test_bad_curvature_interval():
    with pytest.raises(ValueError):
        build_unicycle_inclusions(0.5, 0.15, (1.0, -1.0))


def test_extremes_at_origin():
    fwd, _, _ = build_unicycle_inclusions(0.5, 0.15, (-1.0, 2.0))
    ext = inclusion_extremes(fwd, [0.0, 0.0])
    assert np.allclose(ext[0], [-0.5, 0.0]) and np.allclose(ext[1], [1.0, 0.0])


def test_extremes_hand_expansion():
    fwd, _, _ = build_unicycle_inclusions(0.5, 0.15, (-1.0, 1.0))
    # at x = (0, 1): (-rho v d + rho v, v psi) = (0, 0) for every rho
    for f in inclusion_extremes(fwd, [0.0, 1.0]):
        assert np.allclose(f, [0.0, 0.0])
    # at x = (0.2, -0.5): (rho v (1 - d), v psi)
    for rho, f in zip((-1.0, 1.0), inclusion_extremes(fwd, [0.2, -0.5])):
        assert np.allclose(f, [rho * 0.5 * 1.5, 0.1])


def test_single_vertex_extreme_is_singleton():
    inc = AffineInclusion((AffineVertex(-np.eye(2), [0.0, 0.0]),))
    assert len(inclusion_extremes(inc, [1.0, 1.0])) == 1
    with pytest.raises(ValueError):
        inclusion_extremes(inc, [1.0, 1.0, 1.0])


@given(states, states)
def test_extremes_affine(x1, x2):
    inc = AffineInclusion((AffineVertex([[1.0, 2.0], [-0.5, 0.3]], [0.7, -0.1]),))
    f = lambda x: inclusion_extremes(inc, np.asarray(x))[0]
    lhs = f(x1) + f(x2) - f((0.0, 0.0))
    assert np.allclose(lhs, f(np.add(x1, x2)), atol=1e-9)


def test_forward_hull_violation_reported():
    """The affine vertices are a small-angle model; measure how far the true field lies outside."""
    rng = np.random.default_rng(0)
    fwd, _, _ = build_unicycle_inclusions(0.5, 0.15, (-1.0, 1.0))
    worst = 0.0
    for _ in range(1000):
        x = np.array([rng.uniform(-np.pi / 6, np.pi / 6), rng.uniform(-0.5, 0.5)])
        rho = rng.uniform(-1.0, 1.0)
        worst = max(worst, hull_violation(frenet_dynamics(x, 1, rho), inclusion_extremes(fwd, x)))
    # the measured gap comes from cos/sin and 1/(1 - rho d) versus their linear terms
    assert 0.0 < worst < 1.0


def test_hull_violation_exact_cases():
    pts = [np.array([0.0, 0.0]), np.array([1.0, 0.0])]
    assert hull_violation([0.5, 0.0], pts) == pytest.approx(0.0, abs=1e-12)
    assert hull_violation([0.5, 0.25], pts) == pytest.approx(0.25)
    assert hull_violation([2.0, 0.0], pts) == pytest.approx(1.0)


def test_pwa_system_consistency():
    inc = AffineInclusion((AffineVertex(-np.eye(2), [0.0, 0.0]),))
    P = conic_partition(sector_cones(4))
    with pytest.raises(ValueError):
        PwaSystem(P, [inc] * 3)
    one_d = AffineInclusion((AffineVertex([[-1.0]], [0.0]),))
    with pytest.raises(ValueError):
        PwaSystem(P, [one_d] * 4)
    with pytest.raises(ValueError):
        AffineInclusion(())
    with pytest.raises(ValueError):
        AffineVertex(np.eye(3), [0.0, 0.0])


def test_pwa_system_json_roundtrip():
    incs = build_unicycle_inclusions(0.5, 0.15, (-1.0, 1.0))
    P = Partition([box_cell([-1, -1], [0, 1]), box_cell([0, -1], [1, 1]), box_cell([-1, 1], [1, 2])],
                  [0.0, 0.0])
    s = PwaSystem(P, incs, {"note": "three boxes"})
    s2 = PwaSystem.from_json(s.to_json())
    assert s2.metadata == {"note": "three boxes"}
    assert s2.n_vertices() == [2, 1, 1]
    for a, b in zip(s.inclusions, s2.inclusions):
        for va, vb in zip(a.vertices, b.vertices):
            assert np.array_equal(va.A, vb.A) and np.array_equal(va.a, vb.a)
