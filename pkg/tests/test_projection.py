import numpy as np
import pytest

from cilsynth.certificate import verify_certificate
from cilsynth.model import AffineInclusion, AffineVertex, build_unicycle_inclusions
from cilsynth.projection import (AcsConfig, AcsTrace, classifier_step, multiplier_step,
                                 orientation_starts, project, sector_problem)


def sliding_problem(n_sectors=8):
    """Both sides push toward the line ``x1 = 0`` and contract ``x2``.

    Neither field vanishes at the center, so the affine decrease form applies
    and ``w = (1, 0, 0)`` is certifiable.
    """
    A = np.diag([0.0, -1.0])
    plus = AffineInclusion((AffineVertex(A, [-1.0, 0.0]),))
    minus = AffineInclusion((AffineVertex(A, [1.0, 0.0]),))
    return sector_problem(np.eye(2), np.zeros(2), [0.0, 0.0], plus, minus, [-1, -1], [1, 1],
                          n_sectors)


W_GOOD = np.array([1.0, 0.0, 0.0])


def unicycle_problem(seed, n_sectors=8, m=4):
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((m, 2))
    h = rng.standard_normal(m)
    fwd, left, right = build_unicycle_inclusions(0.5, 0.15, (1.0, 1.0))
    center = np.array([0.0, 0.25])
    minus = right if rng.random() < 0.5 else left
    half = np.array([np.pi / 6, 0.25])
    return sector_problem(H, h, center, fwd, minus, center - half, center + half, n_sectors), rng


def test_sector_problem_structure():
    prob = sliding_problem(16)
    rng = np.random.default_rng(0)
    assert len(prob.cells) == 16 and len(prob.facets) == 16
    isets = prob.index_sets()
    assert isets.same_partition and isets.dec == [(i, i, 0) for i in range(16)]
    w = rng.standard_normal(3)
    system, lyap, _ = prob.evaluate(w)
    # first ray lies on the switching line through the center
    g = prob.gradient @ w
    t0 = np.array([-g[1], g[0]])
    assert np.allclose(lyap.cones[0].F[0] @ t0, 0.0)
    with pytest.raises(ValueError):
        sector_problem(np.eye(2), np.zeros(2), [0, 0], prob.inclusions[0], prob.inclusions[0],
                       [-1, -1], [1, 1], 7)


def test_anchor_projection():
    prob = sliding_problem()
    w = np.array([0.7, -0.2, 0.5])
    w2 = prob.onto_anchors(w)
    assert prob.anchor_residual(w2) <= 1e-12
    # anchor C = (H c + h, 1) = (0, 0, 1): only the offset is reset
    assert np.allclose(w2, [0.7, -0.2, 0.0])


def test_multiplier_step_zero_slack_when_certifiable():
    prob = sliding_problem()
    st = multiplier_step(prob, W_GOOD, W_GOOD, 1e-3)
    assert st.slack_l1 <= 1e-9
    assert st.objective == pytest.approx(st.slack_l1)
    for mu in st.witness.mu:
        assert np.all(mu >= 1 - 1e-9)
    for v in st.witness.v.values():
        assert np.all(v >= 1 - 1e-9)


def test_affine_form_rejects_rest_point_at_center():
    # xdot = -x vanishes at the center, which every region contains
    A = np.array([[-1.0, -0.3], [0.3, -1.0]])
    inc = AffineInclusion((AffineVertex(A, [0.0, 0.0]),))
    prob = sector_problem(np.eye(2), np.zeros(2), [0.0, 0.0], inc, inc, [-1, -1], [1, 1], 8)
    assert multiplier_step(prob, W_GOOD, W_GOOD, 1e-3).slack_l1 > 1.0


def test_feasible_point_projects_to_itself():
    prob = sliding_problem()
    mult = multiplier_step(prob, W_GOOD, W_GOOD, 1e-3)
    cls = classifier_step(prob, mult.witness, W_GOOD, 1e-3)
    assert cls.objective <= 1e-9
    res = project(W_GOOD, AcsConfig(), prob)
    assert res.success
    assert np.allclose(res.w, W_GOOD, atol=1e-9)
    assert len(res.trace.objective) == 2
    rep = verify_certificate(res.system, res.lyap, res.witness, prob.index_sets())
    assert rep.feasible


def test_tilted_line_still_crossed_by_both_fields():
    prob = sliding_problem()
    w_prime = np.array([1.0, 0.4, 0.0])
    res = project(w_prime, AcsConfig(max_iters=30), prob)
    assert res.success and np.allclose(res.w, w_prime, atol=1e-9)
    assert verify_certificate(res.system, res.lyap, res.witness, prob.index_sets()).feasible


def test_smaller_beta_gives_no_more_slack():
    prob, rng = unicycle_problem(3)
    w = rng.standard_normal(prob.d)
    w = prob.onto_anchors(w)
    mult = multiplier_step(prob, w, w, 1e-3)
    lo = classifier_step(prob, mult.witness, w, 1e-9)
    hi = classifier_step(prob, mult.witness, w, 1e-3)
    assert lo.slack_l1 <= hi.slack_l1 + 1e-7
    assert np.abs(hi.w - w).sum() <= np.abs(lo.w - w).sum() + 1e-7


def test_acs_trace_monotone_on_random_instances():
    for seed in range(6):
        prob, rng = unicycle_problem(seed)
        w = rng.standard_normal(prob.d)
        res = project(w, AcsConfig(max_iters=15), prob)
        obj = np.asarray(res.trace.objective)
        assert np.all(np.diff(obj) <= 1e-9)
        if res.success:
            assert verify_certificate(res.system, res.lyap, res.witness, prob.index_sets()).feasible
            assert prob.anchor_residual(res.w) <= 1e-9 * (1 + np.abs(res.w).sum())


def test_unstable_dynamics_never_certified():
    rng = np.random.default_rng(0)
    H, h = rng.standard_normal((3, 2)), rng.standard_normal(3)
    A = np.array([[0.5, -1.0], [1.0, 0.5]])
    inc = AffineInclusion((AffineVertex(A, np.zeros(2)),))
    prob = sector_problem(H, h, [0.0, 0.0], inc, inc, [-1, -1], [1, 1], 8)
    res = project(rng.standard_normal(4), AcsConfig(max_iters=10, restarts=4), prob)
    assert not res.success
    assert res.slack_l1 > 1e-3


def test_orientation_starts_rotate_gradient():
    prob, rng = unicycle_problem(1)
    w = prob.onto_anchors(rng.standard_normal(prob.d))
    g = prob.gradient @ w
    starts = orientation_starts(prob, w, 8)
    assert len(starts) == 7
    for k, s in enumerate(starts, start=1):
        gs = prob.gradient @ s
        ang = np.arctan2(gs[1], gs[0]) - np.arctan2(g[1], g[0])
        assert np.isclose(np.cos(ang), np.cos(2 * np.pi * k / 8))
        assert np.isclose(np.linalg.norm(gs), np.linalg.norm(g))
        assert prob.anchor_residual(s) <= 1e-9


def test_config_validation():
    with pytest.raises(ValueError):
        AcsConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        AcsConfig(max_iters=0)
    with pytest.raises(ValueError):
        AcsConfig(restarts=-1)


def test_trace_csv(tmp_path):
    tr = AcsTrace()
    tr.record(0, 2.0, 1.0, 0.0)
    tr.record(1, 1.0, 0.5, 0.25)
    assert tr.monotone()
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,objective,slack_l1,dw_norm"
    assert lines[2] == "1,1,0.5,0.25"
