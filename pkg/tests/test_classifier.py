import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cilsynth.classifier import (BinaryData, ClassifierBank, Dataset, LinearClassifier,
                                 MeasurementMap, fit_measurement_map, hinge_loss,
                                 hinge_subgradient, induced_state_partition, pair_sign, predict)
from oracles import central_difference


def bank_from(s12, s13, s23):
    """Bank on 1-D measurements whose scores are the given constants."""
    return ClassifierBank({"12": LinearClassifier([0.0], s12), "13": LinearClassifier([0.0], s13),
                           "23": LinearClassifier([0.0], s23)})


def random_binary(rng, N=12, m=4):
    return BinaryData(rng.standard_normal((N, m)), rng.choice([-1.0, 1.0], N))


def test_zero_score_loss():
    data = BinaryData(np.ones((5, 3)), [1, -1, 1, 1, -1])
    w = np.array([0.0, 0.0, 0.0, 1e-3])
    # score 1e-3 gives margins 1 - b * 1e-3
    want = np.linalg.norm(w) + 100 * (5 - 1e-3 * (1 - 1 + 1 + 1 - 1))
    assert hinge_loss(w, data, 100) == pytest.approx(want)
    assert hinge_loss(np.zeros(4), data, 100) == pytest.approx(100 * 5)


def test_separable_one_dimensional():
    data = BinaryData([[2.0], [-2.0]], [1, -1])
    assert hinge_loss(LinearClassifier([1.0], 0.0), data, 100) == pytest.approx(1.0)


def test_hinge_errors():
    with pytest.raises(ValueError):
        hinge_loss(np.ones(2), BinaryData(np.zeros((0, 1)), []), 1.0)
    with pytest.raises(ValueError):
        hinge_loss(np.ones(2), BinaryData([[1.0]], [1]), 0.0)
    with pytest.raises(ValueError):
        BinaryData([[1.0]], [2])


def test_subgradient_without_active_margins():
    data = BinaryData([[2.0], [-2.0]], [1, -1])
    w = np.array([3.0, 0.0])
    assert np.allclose(hinge_subgradient(w, data, 100), w / np.linalg.norm(w))


def test_subgradient_single_violator():
    data = BinaryData([[0.5, -1.0]], [1])
    w = np.array([0.2, 0.1, -0.3])
    g = hinge_subgradient(w, data, 10.0)
    want = w / np.linalg.norm(w) + 10.0 * -1 * np.array([0.5, -1.0, 1.0])
    assert np.allclose(g, want)


def test_subgradient_matches_central_differences():
    rng = np.random.default_rng(0)
    for _ in range(20):
        data = random_binary(rng)
        w = rng.standard_normal(5)
        margins = 1 - data.b * (data.Y @ w[:-1] + w[-1])
        assume_smooth = np.min(np.abs(margins)) > 1e-3
        if not assume_smooth:
            continue
        fd = central_difference(lambda v: hinge_loss(v, data, 100.0), w, 1e-6)
        g = hinge_subgradient(w, data, 100.0)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


@given(st.integers(0, 10_000))
def test_hinge_convex_midpoint(seed):
    rng = np.random.default_rng(seed)
    data = random_binary(rng)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    mid = hinge_loss((a + b) / 2, data, 3.0)
    assert mid <= (hinge_loss(a, data, 3.0) + hinge_loss(b, data, 3.0)) / 2 + 1e-9


@given(st.integers(0, 10_000))
def test_subgradient_inequality(seed):
    rng = np.random.default_rng(seed)
    data = random_binary(rng)
    a, b = rng.standard_normal(5), rng.standard_normal(5)
    g = hinge_subgradient(a, data, 2.0)
    assert hinge_loss(b, data, 2.0) >= hinge_loss(a, data, 2.0) + g @ (b - a) - 1e-9


def test_predict_rule():
    assert predict(bank_from(1.0, 1.0, 1.0), [0.0]) == 1
    assert predict(bank_from(-1.0, 1.0, 1.0), [0.0]) == 2
    assert predict(bank_from(1.0, -1.0, -1.0), [0.0]) == 3
    assert predict(bank_from(1.0, 0.0, -1.0), [0.0]) == 1
    assert predict(bank_from(0.0, 1.0, 1.0), [0.0]) == 1


def test_predict_checks():
    with pytest.raises(ValueError):
        predict(ClassifierBank({"12": LinearClassifier([1.0], 0.0)}), [0.0])
    with pytest.raises(ValueError):
        predict(bank_from(1.0, 1.0, 1.0), [0.0, 1.0])
    with pytest.raises(ValueError):
        ClassifierBank({"14": LinearClassifier([1.0], 0.0)})


@given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
def test_predict_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    bank = ClassifierBank({p: LinearClassifier(rng.standard_normal(3), rng.standard_normal())
                           for p in ("12", "13", "23")})
    scaled = ClassifierBank({p: LinearClassifier(c * k.w1, c * k.w0) for p, k in bank.pairs.items()})
    Y = rng.standard_normal((50, 3))
    assert np.array_equal(predict(bank, Y), predict(scaled, Y))


def test_pair_sign():
    assert pair_sign("13", 1) == 1 and pair_sign("13", 3) == -1 and pair_sign("13", 2) == 0


def test_dataset_validation_and_binary():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.zeros((3, 4)), [1, 2])
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2)), np.zeros((1, 4)), [5])
    d = Dataset(np.zeros((3, 2)), np.arange(12.0).reshape(3, 4), [1, 2, 3])
    b = d.binary("23")
    assert np.array_equal(b.b, [1.0, -1.0])
    assert np.array_equal(b.Y, d.Y[1:])


def test_dataset_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    d = Dataset(rng.standard_normal((4, 2)), rng.standard_normal((4, 5)), [1, 3, 2, 1])
    path = tmp_path / "d.csv"
    d.to_csv(path)
    d2 = Dataset.from_csv(path)
    assert np.array_equal(d.X, d2.X) and np.array_equal(d.Y, d2.Y)
    assert np.array_equal(d.labels, d2.labels)
    header = path.read_text().splitlines()[0].split(",")
    assert header[:3] == ["x_1", "x_2", "y_1"] and header[-1] == "label"


def test_bank_json_roundtrip():
    bank = ClassifierBank({p: LinearClassifier([1.0, 2.0], 0.5) for p in ("12", "13", "23")},
                          {"13": {"note": 1}})
    b2 = ClassifierBank.from_json(bank.to_json())
    assert b2.witnesses == {"13": {"note": 1}}
    assert np.array_equal(b2.pairs["12"].w1, [1.0, 2.0])
    assert set(bank.to_dict()["pairs"]["23"]) == {"w1", "w0"}


def grid_data(f, X):
    return Dataset(X, np.stack([f(x) for x in X]), np.ones(len(X), dtype=int))


def test_linear_fit_recovers_map():
    rng = np.random.default_rng(3)
    H = rng.standard_normal((6, 2))
    h = rng.standard_normal(6)
    X = rng.uniform(-1, 1, (9, 2))
    mm = fit_measurement_map(grid_data(lambda x: H @ x + h, X), degree=1)
    assert np.allclose(mm.H, H, atol=1e-8) and np.allclose(mm.h, h, atol=1e-8)
    assert mm.residual_rms <= 1e-10


def test_quadratic_fit_jacobian():
    def f(x):
        return np.array([x[0] ** 2 + 3 * x[1], x[0] * x[1] - 1.0, 2 * x[1] ** 2 + x[0]])

    def jac(x):
        return np.array([[2 * x[0], 3.0], [x[1], x[0]], [1.0, 4 * x[1]]])

    g = [-0.5, 0.0, 0.5]
    X = np.array([(a, b) for a in g for b in g])
    xe = np.array([0.2, -0.3])
    mm = fit_measurement_map(grid_data(f, X), degree=2, expansion_point=xe)
    assert np.allclose(mm.H, jac(xe), atol=1e-6)
    assert np.allclose(mm.H @ xe + mm.h, f(xe), atol=1e-9)
    assert np.allclose(mm(xe), f(xe), atol=1e-9)


def test_fit_needs_distinct_states():
    X = np.zeros((5, 2))
    with pytest.raises(ValueError):
        fit_measurement_map(grid_data(lambda x: x, X))


def test_rank_deficient_fit_uses_ridge():
    X = np.array([[t, 2 * t] for t in np.linspace(-1, 1, 6)])
    with pytest.warns(RuntimeWarning):
        mm = fit_measurement_map(grid_data(lambda x: np.array([x[0], x[1]]), X), degree=1)
    assert mm.ridge_used
    assert np.all(np.isfinite(mm.coef))


def test_map_roundtrip_and_expansion():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, (12, 2))
    mm = fit_measurement_map(grid_data(lambda x: np.array([np.sin(x[0]), x[1] ** 2]), X), 2)
    assert np.allclose(mm.expansion_point, X.mean(axis=0))
    mm2 = MeasurementMap.from_dict(mm.to_dict())
    assert np.allclose(mm2.H, mm.H) and np.allclose(mm2.h, mm.h)
    moved = mm.at([0.1, 0.1])
    assert np.allclose(moved.H, mm.linearize([0.1, 0.1])[0])


def test_single_classifier_partition():
    mm = MeasurementMap(np.array([[0, 0], [1, 0], [0, 1]]),
                        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [0.0, 0.0], 0.0)
    assert np.allclose(mm.H, np.eye(2)) and np.allclose(mm.h, 0.0)
    bank = ClassifierBank({"13": LinearClassifier([1.0, -2.0], 0.5)})
    ip = induced_state_partition(bank, mm)
    assert ip.labels == [1, 3]
    c1, c3 = ip.partition.cells
    assert np.allclose(c1.E, [[1.0, -2.0]]) and np.allclose(c1.e, [0.5])
    assert np.allclose(c3.E, [[-1.0, 2.0]]) and np.allclose(c3.e, [-0.5])


def test_anchored_boundary_contains_equilibrium():
    rng = np.random.default_rng(5)
    H, h = rng.standard_normal((4, 2)), rng.standard_normal(4)
    mm = MeasurementMap(np.array([[0, 0], [1, 0], [0, 1]]), np.vstack([h, H.T]), [0.0, 0.0], 0.0)
    xe = np.array([0.0, 0.25])
    w1 = rng.standard_normal(4)
    w0 = -w1 @ (H @ xe + h)
    ip = induced_state_partition(ClassifierBank({"13": LinearClassifier(w1, w0)}), mm)
    assert abs(ip.partition.cells[0].values(xe)[0]) <= 1e-12


def test_induced_partition_agrees_with_predict():
    rng = np.random.default_rng(6)
    m = 5
    H, h = rng.standard_normal((m, 2)), rng.standard_normal(m)
    mm = MeasurementMap(np.array([[0, 0], [1, 0], [0, 1]]), np.vstack([h, H.T]), [0.0, 0.0], 0.0)
    for _ in range(3):
        bank = ClassifierBank({p: LinearClassifier(rng.standard_normal(m), rng.standard_normal())
                               for p in ("12", "13", "23")})
        ip = induced_state_partition(bank, mm)
        X = rng.uniform(-3, 3, (10_000, 2))
        labels = predict(bank, X @ H.T + h)
        rows = np.stack([c.values(X) for c in ip.partition.cells])   # cells x points x rows
        inside = np.all(rows >= 0, axis=2)
        near = np.any(np.abs(rows) <= 1e-9, axis=(0, 2))
        for c, lab in enumerate(ip.labels):
            mismatch = inside[c] & (labels != lab) & ~near
            assert not mismatch.any()
        # every point lies in some cell of its label
        covered = np.zeros(len(X), dtype=bool)
        for c, lab in enumerate(ip.labels):
            covered |= inside[c] & (labels == lab)
        assert np.all(covered | near)


def test_degenerate_rows_reported():
    mm = MeasurementMap(np.array([[0, 0], [1, 0], [0, 1]]),
                        np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]), [0.0, 0.0], 0.0)
    bank = ClassifierBank({"12": LinearClassifier([1.0, -1.0], 0.0),
                           "13": LinearClassifier([1.0, 0.0], 0.0),
                           "23": LinearClassifier([0.0, 1.0], 0.0)})
    # H = I, so 12's direction is (1, -1): fine; make it vanish
    bank = bank.replace("12", LinearClassifier([0.0, 0.0], 1.0))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        ip = induced_state_partition(bank, mm)
    assert ip.degenerate and any("vanishes" in str(r.message) for r in rec)
