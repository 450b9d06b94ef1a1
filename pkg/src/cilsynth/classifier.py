"""
Linear classifiers used as feedback laws.

A binary classifier scores a measurement ``y`` as ``w1 . y + w0``.  Three of
them, one per unordered pair of the labels ``{1, 2, 3}``, are composed
one-vs-one into the controller.  Pulling a classifier back through a local
linear model ``y ~ H x + h`` of the sensor gives halfspaces in state space whose
coefficients are linear in ``w``; :func:`induced_state_partition` keeps the
bookkeeping needed to rebuild those rows when ``w`` changes.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Partition, PolyCell

LABELS = (1, 2, 3)
PAIRS = ("12", "13", "23")


def pair_sign(pair: str, label: int) -> int:
    """+1 for the first label of ``pair``, -1 for the second, 0 otherwise."""
    if label == int(pair[0]):
        return 1
    if label == int(pair[1]):
        return -1
    return 0


@dataclasses.dataclass(frozen=True)
class LinearClassifier:
    """Affine score ``w1 . y + w0``."""

    w1: np.ndarray
    w0: float

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float).ravel()
        if not (np.all(np.isfinite(w1)) and np.isfinite(self.w0)):
            raise ValueError("classifier weights must be finite")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w0", float(self.w0))

    @property
    def m(self) -> int:
        return self.w1.size

    def score(self, y):
        return np.asarray(y, dtype=float) @ self.w1 + self.w0

    def as_vector(self) -> np.ndarray:
        return np.append(self.w1, self.w0)

    @classmethod
    def from_vector(cls, w) -> "LinearClassifier":
        w = np.asarray(w, dtype=float).ravel()
        return cls(w[:-1], w[-1])

    def to_dict(self):
        return {"w1": self.w1.tolist(), "w0": self.w0}


@dataclasses.dataclass
class ClassifierBank:
    """One-vs-one bank keyed by ``"12"``, ``"13"``, ``"23"``.

    ``witnesses`` optionally holds serialized certificate data per pair.
    """

    pairs: Dict[str, LinearClassifier]
    witnesses: Dict[str, dict] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.pairs) - set(PAIRS)
        if unknown:
            raise ValueError(f"unknown classifier pairs {sorted(unknown)}")
        sizes = {c.m for c in self.pairs.values()}
        if len(sizes) > 1:
            raise ValueError("classifiers disagree in measurement dimension")

    @property
    def complete(self) -> bool:
        return set(self.pairs) == set(PAIRS)

    @property
    def m(self) -> int:
        return next(iter(self.pairs.values())).m

    def scores(self, y) -> Dict[str, np.ndarray]:
        return {k: c.score(y) for k, c in self.pairs.items()}

    def predict(self, y):
        return predict(self, y)

    def replace(self, pair: str, clf: LinearClassifier) -> "ClassifierBank":
        pairs = dict(self.pairs)
        pairs[pair] = clf
        return ClassifierBank(pairs, dict(self.witnesses))

    def to_dict(self):
        d = {"pairs": {k: c.to_dict() for k, c in sorted(self.pairs.items())}}
        if self.witnesses:
            d["witnesses"] = self.witnesses
        return d

    @classmethod
    def from_dict(cls, d) -> "ClassifierBank":
        pairs = {k: LinearClassifier(v["w1"], v["w0"]) for k, v in d["pairs"].items()}
        return cls(pairs, dict(d.get("witnesses", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "ClassifierBank":
        return cls.from_dict(json.loads(s))


def predict(bank: ClassifierBank, y):
    """One-vs-one decision.

    Label 2 when ``s12 < 0`` and ``s23 > 0``, label 3 when ``s13 < 0`` and
    ``s23 < 0``, label 1 otherwise.  Works on one measurement or a stack.
    """
    if not bank.complete:
        raise ValueError("prediction needs all three pairwise classifiers")
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != bank.m:
        raise ValueError(f"measurement has dimension {y.shape[-1]}, classifiers expect {bank.m}")
    s = bank.scores(y)
    out = np.where((s["12"] < 0) & (s["23"] > 0), 2,
                   np.where((s["13"] < 0) & (s["23"] < 0), 3, 1))
    return int(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class BinaryData:
    """Measurements with labels encoded as +1/-1."""

    Y: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if Y.shape[0] != b.size:
            raise ValueError("measurement and label counts differ")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("binary labels must be +1 or -1")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "b", b)

    def __len__(self):
        return self.b.size


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Records ``(x, y, label)`` stacked row-wise."""

    X: np.ndarray
    Y: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        labels = np.asarray(self.labels, dtype=int).ravel()
        if X.ndim != 2 or Y.ndim != 2:
            raise ValueError("X and Y must be 2-D arrays")
        if not (X.shape[0] == Y.shape[0] == labels.size):
            raise ValueError("record counts differ between X, Y and labels")
        if not np.all(np.isin(labels, LABELS)):
            raise ValueError(f"labels must be drawn from {LABELS}")
        for name, arr in (("X", X), ("Y", Y), ("labels", labels)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.labels.size

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    def binary(self, pair: str) -> BinaryData:
        """Records labelled with either label of ``pair``, encoded +1/-1."""
        sign = np.array([pair_sign(pair, int(l)) for l in self.labels])
        keep = sign != 0
        return BinaryData(self.Y[keep], sign[keep])

    def to_csv(self, path) -> None:
        header = ([f"x_{i + 1}" for i in range(self.n)] + [f"y_{i + 1}" for i in range(self.m)]
                  + ["label"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for x, y, l in zip(self.X, self.Y, self.labels):
                w.writerow([f"{v:.17g}" for v in x] + [f"{v:.17g}" for v in y] + [int(l)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        n = sum(h.startswith("x_") for h in header)
        m = sum(h.startswith("y_") for h in header)
        arr = np.array([[float(v) for v in r] for r in body]).reshape(len(body), n + m + 1)
        return cls(arr[:, :n], arr[:, n:n + m], arr[:, -1].astype(int))


# --------------------------------------------------------------------------
# hinge loss
# --------------------------------------------------------------------------

def _weights(c) -> np.ndarray:
    return c.as_vector() if isinstance(c, LinearClassifier) else np.asarray(c, dtype=float).ravel()


def hinge_loss(c, data: BinaryData, gamma: float) -> float:
    """``||w||_2 + gamma * sum_k max(0, 1 - b_k (w1 . y_k + w0))``.

    ``w`` is the full weight vector ``(w1, w0)``.
    """
    if len(data) == 0:
        raise ValueError("hinge loss of an empty dataset")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    w = _weights(c)
    margins = 1.0 - data.b * (data.Y @ w[:-1] + w[-1])
    return float(np.linalg.norm(w) + gamma * np.maximum(margins, 0.0).sum())


def hinge_subgradient(c, data: BinaryData, gamma: float) -> np.ndarray:
    """A subgradient of :func:`hinge_loss` with respect to ``(w1, w0)``.

    Points exactly on the margin count as violating.  At ``w = 0`` the norm
    contributes the zero subgradient.
    """
    if len(data) == 0:
        raise ValueError("hinge loss of an empty dataset")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    w = _weights(c)
    nrm = np.linalg.norm(w)
    g = w / nrm if nrm > 0 else np.zeros_like(w)
    active = 1.0 - data.b * (data.Y @ w[:-1] + w[-1]) >= 0
    ba = data.b[active]
    g = g.copy()
    g[:-1] -= gamma * (ba[:, None] * data.Y[active]).sum(axis=0)
    g[-1] -= gamma * ba.sum()
    return g


# --------------------------------------------------------------------------
# measurement map
# --------------------------------------------------------------------------

def _exponents(n: int, degree: int) -> np.ndarray:
    exps = [np.zeros(n, dtype=int)]
    for deg in range(1, degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), deg):
            e = np.zeros(n, dtype=int)
            for k in combo:
                e[k] += 1
            exps.append(e)
    return np.array(exps)


def _features(X, exps) -> np.ndarray:
    X = np.atleast_2d(X)
    return np.prod(X[:, None, :] ** exps[None, :, :], axis=2)


def _feature_jacobian(x, exps) -> np.ndarray:
    """d features / d x at a single point, shape (n_features, n)."""
    x = np.asarray(x, dtype=float)
    J = np.zeros((exps.shape[0], x.size))
    for k in range(x.size):
        e = exps.copy()
        coef = e[:, k].astype(float)
        e[:, k] = np.maximum(e[:, k] - 1, 0)
        J[:, k] = coef * np.prod(x[None, :] ** e, axis=1)
    return J


@dataclasses.dataclass
class MeasurementMap:
    """Polynomial regression of measurements on states plus a local linearization.

    ``H`` and ``h`` hold the linearization at ``expansion_point`` so that
    ``y ~ H x + h`` nearby.
    """

    exponents: np.ndarray
    coef: np.ndarray            # (n_features, m)
    expansion_point: np.ndarray
    residual_rms: float
    ridge_used: bool = False
    H: np.ndarray = dataclasses.field(init=False)
    h: np.ndarray = dataclasses.field(init=False)

    def __post_init__(self):
        self.exponents = np.asarray(self.exponents, dtype=int)
        self.coef = np.asarray(self.coef, dtype=float)
        self.expansion_point = np.asarray(self.expansion_point, dtype=float)
        self.H, self.h = self.linearize(self.expansion_point)

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max())

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = _features(x.reshape(-1, self.exponents.shape[1]), self.exponents) @ self.coef
        return out[0] if x.ndim == 1 else out

    def linearize(self, x0) -> Tuple[np.ndarray, np.ndarray]:
        """Jacobian ``H`` and offset ``h`` with ``y ~ H x + h`` around ``x0``."""
        x0 = np.asarray(x0, dtype=float)
        H = (_feature_jacobian(x0, self.exponents).T @ self.coef).T
        h = self(x0) - H @ x0
        return H, h

    def at(self, x0) -> "MeasurementMap":
        return MeasurementMap(self.exponents, self.coef, x0, self.residual_rms, self.ridge_used)

    def to_dict(self):
        return {"exponents": self.exponents.tolist(), "coef": self.coef.tolist(),
                "expansion_point": self.expansion_point.tolist(),
                "residual_rms": self.residual_rms, "ridge_used": self.ridge_used}

    @classmethod
    def from_dict(cls, d) -> "MeasurementMap":
        return cls(d["exponents"], d["coef"], d["expansion_point"], d["residual_rms"],
                   d.get("ridge_used", False))


def fit_measurement_map(data: Dataset, degree: int = 2,
                        expansion_point: Optional[Sequence[float]] = None) -> MeasurementMap:
    """Least-squares polynomial fit of ``y`` against ``x``.

    A rank-deficient design triggers a warning and a ridge term of 1e-8.
    The expansion point defaults to the mean training state.
    """
    X = np.asarray(data.X, dtype=float)
    n = X.shape[1]
    n_distinct = len({tuple(r) for r in X})
    if n_distinct < n + 1:
        raise ValueError(f"need at least {n + 1} distinct states, got {n_distinct}")
    exps = _exponents(n, degree)
    Phi = _features(X, exps)
    ridge = np.linalg.matrix_rank(Phi) < Phi.shape[1]
    if ridge:
        warnings.warn("measurement regression is rank deficient; using a 1e-8 ridge term",
                      RuntimeWarning, stacklevel=2)
        G = Phi.T @ Phi + 1e-8 * np.eye(Phi.shape[1])
        coef = np.linalg.solve(G, Phi.T @ data.Y)
    else:
        coef = np.linalg.lstsq(Phi, data.Y, rcond=None)[0]
    resid = Phi @ coef - data.Y
    rms = float(np.sqrt(np.mean(resid ** 2)))
    x0 = X.mean(axis=0) if expansion_point is None else np.asarray(expansion_point, dtype=float)
    return MeasurementMap(exps, coef, x0, rms, bool(ridge))


# --------------------------------------------------------------------------
# induced state partition
# --------------------------------------------------------------------------

#: cells of the one-vs-one rule as (label, [(pair, sign), ...]); the rows are
#: sign * score_pair >= 0
ONE_VS_ONE_CELLS = (
    (1, (("23", 1), ("12", 1))),
    (1, (("23", -1), ("13", 1))),
    (2, (("12", -1), ("23", 1))),
    (3, (("13", -1), ("23", -1))),
)


@dataclasses.dataclass
class InducedPartition:
    """State cells pulled back through ``y ~ H x + h``.

    ``rows[c]`` lists ``(pair, sign)`` for the rows of cell ``c``; row values
    are ``sign * (w1 . (H x + h) + w0)``, linear in the classifier weights.
    """

    partition: Partition
    labels: List[int]
    rows: List[Tuple[Tuple[str, int], ...]]
    degenerate: List[Tuple[int, int]]
    H: np.ndarray
    h: np.ndarray

    def rebuild(self, bank: ClassifierBank) -> "InducedPartition":
        return _induce(bank, self.H, self.h, self.labels, self.rows, self.partition.center)


def row_coefficients(clf: LinearClassifier, sign: int, H, h) -> Tuple[np.ndarray, float]:
    return sign * (clf.w1 @ H), sign * (clf.w1 @ h + clf.w0)


def _induce(bank, H, h, labels, rows, center) -> InducedPartition:
    cells, degenerate = [], []
    for c, spec in enumerate(rows):
        E, e = [], []
        for r, (pair, sign) in enumerate(spec):
            er, eo = row_coefficients(bank.pairs[pair], sign, H, h)
            if np.linalg.norm(er) < 1e-10:
                degenerate.append((c, r))
            E.append(er)
            e.append(eo)
        cells.append(PolyCell(np.array(E), np.array(e)))
    return InducedPartition(Partition(cells, center), list(labels), list(rows), degenerate, H, h)


def induced_state_partition(bank: ClassifierBank, mmap: MeasurementMap,
                            center: Optional[Sequence[float]] = None) -> InducedPartition:
    """Convex state cells on which the classifier bank is constant.

    A complete bank yields the four cells of the one-vs-one rule (label 1
    occupies two of them).  A bank with a single pair ``"ij"`` yields the two
    halfspaces labelled ``i`` and ``j``.
    """
    H, h = mmap.H, mmap.h
    if center is None:
        center = mmap.expansion_point
    if bank.complete:
        labels = [lab for lab, _ in ONE_VS_ONE_CELLS]
        rows = [spec for _, spec in ONE_VS_ONE_CELLS]
    elif len(bank.pairs) == 1:
        (pair,) = bank.pairs
        labels = [int(pair[0]), int(pair[1])]
        rows = [((pair, 1),), ((pair, -1),)]
    else:
        raise ValueError("bank must hold one classifier or all three")
    out = _induce(bank, H, h, labels, rows, center)
    for c, r in out.degenerate:
        warnings.warn(f"cell {c} row {r}: classifier direction vanishes after linearization",
                      RuntimeWarning, stacklevel=2)
    return out
