"""
Piecewise-affine differential inclusions and the planar path-following plant.

The plant state is ``(psi, d)``: heading error relative to the path tangent
and signed lateral offset (positive to the left).  Three motion primitives are
available: ``u = 1`` drives forward at ``v_star``, ``u = 2`` and ``u = 3``
rotate in place at ``+omega_star`` and ``-omega_star``.
"""

from __future__ import annotations

import dataclasses
import json
from typing import List, Sequence, Tuple

import numpy as np

from . import lpcore
from .geometry import Partition

#: region on which the affine vertex fields of the forward primitive are used
VALIDITY_REGION = {"psi_abs_max": float(np.pi / 6), "d_abs_max": 0.5}


class SingularityError(ArithmeticError):
    """Raised when ``1 - rho * d`` vanishes in the path-following dynamics."""


@dataclasses.dataclass(frozen=True)
class AffineVertex:
    """Affine vector field ``x -> A x + a``."""

    A: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        a = np.asarray(self.a, dtype=float).ravel()
        if A.shape != (a.size, a.size):
            raise ValueError(f"A has shape {A.shape}, expected {(a.size, a.size)}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(a))):
            raise ValueError("vertex fields must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "a", a)

    def __call__(self, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.a

    def to_dict(self):
        return {"A": self.A.tolist(), "a": self.a.tolist()}


@dataclasses.dataclass(frozen=True)
class AffineInclusion:
    """Convex hull of finitely many affine vector fields."""

    vertices: Tuple[AffineVertex, ...]

    def __post_init__(self):
        verts = tuple(self.vertices)
        if not verts:
            raise ValueError("an inclusion needs at least one vertex")
        if len({v.a.size for v in verts}) != 1:
            raise ValueError("vertices disagree in dimension")
        object.__setattr__(self, "vertices", verts)

    def __len__(self):
        return len(self.vertices)

    @property
    def dim(self) -> int:
        return self.vertices[0].a.size

    def to_dict(self):
        return {"vertices": [v.to_dict() for v in self.vertices]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(AffineVertex(v["A"], v["a"]) for v in d["vertices"]))


@dataclasses.dataclass
class PwaSystem:
    """One affine inclusion per cell of a state partition."""

    partition: Partition
    inclusions: List[AffineInclusion]
    metadata: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if len(self.inclusions) != len(self.partition):
            raise ValueError(f"{len(self.partition)} cells but {len(self.inclusions)} inclusions")
        for inc in self.inclusions:
            if inc.dim != self.partition.dim:
                raise ValueError("inclusion dimension does not match the partition")

    @property
    def dim(self) -> int:
        return self.partition.dim

    def n_vertices(self) -> List[int]:
        return [len(inc) for inc in self.inclusions]

    def to_dict(self):
        return {"partition": self.partition.to_dict(),
                "inclusions": [inc.to_dict() for inc in self.inclusions],
                "metadata": self.metadata}

    @classmethod
    def from_dict(cls, d):
        return cls(Partition.from_dict(d["partition"]),
                   [AffineInclusion.from_dict(i) for i in d["inclusions"]],
                   dict(d.get("metadata", {})))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "PwaSystem":
        return cls.from_dict(json.loads(s))


@dataclasses.dataclass(frozen=True)
class FrenetState:
    psi: float
    d: float

    def __post_init__(self):
        if not (np.isfinite(self.psi) and np.isfinite(self.d)):
            raise ValueError("state must be finite")
        if abs(self.psi) >= np.pi:
            raise ValueError("heading error must satisfy |psi| < pi")

    def as_array(self) -> np.ndarray:
        return np.array([self.psi, self.d])


def frenet_dynamics(x, u: int, rho: float = 0.0, v_star: float = 0.5,
                    omega_star: float = 0.15) -> np.ndarray:
    """Time derivative of ``(psi, d)`` under motion primitive ``u``.

    Examples
    --------
    >>> frenet_dynamics((0.0, 0.0), 2)
    array([0.15, 0.  ])
    """
    if isinstance(x, FrenetState):
        x = x.as_array()
    psi, d = float(x[0]), float(x[1])
    if u == 1:
        denom = 1.0 - rho * d
        if abs(denom) <= 1e-6:
            raise SingularityError(f"1 - rho*d = {denom:g} at d={d:g}, rho={rho:g}")
        return np.array([v_star * rho * np.cos(psi) / denom, v_star * np.sin(psi)])
    if u == 2:
        return np.array([omega_star, 0.0])
    if u == 3:
        return np.array([-omega_star, 0.0])
    raise ValueError(f"unknown control index {u!r}")


def build_unicycle_inclusions(v_star: float, omega_star: float,
                              rho_set: Sequence[float]) -> List[AffineInclusion]:
    """Affine inclusions for the three primitives over a curvature interval.

    The forward primitive gets one vertex per interval endpoint (one vertex
    when the interval is degenerate); the rotations are constant fields.
    """
    lo, hi = float(rho_set[0]), float(rho_set[-1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"curvature set must be a bounded interval, got {rho_set!r}")
    rhos = [lo] if lo == hi else [lo, hi]
    forward = AffineInclusion(tuple(
        AffineVertex([[0.0, -rho * v_star], [v_star, 0.0]], [v_star * rho, 0.0]) for rho in rhos))
    zero = np.zeros((2, 2))
    left = AffineInclusion((AffineVertex(zero, [omega_star, 0.0]),))
    right = AffineInclusion((AffineVertex(zero, [-omega_star, 0.0]),))
    return [forward, left, right]


def inclusion_extremes(inc: AffineInclusion, x) -> List[np.ndarray]:
    """Vertex fields ``A_k x + a_k``; the admissible set is their hull."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != inc.dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, inclusion has {inc.dim}")
    return [v(x) for v in inc.vertices]


def hull_violation(f, points: Sequence[np.ndarray]) -> float:
    """l1 distance from ``f`` to the convex hull of ``points``.

    Solves ``min ||f - sum theta_k y_k||_1`` over the simplex.
    """
    f = np.asarray(f, dtype=float)
    Y = np.stack([np.asarray(p, dtype=float) for p in points], axis=1)
    n, K = Y.shape
    b = lpcore.LpBuilder()
    b.add_variables("theta", K, lb=0.0)
    b.add_variables("t", n, lb=0.0)
    b.add_eq({"theta": np.ones((1, K))}, [1.0])
    # t >= f - Y theta and t >= Y theta - f
    b.add_ge({"t": np.eye(n), "theta": Y}, f)
    b.add_ge({"t": np.eye(n), "theta": -Y}, -f)
    b.add_cost({"t": np.ones(n)})
    sol = b.solve()
    return float(max(sol.objective, 0.0))
