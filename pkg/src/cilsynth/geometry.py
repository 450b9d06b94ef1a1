"""
Polyhedral cells, conic partitions and the index sets that tie a
piecewise-affine system to a candidate polyhedral Lyapunov partition.

A cell is ``{x : E x + e >= 0}``.  A cone is ``{x : F (x - center) >= 0}``;
cones always carry their center explicitly so that Lyapunov functions can be
built around equilibria away from the origin.

Emptiness and adjacency questions are settled by linear programs, never by
sampling.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import lpcore

_LP_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class Halfspace:
    """``{x : normal . x + offset >= 0}``."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=float).ravel()
        if not np.any(normal != 0):
            raise ValueError("halfspace normal must have a nonzero entry")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))

    def value(self, x):
        return np.asarray(x) @ self.normal + self.offset


@dataclasses.dataclass(frozen=True)
class PolyCell:
    """Convex polyhedron ``{x : E x + e >= 0}``."""

    E: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        e = np.asarray(self.e, dtype=float).ravel()
        if E.shape[0] != e.size:
            raise ValueError(f"E has {E.shape[0]} rows but e has {e.size} entries")
        if E.shape[0] < 1:
            raise ValueError("a cell needs at least one row")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def halfspaces(self) -> List[Halfspace]:
        return [Halfspace(r, o) for r, o in zip(self.E, self.e)]

    def values(self, x):
        """Row values ``E x + e`` for one point or a stack of points."""
        x = np.asarray(x, dtype=float)
        return x @ self.E.T + self.e

    def contains(self, x, tol: float = 1e-9):
        return np.all(self.values(x) >= -tol, axis=-1)

    def intersect(self, other: "PolyCell") -> "PolyCell":
        return PolyCell(np.vstack([self.E, other.E]), np.concatenate([self.e, other.e]))

    def to_dict(self):
        return {"E": self.E.tolist(), "e": self.e.tolist()}


@dataclasses.dataclass(frozen=True)
class Cone:
    """Cone ``{x : F (x - center) >= 0}``."""

    F: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        center = np.asarray(self.center, dtype=float).ravel()
        if F.shape[1] != center.size:
            raise ValueError("cone rows and center disagree in dimension")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return self.F.shape[1]

    def as_cell(self) -> PolyCell:
        return PolyCell(self.F, -self.F @ self.center)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        return (x - self.center) @ self.F.T

    def contains(self, x, tol: float = 1e-9):
        return np.all(self.values(x) >= -tol, axis=-1)

    def is_pointed(self) -> bool:
        """True when the cone contains no line through its center."""
        return np.linalg.matrix_rank(self.F, tol=1e-10) == self.dim

    def to_dict(self):
        return {"F": self.F.tolist(), "center": self.center.tolist()}


Cell = Union[PolyCell, Cone]


def _as_cell(c: Cell) -> PolyCell:
    return c.as_cell() if isinstance(c, Cone) else c


@dataclasses.dataclass
class Partition:
    """Ordered cells plus adjacency records ``(i, j, f_ij)``.

    ``f_ij`` is a unit normal pointing from cell ``j`` into cell ``i``; the
    shared boundary satisfies ``f_ij . (x - center) = 0``.
    """

    cells: List[Cell]
    center: np.ndarray
    adjacency: List[Tuple[int, int, np.ndarray]] = dataclasses.field(default_factory=list)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        self.adjacency = [(int(i), int(j), np.asarray(f, dtype=float))
                          for i, j, f in self.adjacency]

    def __len__(self):
        return len(self.cells)

    @property
    def dim(self) -> int:
        return self.center.size

    def locate(self, x, tol: float = 1e-9) -> List[int]:
        """Indices of every cell containing ``x``."""
        return [k for k, c in enumerate(self.cells) if bool(c.contains(x, tol))]

    def facet(self, i: int, j: int) -> Optional[np.ndarray]:
        for a, b, f in self.adjacency:
            if (a, b) == (i, j):
                return f
            if (a, b) == (j, i):
                return -f
        return None

    def to_dict(self):
        cells = []
        for c in self.cells:
            d = _as_cell(c).to_dict()
            if isinstance(c, Cone):
                d["F"] = c.F.tolist()
            cells.append(d)
        return {"cells": cells, "center": self.center.tolist(),
                "adjacency": [[i, j, np.asarray(f).tolist()] for i, j, f in self.adjacency]}

    @classmethod
    def from_dict(cls, d) -> "Partition":
        center = np.asarray(d["center"], dtype=float)
        cells: List[Cell] = []
        for c in d["cells"]:
            if "F" in c:
                cells.append(Cone(c["F"], center))
            else:
                cells.append(PolyCell(c["E"], c["e"]))
        return cls(cells, center, [tuple(a) for a in d.get("adjacency", [])])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Partition":
        return cls.from_dict(json.loads(s))


@dataclasses.dataclass
class IndexSets:
    """Continuity pairs and decrease triples.

    ``same_partition`` marks the P = Q shortcut, where cell ``i`` of the system
    is cone ``i`` of the Lyapunov partition and only ``(i, i, k)`` triples are
    generated.
    """

    cont: List[Tuple[int, int]]
    dec: List[Tuple[int, int, int]]
    same_partition: bool = False

    def to_dict(self):
        return {"cont": [list(c) for c in self.cont], "dec": [list(t) for t in self.dec],
                "same_partition": self.same_partition}

    @classmethod
    def from_dict(cls, d) -> "IndexSets":
        return cls([tuple(c) for c in d["cont"]], [tuple(t) for t in d["dec"]],
                   bool(d.get("same_partition", False)))


# --------------------------------------------------------------------------
# LP predicates
# --------------------------------------------------------------------------

def cell_nonempty(cell: Cell, method: str = "simplex") -> bool:
    """Decide ``{x : E x + e >= 0} != {}`` by LP feasibility."""
    cell = _as_cell(cell)
    n = cell.dim
    lp = lpcore.LinearProgram.from_arrays(np.zeros(n), A_ub=-cell.E, b_ub=cell.e)
    return lpcore.solve(lp, method=method).status == lpcore.OPTIMAL


def _nontrivial(E, e, center, radius=1.0) -> bool:
    """Does ``{E x + e >= 0}`` contain a point other than ``center``?

    A feasible set missing the center trivially qualifies.  Otherwise the set
    is convex and contains the center, so it suffices to maximize each signed
    coordinate offset inside a small box around the center.
    """
    n = E.shape[1]
    A_ub = -E
    b_ub = e
    if not cell_nonempty(PolyCell(E, e)):
        return False
    if np.any(E @ center + e < -1e-9):
        return True
    lb, ub = center - radius, center + radius
    for k in range(n):
        for s in (1.0, -1.0):
            c = np.zeros(n)
            c[k] = -s
            sol = lpcore.solve(lpcore.LinearProgram.from_arrays(c, A_ub=A_ub, b_ub=b_ub, lb=lb, ub=ub))
            if not sol.optimal:
                return False
            if s * (sol.z[k] - center[k]) > 1e-7:
                return True
    return False


def intersection_dimension(rows: np.ndarray, center: np.ndarray) -> Tuple[int, np.ndarray]:
    """Dimension of the cone ``{x : rows (x - center) >= 0}`` and its implicit equalities.

    Returns ``(dim, mask)`` with ``mask[r]`` true when row ``r`` is zero on
    the whole cone.
    """
    rows = np.atleast_2d(rows)
    n = rows.shape[1]
    implicit = np.zeros(rows.shape[0], dtype=bool)
    for r, row in enumerate(rows):
        # maximize row . xi  over the cone intersected with a unit box
        lp = lpcore.LinearProgram.from_arrays(-row, A_ub=-rows, b_ub=np.zeros(rows.shape[0]),
                                              lb=-1.0, ub=1.0)
        sol = lpcore.solve(lp)
        implicit[r] = (-sol.objective) <= 1e-9 * max(1.0, np.linalg.norm(row))
    if not implicit.any():
        return n, implicit
    rank = np.linalg.matrix_rank(rows[implicit], tol=1e-9)
    return n - rank, implicit


def shared_facet(a: Cone, b: Cone) -> Optional[np.ndarray]:
    """Unit normal of the facet shared by two cones, or ``None``.

    The normal points from ``b`` into ``a``.  ``None`` is returned when the
    interiors overlap or the intersection has dimension below ``n - 1``
    (for instance only the center).
    """
    if not np.allclose(a.center, b.center):
        raise ValueError("cones must share a center")
    n = a.dim
    if n < 2:
        return None
    rows = np.vstack([a.F, b.F])
    dim, implicit = intersection_dimension(rows, a.center)
    if dim != n - 1:
        return None
    r = int(np.flatnonzero(implicit)[0])
    f = rows[r] / np.linalg.norm(rows[r])
    if r >= a.F.shape[0]:
        f = -f
    return f


def adjacency(cones: Sequence[Cone]) -> List[Tuple[int, int, np.ndarray]]:
    """All facet records ``(i, j, f_ij)`` with ``i < j``."""
    out = []
    for i in range(len(cones)):
        for j in range(i + 1, len(cones)):
            f = shared_facet(cones[i], cones[j])
            if f is not None:
                out.append((i, j, f))
    return out


def conic_partition(cones: Sequence[Cone]) -> Partition:
    center = cones[0].center
    return Partition(list(cones), center, adjacency(cones))


def sector_cones(n_sectors: int, center=(0.0, 0.0), start_angle: float = 0.0,
                 angles: Optional[Sequence[float]] = None) -> List[Cone]:
    """Planar cones between consecutive rays.

    Rays sit at ``start_angle + 2 pi k / n_sectors`` unless explicit
    increasing ``angles`` (spanning less than a full turn between neighbors)
    are given.  Cone ``k`` runs counter-clockwise from ray ``k`` to ray ``k+1``.
    """
    if angles is None:
        angles = start_angle + 2 * np.pi * np.arange(n_sectors) / n_sectors
    angles = np.asarray(angles, dtype=float)
    rays = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    cones = []
    for k in range(len(angles)):
        t0, t1 = rays[k], rays[(k + 1) % len(angles)]
        F = np.array([[-t0[1], t0[0]], [t1[1], -t1[0]]])
        cones.append(Cone(F, center))
    return cones


def build_index_sets(system_partition: Partition, lyap_partition: Partition,
                     n_vertices: Union[int, Sequence[int]] = 1,
                     same_partition: bool = False) -> IndexSets:
    """Index sets relating a PWA system partition to a Lyapunov partition.

    Parameters
    ----------
    system_partition : Partition
        Cells ``X_i`` of the dynamics.
    lyap_partition : Partition
        Cones ``Z_j`` of the candidate Lyapunov function.
    n_vertices : int or sequence of int
        Number of affine vertices of the inclusion on each system cell.
    same_partition : bool
        Use the P = Q shortcut: cell ``i`` is cone ``i`` and only ``(i, i, k)``
        triples are produced.

    Notes
    -----
    ``cont`` lists cone pairs sharing a facet.  A triple ``(i, j, k)`` is
    produced when ``X_i`` and ``Z_j`` share a point other than the Lyapunov
    center, which includes lower-dimensional (facet) contacts.
    """
    if system_partition.dim != lyap_partition.dim:
        raise ValueError("partitions live in different dimensions")
    if np.isscalar(n_vertices):
        n_vertices = [int(n_vertices)] * len(system_partition)
    if len(n_vertices) != len(system_partition):
        raise ValueError("need a vertex count for every system cell")
    center = lyap_partition.center
    cont = sorted((min(i, j), max(i, j)) for i, j, _ in lyap_partition.adjacency)
    dec = []
    if same_partition:
        if len(system_partition) != len(lyap_partition):
            raise ValueError("P = Q requires equally many cells and cones")
        for i in range(len(system_partition)):
            dec.extend((i, i, k) for k in range(n_vertices[i]))
        return IndexSets(cont, dec, True)
    for i, X in enumerate(system_partition.cells):
        Xc = _as_cell(X)
        for j, Z in enumerate(lyap_partition.cells):
            both = Xc.intersect(_as_cell(Z))
            if _nontrivial(both.E, both.e, center):
                dec.extend((i, j, k) for k in range(n_vertices[i]))
    return IndexSets(cont, dec, False)


def box_cell(lo, hi) -> PolyCell:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.size
    E = np.vstack([np.eye(n), -np.eye(n)])
    e = np.concatenate([-lo, hi])
    return PolyCell(E, e)
