"""
Projection of a classifier onto the set of certifiable classifiers.

The certificate conditions are bilinear: the cell rows ``E_i(w), e_i(w)`` are
linear in the classifier weights ``w`` and multiply the decrease multipliers
``v``; the cone rows ``F_j(w)`` multiply ``mu``; the facet normals ``f_ij(w)``
multiply ``lam``.  Fixing one block makes the rest an LP, so the projection
alternates between

* a multiplier step: ``w`` fixed, solve for ``(p, mu, v, lam, q)``;
* a classifier step: ``(mu, v, lam)`` fixed, solve for ``(w, p, q)``,

both minimizing ``beta ||w - w'||_1 + sum ||q||_1``.  Every half-step starts
from a feasible point of the same program, so the objective never increases.

The Lyapunov partition follows the classifier: its rays are the switching
line's direction rotated in equal steps, which keeps every cone, cell and
facet linear in ``w`` and the decrease triples fixed to ``(i, i, k)``.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import lpcore
from .certificate import (CertificateWitness, PolyhedralLyapunov, VerificationReport,
                          certificate_program, find_certificate, verify_certificate,
                          _witness_from)
from .geometry import Cone, IndexSets, Partition, PolyCell
from .model import AffineInclusion, PwaSystem

_R90 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclasses.dataclass
class AffineRows:
    """Rows ``(N_r w + n0_r) . x + (o_r . w + o0_r) >= 0``, linear in ``w``."""

    N: np.ndarray    # (R, n, d)
    n0: np.ndarray   # (R, n)
    o: np.ndarray    # (R, d)
    o0: np.ndarray   # (R,)

    @property
    def n_rows(self) -> int:
        return self.N.shape[0]

    def evaluate(self, w) -> Tuple[np.ndarray, np.ndarray]:
        w = np.asarray(w, dtype=float)
        return self.N @ w + self.n0, self.o @ w + self.o0

    @classmethod
    def constant(cls, E, e, d: int) -> "AffineRows":
        E = np.atleast_2d(np.asarray(E, dtype=float))
        R, n = E.shape
        return cls(np.zeros((R, n, d)), E, np.zeros((R, d)), np.asarray(e, dtype=float).ravel())

    @classmethod
    def stack(cls, parts: Sequence["AffineRows"]) -> "AffineRows":
        return cls(np.concatenate([p.N for p in parts]), np.concatenate([p.n0 for p in parts]),
                   np.concatenate([p.o for p in parts]), np.concatenate([p.o0 for p in parts]))


@dataclasses.dataclass
class ParametricProblem:
    """Certificate program whose geometry depends linearly on ``w``.

    Cell ``i`` of the system is cone ``i`` of the Lyapunov partition (P = Q).
    ``cones[j]`` holds only normals (offsets are ``-F x_e``).  ``facets``
    lists ``(i, j, Nf, nf0)`` with ``f_ij(w) = Nf w + nf0``.  ``anchors`` are
    hard equalities ``C w + c0 = 0``.  ``gradient`` (optional, ``n x d``)
    maps ``w`` to the state-space gradient of the classifier score; it is
    what orientation restarts rotate.
    """

    center: np.ndarray
    cells: List[AffineRows]
    inclusions: List[AffineInclusion]
    cones: List[AffineRows]
    facets: List[Tuple[int, int, np.ndarray, np.ndarray]]
    anchors: Tuple[np.ndarray, np.ndarray]
    metadata: dict = dataclasses.field(default_factory=dict)
    gradient: Optional[np.ndarray] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not (len(self.cells) == len(self.inclusions) == len(self.cones)):
            raise ValueError("P = Q needs one cell, inclusion and cone per index")

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def d(self) -> int:
        return self.cells[0].N.shape[2]

    def index_sets(self) -> IndexSets:
        cont = sorted((min(i, j), max(i, j)) for i, j, _, _ in self.facets)
        dec = [(i, i, k) for i, inc in enumerate(self.inclusions) for k in range(len(inc))]
        return IndexSets(cont, dec, True)

    def evaluate(self, w) -> Tuple[PwaSystem, PolyhedralLyapunov, IndexSets]:
        """Concrete system, unfitted Lyapunov candidate and index sets at ``w``."""
        w = np.asarray(w, dtype=float)
        cells = [PolyCell(*rows.evaluate(w)) for rows in self.cells]
        cones = [Cone(rows.evaluate(w)[0], self.center) for rows in self.cones]
        facets = [(i, j, Nf @ w + nf0) for i, j, Nf, nf0 in self.facets]
        system = PwaSystem(Partition(cells, self.center), list(self.inclusions), dict(self.metadata))
        lyap = PolyhedralLyapunov.unfitted(cones, facets)
        return system, lyap, self.index_sets()

    def anchor_residual(self, w) -> float:
        C, c0 = self.anchors
        if C.size == 0:
            return 0.0
        return float(np.abs(C @ w + c0).max())

    def onto_anchors(self, w) -> np.ndarray:
        """Euclidean projection of ``w`` onto the anchor equalities."""
        w = np.asarray(w, dtype=float)
        C, c0 = self.anchors
        if C.size == 0:
            return w.copy()
        r = C @ w + c0
        return w - C.T @ np.linalg.lstsq(C @ C.T, r, rcond=None)[0]


def sector_problem(H, h, center, plus: AffineInclusion, minus: AffineInclusion,
                   box_lo, box_hi, n_sectors: int = 16, anchor: bool = True,
                   metadata: Optional[dict] = None) -> ParametricProblem:
    """Two-label system split by one linear classifier, with sectors about ``center``.

    Measurements are modelled as ``y = H x + h``, so the classifier score is
    ``w1 . (H x + h) + w0`` with ``w = (w1, w0)``.  The first ray is the
    switching line's direction ``R90 H^T w1``; the remaining rays follow at
    equal angles.  Sectors whose interior has a positive score carry the
    ``plus`` inclusion, the others ``minus``.  Every cell is also cut by the
    score row of its side and by the box ``box_lo <= x <= box_hi``.
    ``n_sectors`` must be even so the line is made of two rays.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    center = np.asarray(center, dtype=float)
    m, n = H.shape
    if n != 2:
        raise ValueError("sector partitions are planar")
    if n_sectors % 2 or n_sectors < 4:
        raise ValueError("need an even number of sectors, at least 4")
    d = m + 1
    # state-space gradient of the score: g(w) = G w
    G = np.hstack([H.T, np.zeros((2, 1))])
    ray = [_rot(2 * np.pi * k / n_sectors) @ _R90 @ G for k in range(n_sectors)]
    score_o = np.append(h, 1.0)
    box_E = np.vstack([np.eye(2), -np.eye(2)])
    box_e = np.concatenate([-np.asarray(box_lo, float), np.asarray(box_hi, float)])
    box = AffineRows.constant(box_E, box_e, d)
    cells, cones, incs = [], [], []
    half = n_sectors // 2
    for j in range(n_sectors):
        lo_row = _R90 @ ray[j]                        # R90 t_j
        hi_row = -_R90 @ ray[(j + 1) % n_sectors]     # -R90 t_{j+1}
        Nc = np.stack([lo_row, hi_row])
        cone_rows = AffineRows(Nc, np.zeros((2, 2)), -np.einsum("i,rid->rd", center, Nc),
                               np.zeros(2))
        side = -1.0 if j < half else 1.0
        score = AffineRows((side * G)[None], np.zeros((1, 2)), (side * score_o)[None], np.zeros(1))
        cells.append(AffineRows.stack([cone_rows, score, box]))
        cones.append(cone_rows)
        incs.append(plus if side > 0 else minus)
    facets = []
    for j in range(n_sectors):
        k = (j + 1) % n_sectors
        Nf = -_R90 @ ray[k]            # points from sector k into sector j
        a, b = (j, k) if j < k else (k, j)
        facets.append((a, b, Nf if a == j else -Nf, np.zeros(2)))
    facets.sort(key=lambda f: (f[0], f[1]))
    if anchor:
        C = (np.append(H @ center + h, 1.0))[None, :]
        anchors = (C, np.zeros(1))
    else:
        anchors = (np.zeros((0, d)), np.zeros(0))
    meta = {"n_sectors": n_sectors, "box_lo": list(map(float, box_lo)),
            "box_hi": list(map(float, box_hi))}
    meta.update(metadata or {})
    return ParametricProblem(center, cells, [plus if i >= half else minus for i in range(n_sectors)],
                             cones, facets, anchors, meta, G)


# --------------------------------------------------------------------------
# half-steps
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AcsConfig:
    epsilon: float = 1e-5
    beta: float = 1e-3
    max_iters: int = 100
    slack_tol: float = 1e-6
    method: str = "auto"
    restarts: int = 0

    def __post_init__(self):
        if self.epsilon <= 0 or self.beta <= 0 or self.max_iters < 1:
            raise ValueError("need epsilon > 0, beta > 0 and max_iters >= 1")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")


@dataclasses.dataclass
class MultiplierStep:
    witness: CertificateWitness
    slack_l1: float
    objective: float


@dataclasses.dataclass
class ClassifierStep:
    w: np.ndarray
    p: np.ndarray
    q: dict
    slack_l1: float
    objective: float


def multiplier_step(problem: ParametricProblem, w, w_prime, beta: float,
                    method: str = "auto") -> MultiplierStep:
    """Best multipliers for fixed ``w`` (the relaxed program is always feasible)."""
    w = np.asarray(w, dtype=float)
    system, lyap, isets = problem.evaluate(w)
    b, regions, facets = certificate_program(system, lyap, isets, relaxed=True, mode="affine")
    sol = lpcore.solve(b.build(), method=method)
    if not sol.optimal:
        raise lpcore.LpNumericalError(f"multiplier step returned {sol.status}")
    wit = _witness_from(b, sol, regions, lyap, facets, True, True)
    slack = wit.slack_l1
    dist = float(np.abs(w - w_prime).sum())
    return MultiplierStep(wit, slack, beta * dist + slack)


def classifier_step(problem: ParametricProblem, mult: CertificateWitness, w_prime, beta: float,
                    method: str = "auto") -> ClassifierStep:
    """Best ``(w, p, q)`` for fixed ``(mu, v, lam)``."""
    w_prime = np.asarray(w_prime, dtype=float)
    n, d = problem.n, problem.d
    J = len(problem.cones)
    b = lpcore.LpBuilder()
    b.add_variables("w", d)
    b.add_variables("p", J * n)

    def psel(j):
        S = np.zeros((n, J * n))
        S[:, j * n:(j + 1) * n] = np.eye(n)
        return S

    # p_j = sum_r mu_r (N_r w + n0_r)
    for j, rows in enumerate(problem.cones):
        mu = mult.mu[j]
        b.add_eq({"p": psel(j), "w": -np.einsum("r,rid->id", mu, rows.N)}, mu @ rows.n0)
    # decrease identities, affine form
    slack_rows = []
    for (i, j, k) in problem.index_sets().dec:
        rows = problem.cells[i]
        v = mult.v[(i, j, k)]
        vG, vz = v[:-1], v[-1]
        vert = problem.inclusions[i].vertices[k]
        qname = f"q{i}_{j}_{k}"
        b.add_variables(qname, n + 1)
        top_w = np.einsum("r,rid->id", vG, rows.N)
        top_p = vert.A.T @ psel(j)
        b.add_eq({"w": top_w, "p": top_p, qname: -np.eye(n + 1)[:n]}, -(vG @ rows.n0))
        bot_w = (vG @ rows.o)[None, :]
        bot_p = (vert.a @ psel(j))[None, :]
        b.add_eq({"w": bot_w, "p": bot_p, qname: -np.eye(n + 1)[n:]}, [-(vG @ rows.o0) - vz])
        slack_rows.append(({qname: np.eye(n + 1)}, np.zeros(n + 1)))
    # continuity with fixed lam
    for (i, j, Nf, nf0) in problem.facets:
        lam = mult.lam[(i, j)]
        b.add_eq({"p": psel(i) - psel(j), "w": -lam * Nf}, lam * nf0)
    C, c0 = problem.anchors
    if C.size:
        b.add_eq({"w": C}, -c0)
    qcost = lpcore.l1_epigraph(b, slack_rows, name="qabs")
    wcost = lpcore.l1_epigraph(b, [({"w": np.eye(d)}, -w_prime)], name="wabs")
    b.add_cost(qcost)
    b.add_cost({"wabs": beta * wcost["wabs"]})
    sol = lpcore.solve(b.build(), method=method)
    if not sol.optimal:
        raise lpcore.LpNumericalError(f"classifier step returned {sol.status}")
    w = b.value(sol, "w")
    q = {(i, j, k): b.value(sol, f"q{i}_{j}_{k}") for (i, j, k) in problem.index_sets().dec}
    slack = float(sum(np.abs(x).sum() for x in q.values()))
    obj = beta * float(np.abs(w - w_prime).sum()) + slack
    return ClassifierStep(w, b.value(sol, "p").reshape(J, n), q, slack, obj)


# --------------------------------------------------------------------------
# alternate convex search
# --------------------------------------------------------------------------

@dataclasses.dataclass
class AcsTrace:
    iters: List[int] = dataclasses.field(default_factory=list)
    objective: List[float] = dataclasses.field(default_factory=list)
    slack_l1: List[float] = dataclasses.field(default_factory=list)
    dw_norm: List[float] = dataclasses.field(default_factory=list)

    def record(self, it, obj, slack, dw):
        self.iters.append(int(it))
        self.objective.append(float(obj))
        self.slack_l1.append(float(slack))
        self.dw_norm.append(float(dw))

    def monotone(self, tol: float = 1e-9) -> bool:
        obj = np.asarray(self.objective)
        return bool(np.all(np.diff(obj) <= tol * (1.0 + np.abs(obj[:-1])))) if obj.size > 1 else True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iter", "objective", "slack_l1", "dw_norm"])
            for row in zip(self.iters, self.objective, self.slack_l1, self.dw_norm):
                wr.writerow([row[0]] + [f"{x:.17g}" for x in row[1:]])


@dataclasses.dataclass
class ProjectionResult:
    w: np.ndarray
    witness: Optional[CertificateWitness]
    lyap: Optional[PolyhedralLyapunov]
    system: PwaSystem
    trace: AcsTrace
    success: bool
    converged: bool
    slack_l1: float
    report: Optional[VerificationReport]


def _acs(w_prime: np.ndarray, config: AcsConfig, problem: ParametricProblem,
         w_start) -> ProjectionResult:
    w_prime = np.asarray(w_prime, dtype=float)
    w = problem.onto_anchors(w_prime if w_start is None else w_start)
    trace = AcsTrace()
    mult = multiplier_step(problem, w, w_prime, config.beta, config.method)
    best = mult.objective
    slack = mult.slack_l1
    trace.record(0, best, slack, 0.0)
    converged = False
    for it in range(1, config.max_iters + 1):
        if slack <= config.slack_tol and it > 1:
            converged = True
            break
        cls = classifier_step(problem, mult.witness, w_prime, config.beta, config.method)
        if cls.objective > best + 1e-10 * (1.0 + abs(best)):
            # round-off made things worse; keep the incumbent
            converged = True
            break
        dw = float(np.linalg.norm(cls.w - w))
        w = cls.w
        mult_next = multiplier_step(problem, w, w_prime, config.beta, config.method)
        obj = min(cls.objective, mult_next.objective)
        if mult_next.objective <= cls.objective:
            mult = mult_next
        slack = min(cls.slack_l1, mult_next.slack_l1)
        best = obj
        trace.record(it, obj, slack, dw)
        if dw <= config.epsilon:
            converged = True
            break
    system, lyap, isets = problem.evaluate(w)
    witness = fitted = report = None
    success = False
    if slack <= config.slack_tol:
        res = find_certificate(system, lyap, isets, relaxed=False, method=config.method,
                               mode="affine")
        if res.certified:
            witness, fitted = res.witness, res.lyap
            report = verify_certificate(system, fitted, witness, isets,
                                        slack_tol=config.slack_tol)
            success = report.feasible and problem.anchor_residual(w) <= 1e-9 * (1.0 + np.abs(w).sum())
    if witness is None:
        witness = mult.witness
        fitted = lyap.with_gradients(witness.p)
    return ProjectionResult(w, witness, fitted, system, trace, success, converged, slack, report)


def orientation_starts(problem: ParametricProblem, w_prime, n_angles: int) -> List[np.ndarray]:
    """Starting points whose switching line is ``w'``'s rotated by ``2 pi k / n_angles``.

    Each start is the least-squares (l2) change of ``w'`` that turns the
    state-space gradient ``Gw`` of the score by the given angle, keeps its
    length, and satisfies the anchor equalities.
    """
    if problem.gradient is None:
        raise ValueError("orientation restarts need the problem's score gradient")
    w_prime = np.asarray(w_prime, dtype=float)
    G = np.asarray(problem.gradient, dtype=float)
    C, c0 = problem.anchors
    g = G @ w_prime
    norm = np.linalg.norm(g)
    if norm <= 1e-12:
        g, norm = np.eye(G.shape[0])[0], 1.0
    A = np.vstack([G, C]) if C.size else G
    starts = []
    for k in range(1, n_angles):
        target = _rot(2 * np.pi * k / n_angles) @ g
        r = np.concatenate([target, -c0]) if C.size else target
        starts.append(w_prime + A.T @ np.linalg.lstsq(A @ A.T, r - A @ w_prime, rcond=None)[0])
    return starts


def project(w_prime, config: AcsConfig, problem: ParametricProblem,
            w_start=None) -> ProjectionResult:
    """Alternate convex search from ``w_start``, with optional restarts.

    The default start is ``w'`` moved onto the anchor equalities, so that
    every iterate is feasible for them and the multiplier-step objective is
    comparable with the classifier-step one.

    The trace records the objective after the opening multiplier step (iter
    0) and after every classifier step.  A classifier step that fails to
    improve on the incumbent, which only happens through solver round-off, is
    discarded.  On exit the unrelaxed certificate program is solved at the
    final ``w``; success means the slack is within ``slack_tol`` and that
    zero-slack certificate exists and verifies.

    The bilinear program is nonconvex in the orientation of the switching
    line, and a search started on the wrong side of a degenerate orientation
    stalls with positive slack.  With ``config.restarts = K > 0`` and a failed
    first search, ``K - 1`` rotated starts (see :func:`orientation_starts`)
    are scored by one multiplier step each and the search is rerun from the
    three best; the successful run with the lowest objective is returned.
    """
    w_prime = np.asarray(w_prime, dtype=float)
    first = _acs(w_prime, config, problem, w_start)
    if first.success or config.restarts < 2 or problem.gradient is None:
        return first
    starts = orientation_starts(problem, w_prime, config.restarts)
    scored = sorted(((multiplier_step(problem, w0, w_prime, config.beta, config.method).objective, k)
                     for k, w0 in enumerate(starts)))
    best = first
    for _, k in scored[:3]:
        res = _acs(w_prime, config, problem, starts[k])
        if res.success and (not best.success or res.trace.objective[-1] < best.trace.objective[-1]):
            best = res
    return best
