"""
Polyhedral Lyapunov certificates for piecewise-affine inclusions.

A candidate ``V(x) = p_j . (x - x_e)`` on cone ``Z_j`` is certified by
multipliers that turn the quantified conditions into linear equalities:

* positivity    ``p_j = F_j^T mu_j`` with ``mu_j >= 1``
* decrease      ``[G g; 0 1]^T v = -[A^T; a^T] p_j`` with ``v >= 1`` for every
  triple ``(i, j, k)``, where ``G x + g >= 0`` describes the region on which
  vertex field ``k`` of cell ``i`` meets cone ``j``
* continuity    ``p_i - p_j = lam_ij f_ij`` with ``lam_ij >= 1``

The relaxed program adds a free slack ``q`` to each decrease equality and
minimizes ``sum ||q||_1``; it is always feasible.

Two forms of the decrease condition are used.  The affine form above proves
strict decrease on the whole region, including the Lyapunov center.  When the
region contains the center and the vertex field vanishes there, strict
decrease at the center is impossible, so the conic form is used instead: only
the rows active at the center are kept, the field is written in centered
coordinates ``xi = x - x_e`` and the homogenizing row is dropped,
``G_c^T v = -A^T p_j``.  This proves ``p_j . A xi < 0`` on the tangent cone
minus its apex, which contains the region.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import lpcore
from .geometry import Cone, IndexSets, Partition, PolyCell, _as_cell, adjacency, build_index_sets
from .model import PwaSystem

Triple = Tuple[int, int, int]
Pair = Tuple[int, int]

_CENTER_TOL = 1e-9


@dataclasses.dataclass
class PolyhedralLyapunov:
    """Cones about ``center`` with one gradient per cone.

    ``facets`` holds ``(i, j, f_ij)`` records used by the continuity
    constraints; they default to the unit normals found by
    :func:`geometry.adjacency`.
    """

    cones: List[Cone]
    gradients: np.ndarray
    center: np.ndarray
    facets: Optional[List[Tuple[int, int, np.ndarray]]] = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).ravel()
        self.gradients = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        if self.gradients.shape != (len(self.cones), self.center.size):
            raise ValueError("need one gradient per cone")
        if self.facets is None:
            self.facets = adjacency(self.cones)
        self.facets = [(int(i), int(j), np.asarray(f, dtype=float)) for i, j, f in self.facets]

    @classmethod
    def unfitted(cls, cones: Sequence[Cone], facets=None) -> "PolyhedralLyapunov":
        cones = list(cones)
        return cls(cones, np.zeros((len(cones), cones[0].dim)), cones[0].center, facets)

    @property
    def partition(self) -> Partition:
        return Partition(list(self.cones), self.center, list(self.facets))

    def with_gradients(self, gradients) -> "PolyhedralLyapunov":
        return PolyhedralLyapunov(self.cones, gradients, self.center, self.facets)

    def value(self, x, tol: float = 1e-9):
        """``V(x)``, taking the largest piece among the cones containing ``x``."""
        x = np.asarray(x, dtype=float)
        X = x.reshape(-1, self.center.size)
        xi = X - self.center
        vals = xi @ self.gradients.T
        member = np.stack([c.contains(X, tol) for c in self.cones], axis=1)
        if not np.all(member.any(axis=1)):
            raise ValueError("point outside the Lyapunov partition")
        out = np.where(member, vals, -np.inf).max(axis=1)
        return float(out[0]) if x.ndim == 1 else out

    def to_dict(self):
        return {"center": self.center.tolist(),
                "cones": [c.F.tolist() for c in self.cones],
                "gradients": self.gradients.tolist(),
                "facets": [[i, j, f.tolist()] for i, j, f in self.facets]}

    @classmethod
    def from_dict(cls, d) -> "PolyhedralLyapunov":
        center = np.asarray(d["center"], dtype=float)
        return cls([Cone(F, center) for F in d["cones"]], d["gradients"], center,
                   [tuple(f) for f in d["facets"]])


@dataclasses.dataclass
class DecreaseRegion:
    """Region rows and vertex field for one decrease triple."""

    triple: Triple
    G: np.ndarray
    g: np.ndarray
    A: np.ndarray
    a: np.ndarray
    mode: str          # "affine" or "conic"

    @property
    def n_multipliers(self) -> int:
        return self.G.shape[0] + (1 if self.mode == "affine" else 0)


@dataclasses.dataclass
class CertificateWitness:
    """Multipliers, Lyapunov gradients and slacks of one certificate solve."""

    p: np.ndarray
    mu: List[np.ndarray]
    v: Dict[Triple, np.ndarray]
    lam: Dict[Pair, float]
    q: Dict[Triple, np.ndarray]
    modes: Dict[Triple, str]
    same_partition: bool = False

    @property
    def slack_l1(self) -> float:
        return float(sum(np.abs(q).sum() for q in self.q.values()))

    def to_dict(self):
        key = lambda t: ",".join(str(i) for i in t)
        return {"p": self.p.tolist(), "mu": [m.tolist() for m in self.mu],
                "v": {key(t): x.tolist() for t, x in self.v.items()},
                "lam": {key(t): float(x) for t, x in self.lam.items()},
                "q": {key(t): x.tolist() for t, x in self.q.items()},
                "modes": {key(t): m for t, m in self.modes.items()},
                "same_partition": self.same_partition,
                "norm": "l1"}

    @classmethod
    def from_dict(cls, d) -> "CertificateWitness":
        tup = lambda s: tuple(int(i) for i in s.split(","))
        return cls(np.asarray(d["p"], dtype=float), [np.asarray(m, dtype=float) for m in d["mu"]],
                   {tup(k): np.asarray(x, dtype=float) for k, x in d["v"].items()},
                   {tup(k): float(x) for k, x in d["lam"].items()},
                   {tup(k): np.asarray(x, dtype=float) for k, x in d["q"].items()},
                   {tup(k): m for k, m in d["modes"].items()},
                   bool(d.get("same_partition", False)))


# --------------------------------------------------------------------------
# regions
# --------------------------------------------------------------------------

def region_rows(system: PwaSystem, lyap: PolyhedralLyapunov, i: int, j: int,
                same_partition: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Rows ``G x + g >= 0`` of ``X_i`` (intersected with ``Z_j`` unless P = Q)."""
    X = _as_cell(system.partition.cells[i])
    if same_partition:
        return X.E, X.e
    Z = lyap.cones[j].as_cell()
    return np.vstack([X.E, Z.E]), np.concatenate([X.e, Z.e])


def decrease_mode(G, g, A, a, center) -> str:
    """``"conic"`` when the region holds the center and the field vanishes there."""
    at_center = G @ center + g
    scale = 1.0 + np.abs(G).sum(axis=1)
    if np.all(at_center >= -_CENTER_TOL * scale) and \
            np.linalg.norm(A @ center + a) <= _CENTER_TOL * (1.0 + np.abs(A).sum()):
        return "conic"
    return "affine"


def decrease_regions(system: PwaSystem, lyap: PolyhedralLyapunov, index_sets: IndexSets,
                     mode="auto") -> List[DecreaseRegion]:
    """Decrease regions for every triple.

    ``mode`` is ``"auto"`` (conic exactly when its preconditions hold),
    ``"affine"`` (always the affine form, sound everywhere) or a mapping from
    triple to either of those.  A requested conic form whose preconditions
    fail raises ``ValueError``.
    """
    out = []
    c = lyap.center
    for (i, j, k) in index_sets.dec:
        G, g = region_rows(system, lyap, i, j, index_sets.same_partition)
        vert = system.inclusions[i].vertices[k]
        want = mode.get((i, j, k), "auto") if isinstance(mode, dict) else mode
        found = decrease_mode(G, g, vert.A, vert.a, c)
        if want == "conic" and found != "conic":
            raise ValueError(f"triple {(i, j, k)}: conic form requested but the field "
                             "does not vanish at the center inside the region")
        use = found if want == "auto" else want
        if use == "conic":
            at_center = G @ c + g
            active = np.abs(at_center) <= _CENTER_TOL * (1.0 + np.abs(G).sum(axis=1))
            G, g = G[active], g[active]
        out.append(DecreaseRegion((i, j, k), G, g, vert.A, vert.a, use))
    return out


def decrease_residual(region: DecreaseRegion, p_j, v, center) -> np.ndarray:
    """Left side minus right side of the decrease identity (equals ``q``)."""
    if region.mode == "conic":
        return region.G.T @ v + region.A.T @ p_j
    vG, vz = v[:-1], v[-1]
    top = region.G.T @ vG + region.A.T @ p_j
    bottom = region.g @ vG + vz + region.a @ p_j
    return np.append(top, bottom)


# --------------------------------------------------------------------------
# constraint blocks
# --------------------------------------------------------------------------

def positivity_constraints(builder: lpcore.LpBuilder, cones: Sequence[Cone],
                           fixed_p: Optional[np.ndarray] = None) -> None:
    """``p_j = F_j^T mu_j`` and ``mu_j >= 1`` for each cone.

    Uses the variable block ``"p"`` (cone-major, ``J * n`` entries) unless
    ``fixed_p`` is given, in which case the gradients enter as constants.
    """
    n = cones[0].dim
    J = len(cones)
    if fixed_p is None and "p" not in builder.blocks:
        builder.add_variables("p", J * n)
    for j, cone in enumerate(cones):
        name = f"mu{j}"
        builder.add_variables(name, cone.F.shape[0], lb=1.0)
        if fixed_p is None:
            sel = np.zeros((n, J * n))
            sel[:, j * n:(j + 1) * n] = np.eye(n)
            builder.add_eq({"p": sel, name: -cone.F.T}, np.zeros(n))
        else:
            builder.add_eq({name: cone.F.T}, np.asarray(fixed_p, dtype=float).reshape(J, n)[j])


def decrease_constraints(builder: lpcore.LpBuilder, regions: Sequence[DecreaseRegion],
                         n_cones: int, relaxed: bool) -> Optional[Dict[str, np.ndarray]]:
    """Decrease identities for each region; returns the slack cost term when relaxed."""
    if not regions:
        return {} if relaxed else None
    n = regions[0].A.shape[0]
    if "p" not in builder.blocks:
        builder.add_variables("p", n_cones * n)
    rows = []
    for t, reg in enumerate(regions):
        j = reg.triple[1]
        vname = f"v{t}"
        builder.add_variables(vname, reg.n_multipliers, lb=1.0)
        psel = np.zeros((n, n_cones * n))
        psel[:, j * n:(j + 1) * n] = np.eye(n)
        if reg.mode == "conic":
            cv = reg.G.T
            cp = reg.A.T @ psel
        else:
            cv = np.zeros((n + 1, reg.n_multipliers))
            cv[:n, :-1] = reg.G.T
            cv[n, :-1] = reg.g
            cv[n, -1] = 1.0
            cp = np.vstack([reg.A.T, reg.a[None, :]]) @ psel
        m = cv.shape[0]
        if relaxed:
            qname = f"q{t}"
            builder.add_variables(qname, m)
            builder.add_eq({vname: cv, "p": cp, qname: -np.eye(m)}, np.zeros(m))
            rows.append(({qname: np.eye(m)}, np.zeros(m)))
        else:
            builder.add_eq({vname: cv, "p": cp}, np.zeros(m))
    if relaxed:
        return lpcore.l1_epigraph(builder, rows, name="qabs")
    return None


def continuity_constraints(builder: lpcore.LpBuilder, facets, n_cones: int, n: int) -> None:
    """``p_i - p_j - lam_ij f_ij = 0`` with ``lam_ij >= 1``."""
    if not facets:
        return
    if "p" not in builder.blocks:
        builder.add_variables("p", n_cones * n)
    builder.add_variables("lam", len(facets), lb=1.0)
    for r, (i, j, f) in enumerate(facets):
        cp = np.zeros((n, n_cones * n))
        cp[:, i * n:(i + 1) * n] = np.eye(n)
        cp[:, j * n:(j + 1) * n] -= np.eye(n)
        cl = np.zeros((n, len(facets)))
        cl[:, r] = -np.asarray(f, dtype=float)
        builder.add_eq({"p": cp, "lam": cl}, np.zeros(n))


def positivity_feasible(F, p) -> bool:
    """Is there ``mu >= 1`` with ``F^T mu = p``?"""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    b = lpcore.LpBuilder()
    positivity_constraints(b, [Cone(F, np.zeros(F.shape[1]))], fixed_p=np.asarray(p, dtype=float))
    return b.solve().optimal


# --------------------------------------------------------------------------
# certificate search
# --------------------------------------------------------------------------

@dataclasses.dataclass
class CertificateResult:
    status: str                  # "certified", "relaxed", "no certificate found"
    witness: Optional[CertificateWitness]
    lyap: Optional[PolyhedralLyapunov]
    objective: float
    index_sets: IndexSets
    regions: List[DecreaseRegion]

    @property
    def certified(self) -> bool:
        return self.status == "certified"


def certificate_program(system: PwaSystem, lyap: PolyhedralLyapunov, index_sets: IndexSets,
                        relaxed: bool, mode="auto"):
    """Assemble the certificate LP; returns ``(builder, regions)``."""
    n = system.dim
    J = len(lyap.cones)
    regions = decrease_regions(system, lyap, index_sets, mode)
    b = lpcore.LpBuilder()
    b.add_variables("p", J * n)
    positivity_constraints(b, lyap.cones)
    cost = decrease_constraints(b, regions, J, relaxed)
    facets = [f for f in lyap.facets if (min(f[0], f[1]), max(f[0], f[1])) in set(index_sets.cont)]
    continuity_constraints(b, facets, J, n)
    if cost:
        b.add_cost(cost)
    return b, regions, facets


def _witness_from(b: lpcore.LpBuilder, sol, regions, lyap, facets, same_partition, relaxed):
    n = lyap.center.size
    J = len(lyap.cones)
    p = b.value(sol, "p").reshape(J, n)
    mu = [b.value(sol, f"mu{j}") for j in range(J)]
    v, q, modes = {}, {}, {}
    for t, reg in enumerate(regions):
        v[reg.triple] = b.value(sol, f"v{t}")
        m = n + (reg.mode == "affine")
        q[reg.triple] = b.value(sol, f"q{t}") if relaxed else np.zeros(m)
        modes[reg.triple] = reg.mode
    lam = {}
    if facets:
        lv = b.value(sol, "lam")
        lam = {(i, j): float(lv[r]) for r, (i, j, _) in enumerate(facets)}
    return CertificateWitness(p, mu, v, lam, q, modes, same_partition)


def find_certificate(system: PwaSystem, lyap: Union[PolyhedralLyapunov, Sequence[Cone]],
                     index_sets: Optional[IndexSets] = None, relaxed: bool = False,
                     same_partition: bool = False, method: str = "auto",
                     mode="auto") -> CertificateResult:
    """Search for a certificate by LP.

    Infeasibility of the unrelaxed program means no certificate was found for
    this partition; it says nothing about instability.
    """
    if not isinstance(lyap, PolyhedralLyapunov):
        lyap = PolyhedralLyapunov.unfitted(lyap)
    if index_sets is None:
        index_sets = build_index_sets(system.partition, lyap.partition, system.n_vertices(),
                                      same_partition=same_partition)
    b, regions, facets = certificate_program(system, lyap, index_sets, relaxed, mode)
    sol = lpcore.solve(b.build(), method=method)
    if not sol.optimal:
        if relaxed:
            raise lpcore.LpNumericalError(f"relaxed certificate program returned {sol.status}")
        return CertificateResult("no certificate found", None, None, np.inf, index_sets, regions)
    w = _witness_from(b, sol, regions, lyap, facets, index_sets.same_partition, relaxed)
    fitted = lyap.with_gradients(w.p)
    status = "certified" if (not relaxed or w.slack_l1 <= 1e-9) else "relaxed"
    return CertificateResult(status, w, fitted, float(sol.objective), index_sets, regions)


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

@dataclasses.dataclass
class VerificationReport:
    feasible: bool
    max_violation: float
    slack_l1: float
    residuals: Dict[str, float]
    violations: List[str]

    def to_dict(self):
        return dataclasses.asdict(self)


def verify_certificate(system: PwaSystem, lyap: PolyhedralLyapunov, witness: CertificateWitness,
                       index_sets: Optional[IndexSets] = None, tol: float = 1e-7,
                       slack_tol: float = 1e-6) -> VerificationReport:
    """Re-check every certificate row from scratch.

    Equalities must hold to ``tol`` (slacks included), multipliers must be at
    least one up to ``tol``, and the total slack must not exceed
    ``slack_tol``.  Index sets and decrease regions are rebuilt from the
    system and the Lyapunov partition, so nothing from the solver is trusted
    except the numbers in the witness.
    """
    n = system.dim
    J = len(lyap.cones)
    p = np.asarray(witness.p, dtype=float)
    if p.shape != (J, n) or len(witness.mu) != J:
        raise ValueError("witness shape does not match the Lyapunov partition")
    if index_sets is None:
        index_sets = build_index_sets(system.partition, lyap.partition, system.n_vertices(),
                                      same_partition=witness.same_partition)
    res: Dict[str, float] = {}
    bad: List[str] = []

    def record(name, value, limit):
        res[name] = float(value)
        if not value <= limit:
            bad.append(name)

    record("gradients match witness", np.abs(p - lyap.gradients).max(), tol)
    for j, cone in enumerate(lyap.cones):
        mu = np.asarray(witness.mu[j], dtype=float)
        if mu.size != cone.F.shape[0]:
            raise ValueError(f"mu{j} has {mu.size} entries, cone has {cone.F.shape[0]} rows")
        record(f"positivity[{j}] p = F^T mu", np.abs(p[j] - cone.F.T @ mu).max(), tol)
        record(f"positivity[{j}] mu >= 1", max(0.0, 1.0 - mu.min()), tol)
    try:
        regions = decrease_regions(system, lyap, index_sets,
                                   {t: m for t, m in witness.modes.items()})
    except ValueError as exc:
        return VerificationReport(False, np.inf, witness.slack_l1, {"decrease form": np.inf},
                                  [str(exc)])
    for reg in regions:
        t = reg.triple
        name = "decrease[{},{},{}]".format(*t)
        if t not in witness.v:
            bad.append(name + " missing")
            res[name + " missing"] = np.inf
            continue
        v = np.asarray(witness.v[t], dtype=float)
        if v.size != reg.n_multipliers:
            raise ValueError(f"{name}: multiplier has {v.size} entries, expected {reg.n_multipliers}")
        q = np.asarray(witness.q.get(t, np.zeros(1)), dtype=float)
        r = decrease_residual(reg, p[t[1]], v, lyap.center)
        record(name + " identity", np.abs(r - q).max() if q.size == r.size else np.abs(r).max(), tol)
        record(name + " v >= 1", max(0.0, 1.0 - v.min()), tol)
    cont = set(index_sets.cont)
    for (i, j, f) in lyap.facets:
        if (min(i, j), max(i, j)) not in cont:
            continue
        name = f"continuity[{i},{j}]"
        lam = witness.lam.get((i, j))
        if lam is None:
            bad.append(name + " missing")
            res[name + " missing"] = np.inf
            continue
        record(name + " p_i - p_j = lam f", np.abs(p[i] - p[j] - lam * f).max(), tol)
        record(name + " lam >= 1", max(0.0, 1.0 - lam), tol)
    slack = witness.slack_l1
    record("slack l1", slack, slack_tol)
    finite = [x for k, x in res.items() if k != "slack l1" and np.isfinite(x)]
    return VerificationReport(not bad, float(max(finite, default=0.0)), slack, res, bad)


# --------------------------------------------------------------------------
# pointwise checks
# --------------------------------------------------------------------------

def lie_derivative_max(system: PwaSystem, lyap: PolyhedralLyapunov, x, tol: float = 1e-9) -> float:
    """Largest ``p_j . (A_ik x + a_ik)`` over every cell and cone containing ``x``."""
    x = np.asarray(x, dtype=float)
    cells = system.partition.locate(x, tol)
    if not cells:
        raise ValueError(f"state {x} lies outside the system domain")
    cones = [j for j, c in enumerate(lyap.cones) if bool(c.contains(x, tol))]
    if not cones:
        raise ValueError(f"state {x} lies outside the Lyapunov partition")
    best = -np.inf
    for i in cells:
        for vert in system.inclusions[i].vertices:
            f = vert(x)
            best = max(best, float(np.max(lyap.gradients[cones] @ f)))
    return best


def level_set_bounds(lyap: PolyhedralLyapunov, domain: Union[PolyCell, Partition]) -> Tuple[float, float]:
    """``(S_max, S_min)`` levels of ``V`` relative to a bounded convex domain.

    ``S_max`` is the largest ``c`` with ``{V <= c}`` inside the domain,
    obtained from one LP per cone and domain row: the piece
    ``{xi in Z_j, p_j . xi <= 1}`` is scaled until it touches a row.
    ``S_min`` is the smallest value of ``V`` on the domain (zero when the
    center lies inside it).
    """
    if isinstance(domain, Partition):
        if len(domain) != 1:
            raise ValueError("level sets need a single convex domain cell")
        domain = _as_cell(domain.cells[0])
    c = lyap.center
    n = c.size
    slack = domain.E @ c + domain.e
    # boundedness of the domain: every direction must be cut by some row
    for s in (1.0, -1.0):
        for k in range(n):
            obj = np.zeros(n)
            obj[k] = -s
            sol = lpcore.solve(lpcore.LinearProgram.from_arrays(obj, A_ub=-domain.E, b_ub=domain.e))
            if sol.status == lpcore.UNBOUNDED:
                raise ValueError("level-set bounds need a bounded domain")
            if sol.status == lpcore.INFEASIBLE:
                raise ValueError("empty domain")
    if np.any(slack < 0):
        s_max = 0.0
    else:
        s_max = np.inf
        for j, cone in enumerate(lyap.cones):
            pj = lyap.gradients[j]
            A_ub = np.vstack([-cone.F, pj[None, :]])
            b_ub = np.append(np.zeros(cone.F.shape[0]), 1.0)
            for r in range(domain.E.shape[0]):
                sol = lpcore.solve(lpcore.LinearProgram.from_arrays(domain.E[r], A_ub=A_ub, b_ub=b_ub))
                if sol.status == lpcore.UNBOUNDED:
                    raise ValueError(f"cone {j}: V is not positive definite, sublevel sets unbounded")
                reach = -sol.objective      # max of -E_r xi over the unit piece
                if reach > 0:
                    s_max = min(s_max, slack[r] / reach)
    if np.all(slack >= 0):
        s_min = 0.0
    else:
        s_min = np.inf
        for j, cone in enumerate(lyap.cones):
            pj = lyap.gradients[j]
            A_ub = np.vstack([-cone.F @ np.eye(n), -domain.E])
            b_ub = np.concatenate([-cone.F @ c, domain.e])
            sol = lpcore.solve(lpcore.LinearProgram.from_arrays(pj, A_ub=A_ub, b_ub=b_ub))
            if sol.optimal:
                s_min = min(s_min, sol.objective - pj @ c)
    return float(s_max), float(s_min)
