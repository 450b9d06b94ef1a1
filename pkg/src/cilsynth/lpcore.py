"""
Dense linear programming.

Every feasibility question in the package (cell emptiness, facet detection,
certificate search, both half-steps of the alternate convex search) is posed
as a small LP

    minimize    c.z
    subject to  A_eq z  = b_eq
                A_ub z <= b_ub
                lb <= z <= ub

and handed to :func:`solve`.  The reference solver is a two-phase primal
simplex on a dense tableau (Dantzig pricing, Bland's rule after a run of
degenerate pivots).  A HiGHS backend (through scipy) is available for the
larger programs that appear when the classifier weights live in measurement
space.

:class:`LpBuilder` keeps track of named variable blocks so that callers can
write constraints block-wise instead of fiddling with column offsets.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

#: programs whose standard-form tableau has more entries than this are
#: routed to HiGHS when ``method="auto"``
AUTO_SIMPLEX_LIMIT = 250_000

_PIVOT_TOL = 1e-9
_COST_TOL = 1e-9
_FEAS_TOL = 1e-7
_DEGENERATE_RUN = 50


class LpNumericalError(RuntimeError):
    """The solver could not certify any status for the program."""


@dataclasses.dataclass
class LinearProgram:
    cost: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float).ravel()
        n = self.cost.size
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_ub = np.asarray(self.b_ub, dtype=float).ravel()
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("A_eq and b_eq disagree in row count")
        if self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("A_ub and b_ub disagree in row count")
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("cost entries must be finite")
        if np.any(self.lb > self.ub):
            raise ValueError("variable lower bound exceeds upper bound")

    @property
    def n_vars(self) -> int:
        return self.cost.size

    @classmethod
    def from_arrays(cls, cost, A_eq=None, b_eq=None, A_ub=None, b_ub=None,
                    lb=-np.inf, ub=np.inf):
        cost = np.asarray(cost, dtype=float).ravel()
        n = cost.size
        if A_eq is None:
            A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
        if A_ub is None:
            A_ub, b_ub = np.zeros((0, n)), np.zeros(0)
        return cls(cost, A_eq, b_eq, A_ub, b_ub, lb, ub)

    def residuals(self, z: np.ndarray) -> Dict[str, float]:
        """Worst absolute violation per constraint family at ``z``."""
        z = np.asarray(z, dtype=float)
        out = {"eq": 0.0, "ub": 0.0, "bounds": 0.0}
        if self.b_eq.size:
            out["eq"] = float(np.max(np.abs(self.A_eq @ z - self.b_eq)))
        if self.b_ub.size:
            out["ub"] = float(max(0.0, np.max(self.A_ub @ z - self.b_ub)))
        with np.errstate(invalid="ignore"):
            lo = np.where(np.isfinite(self.lb), self.lb - z, 0.0)
            hi = np.where(np.isfinite(self.ub), z - self.ub, 0.0)
        out["bounds"] = float(max(0.0, lo.max(initial=0.0), hi.max(initial=0.0)))
        return out

    def max_residual(self, z: np.ndarray) -> float:
        return max(self.residuals(z).values())


@dataclasses.dataclass
class LpSolution:
    status: str
    z: Optional[np.ndarray]
    objective: float
    iterations: int = 0
    method: str = "simplex"
    #: worst primal violation of the returned point (optimal status only)
    primal_residual: float = 0.0
    #: most negative reduced cost at the final basis (simplex only)
    dual_residual: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# --------------------------------------------------------------------------
# standard form conversion
# --------------------------------------------------------------------------

@dataclasses.dataclass
class _StandardForm:
    A: np.ndarray           # m x N
    b: np.ndarray           # m, nonnegative
    c: np.ndarray           # N
    T: np.ndarray           # n_orig x N, z = T x + z0
    z0: np.ndarray
    slack_basis: np.ndarray  # per row: column usable as initial basis or -1


def _standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    cols: List[np.ndarray] = []      # columns of T
    z0 = np.zeros(n)
    bound_rows: List[Tuple[int, float]] = []  # (column index, capacity)
    for i in range(n):
        lo, hi = lp.lb[i], lp.ub[i]
        e = np.zeros(n)
        e[i] = 1.0
        if np.isfinite(lo):
            z0[i] = lo
            cols.append(e)
            if np.isfinite(hi):
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            z0[i] = hi
            cols.append(-e)
        else:
            cols.append(e)
            cols.append(-e)
    T = np.array(cols).T if cols else np.zeros((n, 0))
    n_struct = T.shape[1]
    m_eq, m_ub, m_bd = lp.b_eq.size, lp.b_ub.size, len(bound_rows)
    n_slack = m_ub + m_bd
    N = n_struct + n_slack
    m = m_eq + m_ub + m_bd
    A = np.zeros((m, N))
    b = np.zeros(m)
    slack_basis = -np.ones(m, dtype=int)
    if m_eq:
        A[:m_eq, :n_struct] = lp.A_eq @ T
        b[:m_eq] = lp.b_eq - lp.A_eq @ z0
    if m_ub:
        r = slice(m_eq, m_eq + m_ub)
        A[r, :n_struct] = lp.A_ub @ T
        A[r, n_struct:n_struct + m_ub] = np.eye(m_ub)
        b[r] = lp.b_ub - lp.A_ub @ z0
        slack_basis[m_eq:m_eq + m_ub] = n_struct + np.arange(m_ub)
    for k, (col, cap) in enumerate(bound_rows):
        row = m_eq + m_ub + k
        A[row, col] = 1.0
        A[row, n_struct + m_ub + k] = 1.0
        b[row] = cap
        slack_basis[row] = n_struct + m_ub + k
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    slack_basis[neg] = -1
    c = np.zeros(N)
    c[:n_struct] = lp.cost @ T
    T_full = np.zeros((n, N))
    T_full[:, :n_struct] = T
    return _StandardForm(A, b, c, T_full, z0, slack_basis)


# --------------------------------------------------------------------------
# tableau simplex
# --------------------------------------------------------------------------

class _Tableau:
    """Rows 0..m-1 hold [B^-1 A | B^-1 b]; the last row holds reduced costs."""

    def __init__(self, A, b, basis, cost):
        self.m, self.N = A.shape
        self.basis = np.array(basis, dtype=int)
        self.cost = cost
        self.refactor(A, b)
        self.iterations = 0

    def refactor(self, A, b):
        B = A[:, self.basis]
        full = np.hstack([A, b[:, None]])
        try:
            body = np.linalg.solve(B, full) if self.m else full
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError("singular basis during refactorization") from exc
        self.T = np.vstack([body, np.zeros((1, self.N + 1))])
        self._price()

    def _price(self):
        cb = self.cost[self.basis]
        self.T[-1, :-1] = self.cost - cb @ self.T[:-1, :-1]
        self.T[-1, -1] = -cb @ self.T[:-1, -1]

    def pivot(self, r, q):
        T = self.T
        T[r] /= T[r, q]
        col = T[:, q].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, q] = 0.0
        T[r, q] = 1.0
        self.basis[r] = q
        self.iterations += 1

    def run(self, allowed: np.ndarray, max_iter: int) -> str:
        """Optimize the current cost row over the ``allowed`` columns."""
        degenerate = 0
        bland = False
        while True:
            if self.iterations > max_iter:
                raise LpNumericalError("simplex iteration limit reached")
            d = self.T[-1, :-1]
            cand = np.flatnonzero(allowed & (d < -_COST_TOL))
            if cand.size == 0:
                return OPTIMAL
            q = cand[0] if bland else cand[np.argmin(d[cand])]
            col = self.T[:-1, q]
            scale = max(1.0, np.abs(col).max())
            pos = np.flatnonzero(col > _PIVOT_TOL * scale)
            if pos.size == 0:
                return UNBOUNDED
            rhs = np.maximum(self.T[:-1, -1][pos], 0.0)
            ratios = rhs / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
            r = ties[np.argmin(self.basis[ties])]
            if best <= 1e-12:
                degenerate += 1
                if degenerate >= _DEGENERATE_RUN:
                    bland = True
            else:
                degenerate = 0
            self.pivot(r, q)


def _simplex_standard(sf: _StandardForm, max_iter: int):
    A, b, c = sf.A, sf.b, sf.c
    m, N = A.shape
    # phase 1 with artificials only on rows lacking a usable slack
    art_rows = np.flatnonzero(sf.slack_basis < 0)
    n_art = art_rows.size
    A1 = np.hstack([A, np.zeros((m, n_art))])
    A1[art_rows, N + np.arange(n_art)] = 1.0
    basis = sf.slack_basis.copy()
    basis[art_rows] = N + np.arange(n_art)
    c1 = np.zeros(N + n_art)
    c1[N:] = 1.0
    tab = _Tableau(A1, b, basis, c1)
    allowed = np.ones(N + n_art, dtype=bool)
    tab.run(allowed, max_iter)
    scale = 1.0 + np.abs(b).max(initial=0.0)
    if -tab.T[-1, -1] > _FEAS_TOL * scale:
        return INFEASIBLE, None, tab.iterations
    # drive remaining artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] >= N:
            row = np.abs(tab.T[r, :N])
            q = int(np.argmax(row)) if N else 0
            if N and row[q] > 1e-7:
                tab.pivot(r, q)
            else:
                keep[r] = False
    rows = np.flatnonzero(keep)
    A2 = A[rows]
    b2 = b[rows]
    basis2 = tab.basis[rows]
    tab2 = _Tableau(A2, b2, basis2, c)
    tab2.iterations = tab.iterations
    allowed = np.ones(N, dtype=bool)
    for _ in range(4):
        status = tab2.run(allowed, max_iter)
        if status == UNBOUNDED:
            return UNBOUNDED, None, tab2.iterations
        # certify the final basis from scratch
        B = A2[:, tab2.basis]
        try:
            xb = np.linalg.solve(B, b2) if rows.size else np.zeros(0)
            y = np.linalg.solve(B.T, c[tab2.basis]) if rows.size else np.zeros(0)
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError("singular final basis") from exc
        red = c - A2.T @ y
        if xb.min(initial=0.0) >= -1e-9 and red.min(initial=0.0) >= -1e-9:
            x = np.zeros(N)
            x[tab2.basis] = np.maximum(xb, 0.0)
            return OPTIMAL, (x, float(min(0.0, red.min(initial=0.0)))), tab2.iterations
        tab2.refactor(A2, b2)
        if xb.min(initial=0.0) < -1e-9:
            # lost primal feasibility through round-off; let phase 1 redo it
            break
    raise LpNumericalError("simplex could not certify its final basis")


def _solve_simplex(lp: LinearProgram, max_iter: Optional[int]) -> LpSolution:
    sf = _standard_form(lp)
    m, N = sf.A.shape
    if max_iter is None:
        max_iter = 50 * (m + N) + 1000
    status, payload, iters = _simplex_standard(sf, max_iter)
    if status != OPTIMAL:
        return LpSolution(status, None, np.nan, iters, "simplex")
    x, dual_res = payload
    z = sf.T @ x + sf.z0
    return LpSolution(OPTIMAL, z, float(lp.cost @ z), iters, "simplex",
                      primal_residual=lp.max_residual(z),
                      dual_residual=dual_res)


def _solve_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    bounds = [(None if not np.isfinite(lo) else lo,
               None if not np.isfinite(hi) else hi)
              for lo, hi in zip(lp.lb, lp.ub)]
    res = linprog(lp.cost,
                  A_ub=lp.A_ub if lp.b_ub.size else None,
                  b_ub=lp.b_ub if lp.b_ub.size else None,
                  A_eq=lp.A_eq if lp.b_eq.size else None,
                  b_eq=lp.b_eq if lp.b_eq.size else None,
                  bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-9,
                           "dual_feasibility_tolerance": 1e-9})
    if res.status == 0:
        z = np.asarray(res.x, dtype=float)
        return LpSolution(OPTIMAL, z, float(lp.cost @ z), int(res.nit), "highs",
                          primal_residual=lp.max_residual(z))
    if res.status == 2:
        return LpSolution(INFEASIBLE, None, np.nan, int(res.nit), "highs")
    if res.status == 3:
        return LpSolution(UNBOUNDED, None, np.nan, int(res.nit), "highs")
    raise LpNumericalError(f"HiGHS failed: {res.message}")


def _tableau_size(lp: LinearProgram) -> int:
    n_free = int(np.sum(~np.isfinite(lp.lb) & ~np.isfinite(lp.ub)))
    n_box = int(np.sum(np.isfinite(lp.lb) & np.isfinite(lp.ub)))
    m = lp.b_eq.size + lp.b_ub.size + n_box
    N = lp.n_vars + n_free + lp.b_ub.size + n_box
    return m * N


def solve(lp: LinearProgram, method: str = "simplex",
          max_iter: Optional[int] = None) -> LpSolution:
    """Solve ``lp`` and certify the returned status.

    Parameters
    ----------
    lp : LinearProgram
    method : {"simplex", "highs", "auto"}
        ``"auto"`` uses the dense simplex unless the standard-form tableau
        would exceed :data:`AUTO_SIMPLEX_LIMIT` entries, and retries with
        HiGHS when the simplex cannot certify a status.
    max_iter : int, optional
        Pivot limit for the simplex.

    Raises
    ------
    LpNumericalError
        If no status can be certified, or an "optimal" point violates the
        constraints by more than 1e-7.
    """
    if method == "auto":
        if _tableau_size(lp) > AUTO_SIMPLEX_LIMIT:
            return solve(lp, "highs", max_iter)
        try:
            return solve(lp, "simplex", max_iter)
        except LpNumericalError:
            return solve(lp, "highs", max_iter)
    if method == "simplex":
        sol = _solve_simplex(lp, max_iter)
    elif method == "highs":
        sol = _solve_highs(lp)
    else:
        raise ValueError(f"unknown LP method {method!r}")
    if sol.optimal and sol.primal_residual > _FEAS_TOL:
        z = _polish(lp, sol.z)
        res = lp.max_residual(z)
        if res > _FEAS_TOL:
            raise LpNumericalError(
                f"{sol.method} returned a point violating constraints by {res:.3g}")
        sol.z, sol.primal_residual = z, res
        sol.objective = float(lp.cost @ z)
    return sol


def _polish(lp: LinearProgram, z: np.ndarray) -> np.ndarray:
    """Clip to bounds and remove equality drift by a least-squares correction."""
    z = np.clip(z, lp.lb, lp.ub)
    if lp.b_eq.size:
        r = lp.b_eq - lp.A_eq @ z
        dz, *_ = np.linalg.lstsq(lp.A_eq, r, rcond=None)
        z = np.clip(z + dz, lp.lb, lp.ub)
    return z


# --------------------------------------------------------------------------
# building programs block-wise
# --------------------------------------------------------------------------

Expr = Tuple[Dict[str, np.ndarray], np.ndarray]
"""An affine expression: ({block name: coefficient matrix}, constant)."""


class LpBuilder:
    """Assemble a :class:`LinearProgram` from named variable blocks.

    Constraint rows are given as ``{block: coefficients}`` dictionaries, where
    each coefficient array has shape ``(rows, block size)``.

    >>> b = LpBuilder()
    >>> x = b.add_variables("x", 1, lb=3.0)
    >>> b.add_cost({"x": [1.0]})
    >>> sol = b.solve()
    >>> round(float(b.value(sol, "x")[0]), 6)
    3.0
    """

    def __init__(self):
        self.blocks: Dict[str, slice] = {}
        self._lb: List[np.ndarray] = []
        self._ub: List[np.ndarray] = []
        self._n = 0
        self._eq: List[Tuple[Dict[str, np.ndarray], np.ndarray]] = []
        self._ub_rows: List[Tuple[Dict[str, np.ndarray], np.ndarray]] = []
        self._cost: Dict[str, np.ndarray] = {}
        self.cost_constant = 0.0

    @property
    def n_vars(self) -> int:
        return self._n

    def add_variables(self, name: str, size: int, lb=-np.inf, ub=np.inf) -> slice:
        if name in self.blocks:
            raise ValueError(f"duplicate variable block {name!r}")
        s = slice(self._n, self._n + size)
        self.blocks[name] = s
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (size,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (size,)).copy())
        self._n += size
        return s

    def _dense(self, coeffs: Dict[str, np.ndarray], rows: int) -> np.ndarray:
        M = np.zeros((rows, self._n))
        for name, C in coeffs.items():
            C = np.asarray(C, dtype=float).reshape(rows, -1)
            M[:, self.blocks[name]] += C
        return M

    def add_eq(self, coeffs: Dict[str, np.ndarray], rhs) -> None:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._eq.append((coeffs, rhs))

    def add_le(self, coeffs: Dict[str, np.ndarray], rhs) -> None:
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        self._ub_rows.append((coeffs, rhs))

    def add_ge(self, coeffs: Dict[str, np.ndarray], rhs) -> None:
        neg = {k: -np.asarray(v, dtype=float) for k, v in coeffs.items()}
        self.add_le(neg, -np.atleast_1d(np.asarray(rhs, dtype=float)))

    def add_cost(self, coeffs: Dict[str, np.ndarray], constant: float = 0.0) -> None:
        for name, c in coeffs.items():
            c = np.asarray(c, dtype=float).ravel()
            self._cost[name] = self._cost.get(name, 0.0) + c
        self.cost_constant += constant

    def build(self) -> LinearProgram:
        cost = np.zeros(self._n)
        for name, c in self._cost.items():
            cost[self.blocks[name]] += c
        def stack(items):
            if not items:
                return np.zeros((0, self._n)), np.zeros(0)
            mats = [self._dense(c, r.size) for c, r in items]
            return np.vstack(mats), np.concatenate([r for _, r in items])
        A_eq, b_eq = stack(self._eq)
        A_ub, b_ub = stack(self._ub_rows)
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        return LinearProgram(cost, A_eq, b_eq, A_ub, b_ub, lb, ub)

    def solve(self, method: str = "simplex") -> LpSolution:
        return solve(self.build(), method=method)

    def value(self, sol: LpSolution, name: str) -> np.ndarray:
        return np.asarray(sol.z[self.blocks[name]])

    def unpack(self, sol: LpSolution) -> Dict[str, np.ndarray]:
        return {name: np.asarray(sol.z[s]) for name, s in self.blocks.items()}


def l1_epigraph(builder: LpBuilder, rows: Sequence[Expr], name: str = "t") -> Dict[str, np.ndarray]:
    """Add ``t_r >= |row_r|`` for each affine row and return ``sum t`` as a cost term.

    ``rows`` is a sequence of affine expressions ``(coeffs, const)``, each
    possibly multi-row.  The returned dictionary can be passed straight to
    :meth:`LpBuilder.add_cost` (after scaling, if a weight is wanted).
    """
    sizes = [np.atleast_1d(const).size for _, const in rows]
    total = int(sum(sizes))
    if total == 0:
        return {}
    builder.add_variables(name, total, lb=0.0)
    start = 0
    for (coeffs, const), k in zip(rows, sizes):
        const = np.atleast_1d(np.asarray(const, dtype=float))
        sel = np.zeros((k, total))
        sel[np.arange(k), start + np.arange(k)] = 1.0
        # row - t <= -const  and  -row - t <= const
        builder.add_le({**coeffs, name: -sel}, -const)
        builder.add_le({**{b: -np.asarray(c, float) for b, c in coeffs.items()},
                        name: -sel}, const)
        start += k
    return {name: np.ones(total)}


def write_lp_format(lp: LinearProgram, path, names: Optional[Iterable[str]] = None) -> None:
    """Dump ``lp`` in CPLEX LP text format for cross-checking elsewhere."""
    names = list(names) if names is not None else [f"z{i}" for i in range(lp.n_vars)]

    def expr(row):
        terms = [f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[i]}"
                 for i, v in enumerate(row) if v != 0.0]
        return " ".join(terms) if terms else "0 " + names[0]

    lines = ["Minimize", " obj: " + expr(lp.cost), "Subject To"]
    for k, (row, rhs) in enumerate(zip(lp.A_eq, lp.b_eq)):
        lines.append(f" e{k}: {expr(row)} = {rhs:.17g}")
    for k, (row, rhs) in enumerate(zip(lp.A_ub, lp.b_ub)):
        lines.append(f" u{k}: {expr(row)} <= {rhs:.17g}")
    lines.append("Bounds")
    for i, (lo, hi) in enumerate(zip(lp.lb, lp.ub)):
        lo_s = "-inf" if not np.isfinite(lo) else f"{lo:.17g}"
        hi_s = "+inf" if not np.isfinite(hi) else f"{hi:.17g}"
        lines.append(f" {lo_s} <= {names[i]} <= {hi_s}")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
