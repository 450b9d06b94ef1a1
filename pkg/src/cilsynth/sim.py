"""
Simulation: Filippov solutions of piecewise-affine inclusions, the sampled
classifier-in-the-loop plant, and a synthetic corridor range sensor.

The corridor is described in path coordinates.  At a pose ``(psi, d)`` the
sensor casts ``n_rays`` beams spread evenly over the field of view, centered
on the heading, against the two walls at lateral offsets ``+/- half_width``.
With nonzero curvature the walls are concentric circles about the center of
curvature.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .certificate import PolyhedralLyapunov
from .classifier import ClassifierBank, Dataset, predict
from .model import PwaSystem, SingularityError, frenet_dynamics

_EVENT_TOL = 1e-9
_MEMBER_TOL = 1e-7


# --------------------------------------------------------------------------
# corridor and sensor
# --------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class CorridorWorld:
    """Corridor geometry and range-sensor parameters.

    ``curvature`` is a piecewise-constant profile ``[(s_start, rho), ...]``
    sorted by arc length.
    """

    half_width: float = 1.0
    n_rays: int = 420
    fov: float = 4 * np.pi / 3
    max_range: float = 10.0
    noise_std: float = 0.0
    curvature: Tuple[Tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.n_rays < 1:
            raise ValueError("need at least one ray")
        object.__setattr__(self, "curvature", tuple((float(s), float(r)) for s, r in self.curvature))

    def rho_at(self, s: float) -> float:
        rho = self.curvature[0][1]
        for start, r in self.curvature:
            if s >= start:
                rho = r
        return rho

    def ray_offsets(self) -> np.ndarray:
        if self.n_rays == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2, self.fov / 2, self.n_rays)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "CorridorWorld":
        d = dict(d)
        if "curvature" in d:
            d["curvature"] = tuple(tuple(x) for x in d["curvature"])
        return cls(**d)


def _wall_distances(world: CorridorWorld, psi: float, d: float, rho: float) -> np.ndarray:
    phi = psi + world.ray_offsets()
    u = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    hw = world.half_width
    if rho == 0.0:
        s = u[:, 1]
        with np.errstate(divide="ignore"):
            left = np.where(s > 0, (hw - d) / s, np.inf)
            right = np.where(s < 0, (hw + d) / -s, np.inf)
        return np.minimum(left, right)
    # walls are circles about (0, 1/rho) with radii |1/rho -/+ hw|
    c = np.array([0.0, 1.0 / rho])
    p = np.array([0.0, d]) - c
    best = np.full(phi.size, np.inf)
    for r in (abs(1.0 / rho - hw), abs(1.0 / rho + hw)):
        bq = u @ p
        disc = bq ** 2 - (p @ p - r ** 2)
        ok = disc >= 0
        root = np.sqrt(np.where(ok, disc, 0.0))
        for t in (-bq - root, -bq + root):
            hit = ok & (t > 1e-12)
            best = np.where(hit & (t < best), t, best)
    return best


def render_scan(world: CorridorWorld, x, rng: Optional[np.random.Generator] = None,
                s: float = 0.0) -> np.ndarray:
    """Range returns at pose ``x = (psi, d)``, clipped to ``max_range``.

    Gaussian noise of ``world.noise_std`` is added (and the result clipped to
    ``[0, max_range]``) when a generator is supplied.
    """
    psi, d = float(x[0]), float(x[1])
    if abs(d) >= world.half_width:
        raise ValueError(f"pose d={d:g} lies outside the corridor")
    ranges = np.minimum(_wall_distances(world, psi, d, world.rho_at(s)), world.max_range)
    if world.noise_std > 0 and rng is not None:
        ranges = np.clip(ranges + rng.normal(0.0, world.noise_std, ranges.size), 0.0, world.max_range)
    return ranges


# --------------------------------------------------------------------------
# dataset
# --------------------------------------------------------------------------

GRID_PSI = (np.pi / 6, 0.0, -np.pi / 6)
GRID_D = (0.5, 0.0, -0.5)

#: labels of the nine grid states, keyed by (psi index, d index) into
#: GRID_PSI and GRID_D; the d = 0 row turns back to psi = 0, the offset rows steer
#: back toward the centerline and drive forward when already heading there
DEFAULT_LABELS = {
    (0, 1): 3, (1, 1): 1, (2, 1): 2,     # d = 0
    (0, 0): 3, (1, 0): 3, (2, 0): 1,     # d = +0.5 (left of the path)
    (0, 2): 1, (1, 2): 2, (2, 2): 2,     # d = -0.5 (right of the path)
}


def grid_states(psi=GRID_PSI, d=GRID_D) -> List[Tuple[float, float]]:
    return [(p, dd) for dd in d for p in psi]


def default_label(psi: float, d: float) -> int:
    i = int(np.argmin(np.abs(np.asarray(GRID_PSI) - psi)))
    j = int(np.argmin(np.abs(np.asarray(GRID_D) - d)))
    return DEFAULT_LABELS[(i, j)]


def generate_dataset(world: CorridorWorld, grid: Sequence[Tuple[float, float, int]],
                     seed: int = 0) -> Dataset:
    """Render one scan per ``(psi, d, label)`` grid entry (straight corridor)."""
    rng = np.random.default_rng(seed)
    straight = dataclasses.replace(world, curvature=((0.0, 0.0),))
    if len(grid) == 0:
        return Dataset(np.zeros((0, 2)), np.zeros((0, world.n_rays)), np.zeros(0, dtype=int))
    X = np.array([[g[0], g[1]] for g in grid], dtype=float)
    Y = np.stack([render_scan(straight, x, rng) for x in X])
    return Dataset(X, Y, np.array([int(g[2]) for g in grid]))


def default_grid(labels: Optional[Dict[Tuple[float, float], int]] = None):
    """Nine grid states with their labels; ``labels`` overrides individual states."""
    out = []
    for psi, d in grid_states():
        lab = default_label(psi, d)
        if labels:
            for (p2, d2), l2 in labels.items():
                if np.isclose(p2, psi) and np.isclose(d2, d):
                    lab = l2
        out.append((psi, d, lab))
    return out


def mislabel(data: Dataset) -> Dataset:
    """Drop the aligned centered record and relabel ``(pi/6, 0.5)`` as label 1."""
    X, Y, L = np.asarray(data.X), np.asarray(data.Y), np.asarray(data.labels).copy()
    centered = np.isclose(X[:, 0], 0.0) & np.isclose(X[:, 1], 0.0) & (L == 1)
    target = np.isclose(X[:, 0], np.pi / 6) & np.isclose(X[:, 1], 0.5)
    L[target] = 1
    keep = ~centered
    return Dataset(X[keep], Y[keep], L[keep])


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------

@dataclasses.dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    modes: np.ndarray            # cell index (PWA) or label (plant) per sample
    events: List[float]
    sliding: Optional[np.ndarray] = None
    vertices: Optional[np.ndarray] = None
    progress: Optional[np.ndarray] = None
    flags: Dict[str, bool] = dataclasses.field(default_factory=dict)

    def __len__(self):
        return self.times.size

    def to_csv(self, path) -> None:
        n = self.states.shape[1] if self.states.ndim == 2 else 0
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + ["mode", "label"])
            for k in range(len(self)):
                lab = int(self.modes[k])
                wr.writerow([f"{self.times[k]:.17g}"] + [f"{v:.17g}" for v in self.states[k]]
                            + [lab, lab])


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


class _PwaStepper:
    def __init__(self, system: PwaSystem, lyap: Optional[PolyhedralLyapunov]):
        self.system = system
        self.lyap = lyap
        self.cells = [c if hasattr(c, "E") else c.as_cell() for c in system.partition.cells]

    def vertex(self, i, x):
        """Vertex index used on cell ``i`` at ``x``: worst case for ``V`` when known."""
        verts = self.system.inclusions[i].vertices
        if self.lyap is None or len(verts) == 1:
            return 0
        cones = [j for j, c in enumerate(self.lyap.cones) if bool(c.contains(x, 1e-9))]
        P = self.lyap.gradients[cones] if cones else self.lyap.gradients
        scores = [float(np.max(P @ v(x))) for v in verts]
        return int(np.argmax(scores))

    def field(self, i, k):
        v = self.system.inclusions[i].vertices[k]
        return lambda x: v.A @ x + v.a

    def inside(self, i, x, tol=_MEMBER_TOL):
        return bool(np.all(self.cells[i].values(x) >= -tol))

    def locate(self, x, tol=_MEMBER_TOL):
        return [i for i in range(len(self.cells)) if self.inside(i, x, tol)]


def _sliding_field(fi, fj, n):
    """Filippov combination ``th fi + (1 - th) fj`` with zero normal component."""
    a, b = n @ fi, n @ fj
    th = b / (b - a)
    return th * fi + (1 - th) * fj, th


def simulate(system, x0, T: float, dt: float, lyap: Optional[PolyhedralLyapunov] = None,
             max_events: int = 10_000) -> Trajectory:
    """Integrate a PWA inclusion or a plant closure from ``x0`` over ``[0, T]``.

    For a :class:`PwaSystem` the solver takes fixed RK4 steps inside a cell,
    locates boundary crossings by bisection to 1e-9 in time, and switches to
    the Filippov sliding field on facets where both neighboring fields point
    at the facet.  With a Lyapunov function ``lyap`` the vertex of a
    multi-vertex inclusion is chosen to maximize ``dV/dt`` (worst case);
    otherwise vertex 0 is used.  Plant closures are delegated to their own
    ``simulate`` method.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if hasattr(system, "simulate"):
        return system.simulate(x0, T, dt)
    st = _PwaStepper(system, lyap)
    x = np.asarray(x0, dtype=float).copy()
    cells = st.locate(x)
    if not cells:
        raise ValueError(f"initial state {x} lies outside the domain")
    i = cells[0]
    if len(cells) > 1:
        # prefer the cell the field points into
        for c in cells:
            f = st.field(c, st.vertex(c, x))(x)
            if st.inside(c, x + 1e-6 * f, 0.0):
                i = c
                break
    t = 0.0
    times, states, modes, slide, verts, events = [t], [x.copy()], [i], [False], [0], []
    flags = {"domain_exit": False, "codim2": False}
    sliding: Optional[Tuple[int, int, np.ndarray]] = None
    if T <= 0:
        return Trajectory(np.array([0.0]), x[None, :], np.array([i]), [], np.array([False]),
                          np.array([0]), None, flags)
    while t < T - 1e-12 and len(events) < max_events:
        h = min(dt, T - t)
        if sliding is None:
            k = st.vertex(i, x)
            f = st.field(i, k)
        else:
            ci, cj, n = sliding
            fi = st.field(ci, st.vertex(ci, x))
            fj = st.field(cj, st.vertex(cj, x))
            k = st.vertex(ci, x)

            def f(z, fi=fi, fj=fj, n=n):
                return _sliding_field(fi(z), fj(z), n)[0]
        x_new = _rk4(f, x, h)
        ok = st.inside(i, x_new) if sliding is None else _sliding_ok(st, sliding, x_new)
        if ok:
            t += h
            x = x_new
        else:
            # bisection on the step length for the first exit; locate the exact
            # boundary unless we start on its tolerance band
            tol = 0.0 if st.inside(i, x, 0.0) else _MEMBER_TOL
            lo, hi = 0.0, h
            while hi - lo > _EVENT_TOL:
                mid = 0.5 * (lo + hi)
                xm = _rk4(f, x, mid)
                inside = st.inside(i, xm, tol) if sliding is None else _sliding_ok(st, sliding, xm)
                lo, hi = (mid, hi) if inside else (lo, mid)
            x = _rk4(f, x, hi)
            t += hi
            events.append(t)
            nxt = _next_mode(st, i, x, sliding)
            if nxt is None:
                flags["domain_exit"] = True
                times.append(t); states.append(x.copy()); modes.append(i)
                slide.append(sliding is not None); verts.append(k)
                break
            if nxt == "codim2":
                flags["codim2"] = True
                times.append(t); states.append(x.copy()); modes.append(i)
                slide.append(sliding is not None); verts.append(k)
                break
            i, sliding = nxt
        times.append(t)
        states.append(x.copy())
        modes.append(i)
        slide.append(sliding is not None)
        verts.append(k)
    return Trajectory(np.array(times), np.array(states), np.array(modes), events,
                      np.array(slide), np.array(verts), None, flags)


def _sliding_ok(st: _PwaStepper, sliding, x) -> bool:
    ci, cj, n = sliding
    if not (st.inside(ci, x, 1e-6) and st.inside(cj, x, 1e-6)):
        return False
    fi = st.field(ci, st.vertex(ci, x))(x)
    fj = st.field(cj, st.vertex(cj, x))(x)
    # n points out of ci into cj; sliding needs fi . n >= 0 and fj . n <= 0
    return (n @ fi) >= 0 and (n @ fj) <= 0 and (n @ fi - n @ fj) > 1e-14


def _facet_normal(st: _PwaStepper, i: int, x) -> Optional[np.ndarray]:
    vals = st.cells[i].values(x)
    scale = 1.0 + np.abs(st.cells[i].E).sum(axis=1)
    active = np.flatnonzero(np.abs(vals) <= 1e-7 * scale)
    if active.size == 0:
        return None
    normals = -st.cells[i].E[active]
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    # parallel duplicates describe the same facet
    base = normals[0]
    if np.all(np.abs(normals @ base - 1.0) <= 1e-9):
        return base
    return None


def _next_mode(st: _PwaStepper, i: int, x, sliding):
    """Mode after an event at ``x``: ``(cell, sliding record)``, ``None`` or ``"codim2"``."""
    if sliding is not None:
        ci, cj, n = sliding
        fi = st.field(ci, st.vertex(ci, x))(x)
        fj = st.field(cj, st.vertex(cj, x))(x)
        if n @ fi < 0 and st.inside(ci, x):
            return ci, None
        if n @ fj > 0 and st.inside(cj, x):
            return cj, None
        if not (st.inside(ci, x, 1e-6) and st.inside(cj, x, 1e-6)):
            return None
        return "codim2"
    n = _facet_normal(st, i, x)
    nbrs = [c for c in st.locate(x) if c != i]
    if not nbrs:
        return None
    if n is None:
        # corner of cell i; move on to any neighbor whose field keeps us inside it
        for c in nbrs:
            f = st.field(c, st.vertex(c, x))(x)
            if st.inside(c, x + 1e-7 * f, 1e-9):
                return c, None
        return "codim2"
    candidates = []
    for c in nbrs:
        fc = st.field(c, st.vertex(c, x))(x)
        candidates.append((c, fc))
    for c, fc in candidates:
        if n @ fc > 0:
            return c, None
    # every neighbor pushes back: slide along the facet
    c, _ = candidates[0]
    fi = st.field(i, st.vertex(i, x))(x)
    if n @ fi > 0:
        return i, (i, c, n)
    return "codim2"


# --------------------------------------------------------------------------
# plant closure
# --------------------------------------------------------------------------

@dataclasses.dataclass
class ClosedLoopPlant:
    """Scan, classify, act: the nonlinear classifier-in-the-loop system.

    The label is held constant over each step of length ``dt`` (a sampled
    controller); the Frenet dynamics are integrated with RK4 substeps.
    """

    bank: ClassifierBank
    world: CorridorWorld
    v_star: float = 0.5
    omega_star: float = 0.15
    substeps: int = 4
    seed: int = 0

    def label(self, x, rng=None, s: float = 0.0) -> int:
        return int(predict(self.bank, render_scan(self.world, x, rng, s)))

    def simulate(self, x0, T: float, dt: float) -> Trajectory:
        rng = np.random.default_rng(self.seed)
        x = np.asarray(x0, dtype=float).copy()
        s = 0.0
        t = 0.0
        times, states, labels, prog, events = [], [], [], [], []
        flags = {"crash": False, "singular": False}
        last = None
        n_steps = int(np.ceil(T / dt - 1e-9)) if T > 0 else 0
        for step in range(n_steps + 1):
            if abs(x[1]) >= self.world.half_width:
                flags["crash"] = True
                times.append(t); states.append(x.copy()); labels.append(last or 0); prog.append(s)
                break
            u = self.label(x, rng, s)
            if last is not None and u != last:
                events.append(t)
            last = u
            times.append(t); states.append(x.copy()); labels.append(u); prog.append(s)
            if step == n_steps:
                break
            h = min(dt, T - t) / self.substeps
            rho = self.world.rho_at(s)
            try:
                for _ in range(self.substeps):
                    def f(z):
                        dz = frenet_dynamics(z[:2], u, rho, self.v_star, self.omega_star)
                        ds = (self.v_star * np.cos(z[0]) / (1 - rho * z[1])) if u == 1 else 0.0
                        return np.append(dz, ds)
                    z = _rk4(f, np.append(x, s), h)
                    x, s = z[:2], z[2]
            except SingularityError:
                flags["singular"] = True
                break
            t += min(dt, T - t)
        return Trajectory(np.array(times), np.array(states).reshape(-1, 2), np.array(labels),
                          events, None, None, np.array(prog), flags)


def closed_loop_plant(bank: ClassifierBank, world: CorridorWorld, v_star: float = 0.5,
                      omega_star: float = 0.15, seed: int = 0) -> ClosedLoopPlant:
    if not bank.complete:
        raise ValueError("the closed loop needs all three pairwise classifiers")
    return ClosedLoopPlant(bank, world, v_star, omega_star, seed=seed)


# --------------------------------------------------------------------------
# trajectory metrics
# --------------------------------------------------------------------------

def distance_to_segment(x, a, b) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    ab = b - a
    t = np.clip(((x - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(x - (a + t[:, None] * ab), axis=1)


def convergence_summary(traj: Trajectory, a, b, radius: float = 0.1,
                        half_width: float = 1.0) -> dict:
    """Entry time into (and stay within) ``radius`` of segment ``[a, b]``, plus loop statistics."""
    dist = distance_to_segment(traj.states, a, b)
    outside = np.flatnonzero(dist > radius)
    if outside.size == 0:
        entry = float(traj.times[0])
    elif outside[-1] == len(dist) - 1:
        entry = None
    else:
        entry = float(traj.times[outside[-1] + 1])
    crash = bool(traj.flags.get("crash", False) or np.any(np.abs(traj.states[:, 1]) >= half_width))
    progress = float(traj.progress[-1] - traj.progress[0]) if traj.progress is not None and len(traj) else 0.0
    switches = len(traj.events)
    return {"converged": entry is not None and not crash, "entry_time": entry,
            "final_distance": float(dist[-1]), "crash": crash, "switches": switches,
            "progress": progress, "oscillation": switches >= 20 and progress < 0.5}
