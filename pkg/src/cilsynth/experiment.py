"""
Configuration and stages of the corridor path-following experiment.

A single JSON document configures every stage.  Any leaf can be overridden
from the environment with ``CILSYNTH_<SECTION>_<KEY>`` (values are parsed as
JSON when possible, e.g. ``CILSYNTH_TRAIN_ITERATIONS=50``).
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
import time
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from . import classifier, model, projection, sim, training
from .certificate import PolyhedralLyapunov, level_set_bounds
from .geometry import box_cell

__version__ = "0.1.0"

#: every section and its defaults
DEFAULTS = {
    "world": {"half_width": 1.0, "n_rays": 420, "fov": float(4 * np.pi / 3),
              "max_range": 10.0, "noise_std": 0.0, "curvature": [[0.0, 0.0]]},
    "plant": {"v_star": 0.5, "omega_star": 0.15},
    "grid": {"mislabel": False, "labels": []},
    "map": {"degree": 2},
    "train": {"iterations": 200, "gamma": 100.0, "alpha_scale": 1e-3, "alpha_offset": 10.0,
              "project_every": 10, "init_scale": 0.0},
    "acs": {"epsilon": 1e-5, "beta": 1e-3, "max_iters": 100, "slack_tol": 1e-6,
            "restarts": 16, "method": "auto"},
    "constraints": {
        "n_sectors": 16,
        "box_half": [float(np.pi / 6), 0.25],
        "pairs": {
            "13": {"equilibrium": [0.0, 0.25], "rho": [1.0, 1.0], "minus_label": 3},
            "12": {"equilibrium": [0.0, -0.25], "rho": [-1.0, -1.0], "minus_label": 2},
        },
    },
    "simulate": {"n_starts": 10, "T": 60.0, "dt": 0.05, "radius": 0.1,
                 "psi_range": float(np.pi / 6), "d_range": 0.5},
    "seed": 0,
    "output_dir": "casestudy_out",
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown configuration key {k!r}")
        if isinstance(out[k], dict) and k != "pairs" and isinstance(v, Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_env(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_env(cfg: dict, environ: Optional[Mapping[str, str]] = None) -> dict:
    """Apply ``CILSYNTH_<SECTION>_<KEY>`` overrides (keys are lower-cased)."""
    environ = os.environ if environ is None else environ
    cfg = copy.deepcopy(cfg)
    for name, value in sorted(environ.items()):
        if not name.startswith("CILSYNTH_"):
            continue
        rest = name[len("CILSYNTH_"):].lower()
        if rest in cfg and not isinstance(cfg[rest], dict):
            cfg[rest] = _parse_env(value)
            continue
        for section in sorted(cfg, key=len, reverse=True):
            if isinstance(cfg[section], dict) and rest.startswith(section + "_"):
                key = rest[len(section) + 1:]
                if key not in cfg[section]:
                    raise ConfigError(f"{name}: section {section!r} has no key {key!r}")
                cfg[section][key] = _parse_env(value)
                break
        else:
            raise ConfigError(f"{name} does not name a configuration entry")
    return cfg


def load_config(path=None, environ=None) -> dict:
    """Defaults, then the JSON file at ``path`` (if any), then the environment."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        cfg = _merge(cfg, user)
    cfg = apply_env(cfg, environ)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        world(cfg)
        train_config(cfg, {})
        acs_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(cfg.get("seed"), int):
        raise ConfigError("seed must be an integer")
    sim_cfg = cfg["simulate"]
    if sim_cfg["dt"] <= 0 or sim_cfg["T"] < 0 or sim_cfg["n_starts"] < 0:
        raise ConfigError("simulate needs dt > 0, T >= 0 and n_starts >= 0")
    for pair, spec in cfg["constraints"]["pairs"].items():
        if pair not in classifier.PAIRS or "1" not in pair:
            raise ConfigError(f"constrained pair {pair!r} must separate label 1 from another label")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# --------------------------------------------------------------------------
# stage builders
# --------------------------------------------------------------------------

def world(cfg: dict) -> sim.CorridorWorld:
    return sim.CorridorWorld.from_dict(cfg["world"])


def dataset(cfg: dict, mislabel: Optional[bool] = None) -> classifier.Dataset:
    overrides = {(float(p), float(d)): int(l) for p, d, l in cfg["grid"]["labels"]}
    data = sim.generate_dataset(world(cfg), sim.default_grid(overrides or None), seed=cfg["seed"])
    if cfg["grid"]["mislabel"] if mislabel is None else mislabel:
        data = sim.mislabel(data)
    return data


def measurement_map(cfg: dict, data: classifier.Dataset) -> classifier.MeasurementMap:
    return classifier.fit_measurement_map(data, int(cfg["map"]["degree"]))


def acs_config(cfg: dict) -> projection.AcsConfig:
    return projection.AcsConfig(**cfg["acs"])


def train_config(cfg: dict, constrained: Mapping[str, bool]) -> training.TrainConfig:
    return training.TrainConfig(constrained=dict(constrained), seed=cfg["seed"],
                                acs=acs_config(cfg), **cfg["train"])


def projection_problems(cfg: dict, mmap: classifier.MeasurementMap
                        ) -> Dict[str, projection.ParametricProblem]:
    """One sector problem per constrained pair, linearized at its equilibrium."""
    plant = cfg["plant"]
    cons = cfg["constraints"]
    half = np.asarray(cons["box_half"], dtype=float)
    out = {}
    for pair, spec in cons["pairs"].items():
        xe = np.asarray(spec["equilibrium"], dtype=float)
        incs = model.build_unicycle_inclusions(plant["v_star"], plant["omega_star"], spec["rho"])
        H, h = mmap.linearize(xe)
        other = int(spec["minus_label"])
        out[pair] = projection.sector_problem(
            H, h, xe, plus=incs[0], minus=incs[other - 1], box_lo=xe - half, box_hi=xe + half,
            n_sectors=int(cons["n_sectors"]),
            metadata={"pair": pair, "equilibrium": xe.tolist(), "rho": list(spec["rho"])})
    return out


def interior_starts(cfg: dict) -> np.ndarray:
    """Seeded uniform starts inside the training-grid rectangle."""
    s = cfg["simulate"]
    rng = np.random.default_rng(cfg["seed"] + 1)
    n = int(s["n_starts"])
    return np.column_stack([rng.uniform(-s["psi_range"], s["psi_range"], n),
                            rng.uniform(-s["d_range"], s["d_range"], n)])


def equilibrium_segment(cfg: dict) -> Tuple[np.ndarray, np.ndarray]:
    pts = [np.asarray(p["equilibrium"], dtype=float) for p in cfg["constraints"]["pairs"].values()]
    if not pts:
        return np.zeros(2), np.zeros(2)
    return pts[0], pts[-1]


def train(cfg: dict, data: classifier.Dataset, constrained: bool,
          mmap: Optional[classifier.MeasurementMap] = None) -> training.TrainResult:
    """Unconstrained SVMs, or projected training of every configured pair."""
    pairs = cfg["constraints"]["pairs"] if constrained else {}
    problems = projection_problems(cfg, mmap) if pairs else {}
    return training.pgd_train(data, train_config(cfg, {p: True for p in pairs}), problems)


def simulate_bank(cfg: dict, bank: classifier.ClassifierBank, starts=None,
                  T: Optional[float] = None) -> List[Tuple[sim.Trajectory, dict]]:
    s = cfg["simulate"]
    plant = sim.closed_loop_plant(bank, world(cfg), cfg["plant"]["v_star"],
                                  cfg["plant"]["omega_star"], seed=cfg["seed"])
    a, b = equilibrium_segment(cfg)
    starts = interior_starts(cfg) if starts is None else np.atleast_2d(starts)
    T = s["T"] if T is None else T
    out = []
    for x0 in starts:
        traj = plant.simulate(x0, T, s["dt"])
        summary = sim.convergence_summary(traj, a, b, s["radius"], cfg["world"]["half_width"])
        summary["x0"] = [float(v) for v in x0]
        out.append((traj, summary))
    return out


def lyapunov_starts(lyap: PolyhedralLyapunov, box_lo, box_hi, n: int, rng) -> np.ndarray:
    """Points drawn uniformly from the box and kept when inside the S_max level set."""
    s_max, _ = level_set_bounds(lyap, box_cell(box_lo, box_hi))
    pts = []
    for _ in range(1000):
        x = rng.uniform(box_lo, box_hi)
        if lyap.value(x) <= s_max:
            pts.append(x)
            if len(pts) == n:
                break
    return np.array(pts)


# --------------------------------------------------------------------------
# manifest
# --------------------------------------------------------------------------

@dataclasses.dataclass
class RunManifest:
    config_hash: str
    version: str = __version__
    stages: Dict[str, dict] = dataclasses.field(default_factory=dict)
    parameters: dict = dataclasses.field(default_factory=dict)
    warnings: List[str] = dataclasses.field(default_factory=list)

    def stage(self, name: str, files: List[str], seconds: float, **extra) -> None:
        self.stages[name] = {"files": list(files), "seconds": float(seconds), **extra}

    def to_dict(self):
        return dataclasses.asdict(self)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0
        return False
