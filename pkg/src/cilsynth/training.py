"""
Projected subgradient training of the pairwise classifiers.

Each outer iteration takes a subgradient step on the hinge loss of every
pair, then projects the constrained pairs back onto the certifiable set with
:func:`cilsynth.projection.project`.  Unconstrained pairs are plain
subgradient SVMs.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import warnings
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from .classifier import (PAIRS, BinaryData, ClassifierBank, Dataset, LinearClassifier,
                         hinge_loss, hinge_subgradient)
from .projection import AcsConfig, ParametricProblem, ProjectionResult, project

log = logging.getLogger(__name__)

#: gradient of an extra control-oriented loss term, ``w -> dl/dw``
ControlGradient = Callable[[str, np.ndarray], np.ndarray]


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Outer-loop settings.

    The learning rate is ``alpha_k = alpha_scale / (k + alpha_offset)``.
    ``project_every`` projects on iterations ``k`` with ``(k + 1) %
    project_every == 0`` and always on the last one.
    """

    iterations: int = 200
    gamma: float = 100.0
    alpha_scale: float = 1.0
    alpha_offset: float = 10.0
    constrained: Mapping[str, bool] = dataclasses.field(
        default_factory=lambda: {"12": False, "13": False, "23": False})
    seed: int = 0
    init_scale: float = 0.0
    project_every: int = 1
    acs: AcsConfig = AcsConfig()

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.alpha_scale <= 0 or self.alpha_offset <= 0:
            raise ValueError("the learning rate must stay positive")
        if self.project_every < 1:
            raise ValueError("project_every must be at least 1")
        unknown = set(self.constrained) - set(PAIRS)
        if unknown:
            raise ValueError(f"unknown classifier pairs {sorted(unknown)}")

    def alpha(self, k: int) -> float:
        return self.alpha_scale / (k + self.alpha_offset)

    def is_constrained(self, pair: str) -> bool:
        return bool(self.constrained.get(pair, False))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["constrained"] = dict(self.constrained)
        return d


def gradient_step(w_k, data: BinaryData, config: TrainConfig, k: int = 0,
                  control_grad: Optional[np.ndarray] = None) -> np.ndarray:
    """``w_k - alpha_k * (subgradient of the hinge loss + control gradient)``."""
    w_k = np.asarray(w_k, dtype=float)
    if not np.all(np.isfinite(w_k)):
        raise ValueError("weights must be finite")
    g = hinge_subgradient(w_k, data, config.gamma)
    if control_grad is not None:
        g = g + np.asarray(control_grad, dtype=float)
    return w_k - config.alpha(k) * g


@dataclasses.dataclass
class TrainTrace:
    """One row per (outer iteration, pair)."""

    rows: List[dict] = dataclasses.field(default_factory=list)

    def record(self, k, pair, loss, projected, success, w, slack):
        self.rows.append({"iter": int(k), "pair": pair, "hinge_loss": float(loss),
                          "projected": bool(projected), "success": bool(success),
                          "w_norm": float(np.linalg.norm(w)), "slack_l1": float(slack)})

    def column(self, pair: str, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows if r["pair"] == pair])

    def to_csv(self, path) -> None:
        keys = ["iter", "pair", "hinge_loss", "projected", "success", "w_norm", "slack_l1"]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(keys)
            for r in self.rows:
                wr.writerow([r["iter"], r["pair"], f"{r['hinge_loss']:.17g}", int(r["projected"]),
                             int(r["success"]), f"{r['w_norm']:.17g}", f"{r['slack_l1']:.17g}"])


@dataclasses.dataclass
class TrainResult:
    bank: ClassifierBank
    trace: TrainTrace
    projections: Dict[str, ProjectionResult]
    warnings: List[str]


def pgd_train(data: Dataset, config: TrainConfig,
              problems: Optional[Mapping[str, ParametricProblem]] = None,
              init: Optional[ClassifierBank] = None,
              control_grad: Optional[ControlGradient] = None) -> TrainResult:
    """Projected subgradient descent over every pair present in ``data``.

    Parameters
    ----------
    data : Dataset
        Training records; each pair uses the records carrying its two labels.
    config : TrainConfig
        Schedule, hinge weight and which pairs are constrained.
    problems : mapping, optional
        Projection problem per constrained pair.
    init : ClassifierBank, optional
        Starting weights; otherwise zeros plus ``init_scale`` Gaussian noise.
    control_grad : callable, optional
        Gradient of an additional loss term; none by default.

    Returns
    -------
    TrainResult
        Final bank (constrained pairs carry the witness of their last
        successful projection), trace, last projection per pair and warnings.
    """
    problems = dict(problems or {})
    rng = np.random.default_rng(config.seed)
    pairs = [p for p in PAIRS if len(data.binary(p))]
    for p in pairs:
        if config.is_constrained(p) and p not in problems:
            raise ValueError(f"pair {p} is constrained but has no projection problem")
    w: Dict[str, np.ndarray] = {}
    for p in pairs:
        if init is not None and p in init.pairs:
            w[p] = init.pairs[p].as_vector().copy()
        else:
            w[p] = config.init_scale * rng.standard_normal(data.m + 1)
    trace = TrainTrace()
    last: Dict[str, ProjectionResult] = {}
    notes: List[str] = []
    K = config.iterations
    for k in range(K):
        project_now = (k + 1) % config.project_every == 0 or k == K - 1
        for p in pairs:
            bd = data.binary(p)
            cg = control_grad(p, w[p]) if control_grad is not None else None
            w_next = gradient_step(w[p], bd, config, k, cg)
            projected, success, slack = False, False, 0.0
            if config.is_constrained(p) and project_now:
                res = project(w_next, config.acs, problems[p])
                last[p] = res
                w_next = res.w
                projected, success, slack = True, res.success, res.slack_l1
            w[p] = w_next
            trace.record(k, p, hinge_loss(w[p], bd, config.gamma), projected, success, w[p], slack)
    bank_pairs, witnesses = {}, {}
    for p in pairs:
        bank_pairs[p] = LinearClassifier.from_vector(w[p])
        if p in last:
            res = last[p]
            if res.success:
                witnesses[p] = {"witness": res.witness.to_dict(), "lyap": res.lyap.to_dict(),
                                "system": res.system.to_dict(),
                                "index_sets": problems[p].index_sets().to_dict()}
            else:
                msg = f"projection of pair {p} ended with slack {res.slack_l1:.3g}"
                notes.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
    if init is not None:
        for p, clf in init.pairs.items():
            bank_pairs.setdefault(p, clf)
    return TrainResult(ClassifierBank(bank_pairs, witnesses), trace, last, notes)
