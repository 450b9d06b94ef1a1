"""
Command-line runner for the corridor experiment.

Subcommands: ``generate``, ``fit-map``, ``train``, ``verify``, ``simulate``
and ``casestudy``.  Exit codes: 0 success, 1 verification failure, 2
configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from typing import List, Optional

import numpy as np

from . import experiment as ex
from .certificate import CertificateWitness, PolyhedralLyapunov, verify_certificate
from .classifier import ClassifierBank, Dataset, MeasurementMap
from .geometry import IndexSets
from .lpcore import LpNumericalError
from .model import PwaSystem, SingularityError

log = logging.getLogger("cilsynth")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _dump(obj, path) -> None:
    """JSON with 17 significant digits for every float."""
    def fix(o):
        if isinstance(o, float):
            return float(f"{o:.17g}")
        if isinstance(o, dict):
            return {str(k): fix(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [fix(v) for v in o]
        if isinstance(o, np.generic):
            return fix(o.item())
        if isinstance(o, np.ndarray):
            return fix(o.tolist())
        return o
    with open(path, "w") as fh:
        json.dump(fix(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _outdir(args, cfg) -> str:
    out = args.out or cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _manifest(out: str, cfg: dict) -> ex.RunManifest:
    path = os.path.join(out, "manifest.json")
    man = ex.RunManifest(ex.config_hash(cfg))
    if os.path.exists(path):
        old = _load_json(path)
        if old.get("config_hash") == man.config_hash:
            man.stages = old.get("stages", {})
            man.warnings = old.get("warnings", [])
    man.parameters = {"v_star": cfg["plant"]["v_star"], "omega_star": cfg["plant"]["omega_star"],
                      "gamma": cfg["train"]["gamma"], "beta": cfg["acs"]["beta"],
                      "n_sectors": cfg["constraints"]["n_sectors"],
                      "n_rays": cfg["world"]["n_rays"], "seed": cfg["seed"]}
    return man


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(args, cfg) -> int:
    out = _outdir(args, cfg)
    man = _manifest(out, cfg)
    with ex.Stopwatch() as sw:
        data = ex.dataset(cfg, mislabel=args.mislabel or None)
        name = "dataset_mislabeled.csv" if (args.mislabel or cfg["grid"]["mislabel"]) else "dataset.csv"
        data.to_csv(os.path.join(out, name))
        _dump(cfg["world"], os.path.join(out, "world.json"))
    man.stage("generate", [name, "world.json"], sw.seconds, records=len(data))
    man.write(os.path.join(out, "manifest.json"))
    print(os.path.join(out, name))
    return EXIT_OK


def cmd_fit_map(args, cfg) -> int:
    out = _outdir(args, cfg)
    man = _manifest(out, cfg)
    data = Dataset.from_csv(args.data)
    with ex.Stopwatch() as sw:
        mmap = ex.measurement_map(cfg, data)
        _dump(mmap.to_dict(), os.path.join(out, "map.json"))
    man.stage("fit-map", ["map.json"], sw.seconds, residual_rms=mmap.residual_rms)
    man.write(os.path.join(out, "manifest.json"))
    print(f"residual_rms {mmap.residual_rms:.17g}")
    return EXIT_OK


def _write_training(out: str, tag: str, res) -> List[str]:
    files = [f"bank_{tag}.json", f"train_trace_{tag}.csv"]
    _dump(res.bank.to_dict(), os.path.join(out, files[0]))
    res.trace.to_csv(os.path.join(out, files[1]))
    systems = {}
    for pair, pres in sorted(res.projections.items()):
        name = f"acs_trace_{tag}_{pair}.csv"
        pres.trace.to_csv(os.path.join(out, name))
        files.append(name)
        systems[pair] = pres.system.to_dict()
    if systems:
        _dump(systems, os.path.join(out, f"systems_{tag}.json"))
        files.append(f"systems_{tag}.json")
    return files


def cmd_train(args, cfg) -> int:
    out = _outdir(args, cfg)
    man = _manifest(out, cfg)
    data = Dataset.from_csv(args.data)
    mmap = None
    if args.constrained:
        mmap = MeasurementMap.from_dict(_load_json(args.map)) if args.map else ex.measurement_map(cfg, data)
    tag = args.tag or ("constrained" if args.constrained else "unconstrained")
    with ex.Stopwatch() as sw, warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = ex.train(cfg, data, args.constrained, mmap)
        files = _write_training(out, tag, res)
    man.stage(f"train-{tag}", files, sw.seconds,
              projections={p: bool(r.success) for p, r in res.projections.items()})
    man.warnings.extend(res.warnings)
    man.write(os.path.join(out, "manifest.json"))
    for w in res.warnings:
        print(f"warning: {w}")
    print(os.path.join(out, files[0]))
    return EXIT_OK


def verify_bank(bank: ClassifierBank, systems: Optional[dict] = None) -> dict:
    """Per-pair verification report of every embedded witness."""
    report = {"pairs": {}, "ok": True}
    if not bank.witnesses:
        report["note"] = "nothing to verify"
        return report
    for pair, blob in sorted(bank.witnesses.items()):
        sys_d = (systems or {}).get(pair, blob["system"])
        system = PwaSystem.from_dict(sys_d)
        lyap = PolyhedralLyapunov.from_dict(blob["lyap"])
        wit = CertificateWitness.from_dict(blob["witness"])
        isets = IndexSets.from_dict(blob["index_sets"])
        rep = verify_certificate(system, lyap, wit, isets)
        entry = rep.to_dict()
        report["pairs"][pair] = entry
        report["ok"] = report["ok"] and rep.feasible
    return report


def cmd_verify(args, cfg) -> int:
    bank = ClassifierBank.from_dict(_load_json(args.bank))
    systems = _load_json(args.system) if args.system else None
    report = verify_bank(bank, systems)
    if args.report:
        _dump(report, args.report)
    print(json.dumps({"ok": report["ok"], "note": report.get("note", ""),
                      "failed": {p: r["violations"] for p, r in report["pairs"].items()
                                 if not r["feasible"]}}))
    return EXIT_OK if report["ok"] else EXIT_VERIFY


def _parse_x0(items) -> Optional[np.ndarray]:
    if not items:
        return None
    try:
        return np.array([[float(v) for v in s.split(",")] for s in items])
    except ValueError as exc:
        raise ex.ConfigError(f"bad --x0 value: {exc}") from exc


def simulate_to_dir(cfg, bank, out: str, tag: str, starts=None, T=None) -> dict:
    runs = ex.simulate_bank(cfg, bank, starts, T)
    files, summaries = [], []
    for k, (traj, summary) in enumerate(runs):
        name = f"traj_{tag}_{k:02d}.csv"
        traj.to_csv(os.path.join(out, name))
        files.append(name)
        summaries.append(summary)
    agg = {"runs": summaries,
           "converged": sum(s["converged"] for s in summaries),
           "crash": sum(s["crash"] for s in summaries),
           "oscillation": sum(s["oscillation"] for s in summaries),
           "crash_or_oscillation": sum(s["crash"] or s["oscillation"] for s in summaries),
           "n": len(summaries)}
    _dump(agg, os.path.join(out, f"summary_{tag}.json"))
    files.append(f"summary_{tag}.json")
    agg["files"] = files
    return agg


def cmd_simulate(args, cfg) -> int:
    out = _outdir(args, cfg)
    man = _manifest(out, cfg)
    bank = ClassifierBank.from_dict(_load_json(args.bank))
    tag = args.tag or "run"
    with ex.Stopwatch() as sw:
        agg = simulate_to_dir(cfg, bank, out, tag, _parse_x0(args.x0), args.T)
    man.stage(f"simulate-{tag}", agg.pop("files"), sw.seconds,
              converged=agg["converged"], crash_or_oscillation=agg["crash_or_oscillation"])
    man.write(os.path.join(out, "manifest.json"))
    print(json.dumps({k: agg[k] for k in ("n", "converged", "crash", "oscillation")}))
    return EXIT_OK


def cmd_casestudy(args, cfg) -> int:
    """generate -> fit-map -> train C_1 and C_2 -> verify -> simulate both."""
    out = _outdir(args, cfg)
    man = _manifest(out, cfg)
    stage = "generate"
    try:
        with ex.Stopwatch() as sw:
            clean = ex.dataset(cfg, mislabel=False)
            bad = ex.dataset(cfg, mislabel=True)
            clean.to_csv(os.path.join(out, "dataset.csv"))
            bad.to_csv(os.path.join(out, "dataset_mislabeled.csv"))
            _dump(cfg["world"], os.path.join(out, "world.json"))
        man.stage(stage, ["dataset.csv", "dataset_mislabeled.csv", "world.json"], sw.seconds)
        stage = "fit-map"
        with ex.Stopwatch() as sw:
            mmap = ex.measurement_map(cfg, clean)
            _dump(mmap.to_dict(), os.path.join(out, "map.json"))
        man.stage(stage, ["map.json"], sw.seconds, residual_rms=mmap.residual_rms)
        banks = {}
        for tag, constrained in (("C1", False), ("C2", True)):
            stage = f"train-{tag}"
            with ex.Stopwatch() as sw, warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = ex.train(cfg, bad, constrained, mmap)
                files = _write_training(out, tag, res)
            man.stage(stage, files, sw.seconds,
                      projections={p: bool(r.success) for p, r in res.projections.items()})
            man.warnings.extend(res.warnings)
            banks[tag] = res.bank
        stage = "verify"
        with ex.Stopwatch() as sw:
            report = verify_bank(banks["C2"])
            _dump(report, os.path.join(out, "verify_C2.json"))
        man.stage(stage, ["verify_C2.json"], sw.seconds, ok=report["ok"])
        comparison = {}
        for tag in ("C1", "C2"):
            stage = f"simulate-{tag}"
            with ex.Stopwatch() as sw:
                agg = simulate_to_dir(cfg, banks[tag], out, tag)
            man.stage(stage, agg.pop("files"), sw.seconds)
            comparison[tag] = {k: agg[k] for k in ("n", "converged", "crash", "oscillation",
                                                     "crash_or_oscillation")}
        _dump(comparison, os.path.join(out, "comparison.json"))
        man.stage("compare", ["comparison.json"], 0.0)
    except (LpNumericalError, SingularityError, np.linalg.LinAlgError) as exc:
        man.warnings.append(f"stage {stage} failed: {exc}")
        man.write(os.path.join(out, "manifest.json"))
        print(f"stage {stage} failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    man.write(os.path.join(out, "manifest.json"))
    print(json.dumps(comparison))
    return EXIT_OK if report["ok"] else EXIT_VERIFY


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cilsynth", description=__doc__.strip().splitlines()[0])
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render the grid dataset")
    g.add_argument("--out")
    g.add_argument("--mislabel", action="store_true", help="apply the mislabeling transform")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit-map", help="fit the polynomial measurement map")
    f.add_argument("data")
    f.add_argument("--out")
    f.set_defaults(func=cmd_fit_map)

    t = sub.add_parser("train", help="train the classifier bank")
    t.add_argument("data")
    t.add_argument("--out")
    t.add_argument("--map", help="measurement map JSON (fitted from the data otherwise)")
    t.add_argument("--tag")
    mode = t.add_mutually_exclusive_group()
    mode.add_argument("--constrained", dest="constrained", action="store_true")
    mode.add_argument("--unconstrained", dest="constrained", action="store_false")
    t.set_defaults(func=cmd_train, constrained=False)

    v = sub.add_parser("verify", help="re-check the witnesses embedded in a bank")
    v.add_argument("bank")
    v.add_argument("--system", help="JSON mapping pair -> PWA system (embedded ones otherwise)")
    v.add_argument("--report", help="write the full report here")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="closed-loop rollouts of a bank")
    s.add_argument("bank")
    s.add_argument("--out")
    s.add_argument("--x0", nargs="*", help="starts as psi,d (seeded interior starts otherwise)")
    s.add_argument("--T", type=float)
    s.add_argument("--tag")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("casestudy", help="run every stage with the case-study parameters")
    c.add_argument("--out")
    c.set_defaults(func=cmd_casestudy)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return args.func(args, cfg)
    except ex.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LpNumericalError, SingularityError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
