"""Command line entry points: simulate, impute, diagnose, analyze.

Exit codes: 0 ok, 2 validation error, 3 runtime error, 4 acceptance
threshold failure (``simulate --check``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import PanelDataError, read_completed, read_dataset, read_schema, validate, write_completed, write_dataset, write_schema
from .diagnostics import Subgroup, chain_health, default_statistics, posterior_predictive_check
from .gibbs import Draw, GibbsSchedule, ScheduleInfeasible, run_chain
from .mi import AnalysisSpec, analysis_table, write_analysis_csv
from .rng import make_rng, seed_from_env
from .simulation import METHODS, PRESETS, StudyConfig, generate_truth, mask_for_design, run_study
from .state import DegenerateInit, InitMode, ModelKind, ModelSpec, ParameterState

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 2, 3, 4


class ValidationFailure(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, command: str, args: dict, seed: int, inputs: dict[str, str] = ()) -> None:
    manifest = {
        "command": command,
        "args": args,
        "seed": seed,
        "inputs": {k: _sha256(v) for k, v in dict(inputs).items()},
        "versions": {"refreshmi": __version__, "numpy": np.__version__},
    }
    with open(out / f"{command}_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return seed_from_env(0)


# arguments that do not affect results; kept out of manifests so reruns compare byte for byte
_VOLATILE = ("func", "out", "jobs")


def _jsonable(ns: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(ns).items()) if k not in _VOLATILE}


# ------------------------------------------------------------------ simulate

def cmd_simulate(args) -> int:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    seed = args.seed if args.seed is not None else seed_from_env(int(base.get("master_seed", 0)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    overrides = dict(
        replications=args.reps,
        K=args.K,
        master_seed=seed,
        jobs=args.jobs,
    )
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.scenario:
        base["scenario"] = args.scenario
    sched = dict(base.get("schedule", {}))
    for key in ("iterations", "burn_in", "thin"):
        if getattr(args, key) is not None:
            sched[key] = getattr(args, key)
    base["schedule"] = sched
    config = StudyConfig.from_json(base, **overrides)

    report = run_study(config)
    report.write_csv(out / "metrics.csv")
    report.write_raw_csv(out / "raw.csv")
    if args.write_data:
        truth = generate_truth(config.scenario, make_rng(config.master_seed, 0, 0))
        ds = mask_for_design(truth)
        write_schema(ds.schema, out / "schema.json")
        write_dataset(ds, out / "data.csv")
    inputs = {"config": args.config} if args.config else {}
    _write_manifest(out, "simulate", {**_jsonable(args), "seed": seed, "scenario_digest": config.scenario.digest()}, seed, inputs)
    for r in report.rows():
        print(f"{r['method']:>14} {r['variable']:>6}  DIF={r['DIF']:.4f}  RMSE={r['RMSE']:.4f}  pair_se={r['pair_se']:.4f}")
    if args.check and not _study_passes(report):
        print("acceptance thresholds not met", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def _study_passes(report) -> bool:
    if "complete_case" not in report.methods:
        return True
    cc = report.dif["complete_case"]
    return all((report.dif[m] < cc).all() for m in report.methods if m != "complete_case")


# ------------------------------------------------------------------ impute

def cmd_impute(args) -> int:
    seed = _seed(args)
    schema = read_schema(args.schema)
    ds = read_dataset(args.data, schema)
    report = validate(ds)
    if report.errors:
        for i, col, kind in report.errors[:20]:
            print(f"row {i + 1}, column {col}: {kind}", file=sys.stderr)
        raise ValidationFailure("dataset failed validation")
    spec = ModelSpec(
        ModelKind(args.model), K=args.K, a_alpha=args.a_alpha, b_alpha=args.b_alpha,
        x_depends_on_w=not args.x_independent_of_w, ignore_w=args.ignore_w,
    )
    schedule = GibbsSchedule(args.iterations, args.burn_in, args.thin, args.m, args.spacing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chain = run_chain(spec, ds, schedule, make_rng(seed, 0), InitMode(args.init_mode), keep_draws=not args.no_draws)

    write_schema(schema, out / "schema.json")
    for k, imp in enumerate(chain.retained_imputations, start=1):
        write_completed(imp, out / f"completed_imp{k}.csv")
    chain.traces.write_csv(out / "trace.csv", schema.names, spec.kind)
    health = chain_health(chain.traces, spec.K, schema.names)
    with open(out / "chain_health.json", "w") as fh:
        json.dump(health.to_json(), fh, indent=2)
        fh.write("\n")
    if chain.draws:
        _write_draws(out / "draws", chain.draws, ds.origin)
    _write_manifest(out, "impute", {**_jsonable(args), "seed": seed}, seed, {"data": args.data, "schema": args.schema})
    print(f"{len(chain.retained_imputations)} imputations, occupied-class mode {health.occupied_mode}"
          f"{' (K may be too small)' if health.k_insufficient else ''}")
    return EXIT_OK


def _write_draws(path: Path, draws, origin) -> None:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir()
    np.save(path / "codes.npy", np.stack([d.codes.astype(np.int8) for d in draws]))
    np.save(path / "w.npy", np.stack([d.w.astype(np.int8) for d in draws]))
    np.save(path / "origin.npy", np.asarray(origin, dtype=np.int8))
    with open(path / "states.jsonl", "w") as fh:
        for d in draws:
            fh.write(json.dumps({"sweep": d.sweep, "state": d.state.to_json()}, separators=(",", ":")) + "\n")


def _read_draws(path: Path):
    for name in ("codes.npy", "w.npy", "origin.npy", "states.jsonl"):
        if not (path / name).exists():
            raise FileNotFoundError(f"missing chain artifact {path / name} (run `impute` without --no-draws)")
    codes = np.load(path / "codes.npy")
    w = np.load(path / "w.npy")
    origin = np.load(path / "origin.npy")
    draws = []
    with open(path / "states.jsonl") as fh:
        for t, line in enumerate(fh):
            rec = json.loads(line)
            draws.append(Draw(rec["sweep"], codes[t], w[t], ParameterState.from_json(rec["state"])))
    return draws, origin


# ------------------------------------------------------------------ diagnose

def cmd_diagnose(args) -> int:
    seed = _seed(args)
    chain_dir = Path(args.chain_dir)
    schema_path = chain_dir / "schema.json"
    if not schema_path.exists():
        raise FileNotFoundError(f"missing chain artifact {schema_path}")
    schema = read_schema(schema_path)
    draws, origin = _read_draws(chain_dir / "draws")
    subgroups = []
    if args.subgroups:
        with open(args.subgroups) as fh:
            subgroups = [Subgroup.from_json(d) for d in json.load(fh)]
    stats = default_statistics(schema, subgroups)
    report = posterior_predictive_check(draws, schema, origin, stats, make_rng(seed, 1), t0=args.t0)
    out = Path(args.out) if args.out else chain_dir
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "ppp.csv")
    report.write_histogram_csv(out / "ppp_hist.csv")
    inputs = {"schema": schema_path, "states": chain_dir / "draws" / "states.jsonl"}
    if args.subgroups:
        inputs["subgroups"] = args.subgroups
    _write_manifest(out, "diagnose", {**_jsonable(args), "seed": seed}, seed, inputs)
    print(f"{len(report.entries)} statistics; fraction with ppp < 0.05: {report.fraction_below(0.05):.3f}")
    return EXIT_OK


# ------------------------------------------------------------------ analyze

def _imputation_files(d: Path) -> list[Path]:
    files = sorted(d.glob("*_imp*.csv"), key=lambda p: int(p.stem.rsplit("_imp", 1)[1]))
    if not files:
        raise FileNotFoundError(f"no *_imp<k>.csv files in {d}")
    return files


def cmd_analyze(args) -> int:
    d = Path(args.imputations_dir)
    schema_path = d / "schema.json"
    if not schema_path.exists():
        raise FileNotFoundError(f"missing artifact {schema_path}")
    schema = read_schema(schema_path)
    with open(args.spec) as fh:
        spec = AnalysisSpec.from_json(json.load(fh))
    out = Path(args.out) if args.out else d
    out.mkdir(parents=True, exist_ok=True)
    imps = [read_completed(p, schema) for p in _imputation_files(d)] if spec.quantities else []
    rows = analysis_table(imps, spec)
    write_analysis_csv(rows, out / "analysis.csv")
    inputs = {"spec": args.spec}
    for p in (_imputation_files(d) if spec.quantities else []):
        inputs[p.name] = p
    _write_manifest(out, "analyze", _jsonable(args), 0, inputs)
    for r in rows:
        e = r.estimate
        print(f"{r.quantity}: {e.point:.3f} ({e.ci_low:.3f}, {e.ci_high:.3f})  n={r.n_subgroup}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refreshmi", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="master seed (default: $REFRESH_SEED, else 0)")
        sp.add_argument("--out", default=None, help="output directory")

    s = sub.add_parser("simulate", help="run the two-scenario simulation study")
    common(s)
    s.add_argument("--config", help="study config JSON")
    s.add_argument("--scenario", choices=sorted(PRESETS), help="preset scenario (overrides config)")
    s.add_argument("--reps", type=int, default=None, help="replications (full study: 100)")
    s.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    s.add_argument("--K", type=int, default=None, help="truncation level (simulation default 10)")
    s.add_argument("--iterations", type=int, default=None, help="sweeps per chain (scaled default 5000)")
    s.add_argument("--burn-in", dest="burn_in", type=int, default=None, help="burn-in sweeps (scaled default 2500)")
    s.add_argument("--thin", type=int, default=None, help="keep every thin-th sweep (default 10)")
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel replications")
    s.add_argument("--write-data", action="store_true", help="also write replication 1's masked data + schema")
    s.add_argument("--check", action="store_true", help="exit 4 unless every model beats complete-case DIF")
    s.set_defaults(func=cmd_simulate, out="sim_out")

    i = sub.add_parser("impute", help="fit a model and write completed datasets")
    common(i)
    i.add_argument("--data", required=True)
    i.add_argument("--schema", required=True)
    i.add_argument("--model", choices=[k.value for k in ModelKind], default="blpm")
    i.add_argument("--ignore-w", action="store_true", help="MAR variant: drop W from the likelihood (dpmpm only)")
    i.add_argument("--x-independent-of-w", action="store_true", help="BLPM with X independent of W within classes")
    i.add_argument("--K", type=int, default=30, help="truncation level (applied default 30)")
    i.add_argument("--a-alpha", dest="a_alpha", type=float, default=0.25)
    i.add_argument("--b-alpha", dest="b_alpha", type=float, default=0.25)
    i.add_argument("--iterations", type=int, default=150_000, help="total sweeps (applied default 150000)")
    i.add_argument("--burn-in", dest="burn_in", type=int, default=100_000, help="burn-in sweeps (default 100000)")
    i.add_argument("--thin", type=int, default=50, help="keep every thin-th sweep (default 50)")
    i.add_argument("--m", type=int, default=50, help="imputations to keep (default 50)")
    i.add_argument("--spacing", type=int, default=20, help="spacing among thinned draws (default 20)")
    i.add_argument("--init-mode", choices=[m.value for m in InitMode], default="applied")
    i.add_argument("--no-draws", action="store_true", help="skip saving thinned draws (disables diagnose)")
    i.set_defaults(func=cmd_impute, out="impute_out")

    d = sub.add_parser("diagnose", help="posterior predictive checks on a fitted chain")
    common(d)
    d.add_argument("--chain-dir", required=True)
    d.add_argument("--t0", type=int, default=500, help="completed/replicated pairs (default 500)")
    d.add_argument("--subgroups", help="JSON list of {name, conditions: {var: level}}")
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("analyze", help="multiple-imputation estimates from completed datasets")
    a.add_argument("--imputations-dir", required=True)
    a.add_argument("--spec", required=True, help="analysis spec JSON")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PanelDataError, ValidationFailure, ScheduleInfeasible, DegenerateInit, KeyError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
