"""Command-line driver: ``multireg generate|solve|evaluate|bench``.

Exit codes: 0 success, 2 usage or configuration error, 3 solver failure,
4 evaluation mismatch, 1 anything unexpected.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .baselines import SransacParams, TlinkageParams, solve_naive, solve_sransac, solve_tlinkage
from .clustering import euclidean_clusters
from .em import EmParams, solve_em
from .errors import DegenerateInput, FileError, MultiRegError, NoClusters, NoValidCluster
from .estimate import MultiModelEstimate
from .metrics import evaluate
from .scenegen import SceneSpec, experiment_spec, generate_scene

EXIT_OK, EXIT_UNEXPECTED, EXIT_USAGE, EXIT_SOLVER, EXIT_MISMATCH = 0, 1, 2, 3, 4

METHODS = ("em", "em-vanilla", "tlinkage", "sransac", "naive")
NEEDS_INIT = {"em", "em-vanilla", "tlinkage", "naive"}
METRICS = ("iou", "per_point_error", "rotation_error", "translation_error")


class UsageError(Exception):
    pass


class SolverFailure(Exception):
    pass


class Mismatch(Exception):
    pass


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _read_json(text_or_path, what):
    """Parse inline JSON (starting with ``{``) or the JSON file it names."""
    try:
        if text_or_path.lstrip().startswith("{"):
            return json.loads(text_or_path)
        with open(text_or_path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise UsageError(f"{what}: cannot read {text_or_path} ({exc.strerror})") from None


def _write_json(path, doc):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def sidecar_path(csv_path) -> Path:
    """Ground-truth sidecar next to a correspondence file: ``<stem>.gt.json``."""
    p = Path(csv_path)
    return p.with_name(p.stem + ".gt.json")


def _build_params(cls, overrides: dict, what: str, **fixed):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise UsageError(f"{what}.{unknown[0]}: unknown parameter")
    try:
        return cls(**{**overrides, **fixed})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{what}: {exc}") from None


def make_params(method: str, overrides: dict | None = None, seed: int = 0):
    overrides = dict(overrides or {})
    if method == "em":
        return _build_params(EmParams, overrides, "params")
    if method == "em-vanilla":
        if overrides.get("use_distance_term"):
            raise UsageError("params.use_distance_term: em-vanilla runs without the distance term")
        overrides.pop("use_distance_term", None)
        return _build_params(EmParams, overrides, "params", use_distance_term=False)
    if method == "sransac":
        overrides.setdefault("seed", seed)
        return _build_params(SransacParams, overrides, "params")
    if method == "tlinkage":
        return _build_params(TlinkageParams, overrides, "params")
    if method == "naive":
        if overrides:
            raise UsageError(f"params.{sorted(overrides)[0]}: naive takes no parameters")
        return None
    raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def make_init(spec: str | None, corrs):
    """``euclidean:<target>`` or ``labels:<file>``."""
    if spec is None:
        return None
    kind, _, arg = spec.partition(":")
    if kind == "euclidean":
        try:
            target = int(arg)
        except ValueError:
            raise UsageError(f"--init: bad target count {arg!r}") from None
        if not 1 <= target <= len(corrs):
            raise UsageError(f"--init: target must lie in [1, {len(corrs)}]")
        return euclidean_clusters(corrs.a, target)
    if kind == "labels":
        try:
            labels = io.load_labels(arg)
        except OSError as exc:
            raise UsageError(f"--init: cannot read {arg} ({exc.strerror})") from None
        except ValueError as exc:
            raise UsageError(f"--init: {exc}") from None
        if len(labels) != len(corrs):
            raise UsageError(f"--init: {len(labels)} labels for {len(corrs)} correspondences")
        return labels
    raise UsageError(f"--init: expected euclidean:<target> or labels:<file>, got {spec!r}")


def run_method(method: str, corrs, init, params, seed: int = 0) -> MultiModelEstimate:
    if method in NEEDS_INIT and init is None:
        raise UsageError(f"--init is required for method {method}")
    try:
        if method in ("em", "em-vanilla"):
            return solve_em(corrs, init, params, seed=seed)
        if method == "tlinkage":
            return solve_tlinkage(corrs, init, params)
        if method == "sransac":
            return solve_sransac(corrs, params)
        return solve_naive(corrs, init)
    except (NoValidCluster, DegenerateInput) as exc:
        raise SolverFailure(f"{method}: {exc}") from None


def _load_corrs(path, with_gt=False):
    try:
        gt = sidecar_path(path)
        return io.load_correspondences(path, gt if with_gt and gt.exists() else None)
    except OSError as exc:
        raise UsageError(f"cannot read {path} ({exc.strerror})") from None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


# --- subcommands ---------------------------------------------------------

def cmd_generate(args):
    doc = _read_json(args.spec, "--spec")
    try:
        spec = SceneSpec.from_dict(doc)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        corrs = generate_scene(spec)
    except FileError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_correspondences(out, corrs)
    io.save_poses(sidecar_path(out), corrs.gt_poses, sigma=spec.noise_sigma, spec=spec.to_dict())
    print(f"wrote {len(corrs)} correspondences to {out}")


def cmd_solve(args):
    params_doc = _read_json(args.params, "--params") if args.params else {}
    if not isinstance(params_doc, dict):
        raise UsageError("--params: expected a JSON object")
    params = make_params(args.method, params_doc, args.seed)
    if args.method in NEEDS_INIT and args.init is None:
        raise UsageError(f"--init is required for method {args.method}")
    corrs = _load_corrs(args.inp)
    init = make_init(args.init, corrs)
    start = time.perf_counter()
    est = run_method(args.method, corrs, init, params, args.seed)
    wall = time.perf_counter() - start
    doc = est.to_dict()
    doc.update(method=args.method, wall_time_s=wall)
    _write_json(args.out, doc)
    print(f"{args.method}: {len(est)} clusters in {wall:.3f} s")


def cmd_evaluate(args):
    corrs = _load_corrs(args.inp, with_gt=True)
    if corrs.gt_labels is None or corrs.gt_poses is None:
        raise UsageError(f"{args.inp}: no ground-truth labels or {sidecar_path(args.inp).name}")
    doc = _read_json(args.estimate, "--estimate")
    try:
        est = MultiModelEstimate.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"--estimate: malformed estimate ({exc})") from None
    if len(est.labels) != len(corrs):
        raise Mismatch(f"estimate has {len(est.labels)} labels for {len(corrs)} correspondences")
    try:
        report = evaluate(corrs, est.labels, est.poses)
    except NoClusters as exc:
        raise Mismatch(str(exc)) from None
    _write_json(args.out, report.to_dict())
    print(f"iou {report.iou:.4f}  per-point {report.per_point_error:.3g} m")


# --- bench ---------------------------------------------------------------

BENCH_KEYS = {"experiments", "methods", "trials", "base_seed", "init", "points_per_object",
              "object_size", "params"}


def _sransac_default(experiment):
    # noiseless scenes get a tight threshold, noisy ones a loose one
    return {"inlier_threshold": 0.01 if experiment == 1 else 0.5, "max_iterations": 1000}


def parse_bench_config(doc) -> dict:
    if not isinstance(doc, dict):
        raise UsageError("config: expected a JSON object")
    unknown = sorted(set(doc) - BENCH_KEYS)
    if unknown:
        raise UsageError(f"{unknown[0]}: unknown field")
    cfg = {
        "experiments": doc.get("experiments", [1]),
        "methods": doc.get("methods", list(METHODS)),
        "trials": doc.get("trials", 10),
        "base_seed": doc.get("base_seed", 0),
        "init": doc.get("init", "euclidean:100"),
        "points_per_object": doc.get("points_per_object", 300),
        "object_size": doc.get("object_size", 1.2),
        "params": doc.get("params", {}),
    }
    if not isinstance(cfg["experiments"], list) or not cfg["experiments"] or \
            any(e not in (1, 2, 3) for e in cfg["experiments"]):
        raise UsageError("experiments: expected a non-empty list drawn from 1, 2, 3")
    if not isinstance(cfg["methods"], list) or not cfg["methods"] or \
            any(m not in METHODS for m in cfg["methods"]):
        raise UsageError(f"methods: expected a non-empty list drawn from {', '.join(METHODS)}")
    for key in ("trials", "base_seed", "points_per_object"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise UsageError(f"{key}: expected an integer")
    if cfg["trials"] < 1:
        raise UsageError("trials: must be at least 1")
    if cfg["points_per_object"] < 4:
        raise UsageError("points_per_object: must be at least 4")
    if not isinstance(cfg["params"], dict) or any(m not in METHODS for m in cfg["params"]):
        raise UsageError("params: expected an object keyed by method name")
    kind, _, arg = str(cfg["init"]).partition(":")
    if kind != "euclidean" or not arg.isdigit():
        raise UsageError("init: expected euclidean:<target>")
    # validate parameters once up front so a typo fails fast
    for m in cfg["methods"]:
        make_params(m, cfg["params"].get(m))
    return cfg


def run_trial(cfg: dict, experiment: int, trial: int) -> list[dict]:
    """All methods on one seeded scene; one record per method."""
    seed = cfg["base_seed"] + trial
    corrs = generate_scene(experiment_spec(
        experiment, seed, points_per_object=cfg["points_per_object"], object_size=cfg["object_size"]))
    init = euclidean_clusters(corrs.a, int(cfg["init"].split(":")[1]))
    records = []
    for method in cfg["methods"]:
        overrides = dict(cfg["params"].get(method, {}))
        if method == "sransac":
            overrides = {**_sransac_default(experiment), **overrides}
        rec = {"experiment": experiment, "method": method, "trial": trial, "seed": seed}
        try:
            params = make_params(method, overrides, seed)
            start = time.perf_counter()
            est = run_method(method, corrs, init, params, seed)
            rec["wall_time_s"] = time.perf_counter() - start
            rec["num_clusters"] = len(est)
            rec["metrics"] = evaluate(corrs, est.labels, est.poses).to_dict()
        except (MultiRegError, SolverFailure, UsageError) as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
        records.append(rec)
    return records


def _thread_cap() -> int:
    raw = os.environ.get("MULTIREG_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MULTIREG_THREADS: expected an integer, got {raw!r}") from None


def _run_all(cfg, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [run_trial(cfg, e, t) for e, t in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        futures = [pool.submit(run_trial, cfg, e, t) for e, t in jobs]
        return [f.result() for f in futures]


def quartiles(values) -> list[float]:
    """min, q1, median, q3, max with linear interpolation between order statistics."""
    return [float(v) for v in np.quantile(np.asarray(values, dtype=np.float64),
                                          [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")]


def write_bench_tables(records: list[dict], out_dir: Path) -> None:
    records = sorted(records, key=lambda r: (r["experiment"], METHODS.index(r["method"]), r["trial"]))
    groups = {}
    for r in records:
        groups.setdefault((r["experiment"], r["method"]), []).append(r)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "method", "trials", "failures", *METRICS])
        for (e, m), rs in groups.items():
            ok = [r["metrics"] for r in rs if "metrics" in r]
            means = [_fmt(np.mean([x[k] for x in ok])) if ok else "" for k in METRICS]
            w.writerow([e, m, len(rs), len(rs) - len(ok), *means])
    with open(out_dir / "boxplot.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "method", "metric", "min", "q1", "median", "q3", "max"])
        for (e, m), rs in groups.items():
            ok = [r["metrics"] for r in rs if "metrics" in r]
            if not ok:
                continue
            for k in METRICS:
                w.writerow([e, m, k, *(_fmt(v) for v in quartiles([x[k] for x in ok]))])


def cmd_bench(args):
    cfg = parse_bench_config(_read_json(args.config, "--config"))
    out_dir = Path(args.out_dir)
    (out_dir / "trials").mkdir(parents=True, exist_ok=True)
    jobs = [(e, t) for e in sorted(set(cfg["experiments"])) for t in range(cfg["trials"])]
    records = [r for batch in _run_all(cfg, jobs, _thread_cap()) for r in batch]
    for r in records:
        _write_json(out_dir / "trials" / f"exp{r['experiment']}_{r['method']}_{r['trial']:04d}.json", r)
    write_bench_tables(records, out_dir)
    failed = sum("error" in r for r in records)
    print(f"{len(records)} runs, {failed} failed; tables in {out_dir}")
    if failed == len(records):
        raise SolverFailure("every trial failed")


# --- entry point ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multireg", description="Multi-model rigid registration toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesise a correspondence scene")
    g.add_argument("--spec", required=True, help="scene spec JSON file (or inline JSON)")
    g.add_argument("--out", required=True, help="output correspondence CSV")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="segment correspondences into rigid motions")
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--in", dest="inp", required=True, help="correspondence CSV")
    s.add_argument("--init", help="euclidean:<target> or labels:<file>")
    s.add_argument("--params", help="method parameters as JSON file or inline JSON")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="estimate JSON")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("evaluate", help="score an estimate against ground truth")
    e.add_argument("--in", dest="inp", required=True, help="correspondence CSV with gt labels")
    e.add_argument("--estimate", required=True, help="estimate JSON written by solve")
    e.add_argument("--out", required=True, help="metrics JSON")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("bench", help="run a seeded benchmark sweep")
    b.add_argument("--config", required=True, help="bench config JSON")
    b.add_argument("--out-dir", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverFailure as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except Mismatch as exc:
        print(f"evaluation mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
