import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from multireg import cli
from multireg.estimate import Hypothesis, MultiModelEstimate
from multireg.geometry import residuals
from multireg.io import load_correspondences, save_labels
from multireg.scenegen import experiment_spec


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def scene1(tmp_path):
    spec = tmp_path / "exp1.json"
    spec.write_text(json.dumps(experiment_spec(1, seed=4).to_dict()))
    out = tmp_path / "exp1.csv"
    assert run("generate", "--spec", spec, "--out", out) == 0
    return out


def test_generate_writes_scene_and_sidecar(scene1):
    corrs = load_correspondences(scene1, cli.sidecar_path(scene1))
    assert len(corrs) == 2100
    for k, pose in corrs.gt_poses.items():
        m = corrs.gt_labels == k
        assert residuals(pose, corrs.a[m], corrs.b[m]).max() <= 1e-12
    doc = json.loads(cli.sidecar_path(scene1).read_text())
    assert all(len(p["pose"]) == 12 for p in doc["poses"])


def test_generate_records_sigma(tmp_path):
    spec = tmp_path / "exp2.json"
    spec.write_text(json.dumps(experiment_spec(2, seed=1, points_per_object=20).to_dict()))
    assert run("generate", "--spec", spec, "--out", tmp_path / "s.csv") == 0
    assert json.loads((tmp_path / "s.gt.json").read_text())["sigma"] == 0.03


def test_generate_invalid_spec(tmp_path, capsys):
    spec = tmp_path / "bad.json"
    spec.write_text('{"objects": [{"shape": "box"}], "noise_sigma": "loud"}')
    assert run("generate", "--spec", spec, "--out", tmp_path / "s.csv") == 2
    spec.write_text('{"objects": [{"shape": "box", "points": 2}]}')
    assert run("generate", "--spec", spec, "--out", tmp_path / "s.csv") == 2
    assert "objects[0].points" in capsys.readouterr().err
    spec.write_text("{not json")
    assert run("generate", "--spec", spec, "--out", tmp_path / "s.csv") == 2


def test_solve_em_finds_seven(scene1, tmp_path):
    out = tmp_path / "est.json"
    assert run("solve", "--method", "em", "--in", scene1, "--init", "euclidean:100", "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["num_clusters"] == 7
    assert doc["method"] == "em" and doc["wall_time_s"] >= 0
    assert all(len(c["pose"]) == 12 and "sigma" in c for c in doc["clusters"])


def test_solve_sransac_with_inline_params(scene1, tmp_path):
    out = tmp_path / "est.json"
    params = '{"inlier_threshold": 0.01, "max_iterations": 1000}'
    assert run("solve", "--method", "sransac", "--in", scene1, "--params", params, "--out", out) == 0
    assert json.loads(out.read_text())["num_clusters"] == 7


@pytest.mark.parametrize("method", ["em-vanilla", "tlinkage", "naive"])
def test_solve_other_methods(scene1, tmp_path, method):
    out = tmp_path / "est.json"
    assert run("solve", "--method", method, "--in", scene1, "--init", "euclidean:100", "--out", out) == 0
    assert json.loads(out.read_text())["num_clusters"] >= 1


def test_solve_with_label_file(scene1, tmp_path):
    corrs = load_correspondences(scene1)
    labels = tmp_path / "labels.csv"
    save_labels(labels, corrs.gt_labels)
    out = tmp_path / "est.json"
    assert run("solve", "--method", "naive", "--in", scene1, "--init", f"labels:{labels}", "--out", out) == 0
    assert json.loads(out.read_text())["labels"] == corrs.gt_labels.tolist()


def test_solve_usage_errors(scene1, tmp_path):
    out = tmp_path / "est.json"
    assert run("solve", "--method", "em", "--in", scene1, "--out", out) == 2
    assert run("solve", "--method", "magic", "--in", scene1, "--out", out) == 2
    assert run("solve", "--method", "em", "--in", scene1, "--init", "kmeans:3", "--out", out) == 2
    assert run("solve", "--method", "em", "--in", scene1, "--init", "euclidean:100",
               "--params", '{"tau": -1}', "--out", out) == 2
    assert run("solve", "--method", "sransac", "--in", scene1, "--params", '{"bogus": 1}', "--out", out) == 2
    assert run("solve", "--method", "em", "--in", tmp_path / "missing.csv", "--init", "euclidean:3",
               "--out", out) == 2


def test_solve_failure_exit_code(scene1, tmp_path):
    n = len(load_correspondences(scene1))
    labels = tmp_path / "pairs.csv"
    save_labels(labels, np.arange(n) // 2)  # every cluster has two points
    out = tmp_path / "est.json"
    assert run("solve", "--method", "em", "--in", scene1, "--init", f"labels:{labels}", "--out", out) == 3


def write_truth_estimate(csv_path, path, drop=0):
    corrs = load_correspondences(csv_path, cli.sidecar_path(csv_path))
    hyps = [Hypothesis(corrs.gt_poses[k], 0.0, 0.0, np.zeros(3)) for k in sorted(corrs.gt_poses)]
    labels = corrs.gt_labels[: len(corrs) - drop]
    path.write_text(json.dumps(MultiModelEstimate(hyps, labels).to_dict()))


def test_evaluate_perfect_estimate(scene1, tmp_path):
    est = tmp_path / "truth.json"
    write_truth_estimate(scene1, est)
    out = tmp_path / "metrics.json"
    assert run("evaluate", "--in", scene1, "--estimate", est, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["iou"] == 1.0
    assert rep["per_point_error"] == 0.0 and rep["translation_error"] == 0.0
    assert rep["rotation_error"] <= 1e-12


def test_evaluate_wrong_length(scene1, tmp_path):
    est = tmp_path / "short.json"
    write_truth_estimate(scene1, est, drop=5)
    assert run("evaluate", "--in", scene1, "--estimate", est, "--out", tmp_path / "m.json") == 4


def test_evaluate_weights_sum_to_one(scene1, tmp_path):
    est = tmp_path / "est.json"
    run("solve", "--method", "naive", "--in", scene1, "--init", "euclidean:30", "--out", est)
    out = tmp_path / "m.json"
    assert run("evaluate", "--in", scene1, "--estimate", est, "--out", out) == 0
    rep = json.loads(out.read_text())
    labels = np.array(json.loads(est.read_text())["labels"])
    gt = load_correspondences(scene1).gt_labels
    totals = {}
    for pair in rep["matched_pairs"]:
        totals[pair["est"]] = totals.get(pair["est"], 0.0) + pair["weight"]
        # independent recomputation of each weight
        h = labels == pair["est"]
        assert pair["weight"] == pytest.approx(np.count_nonzero(h & (gt == pair["gt"])) / h.sum())
    assert all(v == pytest.approx(1.0) for v in totals.values())


# --- bench ---------------------------------------------------------------------

BENCH = {"experiments": [1, 3], "methods": ["em", "em-vanilla", "tlinkage", "sransac", "naive"],
         "trials": 3, "base_seed": 10, "points_per_object": 60, "init": "euclidean:40"}


def bench(tmp_path, name, cfg=BENCH, env_threads=None, monkeypatch=None):
    config = tmp_path / "bench.json"
    config.write_text(json.dumps(cfg))
    if env_threads is not None:
        monkeypatch.setenv("MULTIREG_THREADS", env_threads)
    code = run("bench", "--config", config, "--out-dir", tmp_path / name)
    return code, tmp_path / name


def test_bench_tables_and_determinism(tmp_path, monkeypatch):
    code, d1 = bench(tmp_path, "r1", env_threads="1", monkeypatch=monkeypatch)
    assert code == 0
    code, d2 = bench(tmp_path, "r2", env_threads="2", monkeypatch=monkeypatch)
    assert code == 0
    for name in ("summary.csv", "boxplot.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    rows = list(csv.DictReader(open(d1 / "summary.csv")))
    assert [(r["experiment"], r["method"]) for r in rows] == [
        (str(e), m) for e in (1, 3) for m in ("em", "em-vanilla", "tlinkage", "sransac", "naive")]
    assert len(list((d1 / "trials").glob("*.json"))) == 2 * 5 * 3

    # quartiles recomputed independently from the per-trial reports
    box = list(csv.DictReader(open(d1 / "boxplot.csv")))
    for row in box:
        vals = []
        for t in range(3):
            rec = json.loads((d1 / "trials" / f"exp{row['experiment']}_{row['method']}_{t:04d}.json").read_text())
            vals.append(rec["metrics"][row["metric"]])
        vals = sorted(vals)
        # type-7: h = (n - 1) p, interpolate between neighbouring order statistics
        def q(p):
            h = (len(vals) - 1) * p
            lo = int(np.floor(h))
            hi = min(lo + 1, len(vals) - 1)
            return vals[lo] + (h - lo) * (vals[hi] - vals[lo])
        got = [float(row[k]) for k in ("min", "q1", "median", "q3", "max")]
        assert got == pytest.approx([q(0), q(0.25), q(0.5), q(0.75), q(1)], rel=1e-12, abs=1e-300)
        mean = float(next(r for r in rows if r["experiment"] == row["experiment"]
                          and r["method"] == row["method"])[row["metric"]])
        assert mean == pytest.approx(np.mean(vals), rel=1e-12, abs=1e-300)


def test_bench_bad_config(tmp_path):
    code, _ = bench(tmp_path, "x", cfg={"experiments": [4]})
    assert code == 2
    code, _ = bench(tmp_path, "x", cfg={"methods": ["em"], "trials": 0})
    assert code == 2
    code, _ = bench(tmp_path, "x", cfg={"methods": ["em"], "params": {"em": {"tau": 0}}})
    assert code == 2


def test_bench_all_failed_is_nonzero(tmp_path):
    # an init of one cluster per point leaves no cluster EM can fit
    cfg = {"experiments": [1], "methods": ["em"], "trials": 2, "points_per_object": 10, "init": "euclidean:70"}
    code, d = bench(tmp_path, "f", cfg=cfg)
    assert code == 3
    rows = list(csv.DictReader(open(d / "summary.csv")))
    assert rows[0]["failures"] == "2"


def test_unexpected_error_exit_code(monkeypatch, tmp_path):
    def boom(args):
        raise RuntimeError("boom")

    spec = tmp_path / "s.json"
    spec.write_text(json.dumps(experiment_spec(1).to_dict()))
    monkeypatch.setattr(cli, "generate_scene", lambda s: boom(s))
    assert run("generate", "--spec", spec, "--out", tmp_path / "o.csv") == 1


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "multireg", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "generate" in out.stdout and "bench" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "multireg", "solve"], capture_output=True, text=True)
    assert bad.returncode == 2
