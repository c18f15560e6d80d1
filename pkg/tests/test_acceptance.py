"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that ``conftest.py`` prints in the
terminal summary, then asserts on the same condition.
"""

import csv
import time

import numpy as np
import pytest

from conftest import record
from gradcheck import check_gradients
from test_layers import _layer_case
from test_tensor import _graph
from twostream_har import cli
from twostream_har.dataio import DatasetManifest, Recording
from twostream_har.fusion import evaluate, fuse_average, fuse_max
from twostream_har.models import TrainConfig, build_inertial_net, build_vision_net, train
from twostream_har.pipeline import build_windows
from twostream_har.preprocess import (
    NECK,
    WINDOW_PROFILES,
    InertialSequence,
    MinMaxNormalizer,
    SplitSpec,
    WindowSpec,
    minmax_apply,
    minmax_fit,
    minmax_inverse,
    normalize_keypoints,
    sliding_windows,
    split_dataset,
    window_count,
)
from twostream_har.synth import SyntheticConfig, generate_synthetic

SEEDS = (0, 1, 2, 3, 4)


# ---------------------------------------------------------------------------
# 1. gradients


def test_criterion_1_gradient_suite():
    start = time.process_time()
    worst = {}
    for kind in ("conv", "batchnorm", "lstm", "dense", "gap", "time_distributed", "dropout"):
        worst[kind] = max(check_gradients(*_layer_case(kind, seed)) for seed in range(20))
    for kind in ("softmax_xent", "matmul", "sigmoid", "tanh", "exp", "log", "sqrt", "divide", "mean", "slice"):
        worst[kind] = max(check_gradients(*_graph(kind, np.random.default_rng(seed))) for seed in range(20))
    elapsed = time.process_time() - start
    overall = max(worst.values())
    ok = overall < 1e-4 and elapsed < 60
    record(1, ok, f"max rel err {overall:.1e} over {len(worst)} ops/layers x 20 seeds (< 1e-4), {elapsed:.1f} s CPU (< 60)")
    assert overall < 1e-4, worst
    assert elapsed < 60


# ---------------------------------------------------------------------------
# 2. fusion oracle


def _argmax_loop(values):
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def test_criterion_2_fusion_oracle():
    rng = np.random.default_rng(2024)
    start = time.process_time()
    mismatches = ties = 0
    for case in range(10_000):
        k = int(rng.integers(2, 9))
        if case % 2:
            s = rng.dirichlet(np.ones(k), size=2)
        else:
            s = rng.multinomial(10, np.ones(k) / k, size=2) / 10.0
        rows = s.tolist()
        means = [(rows[0][i] + rows[1][i]) / 2 for i in range(k)]
        peaks = [max(rows[0][i], rows[1][i]) for i in range(k)]
        ties += means.count(max(means)) > 1 or peaks.count(max(peaks)) > 1
        mismatches += fuse_average(s) != _argmax_loop(means)
        mismatches += fuse_max(s) != _argmax_loop(peaks)
    elapsed = time.process_time() - start
    ok = mismatches == 0 and elapsed < 5 and ties > 0
    record(2, ok, f"{mismatches} mismatches on 10^4 cases ({ties} with ties), {elapsed:.2f} s CPU (< 5)")
    assert mismatches == 0 and ties > 0
    assert elapsed < 5


# ---------------------------------------------------------------------------
# 3. preprocessing invariants


def test_criterion_3_preprocessing_invariants():
    failures = []
    p = minmax_fit([[1.0], [2.0], [3.0]])
    if minmax_apply(p, [[1.0], [2.0], [3.0]]).ravel().tolist() != [0.0, 0.5, 1.0]:
        failures.append("endpoints")
    if minmax_apply(minmax_fit([[5.0]] * 3), [[5.0]] * 3).ravel().tolist() != [0.0] * 3:
        failures.append("degenerate")
    rng = np.random.default_rng(3)
    for _ in range(200):
        X = rng.normal(size=(int(rng.integers(2, 30)), 4)) * rng.uniform(0.1, 100)
        q = minmax_fit(X)
        s = minmax_apply(q, X)
        if np.abs(minmax_inverse(q, s) - X).max() > 1e-12 * max(1.0, np.abs(X).max()):
            failures.append("round trip")
            break
        if not (np.all(s.min(axis=0) == 0) and np.all(s.max(axis=0) == 1)):
            failures.append("train range")
            break

    triples = 0
    grid = [(n, w, o) for n in range(1, 41) for w in range(1, 21) for o in range(w)]
    grid += [(n, w, o) for (w, o) in set(WINDOW_PROFILES.values()) for n in range(1, 301)]
    for n, w, o in grid:
        brute = [s for s in range(0, n) if s % (w - o) == 0 and s + w <= n]
        spec = WindowSpec(w, o)
        if window_count(n, spec) != len(brute) or sliding_windows(n, spec) != brute:
            failures.append(f"windows {(n, w, o)}")
            break
        triples += 1

    worst_inv = 0.0
    for seed in range(200):
        r = np.random.default_rng(seed)
        j = np.ones((25, 3))
        j[:, :2] = r.uniform(100, 400, size=(25, 2))
        if seed % 4 == 0:
            j[NECK] = 0.0
        base = normalize_keypoints(j)
        moved = j.copy()
        mask = moved[:, 2] > 0
        moved[mask, :2] = moved[mask, :2] * r.uniform(0.2, 5) + r.uniform(-300, 300, size=2)
        worst_inv = max(worst_inv, float(np.abs(normalize_keypoints(moved) - base).max()))
    if worst_inv > 1e-12:
        failures.append(f"keypoint invariance {worst_inv:.1e}")

    for n in (20, 40, 100, 200, 1000):
        parts = split_dataset(np.zeros(n, dtype=int), SplitSpec(seed=n))
        expected = (round(0.65 * n), round(0.10 * n), round(0.25 * n))
        if tuple(len(x) for x in parts) != expected:
            failures.append(f"split {n}")

    ok = not failures and triples >= 1000
    detail = (
        f"min-max endpoints/degenerate/round-trip, {triples} window triples incl. profiles "
        f"{sorted(set(WINDOW_PROFILES.values()))}, keypoint invariance err {worst_inv:.1e}, 65/10/25 splits"
    )
    record(3, ok, detail + ("" if ok else f"; failed: {failures}"))
    assert ok, failures


# ---------------------------------------------------------------------------
# 4. overfit sanity


def _recordings(cfg):
    seqs, _ = generate_synthetic(cfg)
    return [
        Recording(s.sequence_id, 0, s.class_id, s.keypoint_timestamps, s.keypoint_frames,
                  InertialSequence(s.inertial_timestamps, s.inertial_values))
        for s in seqs
    ]  # fmt: skip


@pytest.fixture(scope="module")
def overfit_runs():
    cfg = SyntheticConfig(ambiguity=[], sequences_per_class=9, seed=0)
    manifest = DatasetManifest("toy", [str(c) for c in range(6)], "", "", "", 15.0, 50.0)
    xv, xi, y, _ = build_windows(_recordings(cfg), manifest, WindowSpec(20, 10))
    xv, xi, y = xv[:50], xi[:50], y[:50]
    start = time.process_time()
    runs = {}
    for stream, X, builder in (("vision", xv, build_vision_net), ("inertial", xi, build_inertial_net)):
        X = MinMaxNormalizer().fit_transform(X)
        net = builder(6, X.shape[1]) if stream == "vision" else builder(6, X.shape[1], n_channels=X.shape[2])
        cfg_t = TrainConfig()  # batch 32, lr 1e-4, profile budgets
        # validating on the training set gives eval-mode accuracy and loss on it per epoch
        runs[stream] = (train(net, X, y, X, y, cfg_t).history, cfg_t.epochs_for(stream))
    return runs, time.process_time() - start


@pytest.mark.slow
def test_criterion_4_overfit_sanity(overfit_runs):
    runs, elapsed = overfit_runs
    parts, ok = [], elapsed < 180
    for stream, (hist, budget) in runs.items():
        reached = next((i + 1 for i, a in enumerate(hist.train_acc) if a == 1.0), None)
        ok &= reached is not None and len(hist) == budget
        parts.append(
            f"{stream} 100% train acc at epoch {reached}/{budget} (eval-mode acc on train set at end {hist.val_acc[-1]:.2f})"
        )
    record(4, ok, "; ".join(parts) + f"; {elapsed:.0f} s CPU (< 180)")
    assert ok


@pytest.mark.slow
def test_overfit_loss_smoothed_non_increasing(overfit_runs):
    runs, _ = overfit_runs
    for stream, (hist, _) in runs.items():
        loss = np.array(hist.val_loss)
        blocks = loss[: len(loss) // 5 * 5].reshape(-1, 5).mean(axis=1)
        assert np.all(np.diff(blocks) <= 0), stream


# ---------------------------------------------------------------------------
# 5 and 6. synthetic pipeline


def _metrics(run_dir):
    with open(run_dir / "metrics.csv", newline="") as fh:
        return {row["stream"]: float(row["accuracy"]) for row in csv.DictReader(fh)}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    start = time.process_time()
    runs = {}
    for seed in SEEDS:
        out = root / f"seed{seed}"
        code = cli.main(["pipeline", "--synth", "default", "--seed", str(seed), "--out", str(out)])
        assert code == 0, f"pipeline failed for seed {seed}"
        runs[seed] = out
    return runs, time.process_time() - start, root


@pytest.mark.slow
def test_criterion_5_fusion_gain(pipeline_runs):
    runs, elapsed, _ = pipeline_runs
    acc = {name: np.mean([_metrics(d)[name] for d in runs.values()]) for name in _metrics(runs[SEEDS[0]])}
    gain_v = acc["Fusion(avg)"] - acc["Vision"]
    gain_i = acc["Fusion(avg)"] - acc["Inertial"]
    ok = gain_v >= 0.05 and gain_i >= 0.05 and acc["Fusion(avg)"] >= acc["Fusion(max)"] - 0.01 and elapsed < 1200
    record(
        5,
        ok,
        f"mean test acc over seeds {list(SEEDS)}: inertial {100 * acc['Inertial']:.1f}%, vision {100 * acc['Vision']:.1f}%, "
        f"avg fusion {100 * acc['Fusion(avg)']:.1f}%, max fusion {100 * acc['Fusion(max)']:.1f}% "
        f"(gain +{100 * gain_i:.1f}/+{100 * gain_v:.1f} pts, need >= 5); {elapsed / 60:.1f} min CPU (< 20)",
    )
    assert gain_v >= 0.05 and gain_i >= 0.05
    assert acc["Fusion(avg)"] >= acc["Fusion(max)"] - 0.01
    assert elapsed < 1200


@pytest.mark.slow
def test_criterion_6_determinism(pipeline_runs):
    runs, _, root = pipeline_runs
    seed = SEEDS[0]
    first = runs[seed]
    again = root / f"seed{seed}_repeat"
    assert cli.main(["pipeline", "--synth", "default", "--seed", str(seed), "--out", str(again)]) == 0
    files = sorted(p.relative_to(first) for p in first.glob("*.csv"))
    files += sorted(p.relative_to(first) for p in (first / "checkpoints").iterdir())
    differing = [str(f) for f in files if (first / f).read_bytes() != (again / f).read_bytes()]
    ok = not differing and any(str(f).endswith(".bin") for f in files)
    record(6, ok, f"{len(files)} metric/score/history CSVs and checkpoint files compared, {len(differing)} differ")
    assert not differing, differing


# ---------------------------------------------------------------------------
# 7. metrics oracle


def test_criterion_7_metrics_oracle():
    rng = np.random.default_rng(77)
    bad = 0
    for _ in range(100):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(1, 80))
        labels = rng.integers(0, k, size=n)
        preds = rng.integers(0, k, size=n)
        cm = [[0] * k for _ in range(k)]
        for p, t in zip(preds, labels):
            cm[t][p] += 1
        tp = [cm[c][c] for c in range(k)]
        col = [sum(cm[r][c] for r in range(k)) for c in range(k)]
        row = [sum(cm[c]) for c in range(k)]
        prec = [tp[c] / col[c] if col[c] else 0.0 for c in range(k)]
        rec = [tp[c] / row[c] if row[c] else 0.0 for c in range(k)]
        f1 = [2 * prec[c] * rec[c] / (prec[c] + rec[c]) if prec[c] + rec[c] else 0.0 for c in range(k)]
        r = evaluate(preds, labels, k)
        bad += r.confusion.tolist() != cm
        bad += r.per_class_precision.tolist() != prec or r.per_class_recall.tolist() != rec
        bad += any(abs(a - b) > 1e-15 for a, b in zip(r.per_class_f1, f1))
        bad += r.accuracy != sum(tp) / n or r.accuracy != np.trace(r.confusion) / r.confusion.sum()
        bad += abs(r.precision - sum(prec) / k) > 1e-12 or abs(r.f1 - sum(f1) / k) > 1e-12
    record(7, bad == 0, f"{bad} discrepancies vs hand-built confusion oracle on 100 random sets; accuracy == trace/total")
    assert bad == 0
