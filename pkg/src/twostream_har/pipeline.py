"""Batch pipeline: data -> windows -> two trained streams -> fused evaluation -> reports.

Every stage reads and writes files under one run directory:

    data/                   synthetic dataset (synth stage only)
    windows.npz             scaled windows, labels and split indices
    checkpoints/            {vision,inertial}_{final,best}.json/.bin
    history_<stream>.csv    per-epoch curves (+ .svg)
    scores_<stream>.csv     test-split softmax scores
    metrics.csv             Inertial / Vision / Fusion(avg) / Fusion(max) rows
    confusion_<row>.csv     confusion matrices (+ .svg after ``report``)
    metrics_table.txt       formatted comparison table
    run_manifest.json       configuration and its hash
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dataio import DatasetManifest, find_manifest, load_dataset
from .estimators import InertialStreamClassifier, VisionStreamClassifier
from .exceptions import ConfigError, StateError, SynchronizationError, ValidationError
from .fusion import REPORT_ROWS, StreamComparison, compare_streams, confusion_to_csv
from .models import TrainHistory, load_net, predict_scores
from .preprocess import (
    MinMaxNormalizer,
    PoseSequence,
    SplitSpec,
    TrackerState,
    WindowSpec,
    normalize_pose_sequence,
    resample_to_common_rate,
    segment,
    split_dataset,
    track_subject,
)
from .svg import heatmap
from .synth import SyntheticConfig, write_synthetic

logger = logging.getLogger(__name__)

STREAMS = ("vision", "inertial")
ROW_FILES = {"Inertial": "inertial", "Vision": "vision", "Fusion(avg)": "fusion_average", "Fusion(max)": "fusion_max"}


@dataclass
class RunConfig:
    command: str = "pipeline"
    config: Optional[str] = None  # dataset manifest or synthetic config JSON
    synth: Optional[str] = None  # named synthetic preset
    seed: int = 0
    out: str = "runs/default"
    window_profile: Optional[str] = None
    train_profile: str = "default"
    fusion: str = "both"
    epochs: Optional[int] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k not in ("command", "out")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


SYNTH_PRESETS = {"default": {}}


def synthetic_config(cfg: RunConfig) -> SyntheticConfig:
    if cfg.config is not None and cfg.synth is None:
        scfg = SyntheticConfig.load(cfg.config)
    else:
        name = cfg.synth or "default"
        if name not in SYNTH_PRESETS:
            raise ConfigError(f"unknown synthetic preset {name!r}; expected one of {sorted(SYNTH_PRESETS)}")
        scfg = SyntheticConfig(**SYNTH_PRESETS[name])
    scfg.seed = cfg.seed
    if cfg.window_profile:
        scfg.window_profile = cfg.window_profile
    scfg.validate()
    return scfg


# ---------------------------------------------------------------------------
# preprocessing


def build_windows(recordings, manifest: DatasetManifest, spec: WindowSpec):
    """Track, synchronize, normalize and window every recording.

    Returns ``(vision [n, T, 50], inertial [n, T, C], labels [n], recording index [n])``.
    """
    target_hz = min(manifest.keypoint_hz, manifest.inertial_hz)
    xs_v, xs_i, ys, groups = [], [], [], []
    skipped = 0
    for r_idx, rec in enumerate(recordings):
        tracker = TrackerState(frame_width=manifest.frame_width, frame_height=manifest.frame_height)
        try:
            pose = PoseSequence(rec.pose_timestamps, track_subject(rec.pose_frames, tracker))
            pose_r, imu_r = resample_to_common_rate([pose, rec.inertial], target_hz)
            feats, _ = normalize_pose_sequence(pose_r.keypoints)
        except (SynchronizationError, ValidationError) as exc:
            logger.warning("recording %s/%d skipped: %s", rec.sequence_id, rec.segment, exc)
            skipped += 1
            continue
        wv, wi = segment(feats, spec), segment(imu_r.values, spec)
        xs_v.append(wv)
        xs_i.append(wi)
        ys.append(np.full(len(wv), rec.class_id))
        groups.append(np.full(len(wv), r_idx))
    if skipped:
        logger.warning("%d recordings skipped during preprocessing", skipped)
    n_ch = len(manifest.channels)
    if not xs_v:
        return (np.zeros((0, spec.window_len, 50)), np.zeros((0, spec.window_len, n_ch)),
                np.zeros(0, dtype=int), np.zeros(0, dtype=int))  # fmt: skip
    return np.concatenate(xs_v), np.concatenate(xs_i), np.concatenate(ys).astype(int), np.concatenate(groups)


def preprocess_stage(manifest_path, out_dir, seed: int, window_profile: Optional[str] = None) -> Path:
    manifest = DatasetManifest.load(manifest_path)
    if window_profile:
        manifest.window_profile = window_profile
    spec = manifest.window_spec
    recordings = load_dataset(manifest)
    xv, xi, y, groups = build_windows(recordings, manifest, spec)
    if len(y) == 0:
        raise ValidationError(f"no windows could be built from {manifest_path}")
    train_idx, val_idx, test_idx = split_dataset(y, SplitSpec(seed=seed), n_classes=manifest.n_classes)
    scalers = {}
    for name, X in (("vision", xv), ("inertial", xi)):
        scalers[name] = MinMaxNormalizer().fit(X[train_idx])
    out = Path(out_dir) / "windows.npz"
    np.savez(
        out,
        vision=scalers["vision"].transform(xv),
        inertial=scalers["inertial"].transform(xi),
        labels=y,
        groups=groups,
        train=train_idx,
        val=val_idx,
        test=test_idx,
        n_classes=np.array(manifest.n_classes),
        vision_min=scalers["vision"].params_.x_min,
        vision_max=scalers["vision"].params_.x_max,
        inertial_min=scalers["inertial"].params_.x_min,
        inertial_max=scalers["inertial"].params_.x_max,
    )
    summary = {
        "dataset": manifest.name,
        "classes": manifest.classes,
        "window": [spec.window_len, spec.overlap],
        "recordings": len(recordings),
        "windows": int(len(y)),
        "split": [int(len(train_idx)), int(len(val_idx)), int(len(test_idx))],
    }
    (Path(out_dir) / "preprocess.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return out


def load_windows(run_dir) -> dict:
    path = Path(run_dir) / "windows.npz"
    if not path.exists():
        raise StateError(f"missing artifact {path}: run the preprocess stage first")
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


# ---------------------------------------------------------------------------
# training and scoring


def make_estimator(stream: str, cfg: RunConfig):
    cls = VisionStreamClassifier if stream == "vision" else InertialStreamClassifier
    return cls(epochs=cfg.epochs, train_profile=cfg.train_profile, random_state=cfg.seed)


def train_stage(run_dir, cfg: RunConfig, streams=STREAMS) -> dict:
    run_dir = Path(run_dir)
    data = load_windows(run_dir)
    tr, va = data["train"], data["val"]
    y = data["labels"]
    out = {}
    for stream in streams:
        X = data[stream]
        est = make_estimator(stream, cfg)
        logger.info("training %s stream on %d windows", stream, len(tr))
        est.fit(X[tr], y[tr], X[va], y[va], checkpoint_dir=run_dir / "checkpoints")
        (run_dir / f"history_{stream}.csv").write_text(est.history_.to_csv(), encoding="utf-8")
        out[stream] = est
    return out


def _checkpoint(run_dir, stream) -> Path:
    path = Path(run_dir) / "checkpoints" / f"{stream}_best.json"
    if not path.exists():
        raise StateError(f"missing artifact {path}: run the train stage first")
    return path


def scores_to_csv(scores, labels) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "label"] + [f"p{c}" for c in range(scores.shape[1])])
    for i, (row, lab) in enumerate(zip(scores, labels)):
        w.writerow([i, int(lab)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise StateError(f"missing artifact {path}: run the evaluate stage first")
    rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))[1:]
    labels = np.array([int(r[1]) for r in rows], dtype=int)
    scores = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(len(rows), -1)
    return scores, labels


def score_stage(run_dir) -> None:
    """Score the test split with each stream's best-validation checkpoint."""
    run_dir = Path(run_dir)
    data = load_windows(run_dir)
    test = data["test"]
    for stream in STREAMS:
        net = load_net(_checkpoint(run_dir, stream))
        scores = predict_scores(net, data[stream][test])
        (run_dir / f"scores_{stream}.csv").write_text(scores_to_csv(scores, data["labels"][test]), encoding="utf-8")


def fuse_stage(run_dir, fusion: str = "both") -> StreamComparison:
    run_dir = Path(run_dir)
    sv, labels = read_scores_csv(run_dir / "scores_vision.csv")
    si, labels_i = read_scores_csv(run_dir / "scores_inertial.csv")
    if not np.array_equal(labels, labels_i):
        raise ValidationError("vision and inertial score files list different labels")
    comparison = compare_streams(sv, si, labels, sv.shape[1], method=fusion)
    (run_dir / "metrics.csv").write_text(comparison.to_csv(), encoding="utf-8")
    for row, report in comparison.reports.items():
        (run_dir / f"confusion_{ROW_FILES[row]}.csv").write_text(confusion_to_csv(report.confusion), encoding="utf-8")
    return comparison


def emit_reports(run_dir) -> str:
    """Render the comparison table, confusion heatmaps and training curves from files on disk."""
    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        raise StateError(f"missing artifact {metrics_path}: run the evaluate or fuse stage first")
    rows = {r["stream"]: r for r in csv.DictReader(io.StringIO(metrics_path.read_text(encoding="utf-8")))}
    head = f"{'Stream':<14}{'Accuracy':>10}{'Precision':>11}{'Recall':>9}{'F1':>9}"
    lines = [f"Run: {run_dir.name}", head, "-" * len(head)]
    for name in REPORT_ROWS:
        if name in rows:
            r = rows[name]
            vals = [100 * float(r[k]) for k in ("accuracy", "precision", "recall", "f1")]
            lines.append(f"{name:<14}{vals[0]:>9.1f}%{vals[1]:>10.1f}%{vals[2]:>8.1f}%{vals[3]:>8.1f}%")
    if "Fusion(avg)" in rows and "Fusion(max)" in rows:
        a, b = float(rows["Fusion(avg)"]["accuracy"]), float(rows["Fusion(max)"]["accuracy"])
        lines.append(f"best fusion method: {'average' if a > b else 'max' if b > a else 'tie'}")
    table = "\n".join(lines) + "\n"
    (run_dir / "metrics_table.txt").write_text(table, encoding="utf-8")
    for name in REPORT_ROWS:
        path = run_dir / f"confusion_{ROW_FILES[name]}.csv"
        if path.exists():
            cm_rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
            labels = cm_rows[0][1:]
            cm = np.array([[int(v) for v in r[1:]] for r in cm_rows[1:]])
            (run_dir / f"confusion_{ROW_FILES[name]}.svg").write_text(
                heatmap(cm, labels, title=f"{name} confusion (row %)"), encoding="utf-8"
            )
    for stream in STREAMS:
        path = run_dir / f"history_{stream}.csv"
        if path.exists():
            hist = TrainHistory.from_csv(path.read_text(encoding="utf-8"))
            (run_dir / f"history_{stream}.svg").write_text(hist.to_svg(title=f"{stream} stream"), encoding="utf-8")
    return table


# ---------------------------------------------------------------------------
# full runs


def write_run_manifest(cfg: RunConfig, run_dir) -> None:
    from . import __version__

    manifest = {"run_config": asdict(cfg), "config_hash": cfg.config_hash(), "version": __version__}
    (Path(run_dir) / "run_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_manifest(cfg: RunConfig, run_dir: Path) -> Path:
    """Dataset manifest for this run, generating synthetic data when requested."""
    if cfg.synth is not None or cfg.config is None:
        return write_synthetic(synthetic_config(cfg), run_dir / "data")
    path = Path(cfg.config)
    if path.is_file():
        data = json.loads(path.read_text(encoding="utf-8"))
        if "sequences_per_class" in data:
            return write_synthetic(synthetic_config(cfg), run_dir / "data")
    return find_manifest(cfg.config)


def run_pipeline(cfg: RunConfig) -> StreamComparison:
    run_dir = Path(cfg.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_run_manifest(cfg, run_dir)
    manifest = resolve_manifest(cfg, run_dir)
    preprocess_stage(manifest, run_dir, cfg.seed, cfg.window_profile)
    train_stage(run_dir, cfg)
    score_stage(run_dir)
    comparison = fuse_stage(run_dir, cfg.fusion)
    emit_reports(run_dir)
    return comparison

