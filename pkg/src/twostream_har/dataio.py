"""CSV schemas, dataset manifests and recording ingestion.

Keypoints: ``timestamp,person_id,j0_x,j0_y,j0_c,...,j24_x,j24_y,j24_c``
(several rows may share a timestamp, one per detected person).
Inertial: ``timestamp,ax,ay,az,gx,gy,gz[,...]``.
Labels: ``sequence_id,class_id,start_ts,end_ts``.

A recording's ``sequence_id`` is the stem of its keypoint and inertial files.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ParseError
from .preprocess import N_JOINTS, WINDOW_PROFILES, InertialSequence, WindowSpec

logger = logging.getLogger(__name__)

KEYPOINT_HEADER = ["timestamp", "person_id"] + [f"j{j}_{a}" for j in range(N_JOINTS) for a in ("x", "y", "c")]
DEFAULT_CHANNELS = ["ax", "ay", "az", "gx", "gy", "gz"]
LABEL_HEADER = ["sequence_id", "class_id", "start_ts", "end_ts"]


@dataclass
class DatasetManifest:
    name: str
    classes: list
    keypoint_glob: str
    inertial_glob: str
    labels_file: str
    keypoint_hz: float
    inertial_hz: float
    window_profile: str = "cmhad"
    channels: list = field(default_factory=lambda: list(DEFAULT_CHANNELS))
    frame_width: float = 640.0
    frame_height: float = 480.0
    root: str = "."

    def __post_init__(self):
        if self.keypoint_hz <= 0 or self.inertial_hz <= 0:
            raise ConfigError("manifest rates must be positive")
        if self.window_profile not in WINDOW_PROFILES:
            raise ConfigError(f"unknown window profile {self.window_profile!r}")
        if not self.classes:
            raise ConfigError("manifest must list at least one class")

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec.from_profile(self.window_profile)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("root")
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(path, exc.lineno, exc.msg) from None
        data["root"] = str(path.parent)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


@dataclass
class Recording:
    """One labeled activity segment with both streams."""

    sequence_id: str
    segment: int
    class_id: int
    pose_timestamps: np.ndarray
    pose_frames: list  # per frame: array [n_persons, 25, 3]
    inertial: InertialSequence


# ---------------------------------------------------------------------------
# writers


def _fmt(v) -> str:
    return repr(float(v))


def write_keypoint_csv(path, timestamps, frames) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEYPOINT_HEADER)
        for ts, persons in zip(timestamps, frames):
            for pid, person in enumerate(persons):
                w.writerow([_fmt(ts), pid] + [_fmt(v) for v in np.asarray(person).reshape(-1)])


def write_inertial_csv(path, timestamps, values, channels=DEFAULT_CHANNELS) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + list(channels))
        for ts, row in zip(timestamps, values):
            w.writerow([_fmt(ts)] + [_fmt(v) for v in row])


def write_labels_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for seq, cls, start, end in rows:
            w.writerow([seq, int(cls), _fmt(start), _fmt(end)])


# ---------------------------------------------------------------------------
# readers


def _floats(path, lineno, cells):
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None


def read_keypoint_csv(path) -> tuple[np.ndarray, list]:
    """Return ``(timestamps [N], frames)`` where ``frames[i]`` is [n_persons, 25, 3]."""
    path = Path(path)
    times, frames = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != KEYPOINT_HEADER:
            raise ParseError(path, 1, "unexpected keypoint header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(KEYPOINT_HEADER):
                raise ParseError(path, lineno, f"expected {len(KEYPOINT_HEADER)} fields, got {len(row)}")
            vals = _floats(path, lineno, [row[0]] + row[2:])
            ts, joints = vals[0], np.array(vals[1:]).reshape(N_JOINTS, 3)
            if np.any((joints[:, 2] < 0) | (joints[:, 2] > 1)):
                raise ParseError(path, lineno, "joint confidence outside [0, 1]")
            if times and ts == times[-1]:
                frames[-1].append(joints)
            elif times and ts < times[-1]:
                raise ParseError(path, lineno, f"timestamp {ts} is not after {times[-1]}")
            else:
                times.append(ts)
                frames.append([joints])
    return np.array(times), [np.stack(f) for f in frames]


def read_inertial_csv(path, channels=None) -> tuple[InertialSequence, list]:
    path = Path(path)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise ParseError(path, 1, "inertial header must start with 'timestamp'")
        if channels is not None and header[1:] != list(channels):
            raise ParseError(path, 1, f"channels {header[1:]} do not match manifest {list(channels)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            vals = _floats(path, lineno, row)
            if rows and vals[0] <= rows[-1][0]:
                raise ParseError(path, lineno, f"timestamp {vals[0]} is not after {rows[-1][0]}")
            rows.append(vals)
    arr = np.array(rows).reshape(-1, len(header))
    return InertialSequence(arr[:, 0].copy(), arr[:, 1:].copy()), header[1:]


def read_labels_csv(path) -> list[tuple[str, int, float, float]]:
    path = Path(path)
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != LABEL_HEADER:
            raise ParseError(path, 1, "unexpected label header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(path, lineno, f"expected 4 fields, got {len(row)}")
            try:
                out.append((row[0], int(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return out


def _crop(ts, start, end):
    return (ts >= start - 1e-9) & (ts <= end + 1e-9)


def load_dataset(manifest: DatasetManifest) -> list[Recording]:
    """Read every labeled segment that has both a keypoint and an inertial file."""
    root = Path(manifest.root)
    kp_files = {p.stem: p for p in sorted(root.glob(manifest.keypoint_glob))}
    in_files = {p.stem: p for p in sorted(root.glob(manifest.inertial_glob))}
    labels_path = root / manifest.labels_file
    if not kp_files and not in_files:
        return []
    labels = read_labels_csv(labels_path) if labels_path.exists() else []
    cache = {}
    recordings, seg_index = [], Counter()
    for seq, cls, start, end in labels:
        if not 0 <= cls < manifest.n_classes:
            raise ConfigError(f"{labels_path}: class id {cls} outside 0..{manifest.n_classes - 1}")
        if seq not in kp_files or seq not in in_files:
            logger.warning("sequence %s lacks a %s stream; skipped", seq, "keypoint" if seq not in kp_files else "inertial")
            continue
        if seq not in cache:
            cache[seq] = (read_keypoint_csv(kp_files[seq]), read_inertial_csv(in_files[seq], manifest.channels)[0])
        (kts, frames), inertial = cache[seq]
        km = _crop(kts, start, end)
        im = _crop(inertial.timestamps, start, end)
        recordings.append(
            Recording(
                sequence_id=seq,
                segment=seg_index[seq],
                class_id=cls,
                pose_timestamps=kts[km],
                pose_frames=[f for f, keep in zip(frames, km) if keep],
                inertial=InertialSequence(inertial.timestamps[im], inertial.values[im]),
            )
        )
        seg_index[seq] += 1
    counts = Counter(r.class_id for r in recordings)
    logger.info("loaded %d segments from %s (per class: %s)", len(recordings), manifest.name, dict(sorted(counts.items())))
    return recordings


def find_manifest(path: Optional[str]) -> Path:
    if path is None:
        raise ConfigError("no dataset manifest given")
    p = Path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise ConfigError(f"manifest {p} does not exist")
    return p
