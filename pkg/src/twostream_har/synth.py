"""Synthetic two-modality activity data with single-modality ambiguities.

Each class is an analytic motion template. The body moves as sums of
low-frequency sinusoids per joint (seen by the camera as 2-D keypoints); a
wrist-worn IMU measures the second derivative of the wrist's 3-D position
plus gravity (accelerometer) and the first derivative of three orientation
angles (gyroscope). Depth motion, wrist orientation and the static sensor
tilt are invisible to the camera, and the other joints are invisible to the
IMU, so two classes can be made identical in one modality while remaining
separable in the other.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataio import DEFAULT_CHANNELS, DatasetManifest, write_inertial_csv, write_keypoint_csv, write_labels_csv
from .exceptions import ConfigError
from .preprocess import N_JOINTS

GRAVITY = 9.81
WRIST = 4
N_SINES = 2

# BODY_25 rest pose in metres relative to the neck (x right, y down)
REST_POSE = np.array(
    [
        (0.0, -0.25), (0.0, 0.0), (-0.18, 0.0), (-0.22, 0.28), (-0.24, 0.52),
        (0.18, 0.0), (0.22, 0.28), (0.24, 0.52), (0.0, 0.55), (-0.1, 0.55),
        (-0.11, 0.98), (-0.12, 1.4), (0.1, 0.55), (0.11, 0.98), (0.12, 1.4),
        (-0.04, -0.29), (0.04, -0.29), (-0.08, -0.27), (0.08, -0.27), (0.15, 1.48),
        (0.18, 1.47), (0.1, 1.44), (-0.15, 1.48), (-0.18, 1.47), (-0.1, 1.44),
    ]
)  # fmt: skip

# joints whose motion amplitude is larger (elbows, wrists, knees, ankles)
LIMB_JOINTS = (3, 4, 6, 7, 10, 11, 13, 14)


@dataclass
class SyntheticConfig:
    n_classes: int = 6
    sequences_per_class: int = 60
    duration_s: float = 1.6
    keypoint_hz: float = 15.0
    inertial_hz: float = 50.0
    keypoint_noise_px: float = 2.0
    inertial_noise: float = 0.3
    # (class_a, class_b, modality): class_b copies class_a's template in that modality
    ambiguity: list = field(default_factory=lambda: [[0, 1, "vision"], [2, 3, "inertial"]])
    inertial_margin: float = 2.0
    distractor_prob: float = 0.25
    pixels_per_metre: float = 160.0
    frame_width: float = 640.0
    frame_height: float = 480.0
    window_profile: str = "cmhad"
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2 or self.sequences_per_class < 1:
            raise ConfigError("need n_classes >= 2 and sequences_per_class >= 1")
        if self.duration_s <= 0 or self.keypoint_hz <= 0 or self.inertial_hz <= 0:
            raise ConfigError("duration and rates must be positive")
        modes = {}
        for a, b, modality in self.ambiguity:
            if modality not in ("vision", "inertial"):
                raise ConfigError(f"ambiguity modality must be 'vision' or 'inertial', got {modality!r}")
            if a == b or not (0 <= a < self.n_classes and 0 <= b < self.n_classes):
                raise ConfigError(f"invalid ambiguity pair ({a}, {b})")
            modes.setdefault(frozenset((a, b)), set()).add(modality)
        for pair, m in modes.items():
            if len(m) == 2:
                raise ConfigError(f"classes {sorted(pair)} would be identical in both modalities")

    @classmethod
    def load(cls, path) -> "SyntheticConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


@dataclass
class Sinusoids:
    """Sum of sinusoids per channel: ``amp``, ``freq`` (Hz), ``phase`` of shape [..., n_sines]."""

    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray

    def _arg(self, t):
        t = np.asarray(t, dtype=np.float64)
        return 2 * np.pi * self.freq[..., None] * t + self.phase[..., None]

    def value(self, t):
        return (self.amp[..., None] * np.sin(self._arg(t))).sum(axis=-2)

    def d1(self, t):
        w = 2 * np.pi * self.freq[..., None]
        return (self.amp[..., None] * w * np.cos(self._arg(t))).sum(axis=-2)

    def d2(self, t):
        w = 2 * np.pi * self.freq[..., None]
        return (-self.amp[..., None] * w * w * np.sin(self._arg(t))).sum(axis=-2)

    def copy(self) -> "Sinusoids":
        return Sinusoids(self.amp.copy(), self.freq.copy(), self.phase.copy())


@dataclass
class ClassTemplate:
    body: Sinusoids  # [25, 2, n_sines], metres
    depth: Sinusoids  # [1, n_sines], wrist depth, metres
    orientation: Sinusoids  # [3, n_sines], radians
    gravity: np.ndarray  # [3], static accelerometer offset (m/s^2)
    posture: np.ndarray = field(default_factory=lambda: np.zeros((N_JOINTS, 2)))  # static offset, metres

    def keypoints_m(self, t) -> np.ndarray:
        """Joint positions [len(t), 25, 2] in metres."""
        return REST_POSE[None] + self.posture[None] + np.moveaxis(self.body.value(t), -1, 0)

    def inertial(self, t) -> np.ndarray:
        """Noise-free IMU channels [len(t), 6]: ax, ay, az (m/s^2), gx, gy, gz (deg/s)."""
        acc_xy = self.body.d2(t)[WRIST]  # [2, T]
        acc_z = self.depth.d2(t)  # [1, T]
        acc = np.concatenate([acc_xy, acc_z], axis=0).T + self.gravity
        gyro = np.degrees(self.orientation.d1(t)).T
        return np.concatenate([acc, gyro], axis=1)


def _random_sines(rng, shape, amp_lo, amp_hi, f_lo=0.4, f_hi=1.5) -> Sinusoids:
    full = tuple(shape) + (N_SINES,)
    return Sinusoids(rng.uniform(amp_lo, amp_hi, full), rng.uniform(f_lo, f_hi, full), rng.uniform(0, 2 * np.pi, full))


def _random_gravity(rng) -> np.ndarray:
    roll, pitch = rng.uniform(-0.7, 0.7, size=2)
    return GRAVITY * np.array([np.sin(pitch), -np.sin(roll) * np.cos(pitch), np.cos(roll) * np.cos(pitch)])


def make_templates(cfg: SyntheticConfig, rng: np.random.Generator) -> list[ClassTemplate]:
    cfg.validate()
    templates = []
    for _ in range(cfg.n_classes):
        body = _random_sines(rng, (N_JOINTS, 2), 0.0, 0.03)
        limb = _random_sines(rng, (len(LIMB_JOINTS), 2), 0.03, 0.12)
        body.amp[list(LIMB_JOINTS)] = limb.amp
        body.freq[list(LIMB_JOINTS)] = limb.freq
        body.phase[list(LIMB_JOINTS)] = limb.phase
        # constant offsets are invisible to the IMU (zero derivatives)
        posture = np.zeros((N_JOINTS, 2))
        posture[list(LIMB_JOINTS)] = rng.uniform(-0.08, 0.08, size=(len(LIMB_JOINTS), 2))
        templates.append(
            ClassTemplate(
                body=body,
                depth=_random_sines(rng, (1,), 0.05, 0.15),
                orientation=_random_sines(rng, (3,), 0.2, 0.6),
                gravity=_random_gravity(rng),
                posture=posture,
            )
        )
    for a, b, modality in cfg.ambiguity:
        src, dst = templates[a], templates[b]
        if modality == "vision":
            dst.body = src.body.copy()
            dst.posture = src.posture.copy()
            while np.max(np.abs(dst.gravity - src.gravity)) < cfg.inertial_margin:
                dst.gravity = _random_gravity(rng)
        else:
            dst.depth = src.depth.copy()
            dst.orientation = src.orientation.copy()
            dst.gravity = src.gravity.copy()
            for arr_name in ("amp", "freq", "phase"):
                getattr(dst.body, arr_name)[WRIST] = getattr(src.body, arr_name)[WRIST]
    return templates


@dataclass
class SyntheticSequence:
    sequence_id: str
    class_id: int
    keypoint_timestamps: np.ndarray
    keypoint_frames: list  # per frame [n_persons, 25, 3]; subject is person 0
    inertial_timestamps: np.ndarray
    inertial_values: np.ndarray  # [N, 6]


def _render_person(pos_m, origin_px, px_per_m, conf):
    xy = origin_px + px_per_m * pos_m
    return np.concatenate([xy, conf[..., None]], axis=-1)


def generate_synthetic(cfg: SyntheticConfig = SyntheticConfig()) -> tuple[list[SyntheticSequence], list[ClassTemplate]]:
    """Generate ``n_classes * sequences_per_class`` labeled recordings (deterministic in ``cfg.seed``)."""
    rng = np.random.default_rng(cfg.seed)
    templates = make_templates(cfg, rng)
    sequences = []
    idx = 0
    for rep in range(cfg.sequences_per_class):
        for c in range(cfg.n_classes):
            tpl = templates[c]
            t0_kp, t0_imu, offset = rng.uniform(0, 0.05), rng.uniform(0, 0.05), rng.uniform(0, 4.0)
            kts = t0_kp + np.arange(int(np.floor(cfg.duration_s * cfg.keypoint_hz)) + 1) / cfg.keypoint_hz
            its = t0_imu + np.arange(int(np.floor(cfg.duration_s * cfg.inertial_hz)) + 1) / cfg.inertial_hz
            gain = 1.0 + 0.05 * rng.standard_normal()
            scaled = replace(tpl, body=replace(tpl.body, amp=tpl.body.amp * gain),
                             depth=replace(tpl.depth, amp=tpl.depth.amp * gain))  # fmt: skip
            px = cfg.pixels_per_metre * rng.uniform(0.8, 1.2)
            origin = np.array(
                [cfg.frame_width * rng.uniform(0.42, 0.58), cfg.frame_height * rng.uniform(0.3, 0.4)]
            )
            pos = scaled.keypoints_m(kts + offset)
            conf = rng.uniform(0.6, 1.0, size=pos.shape[:2])
            subject = _render_person(pos, origin, px, conf)
            subject[..., :2] += cfg.keypoint_noise_px * rng.standard_normal(subject[..., :2].shape)
            dropped = rng.random(conf.shape) < 0.01
            dropped[:, [1, 8]] = False
            subject[dropped] = 0.0
            frames = [subject[i][None] for i in range(len(kts))]
            if rng.random() < cfg.distractor_prob:
                other = templates[rng.integers(cfg.n_classes)]
                side = rng.choice([0.1, 0.9])
                d_origin = np.array([cfg.frame_width * side, cfg.frame_height * 0.3])
                d_pos = other.keypoints_m(kts + rng.uniform(0, 4.0))
                distractor = _render_person(d_pos, d_origin, px * 0.8, rng.uniform(0.6, 1.0, size=conf.shape))
                order = rng.random() < 0.5
                frames = [np.stack([distractor[i], subject[i]] if order else [subject[i], distractor[i]]) for i in range(len(kts))]
            imu = scaled.inertial(its + offset)
            imu = imu + cfg.inertial_noise * rng.standard_normal(imu.shape) * np.array([1, 1, 1, 10, 10, 10])
            sequences.append(SyntheticSequence(f"s{idx:05d}", c, kts, frames, its, imu))
            idx += 1
    return sequences, templates


def write_synthetic(cfg: SyntheticConfig, out_dir) -> Path:
    """Write a synthetic dataset in the CSV schemas plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "keypoints").mkdir(parents=True, exist_ok=True)
    (out_dir / "inertial").mkdir(parents=True, exist_ok=True)
    sequences, _ = generate_synthetic(cfg)
    labels = []
    for s in sequences:
        write_keypoint_csv(out_dir / "keypoints" / f"{s.sequence_id}.csv", s.keypoint_timestamps, s.keypoint_frames)
        write_inertial_csv(out_dir / "inertial" / f"{s.sequence_id}.csv", s.inertial_timestamps, s.inertial_values)
        start = min(s.keypoint_timestamps[0], s.inertial_timestamps[0])
        end = max(s.keypoint_timestamps[-1], s.inertial_timestamps[-1])
        labels.append((s.sequence_id, s.class_id, start, end))
    write_labels_csv(out_dir / "labels.csv", labels)
    manifest = DatasetManifest(
        name=f"synthetic-seed{cfg.seed}",
        classes=[f"activity_{c}" for c in range(cfg.n_classes)],
        keypoint_glob="keypoints/*.csv",
        inertial_glob="inertial/*.csv",
        labels_file="labels.csv",
        keypoint_hz=cfg.keypoint_hz,
        inertial_hz=cfg.inertial_hz,
        window_profile=cfg.window_profile,
        channels=list(DEFAULT_CHANNELS),
        frame_width=cfg.frame_width,
        frame_height=cfg.frame_height,
    )
    (out_dir / "synth_config.json").write_text(cfg.to_json(), encoding="utf-8")
    return manifest.save(out_dir / "manifest.json")
