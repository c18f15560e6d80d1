"""Stream synchronization, keypoint normalization, subject tracking,
min-max scaling, sliding windows and stratified splitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, StateError, SynchronizationError, ValidationError

logger = logging.getLogger(__name__)

N_JOINTS = 25
NECK = 1
MID_HIP = 8

# (window length, overlap) in samples, per dataset
WINDOW_PROFILES = {
    "upfall": (50, 30),
    "utd": (50, 10),
    "berkeley": (50, 10),
    "cmhad": (20, 10),
}


class InvalidFrameError(ValidationError):
    """A keypoint frame has too few confident joints to normalize."""


@dataclass(frozen=True)
class PoseSequence:
    """Keypoints of one subject: ``timestamps`` [N], ``keypoints`` [N, 25, 3] as (x, y, confidence)."""

    timestamps: np.ndarray
    keypoints: np.ndarray

    def __len__(self):
        return len(self.timestamps)


@dataclass(frozen=True)
class InertialSequence:
    """Sensor rows: ``timestamps`` [N], ``values`` [N, C]."""

    timestamps: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.timestamps)


# ---------------------------------------------------------------------------
# min-max scaling


@dataclass(frozen=True)
class ScalerParams:
    x_min: np.ndarray
    x_max: np.ndarray


def _as_rows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        return X.reshape(-1, 1)
    return X.reshape(-1, X.shape[-1])


def minmax_fit(train_features) -> ScalerParams:
    """Per-feature extrema over every leading axis of ``train_features``."""
    rows = _as_rows(train_features)
    if rows.shape[0] < 1:
        raise ValidationError("minmax_fit: need at least one sample")
    return ScalerParams(rows.min(axis=0), rows.max(axis=0))


def minmax_apply(params: Optional[ScalerParams], features) -> np.ndarray:
    """``(x - min) / (max - min)``; no clipping, degenerate features map to 0."""
    if params is None:
        raise StateError("minmax_apply: scaler has not been fit")
    X = np.asarray(features, dtype=np.float64)
    span = params.x_max - params.x_min
    safe = np.where(span > 0, span, 1.0)
    out = (X - params.x_min) / safe
    return np.where(span > 0, out, 0.0)


def minmax_inverse(params: ScalerParams, scaled) -> np.ndarray:
    return np.asarray(scaled, dtype=np.float64) * (params.x_max - params.x_min) + params.x_min


class MinMaxNormalizer(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`minmax_fit` / :func:`minmax_apply`.

    Accepts ``[..., n_features]`` arrays; statistics are taken over all
    leading axes, so windowed ``[n, T, F]`` input is scaled per feature.
    """

    def fit(self, X, y=None):
        self.params_ = minmax_fit(X)
        self.n_features_in_ = self.params_.x_min.shape[0]
        return self

    def transform(self, X):
        if not hasattr(self, "params_"):
            raise StateError("MinMaxNormalizer: call fit before transform")
        return minmax_apply(self.params_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        return minmax_inverse(self.params_, X)


# ---------------------------------------------------------------------------
# synchronization


def native_rate(timestamps) -> float:
    ts = np.asarray(timestamps, dtype=np.float64)
    return 1.0 / float(np.median(np.diff(ts)))


def _interp_weights(ts: np.ndarray, grid: np.ndarray):
    left = np.clip(np.searchsorted(ts, grid, side="right") - 1, 0, len(ts) - 2)
    w = (grid - ts[left]) / (ts[left + 1] - ts[left])
    # grid points that land on a sample take it exactly
    w = np.where(np.isclose(grid, ts[left + 1], rtol=0, atol=1e-9), 1.0, w)
    w = np.where(np.isclose(grid, ts[left], rtol=0, atol=1e-9), 0.0, w)
    return left, np.clip(w, 0.0, 1.0)


def _interp_values(values, left, w):
    lv, rv = values[left], values[left + 1]
    wb = w.reshape((-1,) + (1,) * (values.ndim - 1))
    return np.where(wb == 0.0, lv, np.where(wb == 1.0, rv, lv + wb * (rv - lv)))


def common_grid(streams, target_hz: float) -> np.ndarray:
    start = max(float(s.timestamps[0]) for s in streams)
    end = min(float(s.timestamps[-1]) for s in streams)
    if end < start:
        raise SynchronizationError(f"streams do not overlap in time (latest start {start}, earliest end {end})")
    n = int(np.floor((end - start) * target_hz + 1e-9)) + 1
    return start + np.arange(n) / target_hz


def resample_to_common_rate(streams: Sequence, target_hz: Optional[float] = None) -> list:
    """Linearly interpolate every stream onto one shared time grid.

    The grid runs from the latest stream start to the earliest stream end at
    ``target_hz`` (default: the lowest native rate, so streams are only
    downsampled). For pose streams a joint interpolated from a neighbour with
    confidence 0 comes out as (0, 0, 0).
    """
    if not streams:
        return []
    for s in streams:
        if len(s.timestamps) < 2:
            raise SynchronizationError("every stream needs at least two samples to resample")
        if np.any(np.diff(s.timestamps) <= 0):
            raise SynchronizationError("stream timestamps must be strictly increasing")
    lowest = min(native_rate(s.timestamps) for s in streams)
    if target_hz is None:
        target_hz = lowest
    elif target_hz > lowest * (1 + 1e-6):
        raise ConfigError(f"target rate {target_hz} Hz exceeds the lowest native rate {lowest:.6g} Hz")
    grid = common_grid(streams, target_hz)
    out = []
    for s in streams:
        ts = np.asarray(s.timestamps, dtype=np.float64)
        left, w = _interp_weights(ts, grid)
        if isinstance(s, PoseSequence):
            kp = _interp_values(np.asarray(s.keypoints, dtype=np.float64), left, w)
            conf_l = s.keypoints[left][..., 2]
            conf_r = s.keypoints[left + 1][..., 2]
            wj = w[:, None]
            lost = ((conf_l == 0) & (wj < 1.0)) | ((conf_r == 0) & (wj > 0.0))
            kp[lost] = 0.0
            out.append(PoseSequence(grid.copy(), kp))
        else:
            out.append(InertialSequence(grid.copy(), _interp_values(np.asarray(s.values, dtype=np.float64), left, w)))
    return out


# ---------------------------------------------------------------------------
# keypoints


def normalize_keypoints(joints) -> np.ndarray:
    """Map one 25-joint frame [25, 3] to 50 translation- and scale-free coordinates.

    The neck is moved to the origin and coordinates are divided by the
    neck-to-mid-hip distance. When either reference joint is undetected the
    origin becomes the centroid of confident joints and the scale the
    diagonal of their bounding box. Undetected joints map to (0, 0).
    """
    joints = np.asarray(joints, dtype=np.float64)
    if joints.shape != (N_JOINTS, 3):
        raise ValidationError(f"expected a [{N_JOINTS}, 3] keypoint frame, got {joints.shape}")
    conf = joints[:, 2] > 0
    if conf.sum() < 2:
        raise InvalidFrameError(f"only {int(conf.sum())} confident joints")
    xy = joints[:, :2]
    if conf[NECK] and conf[MID_HIP]:
        origin = xy[NECK]
        scale = float(np.hypot(*(xy[MID_HIP] - xy[NECK])))
    else:
        pts = xy[conf]
        origin = pts.mean(axis=0)
        scale = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
    if not scale > 0:
        raise InvalidFrameError("reference distance is zero")
    out = (xy - origin) / scale
    out[~conf] = 0.0
    return out.reshape(-1)


def normalize_pose_sequence(keypoints) -> tuple[np.ndarray, np.ndarray]:
    """Normalize every frame; invalid frames take the previous valid frame.

    Leading invalid frames take the first valid one. Returns ``(features [N, 50], valid mask [N])``.
    """
    keypoints = np.asarray(keypoints, dtype=np.float64)
    n = len(keypoints)
    feats = np.zeros((n, 2 * N_JOINTS))
    valid = np.zeros(n, dtype=bool)
    for i in range(n):
        try:
            feats[i] = normalize_keypoints(keypoints[i])
            valid[i] = True
        except InvalidFrameError:
            pass
    if n and not valid.any():
        raise ValidationError("no frame in the sequence has enough confident joints")
    last = None
    for i in range(n):
        if valid[i]:
            last = feats[i]
        elif last is not None:
            feats[i] = last
    first = np.argmax(valid) if n else 0
    feats[:first] = feats[first]
    return feats, valid


class KeypointNormalizer(TransformerMixin, BaseEstimator):
    """Stateless transformer: [N, 25, 3] frames -> [N, 50] features with forward fill."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return normalize_pose_sequence(X)[0]


@dataclass(frozen=True)
class TrackerState:
    center_region: float = 0.5
    frame_width: float = 640.0
    frame_height: float = 480.0
    last_keypoints: Optional[np.ndarray] = None
    locked: bool = False


def _centroid(person):
    conf = person[:, 2] > 0
    if not conf.any():
        return None
    return person[conf, :2].mean(axis=0)


def _in_center(point, state: TrackerState) -> bool:
    if point is None:
        return False
    half = state.center_region / 2
    fx, fy = point[0] / state.frame_width, point[1] / state.frame_height
    return (0.5 - half <= fx <= 0.5 + half) and (0.5 - half <= fy <= 0.5 + half)


def _mean_conf(person) -> float:
    return float(person[:, 2].mean())


def pose_distance(a, b) -> float:
    """Mean Euclidean distance over joints confident in both poses."""
    both = (a[:, 2] > 0) & (b[:, 2] > 0)
    if not both.any():
        return np.inf
    return float(np.hypot(*(a[both, :2] - b[both, :2]).T).mean())


def select_subject(candidates: Sequence, state: TrackerState) -> tuple[int, np.ndarray, TrackerState]:
    """Pick the subject of interest among the persons detected in one frame.

    Unlocked: the highest-confidence person whose centroid lies in the
    central region, which then locks the tracker (if nobody is central, the
    highest-confidence person is used and the tracker stays unlocked).
    Locked: the person closest to the previously chosen pose.
    Returns ``(index, keypoints, new_state)``.
    """
    people = [np.asarray(c, dtype=np.float64) for c in candidates]
    if not people:
        raise ValidationError("select_subject: no candidate persons")
    if state.locked and state.last_keypoints is not None:
        dists = [pose_distance(p, state.last_keypoints) for p in people]
        if np.all(np.isinf(dists)):
            ref = _centroid(state.last_keypoints)
            dists = [
                np.inf if (c := _centroid(p)) is None or ref is None else float(np.hypot(*(c - ref))) for p in people
            ]
        idx = int(np.argmin(dists))
        return idx, people[idx], replace(state, last_keypoints=people[idx].copy())
    central = [i for i, p in enumerate(people) if _in_center(_centroid(p), state)]
    pool = central or list(range(len(people)))
    idx = max(pool, key=lambda i: (_mean_conf(people[i]), -i))
    return idx, people[idx], replace(state, last_keypoints=people[idx].copy(), locked=bool(central))


def track_subject(frames: Sequence, state: Optional[TrackerState] = None) -> np.ndarray:
    """Run :func:`select_subject` over a sequence of per-frame candidate lists -> [N, 25, 3]."""
    state = state or TrackerState()
    chosen = []
    for candidates in frames:
        _, person, state = select_subject(candidates, state)
        chosen.append(person)
    return np.stack(chosen) if chosen else np.zeros((0, N_JOINTS, 3))


# ---------------------------------------------------------------------------
# windows and splits


@dataclass(frozen=True)
class WindowSpec:
    window_len: int
    overlap: int

    def __post_init__(self):
        if self.window_len < 1 or not 0 <= self.overlap < self.window_len:
            raise ConfigError(f"invalid window spec: need 0 <= overlap < window_len, got {self}")

    @property
    def stride(self) -> int:
        return self.window_len - self.overlap

    @classmethod
    def from_profile(cls, name: str) -> "WindowSpec":
        try:
            return cls(*WINDOW_PROFILES[name])
        except KeyError:
            raise ConfigError(f"unknown window profile {name!r}; expected one of {sorted(WINDOW_PROFILES)}") from None


def window_count(n: int, spec: WindowSpec) -> int:
    return 0 if n < spec.window_len else (n - spec.window_len) // spec.stride + 1


def sliding_windows(n: int, spec: WindowSpec) -> list[int]:
    """Start indices of every full window over a length-``n`` series."""
    if n < spec.window_len:
        logger.warning("sequence of length %d is shorter than window %d; skipped", n, spec.window_len)
        return []
    return list(range(0, n - spec.window_len + 1, spec.stride))


def segment(series, spec: WindowSpec) -> np.ndarray:
    """Stack the windows of ``series`` [N, ...] -> [n_windows, window_len, ...]."""
    series = np.asarray(series)
    starts = sliding_windows(len(series), spec)
    if not starts:
        return np.zeros((0, spec.window_len) + series.shape[1:], dtype=series.dtype)
    return np.stack([series[s : s + spec.window_len] for s in starts])


class SlidingWindowSegmenter(TransformerMixin, BaseEstimator):
    """Transformer: one [N, F] series -> [n_windows, window_len, F]."""

    def __init__(self, window_len: int = 20, overlap: int = 10):
        self.window_len = window_len
        self.overlap = overlap

    def fit(self, X, y=None):
        WindowSpec(self.window_len, self.overlap)
        return self

    def transform(self, X):
        return segment(X, WindowSpec(self.window_len, self.overlap))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.65
    val: float = 0.10
    test: float = 0.25
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fr}")


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer counts summing to ``n``, closest to ``n * fractions`` (ties to the earlier part)."""
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    rema = [r - c for r, c in zip(raw, counts)]
    for i in sorted(range(len(raw)), key=lambda i: (-rema[i], i))[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(labels, spec: SplitSpec = SplitSpec(), n_classes: Optional[int] = None):
    """Return ``(train_idx, val_idx, test_idx)`` index arrays over ``labels``.

    Stratified splitting applies largest-remainder rounding per class and,
    when a class has at least three samples, moves one sample into any split
    left empty. Indices within each split are sorted.
    """
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(spec.seed)
    fractions = (spec.train, spec.val, spec.test)
    if spec.stratified:
        classes = range(n_classes) if n_classes is not None else np.unique(labels)
        groups = []
        for c in classes:
            members = np.flatnonzero(labels == c)
            if len(members) == 0:
                raise ConfigError(f"class {c} has no samples to split")
            groups.append(members)
    else:
        groups = [np.arange(len(labels))]
    parts = ([], [], [])
    for members in groups:
        members = rng.permutation(members)
        counts = largest_remainder(len(members), fractions)
        if len(members) >= 3:
            for i in range(3):
                if counts[i] == 0 and fractions[i] > 0:
                    donor = int(np.argmax(counts))
                    counts[donor] -= 1
                    counts[i] += 1
        bounds = np.cumsum(counts)[:-1]
        for part, chunk in zip(parts, np.split(members, bounds)):
            part.append(chunk)
    return tuple(np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=int) for p in parts)
