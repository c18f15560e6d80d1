"""The vision and inertial stream networks and their training loop."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import ConfigError, TrainingDivergedError
from .layers import (
    LSTM,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    GlobalAveragePooling,
    Layer,
    TimeDistributed,
    check_eval,
)
from .optim import Adam
from .svg import line_plot

# epochs per stream for each named training profile
TRAIN_PROFILES = {
    "default": {"vision": 200, "inertial": 100},
    "utd-vision": {"vision": 500, "inertial": 100},
}

N_KEYPOINT_FEATURES = 50


class StreamNet(Layer):
    stream = ""

    def config(self) -> dict:
        raise NotImplementedError

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class VisionStreamNet(StreamNet):
    """Per-frame Conv1D over keypoint coordinates, then an LSTM over frames.

    [B, T, F] -> TD(Conv1D 16x3, relu) -> BatchNorm -> Dropout -> flatten per frame
    -> LSTM(20) -> Dense softmax

    ``pooling="gap"`` replaces the per-frame flatten with global average
    pooling over the keypoint axis (16 features per frame).
    """

    stream = "vision"

    def __init__(
        self,
        n_classes: int,
        window_len: int,
        n_features: int = N_KEYPOINT_FEATURES,
        filters: int = 16,
        kernel_size: int = 3,
        lstm_units: int = 20,
        dropout: float = 0.4,
        conv_activation: Optional[str] = "relu",
        pooling: str = "flatten",
        seed: int = 0,
    ):
        super().__init__()
        if n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
        if window_len < kernel_size or n_features < kernel_size:
            raise ConfigError(
                f"vision net needs window_len and n_features >= kernel size {kernel_size}, "
                f"got T={window_len}, F={n_features}"
            )
        self.n_classes = n_classes
        self.window_len = window_len
        self.n_features = n_features
        self.filters = filters
        self.kernel_size = kernel_size
        self.lstm_units = lstm_units
        self.dropout = dropout
        if pooling not in ("flatten", "gap"):
            raise ConfigError(f"pooling must be 'flatten' or 'gap', got {pooling!r}")
        self.conv_activation = conv_activation
        self.pooling = pooling
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.conv1 = TimeDistributed(Conv1D(1, filters, kernel_size, activation=conv_activation, rng=rng))
        self.bn1 = BatchNorm(filters, axis=2)
        self.drop1 = Dropout(dropout, seed=seed + 1)
        self.gap = TimeDistributed(GlobalAveragePooling())
        frame_dim = filters if pooling == "gap" else filters * (n_features - kernel_size + 1)
        self.lstm1 = LSTM(frame_dim, lstm_units, return_sequences=False, rng=rng)
        self.head = Dense(lstm_units, n_classes, activation="softmax", rng=rng)

    def forward(self, x):
        x = T.as_tensor(x)
        b, t, f = x.shape
        h = T.reshape(x, (b, t, 1, f))
        h = self.conv1(h)  # [B, T, filters, F-k+1]
        h = self.drop1(self.bn1(h))
        if self.pooling == "gap":
            h = self.gap(h)  # [B, T, filters]
        else:
            h = T.reshape(h, (b, t, -1))  # [B, T, filters * (F-k+1)]
        return self.head(self.lstm1(h))

    def config(self) -> dict:
        return {
            "stream": "vision",
            "n_classes": self.n_classes,
            "window_len": self.window_len,
            "n_features": self.n_features,
            "filters": self.filters,
            "kernel_size": self.kernel_size,
            "lstm_units": self.lstm_units,
            "dropout": self.dropout,
            "conv_activation": self.conv_activation,
            "pooling": self.pooling,
            "seed": self.seed,
        }


class InertialStreamNet(StreamNet):
    """Stacked LSTMs with BatchNorm and Dropout in between.

    [B, T, C] -> LSTM(256) -> BN -> Dropout -> LSTM(128) -> BN -> Dropout -> LSTM(64) -> Dense softmax
    """

    stream = "inertial"

    def __init__(
        self,
        n_classes: int,
        window_len: int,
        n_channels: int = 6,
        units: tuple = (256, 128, 64),
        dropout: float = 0.4,
        forget_bias: float = 0.5,
        seed: int = 0,
    ):
        super().__init__()
        if n_classes < 2:
            raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
        if window_len < 1 or n_channels < 1:
            raise ConfigError("inertial net needs window_len >= 1 and n_channels >= 1")
        if len(units) != 3:
            raise ConfigError(f"inertial net stacks exactly three LSTMs, got units={units}")
        self.n_classes = n_classes
        self.window_len = window_len
        self.n_channels = n_channels
        self.units = tuple(int(u) for u in units)
        self.dropout = dropout
        self.forget_bias = forget_bias
        self.seed = seed
        rng = np.random.default_rng(seed)
        u1, u2, u3 = self.units
        self.lstm1 = LSTM(n_channels, u1, return_sequences=True, forget_bias=forget_bias, rng=rng)
        self.bn1 = BatchNorm(u1)
        self.drop1 = Dropout(dropout, seed=seed + 1)
        self.lstm2 = LSTM(u1, u2, return_sequences=True, forget_bias=forget_bias, rng=rng)
        self.bn2 = BatchNorm(u2)
        self.drop2 = Dropout(dropout, seed=seed + 2)
        self.lstm3 = LSTM(u2, u3, return_sequences=False, forget_bias=forget_bias, rng=rng)
        self.head = Dense(u3, n_classes, activation="softmax", rng=rng)

    def forward(self, x):
        h = self.drop1(self.bn1(self.lstm1(x)))
        h = self.drop2(self.bn2(self.lstm2(h)))
        return self.head(self.lstm3(h))

    def config(self) -> dict:
        return {
            "stream": "inertial",
            "n_classes": self.n_classes,
            "window_len": self.window_len,
            "n_channels": self.n_channels,
            "units": list(self.units),
            "dropout": self.dropout,
            "forget_bias": self.forget_bias,
            "seed": self.seed,
        }


def build_vision_net(n_classes: int, window_len: int, seed: int = 0, **kwargs) -> VisionStreamNet:
    return VisionStreamNet(n_classes, window_len, seed=seed, **kwargs)


def build_inertial_net(n_classes: int, window_len: int, n_channels: int = 6, seed: int = 0, **kwargs) -> InertialStreamNet:
    return InertialStreamNet(n_classes, window_len, n_channels=n_channels, seed=seed, **kwargs)


def build_from_config(config: dict) -> StreamNet:
    config = dict(config)
    stream = config.pop("stream")
    if stream == "vision":
        return VisionStreamNet(**config)
    if stream == "inertial":
        config["units"] = tuple(config["units"])
        return InertialStreamNet(**config)
    raise ConfigError(f"unknown stream {stream!r}")


def save_net(net: StreamNet, path) -> Path:
    return save_checkpoint(net.state_dict(prefix=f"{net.stream}/"), path, metadata={"architecture": net.config()})


def load_net(path) -> StreamNet:
    """Rebuild a network from its checkpoint; returned in eval mode."""
    arrays, metadata = load_checkpoint(path)
    net = build_from_config(metadata["architecture"])
    net.load_state_dict(arrays, prefix=f"{net.stream}/")
    return net.eval()


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-4
    epochs: Optional[int] = None
    profile: str = "default"
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.profile not in TRAIN_PROFILES:
            raise ConfigError(f"unknown train profile {self.profile!r}; expected one of {sorted(TRAIN_PROFILES)}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.epochs is not None and self.epochs < 1:
            raise ConfigError("epochs must be positive")

    def epochs_for(self, stream: str) -> int:
        return self.epochs if self.epochs is not None else TRAIN_PROFILES[self.profile][stream]


@dataclass
class TrainHistory:
    train_acc: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_acc, train_loss, val_acc, val_loss) -> None:
        self.train_acc.append(float(train_acc))
        self.train_loss.append(float(train_loss))
        self.val_acc.append(float(val_acc))
        self.val_loss.append(float(val_loss))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_acc", "train_loss", "val_acc", "val_loss"])
        for i in range(len(self)):
            writer.writerow(
                [i + 1]
                + [f"{v:.10f}" for v in (self.train_acc[i], self.train_loss[i], self.val_acc[i], self.val_loss[i])]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        hist = cls()
        for row in csv.DictReader(io.StringIO(text)):
            hist.append(row["train_acc"], row["train_loss"], row["val_acc"], row["val_loss"])
        return hist

    def to_svg(self, title: str = "") -> str:
        epochs = list(range(1, len(self) + 1))
        return "\n".join(
            [
                line_plot(
                    epochs,
                    {"train": self.train_acc, "validation": self.val_acc},
                    title=f"{title} accuracy".strip(),
                    ylabel="accuracy",
                ),
                line_plot(
                    epochs,
                    {"train": self.train_loss, "validation": self.val_loss},
                    title=f"{title} loss".strip(),
                    ylabel="loss",
                ),
            ]
        )


@dataclass
class TrainResult:
    history: TrainHistory
    final_state: dict
    best_state: dict
    best_epoch: int


def one_hot(y, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y), n_classes))
    out[np.arange(len(y)), np.asarray(y, dtype=int)] = 1.0
    return out


def predict_scores(net: StreamNet, X, batch_size: int = 256) -> np.ndarray:
    """Softmax scores, one row per sample. ``net`` must be in eval mode."""
    check_eval(net, f"{net.stream} network")
    X = np.asarray(X, dtype=np.float64)
    out = [net(X[i : i + batch_size]).data for i in range(0, len(X), batch_size)]
    if not out:
        return np.zeros((0, net.n_classes))
    return np.concatenate(out, axis=0)


def _score_loss_acc(net, X, y) -> tuple[float, float]:
    probs = predict_scores(net, X)
    p_true = np.clip(probs[np.arange(len(y)), y], T.LOG_FLOOR, 1.0)
    return float(np.mean(probs.argmax(axis=1) == y)), float(-np.log(p_true).mean())


def train(
    net: StreamNet,
    X_train,
    y_train,
    X_val,
    y_val,
    cfg: TrainConfig,
    checkpoint_dir=None,
    callback=None,
) -> TrainResult:
    """Minibatch Adam on categorical cross-entropy for a fixed epoch budget.

    Training accuracy/loss in the history are running means over the epoch's
    train-mode batches; validation metrics are computed in eval mode after
    each epoch (on the training set when no validation set is given). The state with the best validation accuracy (ties keep
    the earlier epoch) is kept alongside the final one; both are written to
    ``checkpoint_dir`` when given.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=int)
    X_val = np.asarray(X_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=int)
    if len(X_train) == 0:
        raise ConfigError("training set is empty")
    epochs = cfg.epochs_for(net.stream)
    targets = one_hot(y_train, net.n_classes)
    params = net.parameters()
    opt = Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory()
    best_state, best_acc, best_epoch = None, -1.0, 0
    n = len(X_train)
    for epoch in range(1, epochs + 1):
        net.train()
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        seen = correct = 0
        loss_sum = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                # a single leftover sample cannot be batch-normalized
                continue
            probs = net(X_train[idx])
            if not np.all(np.isfinite(probs.data)):
                raise TrainingDivergedError(epoch, b, float("nan"))
            loss = T.categorical_cross_entropy(probs, targets[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch, b, float(loss.data))
            T.backward(loss)
            opt.step()
            seen += len(idx)
            correct += int(np.sum(probs.data.argmax(axis=1) == y_train[idx]))
            loss_sum += float(loss.data) * len(idx)
        net.eval()
        tr_acc, tr_loss = correct / max(seen, 1), loss_sum / max(seen, 1)
        if len(X_val):
            va_acc, va_loss = _score_loss_acc(net, X_val, y_val)
        else:
            va_acc, va_loss = _score_loss_acc(net, X_train, y_train)
        if not (np.isfinite(tr_loss) and np.isfinite(va_loss)):
            raise TrainingDivergedError(epoch, -1, tr_loss)
        history.append(tr_acc, tr_loss, va_acc, va_loss)
        if va_acc > best_acc:
            best_acc, best_epoch = va_acc, epoch
            best_state = net.state_dict(prefix=f"{net.stream}/")
        if callback is not None:
            callback(epoch, history)
    net.eval()
    result = TrainResult(history, net.state_dict(prefix=f"{net.stream}/"), best_state, best_epoch)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        meta = {"architecture": net.config(), "train_config": asdict(cfg)}
        save_checkpoint(result.final_state, checkpoint_dir / f"{net.stream}_final", {**meta, "epoch": epochs})
        save_checkpoint(result.best_state, checkpoint_dir / f"{net.stream}_best", {**meta, "epoch": best_epoch})
    return result
