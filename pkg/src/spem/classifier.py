"""Stream classifiers: a shared residual extractor per frame plus a temporal fusion head.

``crnn`` fuses frame features with an LSTM, ``3dcnn`` with a temporal
convolution and ``cdnn`` by concatenation and dense layers.
"""

from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import checkpoint
from .nn.layers import (LSTM, BatchNorm, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool, Layer,
                        ReLU, ResidualBlock, Sequential, TemporalConv, TemporalMean)
from .nn.optim import Adam, lr_at_epoch, softmax_xent

log = logging.getLogger(__name__)

ARCHS = ("crnn", "3dcnn", "cdnn")
ARCH_IDS = {"crnn": 1, "3dcnn": 2, "cdnn": 3}
PRESETS = {
    # stem width, stage widths, blocks per stage, stage strides
    "pi_lite": (8, (8, 16, 32), (2, 2, 2), (1, 2, 2)),
    # ResNet-18 stages with the last stage's second block removed
    "pi_full": (64, (64, 128, 256, 512), (2, 2, 2, 1), (1, 2, 2, 2)),
}
DEFAULT_FUSION = {"crnn": 64, "3dcnn": 32, "cdnn": 64}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "crnn"
    extractor_preset: str = "pi_lite"
    class_count: int = 4
    frames: int = 10
    n: int = 27
    m: int = 27
    d: int = 1
    fusion_width: int | None = None
    dropout: float = 0.2
    # optional overrides of the preset, used for small test models
    stem_width: int | None = None
    stage_widths: tuple[int, ...] | None = None
    blocks: tuple[int, ...] | None = None
    strides: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; choose from {ARCHS}")
        if self.extractor_preset not in PRESETS:
            raise ValueError(f"unknown extractor preset {self.extractor_preset!r}")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")

    @property
    def layout(self):
        stem, widths, blocks, strides = PRESETS[self.extractor_preset]
        return (self.stem_width or stem, tuple(self.stage_widths or widths),
                tuple(self.blocks or blocks), tuple(self.strides or strides))

    @property
    def feature_dim(self) -> int:
        return self.layout[1][-1]

    @property
    def fusion(self) -> int:
        return self.fusion_width or DEFAULT_FUSION[self.arch]

    def to_dict(self) -> dict:
        stem, widths, blocks, strides = self.layout
        return {
            "arch": self.arch, "extractor_preset": self.extractor_preset,
            "class_count": self.class_count, "frames": self.frames, "n": self.n, "m": self.m,
            "d": self.d, "fusion_width": self.fusion, "dropout": repr(self.dropout),
            "stem_width": stem, "stage_widths": ",".join(map(str, widths)),
            "blocks": ",".join(map(str, blocks)), "strides": ",".join(map(str, strides)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        ints = lambda s: tuple(int(v) for v in str(s).split(","))  # noqa: E731
        return cls(arch=d["arch"], extractor_preset=d["extractor_preset"],
                   class_count=int(d["class_count"]), frames=int(d["frames"]), n=int(d["n"]),
                   m=int(d["m"]), d=int(d["d"]), fusion_width=int(d["fusion_width"]),
                   dropout=float(d["dropout"]), stem_width=int(d["stem_width"]),
                   stage_widths=ints(d["stage_widths"]), blocks=ints(d["blocks"]),
                   strides=ints(d["strides"]))


def build_extractor(config: ModelConfig, rng) -> Sequential:
    stem, widths, blocks, strides = config.layout
    layers = [Conv2D(config.d, stem, 3, 1, rng=rng), BatchNorm(stem), ReLU()]
    names = ["stem", "stem_bn", "stem_relu"]
    cin = stem
    for s, (w, nb, st) in enumerate(zip(widths, blocks, strides)):
        for b in range(nb):
            layers.append(ResidualBlock(cin, w, st if b == 0 else 1, config.dropout, rng=rng))
            names.append(f"stage{s + 1}_block{b + 1}")
            cin = w
    layers.append(GlobalAvgPool())
    names.append("pool")
    return Sequential(*layers, names=names)


def build_head(config: ModelConfig, rng) -> Sequential:
    f, c, w = config.feature_dim, config.class_count, config.fusion
    if config.arch == "crnn":
        return Sequential(LSTM(f, w, rng=rng), Dense(w, c, rng=rng), names=["lstm", "out"])
    if config.arch == "3dcnn":
        return Sequential(TemporalConv(f, w, 3, rng=rng), ReLU(), TemporalMean(), Dense(w, c, rng=rng),
                          names=["tconv", "relu", "mean", "out"])
    return Sequential(Flatten(), Dense(config.frames * f, w, rng=rng), ReLU(), Dense(w, c, rng=rng),
                      names=["flatten", "dense", "relu", "out"])


class StreamClassifier(Layer):
    """Applies one extractor to every frame, then fuses the ``(B, j, F)`` features."""

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        self.extractor = build_extractor(config, rng)
        self.head = build_head(config, rng)
        self.zero_grad()

    def children(self):
        return [("extractor", self.extractor), ("head", self.head)]

    def set_dropout(self, rate: float):
        for mod in self.modules():
            if isinstance(mod, Dropout):
                mod.rate = rate

    def features(self, x, train=False, rng=None):
        b, j = x.shape[:2]
        feats = self.extractor.forward(x.reshape(b * j, *x.shape[2:]), train, rng)
        return feats.reshape(b, j, -1)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 5 or x.shape[1:] != (self.config.frames, self.config.n, self.config.m, self.config.d):
            raise ValueError(f"input {x.shape} does not match model config")
        self._bj = x.shape[:2]
        self._frame_shape = x.shape[2:]
        return self.head.forward(self.features(x, train, rng), train, rng)

    def backward(self, dout):
        d = self.head.backward(dout)
        b, j = self._bj
        dx = self.extractor.backward(d.reshape(b * j, -1))
        return dx.reshape(b, j, *self._frame_shape)

    def state_arrays(self) -> dict:
        arrays = {f"param.{k}": v for k, v in self.named_parameters()}
        arrays.update({f"buffer.{k}": v for k, v in self.named_buffers()})
        return arrays

    def load_arrays(self, arrays: dict):
        own = self.state_arrays()
        if set(own) != set(arrays):
            missing = sorted(set(own) - set(arrays))[:3]
            extra = sorted(set(arrays) - set(own))[:3]
            raise checkpoint.CheckpointError(f"parameter names differ (missing {missing}, extra {extra})")
        for k, v in own.items():
            if v.shape != arrays[k].shape:
                raise checkpoint.CheckpointError(f"shape mismatch for {k}")
            v[...] = arrays[k]


def build_model(config: ModelConfig, seed=0) -> StreamClassifier:
    return StreamClassifier(config, seed)


def expected_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count of :func:`build_model` for ``config``."""
    stem, widths, blocks, strides = config.layout
    total = 9 * config.d * stem + 2 * stem
    cin = stem
    for w, nb, st in zip(widths, blocks, strides):
        for b in range(nb):
            stride = st if b == 0 else 1
            total += 9 * cin * w + 2 * w + 9 * w * w + 2 * w
            if stride != 1 or cin != w:
                total += cin * w + 2 * w
            cin = w
    f, c, h = config.feature_dim, config.class_count, config.fusion
    if config.arch == "crnn":
        total += 4 * h * (f + h + 1) + h * c + c
    elif config.arch == "3dcnn":
        total += 3 * f * h + h + h * c + c
    else:
        total += config.frames * f * h + h + h * c + c
    return total


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_every: int = 100
    batch: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_rate: float = 0.2
    seed: int = 0
    # optional early stop: halt once validation accuracy reaches this value
    stop_at_val_acc: float | None = None
    # optional wall-clock limit in seconds, checked after every epoch
    time_budget: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ValueError("time_budget must be positive")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float

    def line(self) -> str:
        return f"{self.epoch},{self.loss:.17g},{self.train_acc:.6f},{self.val_acc:.6f}"


@dataclass
class TrainedModel:
    model: StreamClassifier
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    final_loss: float = float("nan")
    wall_time: float = 0.0

    @property
    def config(self):
        return self.model.config


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows true, columns predicted
    wall_time: float = 0.0

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def table(self, class_names=None) -> str:
        c = self.confusion.shape[0]
        names = list(class_names or [str(k) for k in range(c)])
        width = max(8, max(len(s) for s in names) + 1)
        lines = [f"accuracy {self.accuracy:.3f}  ({np.trace(self.confusion)}/{self.total})",
                 "true \\ pred".ljust(width) + "".join(s[:width - 1].rjust(width) for s in names)]
        for k in range(c):
            lines.append(names[k].ljust(width) + "".join(str(v).rjust(width) for v in self.confusion[k]))
        return "\n".join(lines)

    def confusion_csv(self) -> str:
        return "".join(",".join(str(int(v)) for v in row) + "\n" for row in self.confusion)


def _inputs(pixels) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 255.0


def _check_dims(model: StreamClassifier, ds):
    cfg = model.config
    if (ds.j, ds.n, ds.m, ds.d) != (cfg.frames, cfg.n, cfg.m, cfg.d):
        raise ValueError(f"dataset dims {(ds.j, ds.n, ds.m, ds.d)} do not match model "
                         f"{(cfg.frames, cfg.n, cfg.m, cfg.d)}")
    if ds.class_count != cfg.class_count:
        raise ValueError(f"dataset has {ds.class_count} classes, model {cfg.class_count}")


def predict_logits(model: StreamClassifier, pixels, batch: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(pixels), batch):
        out.append(model.forward(_inputs(pixels[start:start + batch]), train=False))
    if not out:
        return np.zeros((0, model.config.class_count))
    return np.concatenate(out)


def mean_loss(model: StreamClassifier, ds, batch: int = 64) -> float:
    """Mean cross-entropy over a dataset in evaluation mode."""
    logits = predict_logits(model, ds.pixels, batch)
    return softmax_xent(logits, ds.labels)[0]


def evaluate(model: StreamClassifier, ds, batch: int = 64) -> EvalReport:
    """Accuracy and confusion matrix in evaluation mode."""
    _check_dims(model, ds)
    t0 = time.perf_counter()
    logits = predict_logits(model, ds.pixels, batch)
    pred = logits.argmax(axis=1) if len(logits) else np.zeros(0, dtype=np.int64)
    c = model.config.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (ds.labels, pred), 1)
    acc = float(np.trace(confusion) / max(len(ds), 1))
    return EvalReport(acc, confusion, time.perf_counter() - t0)


def _snapshot(model):
    return {k: v.copy() for k, v in model.state_arrays().items()}


def train(model: StreamClassifier, train_set, val_set, config: TrainConfig | None = None,
          callback=None) -> TrainedModel:
    """Minibatch Adam training; keeps the parameters of the best validation epoch.

    ``callback(record)`` is invoked after every epoch.
    """
    config = config or TrainConfig()
    _check_dims(model, train_set)
    _check_dims(model, val_set)
    model.set_dropout(config.dropout_rate)
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.beta1, config.beta2, config.eps)
    params = dict(model.named_parameters())
    result = TrainedModel(model)
    best = None
    t0 = time.perf_counter()
    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(epoch, config.lr, config.lr_decay, config.decay_every)
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for bi, start in enumerate(range(0, n, config.batch)):
            idx = order[start:start + config.batch]
            x = _inputs(train_set.pixels[idx])
            y = train_set.labels[idx]
            model.zero_grad()
            logits = model.forward(x, train=True, rng=rng)
            loss, dlogits = softmax_xent(logits, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            model.backward(dlogits)
            try:
                opt.step(params, dict(model.named_grads()), lr)
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch {bi}") from exc
            total_loss += float(loss) * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
        val_acc = evaluate(model, val_set).accuracy if len(val_set) else 0.0
        rec = EpochRecord(epoch, total_loss / n, correct / n, val_acc)
        result.history.append(rec)
        if best is None or val_acc > result.best_val_acc:
            best = _snapshot(model)
            result.best_epoch, result.best_val_acc = epoch, val_acc
        log.info("epoch %d loss %.4f train %.3f val %.3f", epoch, rec.loss, rec.train_acc, val_acc)
        if callback is not None:
            callback(rec)
        if config.stop_at_val_acc is not None and val_acc >= config.stop_at_val_acc:
            break
        if config.time_budget is not None and time.perf_counter() - t0 >= config.time_budget:
            log.info("time budget of %.0f s reached after epoch %d", config.time_budget, epoch)
            break
    result.final_loss = result.history[-1].loss
    model.load_arrays(best)
    result.wall_time = time.perf_counter() - t0
    return result


def save_model(model: StreamClassifier, path, extra: dict | None = None) -> None:
    """Write an SPNN checkpoint; ``extra`` entries are stored alongside the config."""
    cfg = model.config.to_dict()
    for key, value in (extra or {}).items():
        if key in cfg or "=" in key or "\n" in f"{key}{value}":
            raise ValueError(f"bad metadata entry {key!r}")
        cfg[key] = value
    checkpoint.write_checkpoint(path, ARCH_IDS[model.config.arch], cfg, model.state_arrays())


def model_metadata(path) -> dict:
    """The text entries of a checkpoint (model config plus any extras)."""
    return checkpoint.read_checkpoint(path)[1]


def load_model(path) -> StreamClassifier:
    arch_id, cfg, arrays = checkpoint.read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(cfg)
    except (KeyError, ValueError) as exc:
        raise checkpoint.CheckpointError(f"bad model config: {exc}") from exc
    if ARCH_IDS[config.arch] != arch_id:
        raise checkpoint.CheckpointError("architecture id does not match config")
    model = StreamClassifier(config, seed=0)
    model.load_arrays(arrays)
    return model


def copy_model(model: StreamClassifier) -> StreamClassifier:
    return copy.deepcopy(model)


def with_frames(config: ModelConfig, frames: int) -> ModelConfig:
    return replace(config, frames=frames)
