"""Temporal/spatial fusion classifier: LSTM branch + 1-D conv branch, weighted sum, linear head."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BadN,
    DataError,
    EmptyDataset,
    NumericError,
    ShapeMismatch,
    SingleClass,
    WeightConstraintViolated,
    WrongCheckpointKind,
)
from .model import CheckpointKind, Dataset, ModelCheckpoint, Sample
from .neural import layers as L
from .neural.layers import Mode
from .neural.optim import Adam
from .neural.params import ParamSet, TrainConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TsNetConfig:
    lstm_hidden: int = 128
    conv_channels: tuple[int, int, int] = (32, 64, 64)
    kernel_sizes: tuple[int, int, int] = (7, 5, 3)
    alpha: float = 0.2
    beta: float = 0.8
    fusion_dim: int = 128
    num_classes: int = 11
    # "subcarrier": convolve across subcarriers, one input channel per time slice.
    # "time": convolve along time, one input channel per subcarrier.
    spatial_axis: str = "subcarrier"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if len(self.conv_channels) != 3 or len(self.kernel_sizes) != 3:
            raise DataError("the spatial branch has exactly three conv layers")
        check_fusion_weights(self.alpha, self.beta)
        if self.spatial_axis not in ("subcarrier", "time"):
            raise DataError(f"unknown spatial_axis {self.spatial_axis!r}")
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")


def check_fusion_weights(alpha: float, beta: float) -> None:
    if abs(alpha + beta - 1.0) > 1e-9 or alpha < 0 or beta < 0:
        raise WeightConstraintViolated(f"alpha + beta must equal 1 (got {alpha} + {beta})")


def fuse(f_t, f_s, alpha: float, beta: float):
    """F = alpha * F_t + beta * F_s."""
    check_fusion_weights(alpha, beta)
    f_t = np.asarray(f_t)
    f_s = np.asarray(f_s)
    if f_t.shape != f_s.shape:
        raise ShapeMismatch(f"feature shapes {f_t.shape} and {f_s.shape} differ")
    return alpha * f_t + beta * f_s


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    ranked_classes: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "Prediction":
        logits = np.asarray(logits, dtype=np.float64)
        probs = L.softmax(logits)
        return cls(probs, rank_classes(probs))


def rank_classes(scores) -> np.ndarray:
    """Class ids by descending score; equal scores keep ascending id order."""
    return np.argsort(-np.asarray(scores), axis=-1, kind="stable")


def _uniform_init(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class TsNet:
    def __init__(self, cfg: TsNetConfig, input_shape: tuple[int, int], dtype=np.float32,
                 seed: int = 0, params: ParamSet | None = None):
        self.cfg = cfg
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        self.dtype = np.dtype(dtype)
        n_t, n_s = self.input_shape
        if cfg.spatial_axis == "subcarrier":
            self.spatial_channels, length = n_t, n_s
        else:
            self.spatial_channels, length = n_s, n_t
        lengths = [length]
        for k in cfg.kernel_sizes:
            lengths.append(lengths[-1] - k + 1)
        if lengths[-1] < 1:
            raise ShapeMismatch(f"spatial input length {length} too short for kernels {cfg.kernel_sizes}")
        self.conv_lengths = lengths
        if params is None:
            params = self._init_params(seed)
        elif params.dtype != self.dtype:
            params = params.astype(self.dtype)
        self.params = params

    def _init_params(self, seed: int) -> ParamSet:
        cfg = self.cfg
        rng = np.random.default_rng([seed, 0])
        ps = ParamSet(self.dtype)
        H, D = cfg.lstm_hidden, cfg.fusion_dim
        n_s = self.input_shape[1]
        for g in L.LSTM_GATES:
            ps.add(f"lstm.W_{g}", _uniform_init(rng, (H + n_s, H), H, self.dtype))
            ps.add(f"lstm.b_{g}", _uniform_init(rng, (H,), H, self.dtype))
        ps.add("temporal.proj.W", _uniform_init(rng, (H, D), H, self.dtype))
        ps.add("temporal.proj.b", _uniform_init(rng, (D,), H, self.dtype))
        c_in = self.spatial_channels
        for k, (c_out, ks) in enumerate(zip(cfg.conv_channels, cfg.kernel_sizes), start=1):
            ps.add(f"conv{k}.w", _uniform_init(rng, (c_out, c_in, ks), c_in * ks, self.dtype))
            ps.add(f"conv{k}.b", _uniform_init(rng, (c_out,), c_in * ks, self.dtype))
            ps.add(f"bn{k}.gamma", np.ones(c_out))
            ps.add(f"bn{k}.beta", np.zeros(c_out))
            ps.add_buffer(f"bn{k}.running_mean", np.zeros(c_out))
            ps.add_buffer(f"bn{k}.running_var", np.ones(c_out))
            c_in = c_out
        l3 = self.conv_lengths[-1]
        ps.add("spatial.map.w", _uniform_init(rng, (l3,), l3, self.dtype))
        ps.add("spatial.map.b", _uniform_init(rng, (1,), l3, self.dtype))
        c3 = cfg.conv_channels[-1]
        ps.add("spatial.proj.W", _uniform_init(rng, (c3, D), c3, self.dtype))
        ps.add("spatial.proj.b", _uniform_init(rng, (D,), c3, self.dtype))
        ps.add("classifier.W", _uniform_init(rng, (D, cfg.num_classes), D, self.dtype))
        ps.add("classifier.b", _uniform_init(rng, (cfg.num_classes,), D, self.dtype))
        return ps

    # ------------------------------------------------------------ forward

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"expected batch of shape (B, {self.input_shape[0]}, {self.input_shape[1]}), got {x.shape}")
        return x

    def features(self, x, mode=Mode.EVAL, dropout_p: float = 0.0, seed: int = 0, step: int = 0):
        """Return (F_t, F_s, cache) for a batch."""
        x = self._check_input(x)
        p = self.params.params
        buf = self.params.buffers
        lstm_params = {k[len("lstm."):]: v for k, v in p.items() if k.startswith("lstm.")}
        (_, (h_last, _)), lstm_cache = L.lstm_forward(x, lstm_params)
        f_t, tproj_cache = L.linear_forward(h_last, p["temporal.proj.W"], p["temporal.proj.b"])

        y = x if self.cfg.spatial_axis == "subcarrier" else x.transpose(0, 2, 1)
        blocks = []
        for k in (1, 2, 3):
            y, conv_cache = L.conv1d_forward(y, p[f"conv{k}.w"], p[f"conv{k}.b"])
            y, relu_mask = L.relu_forward(y)
            y, bn_cache = L.batchnorm_forward(
                y, p[f"bn{k}.gamma"], p[f"bn{k}.beta"],
                buf[f"bn{k}.running_mean"], buf[f"bn{k}.running_var"], mode)
            rng = np.random.default_rng([seed, 2, step, k]) if Mode(mode) is Mode.TRAIN else None
            y, drop_mask = L.dropout_forward(y, dropout_p, mode, rng)
            blocks.append((conv_cache, relu_mask, bn_cache, drop_mask))
        map_in = y
        s = y @ p["spatial.map.w"] + p["spatial.map.b"]
        f_s, sproj_cache = L.linear_forward(s, p["spatial.proj.W"], p["spatial.proj.b"])
        cache = (lstm_cache, h_last, tproj_cache, blocks, map_in, s, sproj_cache)
        return f_t, f_s, cache

    def forward(self, x, mode=Mode.EVAL, dropout_p: float = 0.0, seed: int = 0, step: int = 0):
        f_t, f_s, fcache = self.features(x, mode, dropout_p, seed, step)
        f = fuse(f_t, f_s, self.cfg.alpha, self.cfg.beta)
        p = self.params.params
        logits, cls_cache = L.linear_forward(f, p["classifier.W"], p["classifier.b"])
        return logits, (fcache, cls_cache)

    def backward(self, dlogits, cache) -> None:
        """Accumulate parameter gradients for upstream gradient ``dlogits``."""
        (lstm_cache, h_last, tproj_x, blocks, map_in, s, sproj_x), cls_x = cache
        ps = self.params
        p = ps.params
        df, dW, db = L.linear_backward(dlogits, cls_x, p["classifier.W"])
        ps.accumulate("classifier.W", dW)
        ps.accumulate("classifier.b", db)
        a, b = self.cfg.alpha, self.cfg.beta

        dft = a * df
        dh, dW, db = L.linear_backward(dft, tproj_x, p["temporal.proj.W"])
        ps.accumulate("temporal.proj.W", dW)
        ps.accumulate("temporal.proj.b", db)
        _, lgrads, _, _ = L.lstm_backward(None, lstm_cache, dh_last=dh)
        for k, g in lgrads.items():
            ps.accumulate(f"lstm.{k}", g)

        dfs = b * df
        ds, dW, db = L.linear_backward(dfs, sproj_x, p["spatial.proj.W"])
        ps.accumulate("spatial.proj.W", dW)
        ps.accumulate("spatial.proj.b", db)
        ps.accumulate("spatial.map.w", np.einsum("bcl,bc->l", map_in, ds))
        ps.accumulate("spatial.map.b", np.array([ds.sum()], dtype=ds.dtype))
        dy = ds[:, :, None] * p["spatial.map.w"][None, None, :]
        for k in (3, 2, 1):
            conv_cache, relu_mask, bn_cache, drop_mask = blocks[k - 1]
            dy = L.dropout_backward(dy, drop_mask)
            dy, dgamma, dbeta = L.batchnorm_backward(dy, bn_cache)
            ps.accumulate(f"bn{k}.gamma", dgamma)
            ps.accumulate(f"bn{k}.beta", dbeta)
            dy = L.relu_backward(dy, relu_mask)
            dy, dw, dbias = L.conv1d_backward(dy, conv_cache)
            ps.accumulate(f"conv{k}.w", dw)
            ps.accumulate(f"conv{k}.b", dbias)

    def loss_and_grads(self, x, labels, mode=Mode.TRAIN, dropout_p: float = 0.0, seed: int = 0, step: int = 0):
        logits, cache = self.forward(x, mode, dropout_p, seed, step)
        y = L.one_hot(labels, self.cfg.num_classes, dtype=logits.dtype)
        loss, dlogits = L.softmax_cross_entropy(logits, y)
        self.params.zero_grad()
        self.backward(dlogits, cache)
        return loss, logits

    def predict_logits(self, x, batch_size: int = 256) -> np.ndarray:
        x = self._check_input(x)
        out = [self.forward(x[i:i + batch_size], Mode.EVAL)[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    # --------------------------------------------------------- checkpoint

    def to_checkpoint(self, class_names=None, extra=None) -> ModelCheckpoint:
        hp = {
            "config": asdict(self.cfg),
            "input_shape": list(self.input_shape),
            "dtype": self.dtype.name,
        }
        if class_names is not None:
            hp["class_names"] = list(class_names)
        if extra:
            hp.update(extra)
        return ModelCheckpoint(CheckpointKind.TSNET, hp, tuple(self.params.tensors()))

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint, dtype=None) -> "TsNet":
        if ckpt.kind is not CheckpointKind.TSNET:
            raise WrongCheckpointKind(f"expected a TsNet checkpoint, got {ckpt.kind.value}")
        hp = ckpt.hyperparams
        cfg = TsNetConfig(**hp["config"])
        dtype = np.dtype(dtype or hp.get("dtype", "float32"))
        params = ParamSet.from_tensors(ckpt.tensors, dtype)
        return cls(cfg, tuple(hp["input_shape"]), dtype, params=params)


# ------------------------------------------------------------- training

@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_p1: float


def _batches(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a lone trailing sample would starve batchnorm; fold it into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        last = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], last])
    return chunks


def train_tsnet(dataset: Dataset, cfg: TsNetConfig = TsNetConfig(), train_cfg: TrainConfig = TrainConfig(),
                eval_every: int = 1, progress=None) -> tuple[ModelCheckpoint, list[EpochRecord]]:
    """Mini-batch Adam on the softmax cross-entropy.

    The per-epoch ``train_p1`` is measured in Eval mode over the whole training
    set every ``eval_every`` epochs (NaN otherwise).
    """
    if len(dataset) == 0:
        raise EmptyDataset("no samples to train on")
    labels = dataset.labels()
    if len(np.unique(labels)) < 2:
        raise SingleClass("training needs at least two classes")
    if dataset.num_classes != cfg.num_classes:
        cfg = TsNetConfig(**{**asdict(cfg), "num_classes": dataset.num_classes})
    x = dataset.stack()
    net = TsNet(cfg, x.shape[1:], np.dtype(train_cfg.dtype), seed=train_cfg.seed)
    x = x.astype(net.dtype)
    opt = Adam(train_cfg)
    order_rng = np.random.default_rng([train_cfg.seed, 1])
    history: list[EpochRecord] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = order_rng.permutation(len(x))
        total = 0.0
        for idx in _batches(order, train_cfg.batch_size):
            loss, _ = net.loss_and_grads(
                x[idx], labels[idx], Mode.TRAIN, train_cfg.dropout_p, train_cfg.seed, net.params.step)
            if not np.isfinite(loss):
                raise NumericError(f"loss became non-finite at epoch {epoch}")
            opt.step(net.params)
            total += loss * len(idx)
        net.params.check_finite()
        p1 = float("nan")
        if eval_every and epoch % eval_every == 0:
            p1 = float(np.mean(rank_classes(net.predict_logits(x))[:, 0] == labels))
        history.append(EpochRecord(epoch, total / len(x), p1))
        if progress is not None:
            progress(history[-1])
    return net.to_checkpoint(dataset.class_names), history


# ----------------------------------------------------------- evaluation

def predict_topn(checkpoint: ModelCheckpoint | TsNet, sample: Sample | np.ndarray, n: int) -> np.ndarray:
    net = checkpoint if isinstance(checkpoint, TsNet) else TsNet.from_checkpoint(checkpoint)
    if not 1 <= n <= net.cfg.num_classes:
        raise BadN(f"N must lie in [1, {net.cfg.num_classes}], got {n}")
    values = sample.values if isinstance(sample, Sample) else sample
    logits = net.predict_logits(np.asarray(values)[None])[0]
    return Prediction.from_logits(logits).ranked_classes[:n]


def topn_accuracy(ranked: np.ndarray, labels: np.ndarray, n_max: int) -> np.ndarray:
    """P_N for N = 1..n_max from ranked class lists (one row per sample)."""
    ranked = np.asarray(ranked)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyDataset("no samples to evaluate")
    hits = ranked == labels[:, None]
    hit_rank = np.where(hits.any(axis=1), np.argmax(hits, axis=1), ranked.shape[1])
    return np.array([np.mean(hit_rank < n) for n in range(1, n_max + 1)])


@dataclass
class TopNReport:
    overall: np.ndarray
    per_class: dict[int, np.ndarray] = field(default_factory=dict)
    class_names: tuple[str, ...] = ()


def evaluate_topn(checkpoint: ModelCheckpoint | TsNet, dataset: Dataset, n_max: int) -> TopNReport:
    net = checkpoint if isinstance(checkpoint, TsNet) else TsNet.from_checkpoint(checkpoint)
    if len(dataset) == 0:
        raise EmptyDataset("no samples to evaluate")
    if not 1 <= n_max <= net.cfg.num_classes:
        raise BadN(f"N must lie in [1, {net.cfg.num_classes}], got {n_max}")
    labels = dataset.labels()
    ranked = rank_classes(L.softmax(net.predict_logits(dataset.stack()).astype(np.float64)))
    overall = topn_accuracy(ranked, labels, n_max)
    per_class = {
        c: topn_accuracy(ranked[labels == c], labels[labels == c], n_max)
        for c in range(dataset.num_classes)
        if np.any(labels == c)
    }
    return TopNReport(overall, per_class, dataset.class_names)
