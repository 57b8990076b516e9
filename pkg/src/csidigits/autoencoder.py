"""Weight-shared two-branch autoencoder trained with a correlation contrastive loss."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError, InsufficientPairs, NumericError, ShapeMismatch, WrongCheckpointKind
from .model import CheckpointKind, Dataset, ModelCheckpoint, Sample
from .neural import layers as L
from .neural.layers import Mode
from .neural.optim import Adam
from .neural.params import ParamSet, TrainConfig

log = logging.getLogger(__name__)

PAPER_LITERAL = "PaperLiteral"
CORRECTED_DISTANCE = "CorrectedDistance"


@dataclass(frozen=True)
class AeConfig:
    layer_widths_encoder: tuple[int, int, int] = (512, 256, 128)
    xi: float = 0.85
    loss_variant: str = CORRECTED_DISTANCE
    recon_weight: float = 1.0
    contrastive_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_widths_encoder", tuple(int(w) for w in self.layer_widths_encoder))
        if len(self.layer_widths_encoder) != 3:
            raise DataError("encoder and decoder each have exactly three linear layers")
        if not 0 < self.xi < 1:
            raise DataError("xi must lie in (0, 1)")
        if self.loss_variant not in (PAPER_LITERAL, CORRECTED_DISTANCE):
            raise DataError(f"unknown loss variant {self.loss_variant!r}")


def _corr_rows(r1, r2):
    """Row-wise Pearson correlation plus what the gradient needs."""
    a = r1 - r1.mean(axis=1, keepdims=True)
    b = r2 - r2.mean(axis=1, keepdims=True)
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    valid = (na > 0) & (nb > 0)
    na_s = np.where(valid, na, 1.0)
    nb_s = np.where(valid, nb, 1.0)
    ah = a / na_s[:, None]
    bh = b / nb_s[:, None]
    c = np.where(valid, np.sum(ah * bh, axis=1), 0.0)
    return c, ah, bh, na_s, nb_s, valid


def _terms(c, y, xi, variant):
    """Per-pair contrastive terms and their derivative wrt the correlation."""
    y = np.asarray(y, dtype=c.dtype)
    if variant == CORRECTED_DISTANCE:
        hinge = np.maximum(c - xi, 0.0)
        term = y * (1 - c) ** 2 + (1 - y) * hinge ** 2
        dterm = -2 * y * (1 - c) + 2 * (1 - y) * hinge
    else:
        hinge = np.maximum(xi - c, 0.0)
        term = y * c ** 2 + (1 - y) * hinge ** 2
        dterm = 2 * y * c - 2 * (1 - y) * hinge
    return term, dterm


def contrastive_loss(r1, r2, y_ij: int, xi: float = 0.85, variant: str = CORRECTED_DISTANCE) -> float:
    """Unaveraged contrastive term for one pair of reconstructions.

    CorrectedDistance: y (1 - c)^2 + (1 - y) max(c - xi, 0)^2.
    PaperLiteral:      y c^2 + (1 - y) max(xi - c, 0)^2.
    A constant vector has no correlation and contributes 0.
    """
    r1 = np.asarray(r1, dtype=np.float64).reshape(1, -1)
    r2 = np.asarray(r2, dtype=np.float64).reshape(1, -1)
    if r1.shape != r2.shape:
        raise ShapeMismatch(f"reconstruction lengths {r1.shape[1]} and {r2.shape[1]} differ")
    c, *_, valid = _corr_rows(r1, r2)
    if not valid[0]:
        log.debug("constant reconstruction, contrastive term skipped")
        return 0.0
    term, _ = _terms(c, np.array([y_ij]), xi, variant)
    return float(term[0])


def pair_loss(r1, r2, x1, x2, y, cfg: AeConfig):
    """Batch objective over P pairs and its gradients wrt both reconstructions.

    recon_weight * (MSE(r1, x1) + MSE(r2, x2)) + contrastive_weight * sum(term) / (2P)
    """
    P = r1.shape[0]
    d1 = r1 - x1
    d2 = r2 - x2
    mse = float(np.mean(d1 * d1) + np.mean(d2 * d2))
    scale = 2 * cfg.recon_weight / d1.size
    g1 = scale * d1
    g2 = scale * d2
    c, ah, bh, na, nb, valid = _corr_rows(r1, r2)
    if not np.all(valid):
        log.debug("%d constant reconstructions skipped in contrastive term", int(np.sum(~valid)))
    term, dterm = _terms(c, y, cfg.xi, cfg.loss_variant)
    term = np.where(valid, term, 0.0)
    dterm = np.where(valid, dterm, 0.0)
    contrast = float(np.sum(term)) / (2 * P)
    k = (cfg.contrastive_weight / (2 * P)) * dterm
    g1 = g1 + (k / na)[:, None] * (bh - c[:, None] * ah)
    g2 = g2 + (k / nb)[:, None] * (ah - c[:, None] * bh)
    total = cfg.recon_weight * mse + cfg.contrastive_weight * contrast
    return total, mse, contrast, g1.astype(r1.dtype), g2.astype(r2.dtype)


class Autoencoder:
    def __init__(self, cfg: AeConfig, input_shape: tuple[int, int], dtype=np.float32,
                 seed: int = 0, params: ParamSet | None = None):
        self.cfg = cfg
        self.input_shape = (int(input_shape[0]), int(input_shape[1]))
        self.dtype = np.dtype(dtype)
        d_in = self.input_shape[0] * self.input_shape[1]
        enc = list(cfg.layer_widths_encoder)
        self.widths = [d_in] + enc + enc[-2::-1] + [d_in]
        if params is None:
            params = self._init_params(seed)
        elif params.dtype != self.dtype:
            params = params.astype(self.dtype)
        self.params = params

    @property
    def layer_names(self) -> list[str]:
        return ["enc1", "enc2", "enc3", "dec1", "dec2", "dec3"]

    def _init_params(self, seed: int) -> ParamSet:
        rng = np.random.default_rng([seed, 10])
        ps = ParamSet(self.dtype)
        for name, fan_in, fan_out in zip(self.layer_names, self.widths[:-1], self.widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            ps.add(f"{name}.W", rng.uniform(-bound, bound, (fan_in, fan_out)))
            # zero biases: a random output offset would correlate every pair at init
            ps.add(f"{name}.b", np.zeros(fan_out))
        return ps

    def _flatten(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        d_in = self.widths[0]
        if x.shape[-2:] == self.input_shape:
            x = x.reshape(-1, d_in)
        elif x.ndim in (1, 2) and x.shape[-1] == d_in:
            x = x.reshape(-1, d_in)
        else:
            raise ShapeMismatch(f"expected samples of shape {self.input_shape}, got {x.shape}")
        return x

    def branch_forward(self, x, mode=Mode.EVAL):
        """One branch: three linear+ReLU encoder layers, then linear+ReLU, linear+ReLU, linear."""
        h = self._flatten(x)
        p = self.params.params
        caches = []
        names = self.layer_names
        for k, name in enumerate(names):
            h, xin = L.linear_forward(h, p[f"{name}.W"], p[f"{name}.b"])
            mask = None
            if k < len(names) - 1:
                h, mask = L.relu_forward(h)
            caches.append((name, xin, mask))
        return h, caches

    def branch_backward(self, dy, caches) -> None:
        ps = self.params
        for name, xin, mask in reversed(caches):
            if mask is not None:
                dy = L.relu_backward(dy, mask)
            dy, dW, db = L.linear_backward(dy, xin, ps.params[f"{name}.W"])
            ps.accumulate(f"{name}.W", dW)
            ps.accumulate(f"{name}.b", db)

    def loss_and_grads(self, x1, x2, y):
        """Forward both branches as one stacked batch, backpropagate the pair objective."""
        a = self._flatten(x1)
        b = self._flatten(x2)
        P = a.shape[0]
        out, caches = self.branch_forward(np.concatenate([a, b]), Mode.TRAIN)
        total, mse, contrast, g1, g2 = pair_loss(out[:P], out[P:], a, b, np.asarray(y), self.cfg)
        self.params.zero_grad()
        self.branch_backward(np.concatenate([g1, g2]), caches)
        return total, mse, contrast

    def reconstruct(self, x, batch_size: int = 256) -> np.ndarray:
        flat = self._flatten(x)
        out = [self.branch_forward(flat[i:i + batch_size])[0] for i in range(0, len(flat), batch_size)]
        return np.concatenate(out).reshape((-1,) + self.input_shape)

    def to_checkpoint(self, extra=None) -> ModelCheckpoint:
        hp = {"config": asdict(self.cfg), "input_shape": list(self.input_shape), "dtype": self.dtype.name}
        if extra:
            hp.update(extra)
        return ModelCheckpoint(CheckpointKind.AUTOENCODER, hp, tuple(self.params.tensors()))

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint, dtype=None) -> "Autoencoder":
        if ckpt.kind is not CheckpointKind.AUTOENCODER:
            raise WrongCheckpointKind(f"expected an Autoencoder checkpoint, got {ckpt.kind.value}")
        hp = ckpt.hyperparams
        dtype = np.dtype(dtype or hp.get("dtype", "float32"))
        return cls(AeConfig(**hp["config"]), tuple(hp["input_shape"]), dtype,
                   params=ParamSet.from_tensors(ckpt.tensors, dtype))


def ae_forward(pair, params: ParamSet | Autoencoder, mode=Mode.EVAL, cfg: AeConfig | None = None,
               input_shape=None):
    """Reconstruct both members of a pair with the shared weights."""
    s1, s2 = pair
    v1 = s1.values if isinstance(s1, Sample) else np.asarray(s1)
    v2 = s2.values if isinstance(s2, Sample) else np.asarray(s2)
    if v1.shape != v2.shape:
        raise ShapeMismatch(f"pair shapes {v1.shape} and {v2.shape} differ")
    if isinstance(params, Autoencoder):
        net = params
    else:
        net = Autoencoder(cfg or AeConfig(), input_shape or v1.shape, params.dtype, params=params)
    out, _ = net.branch_forward(np.stack([v1, v2]), mode)
    return out[0].reshape(v1.shape), out[1].reshape(v2.shape)


# ------------------------------------------------------------- training

def sample_pairs(labels: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One pass over shuffled anchors, alternating same-class and different-class partners."""
    n = len(labels)
    by_class = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    anchors = rng.permutation(n)
    partners = np.empty(n, dtype=np.int64)
    same = np.empty(n, dtype=np.int64)
    for k, a in enumerate(anchors):
        own = by_class[labels[a]]
        want_same = k % 2 == 0 and len(own) > 1
        if want_same:
            choice = own[rng.integers(len(own) - 1)]
            if choice == a:
                choice = own[-1]
            partners[k] = choice
        else:
            others = np.flatnonzero(labels != labels[a])
            partners[k] = others[rng.integers(len(others))]
        same[k] = int(labels[partners[k]] == labels[a])
    return anchors, partners, same


@dataclass
class AeEpochRecord:
    epoch: int
    loss: float
    mse: float
    contrastive: float


def output_correlation_stats(net: Autoencoder, dataset: Dataset) -> tuple[float, float]:
    """Mean output correlation over same-class and over cross-class sample pairs."""
    labels = dataset.labels()
    rec = net.reconstruct(dataset.stack()).reshape(len(dataset), -1).astype(np.float64)
    z = rec - rec.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(z, axis=1)
    z = z / np.where(norm > 0, norm, 1.0)[:, None]
    c = z @ z.T
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    same_mask = same & off
    cross_mask = ~same
    same_mean = float(c[same_mask].mean()) if same_mask.any() else float("nan")
    cross_mean = float(c[cross_mask].mean()) if cross_mask.any() else float("nan")
    return same_mean, cross_mean


def train_autoencoder(dataset: Dataset, cfg: AeConfig = AeConfig(), train_cfg: TrainConfig = TrainConfig(),
                      progress=None) -> tuple[ModelCheckpoint, list[AeEpochRecord]]:
    labels = dataset.labels() if len(dataset) else np.array([], dtype=np.int64)
    counts = np.bincount(labels, minlength=1) if len(labels) else np.array([])
    if np.sum(counts >= 2) < 2:
        raise InsufficientPairs("need at least two classes with two or more samples each")
    x = dataset.stack()
    net = Autoencoder(cfg, x.shape[1:], np.dtype(train_cfg.dtype), seed=train_cfg.seed)
    x = x.reshape(len(x), -1).astype(net.dtype)
    opt = Adam(train_cfg)
    rng = np.random.default_rng([train_cfg.seed, 11])
    history: list[AeEpochRecord] = []
    for epoch in range(1, train_cfg.epochs + 1):
        anchors, partners, same = sample_pairs(labels, rng)
        tot = mse_sum = con_sum = 0.0
        for i in range(0, len(anchors), train_cfg.batch_size):
            a = anchors[i:i + train_cfg.batch_size]
            b = partners[i:i + train_cfg.batch_size]
            loss, mse, con = net.loss_and_grads(x[a], x[b], same[i:i + train_cfg.batch_size])
            if not np.isfinite(loss):
                raise NumericError(f"autoencoder loss became non-finite at epoch {epoch}")
            opt.step(net.params)
            tot += loss * len(a)
            mse_sum += mse * len(a)
            con_sum += con * len(a)
        net.params.check_finite()
        n = len(anchors)
        history.append(AeEpochRecord(epoch, tot / n, mse_sum / n, con_sum / n))
        if progress is not None:
            progress(history[-1])
    return net.to_checkpoint(), history


def denoise(sample: Sample, ae_checkpoint: ModelCheckpoint | Autoencoder) -> Sample:
    """Replace a sample's values by their reconstruction; label and meta are kept."""
    net = ae_checkpoint if isinstance(ae_checkpoint, Autoencoder) else Autoencoder.from_checkpoint(ae_checkpoint)
    if sample.shape != net.input_shape:
        raise ShapeMismatch(f"sample shape {sample.shape} does not match autoencoder input {net.input_shape}")
    rec = net.reconstruct(sample.values[None])[0].astype(np.float64)
    return sample.replace(values=rec)


def denoise_dataset(dataset: Dataset, ae_checkpoint: ModelCheckpoint | Autoencoder) -> Dataset:
    net = ae_checkpoint if isinstance(ae_checkpoint, Autoencoder) else Autoencoder.from_checkpoint(ae_checkpoint)
    if len(dataset) and dataset.sample_shape != net.input_shape:
        raise ShapeMismatch(f"sample shape {dataset.sample_shape} does not match autoencoder input {net.input_shape}")
    if not len(dataset):
        return dataset
    rec = net.reconstruct(dataset.stack()).astype(np.float64)
    return Dataset(tuple(s.replace(values=r) for s, r in zip(dataset.samples, rec)), dataset.class_names)
