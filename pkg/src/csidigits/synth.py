"""Seeded synthetic CSI captures with known per-window class labels.

Each 2-second window of a non-silence class adds a burst ``A * g_c * env(t)``
on top of a per-subcarrier baseline, where ``g_c`` is a fixed class
signature over subcarriers and ``env`` a smooth bump with a loosely
class-dependent width. Class identity therefore lives in the subcarrier
distribution, not in the temporal waveform.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AllWindowsDropped, DataError
from .model import DEFAULT_CLASS_NAMES, SILENCE, CsiSequence, Dataset, SubcarrierLayout
from .preprocess import SegmentationConfig, normalize_sample, segment, select_subcarriers

MAX_SIGNATURE_COSINE = 0.9


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 11
    subcarriers: int = 64
    rate_hz: float = 100.0
    rate_jitter: tuple[float, float] = (60.0, 150.0)
    burst_amplitude: float = 3.0
    noise_sigma: float = 1.0
    drop_probability: float = 0.0
    window_seconds: float = 2.0
    repetitions: int = 30
    seed: int = 0
    baseline_level: float = 20.0
    drift_amplitude: float = 0.5
    envelope_width: float = 0.25
    envelope_jitter: float = 0.6
    silence_class: bool = True
    source_id: str = "synth0"

    def __post_init__(self):
        object.__setattr__(self, "rate_jitter", tuple(float(v) for v in self.rate_jitter))
        lo, hi = self.rate_jitter
        if not lo <= self.rate_hz <= hi:
            raise DataError(f"rate_hz {self.rate_hz} outside jitter range {self.rate_jitter}")
        if not 0 <= self.drop_probability < 1:
            raise DataError("drop_probability must lie in [0, 1)")
        if self.num_classes < 1 or self.subcarriers < 2 or self.repetitions < 1:
            raise DataError("num_classes, subcarriers and repetitions must be positive")
        if self.noise_sigma < 0 or self.burst_amplitude < 0:
            raise DataError("noise_sigma and burst_amplitude must be >= 0")

    @property
    def class_names(self) -> tuple[str, ...]:
        if self.num_classes == len(DEFAULT_CLASS_NAMES) and self.silence_class:
            return DEFAULT_CLASS_NAMES
        names = [str(c) for c in range(self.num_classes)]
        if self.silence_class:
            names[-1] = SILENCE
        return tuple(names)

    @property
    def silence_label(self) -> int | None:
        return self.num_classes - 1 if self.silence_class else None


@dataclass(frozen=True, eq=False)
class SignalModel:
    """Everything drawn once per spec: baseline, drift profile and class signatures."""

    baseline: np.ndarray
    drift_gain: np.ndarray
    drift_phase: float
    signatures: np.ndarray
    widths: np.ndarray


def _signatures(rng, num, width) -> np.ndarray:
    sigs = []
    while len(sigs) < num:
        cand = rng.normal(size=width)
        cand /= np.linalg.norm(cand)
        if all(abs(float(cand @ s)) < MAX_SIGNATURE_COSINE for s in sigs):
            sigs.append(cand)
    return np.array(sigs).reshape(num, width)


def signal_model(spec: SynthSpec) -> SignalModel:
    rng = np.random.default_rng([spec.seed, 100])
    n = spec.subcarriers
    k = np.arange(n)
    baseline = spec.baseline_level * (1 + 0.15 * np.sin(2 * np.pi * k / n * 1.5 + rng.uniform(0, 2 * np.pi)))
    baseline = baseline + rng.uniform(-1, 1, n)
    drift_gain = 1 + 0.2 * rng.normal(size=n)
    drift_phase = float(rng.uniform(0, 2 * np.pi))
    n_sig = spec.num_classes - (1 if spec.silence_class else 0)
    signatures = _signatures(rng, n_sig, n) * np.sqrt(n)
    widths = spec.envelope_width * (1 + 0.15 * (np.arange(max(n_sig, 1)) % 3))
    return SignalModel(baseline, drift_gain, drift_phase, signatures, widths)


def analytic_signal(spec: SynthSpec, model: SignalModel, label: int, times_s: np.ndarray,
                    window_start_s: float, center_s: float, ripple_hz: float, ripple_phase: float) -> np.ndarray:
    """Noise-free amplitudes (frames x subcarriers) at absolute times ``times_s``."""
    t = np.asarray(times_s, dtype=np.float64)
    drift = spec.drift_amplitude * np.sin(2 * np.pi * t / 37.0 + model.drift_phase)
    amp = model.baseline[None, :] + drift[:, None] * model.drift_gain[None, :]
    if label != spec.silence_label:
        rel = t - window_start_s
        width = model.widths[label]
        env = np.exp(-0.5 * ((rel - center_s) / width) ** 2)
        env = env * (0.75 + 0.25 * np.cos(2 * np.pi * ripple_hz * rel + ripple_phase))
        amp = amp + spec.burst_amplitude * env[:, None] * model.signatures[label][None, :]
    return np.maximum(amp, 0.0)


@dataclass(frozen=True, eq=False)
class Capture:
    sequence: CsiSequence
    window_labels: np.ndarray
    clean: np.ndarray = field(repr=False)


def window_labels(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 101])
    labels = np.repeat(np.arange(spec.num_classes), spec.repetitions)
    return rng.permutation(labels)


def generate(spec: SynthSpec = SynthSpec()) -> Capture:
    """Synthesise a raw capture plus the label of every window.

    The very first frame is never dropped so that segmentation windows,
    anchored at the first timestamp, coincide with the generator's windows.
    """
    model = signal_model(spec)
    labels = window_labels(spec)
    rng = np.random.default_rng([spec.seed, 102])
    lo, hi = spec.rate_jitter
    ts_all, clean_all = [], []
    for w, label in enumerate(labels):
        start = w * spec.window_seconds
        rate = float(np.clip(spec.rate_hz * np.exp(rng.normal(0, 0.2)), lo, hi))
        n_max = int(spec.window_seconds * rate * 2) + 4
        gaps = rng.uniform(0.5, 1.5, n_max) / rate
        offsets = np.concatenate([[0.0], np.cumsum(gaps)])
        offsets = offsets[offsets < spec.window_seconds]
        t_us = np.round((start + offsets) * 1e6).astype(np.int64)
        keep = rng.random(len(t_us)) >= spec.drop_probability
        if w == 0:
            keep[0] = True
        center = spec.window_seconds / 2 + rng.uniform(-spec.envelope_jitter, spec.envelope_jitter)
        ripple_hz = rng.uniform(5, 15)
        ripple_phase = rng.uniform(0, 2 * np.pi)
        t_us = t_us[keep]
        ts_all.append(t_us)
        clean_all.append(analytic_signal(spec, model, int(label), t_us / 1e6, start, center, ripple_hz, ripple_phase))
    ts = np.concatenate(ts_all)
    clean = np.concatenate(clean_all).reshape(len(ts), spec.subcarriers)
    noise = rng.normal(0, spec.noise_sigma, clean.shape) if spec.noise_sigma > 0 else 0.0
    amps = np.maximum(clean + noise, 0.0)
    seq = CsiSequence(SubcarrierLayout.raw(spec.subcarriers), ts, [spec.source_id] * len(ts), amps)
    return Capture(seq, labels, clean)


def default_layout(spec: SynthSpec) -> SubcarrierLayout:
    if spec.subcarriers == 64:
        return SubcarrierLayout.bw20()
    return SubcarrierLayout.raw(spec.subcarriers)


def label_samples(samples, labels: np.ndarray):
    out = []
    for s in samples:
        w = int(s.meta["window"])
        if w < len(labels):
            out.append(s.replace(label=int(labels[w])))
    return out


def make_fixture_dataset(spec: SynthSpec = SynthSpec(), layout: SubcarrierLayout | None = None,
                         seg: SegmentationConfig | None = None) -> Dataset:
    """generate -> select_subcarriers -> segment -> normalize, with ground-truth labels."""
    cap = generate(spec)
    layout = layout or default_layout(spec)
    seg = seg or SegmentationConfig(window_seconds=spec.window_seconds, n_norm=int(round(spec.rate_hz * spec.window_seconds)))
    selected = select_subcarriers(cap.sequence, layout)
    samples = label_samples(segment(selected, seg), cap.window_labels)
    if not samples:
        raise AllWindowsDropped("every window was discarded during segmentation")
    return Dataset(tuple(normalize_sample(s) for s in samples), spec.class_names)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Per-class shuffled split; every class with >= 2 samples lands in both halves."""
    if not 0 <= test_fraction < 1:
        raise DataError("test_fraction must lie in [0, 1)")
    labels = dataset.labels()
    rng = np.random.default_rng([seed, 103])
    train_idx, test_idx = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(len(idx) * test_fraction))
        if len(idx) >= 2 and test_fraction > 0:
            n_test = min(max(n_test, 1), len(idx) - 1)
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    return dataset.subset(sorted(train_idx)), dataset.subset(sorted(test_idx))


def spec_to_dict(spec: SynthSpec) -> dict:
    d = asdict(spec)
    d["rate_jitter"] = list(spec.rate_jitter)
    return d
