"""Subcarrier selection, fixed-window segmentation, normalization and wavelet denoising."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pywt

from .errors import (
    DataError,
    EmptySequence,
    LayoutMismatch,
    NonIncreasingTimestamps,
    SeriesTooShort,
    TooFewRows,
)
from .model import CsiSequence, Sample, SubcarrierLayout


@dataclass(frozen=True)
class SegmentationConfig:
    window_seconds: float = 2.0
    n_norm: int = 200
    discard_threshold_fraction: float = 0.5

    def __post_init__(self):
        if self.n_norm < 2:
            raise DataError("n_norm must be >= 2")
        if not 0 < self.discard_threshold_fraction < 1:
            raise DataError("discard_threshold_fraction must lie in (0, 1)")
        if not self.window_seconds > 0:
            raise DataError("window_seconds must be positive")


@dataclass(frozen=True)
class WaveletConfig:
    family: str = "db4"
    levels: int = 3
    threshold_rule: str = "SoftUniversal"
    enabled: bool = False

    def __post_init__(self):
        if self.family not in ("db4", "Daubechies4"):
            raise DataError(f"unsupported wavelet family {self.family!r}")
        if self.threshold_rule != "SoftUniversal":
            raise DataError(f"unsupported threshold rule {self.threshold_rule!r}")
        if self.levels < 1:
            raise DataError("levels must be >= 1")


def select_subcarriers(seq: CsiSequence, layout: SubcarrierLayout) -> CsiSequence:
    """Drop the excluded subcarriers, keeping column order."""
    if seq.width != layout.total_subcarriers:
        raise LayoutMismatch(
            f"frames are {seq.width} wide, layout expects {layout.total_subcarriers}"
        )
    cols = layout.retained_columns()
    return CsiSequence(layout, seq.timestamps_us, seq.source_ids, seq.amplitudes[:, cols])


def high_frequency_fraction(matrix: np.ndarray) -> np.ndarray:
    """Per column: sum of squared first differences over total variation about the mean."""
    m = np.asarray(matrix, dtype=np.float64)
    num = np.sum(np.diff(m, axis=0) ** 2, axis=0)
    den = np.sum((m - m.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def burr_exclusions(
    silence: CsiSequence, layout: SubcarrierLayout, percentile: float = 99.0
) -> SubcarrierLayout:
    """Extend ``layout`` with subcarriers whose high-frequency energy is an outlier.

    ``silence`` is a raw (unselected) calibration capture recorded with no audio.
    """
    selected = select_subcarriers(silence, layout)
    frac = high_frequency_fraction(selected.amplitudes)
    cutoff = np.percentile(frac, percentile)
    cols = layout.retained_columns()
    noisy = [layout.index_of_column(int(c)) for c, f in zip(cols, frac) if f > cutoff]
    return layout.with_excluded(noisy)


def interpolate_rows(matrix: np.ndarray, target: int) -> np.ndarray:
    """Stretch N rows onto ``target`` rows by per-column linear interpolation."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    if n < 2:
        raise TooFewRows(f"need at least 2 rows, got {n}")
    if target < n:
        raise DataError(f"target {target} smaller than row count {n}")
    if target == n:
        return m.copy()
    grid = np.linspace(0.0, n - 1.0, target)
    src = np.arange(n, dtype=np.float64)
    return np.column_stack([np.interp(grid, src, m[:, j]) for j in range(m.shape[1])]).reshape(target, m.shape[1])


def resample_rows(matrix: np.ndarray, timestamps, target: int) -> np.ndarray:
    """Evaluate rows at ``target`` evenly spaced instants spanning the timestamps."""
    m = np.asarray(matrix, dtype=np.float64)
    t = np.asarray(timestamps, dtype=np.float64)
    if t.shape[0] != m.shape[0]:
        raise DataError("timestamps and rows differ in count")
    if np.any(np.diff(t) <= 0):
        raise NonIncreasingTimestamps("timestamps must be strictly increasing")
    if target < 2:
        raise DataError("target must be >= 2")
    grid = np.linspace(t[0], t[-1], target)
    return np.column_stack([np.interp(grid, t, m[:, j]) for j in range(m.shape[1])]).reshape(target, m.shape[1])


def _merge_duplicate_times(rows: np.ndarray, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse, counts = np.unique(ts, return_inverse=True, return_counts=True)
    if len(uniq) == len(ts):
        return rows, ts
    merged = np.zeros((len(uniq), rows.shape[1]))
    np.add.at(merged, inverse, rows)
    return merged / counts[:, None], uniq


def normalize_window(rows: np.ndarray, ts: np.ndarray, cfg: SegmentationConfig) -> np.ndarray | None:
    """Bring one window to exactly ``n_norm`` rows, or return None to discard it."""
    n = rows.shape[0]
    target = cfg.n_norm
    if n < 2 or n < cfg.discard_threshold_fraction * target:
        return None
    if n < target:
        return interpolate_rows(rows, target)
    if n == target:
        return rows.copy()
    rows, ts = _merge_duplicate_times(rows, ts)
    if rows.shape[0] < 2:
        return None
    if rows.shape[0] <= target:
        return interpolate_rows(rows, target)
    return resample_rows(rows, ts, target)


def segment(seq: CsiSequence, cfg: SegmentationConfig = SegmentationConfig()) -> list[Sample]:
    """Cut a selected sequence into fixed-duration windows of ``n_norm`` rows.

    Windows are anchored at the first timestamp; there are ``ceil(span / window)``
    of them (at least one) and a frame falling exactly on the end of the span
    belongs to the last window. Each Sample's meta records ``window`` (index),
    ``t_start_us``, ``frames`` (raw count) and ``device``.
    """
    if len(seq) == 0:
        raise EmptySequence("cannot segment an empty sequence")
    ts = seq.timestamps_us
    window_us = cfg.window_seconds * 1e6
    span = float(ts[-1] - ts[0])
    n_windows = max(1, math.ceil(span / window_us))
    idx = np.minimum(((ts - ts[0]) // window_us).astype(np.int64), n_windows - 1)
    bounds = np.searchsorted(idx, np.arange(n_windows + 1))
    samples = []
    for k in range(n_windows):
        lo, hi = bounds[k], bounds[k + 1]
        out = normalize_window(seq.amplitudes[lo:hi], ts[lo:hi], cfg)
        if out is None:
            continue
        meta = {
            "window": str(k),
            "t_start_us": str(int(ts[0] + k * window_us)),
            "frames": str(hi - lo),
            "device": seq.source_ids[lo],
        }
        samples.append(Sample(out, None, meta))
    return samples


def zscore_columns(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    mu = m.mean(axis=0)
    centered = m - mu
    sd = np.sqrt(np.mean(centered ** 2, axis=0))
    out = np.zeros_like(centered)
    live = (sd > 0) & (np.ptp(m, axis=0) > 0)
    out[:, live] = centered[:, live] / sd[live]
    return out


def normalize_sample(s: Sample) -> Sample:
    """Z-score every subcarrier column (population sigma); constant columns become zero."""
    return s.replace(values=zscore_columns(s.values))


def _max_level(n: int) -> int:
    return int(math.floor(math.log2(n))) if n >= 1 else 0


def wavelet_denoise(series, cfg: WaveletConfig = WaveletConfig(), threshold: float | None = None) -> np.ndarray:
    """Soft-threshold the detail coefficients of a multi-level db4 decomposition.

    The universal threshold ``sigma * sqrt(2 ln n)`` uses ``sigma = median(|d1|) / 0.6745``
    from the finest detail band. Pass ``threshold`` to override it (0 gives
    a pure decompose/reconstruct round trip).
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 2 ** cfg.levels or cfg.levels > _max_level(n):
        raise SeriesTooShort(f"length {n} too short for {cfg.levels} levels")
    with warnings.catch_warnings():
        # pywt warns about boundary effects on short series; periodization stays exact
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(x, "db4", mode="periodization", level=cfg.levels)
    if threshold is None:
        sigma = np.median(np.abs(coeffs[-1])) / 0.6745
        threshold = sigma * math.sqrt(2.0 * math.log(n))
    if threshold > 0:
        coeffs = [coeffs[0]] + [pywt.threshold(c, threshold, mode="soft") for c in coeffs[1:]]
    return pywt.waverec(coeffs, "db4", mode="periodization")[:n]


def wavelet_denoise_sample(s: Sample, cfg: WaveletConfig) -> Sample:
    if not cfg.enabled:
        return s
    cols = [wavelet_denoise(s.values[:, j], cfg) for j in range(s.values.shape[1])]
    return s.replace(values=np.column_stack(cols))
