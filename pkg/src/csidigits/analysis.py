"""Correlation and DTW analytics over CSI samples."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch, TooShort, WidthMismatch


class Axis(str, enum.Enum):
    TEMPORAL = "Temporal"
    SPATIAL = "Spatial"


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    axis: Axis
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def pearson(x, y) -> float:
    """Pearson correlation; 0.0 when either input is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"lengths {x.size} and {y.size} differ")
    if x.size < 2:
        raise TooShort("pearson needs at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    return float(np.clip(float(dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


def _unit_rows(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centre and scale each row to unit norm; constant rows become zero."""
    d = m - m.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.sum(d * d, axis=1))
    live = norm > 0
    d[live] /= norm[live, None]
    d[~live] = 0.0
    return d, live


def _corr_rows(m: np.ndarray) -> np.ndarray:
    if m.shape[1] < 2:
        raise TooShort("pearson needs at least 2 points")
    z, live = _unit_rows(m)
    c = z @ z.T
    c = np.clip(0.5 * (c + c.T), -1.0, 1.0)
    np.fill_diagonal(c, live.astype(np.float64))
    return c


def temporal_corr_matrix(sample) -> CorrelationMatrix:
    """Pairwise correlation of subcarrier columns."""
    m = np.asarray(sample, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 2:
        raise TooShort("need a matrix with at least 2 subcarrier columns")
    return CorrelationMatrix(Axis.TEMPORAL, _corr_rows(m.T.copy()))


def spatial_corr_matrix(sample) -> CorrelationMatrix:
    """Pairwise correlation of measurement rows (subcarrier distributions)."""
    m = np.asarray(sample, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2:
        raise TooShort("need a matrix with at least 2 measurement rows")
    return CorrelationMatrix(Axis.SPATIAL, _corr_rows(m.copy()))


def column_mean_profile(m: CorrelationMatrix) -> np.ndarray:
    """Mean of each column with the diagonal entry left out."""
    v = np.asarray(m.values, dtype=np.float64)
    n = v.shape[0]
    if n == 1:
        return v[0].copy()
    return (v.sum(axis=0) - np.diag(v)) / (n - 1)


def cross_mean_pcc(a, b) -> float:
    """Mean correlation over every (row of a, row of b) pair."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptyInput("both sequences need at least one row")
    if a.shape[1] != b.shape[1]:
        raise WidthMismatch(f"widths {a.shape[1]} and {b.shape[1]} differ")
    if a.shape[1] < 2:
        raise TooShort("pearson needs at least 2 points")
    za, _ = _unit_rows(a.copy())
    zb, _ = _unit_rows(b.copy())
    return float(np.mean(np.clip(za @ zb.T, -1.0, 1.0)))


def _dtw_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Classic DTW cost for each column pair, vectorised over columns."""
    n, m = a.shape[0], b.shape[0]
    inf = np.full(a.shape[1], np.inf)
    prev = np.empty((m + 1, a.shape[1]))
    prev[:] = np.inf
    prev[0] = 0.0
    for i in range(n):
        cost = np.abs(a[i][None, :] - b)
        cur = np.empty_like(prev)
        cur[0] = inf
        for j in range(m):
            cur[j + 1] = cost[j] + np.minimum(np.minimum(prev[j], prev[j + 1]), cur[j])
        prev = cur
    return prev[m]


def dtw_distance(a, b) -> float:
    """Mean over subcarriers of the per-column DTW distance (|a-b| local cost, no band).

    Inputs are (length, subcarriers) matrices, or vectors for a single column.
    Lengths may differ; widths must match.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0 or a.shape[1] == 0:
        raise EmptyInput("dtw_distance needs non-empty inputs")
    if a.shape[1] != b.shape[1]:
        raise WidthMismatch(f"widths {a.shape[1]} and {b.shape[1]} differ")
    return float(np.mean(_dtw_columns(a, b)))
