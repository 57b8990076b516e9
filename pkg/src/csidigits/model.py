"""Core CSI types, the CSV interchange format and binary model checkpoints."""
from __future__ import annotations

import csv
import enum
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence, TextIO

import numpy as np

from .errors import (
    CorruptPayload,
    DataError,
    EmptyFile,
    LayoutMismatch,
    MalformedRow,
    NonMonotonicTimestamp,
    VersionMismatch,
)

DEFAULT_CLASS_NAMES = tuple(str(d) for d in range(10)) + ("silence",)
SILENCE = "silence"

# BW20 guard bands and DC, expressed as signed subcarrier indices.
BW20_GUARD_DC = (-32, -31, -30, -29, 0, 29, 30, 31)
BW20_PILOTS = (-21, -7, 7, 21)


class Bandwidth(str, enum.Enum):
    BW20 = "BW20"


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SubcarrierLayout:
    """Which subcarriers of a capture survive selection.

    Column ``k`` of a raw frame carries subcarrier index ``k - total // 2``,
    so for BW20 the columns ``a0..a63`` map to indices ``-32..31``.
    """

    total_subcarriers: int = 64
    excluded_indices: tuple[int, ...] = BW20_GUARD_DC
    bandwidth_tag: Bandwidth = Bandwidth.BW20

    def __post_init__(self):
        if self.total_subcarriers < 1:
            raise LayoutMismatch("total_subcarriers must be positive")
        excl = tuple(sorted(set(int(i) for i in self.excluded_indices)))
        lo, hi = -(self.total_subcarriers // 2), self.total_subcarriers - self.total_subcarriers // 2 - 1
        bad = [i for i in excl if i < lo or i > hi]
        if bad:
            raise LayoutMismatch(f"excluded indices {bad} outside [{lo}, {hi}]")
        object.__setattr__(self, "excluded_indices", excl)
        object.__setattr__(self, "bandwidth_tag", Bandwidth(self.bandwidth_tag))

    @classmethod
    def raw(cls, width: int) -> "SubcarrierLayout":
        """Layout of an unselected capture: nothing excluded."""
        return cls(total_subcarriers=width, excluded_indices=())

    @classmethod
    def bw20(cls, exclude_pilots: bool = False) -> "SubcarrierLayout":
        excl = BW20_GUARD_DC + (BW20_PILOTS if exclude_pilots else ())
        return cls(64, excl)

    @property
    def retained_count(self) -> int:
        return self.total_subcarriers - len(self.excluded_indices)

    def index_of_column(self, col: int) -> int:
        return col - self.total_subcarriers // 2

    def retained_columns(self) -> np.ndarray:
        excl = set(self.excluded_indices)
        return np.array(
            [c for c in range(self.total_subcarriers) if self.index_of_column(c) not in excl],
            dtype=np.intp,
        )

    def with_excluded(self, extra: Iterable[int]) -> "SubcarrierLayout":
        return SubcarrierLayout(
            self.total_subcarriers, tuple(self.excluded_indices) + tuple(extra), self.bandwidth_tag
        )


@dataclass(frozen=True, eq=False)
class CsiFrame:
    timestamp_us: int
    source_id: str
    amplitudes: np.ndarray

    def __post_init__(self):
        if "," in self.source_id or "\n" in self.source_id or "\r" in self.source_id:
            raise MalformedRow(f"source_id {self.source_id!r} contains a separator")
        amps = _frozen_array(self.amplitudes)
        if amps.ndim != 1:
            raise MalformedRow("amplitudes must be a vector")
        if not np.all(np.isfinite(amps)) or np.any(amps < 0):
            raise MalformedRow("amplitudes must be finite and non-negative")
        object.__setattr__(self, "timestamp_us", int(self.timestamp_us))
        object.__setattr__(self, "amplitudes", amps)

    def __eq__(self, other):
        if not isinstance(other, CsiFrame):
            return NotImplemented
        return (
            self.timestamp_us == other.timestamp_us
            and self.source_id == other.source_id
            and np.array_equal(self.amplitudes, other.amplitudes)
        )


class CsiSequence:
    """Ordered CSI measurements, stored column-wise for speed.

    ``amplitudes`` is a read-only (frames x subcarriers) matrix whose width
    always equals ``layout.retained_count``.
    """

    def __init__(self, layout: SubcarrierLayout, timestamps_us, source_ids: Sequence[str], amplitudes):
        ts = np.asarray(timestamps_us, dtype=np.int64).reshape(-1)
        amps = np.array(amplitudes, dtype=np.float64, copy=True)
        if amps.size == 0:
            amps = amps.reshape(len(ts), layout.retained_count)
        if amps.ndim != 2 or amps.shape[0] != len(ts) or len(source_ids) != len(ts):
            raise MalformedRow("timestamps, source ids and amplitude rows differ in count")
        if amps.shape[1] != layout.retained_count:
            raise LayoutMismatch(
                f"frames carry {amps.shape[1]} amplitudes, layout expects {layout.retained_count}"
            )
        if not np.all(np.isfinite(amps)) or np.any(amps < 0):
            raise MalformedRow("amplitudes must be finite and non-negative")
        if len(ts) > 1 and np.any(np.diff(ts) < 0):
            k = int(np.argmax(np.diff(ts) < 0)) + 1
            raise NonMonotonicTimestamp(f"timestamp decreases at frame {k}")
        ts.setflags(write=False)
        amps.setflags(write=False)
        self.layout = layout
        self.timestamps_us = ts
        self.source_ids = tuple(str(s) for s in source_ids)
        self.amplitudes = amps

    @classmethod
    def from_frames(cls, layout: SubcarrierLayout, frames: Sequence[CsiFrame]) -> "CsiSequence":
        width = layout.retained_count
        mat = np.array([f.amplitudes for f in frames], dtype=np.float64).reshape(len(frames), width) if frames else np.zeros((0, width))
        return cls(layout, [f.timestamp_us for f in frames], [f.source_id for f in frames], mat)

    @property
    def frames(self) -> list[CsiFrame]:
        return [
            CsiFrame(int(t), s, a)
            for t, s, a in zip(self.timestamps_us, self.source_ids, self.amplitudes)
        ]

    @property
    def width(self) -> int:
        return self.layout.retained_count

    def __len__(self) -> int:
        return len(self.timestamps_us)

    def __eq__(self, other):
        if not isinstance(other, CsiSequence):
            return NotImplemented
        return (
            self.layout == other.layout
            and np.array_equal(self.timestamps_us, other.timestamps_us)
            and self.source_ids == other.source_ids
            and np.array_equal(self.amplitudes, other.amplitudes)
        )

    def __repr__(self) -> str:
        return f"CsiSequence(frames={len(self)}, width={self.width})"


@dataclass(frozen=True, eq=False)
class Sample:
    """One N_t x N_s amplitude matrix (rows are measurements)."""

    values: np.ndarray
    label: int | None = None
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        vals = _frozen_array(self.values)
        if vals.ndim != 2:
            raise DataError(f"sample must be a matrix, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError("sample contains non-finite values")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "label", None if self.label is None else int(self.label))
        object.__setattr__(self, "meta", {str(k): str(v) for k, v in dict(self.meta).items()})

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def replace(self, values=None, label=..., meta=None) -> "Sample":
        return Sample(
            self.values if values is None else values,
            self.label if label is ... else label,
            self.meta if meta is None else meta,
        )

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.label == other.label
            and dict(self.meta) == dict(other.meta)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True)
class Dataset:
    samples: tuple[Sample, ...]
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        samples = tuple(self.samples)
        names = tuple(self.class_names)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "class_names", names)
        shapes = {s.shape for s in samples}
        if len(shapes) > 1:
            raise DataError(f"samples have differing shapes: {sorted(shapes)}")
        for s in samples:
            if s.label is not None and not 0 <= s.label < len(names):
                raise DataError(f"label {s.label} outside [0, {len(names)})")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def sample_shape(self) -> tuple[int, int] | None:
        return self.samples[0].shape if self.samples else None

    def __len__(self) -> int:
        return len(self.samples)

    def stack(self) -> np.ndarray:
        """All sample values as a (B, N_t, N_s) array."""
        if not self.samples:
            raise DataError("empty dataset")
        return np.stack([s.values for s in self.samples])

    def labels(self) -> np.ndarray:
        if any(s.label is None for s in self.samples):
            from .errors import UnlabeledSample

            raise UnlabeledSample("dataset contains unlabeled samples")
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.class_names)

    def class_counts(self) -> dict[int, int]:
        counts = {c: 0 for c in range(self.num_classes)}
        for s in self.samples:
            if s.label is not None:
                counts[s.label] += 1
        return counts


# ---------------------------------------------------------------- CSI CSV

def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def parse_csi_file(source: bytes | str | BinaryIO | TextIO) -> CsiSequence:
    """Parse the CSI CSV format into an unselected sequence.

    The header must read ``timestamp_us,source_id,a0,...,a{N-1}``.
    """
    text = _read_text(source)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip():
        raise EmptyFile("no header line")
    header = lines[0].rstrip("\r").split(",")
    width = len(header) - 2
    expected = ["timestamp_us", "source_id"] + [f"a{i}" for i in range(width)]
    if width < 1 or header != expected:
        raise MalformedRow(f"bad header: {lines[0]!r}")

    n = len(lines) - 1
    ts = np.empty(n, dtype=np.int64)
    amps = np.empty((n, width), dtype=np.float64)
    sources = []
    for k, line in enumerate(lines[1:]):
        fields = line.rstrip("\r").split(",")
        if len(fields) != width + 2:
            raise MalformedRow(f"row {k + 1}: expected {width + 2} fields, got {len(fields)}")
        try:
            ts[k] = int(fields[0])
            row = [float(v) for v in fields[2:]]
        except ValueError as exc:
            raise MalformedRow(f"row {k + 1}: {exc}") from None
        if not all(math.isfinite(v) and v >= 0 for v in row):
            raise MalformedRow(f"row {k + 1}: amplitudes must be finite and >= 0")
        if k and ts[k] < ts[k - 1]:
            raise NonMonotonicTimestamp(f"row {k + 1}: timestamp {ts[k]} < {ts[k - 1]}")
        amps[k] = row
        sources.append(fields[1])
    return CsiSequence(SubcarrierLayout.raw(width), ts, sources, amps)


def write_csi_file(seq: CsiSequence) -> bytes:
    """Inverse of :func:`parse_csi_file`; floats use shortest round-trip repr."""
    width = seq.layout.retained_count
    out = io.StringIO()
    out.write(",".join(["timestamp_us", "source_id"] + [f"a{i}" for i in range(width)]))
    out.write("\n")
    for t, s, row in zip(seq.timestamps_us, seq.source_ids, seq.amplitudes):
        out.write(f"{int(t)},{s},")
        out.write(",".join(repr(float(v)) for v in row))
        out.write("\n")
    return out.getvalue().encode("utf-8")


# ------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"CSI2DIGCKPT"
CHECKPOINT_VERSION = 1


class CheckpointKind(str, enum.Enum):
    AUTOENCODER = "Autoencoder"
    TSNET = "TsNet"


def _jsonable(value):
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass(frozen=True, eq=False)
class ModelCheckpoint:
    kind: CheckpointKind
    hyperparams: Mapping[str, object]
    tensors: tuple[tuple[str, np.ndarray], ...]
    format_version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "kind", CheckpointKind(self.kind))
        object.__setattr__(self, "hyperparams", _jsonable(dict(self.hyperparams)))
        tensors = []
        for name, arr in self.tensors:
            a = np.array(arr, dtype="<f4", copy=True)
            a.setflags(write=False)
            tensors.append((str(name), a))
        names = [n for n, _ in tensors]
        if len(set(names)) != len(names):
            raise DataError("duplicate tensor names in checkpoint")
        object.__setattr__(self, "tensors", tuple(tensors))

    def tensor_map(self) -> dict[str, np.ndarray]:
        return dict(self.tensors)

    def __eq__(self, other):
        if not isinstance(other, ModelCheckpoint):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.format_version == other.format_version
            and self.hyperparams == other.hyperparams
            and len(self.tensors) == len(other.tensors)
            and all(
                n1 == n2 and a1.shape == a2.shape and a1.tobytes() == a2.tobytes()
                for (n1, a1), (n2, a2) in zip(self.tensors, other.tensors)
            )
        )


def save_checkpoint(model: ModelCheckpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", model.format_version, len(model.tensors)))
    for name, arr in model.tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    block = {"__kind__": model.kind.value, **model.hyperparams}
    meta = json.dumps(block, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptPayload(f"need {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(data: bytes) -> ModelCheckpoint:
    r = _Reader(bytes(data))
    if r.take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CorruptPayload("bad magic")
    version, count = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    tensors = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        tensors.append((name, arr))
    (meta_len,) = r.unpack("<I")
    try:
        block = json.loads(r.take(meta_len).decode("utf-8"))
        kind = block.pop("__kind__")
    except (ValueError, KeyError) as exc:
        raise CorruptPayload(f"bad hyperparameter block: {exc}") from None
    if r.pos != len(r.data):
        raise CorruptPayload(f"{len(r.data) - r.pos} trailing bytes")
    return ModelCheckpoint(kind, block, tuple(tensors), version)


# ------------------------------------------------------- sample directories

MANIFEST_FIELDS = ("file", "label", "device", "distance", "volume")


def write_sample_dir(dataset: Dataset, directory: str | Path) -> None:
    """Write one headerless CSV matrix per sample plus ``manifest.csv``.

    Labels are written as class ids (empty when unknown); ``classes.txt``
    lists the class names one per line.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "classes.txt").write_text("\n".join(dataset.class_names) + "\n", encoding="utf-8")
    with open(d / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for k, s in enumerate(dataset.samples):
            name = f"sample_{k:05d}.csv"
            w.writerow([
                name,
                "" if s.label is None else s.label,
                s.meta.get("device", ""),
                s.meta.get("distance", ""),
                s.meta.get("volume", ""),
            ])
            rows = "\n".join(",".join(repr(float(v)) for v in row) for row in s.values)
            (d / name).write_text(rows + "\n", encoding="utf-8")


def read_sample_dir(directory: str | Path) -> Dataset:
    d = Path(directory)
    manifest = d / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"{manifest} not found")
    classes = d / "classes.txt"
    names = (
        tuple(l for l in classes.read_text(encoding="utf-8").split("\n") if l)
        if classes.exists()
        else DEFAULT_CLASS_NAMES
    )
    samples = []
    with open(manifest, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise MalformedRow(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            try:
                values = np.loadtxt(d / row["file"], delimiter=",", ndmin=2)
            except (OSError, ValueError) as exc:
                raise MalformedRow(f"{row['file']}: {exc}") from None
            meta = {k: row[k] for k in ("device", "distance", "volume") if row[k]}
            label = int(row["label"]) if row["label"] else None
            samples.append(Sample(values, label, meta))
    return Dataset(tuple(samples), names)
