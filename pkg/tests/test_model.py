import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csidigits.errors import (
    CorruptPayload,
    EmptyFile,
    LayoutMismatch,
    MalformedRow,
    NonMonotonicTimestamp,
    VersionMismatch,
)
from csidigits.model import (
    CheckpointKind,
    CsiFrame,
    CsiSequence,
    Dataset,
    ModelCheckpoint,
    Sample,
    SubcarrierLayout,
    load_checkpoint,
    parse_csi_file,
    read_sample_dir,
    save_checkpoint,
    write_csi_file,
    write_sample_dir,
)


def test_parse_single_row():
    seq = parse_csi_file(b"timestamp_us,source_id,a0,a1\n0,dev0,1.0,2.0\n")
    assert len(seq) == 1
    (frame,) = seq.frames
    assert frame.timestamp_us == 0
    assert frame.source_id == "dev0"
    assert frame.amplitudes.tolist() == [1.0, 2.0]


def test_parse_accepts_streams():
    text = "timestamp_us,source_id,a0\n5,x,3.5\n"
    assert parse_csi_file(io.StringIO(text)) == parse_csi_file(io.BytesIO(text.encode()))


def test_negative_amplitude_rejected():
    with pytest.raises(MalformedRow):
        parse_csi_file(b"timestamp_us,source_id,a0,a1\n0,dev0,-1.0,2.0\n")


@pytest.mark.parametrize("row", ["0,dev0,1.0", "0,dev0,1.0,abc", "x,dev0,1.0,2.0", "0,dev0,nan,1.0"])
def test_malformed_rows(row):
    with pytest.raises(MalformedRow):
        parse_csi_file(f"timestamp_us,source_id,a0,a1\n{row}\n")


def test_bad_header():
    with pytest.raises(MalformedRow):
        parse_csi_file(b"time,source_id,a0\n0,d,1\n")


def test_non_monotonic():
    with pytest.raises(NonMonotonicTimestamp):
        parse_csi_file(b"timestamp_us,source_id,a0\n10,d,1\n5,d,1\n")


def test_empty_file():
    with pytest.raises(EmptyFile):
        parse_csi_file(b"")


def test_write_empty_sequence_is_header_only():
    seq = CsiSequence(SubcarrierLayout.raw(3), [], [], np.zeros((0, 3)))
    assert write_csi_file(seq) == b"timestamp_us,source_id,a0,a1,a2\n"
    assert parse_csi_file(write_csi_file(seq)) == seq


def test_write_single_frame():
    seq = CsiSequence.from_frames(SubcarrierLayout.raw(2), [CsiFrame(7, "d", [0.5, 1.25])])
    lines = write_csi_file(seq).decode().splitlines()
    assert lines[1] == "7,d,0.5,1.25"


amplitude = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def sequences(draw, max_frames=40):
    width = draw(st.integers(1, 6))
    n = draw(st.integers(0, max_frames))
    gaps = draw(st.lists(st.integers(0, 10_000), min_size=n, max_size=n))
    ts = np.cumsum(gaps).astype(np.int64) if n else np.zeros(0, dtype=np.int64)
    amps = draw(st.lists(st.lists(amplitude, min_size=width, max_size=width), min_size=n, max_size=n))
    src = draw(st.lists(st.text("abcXYZ019_-", min_size=1, max_size=5), min_size=n, max_size=n))
    return CsiSequence(SubcarrierLayout.raw(width), ts, src, np.array(amps, dtype=float).reshape(n, width))


@settings(max_examples=60, deadline=None)
@given(sequences())
def test_csv_round_trip(seq):
    assert parse_csi_file(write_csi_file(seq)) == seq


def test_csv_round_trip_1000_rows():
    rng = np.random.default_rng(5)
    ts = np.cumsum(rng.integers(1, 20_000, 1000))
    amps = rng.exponential(10.0, size=(1000, 56))
    seq = CsiSequence(SubcarrierLayout.raw(56), ts, ["dev0"] * 1000, amps)
    back = parse_csi_file(write_csi_file(seq))
    assert back == seq
    assert np.array_equal(back.amplitudes, amps)


def test_layout_counts():
    bw20 = SubcarrierLayout.bw20()
    assert bw20.retained_count == 56
    assert SubcarrierLayout.bw20(exclude_pilots=True).retained_count == 52
    with pytest.raises(LayoutMismatch):
        SubcarrierLayout(64, (40,))


def test_frame_validation():
    with pytest.raises(MalformedRow):
        CsiFrame(0, "a,b", [1.0])
    with pytest.raises(MalformedRow):
        CsiFrame(0, "a", [np.inf])


def _checkpoint(rng, n_tensors=3):
    tensors = tuple(
        (f"t{k}", rng.normal(size=tuple(rng.integers(1, 5, size=rng.integers(0, 4)))).astype(np.float32))
        for k in range(n_tensors)
    )
    return ModelCheckpoint(CheckpointKind.TSNET, {"alpha": 0.2, "hidden": [4, 8], "name": "x"}, tensors)


def test_checkpoint_empty_round_trip():
    ck = ModelCheckpoint(CheckpointKind.AUTOENCODER, {}, ())
    assert load_checkpoint(save_checkpoint(ck)) == ck


def test_checkpoint_round_trip_bytes():
    ck = _checkpoint(np.random.default_rng(0))
    data = save_checkpoint(ck)
    back = load_checkpoint(data)
    assert back == ck
    assert back.hyperparams == {"alpha": 0.2, "hidden": [4, 8], "name": "x"}
    assert save_checkpoint(back) == data


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6))
def test_checkpoint_round_trip_property(seed, n):
    ck = _checkpoint(np.random.default_rng(seed), n)
    assert load_checkpoint(save_checkpoint(ck)) == ck


def test_checkpoint_header_layout():
    ck = ModelCheckpoint(CheckpointKind.TSNET, {}, (("w", np.ones((2, 3), np.float32)),))
    data = save_checkpoint(ck)
    assert data.startswith(b"CSI2DIGCKPT")
    assert int.from_bytes(data[11:15], "little") == 1
    assert int.from_bytes(data[15:19], "little") == 1


def test_checkpoint_truncated():
    data = save_checkpoint(_checkpoint(np.random.default_rng(1)))
    with pytest.raises(CorruptPayload):
        load_checkpoint(data[:-1])


def test_checkpoint_truncated_tensor_payload():
    ck = ModelCheckpoint(CheckpointKind.TSNET, {}, (("w", np.ones(4, np.float32)),))
    data = save_checkpoint(ck)
    # drop the last payload byte but keep the hyperparameter block intact
    payload_end = len(data) - 4 - len(b'{"__kind__":"TsNet"}')
    broken = data[:payload_end - 1] + data[payload_end:]
    with pytest.raises(CorruptPayload):
        load_checkpoint(broken)


def test_checkpoint_version_mismatch():
    data = bytearray(save_checkpoint(_checkpoint(np.random.default_rng(2))))
    data[11:15] = (99).to_bytes(4, "little")
    with pytest.raises(VersionMismatch):
        load_checkpoint(bytes(data))


def test_sample_dir_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    samples = tuple(
        Sample(rng.normal(size=(4, 3)), label, {"device": "p1", "distance": "0.5"})
        for label in (0, 10, None)
    )
    ds = Dataset(samples)
    write_sample_dir(ds, tmp_path)
    header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
    assert header == "file,label,device,distance,volume"
    back = read_sample_dir(tmp_path)
    assert back.class_names == ds.class_names
    assert all(a == b for a, b in zip(back.samples, ds.samples))
