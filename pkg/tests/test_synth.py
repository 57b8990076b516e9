import numpy as np
import pytest

from csidigits.errors import DataError
from csidigits.model import DEFAULT_CLASS_NAMES, SubcarrierLayout
from csidigits.preprocess import segment, select_subcarriers
from csidigits.synth import (
    SynthSpec,
    analytic_signal,
    generate,
    make_fixture_dataset,
    signal_model,
    stratified_split,
    window_labels,
)

SMALL = SynthSpec(repetitions=3, subcarriers=64)


def test_spec_validation():
    with pytest.raises(DataError):
        SynthSpec(rate_hz=200.0)
    with pytest.raises(DataError):
        SynthSpec(drop_probability=1.0)


def test_class_names():
    assert SynthSpec().class_names == DEFAULT_CLASS_NAMES
    assert SynthSpec(num_classes=3, silence_class=False).class_names == ("0", "1", "2")
    assert SynthSpec(num_classes=3).silence_label == 2


def test_generation_is_seeded():
    a, b = generate(SMALL), generate(SMALL)
    assert a.sequence == b.sequence
    c = generate(SynthSpec(repetitions=3, seed=1))
    assert not np.array_equal(a.sequence.amplitudes, c.sequence.amplitudes[: len(a.sequence)])


def test_window_labels_balanced():
    labels = window_labels(SMALL)
    assert np.bincount(labels).tolist() == [3] * 11


def test_rates_within_jitter_and_monotone():
    cap = generate(SMALL)
    ts = cap.sequence.timestamps_us
    assert np.all(np.diff(ts) > 0)
    window = ts // 2_000_000
    gaps = (np.diff(ts) / 1e6)[window[1:] == window[:-1]]
    # within a window, gaps are U(0.5, 1.5) / rate with rate inside the jitter range
    assert gaps.min() >= 0.5 / 150 - 1e-6 and gaps.max() <= 1.5 / 60 + 1e-6
    assert ts[0] == 0


def test_noise_free_capture_equals_analytic_signal():
    spec = SynthSpec(repetitions=2, noise_sigma=0.0)
    cap = generate(spec)
    assert np.array_equal(cap.sequence.amplitudes, cap.clean)


def test_silence_has_no_burst():
    spec = SynthSpec(repetitions=1)
    model = signal_model(spec)
    t = np.linspace(0, 2, 50)
    silent = analytic_signal(spec, model, spec.silence_label, t, 0.0, 1.0, 10.0, 0.0)
    burst = analytic_signal(spec, model, 0, t, 0.0, 1.0, 10.0, 0.0)
    drift = spec.drift_amplitude * np.sin(2 * np.pi * t / 37.0 + model.drift_phase)
    assert np.allclose(silent, np.maximum(model.baseline + drift[:, None] * model.drift_gain, 0))
    assert np.max(np.abs(burst - silent)) > 1.0


def test_signatures_are_distinct():
    sig = signal_model(SynthSpec()).signatures
    unit = sig / np.linalg.norm(sig, axis=1, keepdims=True)
    cos = unit @ unit.T
    assert np.all(np.abs(cos[~np.eye(len(cos), dtype=bool)]) < 0.9)


def test_drops_reduce_frames():
    full = generate(SMALL)
    dropped = generate(SynthSpec(repetitions=3, drop_probability=0.3))
    assert len(dropped.sequence) < len(full.sequence)
    assert dropped.sequence.timestamps_us[0] == 0


def test_fixture_dataset_shape_and_labels():
    ds = make_fixture_dataset(SMALL)
    assert len(ds) == 33
    assert ds.sample_shape == (200, 56)
    assert np.array_equal(np.sort(ds.labels()), np.sort(window_labels(SMALL)))


def test_stratified_split():
    ds = make_fixture_dataset(SMALL)
    train, test = stratified_split(ds, 1 / 3, seed=0)
    assert len(train) + len(test) == len(ds)
    assert np.bincount(test.labels()).tolist() == [1] * 11
    again, _ = stratified_split(ds, 1 / 3, seed=0)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(train.samples, again.samples))


def test_heavy_packet_loss_discards_most_windows():
    spec = SynthSpec(repetitions=3, drop_probability=0.6)
    cap = generate(spec)
    samples = segment(select_subcarriers(cap.sequence, SubcarrierLayout.bw20()))
    # about 80 of ~200 frames survive per window, below the 100-frame floor
    assert len(samples) < len(cap.window_labels) / 2
