import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wearmocap.body_model import JOINT_INDEX, Pose, forward_kinematics
from wearmocap.errors import AmbiguousExtremum, EmptyStream, InsufficientPeaks, SequenceTooShort
from wearmocap.rotmath import axis_rotation, yaw_of
from wearmocap.sequence import (
    MotionSequence,
    TimedStream,
    read_motion,
    read_stream,
    scalar_stream,
    write_motion,
    write_stream,
)
from wearmocap.streams import (
    AlignedBundle,
    estimate_offset_extremum,
    estimate_offset_peaks,
    impute_hold_last,
    make_windows,
    moving_average,
    relativize_translations,
    resample_nn,
    smooth,
    split_sizes,
    split_windows,
    unrelativize_translations,
    window_split,
)
from wearmocap.synth import SENSOR_SITES, gen_gesture1, gen_gesture2, gen_motion, simulate_imu


def uniform_scalar(n, rate, start=0.0, values=None):
    t = start + np.arange(n) / rate
    return scalar_stream(t, np.arange(n, dtype=float) if values is None else values, rate)


# ---------------------------------------------------------------- offsets

def test_gesture1_zero_and_injected():
    for offset in (0.0, 1.3, -1.7):
        est = estimate_offset_peaks(*gen_gesture1(offset, seed=5))
        assert abs(est - offset) <= 0.01


def test_gesture2_zero_and_injected():
    for offset in (0.0, -0.7, 1.9):
        est = estimate_offset_extremum(*gen_gesture2(offset, seed=5))
        assert abs(est - offset) <= 1 / 30


def test_flat_streams_insufficient_peaks():
    flat = uniform_scalar(500, 100.0, values=np.full(500, 9.81))
    with pytest.raises(InsufficientPeaks):
        estimate_offset_peaks(flat, flat)


def test_two_raises_insufficient():
    t = np.arange(600) / 100.0
    x = 9.81 + 5 * np.exp(-0.5 * ((t - 2) / 0.07) ** 2) + 5 * np.exp(-0.5 * ((t - 4) / 0.07) ** 2)
    s = scalar_stream(t, x, 100.0)
    with pytest.raises(InsufficientPeaks):
        estimate_offset_peaks(s, s)


def test_monotone_ramp_is_ambiguous():
    ramp = uniform_scalar(90, 30.0, values=np.linspace(0, -1, 90))
    cam, _ = gen_gesture2(0.0, seed=1)
    with pytest.raises((AmbiguousExtremum, InsufficientPeaks)):
        estimate_offset_extremum(cam, ramp)


def test_plateau_is_ambiguous():
    t = np.arange(300) / 30.0
    x = np.zeros(300)
    x[60:250] = -1.0
    with pytest.raises(AmbiguousExtremum):
        estimate_offset_extremum(scalar_stream(t, x, 30.0), scalar_stream(t, x, 30.0))


def test_offset_correction_is_idempotent():
    phone, mocap = gen_gesture1(0.9, seed=8)
    d = estimate_offset_peaks(phone, mocap)
    again = estimate_offset_peaks(phone.shifted(d), mocap)
    assert abs(again) <= 0.01
    cam, head = gen_gesture2(-1.4, seed=8)
    d = estimate_offset_extremum(cam, head)
    assert abs(estimate_offset_extremum(cam.shifted(d), head)) <= 1 / 30


# ---------------------------------------------------------------- resampling

def test_100_to_25_takes_every_4th():
    s = uniform_scalar(401, 100.0)
    out = resample_nn(s, 25.0)
    assert np.array_equal(out.values, np.arange(0, 401, 4))
    assert np.allclose(out.timestamps, np.arange(101) / 25.0, atol=0, rtol=0)


def test_same_rate_is_identity():
    s = uniform_scalar(50, 30.0, start=0.2)
    out = resample_nn(s, 30.0)
    assert np.array_equal(out.values, s.values)
    assert np.array_equal(out.timestamps, s.timestamps)


def test_240_to_25_nearest_bound():
    rng = np.random.default_rng(0)
    s = uniform_scalar(2400, 240.0, start=rng.uniform(0, 1))
    out = resample_nn(s, 25.0)
    dt = np.abs(s.timestamps[out.values.astype(int)] - out.timestamps)
    assert dt.max() <= 1 / 480 + 1e-9
    assert out.timestamps[0] == s.timestamps[0]
    assert out.timestamps[-1] <= s.timestamps[-1]


def test_ties_go_to_earlier_sample():
    s = scalar_stream([0.0, 1.0, 2.0], [10.0, 20.0, 30.0], 1.0)
    out = resample_nn(s, 1.0, start=0.5, stop=1.5)
    assert list(out.values) == [10.0, 20.0]


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 400), st.sampled_from([30.0, 100.0, 240.0]), st.floats(0, 10))
def test_resample_never_interpolates(n, rate, start):
    rng = np.random.default_rng(n)
    vals = rng.normal(size=n)
    s = uniform_scalar(n, rate, start, vals)
    out = resample_nn(s, 25.0)
    assert set(out.values) <= set(vals)
    assert np.allclose(np.diff(out.timestamps), 1 / 25.0)


def test_resample_errors():
    with pytest.raises(EmptyStream):
        resample_nn(scalar_stream([], [], 100.0), 25.0)
    with pytest.raises(ValueError):
        resample_nn(uniform_scalar(10, 25.0), 100.0)


# ---------------------------------------------------------------- smoothing and imputation

def _imu_stream(tree, seconds=2.0, rate=100.0):
    return simulate_imu(gen_motion("walk", seconds, rate, seed=1), tree, SENSOR_SITES["left_wrist"])


def test_smooth_constant_unchanged():
    x = np.full((20, 3), 2.5)
    assert np.allclose(moving_average(x, 5), x, atol=1e-15)


def test_smooth_impulse():
    x = np.zeros((21, 3))
    x[10, 1] = 1.0
    y = moving_average(x, 5)
    assert np.allclose(y[8:13, 1], 0.2, atol=1e-15)
    assert np.allclose(np.delete(y[:, 1], range(8, 13)), 0.0)


def test_smooth_white_noise_variance():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((100000, 1))
    ratio = x.var() / moving_average(x, 5)[2:-2].var()
    assert abs(ratio - 5) < 0.5


def test_smooth_touches_acceleration_only(tree):
    s = _imu_stream(tree)
    out = smooth(s, 5)
    assert np.array_equal(out.timestamps, s.timestamps)
    assert np.array_equal(out.channels["rot"], s.channels["rot"])
    assert not np.array_equal(out.channels["acc"], s.channels["acc"])
    with pytest.raises(ValueError):
        smooth(s, 4)


def test_impute_hold_last_and_valid():
    t = np.array([0.0, 0.01, 0.02, 0.6, 0.61, 0.62, 0.63])
    v = np.arange(7, dtype=float)
    out = impute_hold_last(scalar_stream(t, v, 100.0))
    assert len(out) == 64
    assert out.values[3] == 2.0 and out.values[59] == 2.0 and out.values[60] == 3.0
    valid = out.channels["valid"]
    assert valid[52] == 1.0  # 0.52 s: 0.50 s after the last real sample
    assert valid[53] == 0.0 and valid[59] == 0.0
    assert valid[60] == 1.0


# ---------------------------------------------------------------- relativization

def test_relativize_zero_heading_zero_origin_unchanged(tree):
    n = 10
    rot = np.tile(Pose.identity().rot, (n, 1, 1))
    trans = np.cumsum(np.full((n, 3), 0.01), axis=0) - 0.01
    seq = MotionSequence(25.0, trans, rot)
    rel = relativize_translations(seq, tree)
    assert np.allclose(rel.trans, seq.trans, atol=1e-15)
    assert np.allclose(rel.rot, seq.rot, atol=1e-15)


def test_relativize_constant_translation_zero(tree):
    seq = gen_motion("wave", 2.0, 25.0, seed=1)
    const = MotionSequence(25.0, np.tile([1.0, -2.0, 0.9], (len(seq), 1)), seq.rot)
    assert np.allclose(relativize_translations(const, tree).trans, 0.0, atol=1e-15)


def test_relativize_roundtrip_and_frame(tree):
    seq = gen_motion("mixed", 4.0, 25.0, seed=2)
    rel = relativize_translations(seq, tree)
    assert np.array_equal(rel.trans[0], np.zeros(3))
    back = unrelativize_translations(rel)
    assert np.max(np.abs(back.trans - seq.trans)) < 1e-12
    assert np.max(np.abs(back.rot - seq.rot)) < 1e-12
    # the head faces +x at frame 0 after relativization
    _, ori = forward_kinematics(tree, Pose(rel.trans[0], rel.rot[0]))
    assert abs(yaw_of(ori[JOINT_INDEX["Head"]])) < 1e-12


def test_relativize_is_rigid(tree):
    seq = gen_motion("walk", 2.0, 25.0, seed=3)
    rel = relativize_translations(seq, tree)
    a, _ = forward_kinematics(tree, seq.pose)
    b, _ = forward_kinematics(tree, rel.pose)
    da = np.linalg.norm(a[:, None] - a[:, :, None], axis=-1)
    db = np.linalg.norm(b[:, None] - b[:, :, None], axis=-1)
    assert np.allclose(da, db, atol=1e-12)


# ---------------------------------------------------------------- windows

def _bundle(n):
    t = np.arange(n) / 25.0
    s = scalar_stream(t, np.arange(n, dtype=float), 25.0)
    seq = MotionSequence(25.0, np.zeros((n, 3)), np.tile(Pose.identity().rot, (n, 1, 1)))
    return AlignedBundle(t, {"x": s}), seq


def test_windows_500_frames():
    b, m = _bundle(523)
    ws = make_windows(b, m, 50)
    assert len(ws) == 10
    assert all(len(w.motion) == 50 and len(w.bundle) == 50 for w in ws)
    starts = [int(w.bundle.streams["x"].values[0]) for w in ws]
    assert starts == list(range(0, 500, 50))


def test_split_sizes():
    assert split_sizes(10) == (8, 1, 1)
    assert split_sizes(200) == (160, 20, 20)
    assert split_sizes(7) == (5, 0, 2)


def test_split_deterministic():
    b, m = _bundle(1000)
    a = window_split(b, m, 50, seed=3)
    c = window_split(b, m, 50, seed=3)
    key = lambda ws: [w.start for w in ws]
    assert key(a.train) == key(c.train) and key(a.test) == key(c.test)
    d = split_windows(make_windows(b, m, 50), seed=4)
    assert key(a.train) != key(d.train)
    assert sorted(key(a.train) + key(a.val) + key(a.test)) == list(range(0, 1000, 50))


def test_too_short():
    b, m = _bundle(30)
    with pytest.raises(SequenceTooShort):
        make_windows(b, m, 50)


def test_bundle_requires_shared_grid():
    t = np.arange(10) / 25.0
    with pytest.raises(ValueError):
        AlignedBundle(t, {"x": scalar_stream(t + 0.01, np.zeros(10), 25.0)})


# ---------------------------------------------------------------- file format

def test_stream_file_roundtrip(tmp_path, tree):
    s = _imu_stream(tree, 0.2)
    write_stream(tmp_path / "imu.jsonl", s)
    lines = (tmp_path / "imu.jsonl").read_text().splitlines()
    assert json.loads(lines[0]) == {"native_rate_hz": 100.0, "site": "left_wrist"}
    row = json.loads(lines[1])
    assert row["kind"] == "imu" and len(row["rot"]) == 9 and len(row["acc"]) == 3
    back = read_stream(tmp_path / "imu.jsonl")
    assert np.array_equal(back.timestamps, s.timestamps)
    assert np.array_equal(back.channels["rot"], s.channels["rot"])
    assert np.array_equal(back.channels["acc"], s.channels["acc"])


@pytest.mark.parametrize("kind", ["head", "feat", "scalar"])
def test_other_kinds_roundtrip(tmp_path, kind):
    rng = np.random.default_rng(0)
    t = np.arange(5) / 30.0
    ch = {"head": {"rot": np.tile(axis_rotation("z", 0.3), (5, 1, 1)), "trans": rng.normal(size=(5, 3))},
          "feat": {"vec": rng.normal(size=(5, 7))},
          "scalar": {"value": rng.normal(size=5)}}[kind]
    s = TimedStream(t, kind, ch, 30.0, "x")
    write_stream(tmp_path / "s.jsonl", s)
    back = read_stream(tmp_path / "s.jsonl")
    for k in ch:
        assert np.array_equal(back.channels[k], ch[k])


def test_motion_file_roundtrip(tmp_path, tree):
    seq = relativize_translations(gen_motion("sit", 1.0, 25.0, seed=1), tree)
    write_motion(tmp_path / "m.jsonl", seq)
    back = read_motion(tmp_path / "m.jsonl")
    assert np.array_equal(back.trans, seq.trans) and np.array_equal(back.rot, seq.rot)
    assert np.array_equal(back.reference[0], seq.reference[0])


def test_stream_invariants():
    with pytest.raises(ValueError):
        scalar_stream([0.0, 0.0], [1.0, 2.0], 10.0)
    with pytest.raises(ValueError):
        scalar_stream([0.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        TimedStream(np.arange(3.0), "imu", {"rot": np.zeros((3, 3, 3))}, 10.0)
