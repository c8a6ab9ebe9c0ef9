"""Timestamped stream and motion-sequence containers plus their file formats.

Stream files are JSON lines: a header ``{"native_rate_hz": .., "site": ..}``
followed by one object per sample with ``t``, ``kind`` and the payload
fields ``rot`` (9 floats, row-major), ``acc`` (3), ``trans`` (3) or ``vec``.
Scalar samples are stored as a one-element ``vec``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .body_model import NUM_JOINTS, Pose
from .errors import EmptyStream

KINDS = ("imu", "head", "feat", "scalar")
_CHANNELS = {
    "imu": ("rot", "acc"),
    "head": ("rot", "trans"),
    "feat": ("vec",),
    "scalar": ("value",),
}


@dataclass(frozen=True)
class ImuSample:
    rot: np.ndarray  # (3, 3) sensor-to-world orientation
    acc: np.ndarray  # (3,) m/s^2, sensor frame, gravity included


@dataclass(frozen=True)
class HeadPose:
    rotation: np.ndarray
    translation: np.ndarray
    timestamp: float


@dataclass
class TimedStream:
    """Samples with strictly increasing timestamps (seconds).

    Payloads are kept channel-wise: ``imu`` streams carry ``rot`` (n, 3, 3) and
    ``acc`` (n, 3); ``head`` streams ``rot`` and ``trans`` (n, 3); ``feat``
    streams ``vec`` (n, d); ``scalar`` streams ``value`` (n,).
    Extra channels (e.g. ``valid``) ride along through slicing.
    """
    timestamps: np.ndarray
    kind: str
    channels: dict
    native_rate_hz: float
    site: str = ""

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if self.kind not in KINDS:
            raise ValueError(f"unknown stream kind {self.kind!r}")
        if not self.native_rate_hz > 0:
            raise ValueError("native_rate_hz must be positive")
        n = len(self.timestamps)
        for name in _CHANNELS[self.kind]:
            if name not in self.channels:
                raise ValueError(f"{self.kind} stream is missing channel {name!r}")
        for name, arr in self.channels.items():
            if len(arr) != n:
                raise ValueError(f"channel {name!r} has {len(arr)} samples, expected {n}")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    def take(self, idx):
        idx = np.asarray(idx)
        return TimedStream(
            self.timestamps[idx],
            self.kind,
            {k: v[idx] for k, v in self.channels.items()},
            self.native_rate_hz,
            self.site,
        )

    def retimed(self, timestamps):
        return TimedStream(np.asarray(timestamps, dtype=np.float64), self.kind,
                           dict(self.channels), self.native_rate_hz, self.site)

    def shifted(self, dt):
        """Same samples with every timestamp moved by ``dt`` seconds."""
        return self.retimed(self.timestamps + dt)

    def with_channels(self, **channels):
        merged = dict(self.channels)
        merged.update(channels)
        return TimedStream(self.timestamps, self.kind, merged, self.native_rate_hz, self.site)

    @property
    def samples(self):
        ch = self.channels
        if self.kind == "imu":
            return [ImuSample(r, a) for r, a in zip(ch["rot"], ch["acc"])]
        if self.kind == "head":
            return [HeadPose(r, p, float(t)) for r, p, t in zip(ch["rot"], ch["trans"], self.timestamps)]
        if self.kind == "feat":
            return list(ch["vec"])
        return [float(v) for v in ch["value"]]

    @property
    def values(self):
        """The primary channel of a scalar or feature stream."""
        return self.channels["value" if self.kind == "scalar" else "vec"]


def scalar_stream(timestamps, values, native_rate_hz, site=""):
    return TimedStream(timestamps, "scalar", {"value": np.asarray(values, dtype=np.float64)},
                       native_rate_hz, site)


@dataclass
class MotionSequence:
    """Uniformly sampled ground-truth motion.

    ``trans`` is (T, 3) root translation in meters, ``rot`` is (T, 24, 6).
    ``reference`` holds the (rotation, origin) of the frame the translations
    are expressed in, when they have been made relative.
    """
    rate_hz: float
    trans: np.ndarray
    rot: np.ndarray
    start_time: float = 0.0
    reference: tuple | None = field(default=None)

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.rot = np.asarray(self.rot, dtype=np.float64)
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")
        if len(self.trans) == 0:
            raise EmptyStream("motion sequence has no frames")
        if self.trans.shape != (len(self.trans), 3) or self.rot.shape != (len(self.trans), NUM_JOINTS, 6):
            raise ValueError(f"bad motion shapes {self.trans.shape}, {self.rot.shape}")

    def __len__(self):
        return len(self.trans)

    @property
    def timestamps(self):
        return self.start_time + np.arange(len(self)) / self.rate_hz

    @property
    def pose(self):
        """All frames as one batched Pose."""
        return Pose(self.trans, self.rot)

    @property
    def frames(self):
        return [Pose(t, r) for t, r in zip(self.trans, self.rot)]

    def slice(self, start, stop):
        return MotionSequence(self.rate_hz, self.trans[start:stop], self.rot[start:stop],
                              self.start_time + start / self.rate_hz, self.reference)


# ----------------------------------------------------------------------------
# JSON-lines IO
# ----------------------------------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, separators=(", ", ": "))


def stream_lines(stream):
    yield _dumps({"native_rate_hz": float(stream.native_rate_hz), "site": stream.site})
    ch = stream.channels
    ts = stream.timestamps.tolist()
    if stream.kind == "imu":
        rot = ch["rot"].reshape(-1, 9).tolist()
        acc = ch["acc"].tolist()
        for t, r, a in zip(ts, rot, acc):
            yield _dumps({"t": t, "kind": "imu", "rot": r, "acc": a})
    elif stream.kind == "head":
        rot = ch["rot"].reshape(-1, 9).tolist()
        trans = ch["trans"].tolist()
        for t, r, p in zip(ts, rot, trans):
            yield _dumps({"t": t, "kind": "head", "rot": r, "trans": p})
    elif stream.kind == "feat":
        for t, v in zip(ts, ch["vec"].tolist()):
            yield _dumps({"t": t, "kind": "feat", "vec": v})
    else:
        for t, v in zip(ts, ch["value"].tolist()):
            yield _dumps({"t": t, "kind": "scalar", "vec": [v]})


def write_stream(path, stream):
    with open(path, "w") as f:
        for line in stream_lines(stream):
            f.write(line)
            f.write("\n")


def read_stream(path):
    with open(path) as f:
        header = json.loads(f.readline())
        rows = [json.loads(line) for line in f if line.strip()]
    if not rows:
        raise EmptyStream(f"{path} has no samples")
    kind = rows[0]["kind"]
    ts = np.array([r["t"] for r in rows])
    if kind == "imu":
        ch = {"rot": np.array([r["rot"] for r in rows]).reshape(-1, 3, 3),
              "acc": np.array([r["acc"] for r in rows])}
    elif kind == "head":
        ch = {"rot": np.array([r["rot"] for r in rows]).reshape(-1, 3, 3),
              "trans": np.array([r["trans"] for r in rows])}
    elif kind == "feat":
        ch = {"vec": np.array([r["vec"] for r in rows])}
    else:
        ch = {"value": np.array([r["vec"][0] for r in rows])}
    return TimedStream(ts, kind, ch, header["native_rate_hz"], header.get("site", ""))


def write_motion(path, seq):
    with open(path, "w") as f:
        header = {"rate_hz": float(seq.rate_hz), "start_time": float(seq.start_time)}
        if seq.reference is not None:
            header["reference_rot"] = np.asarray(seq.reference[0]).reshape(9).tolist()
            header["reference_origin"] = np.asarray(seq.reference[1]).tolist()
        f.write(_dumps(header) + "\n")
        for t, p, r in zip(seq.timestamps.tolist(), seq.trans.tolist(), seq.rot.reshape(-1, NUM_JOINTS * 6).tolist()):
            f.write(_dumps({"t": t, "trans": p, "rot6d": r}) + "\n")


def read_motion(path):
    with open(path) as f:
        header = json.loads(f.readline())
        rows = [json.loads(line) for line in f if line.strip()]
    reference = None
    if "reference_rot" in header:
        reference = (np.array(header["reference_rot"]).reshape(3, 3), np.array(header["reference_origin"]))
    return MotionSequence(
        header["rate_hz"],
        np.array([r["trans"] for r in rows]),
        np.array([r["rot6d"] for r in rows]).reshape(-1, NUM_JOINTS, 6),
        header["start_time"],
        reference,
    )
