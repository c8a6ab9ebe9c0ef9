"""Stream algebra: clock-offset estimation from alignment gestures,
nearest-neighbor resampling, smoothing, gap imputation, translation
relativization and fixed-length windowing."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .body_model import JOINT_INDEX, forward_kinematics
from .errors import AmbiguousExtremum, EmptyStream, InsufficientPeaks, SequenceTooShort
from .rotmath import axis_rotation, matrix_to_rot6d, rot6d_to_matrix, yaw_of
from .sequence import MotionSequence, TimedStream

ALIGNED_RATE_HZ = 25.0
_GRID_EPS = 1e-9


# ----------------------------------------------------------------------------
# Offset estimation
# ----------------------------------------------------------------------------

def _mad(x):
    return float(np.median(np.abs(x - np.median(x))))


def _refine(ts, x, i, height=None):
    """Sub-sample time of the maximum at sample ``i``.

    Fits a least-squares parabola to the contiguous run of samples around
    ``i`` that lie within ``height / 2`` of the peak value (three samples when
    ``height`` is not given). Falls back to ``ts[i]`` on boundary or concave-up fits.
    """
    n = len(x)
    if i <= 0 or i >= n - 1:
        return float(ts[i])
    lo, hi = i - 1, i + 1
    if height is not None and height > 0:
        floor = x[i] - 0.5 * height
        while lo > 0 and x[lo - 1] > floor:
            lo -= 1
        while hi < n - 1 and x[hi + 1] > floor:
            hi += 1
    tt = ts[lo:hi + 1] - ts[i]
    c2, c1, _ = np.polyfit(tt, x[lo:hi + 1], 2)
    if c2 >= 0:
        return float(ts[i])
    vertex = -c1 / (2.0 * c2)
    vertex = min(max(vertex, tt[0]), tt[-1])
    return float(ts[i] + vertex)


def prominent_peak_times(stream, count=3):
    """Times of the ``count`` most prominent maxima, in time order.

    Raises InsufficientPeaks when fewer than ``count`` peaks have prominence of
    at least twice the stream's median absolute deviation.
    """
    x = np.asarray(stream.values, dtype=np.float64)
    if len(x) < 3:
        raise InsufficientPeaks("stream too short for peak detection")
    threshold = max(2.0 * _mad(x), 1e-12)
    idx, props = find_peaks(x, prominence=threshold)
    if len(idx) < count:
        raise InsufficientPeaks(f"found {len(idx)} prominent peaks, need {count}")
    order = np.argsort(-props["prominences"], kind="stable")[:count]
    picked = sorted(zip(idx[order], props["prominences"][order]))
    return np.array([_refine(stream.timestamps, x, i, prom) for i, prom in picked])


def estimate_offset_peaks(a, b):
    """Clock offset of ``b`` relative to ``a`` from three matched peaks.

    Returns ``d`` such that an event at time ``t`` in ``a`` appears at ``t + d``
    in ``b``. The top-3 prominence peaks of each stream are paired in time
    order and ``d`` is the median pairwise difference, which minimizes the mean
    absolute mismatch of the two triples.
    """
    ta = prominent_peak_times(a)
    tb = prominent_peak_times(b)
    return float(np.median(tb - ta))


def extremum_time(stream, ambiguity_window=0.5, rel_tol=0.01):
    """Time of the largest deviation from the median, refined sub-sample.

    Raises AmbiguousExtremum when the extremum sits on the stream boundary, the
    stream is flat, or two samples within ``rel_tol`` of the extreme deviation
    lie more than ``ambiguity_window`` seconds apart.
    """
    x = np.asarray(stream.values, dtype=np.float64)
    if len(x) < 3:
        raise AmbiguousExtremum("stream too short for extremum detection")
    dev = x - np.median(x)
    i = int(np.argmax(np.abs(dev)))
    peak = dev[i]
    if peak == 0.0:
        raise AmbiguousExtremum("flat stream has no extremum")
    if i == 0 or i == len(x) - 1:
        raise AmbiguousExtremum("extremum lies on the stream boundary")
    near = np.flatnonzero(np.abs(dev - peak) <= rel_tol * abs(peak))
    ts = stream.timestamps
    if ts[near[-1]] - ts[near[0]] > ambiguity_window:
        raise AmbiguousExtremum("several separated samples share the extreme value")
    return _refine(ts, dev if peak > 0 else -dev, i, abs(peak))


def estimate_offset_extremum(a, b):
    """Clock offset of ``b`` relative to ``a`` from their single yaw extremum."""
    return extremum_time(b) - extremum_time(a)


# ----------------------------------------------------------------------------
# Resampling, smoothing, imputation
# ----------------------------------------------------------------------------

def target_grid(start, stop, rate_hz):
    n = int(np.floor((stop - start) * rate_hz + _GRID_EPS)) + 1
    return start + np.arange(n) / rate_hz


def nearest_indices(timestamps, grid):
    """Index of the nearest timestamp for each grid time; ties go to the earlier sample."""
    hi = np.clip(np.searchsorted(timestamps, grid, side="left"), 1, len(timestamps) - 1)
    lo = hi - 1
    if len(timestamps) == 1:
        return np.zeros(len(grid), dtype=int)
    pick_lo = (grid - timestamps[lo]) <= (timestamps[hi] - grid)
    return np.where(pick_lo, lo, hi)


def resample_nn(s, target_hz, start=None, stop=None):
    """Nearest-neighbor resampling onto ``start + k / target_hz``.

    The grid defaults to the span of the input. Payloads are copied from input
    samples; nothing is interpolated.
    """
    if len(s) == 0:
        raise EmptyStream("cannot resample an empty stream")
    if target_hz > s.native_rate_hz + _GRID_EPS:
        raise ValueError(f"target rate {target_hz} exceeds native rate {s.native_rate_hz}")
    start = s.timestamps[0] if start is None else start
    stop = s.timestamps[-1] if stop is None else stop
    grid = target_grid(start, stop, target_hz)
    idx = nearest_indices(s.timestamps, grid)
    out = s.take(idx).retimed(grid)
    out.native_rate_hz = float(target_hz)
    return out


def moving_average(x, window):
    """Centered moving average along axis 0 with a shrinking window at the edges."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be odd and >= 1")
    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(len(x), -1)
    kernel = np.ones(window)
    counts = np.convolve(np.ones(len(x)), kernel, mode="same")
    out = np.stack([np.convolve(flat[:, c], kernel, mode="same") for c in range(flat.shape[1])], axis=1)
    return (out / counts[:, None]).reshape(x.shape)


def smooth(s, window=5):
    """Box-filter the acceleration (or scalar) channel; orientations untouched."""
    if s.kind == "imu":
        return s.with_channels(acc=moving_average(s.channels["acc"], window))
    if s.kind == "scalar":
        return s.with_channels(value=moving_average(s.channels["value"], window))
    raise ValueError(f"smooth is defined for imu and scalar streams, not {s.kind!r}")


def impute_hold_last(s, max_gap=0.5, start=None, stop=None):
    """Regrid onto the native rate, holding the last observation over dropouts.

    Adds a ``valid`` channel: 1 where a real sample exists within
    ``max_gap`` seconds before the grid time, else 0.
    """
    if len(s) == 0:
        raise EmptyStream("cannot impute an empty stream")
    start = s.timestamps[0] if start is None else start
    stop = s.timestamps[-1] if stop is None else stop
    grid = target_grid(start, stop, s.native_rate_hz)
    idx = np.searchsorted(s.timestamps, grid + _GRID_EPS, side="right") - 1
    before = idx < 0
    idx = np.maximum(idx, 0)
    gap = grid - s.timestamps[idx]
    valid = ((gap <= max_gap + _GRID_EPS) & ~before).astype(np.float64)
    channels = {k: v[idx] for k, v in s.channels.items()}
    channels["valid"] = valid
    return TimedStream(grid, s.kind, channels, s.native_rate_hz, s.site)


# ----------------------------------------------------------------------------
# Translation relativization
# ----------------------------------------------------------------------------

def heading_frame(seq, tree):
    """Rotation about z by the head's frame-0 heading, and the frame-0 root position."""
    pose0 = seq.frames[0]
    _, ori = forward_kinematics(tree, pose0)
    yaw = yaw_of(ori[JOINT_INDEX["Head"]])
    return axis_rotation("z", yaw), seq.trans[0].copy()


def relativize_translations(seq, tree):
    """Express the motion in the head-heading frame anchored at frame 0.

    Translations become ``R0^T (p - p0)`` and the root rotation ``R0^T R``,
    where ``R0`` is the yaw of the head at frame 0 and ``p0`` the frame-0 root
    position. ``(R0, p0)`` is stored in ``reference`` for inversion.
    """
    R0, p0 = heading_frame(seq, tree)
    trans = (seq.trans - p0) @ R0
    root = rot6d_to_matrix(seq.rot[:, 0])
    rot = seq.rot.copy()
    rot[:, 0] = matrix_to_rot6d(R0.T @ root)
    return MotionSequence(seq.rate_hz, trans, rot, seq.start_time, (R0, p0))


def unrelativize_translations(seq):
    if seq.reference is None:
        return seq
    R0, p0 = seq.reference
    trans = seq.trans @ R0.T + p0
    rot = seq.rot.copy()
    rot[:, 0] = matrix_to_rot6d(R0 @ rot6d_to_matrix(seq.rot[:, 0]))
    return MotionSequence(seq.rate_hz, trans, rot, seq.start_time, None)


# ----------------------------------------------------------------------------
# Windows
# ----------------------------------------------------------------------------

@dataclass
class AlignedBundle:
    """Streams of several modalities sharing one 25 Hz timestamp grid."""
    timestamps: np.ndarray
    streams: dict

    def __post_init__(self):
        for name, s in self.streams.items():
            if len(s) != len(self.timestamps) or np.any(s.timestamps != self.timestamps):
                raise ValueError(f"stream {name!r} is not on the bundle grid")

    def __len__(self):
        return len(self.timestamps)

    def slice(self, start, stop):
        idx = np.arange(start, stop)
        return AlignedBundle(self.timestamps[start:stop], {k: s.take(idx) for k, s in self.streams.items()})


@dataclass
class Window:
    bundle: AlignedBundle
    motion: MotionSequence
    source: str = ""
    start: int = 0


@dataclass
class Split:
    train: list
    val: list
    test: list


def split_sizes(n):
    n_train = int(np.floor(0.8 * n))
    n_val = int(np.floor(0.1 * n))
    return n_train, n_val, n - n_train - n_val


def make_windows(bundle, motion, n=50, source=""):
    """Non-overlapping windows of exactly ``n`` frames; the remainder is dropped."""
    if len(motion) != len(bundle):
        raise ValueError("motion and bundle lengths differ")
    if len(bundle) < n:
        raise SequenceTooShort(f"{len(bundle)} frames cannot hold a window of {n}")
    return [
        Window(bundle.slice(s, s + n), motion.slice(s, s + n), source, s)
        for s in range(0, len(bundle) - n + 1, n)
    ]


def split_windows(windows, seed):
    order = np.random.default_rng(seed).permutation(len(windows))
    n_train, n_val, _ = split_sizes(len(windows))
    pick = [windows[i] for i in order]
    return Split(pick[:n_train], pick[n_train:n_train + n_val], pick[n_train + n_val:])


def window_split(bundle, motion, n=50, seed=0):
    """Cut one aligned recording into windows and split them 80/10/10."""
    return split_windows(make_windows(bundle, motion, n), seed)
