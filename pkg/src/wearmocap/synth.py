"""Seeded synthetic world: procedural motions, simulated IMU / camera-feature /
SLAM head-pose streams, consumer-grade sensor noise and the two alignment
gestures.

Conventions: world is z-up (x forward, y left), gravity is (0, 0, -9.81),
IMU orientation maps sensor frame to world, IMU acceleration is expressed in
the sensor frame with gravity included.
"""

from dataclasses import dataclass

import numpy as np

from .body_model import JOINT_INDEX, NUM_JOINTS, Pose, forward_kinematics
from .errors import SequenceTooShort
from .rotmath import axis_rotation, euler_to_matrix, matrix_to_rot6d, rotvec_to_matrix
from .sequence import MotionSequence, TimedStream, scalar_stream

GRAVITY = np.array([0.0, 0.0, -9.81])
MOTION_KINDS = ("walk", "wave", "sit", "mixed")
JOINT_ANGLE_LIMIT = 2.8
PELVIS_HEIGHT = 0.92


# ----------------------------------------------------------------------------
# Motion generation
# ----------------------------------------------------------------------------

def _j(name):
    return JOINT_INDEX[name]


def _profile_walk(t, rng):
    T = len(t)
    ang = np.zeros((T, NUM_JOINTS, 3))
    f = rng.uniform(0.8, 1.1)
    ph = 2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)
    a_hip = rng.uniform(0.35, 0.5)
    a_knee = rng.uniform(0.6, 0.9)
    a_arm = rng.uniform(0.3, 0.5)
    # hip pitch: negative swings the thigh forward
    ang[:, _j("Left Hip"), 1] = -a_hip * np.sin(ph)
    ang[:, _j("Right Hip"), 1] = a_hip * np.sin(ph)
    ang[:, _j("Left Knee"), 1] = a_knee * (0.5 - 0.5 * np.cos(ph + 0.6)) ** 2
    ang[:, _j("Right Knee"), 1] = a_knee * (0.5 + 0.5 * np.cos(ph + 0.6)) ** 2
    ang[:, _j("Left Ankle"), 1] = 0.15 * np.sin(ph + 1.0)
    ang[:, _j("Right Ankle"), 1] = -0.15 * np.sin(ph + 1.0)
    # arms hang (x-roll) and swing opposite to the legs (y-pitch)
    ang[:, _j("Left Shoulder"), 2] = -1.25
    ang[:, _j("Right Shoulder"), 2] = 1.25
    ang[:, _j("Left Shoulder"), 1] = a_arm * np.sin(ph)
    ang[:, _j("Right Shoulder"), 1] = -a_arm * np.sin(ph)
    ang[:, _j("Left Elbow"), 0] = 0.3 + 0.2 * np.sin(ph)
    ang[:, _j("Right Elbow"), 0] = -0.3 + 0.2 * np.sin(ph)
    ang[:, _j("Spine2"), 0] = 0.08 * np.sin(ph)
    ang[:, _j("Head"), 0] = 0.35 * np.sin(2 * np.pi * rng.uniform(0.05, 0.15) * t + rng.uniform(0, 6.28))
    ang[:, _j("Head"), 1] = 0.1 * np.sin(2 * np.pi * 0.2 * t)
    speed = np.full(T, rng.uniform(0.9, 1.4))
    height = PELVIS_HEIGHT - 0.02 + 0.02 * np.cos(2 * ph)
    return ang, speed, height


def _profile_wave(t, rng):
    T = len(t)
    ang = np.zeros((T, NUM_JOINTS, 3))
    f = rng.uniform(1.2, 2.0)
    ph = 2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)
    right = rng.random() < 0.5
    ang[:, _j("Left Shoulder"), 2] = -1.25
    ang[:, _j("Right Shoulder"), 2] = 1.25
    # raise one arm above the shoulder and wave the forearm
    lift = 0.5 - 0.5 * np.cos(np.minimum(t, 1.0) * np.pi)
    if right:
        ang[:, _j("Right Shoulder"), 2] = 1.25 - lift * 2.3
        ang[:, _j("Right Elbow"), 2] = lift * (0.9 + 0.5 * np.sin(ph))
    else:
        ang[:, _j("Left Shoulder"), 2] = -1.25 + lift * 2.3
        ang[:, _j("Left Elbow"), 2] = -lift * (0.9 + 0.5 * np.sin(ph))
    ang[:, _j("Spine3"), 2] = 0.05 * np.sin(ph)
    ang[:, _j("Head"), 0] = 0.25 * np.sin(2 * np.pi * 0.1 * t + rng.uniform(0, 6.28))
    ang[:, _j("Left Knee"), 1] = 0.05 + 0.03 * np.sin(0.5 * ph)
    ang[:, _j("Right Knee"), 1] = 0.05 - 0.03 * np.sin(0.5 * ph)
    speed = np.zeros(T)
    height = np.full(T, PELVIS_HEIGHT - 0.01)
    return ang, speed, height


def _profile_sit(t, rng, duration):
    T = len(t)
    ang = np.zeros((T, NUM_JOINTS, 3))
    period = min(8.0, max(duration, 1.0)) * rng.uniform(0.9, 1.0)
    s = 0.5 - 0.5 * np.cos(2 * np.pi * t / period)
    s = s * s * (3 - 2 * s)
    depth = rng.uniform(0.9, 1.0)
    s = depth * s
    ang[:, _j("Left Hip"), 1] = -1.45 * s
    ang[:, _j("Right Hip"), 1] = -1.45 * s
    ang[:, _j("Left Knee"), 1] = 1.5 * s
    ang[:, _j("Right Knee"), 1] = 1.5 * s
    lean = np.sin(np.pi * s) * 0.35
    ang[:, _j("Spine1"), 1] = lean
    ang[:, _j("Left Shoulder"), 2] = -1.25
    ang[:, _j("Right Shoulder"), 2] = 1.25
    ang[:, _j("Left Shoulder"), 1] = -0.4 * lean
    ang[:, _j("Right Shoulder"), 1] = -0.4 * lean
    ang[:, _j("Left Elbow"), 0] = 0.2
    ang[:, _j("Right Elbow"), 0] = -0.2
    ang[:, _j("Head"), 0] = 0.3 * np.sin(2 * np.pi * 0.12 * t + rng.uniform(0, 6.28))
    speed = np.zeros(T)
    height = PELVIS_HEIGHT - 0.42 * s
    return ang, speed, height


def gen_motion(kind, duration, rate_hz, seed):
    """Procedural motion of ``round(duration * rate_hz)`` frames.

    Local joint angles stay within +/-2.8 rad; the root translation integrates
    a bounded walking speed, so it is continuous.
    """
    if kind not in MOTION_KINDS:
        raise ValueError(f"unknown motion kind {kind!r}")
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = max(1, int(round(duration * rate_hz)))
    t = np.arange(n) / rate_hz

    if kind == "walk":
        ang, speed, height = _profile_walk(t, rng)
    elif kind == "wave":
        ang, speed, height = _profile_wave(t, rng)
    elif kind == "sit":
        ang, speed, height = _profile_sit(t, rng, duration)
    else:
        profiles = [_profile_walk(t, rng), _profile_wave(t, rng), _profile_sit(t, rng, duration)]
        logits = np.stack([
            2.0 * np.sin(2 * np.pi * rng.uniform(0.03, 0.08) * t + rng.uniform(0, 6.28))
            for _ in profiles
        ])
        w = np.exp(logits) / np.exp(logits).sum(axis=0)
        ang = sum(wk[:, None, None] * p[0] for wk, p in zip(w, profiles))
        speed = sum(wk * p[1] for wk, p in zip(w, profiles))
        height = sum(wk * p[2] for wk, p in zip(w, profiles))

    heading0 = rng.uniform(-1.2, 1.2)
    turn_amp = rng.uniform(0.2, 1.0)
    turn_f = rng.uniform(0.02, 0.06)
    heading = heading0 + turn_amp * np.sin(2 * np.pi * turn_f * t + rng.uniform(0, 6.28))
    ang[:, 0, 0] = heading
    ang[:, 0, 1] = 0.03 * np.sin(2 * np.pi * 0.3 * t)
    ang[:, 0, 2] = 0.03 * np.sin(2 * np.pi * 0.23 * t)
    ang = np.clip(ang, -JOINT_ANGLE_LIMIT, JOINT_ANGLE_LIMIT)

    vel = speed[:, None] * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
    xy = np.concatenate([np.zeros((1, 2)), np.cumsum(vel[:-1], axis=0) / rate_hz])
    xy += rng.uniform(-1.0, 1.0, size=2)
    trans = np.concatenate([xy, height[:, None]], axis=-1)
    rot = matrix_to_rot6d(euler_to_matrix(ang))
    return MotionSequence(rate_hz, trans, rot, 0.0)


# ----------------------------------------------------------------------------
# Sensors
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SensorSite:
    site: str
    mount_joint: int
    mount_rot: np.ndarray
    mount_trans: np.ndarray

    def __post_init__(self):
        if not 0 <= self.mount_joint < NUM_JOINTS:
            raise ValueError(f"mount joint {self.mount_joint} outside the 24-joint tree")


def _site(name, joint, trans, rot=None):
    return SensorSite(name, JOINT_INDEX[joint], np.eye(3) if rot is None else rot, np.array(trans, dtype=float))


SENSOR_SITES = {
    "head": _site("head", "Head", (0.0, 0.07, 0.05)),
    "left_wrist": _site("left_wrist", "Left Wrist", (0.0, 0.02, 0.02)),
    "right_wrist": _site("right_wrist", "Right Wrist", (0.0, -0.02, 0.02)),
    "left_hip": _site("left_hip", "Left Hip", (0.07, 0.03, -0.15), axis_rotation("z", 0.3)),
    "right_hip": _site("right_hip", "Right Hip", (0.07, -0.03, -0.15), axis_rotation("z", -0.3)),
}
SITE_NAMES = tuple(SENSOR_SITES)


def _site_trajectory(seq, tree, site):
    pos, ori = forward_kinematics(tree, seq.pose)
    j = site.mount_joint
    rot = ori[:, j] @ site.mount_rot
    p = pos[:, j] + ori[:, j] @ site.mount_trans
    return rot, p


def second_difference(p, dt):
    """Central second difference along axis 0; 3-point one-sided at the ends."""
    if len(p) < 3:
        raise SequenceTooShort("need at least 3 samples for a second difference")
    a = np.empty_like(p)
    a[1:-1] = (p[2:] - 2.0 * p[1:-1] + p[:-2]) / (dt * dt)
    a[0] = (p[0] - 2.0 * p[1] + p[2]) / (dt * dt)
    a[-1] = (p[-1] - 2.0 * p[-2] + p[-3]) / (dt * dt)
    return a


def simulate_imu(seq, tree, site):
    """Ideal IMU at ``site``: orientation from FK, acceleration from the second
    difference of the site position plus gravity, rotated into the sensor frame."""
    if len(seq) < 3:
        raise SequenceTooShort(f"simulate_imu needs >= 3 frames, got {len(seq)}")
    rot, p = _site_trajectory(seq, tree, site)
    acc_world = second_difference(p, 1.0 / seq.rate_hz) + GRAVITY
    acc = np.einsum("nba,nb->na", rot, acc_world)
    return TimedStream(seq.timestamps, "imu", {"rot": rot, "acc": acc}, seq.rate_hz, site.site)


@dataclass(frozen=True)
class NoiseConfig:
    accel_white_sigma: float = 0.0
    orientation_white_sigma: float = 0.0
    bias_walk_sigma: float = 0.0
    attachment_jitter_deg: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0
    jitter_time_constant: float = 2.0

    def __post_init__(self):
        for name in ("accel_white_sigma", "orientation_white_sigma", "bias_walk_sigma", "attachment_jitter_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")


CONSUMER_NOISE = dict(
    accel_white_sigma=0.3,
    orientation_white_sigma=0.02,
    bias_walk_sigma=0.05,
    attachment_jitter_deg=8.0,
    dropout_prob=0.03,
)


def apply_consumer_noise(stream, cfg):
    """Loose-wear consumer IMU model.

    Adds white acceleration noise, a random-walk acceleration bias, white
    orientation noise and a slowly varying attachment rotation (Ornstein-
    Uhlenbeck rotation vector), then drops samples independently with
    ``dropout_prob``. All random draws happen in a fixed order so each noise
    term depends only on the seed.
    """
    n = len(stream)
    rng = np.random.default_rng(cfg.seed)
    dt = 1.0 / stream.native_rate_hz
    white_acc = rng.standard_normal((n, 3))
    white_rot = rng.standard_normal((n, 3))
    bias_steps = rng.standard_normal((n, 3))
    jitter_steps = rng.standard_normal((n, 3))
    keep = rng.random(n) >= cfg.dropout_prob

    rot = stream.channels["rot"]
    acc = stream.channels["acc"]
    if cfg.attachment_jitter_deg > 0:
        sigma = np.deg2rad(cfg.attachment_jitter_deg)
        decay = np.exp(-dt / cfg.jitter_time_constant)
        drive = sigma * np.sqrt(1.0 - decay * decay)
        x = np.empty((n, 3))
        x[0] = sigma * jitter_steps[0]
        for k in range(1, n):
            x[k] = decay * x[k - 1] + drive * jitter_steps[k]
        J = rotvec_to_matrix(x)
        rot = rot @ J
        acc = np.einsum("nba,nb->na", J, acc)
    if cfg.orientation_white_sigma > 0:
        rot = rot @ rotvec_to_matrix(cfg.orientation_white_sigma * white_rot)
    if cfg.bias_walk_sigma > 0:
        acc = acc + np.cumsum(cfg.bias_walk_sigma * np.sqrt(dt) * bias_steps, axis=0)
    if cfg.accel_white_sigma > 0:
        acc = acc + cfg.accel_white_sigma * white_acc
    out = stream.with_channels(rot=rot, acc=acc)
    if cfg.dropout_prob > 0:
        out = out.take(np.flatnonzero(keep))
    return out


def simulate_slam_head(seq, tree, drift_rate, scale, seed, rot_noise_deg=0.5, drift_turn_sigma=0.05):
    """Head poses as a monocular SLAM would report them.

    Translation is the FK head position times ``scale`` plus a drift whose
    velocity has magnitude ``drift_rate`` and a slowly wandering direction.
    Rotation noise is a random rotation of at most ``min(rot_noise_deg, 1)``
    degrees.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    n = len(seq)
    dt = 1.0 / seq.rate_hz
    pos, ori = forward_kinematics(tree, seq.pose)
    head = JOINT_INDEX["Head"]
    rot = ori[:, head]
    trans = scale * pos[:, head]

    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    turns = rng.standard_normal((n, 3))
    noise_axes = rng.standard_normal((n, 3))
    noise_mags = rng.random(n)
    if drift_rate > 0:
        drift = np.zeros((n, 3))
        for k in range(1, n):
            direction = direction + drift_turn_sigma * np.sqrt(dt) * turns[k]
            direction /= np.linalg.norm(direction)
            drift[k] = drift[k - 1] + drift_rate * dt * direction
        trans = trans + drift
    max_deg = min(rot_noise_deg, 1.0)
    if max_deg > 0:
        axes = noise_axes / np.linalg.norm(noise_axes, axis=1, keepdims=True)
        rot = rot @ rotvec_to_matrix(axes * (np.deg2rad(max_deg) * noise_mags)[:, None])
    return TimedStream(seq.timestamps, "head", {"rot": rot, "trans": trans}, seq.rate_hz, "head_slam")


CAMERA_VIEWS = ("forward", "down_left", "down_right")
CAMERA_HALF_FOV = np.deg2rad(60.0)
_CAMERA_MOUNTS = {
    "forward": (np.eye(3), np.array([0.09, 0.0, 0.0])),
    "down_left": (axis_rotation("z", 0.35) @ axis_rotation("y", np.deg2rad(60.0)), np.array([0.09, 0.06, -0.01])),
    "down_right": (axis_rotation("z", -0.35) @ axis_rotation("y", np.deg2rad(60.0)), np.array([0.09, -0.06, -0.01])),
}


def feature_map(view, dim=512, map_seed=0):
    """The fixed linear map from masked camera-frame joint positions to features."""
    idx = CAMERA_VIEWS.index(view)
    rng = np.random.default_rng([map_seed, idx])
    return rng.standard_normal((dim, NUM_JOINTS * 3)) / np.sqrt(NUM_JOINTS * 3)


def camera_frame_joints(seq, tree, view):
    """Joint positions in the camera frame (T, 24, 3) and the in-view mask (T, 24)."""
    pos, ori = forward_kinematics(tree, seq.pose)
    head = JOINT_INDEX["Head"]
    mount_rot, mount_trans = _CAMERA_MOUNTS[view]
    cam_rot = ori[:, head] @ mount_rot
    cam_pos = pos[:, head] + ori[:, head] @ mount_trans
    local = np.einsum("tba,tjb->tja", cam_rot, pos - cam_pos[:, None, :])
    dist = np.linalg.norm(local, axis=-1)
    cos_axis = local[..., 0] / np.maximum(dist, 1e-12)
    visible = (dist > 0.05) & (cos_axis > np.cos(CAMERA_HALF_FOV))
    return local, visible


def simulate_camera_features(seq, tree, view, occlusion=(), dim=512, seed=0, map_seed=0, occlusion_noise=0.05):
    """Surrogate visual-encoder features for one camera.

    A fixed linear map (shared across sequences, chosen by ``map_seed``) of
    the camera-frame positions of in-view joints; out-of-view joints
    contribute zero. Inside any ``(start, stop)`` occlusion interval the
    feature is pure seeded Gaussian noise.
    """
    if dim <= 0:
        raise ValueError("dim must be positive")
    if view not in CAMERA_VIEWS:
        raise ValueError(f"unknown camera view {view!r}")
    local, visible = camera_frame_joints(seq, tree, view)
    masked = np.where(visible[..., None], local, 0.0).reshape(len(seq), -1)
    feats = masked @ feature_map(view, dim, map_seed).T
    ts = seq.timestamps
    rng = np.random.default_rng(seed)
    noise = occlusion_noise * rng.standard_normal(feats.shape)
    occluded = np.zeros(len(seq), dtype=bool)
    for start, stop in occlusion:
        occluded |= (ts >= start) & (ts < stop)
    feats[occluded] = noise[occluded]
    return TimedStream(ts, "feat", {"vec": feats}, seq.rate_hz, f"cam_{view}")


# ----------------------------------------------------------------------------
# Alignment gestures
# ----------------------------------------------------------------------------

def _grid(t0, t1, rate, rng):
    start = t0 + rng.uniform(0.0, 1.0 / rate)
    return start + np.arange(int((t1 - start) * rate)) / rate


def gesture1_signal(t, raise_times, amplitude, width=0.07, baseline=9.81):
    sig = np.full_like(t, baseline)
    for tr in raise_times:
        sig += amplitude * np.exp(-0.5 * ((t - tr) / width) ** 2)
    return sig


def gen_gesture1(offset, seed, phone_hz=100.0, mocap_hz=240.0):
    """Three vertical arm raises holding the phone.

    Returns ``(phone_stream, mocap_hand_stream)`` of z-acceleration. An event
    at phone time ``t`` appears at mocap time ``t + offset``. The true raise
    times on the phone clock are ``gesture1_raise_times(seed)``.
    """
    if abs(offset) > 5.0:
        raise ValueError("|offset| must be <= 5 s")
    rng = np.random.default_rng(seed)
    raises = gesture1_raise_times(seed)
    t_phone = _grid(0.0, raises[-1] + 2.0, phone_hz, rng)
    t_mocap = _grid(offset, raises[-1] + 2.0 + offset, mocap_hz, rng)
    phone = gesture1_signal(t_phone, raises, rng.uniform(4.0, 6.0)) + 0.08 * rng.standard_normal(len(t_phone))
    mocap = gesture1_signal(t_mocap, raises + offset, rng.uniform(3.0, 5.0)) + 0.04 * rng.standard_normal(len(t_mocap))
    return (scalar_stream(t_phone, phone, phone_hz, "phone_acc_z"),
            scalar_stream(t_mocap, mocap, mocap_hz, "mocap_hand_acc_z"))


def gesture1_raise_times(seed):
    rng = np.random.default_rng([seed, 1])
    gaps = rng.uniform(1.0, 1.6, size=2)
    first = rng.uniform(1.5, 2.5)
    return np.array([first, first + gaps[0], first + gaps[0] + gaps[1]])


def gesture2_turn_time(seed):
    return np.random.default_rng([seed, 2]).uniform(1.5, 2.5)


def gesture2_signal(t, turn_time, amplitude, width=0.2):
    return -amplitude * np.exp(-0.5 * ((t - turn_time) / width) ** 2)


def gen_gesture2(offset, seed, camera_hz=30.0, mocap_hz=240.0):
    """A quick head turn to the right and back.

    Returns ``(camera_yaw_stream, mocap_head_yaw_stream)``; an event at camera
    time ``t`` appears at mocap time ``t + offset``. Rightward yaw is negative.
    """
    if abs(offset) > 5.0:
        raise ValueError("|offset| must be <= 5 s")
    rng = np.random.default_rng(seed)
    turn = gesture2_turn_time(seed)
    amp = rng.uniform(0.8, 1.2)
    t_cam = _grid(0.0, turn + 2.0, camera_hz, rng)
    t_mocap = _grid(offset, turn + 2.0 + offset, mocap_hz, rng)
    cam = gesture2_signal(t_cam, turn, amp) + 0.004 * rng.standard_normal(len(t_cam))
    mocap = gesture2_signal(t_mocap, turn + offset, amp) + 0.001 * rng.standard_normal(len(t_mocap))
    return (scalar_stream(t_cam, cam, camera_hz, "camera_yaw"),
            scalar_stream(t_mocap, mocap, mocap_hz, "mocap_head_yaw"))


def constant_motion(pose, n, rate_hz):
    """A motion that holds one pose for ``n`` frames."""
    pose = Pose(pose.trans, pose.rot)
    return MotionSequence(rate_hz, np.tile(pose.trans, (n, 1)), np.tile(pose.rot, (n, 1, 1)))
