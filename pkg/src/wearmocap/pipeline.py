"""Training protocol: dataset synthesis and alignment, teacher training on
dense clean IMUs, student initialization and distillation on sparse noisy
IMUs, and masked evaluation."""

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import synth
from .body_model import NUM_JOINTS, default_mesh, default_tree
from .errors import DataShapeMismatch, NumericFailure
from .metrics import compute_report
from .nn import autograd as ag
from .nn.losses import (
    LAMBDA_DECAY,
    LAMBDA_DECAY_EVERY,
    decayed_lambda,
    loss_kd_feat,
    loss_kd_output,
    loss_pose,
    loss_student,
    loss_teacher,
    loss_trans,
)
from .nn.model import ENCODER_PREFIX, ModelConfig, ModelInputs, init_encoder, init_model, model_forward
from .nn.optim import AdamState, adam_step
from .rotmath import matrix_to_rot6d, rot6d_to_matrix
from .sequence import MotionSequence
from .streams import (
    ALIGNED_RATE_HZ,
    AlignedBundle,
    impute_hold_last,
    make_windows,
    nearest_indices,
    relativize_translations,
    resample_nn,
    smooth,
    split_sizes,
    target_grid,
)

log = logging.getLogger(__name__)

TEACHER_SITES = ("head", "left_wrist", "right_wrist", "left_hip", "right_hip")
STUDENT_SITES = ("head", "left_wrist", "right_hip")
SITE_REGION = {"head": "head", "left_wrist": "wrist", "right_wrist": "wrist", "left_hip": "hip", "right_hip": "hip"}
EVAL_MODES = ("full", "imu_only", "cams_only", "no_cam_feats", "no_slam", "no_head", "no_wrist", "no_hip")


def sub_seed(root, name):
    """Stable named sub-seed derived from a root seed."""
    digest = hashlib.sha256(f"{root}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFF


@dataclass(frozen=True)
class SensorSelection:
    teacher: tuple = TEACHER_SITES
    student: tuple = STUDENT_SITES

    def __post_init__(self):
        for s in self.teacher + self.student:
            if s not in synth.SENSOR_SITES:
                raise ValueError(f"unknown sensor site {s!r}")
        teacher_regions = {SITE_REGION[s] for s in self.teacher}
        if not {SITE_REGION[s] for s in self.student} <= teacher_regions:
            raise ValueError("student sites must cover body regions the teacher also senses")


@dataclass(frozen=True)
class DataConfig:
    n_sequences: int = 8
    duration: float = 51.0
    kinds: tuple = ("walk", "wave", "sit", "mixed")
    window: int = 50
    sim_rate_hz: float = 300.0
    imu_rate_hz: float = 100.0
    camera_rate_hz: float = 30.0
    feature_dim: int = 512
    occlusion_fraction: float = 0.1
    slam_drift_rate: float = 0.01
    slam_scale_range: tuple = (0.7, 1.3)
    smooth_window: int = 5
    max_gap: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    window: int = 50
    batch_size: int = 32
    epochs: int = 50
    lr_teacher: float = 1e-3
    lr_student_encoder: float = 1e-3
    lr_student_rest: float = 1e-4
    lambda_motion: float = 1.0
    lambda_output: float = 0.5
    lambda_feat: float = 0.5
    lambda_decay: float = LAMBDA_DECAY
    lambda_decay_every: int = LAMBDA_DECAY_EVERY
    rnn_hidden: int = 128
    adapter_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if min(self.lr_teacher, self.lr_student_encoder, self.lr_student_rest) < 0:
            raise ValueError("learning rates must be non-negative")
        if min(self.lambda_motion, self.lambda_output, self.lambda_feat) < 0:
            raise ValueError("loss weights must be non-negative")

    def lambdas(self, epoch):
        return (
            self.lambda_motion,
            decayed_lambda(epoch, self.lambda_output, self.lambda_decay, self.lambda_decay_every),
            decayed_lambda(epoch, self.lambda_feat, self.lambda_decay, self.lambda_decay_every),
        )


# ----------------------------------------------------------------------------
# Recording synthesis and alignment
# ----------------------------------------------------------------------------

@dataclass
class Recording:
    """Raw device streams of one session, all on the motion-capture clock."""
    motion: MotionSequence  # 25 Hz ground truth
    dense_imu: dict  # site -> clean TimedStream
    consumer_imu: dict  # site -> noisy TimedStream with dropouts
    features: dict  # view -> TimedStream
    slam: object
    name: str = ""


def _subsample(seq, step):
    return MotionSequence(seq.rate_hz / step, seq.trans[::step], seq.rot[::step], seq.start_time)


def _occlusions(duration, fraction, rng, mean_len=2.0):
    if fraction <= 0:
        return []
    count = max(1, int(round(duration * fraction / mean_len)))
    starts = np.sort(rng.uniform(0.0, duration - mean_len, size=count))
    return [(float(s), float(s + mean_len)) for s in starts]


def synthesize_recording(kind, seed, data_cfg=DataConfig(), noise=None, tree=None, name=""):
    tree = default_tree() if tree is None else tree
    noise = synth.CONSUMER_NOISE if noise is None else noise
    hi = synth.gen_motion(kind, data_cfg.duration, data_cfg.sim_rate_hz, sub_seed(seed, "motion"))
    imu_step = int(round(data_cfg.sim_rate_hz / data_cfg.imu_rate_hz))
    cam_step = int(round(data_cfg.sim_rate_hz / data_cfg.camera_rate_hz))
    gt_step = int(round(data_cfg.sim_rate_hz / ALIGNED_RATE_HZ))
    imu_seq = _subsample(hi, imu_step)
    cam_seq = _subsample(hi, cam_step)

    dense, consumer = {}, {}
    for site in TEACHER_SITES:
        clean = synth.simulate_imu(imu_seq, tree, synth.SENSOR_SITES[site])
        dense[site] = clean
        cfg = synth.NoiseConfig(**noise, seed=sub_seed(seed, f"noise:{site}"))
        consumer[site] = synth.apply_consumer_noise(clean, cfg)

    rng = np.random.default_rng(sub_seed(seed, "occlusion"))
    occl = _occlusions(data_cfg.duration, data_cfg.occlusion_fraction, rng)
    feats = {
        view: synth.simulate_camera_features(cam_seq, tree, view, occl, data_cfg.feature_dim,
                                             seed=sub_seed(seed, f"cam:{view}"))
        for view in synth.CAMERA_VIEWS
    }
    scale = rng.uniform(*data_cfg.slam_scale_range)
    slam = synth.simulate_slam_head(cam_seq, tree, data_cfg.slam_drift_rate, scale, sub_seed(seed, "slam"))
    return Recording(_subsample(hi, gt_step), dense, consumer, feats, slam, name)


def align_recording(rec, data_cfg=DataConfig()):
    """Smooth, impute and resample every stream of a recording onto one 25 Hz grid."""
    all_streams = (list(rec.dense_imu.values()) + list(rec.consumer_imu.values())
                   + list(rec.features.values()) + [rec.slam])
    start = max(max(s.timestamps[0] for s in all_streams), rec.motion.timestamps[0])
    stop = min(min(s.timestamps[-1] for s in all_streams), rec.motion.timestamps[-1])
    grid = target_grid(start, stop, ALIGNED_RATE_HZ)
    streams = {}
    for site, s in rec.dense_imu.items():
        streams[f"dense:{site}"] = resample_nn(smooth(s, data_cfg.smooth_window), ALIGNED_RATE_HZ, start, stop)
    for site, s in rec.consumer_imu.items():
        filled = impute_hold_last(s, data_cfg.max_gap)
        streams[f"consumer:{site}"] = resample_nn(smooth(filled, data_cfg.smooth_window), ALIGNED_RATE_HZ, start, stop)
    for view, s in rec.features.items():
        streams[f"feat:{view}"] = resample_nn(s, ALIGNED_RATE_HZ, start, stop)
    streams["slam"] = resample_nn(rec.slam, ALIGNED_RATE_HZ, start, stop)
    idx = nearest_indices(rec.motion.timestamps, grid)
    motion = MotionSequence(ALIGNED_RATE_HZ, rec.motion.trans[idx], rec.motion.rot[idx], float(grid[0]))
    return AlignedBundle(grid, streams), motion


# ----------------------------------------------------------------------------
# Window arrays
# ----------------------------------------------------------------------------

@dataclass
class WindowData:
    """Stacked model inputs and targets for n windows of N frames."""
    dense_imu: np.ndarray  # (n, N, 5, 12)
    dense_valid: np.ndarray  # (n, N, 5)
    sparse_imu: np.ndarray  # (n, N, 3, 12)
    sparse_valid: np.ndarray  # (n, N, 3)
    feats: np.ndarray  # (n, N, 3, D)
    head: np.ndarray  # (n, N, 12)
    gt_rot: np.ndarray  # (n, N, 24, 6)
    gt_trans: np.ndarray  # (n, N, 3)
    sources: list = field(default_factory=list)
    student_sites: tuple = STUDENT_SITES

    def __len__(self):
        return len(self.gt_rot)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return WindowData(
            self.dense_imu[idx], self.dense_valid[idx], self.sparse_imu[idx], self.sparse_valid[idx],
            self.feats[idx], self.head[idx], self.gt_rot[idx], self.gt_trans[idx],
            [self.sources[i] for i in idx] if self.sources else [],
            self.student_sites,
        )

    def inputs(self, sparse=False, mode="full"):
        imu = self.sparse_imu if sparse else self.dense_imu
        valid = self.sparse_valid if sparse else self.dense_valid
        sites = self.student_sites if sparse else TEACHER_SITES
        return apply_mode(ModelInputs(imu, valid, self.feats, self.head), mode, sites)

    def gt_motions(self):
        return [MotionSequence(ALIGNED_RATE_HZ, t, r) for t, r in zip(self.gt_trans, self.gt_rot)]


@dataclass
class Dataset:
    train: WindowData
    val: WindowData
    test: WindowData


def _imu_block(streams, prefix, sites, heading):
    rot = np.stack([streams[f"{prefix}:{s}"].channels["rot"] for s in sites], axis=1)  # (N, S, 3, 3)
    acc = np.stack([streams[f"{prefix}:{s}"].channels["acc"] for s in sites], axis=1)
    rot = heading.T @ rot
    N, S = rot.shape[:2]
    imu = np.concatenate([rot.reshape(N, S, 9), acc], axis=-1)
    if prefix == "consumer":
        valid = np.stack([streams[f"{prefix}:{s}"].channels["valid"] for s in sites], axis=1)
    else:
        valid = np.ones((N, S))
    return imu, valid


def window_arrays(window, tree, sparse_sites=STUDENT_SITES):
    """Model-ready arrays for one window.

    Ground truth is made relative to the window's first frame (head heading
    plus root position); IMU orientations are rotated into the same heading
    frame; SLAM head poses are made relative to the window's first SLAM pose.
    """
    rel = relativize_translations(window.motion, tree)
    heading = rel.reference[0]
    s = window.bundle.streams
    dense_imu, dense_valid = _imu_block(s, "dense", TEACHER_SITES, heading)
    sparse_imu, sparse_valid = _imu_block(s, "consumer", sparse_sites, heading)
    feats = np.stack([s[f"feat:{v}"].channels["vec"] for v in synth.CAMERA_VIEWS], axis=1)
    slam_rot = s["slam"].channels["rot"]
    slam_trans = s["slam"].channels["trans"]
    r0 = slam_rot[0]
    head_rot = r0.T @ slam_rot
    head_trans = (slam_trans - slam_trans[0]) @ r0
    head = np.concatenate([head_rot.reshape(-1, 9), head_trans], axis=-1)
    return dense_imu, dense_valid, sparse_imu, sparse_valid, feats, head, rel.rot, rel.trans


def stack_windows(windows, tree, student_sites=STUDENT_SITES):
    parts = [window_arrays(w, tree, student_sites) for w in windows]
    cols = [np.stack(c) for c in zip(*parts)]
    return WindowData(*cols, sources=[f"{w.source}@{w.start}" for w in windows], student_sites=tuple(student_sites))


def sequence_plan(data_cfg):
    """(name, motion kind) of every recording in a dataset."""
    out = []
    for k in range(data_cfg.n_sequences):
        kind = data_cfg.kinds[k % len(data_cfg.kinds)]
        out.append((f"seq{k:03d}_{kind}", kind))
    return out


def dataset_from_aligned(aligned, seed, window=50, tree=None, student_sites=STUDENT_SITES):
    """Window ``(name, bundle, motion)`` triples and split 80/10/10 by seeded shuffle."""
    tree = default_tree() if tree is None else tree
    windows = []
    for name, bundle, motion in aligned:
        windows.extend(make_windows(bundle, motion, window, name))
    return split_dataset(stack_windows(windows, tree, student_sites), sub_seed(seed, "shuffle"))


def build_dataset(seed, data_cfg=DataConfig(), noise=None, tree=None, student_sites=STUDENT_SITES):
    """Synthesize, align and window ``n_sequences`` recordings."""
    tree = default_tree() if tree is None else tree
    aligned = []
    for name, kind in sequence_plan(data_cfg):
        rec = synthesize_recording(kind, sub_seed(seed, name), data_cfg, noise, tree, name)
        aligned.append((name, *align_recording(rec, data_cfg)))
    return dataset_from_aligned(aligned, seed, data_cfg.window, tree, student_sites)


def split_dataset(data, seed):
    order = np.random.default_rng(seed).permutation(len(data))
    n_train, n_val, _ = split_sizes(len(data))
    return Dataset(data.subset(order[:n_train]), data.subset(order[n_train:n_train + n_val]),
                   data.subset(order[n_train + n_val:]))


# ----------------------------------------------------------------------------
# Input masking
# ----------------------------------------------------------------------------

def apply_mode(inputs, mode, sites):
    """Zero the channels an ablation mode removes and clear their validity flags."""
    if mode not in EVAL_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {EVAL_MODES}")
    imu, valid, feats, head = inputs.imu, inputs.imu_valid, inputs.feats, inputs.head
    if mode in ("imu_only", "no_cam_feats"):
        feats = np.zeros_like(feats)
    if mode in ("imu_only", "no_slam"):
        head = np.zeros_like(head)
    if mode == "cams_only":
        imu = np.zeros_like(imu)
        valid = np.zeros_like(valid)
    if mode.startswith("no_") and mode[3:] in ("head", "wrist", "hip"):
        drop = [i for i, s in enumerate(sites) if SITE_REGION[s] == mode[3:]]
        imu = imu.copy()
        valid = valid.copy()
        imu[:, :, drop] = 0.0
        valid[:, :, drop] = 0.0
    return ModelInputs(imu, valid, feats, head)


def occlude_features(inputs, fraction, seed):
    """Zero the camera features on one contiguous block of ``fraction * N`` frames per window.

    Returns the masked inputs and the boolean (B, N) occlusion mask.
    """
    B, N = inputs.batch_shape
    length = int(round(fraction * N))
    rng = np.random.default_rng(seed)
    mask = np.zeros((B, N), dtype=bool)
    for b in range(B):
        s = rng.integers(0, N - length + 1)
        mask[b, s:s + length] = True
    feats = np.where(mask[:, :, None, None], 0.0, inputs.feats)
    return ModelInputs(inputs.imu, inputs.imu_valid, feats, inputs.head), mask


# ----------------------------------------------------------------------------
# Training
# ----------------------------------------------------------------------------

def _batch_inputs(inputs, idx):
    return ModelInputs(inputs.imu[idx], inputs.imu_valid[idx], inputs.feats[idx], inputs.head[idx])


def _targets(data, idx):
    rot = data.gt_rot[idx].reshape(-1, NUM_JOINTS * 6)
    trans = data.gt_trans[idx].reshape(-1, 3)
    return rot, trans


def motion_loss(params, out, gt_rot, gt_trans):
    return loss_teacher(loss_pose(out.rot, gt_rot), loss_trans(out.trans, gt_trans),
                        params["log_var_pose"], params["log_var_trans"])


def _check_finite(value, what):
    if not np.isfinite(value):
        raise NumericFailure(f"non-finite {what}")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _validate(data, sparse, n_sensors):
    if len(data) == 0:
        raise DataShapeMismatch("empty training split")
    width = (data.sparse_imu if sparse else data.dense_imu).shape[2]
    if width != n_sensors:
        raise DataShapeMismatch(f"data has {width} IMU sites, model expects {n_sensors}")


def evaluate_loss(params, data, sparse=False, mode="full", batch_size=64):
    if len(data) == 0:
        return float("nan")
    inputs = data.inputs(sparse, mode)
    total, count = 0.0, 0
    with ag.no_grad():
        for i in range(0, len(data), batch_size):
            idx = np.arange(i, min(i + batch_size, len(data)))
            out = model_forward(params, _batch_inputs(inputs, idx))
            rot, trans = _targets(data, idx)
            total += float(motion_loss(params, out, rot, trans)) * len(idx)
            count += len(idx)
    return total / count


def train_teacher(dataset, cfg=TrainConfig(), mode="full", params=None):
    """Fit the dense-IMU model by minimizing the uncertainty-weighted motion loss.

    Returns ``(params, curve)`` where ``curve`` holds one dict per epoch.
    """
    config = ModelConfig(n_sensors=len(TEACHER_SITES), visual_dim=dataset.train.feats.shape[-1],
                         adapter_dim=cfg.adapter_dim, rnn_hidden=cfg.rnn_hidden)
    params = init_model(config, sub_seed(cfg.seed, "teacher_init")) if params is None else params
    _validate(dataset.train, False, params.config.n_sensors)
    return _fit(params, dataset, cfg, sparse=False, mode=mode, lr=cfg.lr_teacher, teacher=None)


def init_student_from_teacher(teacher, seed, n_sensors=len(STUDENT_SITES)):
    """Copy the teacher except the IMU encoder, which is re-initialized for the sparse sensor set."""
    student = teacher.copy()
    student.config.n_sensors = n_sensors
    init_encoder(student.tensors, student.config, np.random.default_rng(sub_seed(seed, "student_encoder")))
    return student


def student_learning_rates(params, cfg):
    return {k: (cfg.lr_student_encoder if k.startswith(ENCODER_PREFIX + ".") else cfg.lr_student_rest)
            for k in params.names()}


def train_student(dataset, teacher, cfg=TrainConfig(), student=None, mode="full"):
    """Distill the teacher into a sparse-IMU student.

    Per batch the frozen teacher sees the dense clean IMUs and the student the
    sparse noisy ones for the same windows; the student minimizes
    lambda_motion * L_motion + lambda_output * L_out + lambda_feat * L_feat with
    the two KD weights decayed stepwise by epoch.
    """
    if student is None:
        student = init_student_from_teacher(teacher, cfg.seed, dataset.train.sparse_imu.shape[2])
    _validate(dataset.train, True, student.config.n_sensors)
    return _fit(student, dataset, cfg, sparse=True, mode=mode,
                lr=student_learning_rates(student, cfg), teacher=teacher)


def _teacher_targets(teacher, data, mode, batch_size=64):
    inputs = data.inputs(False, mode)
    rots, feats = [], []
    with ag.no_grad():
        for i in range(0, len(data), batch_size):
            idx = np.arange(i, min(i + batch_size, len(data)))
            out = model_forward(teacher, _batch_inputs(inputs, idx))
            N = data.gt_rot.shape[1]
            rots.append(out.rot.data.reshape(len(idx), N, -1))
            feats.append(out.imu_features.data.reshape(len(idx), N, -1))
    return np.concatenate(rots), np.concatenate(feats)


def _fit(params, dataset, cfg, sparse, mode, lr, teacher):
    train = dataset.train
    inputs = train.inputs(sparse, mode)
    rng = np.random.default_rng(sub_seed(cfg.seed, "batches"))
    state = AdamState()
    if teacher is not None and (cfg.lambda_output > 0 or cfg.lambda_feat > 0):
        t_rot, t_feat = _teacher_targets(teacher, train, mode)
    else:
        t_rot = t_feat = None
    curve = []
    for epoch in range(cfg.epochs):
        lam = cfg.lambdas(epoch)
        losses = []
        for idx in _batches(len(train), cfg.batch_size, rng):
            out = model_forward(params, _batch_inputs(inputs, idx))
            rot, trans = _targets(train, idx)
            loss = motion_loss(params, out, rot, trans)
            if teacher is not None:
                if t_rot is not None:
                    l_out = loss_kd_output(t_rot[idx].reshape(-1, NUM_JOINTS * 6), out.rot)
                    l_feat = loss_kd_feat(t_feat[idx].reshape(out.imu_features.shape), out.imu_features)
                else:
                    l_out = l_feat = 0.0
                loss = loss_student(loss, l_out, l_feat, *lam)
            value = float(loss)
            _check_finite(value, "training loss")
            grads = ag.backward(loss, params.tensors)
            adam_step(params.tensors, grads, state, lr)
            losses.append(value * len(idx))
        row = {
            "epoch": epoch,
            "loss_train": sum(losses) / len(train),
            "loss_val": evaluate_loss(params, dataset.val, sparse, mode),
            "log_var_pose": float(params["log_var_pose"].data),
            "log_var_trans": float(params["log_var_trans"].data),
            "lambda_output": lam[1],
            "lambda_feat": lam[2],
        }
        curve.append(row)
        log.info("epoch %d train %.5f val %.5f", epoch, row["loss_train"], row["loss_val"])
    if not params.is_finite():
        raise NumericFailure("parameters became non-finite")
    return params, curve


# ----------------------------------------------------------------------------
# Evaluation
# ----------------------------------------------------------------------------

def predict(params, data, mode="full", occlusion=None, batch_size=64):
    """Predicted (trans, rot6d) arrays of shape (n, N, 3) and (n, N, 24, 6).

    ``occlusion`` optionally gives ``(fraction, seed)`` for feature occlusion;
    the boolean occlusion mask is then returned as a third value.
    """
    sparse = params.config.n_sensors != len(TEACHER_SITES)
    inputs = data.inputs(sparse, mode)
    mask = None
    if occlusion is not None:
        inputs, mask = occlude_features(inputs, *occlusion)
    n, N = data.gt_rot.shape[:2]
    trans = np.empty((n, N, 3))
    rot = np.empty((n, N, NUM_JOINTS, 6))
    with ag.no_grad():
        for i in range(0, n, batch_size):
            idx = np.arange(i, min(i + batch_size, n))
            out = model_forward(params, _batch_inputs(inputs, idx)).pred.data
            trans[idx] = out[:, :, NUM_JOINTS * 6:]
            rot[idx] = out[:, :, :NUM_JOINTS * 6].reshape(len(idx), N, NUM_JOINTS, 6)
    # project raw network 6D outputs onto valid rotations for reporting
    rot = matrix_to_rot6d(rot6d_to_matrix(rot))
    return (trans, rot) if mask is None else (trans, rot, mask)


def evaluate(params, data, mode="full", tree=None, mesh=None, with_scale=True, frame_mask=None, occlusion=None):
    """Metrics of the model on a split under an input-masking mode.

    ``frame_mask`` (n, N) restricts every metric to the selected frames.
    """
    tree = default_tree() if tree is None else tree
    mesh = default_mesh() if mesh is None else mesh
    res = predict(params, data, mode, occlusion)
    trans, rot = res[0], res[1]
    return report_from_arrays(trans, rot, data, tree, mesh, mode, with_scale, frame_mask)


def report_from_arrays(trans, rot, data, tree, mesh, mode="full", with_scale=True, frame_mask=None):
    preds, gts = [], []
    for i in range(len(data)):
        sel = slice(None) if frame_mask is None else frame_mask[i]
        if frame_mask is not None and not np.any(sel):
            continue
        preds.append(MotionSequence(ALIGNED_RATE_HZ, trans[i][sel], rot[i][sel]))
        gts.append(MotionSequence(ALIGNED_RATE_HZ, data.gt_trans[i][sel], data.gt_rot[i][sel]))
    return compute_report(preds, gts, tree, mesh, mode, with_scale)


def with_epochs(cfg, epochs):
    return replace(cfg, epochs=epochs)
