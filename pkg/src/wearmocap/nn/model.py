"""The pose estimator: IMU encoder, per-view visual adapters, head-pose input,
bidirectional LSTM fusion and a linear head emitting 24 x 6D rotations plus
the root translation per frame. Also the parameter container and its
checkpoint format."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..body_model import NUM_JOINTS
from ..errors import DataShapeMismatch
from . import autograd as ag
from .layers import birnn_forward, init_linear, init_lstm, init_mlp, mlp_forward

IMU_CHANNELS = 12  # flattened 3x3 orientation + 3 acceleration
HEAD_CHANNELS = 12  # flattened 3x3 rotation + 3 translation
OUTPUT_WIDTH = NUM_JOINTS * 6 + 3
NUM_VIEWS = 3
CHECKPOINT_FORMAT = "wearmocap-params"
CHECKPOINT_VERSION = 1
# Accelerations enter the network in units of g.
ACC_SCALE = 1.0 / 9.81


@dataclass
class ModelConfig:
    n_sensors: int = 5
    encoder_hidden: int = 256
    feature_dim: int = 128
    visual_dim: int = 512
    adapter_dim: int = 64
    rnn_hidden: int = 128

    @property
    def imu_width(self):
        return self.n_sensors * IMU_CHANNELS

    @property
    def fused_width(self):
        return NUM_VIEWS * self.adapter_dim + self.feature_dim + HEAD_CHANNELS


@dataclass
class ModelParams:
    """All learnable arrays by layer path, plus the architecture they fit."""
    config: ModelConfig
    tensors: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def names(self):
        return list(self.tensors)

    def group(self, prefix):
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def arrays(self):
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def copy(self):
        return ModelParams(ModelConfig(**vars(self.config)),
                           {k: ag.Tensor(v.data.copy(), requires_grad=True) for k, v in self.tensors.items()})

    def is_finite(self):
        return all(np.all(np.isfinite(v.data)) for v in self.tensors.values())


ENCODER_PREFIX = "imu_encoder"
VIEW_NAMES = ("forward", "down_left", "down_right")


def init_encoder(tensors, config, rng):
    for k in [k for k in tensors if k.startswith(ENCODER_PREFIX + ".")]:
        del tensors[k]
    init_mlp(tensors, ENCODER_PREFIX, (config.imu_width, config.encoder_hidden, config.feature_dim), rng)


def init_model(config, seed):
    rng = np.random.default_rng(seed)
    t = {}
    init_encoder(t, config, rng)
    for v in VIEW_NAMES:
        init_linear(t, f"visual_adapters.{v}", config.visual_dim, config.adapter_dim, rng)
    init_lstm(t, "fusion_rnn.fwd", config.fused_width, config.rnn_hidden, rng)
    init_lstm(t, "fusion_rnn.bwd", config.fused_width, config.rnn_hidden, rng)
    init_linear(t, "output_head", 2 * config.rnn_hidden, OUTPUT_WIDTH, rng)
    t["log_var_pose"] = ag.Tensor(np.array(0.0), requires_grad=True)
    t["log_var_trans"] = ag.Tensor(np.array(0.0), requires_grad=True)
    return ModelParams(config, t)


@dataclass
class ModelInputs:
    """A batch of windows.

    imu: (B, T, S, 12) orientation + acceleration per sensor
    imu_valid: (B, T, S) 1 for usable samples, 0 for masked or lost ones
    feats: (B, T, 3, D) visual features per view
    head: (B, T, 12) SLAM head rotation + translation
    """
    imu: np.ndarray
    imu_valid: np.ndarray
    feats: np.ndarray
    head: np.ndarray

    @property
    def batch_shape(self):
        return self.imu.shape[:2]


@dataclass
class ModelOutputs:
    pred: ag.Tensor  # (B, T, 147)
    imu_features: ag.Tensor  # (B*T, feature_dim)

    @property
    def rot(self):
        B, T, _ = self.pred.shape
        return ag.reshape(self.pred[:, :, :NUM_JOINTS * 6], (B * T, NUM_JOINTS * 6))

    @property
    def trans(self):
        B, T, _ = self.pred.shape
        return ag.reshape(self.pred[:, :, NUM_JOINTS * 6:], (B * T, 3))


def imu_vector(imu, valid):
    """Scale accelerations, zero invalid sensors and flatten to (B*T, S*12)."""
    x = np.array(imu, dtype=np.float64, copy=True)
    x[..., 9:12] *= ACC_SCALE
    x *= valid[..., None]
    B, T = x.shape[:2]
    return x.reshape(B * T, -1)


def model_forward(params, inputs):
    cfg = params.config
    B, T = inputs.batch_shape
    if inputs.imu.shape[2:] != (cfg.n_sensors, IMU_CHANNELS):
        raise DataShapeMismatch(f"model expects {cfg.n_sensors} sensors x 12, got {inputs.imu.shape}")
    if inputs.feats.shape[2:] != (NUM_VIEWS, cfg.visual_dim) or inputs.head.shape[2:] != (HEAD_CHANNELS,):
        raise DataShapeMismatch("visual or head-pose inputs have the wrong shape")
    u = mlp_forward(params.tensors, imu_vector(inputs.imu, inputs.imu_valid), ENCODER_PREFIX)
    parts = []
    for v_idx, v in enumerate(VIEW_NAMES):
        f = inputs.feats[:, :, v_idx, :].reshape(B * T, cfg.visual_dim)
        parts.append(ag.matmul(f, params[f"visual_adapters.{v}.weight"]) + params[f"visual_adapters.{v}.bias"])
    parts.append(u)
    parts.append(ag.Tensor(inputs.head.reshape(B * T, HEAD_CHANNELS)))
    fused = ag.reshape(ag.concat(parts, axis=-1), (B, T, cfg.fused_width))
    pred = birnn_forward(params.tensors, fused)
    return ModelOutputs(pred, u)


# ----------------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------------

def params_to_dict(params, meta=None):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": vars(params.config),
        "meta": meta or {},
        "arrays": {
            k: {"shape": list(v.data.shape), "data": v.data.reshape(-1).tolist()}
            for k, v in params.tensors.items()
        },
    }


def params_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    tensors = {
        k: ag.Tensor(np.array(a["data"], dtype=np.float64).reshape(a["shape"]), requires_grad=True)
        for k, a in d["arrays"].items()
    }
    return ModelParams(ModelConfig(**d["config"]), tensors)


def save_params(path, params, meta=None):
    with open(path, "w") as f:
        json.dump(params_to_dict(params, meta), f)


def load_params(path):
    with open(path) as f:
        return params_from_dict(json.load(f))
