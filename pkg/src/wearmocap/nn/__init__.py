"""Minimal neural toolkit: autograd tensors, layers, losses and Adam."""

from .autograd import Tensor, backward, no_grad
from .layers import birnn_forward, mlp_forward
from .losses import (
    JOINT_LOSS_WEIGHTS,
    decayed_lambda,
    loss_kd_feat,
    loss_kd_output,
    loss_pose,
    loss_student,
    loss_teacher,
    loss_trans,
)
from .model import ModelConfig, ModelInputs, ModelParams, init_model, load_params, model_forward, save_params
from .optim import AdamState, adam_step

__all__ = [
    "Tensor", "backward", "no_grad", "birnn_forward", "mlp_forward",
    "JOINT_LOSS_WEIGHTS", "decayed_lambda", "loss_kd_feat", "loss_kd_output",
    "loss_pose", "loss_student", "loss_teacher", "loss_trans",
    "ModelConfig", "ModelInputs", "ModelParams", "init_model", "load_params",
    "model_forward", "save_params", "AdamState", "adam_step",
]
