"""Pose, translation, uncertainty-weighted, and distillation losses.

Inputs may be arrays or tensors with frames along the leading axes; per-frame
losses are averaged over frames. Rotations are flattened 24 x 6 = 144 wide.
"""

from fractions import Fraction

import numpy as np

from ..body_model import NUM_JOINTS
from ..errors import ShapeMismatch
from . import autograd as ag

# Per-joint weights of the pose loss, in joint order (Pelvis ... Right Hand).
JOINT_LOSS_WEIGHTS = np.array([
    1.0, 0.2, 0.2, 0.1, 0.3, 0.3, 0.1, 0.3, 0.3, 0.1, 0.3, 0.3,
    0.1, 0.3, 0.3, 0.3, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.4, 0.4,
])

LAMBDA_MOTION = 1.0
LAMBDA_OUTPUT = 0.5
LAMBDA_FEAT = 0.5
LAMBDA_DECAY = 0.8
LAMBDA_DECAY_EVERY = 10


def _rows(x, width):
    x = ag.as_tensor(x)
    if x.shape[-1] != width and x.shape[-2:] == (NUM_JOINTS, 6) and width == NUM_JOINTS * 6:
        x = ag.reshape(x, (-1, width))
    if x.shape[-1] != width:
        raise ShapeMismatch(f"expected trailing width {width}, got {x.shape}")
    return ag.reshape(x, (-1, width))


def loss_pose(pred, gt, weights=JOINT_LOSS_WEIGHTS):
    """Frame-averaged (1/J) sum_j w_j ||theta_j - theta_hat_j||^2."""
    p = _rows(pred, NUM_JOINTS * 6)
    g = _rows(gt, NUM_JOINTS * 6)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pose shapes differ: {p.shape} vs {g.shape}")
    w = np.repeat(np.asarray(weights, dtype=np.float64), 6)
    sq = ag.square(p - g) * w
    return ag.total(sq) * (1.0 / (NUM_JOINTS * p.shape[0]))


def loss_trans(pred, gt):
    """Frame-averaged squared L2 distance of root positions."""
    p = _rows(pred, 3)
    g = _rows(gt, 3)
    if p.shape != g.shape:
        raise ShapeMismatch(f"translation shapes differ: {p.shape} vs {g.shape}")
    return ag.total(ag.square(p - g)) * (1.0 / p.shape[0])


def loss_teacher(l_pose, l_trans, s_pose, s_trans):
    """L_pose / sigma_pose^2 + log sigma_pose^2 + L_trans / sigma_trans^2 + log sigma_trans^2,
    with the uncertainties parameterized as log-variances s = log sigma^2."""
    s_pose = ag.as_tensor(s_pose)
    s_trans = ag.as_tensor(s_trans)
    return (ag.as_tensor(l_pose) * ag.exp(-s_pose) + s_pose
            + ag.as_tensor(l_trans) * ag.exp(-s_trans) + s_trans)


def loss_kd_output(teacher_rot, student_rot):
    """Frame-averaged (1/J) sum_j ||theta^T_j - theta^S_j||^2 between two predictions."""
    t = _rows(teacher_rot, NUM_JOINTS * 6)
    s = _rows(student_rot, NUM_JOINTS * 6)
    if t.shape != s.shape:
        raise ShapeMismatch(f"prediction shapes differ: {t.shape} vs {s.shape}")
    return ag.total(ag.square(t - s)) * (1.0 / (NUM_JOINTS * t.shape[0]))


def loss_kd_feat(u_teacher, u_student):
    """Frame-averaged (1/d) ||U_tea - U_stu||^2."""
    t = ag.as_tensor(u_teacher)
    s = ag.as_tensor(u_student)
    if t.shape != s.shape:
        raise ShapeMismatch(f"feature shapes differ: {t.shape} vs {s.shape}")
    return ag.mean(ag.square(t - s))


def loss_student(l_motion, l_out, l_feat, lam_motion=LAMBDA_MOTION, lam_output=LAMBDA_OUTPUT, lam_feat=LAMBDA_FEAT):
    for lam in (lam_motion, lam_output, lam_feat):
        if lam < 0:
            raise ValueError("loss weights must be non-negative")
    return (ag.as_tensor(l_motion) * lam_motion + ag.as_tensor(l_out) * lam_output
            + ag.as_tensor(l_feat) * lam_feat)


def decayed_lambda(epoch, initial, decay=LAMBDA_DECAY, every=LAMBDA_DECAY_EVERY):
    """Weight after step decay: ``initial * decay ** (epoch // every)``.

    Evaluated on the decimal values as exact rationals and rounded once, so
    0.5 and 0.8 at epoch 25 give 0.32 rather than 0.32000000000000006.
    """
    return float(Fraction(repr(float(initial))) * Fraction(repr(float(decay))) ** (epoch // every))
