"""Pose-estimation metrics: MPJPE, PA-MPJPE, MPJRE, MPJVE, root position
error and upper/lower-body position error.

Motions are anything with ``trans`` (T, 3) and ``rot`` (T, 24, 6) arrays
(``Pose`` or ``MotionSequence``). Internals are in meters; reported values
are centimeters (degrees for MPJRE).
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .body_model import Pose, forward_kinematics, joint_partition, skin_vertices
from .errors import DegenerateConfiguration, LengthMismatch
from .rotmath import geodesic_angle

CM = 100.0
METRIC_NAMES = ("mpjpe_cm", "pa_mpjpe_cm", "mpjre_deg", "mpjve_cm", "root_pe_cm", "upper_pe_cm", "lower_pe_cm")


def _frames(m):
    trans = np.asarray(m.trans, dtype=np.float64)
    rot = np.asarray(m.rot, dtype=np.float64)
    if trans.ndim == 1:
        trans, rot = trans[None], rot[None]
    return trans, rot


def _pair(pred, gt):
    pt, pr = _frames(pred)
    gt_t, gr = _frames(gt)
    if len(pt) != len(gt_t):
        raise LengthMismatch(f"prediction has {len(pt)} frames, ground truth {len(gt_t)}")
    return (pt, pr), (gt_t, gr)


def _pelvis_aligned_fk(tree, rot):
    return forward_kinematics(tree, Pose(np.zeros(rot.shape[:-2] + (3,)), rot))


def mpjpe(pred, gt, tree):
    """Mean per-joint position error with the pelvis at the origin, in cm."""
    (_, pr), (_, gr) = _pair(pred, gt)
    pp, _ = _pelvis_aligned_fk(tree, pr)
    gp, _ = _pelvis_aligned_fk(tree, gr)
    return float(np.mean(np.linalg.norm(pp - gp, axis=-1)) * CM)


def procrustes_align(P, Q, with_scale=True):
    """Similarity transform (R, t, s) minimizing sum ||s R p_i + t - q_i||^2.

    Closed form from the SVD of the centered cross-covariance, with a
    determinant correction so that R is a proper rotation.
    """
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise DegenerateConfiguration(f"point sets must both be (n, 3); got {P.shape}, {Q.shape}")
    if len(P) < 3:
        raise DegenerateConfiguration("need at least 3 points")
    mu_p, mu_q = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - mu_p, Q - mu_q
    for X in (Pc, Qc):
        sv = np.linalg.svd(X, compute_uv=False)
        if sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
            raise DegenerateConfiguration("point set is collinear or coincident")
    cov = Qc.T @ Pc / len(P)
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_p = np.mean(np.sum(Pc * Pc, axis=1))
        s = float(np.trace(np.diag(D) @ S) / var_p)
    else:
        s = 1.0
    t = mu_q - s * R @ mu_p
    return R, t, s


def pa_mpjpe(pred, gt, tree, with_scale=True):
    """MPJPE after per-frame similarity alignment of predicted to true joints, in cm."""
    (pt, pr), (gt_t, gr) = _pair(pred, gt)
    pp, _ = forward_kinematics(tree, Pose(pt, pr))
    gp, _ = forward_kinematics(tree, Pose(gt_t, gr))
    errs = []
    for a, b in zip(pp, gp):
        R, t, s = procrustes_align(a, b, with_scale)
        errs.append(np.linalg.norm(s * a @ R.T + t - b, axis=-1))
    return float(np.mean(errs) * CM)


def mpjre(pred, gt, tree):
    """Mean geodesic angle between global joint orientations, in degrees.

    The predicted body is first rotated so its root orientation matches the
    ground truth.
    """
    (_, pr), (_, gr) = _pair(pred, gt)
    _, po = _pelvis_aligned_fk(tree, pr)
    _, go = _pelvis_aligned_fk(tree, gr)
    align = go[:, 0] @ np.swapaxes(po[:, 0], -1, -2)
    po = align[:, None] @ po
    return float(np.degrees(np.mean(geodesic_angle(po, go))))


def mpjve(pred, gt, tree, mesh):
    """Mean per-vertex error of the pelvis-aligned skinned surrogate mesh, in cm."""
    (_, pr), (_, gr) = _pair(pred, gt)
    zero = np.zeros((len(pr), 3))
    pv = skin_vertices(tree, Pose(zero, pr), mesh)
    gv = skin_vertices(tree, Pose(zero, gr), mesh)
    return float(np.mean(np.linalg.norm(pv - gv, axis=-1)) * CM)


def root_pe(pred, gt):
    """Mean Euclidean root translation error without alignment, in cm."""
    (pt, _), (gt_t, _) = _pair(pred, gt)
    return float(np.mean(np.linalg.norm(pt - gt_t, axis=-1)) * CM)


def region_pe(pred, gt, tree, partition=None):
    """Pelvis-aligned MPJPE restricted to the upper and lower joint sets, in cm."""
    upper, lower = joint_partition() if partition is None else partition
    (_, pr), (_, gr) = _pair(pred, gt)
    pp, _ = _pelvis_aligned_fk(tree, pr)
    gp, _ = _pelvis_aligned_fk(tree, gr)
    d = np.linalg.norm(pp - gp, axis=-1)
    return float(np.mean(d[:, list(upper)]) * CM), float(np.mean(d[:, list(lower)]) * CM)


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------

@dataclass
class MetricsReport:
    mpjpe_cm: float = 0.0
    pa_mpjpe_cm: float = 0.0
    mpjre_deg: float = 0.0
    mpjve_cm: float = 0.0
    root_pe_cm: float = 0.0
    upper_pe_cm: float = 0.0
    lower_pe_cm: float = 0.0
    windows: list = field(default_factory=list)
    mode: str = "full"

    def summary(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("window",) + METRIC_NAMES)
        for i, row in enumerate(self.windows):
            w.writerow([i] + [repr(row[k]) for k in METRIC_NAMES])
        w.writerow(["mean"] + [repr(getattr(self, k)) for k in METRIC_NAMES])
        return buf.getvalue()


def window_metrics(pred, gt, tree, mesh, with_scale=True):
    upper, lower = region_pe(pred, gt, tree)
    return {
        "mpjpe_cm": mpjpe(pred, gt, tree),
        "pa_mpjpe_cm": pa_mpjpe(pred, gt, tree, with_scale),
        "mpjre_deg": mpjre(pred, gt, tree),
        "mpjve_cm": mpjve(pred, gt, tree, mesh),
        "root_pe_cm": root_pe(pred, gt),
        "upper_pe_cm": upper,
        "lower_pe_cm": lower,
    }


def compute_report(preds, gts, tree, mesh, mode="full", with_scale=True):
    """Average per-window metrics over paired lists of predicted and true motions."""
    if len(preds) != len(gts):
        raise LengthMismatch("prediction and ground-truth window counts differ")
    rows = [window_metrics(p, g, tree, mesh, with_scale) for p, g in zip(preds, gts)]
    means = {k: float(np.mean([r[k] for r in rows])) if rows else 0.0 for k in METRIC_NAMES}
    return MetricsReport(**means, windows=rows, mode=mode)
