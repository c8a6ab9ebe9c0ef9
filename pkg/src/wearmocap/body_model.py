"""24-joint SMPL-lite body: kinematic tree, forward kinematics, linear blend
skinning over a small surrogate mesh, and the upper/lower joint partition."""

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .rotmath import rot6d_to_matrix

NUM_JOINTS = 24
ROOT_PARENT = -1

JOINT_NAMES = (
    "Pelvis", "Left Hip", "Right Hip", "Spine1", "Left Knee", "Right Knee",
    "Spine2", "Left Ankle", "Right Ankle", "Spine3", "Left Foot", "Right Foot",
    "Neck", "Left Collar", "Right Collar", "Head", "Left Shoulder",
    "Right Shoulder", "Left Elbow", "Right Elbow", "Left Wrist", "Right Wrist",
    "Left Hand", "Right Hand",
)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

LOWER_BODY = ("Left Hip", "Right Hip", "Left Knee", "Right Knee",
              "Left Ankle", "Right Ankle", "Left Foot", "Right Foot")

DATA_VERSION = 1


@dataclass(frozen=True)
class KinematicTree:
    parent: tuple
    rest_offset: np.ndarray  # (24, 3) meters, offset from parent in rest pose
    joint_names: tuple = JOINT_NAMES

    def __post_init__(self):
        if len(self.parent) != NUM_JOINTS or len(self.joint_names) != NUM_JOINTS:
            raise ValueError("kinematic tree must have exactly 24 joints")
        if self.parent[0] != ROOT_PARENT:
            raise ValueError("joint 0 must be the root")
        for j in range(1, NUM_JOINTS):
            if not 0 <= self.parent[j] < j:
                raise ValueError(f"joint {j} has parent {self.parent[j]}; tree must be topologically sorted")
        offsets = np.asarray(self.rest_offset, dtype=np.float64)
        if offsets.shape != (NUM_JOINTS, 3):
            raise ValueError(f"rest_offset must be (24, 3), got {offsets.shape}")
        if np.any(offsets[0] != 0.0):
            raise ValueError("root rest offset must be zero")
        object.__setattr__(self, "rest_offset", offsets)

    def depth(self, j):
        d = 0
        while self.parent[j] != ROOT_PARENT:
            j = self.parent[j]
            d += 1
        return d

    def descendants(self, j):
        out = []
        for k in range(j + 1, NUM_JOINTS):
            p = self.parent[k]
            if p == j or p in out:
                out.append(k)
        return out


@dataclass
class Pose:
    """Root translation (*, 3) in meters and 24 local joint rotations (*, 24, 6).

    The root rotation is global; all others are relative to the parent joint.
    Leading dimensions, when present, index frames.
    """
    trans: np.ndarray
    rot: np.ndarray

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.rot = np.asarray(self.rot, dtype=np.float64)
        if self.trans.shape[-1] != 3 or self.rot.shape[-2:] != (NUM_JOINTS, 6):
            raise ValueError(f"bad pose shapes {self.trans.shape}, {self.rot.shape}")

    @classmethod
    def identity(cls, trans=(0.0, 0.0, 0.0)):
        rot = np.tile(np.array([1.0, 0, 0, 0, 1.0, 0]), (NUM_JOINTS, 1))
        return cls(np.asarray(trans, dtype=np.float64), rot)


@dataclass(frozen=True)
class SkinnedMesh:
    vertices: np.ndarray  # (V, 3) rest positions
    weights: np.ndarray  # (V, 24)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or w.shape != (v.shape[0], NUM_JOINTS):
            raise ValueError("mesh arrays have inconsistent shapes")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("skinning weights must be non-negative and sum to 1")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "weights", w)


# ----------------------------------------------------------------------------
# Default skeleton and mesh
# ----------------------------------------------------------------------------

# z-up, x-forward, y-left; roughly a 1.7 m adult in T-pose.
_DEFAULT_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
_DEFAULT_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.0, 0.09, -0.09), (0.0, -0.09, -0.09), (0.0, 0.0, 0.11),
    (0.0, 0.01, -0.38), (0.0, -0.01, -0.38), (0.0, 0.0, 0.13),
    (0.0, 0.0, -0.40), (0.0, 0.0, -0.40), (0.0, 0.0, 0.05),
    (0.12, 0.0, -0.05), (0.12, 0.0, -0.05), (0.0, 0.0, 0.22),
    (0.0, 0.07, 0.12), (0.0, -0.07, 0.12), (0.02, 0.0, 0.09),
    (0.0, 0.11, 0.02), (0.0, -0.11, 0.02), (0.0, 0.26, 0.0),
    (0.0, -0.26, 0.0), (0.0, 0.25, 0.0), (0.0, -0.25, 0.0),
    (0.0, 0.08, 0.0), (0.0, -0.08, 0.0),
)


def build_surrogate_mesh(tree, n_vertices=120, seed=0):
    """Place vertices along bones and weight each to its two nearest joints.

    Weights are inverse-distance over the two nearest rest joint positions.
    """
    rng = np.random.default_rng(seed)
    rest = rest_joint_positions(tree)
    bones = [(tree.parent[j], j) for j in range(1, NUM_JOINTS)]
    verts = []
    i = 0
    while len(verts) < n_vertices:
        p, c = bones[i % len(bones)]
        frac = ((i // len(bones)) + 0.5) / (n_vertices // len(bones) + 1)
        base = rest[p] + frac * (rest[c] - rest[p])
        verts.append(base + rng.normal(scale=0.03, size=3))
        i += 1
    verts = np.array(verts)
    d = np.linalg.norm(verts[:, None, :] - rest[None, :, :], axis=-1)
    weights = np.zeros((n_vertices, NUM_JOINTS))
    for v in range(n_vertices):
        near = np.argsort(d[v], kind="stable")[:2]
        inv = 1.0 / np.maximum(d[v, near], 1e-6)
        weights[v, near] = inv / inv.sum()
    # renormalize exactly so rows sum to 1 within rounding
    weights /= weights.sum(axis=1, keepdims=True)
    return SkinnedMesh(verts, weights)


def default_body_data():
    tree = KinematicTree(_DEFAULT_PARENTS, np.array(_DEFAULT_OFFSETS), JOINT_NAMES)
    mesh = build_surrogate_mesh(tree)
    return {
        "version": DATA_VERSION,
        "parent": list(tree.parent),
        "rest_offset": tree.rest_offset.tolist(),
        "joint_names": list(tree.joint_names),
        "vertices": mesh.vertices.tolist(),
        "weights": mesh.weights.tolist(),
    }


def body_from_dict(data):
    tree = KinematicTree(tuple(data["parent"]), np.array(data["rest_offset"]), tuple(data["joint_names"]))
    mesh = SkinnedMesh(np.array(data["vertices"]), np.array(data["weights"]))
    return tree, mesh


def load_body(path=None):
    """Load (tree, mesh) from a JSON body file; the shipped file by default."""
    if path is None:
        return _load_shipped()
    with open(path) as f:
        return body_from_dict(json.load(f))


@lru_cache(maxsize=1)
def _load_shipped():
    text = resources.files("wearmocap.data").joinpath("body_v1.json").read_text()
    return body_from_dict(json.loads(text))


def default_tree():
    return load_body()[0]


def default_mesh():
    return load_body()[1]


# ----------------------------------------------------------------------------
# Kinematics
# ----------------------------------------------------------------------------

def forward_kinematics(tree, pose):
    """Global joint positions (*, 24, 3) and orientations (*, 24, 3, 3).

    position[root] = trans, orientation[root] = R(rot[root]);
    position[j] = position[parent] + orientation[parent] @ rest_offset[j];
    orientation[j] = orientation[parent] @ R(rot[j]).
    """
    local = rot6d_to_matrix(pose.rot)
    trans = pose.trans
    batch = local.shape[:-3]
    pos = np.empty(batch + (NUM_JOINTS, 3))
    ori = np.empty(batch + (NUM_JOINTS, 3, 3))
    pos[..., 0, :] = trans
    ori[..., 0, :, :] = local[..., 0, :, :]
    for j in range(1, NUM_JOINTS):
        p = tree.parent[j]
        pos[..., j, :] = pos[..., p, :] + ori[..., p, :, :] @ tree.rest_offset[j]
        ori[..., j, :, :] = ori[..., p, :, :] @ local[..., j, :, :]
    return pos, ori


def rest_joint_positions(tree):
    pos = np.zeros((NUM_JOINTS, 3))
    for j in range(1, NUM_JOINTS):
        pos[j] = pos[tree.parent[j]] + tree.rest_offset[j]
    return pos


def skin_vertices(tree, pose, mesh, fk=None):
    """Linear blend skinning of the mesh rest vertices, (*, V, 3).

    Each joint maps a rest point x to ori_j @ (x - rest_j) + pos_j; vertices
    blend these images with their skinning weights. A precomputed FK result
    may be passed as ``fk`` to avoid recomputation.
    """
    pos, ori = forward_kinematics(tree, pose) if fk is None else fk
    rest = rest_joint_positions(tree)
    local = mesh.vertices[None, :, :] - rest[:, None, :]  # (24, V, 3)
    # images[..., j, v, :] = ori_j @ local[j, v] + pos_j
    images = np.einsum("...jab,jvb->...jva", ori, local) + pos[..., :, None, :]
    return np.einsum("vj,...jva->...va", mesh.weights, images)


def joint_partition():
    """(upper, lower) joint index tuples covering the 23 non-pelvis joints."""
    lower = tuple(sorted(JOINT_INDEX[n] for n in LOWER_BODY))
    upper = tuple(j for j in range(1, NUM_JOINTS) if j not in lower)
    return upper, lower
