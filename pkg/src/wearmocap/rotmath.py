"""
Rotation representations and conversions.

All functions are batch-vectorized: leading dimensions are batch dimensions.

- Quaternions: (*, 4), scalar-first (w, x, y, z), unit norm
- Rotation matrices: (*, 3, 3)
- 6D rotations: (*, 6), the first two matrix columns concatenated
  (c1x, c1y, c1z, c2x, c2y, c2z)
- Rotation vectors (axis * angle): (*, 3)

Everything is float64.
"""

import numpy as np

from .errors import DegenerateInput

# Minimum angle between the two 6D columns before the map is declared degenerate.
_MIN_COLUMN_ANGLE = 1e-7


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


# ----------------------------------------------------------------------------
# 6D <-> matrix
# ----------------------------------------------------------------------------

def rot6d_to_matrix(r):
    """Gram-Schmidt map from 6D vectors (*, 6) to rotation matrices (*, 3, 3).

    Column 1 is the normalized first 3-vector, column 2 is the second 3-vector
    orthogonalized against column 1 and normalized, column 3 is their cross
    product.

    Raises
    ------
    DegenerateInput
        If either 3-vector is zero or the two are parallel.
    """
    r = _as_f64(r)
    if r.shape[-1] != 6:
        raise DegenerateInput(f"expected trailing dimension 6, got shape {r.shape}")
    a = r[..., 0:3]
    b = r[..., 3:6]
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(~np.isfinite(r)):
        raise DegenerateInput("non-finite 6D rotation")
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInput("zero column in 6D rotation")
    sin_ab = np.linalg.norm(np.cross(a, b), axis=-1) / (na * nb)
    if np.any(sin_ab <= np.sin(_MIN_COLUMN_ANGLE)):
        raise DegenerateInput("parallel columns in 6D rotation")
    c1 = a / na[..., None]
    b_orth = b - np.sum(c1 * b, axis=-1, keepdims=True) * c1
    c2 = b_orth / np.linalg.norm(b_orth, axis=-1, keepdims=True)
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def matrix_to_rot6d(m):
    """Drop the third column: (*, 3, 3) -> (*, 6)."""
    m = _as_f64(m)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def normalize_rot6d(r):
    """Project raw 6D vectors onto their Gram-Schmidt normal form."""
    return matrix_to_rot6d(rot6d_to_matrix(r))


# ----------------------------------------------------------------------------
# Angles
# ----------------------------------------------------------------------------

def geodesic_angle(a, b):
    """Angle in radians of the relative rotation a^T b, in [0, pi].

    The cosine term is clamped to [-1, 1]; the angle itself is taken with
    atan2 of (sin, cos) so that nearly identical rotations give ~1e-16
    rather than the ~1e-8 floor of acos.
    """
    a = _as_f64(a)
    b = _as_f64(b)
    rel = np.swapaxes(a, -1, -2) @ b
    cos = np.clip((np.trace(rel, axis1=-2, axis2=-1) - 1.0) * 0.5, -1.0, 1.0)
    vee = np.stack(
        [
            rel[..., 2, 1] - rel[..., 1, 2],
            rel[..., 0, 2] - rel[..., 2, 0],
            rel[..., 1, 0] - rel[..., 0, 1],
        ],
        axis=-1,
    )
    sin = 0.5 * np.linalg.norm(vee, axis=-1)
    return np.arctan2(sin, cos)


# ----------------------------------------------------------------------------
# Quaternions
# ----------------------------------------------------------------------------

def quat_normalize(q):
    q = _as_f64(q)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise DegenerateInput("zero quaternion")
    return q / n


def quat_compose(a, b):
    """Hamilton product a * b (apply b first, then a), renormalized."""
    a = _as_f64(a)
    b = _as_f64(b)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return quat_normalize(out)


def quat_inverse(q):
    q = quat_normalize(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_angle(q):
    """Rotation angle in [0, pi] of a unit quaternion (half-angle formula)."""
    q = quat_normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def quat_to_matrix(q):
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m):
    """Shepperd's method; returns the representative with w >= 0."""
    m = _as_f64(m)
    batch = m.shape[:-2]
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    tr = np.trace(flat, axis1=-2, axis2=-1)
    diag = np.stack([flat[:, 0, 0], flat[:, 1, 1], flat[:, 2, 2]], axis=-1)
    choice = np.argmax(np.concatenate([tr[:, None], diag], axis=-1), axis=-1)
    for i, R in enumerate(flat):
        c = choice[i]
        if c == 0:
            s = 2.0 * np.sqrt(1.0 + tr[i])
            q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        elif c == 1:
            s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
            q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        elif c == 2:
            s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
            q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
            q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        out[i] = q
    out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    out[out[:, 0] < 0] *= -1.0
    return out.reshape(batch + (4,))


# ----------------------------------------------------------------------------
# Rotation vectors and elementary rotations
# ----------------------------------------------------------------------------

def rotvec_to_matrix(v):
    """Rodrigues formula, (*, 3) -> (*, 3, 3)."""
    v = _as_f64(v)
    theta = np.linalg.norm(v, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    k = v / safe[..., None]
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -k[..., 2]
    K[..., 0, 2] = k[..., 1]
    K[..., 1, 0] = k[..., 2]
    K[..., 1, 2] = -k[..., 0]
    K[..., 2, 0] = -k[..., 1]
    K[..., 2, 1] = k[..., 0]
    s = np.sin(theta)[..., None, None]
    c = (1.0 - np.cos(theta))[..., None, None]
    R = np.eye(3) + s * K + c * (K @ K)
    if np.any(small):
        R[small] = np.eye(3)
    return R


def axis_rotation(axis, angle):
    """Rotation about a principal axis ('x', 'y' or 'z') by angle (radians, any shape)."""
    angle = _as_f64(angle)
    c, s = np.cos(angle), np.sin(angle)
    one, zero = np.ones_like(angle), np.zeros_like(angle)
    if axis == "x":
        rows = [one, zero, zero, zero, c, -s, zero, s, c]
    elif axis == "y":
        rows = [c, zero, s, zero, one, zero, -s, zero, c]
    elif axis == "z":
        rows = [c, -s, zero, s, c, zero, zero, zero, one]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return np.stack(rows, axis=-1).reshape(angle.shape + (3, 3))


def euler_to_matrix(angles):
    """Intrinsic z-y-x rotation R = Rz(a0) @ Ry(a1) @ Rx(a2) for (*, 3) angles."""
    angles = _as_f64(angles)
    return (
        axis_rotation("z", angles[..., 0])
        @ axis_rotation("y", angles[..., 1])
        @ axis_rotation("x", angles[..., 2])
    )


def yaw_of(m):
    """Heading angle of the rotated x-axis projected onto the world xy-plane."""
    m = _as_f64(m)
    return np.arctan2(m[..., 1, 0], m[..., 0, 0])


def random_rotation(seed, n=None):
    """Uniformly distributed rotation matrix (or (n, 3, 3) batch) from a seed."""
    rng = np.random.default_rng(seed)
    shape = (4,) if n is None else (n, 4)
    q = rng.standard_normal(shape)
    return quat_to_matrix(q)
