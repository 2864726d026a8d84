"""3D rotation, covariance-factor and sampling primitives.

All functions take and return plain float64 numpy arrays: vectors are shape
(3,), matrices (3, 3), quaternions (4,) in (w, x, y, z) order. Everything is
pure and allocation-per-call; no global state.
"""

from __future__ import annotations

import numpy as np

# Below this angle Rodrigues cancels catastrophically; use the 2nd-order Taylor
# expansion instead.
SMALL_ANGLE = 1e-8


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_adjoint(d_skew: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. skew(v) back to a gradient w.r.t. v."""
    return np.array(
        [
            d_skew[2, 1] - d_skew[1, 2],
            d_skew[0, 2] - d_skew[2, 0],
            d_skew[1, 0] - d_skew[0, 1],
        ]
    )


def so3_exp(v: np.ndarray) -> np.ndarray:
    """Exponential map from axis-angle to rotation matrix (Rodrigues)."""
    angle = float(np.linalg.norm(v))
    k = skew(v)
    if angle < SMALL_ANGLE:
        # I + K + K^2/2, exact to O(angle^3)
        return np.eye(3) + k + 0.5 * (k @ k)
    s = np.sin(angle) / angle
    c = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + s * k + c * (k @ k)


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(q))
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion; normalizes internally."""
    w, x, y, z = quat_normalize(np.asarray(q, dtype=float))
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_to_rotation_backward(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Gradient of quat_to_rotation w.r.t. the *unnormalized* quaternion.

    Chains through the internal normalization, so the returned gradient is
    tangent to the unit sphere scaled by 1/|q|.
    """
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    w, x, y, z = q / n
    # dR/d(unit quaternion component), rows follow quat_to_rotation entries
    d_w = np.array([[0, -2 * z, 2 * y], [2 * z, 0, -2 * x], [-2 * y, 2 * x, 0]])
    d_x = np.array([[0, 2 * y, 2 * z], [2 * y, -4 * x, -2 * w], [2 * z, 2 * w, -4 * x]])
    d_y = np.array([[-4 * y, 2 * x, 2 * w], [2 * x, 0, 2 * z], [-2 * w, 2 * z, -4 * y]])
    d_z = np.array([[-4 * z, -2 * w, 2 * x], [2 * w, -4 * z, 2 * y], [2 * x, 2 * y, 0]])
    g_unit = np.array(
        [
            np.sum(d_rot * d_w),
            np.sum(d_rot * d_x),
            np.sum(d_rot * d_y),
            np.sum(d_rot * d_z),
        ]
    )
    u = np.array([w, x, y, z])
    return (g_unit - u * float(g_unit @ u)) / n


def random_unit_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation as a unit quaternion."""
    q = rng.standard_normal(4)
    return quat_normalize(q)


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix (Shepperd's method)."""
    r = np.asarray(r, dtype=float)
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    else:
        i = int(np.argmax([r[0, 0], r[1, 1], r[2, 2]]))
        if i == 0:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = np.array(
                [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
            )
        elif i == 1:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = np.array(
                [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
            )
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = np.array(
                [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
            )
    return quat_normalize(q)


def is_symmetric(m: np.ndarray, tol: float = 1e-6) -> bool:
    return bool(np.max(np.abs(m - m.T)) <= tol)


def spd_factor(s: np.ndarray, *, asym_tol: float = 1e-6, eig_floor: float = -1e-9) -> np.ndarray:
    """Lower-triangular-ish factor L with L @ L.T == s for SPD s.

    Uses Cholesky; if s is only semi-definite (eigenvalues in [eig_floor, 0]
    clamped to zero), falls back to an eigenvalue square root. Raises
    ValueError for asymmetric input or eigenvalues below eig_floor.
    """
    s = np.asarray(s, dtype=float)
    if not is_symmetric(s, asym_tol):
        raise ValueError(f"matrix is asymmetric beyond {asym_tol:g}")
    sym = 0.5 * (s + s.T)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    eigval, eigvec = np.linalg.eigh(sym)
    if np.min(eigval) < eig_floor:
        raise ValueError(f"matrix has eigenvalue {np.min(eigval):g} below {eig_floor:g}")
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def sample_mvn(mean: np.ndarray, factor: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw of mean + factor @ z with z ~ N(0, I_3)."""
    z = rng.standard_normal(3)
    return np.asarray(mean, dtype=float) + np.asarray(factor, dtype=float) @ z


def det3(m: np.ndarray) -> float:
    """Closed-form 3x3 determinant (cheaper and branch-free vs LAPACK)."""
    return float(
        m[0, 0] * (m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
        - m[0, 1] * (m[1, 0] * m[2, 2] - m[1, 2] * m[2, 0])
        + m[0, 2] * (m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0])
    )


def det3_batch(m: np.ndarray) -> np.ndarray:
    """Vectorized 3x3 determinants for an (..., 3, 3) array."""
    return (
        m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
        - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
        + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0])
    )


def inv3_batch(m: np.ndarray) -> np.ndarray:
    """Vectorized 3x3 inverse via the adjugate; caller guarantees det != 0."""
    det = det3_batch(m)
    adj = np.empty_like(m)
    adj[..., 0, 0] = m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1]
    adj[..., 0, 1] = m[..., 0, 2] * m[..., 2, 1] - m[..., 0, 1] * m[..., 2, 2]
    adj[..., 0, 2] = m[..., 0, 1] * m[..., 1, 2] - m[..., 0, 2] * m[..., 1, 1]
    adj[..., 1, 0] = m[..., 1, 2] * m[..., 2, 0] - m[..., 1, 0] * m[..., 2, 2]
    adj[..., 1, 1] = m[..., 0, 0] * m[..., 2, 2] - m[..., 0, 2] * m[..., 2, 0]
    adj[..., 1, 2] = m[..., 0, 2] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 2]
    adj[..., 2, 0] = m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]
    adj[..., 2, 1] = m[..., 0, 1] * m[..., 2, 0] - m[..., 0, 0] * m[..., 2, 1]
    adj[..., 2, 2] = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    return adj / det[..., None, None]


def quat_to_rotation_batch(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N, 4) array of (w, x, y, z) quaternions."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = (q / n).T
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r
