"""Gaussian-primitive scene model: covariances, spherical harmonics, colors.

A scene is stored struct-of-arrays for vectorized rendering; GaussianPrimitive
is the single-element view used by tests and by code that builds scenes one
primitive at a time. Covariances are parametrized as rotation x log-scales so
they stay SPD under unconstrained gradient steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .math3d import quat_to_rotation, quat_to_rotation_batch

# Real spherical-harmonics constants, bands 0..3, in the ordering used by the
# common splatting viewers (band 1 evaluates to (-y, z, -x) * C1).
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

COLOR_OFFSET = 0.5  # added to the SH dot product before the decode clamp


def sh_basis_size(degree: int) -> int:
    return (degree + 1) ** 2


def sh_eval_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """SH basis values for unit direction(s); shape (..., (degree+1)**2).

    Directions must be unit-norm within 1e-6 (callers normalize; this guards
    against silently wrong radiance from unnormalized vectors).
    """
    if degree not in (0, 1, 2, 3):
        raise ValueError(f"unsupported SH degree {degree}")
    dirs = np.asarray(dirs, dtype=float)
    norms = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("sh_eval_basis requires unit directions")
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    out = np.empty(dirs.shape[:-1] + (sh_basis_size(degree),))
    out[..., 0] = SH_C0
    if degree >= 1:
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = SH_C2[0] * x * y
        out[..., 5] = SH_C2[1] * y * z
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * x * z
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * x * y * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_gradient(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d(basis)/d(dir) for unit direction(s); shape (..., basis, 3).

    The derivative is of the polynomial basis w.r.t. the direction components;
    chaining through a normalization is the caller's job.
    """
    dirs = np.asarray(dirs, dtype=float)
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    zero = np.zeros_like(x)
    g = np.zeros(dirs.shape[:-1] + (sh_basis_size(degree), 3))
    if degree >= 1:
        g[..., 1, 1] = -SH_C1
        g[..., 2, 2] = SH_C1
        g[..., 3, 0] = -SH_C1
    if degree >= 2:
        g[..., 4, 0] = SH_C2[0] * y
        g[..., 4, 1] = SH_C2[0] * x
        g[..., 5, 1] = SH_C2[1] * z
        g[..., 5, 2] = SH_C2[1] * y
        g[..., 6, 0] = SH_C2[2] * (-2.0 * x)
        g[..., 6, 1] = SH_C2[2] * (-2.0 * y)
        g[..., 6, 2] = SH_C2[2] * (4.0 * z)
        g[..., 7, 0] = SH_C2[3] * z
        g[..., 7, 2] = SH_C2[3] * x
        g[..., 8, 0] = SH_C2[4] * (2.0 * x)
        g[..., 8, 1] = SH_C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[..., 9, 0] = SH_C3[0] * 6.0 * x * y
        g[..., 9, 1] = SH_C3[0] * (3.0 * xx - 3.0 * yy)
        g[..., 9, 2] = zero
        g[..., 10, 0] = SH_C3[1] * y * z
        g[..., 10, 1] = SH_C3[1] * x * z
        g[..., 10, 2] = SH_C3[1] * x * y
        g[..., 11, 0] = SH_C3[2] * (-2.0 * x * y)
        g[..., 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[..., 11, 2] = SH_C3[2] * (8.0 * y * z)
        g[..., 12, 0] = SH_C3[3] * (-6.0 * x * z)
        g[..., 12, 1] = SH_C3[3] * (-6.0 * y * z)
        g[..., 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[..., 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[..., 13, 1] = SH_C3[4] * (-2.0 * x * y)
        g[..., 13, 2] = SH_C3[4] * (8.0 * x * z)
        g[..., 14, 0] = SH_C3[5] * (2.0 * x * z)
        g[..., 14, 1] = SH_C3[5] * (-2.0 * y * z)
        g[..., 14, 2] = SH_C3[5] * (xx - yy)
        g[..., 15, 0] = SH_C3[6] * (3.0 * xx - 3.0 * yy)
        g[..., 15, 1] = SH_C3[6] * (-6.0 * x * y)
        g[..., 15, 2] = zero
    return g


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))  # never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class GaussianPrimitive:
    """One anisotropic 3D Gaussian with opacity and per-channel SH features.

    sh has shape (basis, 3): row 0 is the view-independent (DC) coefficient,
    later rows the higher bands; columns are RGB channels.
    """

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray  # quaternion (w, x, y, z), normalized lazily
    opacity_logit: float
    sh: np.ndarray

    @property
    def alpha(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[0]))) - 1


def covariance_of(p: GaussianPrimitive) -> np.ndarray:
    """Sigma = R diag(exp(2 log_scale)) R^T; SPD by construction."""
    rot = quat_to_rotation(p.rotation)
    var = np.exp(2.0 * np.asarray(p.log_scale, dtype=float))
    return (rot * var) @ rot.T


def decode_color_raw(p: GaussianPrimitive, direction: np.ndarray) -> np.ndarray:
    """Pre-clamp color: 0.5 + sum_l basis_l(dir) * sh_l, per channel."""
    basis = sh_eval_basis(direction, p.sh_degree)
    return COLOR_OFFSET + basis @ p.sh


def decode_color(p: GaussianPrimitive, direction: np.ndarray) -> np.ndarray:
    """View-dependent RGB; clamped below at 0, unclamped above (image write
    applies the final [0, 1] clamp)."""
    return np.maximum(decode_color_raw(p, direction), 0.0)


@dataclass
class Scene:
    """Ordered collection of Gaussian primitives, stored struct-of-arrays.

    positions (K,3), log_scales (K,3), rotations (K,4) wxyz, opacity_logits
    (K,), sh (K, basis, 3). All primitives share sh_degree.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = field(default=3)

    def __post_init__(self):
        k = self.positions.shape[0]
        basis = sh_basis_size(self.sh_degree)
        assert self.log_scales.shape == (k, 3)
        assert self.rotations.shape == (k, 4)
        assert self.opacity_logits.shape == (k,)
        assert self.sh.shape == (k, basis, 3), (self.sh.shape, (k, basis, 3))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def alphas(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i].copy(),
            log_scale=self.log_scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            sh=self.sh[i].copy(),
        )

    def primitives(self) -> list[GaussianPrimitive]:
        return [self.primitive(i) for i in range(len(self))]

    @classmethod
    def from_primitives(cls, prims: list[GaussianPrimitive]) -> "Scene":
        if not prims:
            raise ValueError("scene needs at least one primitive")
        degree = prims[0].sh_degree
        if any(p.sh_degree != degree for p in prims):
            raise ValueError("all primitives must share one SH degree")
        return cls(
            positions=np.stack([np.asarray(p.position, dtype=float) for p in prims]),
            log_scales=np.stack([np.asarray(p.log_scale, dtype=float) for p in prims]),
            rotations=np.stack([np.asarray(p.rotation, dtype=float) for p in prims]),
            opacity_logits=np.array([p.opacity_logit for p in prims], dtype=float),
            sh=np.stack([np.asarray(p.sh, dtype=float) for p in prims]),
            sh_degree=degree,
        )

    def copy(self) -> "Scene":
        return Scene(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            sh=self.sh.copy(),
            sh_degree=self.sh_degree,
        )

    def covariances(self) -> np.ndarray:
        """(K, 3, 3) batch of R diag(exp(2 ls)) R^T."""
        rot = quat_to_rotation_batch(self.rotations)
        var = np.exp(2.0 * self.log_scales)
        return np.einsum("kij,kj,klj->kil", rot, var, rot)

    def select(self, keep: np.ndarray) -> "Scene":
        """Sub-scene of the primitives where keep is True (pruning)."""
        return Scene(
            positions=self.positions[keep].copy(),
            log_scales=self.log_scales[keep].copy(),
            rotations=self.rotations[keep].copy(),
            opacity_logits=self.opacity_logits[keep].copy(),
            sh=self.sh[keep].copy(),
            sh_degree=self.sh_degree,
        )


def normalized_rotations(scene: Scene) -> np.ndarray:
    """(K, 4) unit quaternions (rotations are stored unnormalized)."""
    return scene.rotations / np.linalg.norm(scene.rotations, axis=1, keepdims=True)
