"""Per-image capture-noise model and the transforms it induces on primitives.

Three independent mechanisms, each with an exact identity setting:
  * motion: a Gaussian distribution over rigid world transforms. Its mean
    (rotation + translation) doubles as a per-image pose correction; its
    covariances model camera shake during exposure. The closed form pushes a
    primitive's mean/covariance through the first-order transform and rescales
    opacity so total mass is conserved.
  * defocus: a depth-dependent isotropic inflation of the projected 2D
    covariance (circle-of-confusion radius), again mass-conserving.
  * color: an affine map on decoded RGB, exactly absorbable into SH
    coefficients of the linear decoder.

Blur std-devs are stored as log-stds so they stay positive under gradient
steps; -inf encodes an exact zero std (used when a mechanism is disabled or
pinned during test-time adaptation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .math3d import det3_batch, inv3_batch, quat_to_rotation, so3_exp
from .scene import COLOR_OFFSET, SH_C0

# Near-zero blur used when initializing an enabled motion mechanism for
# fitting: effectively sharp, but with a live gradient.
FIT_INIT_LOG_STD = math.log(1e-4)


@dataclass
class MotionBlurParams:
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    log_std_rot: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))
    log_std_trans: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_rotation(self.rotation)

    def rot_cov_diag(self) -> np.ndarray:
        return np.exp(2.0 * self.log_std_rot)

    def trans_cov_diag(self) -> np.ndarray:
        return np.exp(2.0 * self.log_std_trans)

    @classmethod
    def identity(cls) -> "MotionBlurParams":
        return cls()

    @classmethod
    def fit_init(cls) -> "MotionBlurParams":
        return cls(
            log_std_rot=np.full(3, FIT_INIT_LOG_STD),
            log_std_trans=np.full(3, FIT_INIT_LOG_STD),
        )


@dataclass
class DefocusParams:
    # radius = a * (inv_focus_depth - 1/depth); enters squared, so the sign
    # of a is immaterial and it stays unconstrained.
    a: float = 0.0
    inv_focus_depth: float = 0.0

    @classmethod
    def identity(cls) -> "DefocusParams":
        return cls()


@dataclass
class ColorParams:
    gain: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "ColorParams":
        return cls()


@dataclass
class PerImageParams:
    motion: MotionBlurParams = field(default_factory=MotionBlurParams.identity)
    defocus: DefocusParams = field(default_factory=DefocusParams.identity)
    color: ColorParams = field(default_factory=ColorParams.identity)
    enable_motion: bool = True
    enable_defocus: bool = True
    enable_color: bool = True

    @classmethod
    def identity(cls) -> "PerImageParams":
        return cls()

    def copy(self) -> "PerImageParams":
        return PerImageParams(
            motion=MotionBlurParams(
                rotation=self.motion.rotation.copy(),
                translation=self.motion.translation.copy(),
                log_std_rot=self.motion.log_std_rot.copy(),
                log_std_trans=self.motion.log_std_trans.copy(),
            ),
            defocus=DefocusParams(a=self.defocus.a, inv_focus_depth=self.defocus.inv_focus_depth),
            color=ColorParams(gain=self.color.gain.copy(), offset=self.color.offset.copy()),
            enable_motion=self.enable_motion,
            enable_defocus=self.enable_defocus,
            enable_color=self.enable_color,
        )


def motion_blur_transform_batch(
    mu: np.ndarray, sigma: np.ndarray, alpha: np.ndarray, p: MotionBlurParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Transformed (mu, sigma, alpha) for (K,3) / (K,3,3) / (K,) inputs.

    mu' = R mu + t
    sigma' = R (sigma + [mu]x RotCov [mu]x^T + TransCov) R^T
    alpha' = alpha * sqrt(det sigma / det sigma')

    Returns (mu', sigma', alpha', mass_ratio) where mass_ratio is the
    determinant-ratio factor applied to alpha.
    """
    rot = p.rotation_matrix()
    rot_cov = p.rot_cov_diag()
    trans_cov = p.trans_cov_diag()

    kx = np.zeros(mu.shape[:-1] + (3, 3))
    kx[..., 0, 1] = -mu[..., 2]
    kx[..., 0, 2] = mu[..., 1]
    kx[..., 1, 0] = mu[..., 2]
    kx[..., 1, 2] = -mu[..., 0]
    kx[..., 2, 0] = -mu[..., 1]
    kx[..., 2, 1] = mu[..., 0]

    inner = sigma + np.einsum("...ij,j,...lj->...il", kx, rot_cov, kx)
    inner[..., 0, 0] += trans_cov[0]
    inner[..., 1, 1] += trans_cov[1]
    inner[..., 2, 2] += trans_cov[2]
    sigma_z = np.einsum("ij,...jl,ml->...im", rot, inner, rot)
    mu_z = mu @ rot.T + p.translation
    mass_ratio = np.sqrt(det3_batch(sigma) / det3_batch(sigma_z))
    return mu_z, sigma_z, alpha * mass_ratio, mass_ratio


def motion_blur_transform(
    mu: np.ndarray, sigma: np.ndarray, alpha: float, p: MotionBlurParams
) -> tuple[np.ndarray, np.ndarray, float]:
    """Single-primitive closed-form motion-blur update (mu', sigma', alpha')."""
    mu_z, sigma_z, alpha_z, _ = motion_blur_transform_batch(
        np.asarray(mu, dtype=float)[None],
        np.asarray(sigma, dtype=float)[None],
        np.array([alpha], dtype=float),
        p,
    )
    return mu_z[0], sigma_z[0], float(alpha_z[0])


def zeta_exact(x: np.ndarray, eps_rot: np.ndarray, eps_trans: np.ndarray, p: MotionBlurParams) -> np.ndarray:
    """Exact (non-linearized) random rigid transform used by the Monte-Carlo
    oracle: R (exp(RotStd * eps_rot) x + TransStd * eps_trans) + t."""
    rot_std = np.exp(p.log_std_rot)
    trans_std = np.exp(p.log_std_trans)
    q = so3_exp(rot_std * np.asarray(eps_rot, dtype=float))
    inner = q @ np.asarray(x, dtype=float) + trans_std * np.asarray(eps_trans, dtype=float)
    return p.rotation_matrix() @ inner + p.translation


def sample_world_transform(
    p: MotionBlurParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One rigid (rotation, translation) draw of the blur distribution,
    composed with the mean pose correction. Shared across all primitives of a
    sample, matching the physical model of a single perturbed exposure."""
    eps_rot = rng.standard_normal(3)
    eps_trans = rng.standard_normal(3)
    rot = p.rotation_matrix()
    q = so3_exp(np.exp(p.log_std_rot) * eps_rot)
    delta = np.exp(p.log_std_trans) * eps_trans
    return rot @ q, rot @ delta + p.translation


def defocus_radius(depth: float, p: DefocusParams) -> float:
    """Circle-of-confusion radius in pixels; vanishes on the focus plane."""
    return p.a * (p.inv_focus_depth - 1.0 / depth)


def det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def apply_defocus(cov2d: np.ndarray, alpha, radius) -> tuple[np.ndarray, np.ndarray]:
    """Inflate a 2D covariance by radius^2 * I and rescale opacity to keep the
    total 2D mass alpha * sqrt(det cov) unchanged."""
    cov2d = np.asarray(cov2d, dtype=float)
    r2 = np.asarray(radius, dtype=float) ** 2
    out = cov2d.copy()
    out[..., 0, 0] += r2
    out[..., 1, 1] += r2
    scale = np.sqrt(det2(cov2d) / det2(out))
    return out, alpha * scale


def apply_color_affine(rgb: np.ndarray, p: ColorParams) -> np.ndarray:
    """gain @ rgb + offset, unclamped (the final clamp happens at image
    write)."""
    return np.asarray(rgb, dtype=float) @ p.gain.T + p.offset


def absorb_color_into_sh(features: np.ndarray, p: ColorParams) -> np.ndarray:
    """Fold the affine color map into SH coefficients of the linear decoder.

    features has shape (basis, 3). Works exactly wherever the decode clamp is
    inactive: decode(out, dir) == gain @ decode(features, dir) + offset.
    """
    out = features @ p.gain.T
    dc_shift = p.offset + (p.gain - np.eye(3)) @ np.full(3, COLOR_OFFSET)
    out[0] += dc_shift / SH_C0
    return out


# ---------------------------------------------------------------------------
# JSON sidecar (keyed by image id). Log-stds serialize as numbers with null
# standing in for -inf (exact zero std), so identity params round-trip exactly.


def _log_std_to_json(v: np.ndarray) -> list:
    return [None if x == -np.inf else float(x) for x in v]


def _log_std_from_json(v) -> np.ndarray:
    return np.array([-np.inf if x is None else float(x) for x in v])


def params_to_dict(p: PerImageParams) -> dict:
    return {
        "motion": {
            "enabled": p.enable_motion,
            "rotation": [float(x) for x in p.motion.rotation],
            "translation": [float(x) for x in p.motion.translation],
            "rot_log_std": _log_std_to_json(p.motion.log_std_rot),
            "trans_log_std": _log_std_to_json(p.motion.log_std_trans),
        },
        "defocus": {
            "enabled": p.enable_defocus,
            "a": float(p.defocus.a),
            "inv_focus_depth": float(p.defocus.inv_focus_depth),
        },
        "color": {
            "enabled": p.enable_color,
            "gain": [[float(x) for x in row] for row in p.color.gain],
            "offset": [float(x) for x in p.color.offset],
        },
    }


def params_from_dict(d: dict) -> PerImageParams:
    m = d["motion"]
    df = d["defocus"]
    c = d["color"]
    return PerImageParams(
        motion=MotionBlurParams(
            rotation=np.array(m["rotation"], dtype=float),
            translation=np.array(m["translation"], dtype=float),
            log_std_rot=_log_std_from_json(m["rot_log_std"]),
            log_std_trans=_log_std_from_json(m["trans_log_std"]),
        ),
        defocus=DefocusParams(a=float(df["a"]), inv_focus_depth=float(df["inv_focus_depth"])),
        color=ColorParams(
            gain=np.array(c["gain"], dtype=float), offset=np.array(c["offset"], dtype=float)
        ),
        enable_motion=bool(m["enabled"]),
        enable_defocus=bool(df["enabled"]),
        enable_color=bool(c["enabled"]),
    )


def save_params(params_by_id: dict[str, PerImageParams], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    doc = {image_id: params_to_dict(p) for image_id, p in params_by_id.items()}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_params(path) -> dict[str, PerImageParams]:
    with open(path) as f:
        doc = json.load(f)
    return {image_id: params_from_dict(d) for image_id, d in doc.items()}


def mean_color_params(params_by_id: dict[str, PerImageParams]) -> ColorParams:
    """Average color transform over images (used when baking into SH)."""
    if not params_by_id:
        return ColorParams.identity()
    gains = np.stack([p.color.gain for p in params_by_id.values()])
    offsets = np.stack([p.color.offset for p in params_by_id.values()])
    return ColorParams(gain=gains.mean(axis=0), offset=offsets.mean(axis=0))


__all__ = [
    "MotionBlurParams",
    "DefocusParams",
    "ColorParams",
    "PerImageParams",
    "motion_blur_transform",
    "motion_blur_transform_batch",
    "zeta_exact",
    "sample_world_transform",
    "defocus_radius",
    "apply_defocus",
    "apply_color_affine",
    "absorb_color_into_sh",
    "save_params",
    "load_params",
    "mean_color_params",
    "det2",
    "inv3_batch",
]
