"""Forward renderer: splatting, per-image capture transforms, compositing.

The per-primitive pipeline (vectorized over the scene) follows the train-time
sequence: motion-blur mean/covariance update, projection to a 2D Gaussian,
defocus inflation, combined mass-conserving opacity scaling, view-dependent
color decode plus affine color correction. Compositing then walks the splats
in a global front-to-back depth order; per-pixel arithmetic is elementwise,
so splitting the image into row bands cannot change any result bit.

render_mc_oracle is the physical reference for motion blur: it averages full
renders over rigid world transforms sampled from the exact (non-linearized)
blur distribution, and is intentionally independent of the closed-form path.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .camera import PinholeCamera, Z_NEAR
from .math3d import quat_to_rotation_batch, rotation_to_quat
from .perimage import (
    MotionBlurParams,
    PerImageParams,
    det2,
    motion_blur_transform_batch,
    sample_world_transform,
)
from .scene import Scene, sh_eval_basis, sigmoid

# 2D dilation floor in px^2, applied before defocus so the zero-radius case
# stays an exact identity. Mirrors the usual splatting anti-aliasing epsilon.
BLUR_FLOOR_PX2 = 0.3

DEGENERATE_DET = 1e-12


@dataclass
class RenderOptions:
    sigma_cutoff: float = 3.0
    min_alpha: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    alpha_clamp_max: float = 0.999
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=float)
        if min(self.sigma_cutoff, self.min_alpha, self.transmittance_floor, self.alpha_clamp_max) <= 0:
            raise ValueError("render options must be positive")
        if self.alpha_clamp_max >= 1.0:
            raise ValueError("alpha_clamp_max must stay below 1")


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    alpha_eff: float
    color: np.ndarray


@dataclass
class SplatFrame:
    """Per-primitive arrays after the full transform pipeline, plus the
    intermediates the backward pass needs."""

    # primitive parametrization
    rot_prim: np.ndarray  # (K,3,3)
    var_prim: np.ndarray  # (K,3) exp(2 log_scale)
    sigma: np.ndarray  # (K,3,3)
    alpha: np.ndarray  # (K,)
    # motion stage
    mu_z: np.ndarray  # (K,3)
    sigma_z: np.ndarray  # (K,3,3)
    mass_mb: np.ndarray  # (K,)
    alpha_z: np.ndarray  # (K,)
    # camera stage
    x_cam: np.ndarray  # (K,3)
    depth: np.ndarray  # (K,)
    uv: np.ndarray  # (K,2)
    jproj: np.ndarray  # (K,2,3)
    jw: np.ndarray  # (K,2,3) jproj @ world_to_cam_rot
    cov2d_base: np.ndarray  # (K,2,2)
    # defocus stage
    radius: np.ndarray  # (K,)
    cov2d: np.ndarray  # (K,2,2)
    mass_df: np.ndarray  # (K,)
    alpha_eff: np.ndarray  # (K,)
    conic: np.ndarray  # (K,2,2) inverse of cov2d
    # color stage
    view_dir: np.ndarray  # (K,3)
    view_dist: np.ndarray  # (K,)
    basis: np.ndarray  # (K,B)
    color_raw: np.ndarray  # (K,3) pre-clamp decode
    color_dec: np.ndarray  # (K,3)
    color_out: np.ndarray  # (K,3)
    # bookkeeping
    valid: np.ndarray  # (K,) bool
    order: np.ndarray  # indices of valid splats, front to back


@dataclass
class SplatRecord:
    """One splat's compositing footprint, kept for the backward pass."""

    k: int
    r0: int
    r1: int
    c0: int
    c1: int
    gauss: np.ndarray
    contrib: np.ndarray  # pixels that actually composited
    unclamped: np.ndarray  # pixels where the alpha max-clamp was inactive
    t_before: np.ndarray


@dataclass
class RenderCache:
    frame: SplatFrame
    records: list[SplatRecord]
    final_t: np.ndarray
    raw: np.ndarray  # pre-clamp composite
    image: np.ndarray


def _prepare(scene: Scene, cam: PinholeCamera, params: PerImageParams, opts: RenderOptions) -> SplatFrame:
    k = len(scene)
    rot_prim = quat_to_rotation_batch(scene.rotations)
    var_prim = np.exp(2.0 * scene.log_scales)
    sigma = np.einsum("kij,kj,klj->kil", rot_prim, var_prim, rot_prim)
    alpha = sigmoid(scene.opacity_logits)

    if params.enable_motion:
        mu_z, sigma_z, alpha_z, mass_mb = motion_blur_transform_batch(
            scene.positions, sigma, alpha, params.motion
        )
    else:
        mu_z, sigma_z = scene.positions, sigma
        mass_mb = np.ones(k)
        alpha_z = alpha

    rwc = cam.world_to_cam_rot
    x_cam = mu_z @ rwc.T + cam.world_to_cam_trans
    depth = x_cam[:, 2]
    valid = depth > Z_NEAR
    z = np.where(valid, depth, 1.0)

    uv = np.stack(
        [cam.fx * x_cam[:, 0] / z + cam.cx, cam.fy * x_cam[:, 1] / z + cam.cy], axis=1
    )
    jproj = np.zeros((k, 2, 3))
    jproj[:, 0, 0] = cam.fx / z
    jproj[:, 0, 2] = -cam.fx * x_cam[:, 0] / (z * z)
    jproj[:, 1, 1] = cam.fy / z
    jproj[:, 1, 2] = -cam.fy * x_cam[:, 1] / (z * z)
    jw = jproj @ rwc
    cov2d_base = np.einsum("kij,kjl,kml->kim", jw, sigma_z, jw)
    cov2d_base[:, 0, 0] += BLUR_FLOOR_PX2
    cov2d_base[:, 1, 1] += BLUR_FLOOR_PX2

    if params.enable_defocus:
        radius = params.defocus.a * (params.defocus.inv_focus_depth - 1.0 / z)
        r2 = radius * radius
        cov2d = cov2d_base.copy()
        cov2d[:, 0, 0] += r2
        cov2d[:, 1, 1] += r2
        mass_df = np.sqrt(det2(cov2d_base) / det2(cov2d))
        alpha_eff = alpha_z * mass_df
    else:
        radius = np.zeros(k)
        cov2d = cov2d_base
        mass_df = np.ones(k)
        alpha_eff = alpha_z

    dets = det2(cov2d)
    valid &= dets > DEGENERATE_DET
    safe_det = np.where(valid, dets, 1.0)
    conic = np.empty_like(cov2d)
    conic[:, 0, 0] = cov2d[:, 1, 1] / safe_det
    conic[:, 1, 1] = cov2d[:, 0, 0] / safe_det
    conic[:, 0, 1] = -cov2d[:, 0, 1] / safe_det
    conic[:, 1, 0] = -cov2d[:, 1, 0] / safe_det

    # cull splats whose cutoff ellipse cannot reach the image
    trace_half = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = trace_half + np.sqrt(np.maximum(trace_half**2 - dets, 0.0))
    reach = opts.sigma_cutoff * np.sqrt(np.maximum(lam_max, 0.0))
    inside = (
        (uv[:, 0] >= -reach)
        & (uv[:, 0] <= cam.width + reach)
        & (uv[:, 1] >= -reach)
        & (uv[:, 1] <= cam.height + reach)
    )
    valid &= inside

    center = cam.center()
    diff = mu_z - center
    dist = np.linalg.norm(diff, axis=1)
    safe_dist = np.where(dist > 0, dist, 1.0)
    view_dir = diff / safe_dist[:, None]
    view_dir[dist == 0] = np.array([0.0, 0.0, 1.0])
    basis = sh_eval_basis(view_dir, scene.sh_degree)
    color_raw = 0.5 + np.einsum("kb,kbc->kc", basis, scene.sh)
    color_dec = np.maximum(color_raw, 0.0)
    if params.enable_color:
        color_out = color_dec @ params.color.gain.T + params.color.offset
    else:
        color_out = color_dec

    idx = np.arange(k)
    vi = idx[valid]
    order = vi[np.lexsort((vi, depth[valid]))]

    return SplatFrame(
        rot_prim=rot_prim,
        var_prim=var_prim,
        sigma=sigma,
        alpha=alpha,
        mu_z=mu_z,
        sigma_z=sigma_z,
        mass_mb=mass_mb,
        alpha_z=alpha_z,
        x_cam=x_cam,
        depth=depth,
        uv=uv,
        jproj=jproj,
        jw=jw,
        cov2d_base=cov2d_base,
        radius=radius,
        cov2d=cov2d,
        mass_df=mass_df,
        alpha_eff=alpha_eff,
        conic=conic,
        view_dir=view_dir,
        view_dist=dist,
        basis=basis,
        color_raw=color_raw,
        color_dec=color_dec,
        color_out=color_out,
        valid=valid,
        order=order,
    )


def _bbox(uv, cov2d, cutoff, width, r0, r1):
    """Integer pixel bounds of the cutoff ellipse's AABB, clipped to the
    image rows [r0, r1). Pixel centers sit at (col + 0.5, row + 0.5)."""
    ext_x = cutoff * np.sqrt(max(cov2d[0, 0], 0.0))
    ext_y = cutoff * np.sqrt(max(cov2d[1, 1], 0.0))
    c0 = max(0, int(np.ceil(uv[0] - ext_x - 0.5)))
    c1 = min(width - 1, int(np.floor(uv[0] + ext_x - 0.5)))
    rr0 = max(r0, int(np.ceil(uv[1] - ext_y - 0.5)))
    rr1 = min(r1 - 1, int(np.floor(uv[1] + ext_y - 0.5)))
    return rr0, rr1 + 1, c0, c1 + 1


def _composite_rows(
    frame: SplatFrame,
    opts: RenderOptions,
    width: int,
    r0: int,
    r1: int,
    records: Optional[list] = None,
    hasher=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Front-to-back compositing of rows [r0, r1).  Returns (color, T)."""
    h = r1 - r0
    color = np.zeros((h, width, 3))
    trans = np.ones((h, width))
    for k in frame.order:
        br0, br1, bc0, bc1 = _bbox(frame.uv[k], frame.cov2d[k], opts.sigma_cutoff, width, r0, r1)
        if hasher is not None:
            hasher.update(np.array([k, br0, br1, bc0, bc1], dtype=np.int64).tobytes())
        if br0 >= br1 or bc0 >= bc1:
            continue
        dx = (np.arange(bc0, bc1) + 0.5) - frame.uv[k, 0]
        dy = (np.arange(br0, br1) + 0.5) - frame.uv[k, 1]
        m = frame.conic[k]
        quad = (
            m[0, 0] * dx[None, :] ** 2
            + 2.0 * m[0, 1] * dy[:, None] * dx[None, :]
            + m[1, 1] * dy[:, None] ** 2
        )
        gauss = np.exp(-0.5 * quad)
        a_unclamped = frame.alpha_eff[k] * gauss
        a = np.minimum(a_unclamped, opts.alpha_clamp_max)
        tslice = trans[br0 - r0 : br1 - r0, bc0:bc1]
        contrib = (a >= opts.min_alpha) & (tslice >= opts.transmittance_floor)
        if hasher is not None:
            hasher.update(np.packbits(contrib).tobytes())
            hasher.update(np.packbits(a_unclamped <= opts.alpha_clamp_max).tobytes())
        if records is not None:
            records.append(
                SplatRecord(
                    k=int(k),
                    r0=br0,
                    r1=br1,
                    c0=bc0,
                    c1=bc1,
                    gauss=gauss,
                    contrib=contrib,
                    unclamped=a_unclamped <= opts.alpha_clamp_max,
                    t_before=tslice.copy(),
                )
            )
        w = np.where(contrib, tslice * a, 0.0)
        cslice = color[br0 - r0 : br1 - r0, bc0:bc1]
        cslice += w[:, :, None] * frame.color_out[k]
        trans[br0 - r0 : br1 - r0, bc0:bc1] = np.where(contrib, tslice * (1.0 - a), tslice)
    return color, trans


def _render_raw(
    scene: Scene,
    cam: PinholeCamera,
    params: PerImageParams,
    opts: RenderOptions,
    threads: int = 1,
) -> np.ndarray:
    """Pre-clamp composite (used by the Monte-Carlo average)."""
    frame = _prepare(scene, cam, params, opts)
    h, w = cam.height, cam.width
    if threads <= 1 or h < 2 * threads:
        color, trans = _composite_rows(frame, opts, w, 0, h)
    else:
        bounds = np.linspace(0, h, threads + 1).astype(int)
        jobs = [(int(bounds[i]), int(bounds[i + 1])) for i in range(threads) if bounds[i] < bounds[i + 1]]
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(lambda b: _composite_rows(frame, opts, w, b[0], b[1]), jobs))
        color = np.concatenate([p[0] for p in parts], axis=0)
        trans = np.concatenate([p[1] for p in parts], axis=0)
    return color + trans[:, :, None] * opts.background


def render(
    scene: Scene,
    cam: PinholeCamera,
    params: Optional[PerImageParams] = None,
    opts: Optional[RenderOptions] = None,
    threads: int = 1,
    want_cache: bool = False,
) -> np.ndarray | tuple[np.ndarray, RenderCache]:
    """Render the scene from cam with per-image capture parameters applied.

    Output is an (H, W, 3) float image clamped to [0, 1]. Identical inputs
    give bit-identical output for any thread count.
    """
    if len(scene) == 0:
        raise ValueError("cannot render an empty scene")
    params = params if params is not None else PerImageParams.identity()
    opts = opts if opts is not None else RenderOptions()

    if want_cache:
        frame = _prepare(scene, cam, params, opts)
        records: list = []
        color, trans = _composite_rows(frame, opts, cam.width, 0, cam.height, records=records)
        raw = color + trans[:, :, None] * opts.background
        image = np.clip(raw, 0.0, 1.0)
        return image, RenderCache(frame=frame, records=records, final_t=trans, raw=raw, image=image)
    return np.clip(_render_raw(scene, cam, params, opts, threads=threads), 0.0, 1.0)


def render_signature(
    scene: Scene, cam: PinholeCamera, params: PerImageParams, opts: RenderOptions
) -> bytes:
    """Digest of every discrete decision the forward pass takes (culling,
    depth order, compositing masks, clamp activations). Two parameter points
    with equal signatures lie on the same smooth branch of the renderer."""
    frame = _prepare(scene, cam, params, opts)
    hasher = hashlib.blake2b(digest_size=16)
    hasher.update(np.packbits(frame.valid).tobytes())
    hasher.update(frame.order.astype(np.int64).tobytes())
    hasher.update(np.packbits(frame.color_raw >= 0.0).tobytes())
    color, trans = _composite_rows(frame, opts, cam.width, 0, cam.height, hasher=hasher)
    raw = color + trans[:, :, None] * opts.background
    hasher.update(np.packbits((raw >= 0.0) & (raw <= 1.0)).tobytes())
    return hasher.digest()


def splat(
    mu: np.ndarray,
    cov: np.ndarray,
    alpha: float,
    color: np.ndarray,
    cam: PinholeCamera,
    opts: Optional[RenderOptions] = None,
) -> Optional[Splat2D]:
    """Project one (already motion-blurred) Gaussian to a 2D splat.

    Returns None when culled: behind the near plane, degenerate after
    projection, or with its cutoff ellipse entirely off the image.
    """
    opts = opts if opts is not None else RenderOptions()
    mu = np.asarray(mu, dtype=float)
    x_cam = cam.world_to_cam_rot @ mu + cam.world_to_cam_trans
    z = float(x_cam[2])
    if z <= Z_NEAR:
        return None
    uv = np.array([cam.fx * x_cam[0] / z + cam.cx, cam.fy * x_cam[1] / z + cam.cy])
    jproj = np.array(
        [
            [cam.fx / z, 0.0, -cam.fx * x_cam[0] / (z * z)],
            [0.0, cam.fy / z, -cam.fy * x_cam[1] / (z * z)],
        ]
    )
    jw = jproj @ cam.world_to_cam_rot
    cov2d = jw @ np.asarray(cov, dtype=float) @ jw.T + BLUR_FLOOR_PX2 * np.eye(2)
    det = float(det2(cov2d))
    if det <= DEGENERATE_DET:
        return None
    trace_half = 0.5 * (cov2d[0, 0] + cov2d[1, 1])
    lam_max = trace_half + np.sqrt(max(trace_half**2 - det, 0.0))
    reach = opts.sigma_cutoff * np.sqrt(max(lam_max, 0.0))
    if (
        uv[0] < -reach
        or uv[0] > cam.width + reach
        or uv[1] < -reach
        or uv[1] > cam.height + reach
    ):
        return None
    return Splat2D(mean2d=uv, cov2d=cov2d, depth=z, alpha_eff=float(alpha), color=np.asarray(color, dtype=float))


def render_mc_oracle(
    scene: Scene,
    cam: PinholeCamera,
    params: Optional[PerImageParams],
    n_samples: int,
    rng: np.random.Generator,
    opts: Optional[RenderOptions] = None,
    threads: int = 1,
) -> np.ndarray:
    """Physical motion-blur reference: average of renders under rigid world
    transforms sampled from the exact blur distribution.

    Every sample shares one (rotation, translation) draw across all
    primitives; the closed-form blur covariances are zeroed in each sample so
    nothing is counted twice. Defocus and color apply exactly as in render.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    params = params if params is not None else PerImageParams.identity()
    opts = opts if opts is not None else RenderOptions()
    motion = params.motion if params.enable_motion else MotionBlurParams.identity()

    zero_blur = np.all(motion.log_std_rot == -np.inf) and np.all(motion.log_std_trans == -np.inf)
    if zero_blur:
        # every sample would be identical; one render is the exact average
        return render(scene, cam, params, opts, threads=threads)

    sampled = []
    for _ in range(n_samples):
        rot_s, trans_s = sample_world_transform(motion, rng)
        sampled.append(
            PerImageParams(
                motion=MotionBlurParams(rotation=rotation_to_quat(rot_s), translation=trans_s),
                defocus=params.defocus,
                color=params.color,
                enable_motion=True,
                enable_defocus=params.enable_defocus,
                enable_color=params.enable_color,
            )
        )

    # average the pre-clamp composites (sensor integration), clamp once
    accum = np.zeros((cam.height, cam.width, 3))
    chunk = 32
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for start in range(0, n_samples, chunk):
                batch = sampled[start : start + chunk]
                imgs = list(pool.map(lambda p: _render_raw(scene, cam, p, opts), batch))
                for img in imgs:  # fixed summation order regardless of threads
                    accum += img
    else:
        for p in sampled:
            accum += _render_raw(scene, cam, p, opts)
    return np.clip(accum / n_samples, 0.0, 1.0)
