"""Synthetic scenes and corrupted captures with exact ground truth.

Observed images are produced by the Monte-Carlo physical-blur path under
per-image corruptions drawn from a spec (blur, pose offset, color jitter,
defocus), with the drawn parameters recorded in a manifest for later
recovery scoring. Sharp renders of the same views are emitted alongside for
held-out evaluation. Per-image rng streams are spawned from the master seed
by image index, so parallel generation cannot change any output.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .camera import CameraView, PinholeCamera, load_cameras, look_at, save_cameras
from .image_io import read_png, write_png
from .perimage import (
    ColorParams,
    DefocusParams,
    MotionBlurParams,
    PerImageParams,
    load_params,
    save_params,
)
from .ply_io import read_ply, write_ply
from .render import RenderOptions, render, render_mc_oracle
from .scene import Scene, sh_basis_size

DATASET_MC_SAMPLES = 1024


def generate_scene(n_primitives: int, extent: float = 1.0, sh_degree: int = 3, seed: int = 0) -> Scene:
    """Random scene in a centered box: positions uniform, log-scales uniform
    in [ln(0.01 extent), ln(0.05 extent)], uniform rotations, opacities in
    (0.5, 0.95), SH bands with geometrically decaying magnitude."""
    if n_primitives < 1:
        raise ValueError("need at least one primitive")
    rng = np.random.default_rng(seed)
    half = 0.5 * extent
    positions = rng.uniform(-half, half, (n_primitives, 3))
    log_scales = rng.uniform(math.log(0.01 * extent), math.log(0.05 * extent), (n_primitives, 3))
    quats = rng.standard_normal((n_primitives, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    alphas = rng.uniform(0.5, 0.95, n_primitives)
    logits = np.log(alphas / (1.0 - alphas))
    basis = sh_basis_size(sh_degree)
    sh = np.zeros((n_primitives, basis, 3))
    sh[:, 0, :] = rng.normal(0.3, 0.4, (n_primitives, 3))
    for degree in range(1, sh_degree + 1):
        lo, hi = degree * degree, (degree + 1) ** 2
        sh[:, lo:hi, :] = rng.normal(0.0, 0.35 * 0.35**degree, (n_primitives, hi - lo, 3))
    return Scene(
        positions=positions,
        log_scales=log_scales,
        rotations=quats,
        opacity_logits=logits,
        sh=sh,
        sh_degree=sh_degree,
    )


def orbit_cameras(
    n_views: int,
    extent: float = 1.0,
    width: int = 64,
    height: int = 64,
    radius_factor: float = 2.5,
    target=(0.0, 0.0, 0.0),
) -> list[CameraView]:
    """Deterministic orbit around the target with smooth elevation variation
    (poses are intentionally non-coplanar)."""
    radius = radius_factor * extent
    views = []
    for i in range(n_views):
        theta = 2.0 * math.pi * i / n_views
        elev = 0.15 + 0.3 * math.sin(2.3 * theta + 0.4)
        eye = np.array(
            [radius * math.cos(theta), radius * math.sin(theta), elev * radius]
        ) + np.asarray(target, dtype=float)
        rot, trans = look_at(eye, np.asarray(target, dtype=float))
        cam = PinholeCamera(
            fx=float(width),
            fy=float(width),
            cx=width / 2.0,
            cy=height / 2.0,
            width=width,
            height=height,
            world_to_cam_rot=rot,
            world_to_cam_trans=trans,
        )
        views.append(CameraView(id=f"view_{i:03d}", camera=cam))
    return views


def jitter_scene(
    scene: Scene,
    seed: int,
    pos_std: float = 0.0,
    log_scale_std: float = 0.0,
    logit_std: float = 0.0,
    sh_std: float = 0.0,
    rot_std: float = 0.0,
) -> Scene:
    """Gaussian perturbation of every primitive parameter (fit-experiment
    initializations)."""
    rng = np.random.default_rng(seed)
    out = scene.copy()
    out.positions += pos_std * rng.standard_normal(out.positions.shape)
    out.log_scales += log_scale_std * rng.standard_normal(out.log_scales.shape)
    out.opacity_logits += logit_std * rng.standard_normal(out.opacity_logits.shape)
    out.sh += sh_std * rng.standard_normal(out.sh.shape)
    out.rotations += rot_std * rng.standard_normal(out.rotations.shape)
    return out


@dataclass
class CorruptionSpec:
    """Per-image draw ranges; (lo, hi) pairs are sampled uniformly."""

    rot_blur_std: tuple = (0.0, 0.0)  # radians
    trans_blur_std: tuple = (0.0, 0.0)  # scene units
    pose_rot_offset: tuple = (0.0, 0.0)  # radians
    pose_trans_offset: tuple = (0.0, 0.0)  # scene units
    color_gain_std: float = 0.0
    color_offset_std: float = 0.0
    defocus_a: tuple = (0.0, 0.0)
    focus_inv_depth: tuple = (0.0, 0.0)
    seed: int = 0

    def validate(self) -> None:
        for name in ("rot_blur_std", "trans_blur_std", "pose_rot_offset", "pose_trans_offset", "defocus_a"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} range must satisfy 0 <= lo <= hi")
        if self.color_gain_std < 0 or self.color_offset_std < 0:
            raise ValueError("color jitter stds must be >= 0")


def _log_or_ninf(x: float) -> float:
    return -np.inf if x == 0.0 else math.log(x)


def _random_axis(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(3)
    return v / np.linalg.norm(v)


def draw_true_params(spec: CorruptionSpec, rng: np.random.Generator) -> PerImageParams:
    """One image's ground-truth corruption parameters."""
    angle = rng.uniform(*spec.pose_rot_offset)
    axis = _random_axis(rng)
    quat = np.concatenate([[math.cos(0.5 * angle)], math.sin(0.5 * angle) * axis])
    trans = rng.uniform(*spec.pose_trans_offset) * _random_axis(rng)
    rot_std = rng.uniform(*spec.rot_blur_std)
    trans_std = rng.uniform(*spec.trans_blur_std)
    gain = np.eye(3) + spec.color_gain_std * rng.standard_normal((3, 3))
    offset = spec.color_offset_std * rng.standard_normal(3)
    return PerImageParams(
        motion=MotionBlurParams(
            rotation=quat,
            translation=trans,
            log_std_rot=np.full(3, _log_or_ninf(rot_std)),
            log_std_trans=np.full(3, _log_or_ninf(trans_std)),
        ),
        defocus=DefocusParams(
            a=float(rng.uniform(*spec.defocus_a)),
            inv_focus_depth=float(rng.uniform(*spec.focus_inv_depth)),
        ),
        color=ColorParams(gain=gain, offset=offset),
    )


@dataclass
class Dataset:
    root: Path
    views: list[CameraView]
    observed: list[np.ndarray]
    sharp: list[np.ndarray]
    truth: dict[str, PerImageParams]
    meta: dict


def generate_dataset(
    scene: Scene,
    views: list[CameraView],
    spec: CorruptionSpec,
    out_dir,
    n_mc: int = DATASET_MC_SAMPLES,
    opts: RenderOptions | None = None,
    threads: int = 1,
) -> Dataset:
    """Render observed (corrupted) and sharp images for every view and write
    the dataset directory: images/, sharp/, cameras.json, truth_params.json,
    meta.json, scene_gt.ply."""
    if not views:
        raise ValueError("need at least one camera view")
    spec.validate()
    opts = opts if opts is not None else RenderOptions()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "sharp").mkdir(parents=True, exist_ok=True)

    streams = np.random.SeedSequence(spec.seed).spawn(len(views))
    truth: dict[str, PerImageParams] = {}
    observed = []
    sharp = []
    identity = PerImageParams.identity()
    out_views = []
    for i, view in enumerate(views):
        rng = np.random.default_rng(streams[i])
        true_params = draw_true_params(spec, rng)
        truth[view.id] = true_params
        obs = render_mc_oracle(scene, view.camera, true_params, n_mc, rng, opts, threads=threads)
        clean = render(scene, view.camera, identity, opts, threads=threads)
        observed.append(obs)
        sharp.append(clean)
        write_png(obs, out / "images" / f"{view.id}.png")
        write_png(clean, out / "sharp" / f"{view.id}.png")
        out_views.append(
            CameraView(id=view.id, camera=view.camera, image_path=f"images/{view.id}.png")
        )

    save_cameras(out_views, out / "cameras.json")
    save_params(truth, out / "truth_params.json")
    write_ply(scene, out / "scene_gt.ply")
    meta = {
        "seed": spec.seed,
        "n_mc": n_mc,
        "n_views": len(views),
        "width": views[0].camera.width,
        "height": views[0].camera.height,
        "spec": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
    }
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    return Dataset(root=out, views=out_views, observed=observed, sharp=sharp, truth=truth, meta=meta)


def load_dataset(root) -> Dataset:
    root = Path(root)
    views = load_cameras(root / "cameras.json")
    observed = [read_png(root / "images" / f"{v.id}.png") for v in views]
    sharp_dir = root / "sharp"
    sharp = [read_png(sharp_dir / f"{v.id}.png") for v in views] if sharp_dir.exists() else []
    truth_path = root / "truth_params.json"
    truth = load_params(truth_path) if truth_path.exists() else {}
    meta_path = root / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Dataset(root=root, views=views, observed=observed, sharp=sharp, truth=truth, meta=meta)


def load_gt_scene(root) -> Scene:
    return read_ply(Path(root) / "scene_gt.ply")
