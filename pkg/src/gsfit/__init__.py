"""Desk-scale 3D Gaussian splatting with per-image capture-noise models."""

from .camera import BehindCamera, CameraView, PinholeCamera, load_cameras, look_at, save_cameras
from .perimage import (
    ColorParams,
    DefocusParams,
    MotionBlurParams,
    PerImageParams,
    absorb_color_into_sh,
    apply_color_affine,
    apply_defocus,
    defocus_radius,
    load_params,
    motion_blur_transform,
    save_params,
    zeta_exact,
)
from .ply_io import PlyParseError, read_ply, write_ply
from .render import RenderOptions, Splat2D, render, render_mc_oracle, splat
from .scene import GaussianPrimitive, Scene, covariance_of, decode_color, sh_eval_basis

__version__ = "0.1.0"
