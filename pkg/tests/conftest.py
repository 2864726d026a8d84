import numpy as np
import pytest

from gsfit.camera import PinholeCamera, look_at
from gsfit.math3d import random_unit_quat
from gsfit.scene import Scene


def make_scene(n, seed=0, sh_degree=3, extent=0.8, dc_range=(0.0, 0.9)):
    rng = np.random.default_rng(seed)
    basis = (sh_degree + 1) ** 2
    sh = np.zeros((n, basis, 3))
    sh[:, 0, :] = rng.uniform(*dc_range, (n, 3))
    if basis > 1:
        sh[:, 1:, :] = 0.06 * rng.standard_normal((n, basis - 1, 3))
    return Scene(
        positions=rng.uniform(-extent / 2, extent / 2, (n, 3)),
        log_scales=rng.uniform(np.log(0.05), np.log(0.13), (n, 3)),
        rotations=np.stack([random_unit_quat(rng) for _ in range(n)]),
        opacity_logits=rng.uniform(0.2, 1.6, n),
        sh=sh,
        sh_degree=sh_degree,
    )


def make_camera(width=32, height=32, eye=(2.3, 0.5, 0.7), target=(0.0, 0.0, 0.0), f=None):
    rot, trans = look_at(np.asarray(eye, dtype=float), np.asarray(target, dtype=float))
    focal = float(f if f is not None else 1.25 * width)
    return PinholeCamera(
        fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, world_to_cam_rot=rot, world_to_cam_trans=trans,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_scene():
    return make_scene(5, seed=42)


@pytest.fixture
def small_camera():
    return make_camera()
