import hashlib

import numpy as np
import pytest

from gsfit.optim import AdamState, AdaptConfig, FitConfig, adam_step, fit, write_trace_csv
from gsfit.optim import test_time_adapt as adapt_view
from gsfit.perimage import ColorParams, PerImageParams
from gsfit.ply_io import write_ply
from gsfit.render import render
from gsfit.scene import sigmoid
from gsfit.synth import generate_scene, jitter_scene, orbit_cameras

from conftest import make_camera, make_scene


def test_adam_zero_grad_no_motion():
    theta = np.array([1.0, -2.0, 3.0])
    state = AdamState.zeros(3)
    out = theta
    for _ in range(10):
        out = adam_step(out, np.zeros(3), state, 0.1)
    assert np.array_equal(out, theta)


def test_adam_first_step_is_signed_lr():
    theta = np.zeros(3)
    g = np.array([0.3, -0.001, 7.0])
    out = adam_step(theta, g, AdamState.zeros(3), 0.05)
    np.testing.assert_allclose(out, -0.05 * np.sign(g), rtol=1e-9)


def test_adam_quadratic_convergence():
    theta = np.array([5.0])
    state = AdamState.zeros(1)
    target = 1.7
    for step in range(2000):
        g = theta - target
        theta = adam_step(theta, g, state, 0.1)
        if abs(theta[0] - target) < 1e-4 and abs(g[0]) < 1e-4:
            break
    assert abs(theta[0] - target) < 1e-4
    assert step < 1999


def test_fit_config_validation():
    with pytest.raises(ValueError, match="iterations"):
        FitConfig(iterations=0).validate()
    with pytest.raises(ValueError, match="lambda"):
        FitConfig(lambda_l1=0.5, lambda_dssim=0.4).validate()
    with pytest.raises(ValueError, match="rates"):
        FitConfig(lr_sh=0.0).validate()


def test_fit_rejects_mismatched_images():
    scene = make_scene(3, seed=0)
    views = orbit_cameras(2, 1.0, 32, 32)
    good = np.zeros((32, 32, 3))
    bad = np.zeros((16, 16, 3))
    with pytest.raises(ValueError, match="dimensions"):
        fit(scene, views, [good, bad], FitConfig(iterations=1))


def _self_consistent_setup(n_views=3, size=32, n_prims=12):
    scene = generate_scene(n_prims, 1.0, 2, seed=21)
    views = orbit_cameras(n_views, 1.0, size, size)
    images = [render(scene, v.camera) for v in views]
    return scene, views, images


def test_fit_self_consistency_zero_initial_loss():
    scene, views, images = _self_consistent_setup()
    cfg = FitConfig(iterations=1, seed=0,
                    enable_motion=False, enable_defocus=False, enable_color=False)
    result = fit(scene, views, images, cfg)
    step0_loss = result.trace[0][2]
    assert step0_loss < 1e-6
    # near-identity fit-init params (defocus a, blur stds) perturb the render
    # only marginally even when mechanisms are on
    cfg_on = FitConfig(iterations=1, seed=0)
    assert fit(scene, views, images, cfg_on).trace[0][2] < 1e-5


def test_fit_loss_trace_non_increasing_on_self_consistent_fixture():
    scene, views, images = _self_consistent_setup()
    cfg = FitConfig(iterations=30, seed=0,
                    enable_motion=False, enable_defocus=False, enable_color=False)
    result = fit(scene, views, images, cfg)
    losses = np.array([row[2] for row in result.trace])
    window = min(10, len(losses))
    moving = np.convolve(losses, np.ones(window) / window, mode="valid")
    assert np.all(np.diff(moving) <= 1e-12)


def _scene_digest(scene):
    h = hashlib.blake2b(digest_size=16)
    for arr in (scene.positions, scene.log_scales, scene.rotations, scene.opacity_logits, scene.sh):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def test_fit_deterministic_given_seed(tmp_path):
    scene, views, images = _self_consistent_setup(n_views=2, n_prims=8)
    init = jitter_scene(scene, seed=2, pos_std=0.01, logit_std=0.2)
    cfg = FitConfig(iterations=12, seed=5)
    r1 = fit(init, views, images, cfg)
    r2 = fit(init, views, images, cfg)
    assert _scene_digest(r1.scene) == _scene_digest(r2.scene)
    p1, p2 = tmp_path / "a.ply", tmp_path / "b.ply"
    write_ply(r1.scene, p1)
    write_ply(r2.scene, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_fit_pruning_respects_threshold():
    scene, views, images = _self_consistent_setup(n_views=2, n_prims=10)
    init = scene.copy()
    dead = np.array([0, 3, 7])
    init.opacity_logits[dead] = -8.0  # alpha ~ 3e-4, below the 0.005 threshold
    cfg = FitConfig(iterations=6, seed=1, prune_interval=3, lr_opacity=1e-6)
    result = fit(init, views, images, cfg)
    assert len(result.scene) == 7
    # all survivors had alpha >= threshold at prune time (tiny lr: ~initial values)
    assert sigmoid(result.scene.opacity_logits).min() >= cfg.prune_opacity_threshold


def test_fit_returns_per_image_params_and_trace(tmp_path):
    scene, views, images = _self_consistent_setup(n_views=2, n_prims=6)
    cfg = FitConfig(iterations=4, seed=0)
    result = fit(scene, views, images, cfg)
    assert len(result.params) == 2
    assert set(result.params_by_id()) == {v.id for v in views}
    path = tmp_path / "loss.csv"
    write_trace_csv(result.trace, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("step,image_id,loss")
    assert len(lines) == 5


def test_adapt_fixed_point():
    scene = make_scene(6, seed=11)
    cam = make_camera()
    from gsfit.camera import CameraView

    view = CameraView(id="t", camera=cam)
    image = render(scene, cam)
    result = adapt_view(scene, image, view, AdaptConfig(steps=40))
    assert abs(result.psnr_after - result.psnr_before) <= 0.1
    assert result.psnr_before == 99.0  # identical render


def test_adapt_never_mutates_scene():
    scene = make_scene(6, seed=12)
    cam = make_camera()
    from gsfit.camera import CameraView

    digest_before = _scene_digest(scene)
    image = np.clip(render(scene, cam) + 0.05, 0, 1)
    result = adapt_view(scene, image, CameraView(id="t", camera=cam), AdaptConfig(steps=25))
    assert _scene_digest(scene) == digest_before
    # blur stds stay pinned at exactly zero
    assert np.all(result.params.motion.log_std_rot == -np.inf)
    assert np.all(result.params.motion.log_std_trans == -np.inf)
    assert result.params.enable_defocus is False


def test_adapt_improves_on_color_shift():
    scene = make_scene(8, seed=13)
    cam = make_camera(width=48, height=48)
    from gsfit.camera import CameraView

    shift = ColorParams(gain=0.9 * np.eye(3), offset=np.full(3, 0.05))
    truth = PerImageParams(color=shift)
    image = render(scene, cam, truth)
    result = adapt_view(scene, image, CameraView(id="t", camera=cam), AdaptConfig(steps=120))
    assert result.psnr_after > result.psnr_before + 3.0


def test_fit_clean_views_reaches_30db():
    """Committed fixture: 50 primitives, 40 clean views, 2000 iterations of
    the default recipe recovers >= 30 dB mean PSNR on the training views."""
    from gsfit.evaluation import psnr

    scene = generate_scene(50, 1.0, 3, seed=11)
    views = orbit_cameras(40, 1.0, 48, 48)
    images = [render(scene, v.camera) for v in views]
    init = jitter_scene(scene, seed=5, pos_std=0.01, log_scale_std=0.05,
                        logit_std=0.3, sh_std=0.05)
    result = fit(init, views, images, FitConfig(iterations=2000, seed=0))
    values = [psnr(render(result.scene, v.camera, p), img)
              for v, p, img in zip(views, result.params, images)]
    assert float(np.mean(values)) >= 30.0
