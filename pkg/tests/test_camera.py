import numpy as np
import pytest

from gsfit.camera import (
    BehindCamera,
    CameraView,
    PinholeCamera,
    load_cameras,
    look_at,
    project,
    projection_jacobian,
    save_cameras,
    to_camera,
)
from gsfit.math3d import random_unit_quat, quat_to_rotation, so3_exp


def plain_cam(**kw):
    defaults = dict(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
    defaults.update(kw)
    return PinholeCamera(**defaults)


def test_to_camera_identity():
    x = np.array([0.3, -0.2, 1.7])
    assert np.array_equal(to_camera(plain_cam(), x), x)


def test_to_camera_pure_translation():
    t = np.array([1.0, 2.0, 3.0])
    cam = plain_cam(world_to_cam_trans=t)
    x = np.array([0.5, 0.5, 0.5])
    np.testing.assert_array_equal(to_camera(cam, x), x + t)


def test_to_camera_inverse_composition(rng):
    rot = quat_to_rotation(random_unit_quat(rng))
    t = rng.standard_normal(3)
    cam = plain_cam(world_to_cam_rot=rot, world_to_cam_trans=t)
    x = rng.standard_normal(3)
    back = rot.T @ (to_camera(cam, x) - t)
    np.testing.assert_allclose(back, x, atol=1e-12)


def test_project_optical_axis():
    uv, depth = project(plain_cam(), np.array([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(uv, [50.0, 50.0])
    assert depth == 1.0


def test_project_similar_triangles():
    cam = plain_cam(cx=0.0)
    uv, _ = project(cam, np.array([1.0, 0.0, 2.0]))
    assert uv[0] == 50.0


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project(plain_cam(), np.array([0.0, 0.0, 0.0]))


def test_jacobian_on_axis():
    cam = plain_cam()
    j = projection_jacobian(cam, np.array([0.0, 0.0, 2.0]))
    np.testing.assert_array_equal(j, [[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]])


def test_jacobian_depth_scaling():
    cam = plain_cam()
    j1 = projection_jacobian(cam, np.array([0.0, 0.0, 1.0]))
    j2 = projection_jacobian(cam, np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(j2[0, 0], j1[0, 0] / 2)
    np.testing.assert_allclose(j2[1, 1], j1[1, 1] / 2)


def test_jacobian_matches_finite_differences(rng):
    cam = plain_cam()
    for _ in range(25):
        x = rng.uniform(-1, 1, 3)
        x[2] = rng.uniform(0.5, 4.0)
        j = projection_jacobian(cam, x)
        h = 1e-5 * x[2]
        fd = np.empty((2, 3))
        for axis in range(3):
            xp, xm = x.copy(), x.copy()
            xp[axis] += h
            xm[axis] -= h
            fd[:, axis] = (project(cam, xp)[0] - project(cam, xm)[0]) / (2 * h)
        np.testing.assert_allclose(j, fd, rtol=1e-5, atol=1e-9)


def test_projection_invariant_under_common_rigid_transform(rng):
    base_rot = quat_to_rotation(random_unit_quat(rng))
    base_t = rng.standard_normal(3)
    cam = plain_cam(world_to_cam_rot=base_rot, world_to_cam_trans=base_t)
    x = base_rot.T @ (np.array([0.4, -0.3, 2.5]) - base_t)  # in front by construction
    uv0, d0 = project(cam, to_camera(cam, x))

    g_rot = so3_exp(rng.standard_normal(3))
    g_t = rng.standard_normal(3)
    x2 = g_rot @ x + g_t
    cam2 = plain_cam(world_to_cam_rot=base_rot @ g_rot.T, world_to_cam_trans=base_t - base_rot @ g_rot.T @ g_t)
    uv1, d1 = project(cam2, to_camera(cam2, x2))
    np.testing.assert_allclose(uv0, uv1, atol=1e-9)
    np.testing.assert_allclose(d0, d1, atol=1e-11)


def test_invalid_intrinsics_rejected():
    with pytest.raises(ValueError):
        plain_cam(fx=0.0)
    with pytest.raises(ValueError):
        plain_cam(width=0)


def test_camera_json_roundtrip(tmp_path, rng):
    views = []
    for i in range(3):
        rot, trans = look_at(rng.uniform(1, 3, 3), np.zeros(3))
        cam = PinholeCamera(fx=60.0, fy=62.0, cx=31.5, cy=30.5, width=64, height=60,
                            world_to_cam_rot=rot, world_to_cam_trans=trans)
        views.append(CameraView(id=f"v{i}", camera=cam, image_path=f"images/v{i}.png"))
    path = tmp_path / "cameras.json"
    save_cameras(views, path)
    back = load_cameras(path)
    assert [v.id for v in back] == ["v0", "v1", "v2"]
    for a, b in zip(views, back):
        np.testing.assert_allclose(a.camera.world_to_cam_rot, b.camera.world_to_cam_rot, atol=1e-12)
        np.testing.assert_allclose(a.camera.world_to_cam_trans, b.camera.world_to_cam_trans, atol=1e-12)
        assert a.image_path == b.image_path


def test_look_at_points_camera_at_target(rng):
    eye = np.array([2.0, 1.0, 0.5])
    rot, trans = look_at(eye, np.zeros(3))
    cam = plain_cam(world_to_cam_rot=rot, world_to_cam_trans=trans)
    uv, depth = project(cam, to_camera(cam, np.zeros(3)))
    np.testing.assert_allclose(uv, [cam.cx, cam.cy], atol=1e-9)
    np.testing.assert_allclose(depth, np.linalg.norm(eye), atol=1e-12)
    np.testing.assert_allclose(cam.center(), eye, atol=1e-12)
