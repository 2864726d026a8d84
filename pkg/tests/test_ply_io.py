import numpy as np
import pytest

from gsfit.ply_io import PlyParseError, read_ply, write_ply

from conftest import make_scene


def as_float32(scene):
    out = scene.copy()
    out.positions = out.positions.astype(np.float32).astype(float)
    out.log_scales = out.log_scales.astype(np.float32).astype(float)
    out.rotations = out.rotations.astype(np.float32).astype(float)
    out.opacity_logits = out.opacity_logits.astype(np.float32).astype(float)
    out.sh = out.sh.astype(np.float32).astype(float)
    return out


def test_roundtrip_small(tmp_path):
    scene = make_scene(5, seed=1)
    path = tmp_path / "scene.ply"
    write_ply(scene, path)
    back = read_ply(path)
    np.testing.assert_allclose(back.positions, scene.positions, atol=1e-6)
    np.testing.assert_allclose(back.log_scales, scene.log_scales, atol=1e-6)
    np.testing.assert_allclose(back.rotations, scene.rotations, atol=1e-6)
    np.testing.assert_allclose(back.opacity_logits, scene.opacity_logits, atol=1e-6)
    np.testing.assert_allclose(back.sh, scene.sh, atol=1e-6)
    assert back.sh_degree == scene.sh_degree


def test_roundtrip_lossless_at_float32(tmp_path):
    scene = as_float32(make_scene(20, seed=2))
    p1 = tmp_path / "a.ply"
    p2 = tmp_path / "b.ply"
    write_ply(scene, p1)
    once = read_ply(p1)
    write_ply(once, p2)
    twice = read_ply(p2)
    assert p1.read_bytes() == p2.read_bytes()
    for field in ("positions", "log_scales", "rotations", "opacity_logits", "sh"):
        np.testing.assert_array_equal(getattr(once, field), getattr(twice, field))
        np.testing.assert_array_equal(getattr(once, field), getattr(scene, field))


def test_all_degrees_roundtrip(tmp_path):
    for degree in range(4):
        scene = make_scene(3, seed=degree, sh_degree=degree)
        path = tmp_path / f"d{degree}.ply"
        write_ply(scene, path)
        assert read_ply(path).sh_degree == degree


def test_empty_scene_rejected(tmp_path):
    scene = make_scene(1, seed=0).select(np.array([False]))
    with pytest.raises(ValueError, match="empty"):
        write_ply(scene, tmp_path / "x.ply")


def test_empty_file_missing_header(tmp_path):
    path = tmp_path / "empty.ply"
    path.write_bytes(b"")
    with pytest.raises(PlyParseError, match="missing header"):
        read_ply(path)


def test_garbage_header(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"not a ply file at all")
    with pytest.raises(PlyParseError, match="missing header"):
        read_ply(path)


def test_unknown_property_layout(tmp_path):
    scene = make_scene(2, seed=3)
    path = tmp_path / "scene.ply"
    write_ply(scene, path)
    blob = path.read_bytes()
    corrupted = blob.replace(b"property float f_dc_0", b"property float mystery", 1)
    bad = tmp_path / "bad.ply"
    bad.write_bytes(corrupted)
    with pytest.raises(PlyParseError, match="vertex"):
        read_ply(bad)


def test_truncated_payload_reports_offset(tmp_path):
    scene = make_scene(4, seed=4)
    path = tmp_path / "scene.ply"
    write_ply(scene, path)
    blob = path.read_bytes()
    bad = tmp_path / "trunc.ply"
    bad.write_bytes(blob[:-17])
    with pytest.raises(PlyParseError, match="truncated payload") as err:
        read_ply(bad)
    assert err.value.byte_offset > 0
