import filecmp
import json

import numpy as np
import pytest

from gsfit.cli import main
from gsfit.image_io import read_png
from gsfit.perimage import load_params
from gsfit.ply_io import read_ply


def run(*args):
    return main(list(args))


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ds"
    code = run(
        "synth", "--out", str(out), "--seed", "3", "--n-primitives", "12",
        "--views", "3", "--width", "32", "--height", "32", "--mc-samples", "8",
        "--pose-rot", "0.01", "0.02", "--color-gain-std", "0.05",
    )
    assert code == 0
    return out


def test_synth_outputs_layout(tiny_dataset):
    for sub in ("images", "sharp"):
        assert sorted(p.name for p in (tiny_dataset / sub).iterdir()) == [
            "view_000.png", "view_001.png", "view_002.png"]
    for name in ("cameras.json", "truth_params.json", "meta.json", "scene_gt.ply"):
        assert (tiny_dataset / name).exists()
    cams = json.loads((tiny_dataset / "cameras.json").read_text())
    assert {"id", "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation", "image_path"} <= set(cams[0])


def test_synth_deterministic_trees(tmp_path):
    args = ["--seed", "7", "--n-primitives", "8", "--views", "2", "--width", "24",
            "--height", "24", "--mc-samples", "4", "--trans-blur", "0.005", "0.01"]
    assert run("synth", "--out", str(tmp_path / "a"), *args) == 0
    assert run("synth", "--out", str(tmp_path / "b"), *args) == 0
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

    def assert_same(c):
        assert not c.diff_files and not c.left_only and not c.right_only
        for sub in c.subdirs.values():
            assert_same(sub)

    assert_same(cmp)


def test_fit_render_adapt_eval_export_pipeline(tiny_dataset, tmp_path):
    fit_out = tmp_path / "fit"
    assert run(
        "fit", "--dataset", str(tiny_dataset), "--out", str(fit_out),
        "--iterations", "5", "--seed", "1",
    ) == 0
    assert (fit_out / "scene.ply").exists()
    assert (fit_out / "params.json").exists()
    assert (fit_out / "loss.csv").read_text().count("\n") == 6

    render_out = tmp_path / "renders"
    assert run(
        "render", "--ply", str(fit_out / "scene.ply"), "--cameras",
        str(tiny_dataset / "cameras.json"), "--out", str(render_out), "--npy",
    ) == 0
    assert (render_out / "view_000.png").exists()
    assert (render_out / "view_000.npy").exists()

    assert run(
        "adapt", "--ply", str(fit_out / "scene.ply"), "--cameras",
        str(tiny_dataset / "cameras.json"), "--view", "view_001",
        "--steps", "5", "--out", str(tmp_path / "adapted.json"),
    ) == 0
    adapted = load_params(tmp_path / "adapted.json")
    assert "view_001" in adapted

    eval_out = tmp_path / "eval"
    assert run(
        "eval", "--dataset", str(tiny_dataset), "--ply", str(fit_out / "scene.ply"),
        "--out", str(eval_out), "--against", "sharp", "--select-k", "2", "--min-dist", "0.2",
    ) == 0
    per_view = (eval_out / "per_view.csv").read_text().splitlines()
    assert per_view[0] == "id,blurriness,selected,psnr,ssim,psnr_adapted,ssim_adapted"
    assert len(per_view) == 4
    assert (eval_out / "aggregate.csv").exists()

    assert run(
        "export", "--ply", str(fit_out / "scene.ply"), "--params",
        str(fit_out / "params.json"), "--out", str(tmp_path / "baked.ply"),
    ) == 0
    baked = read_ply(tmp_path / "baked.ply")
    assert len(baked) == len(read_ply(fit_out / "scene.ply"))


def test_render_mc_oracle_one_matches_plain(tiny_dataset, tmp_path):
    ply = tiny_dataset / "scene_gt.ply"
    cams = tiny_dataset / "cameras.json"
    assert run("render", "--ply", str(ply), "--cameras", str(cams), "--out",
               str(tmp_path / "plain"), "--view", "view_000") == 0
    assert run("render", "--ply", str(ply), "--cameras", str(cams), "--out",
               str(tmp_path / "oracle"), "--view", "view_000", "--mc-oracle", "1") == 0
    a = (tmp_path / "plain" / "view_000.png").read_bytes()
    b = (tmp_path / "oracle" / "view_000.png").read_bytes()
    assert a == b


def test_check_command_passes():
    assert run("check", "--seed", "0") == 0


def test_unknown_command_exit_1(capsys):
    assert run("frobnicate") == 1


def test_unknown_flag_exit_1():
    assert run("synth", "--out", "/tmp/x", "--no-such-flag") == 1


def test_missing_path_exit_1(tmp_path):
    assert run("fit", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")) == 1


def test_bad_config_key_exit_1(tmp_path, tiny_dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit": {"iterationz": 3}}))
    assert run("fit", "--dataset", str(tiny_dataset), "--out", str(tmp_path / "o"),
               "--config", str(cfg)) == 1


def test_bad_config_section_exit_1(tmp_path, tiny_dataset):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fitt": {}}))
    assert run("fit", "--dataset", str(tiny_dataset), "--out", str(tmp_path / "o"),
               "--config", str(cfg)) == 1


def test_config_supplies_defaults_and_flags_override(tmp_path, tiny_dataset):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[fit]\niterations = 2\nseed = 9\n")
    out = tmp_path / "fit_cfg"
    assert run("fit", "--dataset", str(tiny_dataset), "--out", str(out),
               "--config", str(cfg)) == 0
    assert (out / "loss.csv").read_text().count("\n") == 3  # header + 2 steps

    out2 = tmp_path / "fit_cfg2"
    assert run("fit", "--dataset", str(tiny_dataset), "--out", str(out2),
               "--config", str(cfg), "--iterations", "4") == 0
    assert (out2 / "loss.csv").read_text().count("\n") == 5


def test_help_lists_defaults(capsys):
    code = run("render", "--help")
    out = capsys.readouterr().out
    assert code == 0
    assert "--mc-oracle" in out
    assert "default" in out


def test_render_unknown_view_exit_1(tiny_dataset, tmp_path):
    assert run("render", "--ply", str(tiny_dataset / "scene_gt.ply"), "--cameras",
               str(tiny_dataset / "cameras.json"), "--out", str(tmp_path / "r"),
               "--view", "does_not_exist") == 1


def test_eval_with_adaptation_steps(tiny_dataset, tmp_path):
    eval_out = tmp_path / "eval_adapt"
    assert run(
        "eval", "--dataset", str(tiny_dataset), "--ply", str(tiny_dataset / "scene_gt.ply"),
        "--out", str(eval_out), "--select-k", "1", "--adapt-steps", "3",
    ) == 0
    rows = (eval_out / "per_view.csv").read_text().splitlines()
    adapted = [r for r in rows[1:] if not r.endswith(",,")]
    assert len(adapted) == 1  # exactly the selected view carries adapted metrics


def test_render_options_flags(tiny_dataset, tmp_path):
    assert run(
        "render", "--ply", str(tiny_dataset / "scene_gt.ply"), "--cameras",
        str(tiny_dataset / "cameras.json"), "--out", str(tmp_path / "r"),
        "--view", "view_000", "--sigma-cutoff", "2.5", "--background", "1", "1", "1",
    ) == 0
    img = read_png(tmp_path / "r" / "view_000.png")
    assert img[0, 0].tolist() == [1.0, 1.0, 1.0]  # white background corner


def test_render_rejects_bad_options(tiny_dataset, tmp_path):
    assert run(
        "render", "--ply", str(tiny_dataset / "scene_gt.ply"), "--cameras",
        str(tiny_dataset / "cameras.json"), "--out", str(tmp_path / "r"),
        "--alpha-clamp-max", "1.5",
    ) == 1
