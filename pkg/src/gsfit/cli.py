"""Command-line interface: synth / fit / render / adapt / eval / check / export.

Exit codes: 0 success, 1 validation failure (bad flags, missing paths, config
schema violations), 2 runtime failure. A TOML or JSON config file can supply
defaults per subcommand (section name = subcommand); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .camera import load_cameras
from .evaluation import ViewRecord, blurriness, psnr, select_test_views, ssim
from .gradcheck import check_gradients
from .image_io import read_png, write_npy, write_png
from .math3d import random_unit_quat
from .optim import AdaptConfig, FitConfig, fit, test_time_adapt, write_trace_csv
from .perimage import (
    PerImageParams,
    absorb_color_into_sh,
    load_params,
    mean_color_params,
    save_params,
)
from .ply_io import read_ply, write_ply
from .render import RenderOptions, render, render_mc_oracle
from .scene import Scene
from .synth import (
    CorruptionSpec,
    generate_dataset,
    generate_scene,
    jitter_scene,
    load_dataset,
    orbit_cameras,
)


class CliError(Exception):
    """Validation problem; maps to exit code 1."""


class UsageError(Exception):
    """Bad flags or arguments; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
        super().__init__(*args, **kwargs)

    def error(self, message):  # argparse default exits 2; flags are validation
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config_section(path: str, section: str, allowed: set[str]) -> dict:
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    if p.suffix == ".json":
        doc = json.loads(p.read_text())
    else:
        with open(p, "rb") as f:
            doc = tomllib.load(f)
    unknown_sections = set(doc) - {"synth", "fit", "render", "adapt", "eval", "check", "export"}
    if unknown_sections:
        raise CliError(f"unknown config section: {sorted(unknown_sections)[0]}")
    sec = doc.get(section, {})
    unknown = set(sec) - allowed
    if unknown:
        raise CliError(f"unknown config key in [{section}]: {sorted(unknown)[0]}")
    return sec


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], section: str) -> argparse.Namespace:
    pre, _ = parser.parse_known_args(argv)
    if getattr(pre, "config", None):
        allowed = {a.dest for a in parser._actions if a.dest not in ("help", "config")}
        overrides = _load_config_section(pre.config, section, allowed)
        for key, value in overrides.items():
            if isinstance(value, list):
                value = tuple(value)
            parser.set_defaults(**{key: value})
    return parser.parse_args(argv)


def _require_path(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} not found: {path}")
    return p


# -- synth -------------------------------------------------------------------


def cmd_synth(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit synth", description="Generate a synthetic corrupted-capture dataset.")
    parser.add_argument("--out", required=True, help="output dataset directory")
    parser.add_argument("--config", help="TOML/JSON config file ([synth] section)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-primitives", type=int, default=50)
    parser.add_argument("--views", type=int, default=24)
    parser.add_argument("--width", type=int, default=64)
    parser.add_argument("--height", type=int, default=64)
    parser.add_argument("--extent", type=float, default=1.0)
    parser.add_argument("--sh-degree", type=int, default=3, choices=(0, 1, 2, 3))
    parser.add_argument("--mc-samples", type=int, default=1024)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--rot-blur", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    parser.add_argument("--trans-blur", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    parser.add_argument("--pose-rot", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    parser.add_argument("--pose-trans", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    parser.add_argument("--color-gain-std", type=float, default=0.0)
    parser.add_argument("--color-offset-std", type=float, default=0.0)
    parser.add_argument("--defocus-a", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    parser.add_argument("--focus-inv-depth", nargs=2, type=float, default=(0.0, 0.0), metavar=("LO", "HI"))
    args = _apply_config(parser, argv, "synth")

    scene = generate_scene(args.n_primitives, args.extent, args.sh_degree, args.seed)
    views = orbit_cameras(args.views, args.extent, args.width, args.height)
    spec = CorruptionSpec(
        rot_blur_std=tuple(args.rot_blur),
        trans_blur_std=tuple(args.trans_blur),
        pose_rot_offset=tuple(args.pose_rot),
        pose_trans_offset=tuple(args.pose_trans),
        color_gain_std=args.color_gain_std,
        color_offset_std=args.color_offset_std,
        defocus_a=tuple(args.defocus_a),
        focus_inv_depth=tuple(args.focus_inv_depth),
        seed=args.seed,
    )
    try:
        spec.validate()
    except ValueError as e:
        raise CliError(str(e))
    generate_dataset(scene, views, spec, args.out, n_mc=args.mc_samples, threads=args.threads)
    print(f"dataset written to {args.out} ({args.views} views, {args.n_primitives} primitives)")
    return 0


# -- fit ----------------------------------------------------------------------


def cmd_fit(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit fit", description="Fit a scene to a dataset.")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", help="TOML/JSON config file ([fit] section)")
    parser.add_argument("--iterations", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1, help="the fit loop itself is sequential")
    parser.add_argument("--init-ply", default=None, help="initial scene (default: dataset scene_gt.ply)")
    parser.add_argument("--init-jitter-pos", type=float, default=0.0)
    parser.add_argument("--init-jitter-scale", type=float, default=0.0)
    parser.add_argument("--init-jitter-opacity", type=float, default=0.0)
    parser.add_argument("--init-jitter-sh", type=float, default=0.0)
    parser.add_argument("--disable-motion", action="store_true")
    parser.add_argument("--disable-defocus", action="store_true")
    parser.add_argument("--disable-color", action="store_true")
    parser.add_argument("--prune-interval", type=int, default=0)
    parser.add_argument("--prune-threshold", type=float, default=0.005)
    parser.add_argument("--lambda-l1", type=float, default=0.8)
    parser.add_argument("--lambda-dssim", type=float, default=0.2)
    parser.add_argument("--lr-position", type=float, default=1.6e-4)
    parser.add_argument("--lr-log-scale", type=float, default=5e-3)
    parser.add_argument("--lr-rotation", type=float, default=1e-3)
    parser.add_argument("--lr-opacity", type=float, default=5e-2)
    parser.add_argument("--lr-sh", type=float, default=2.5e-3)
    parser.add_argument("--lr-pose-rot", type=float, default=1e-4)
    parser.add_argument("--lr-pose-trans", type=float, default=1e-4)
    parser.add_argument("--lr-blur-std", type=float, default=1e-3)
    parser.add_argument("--lr-defocus", type=float, default=1e-3)
    parser.add_argument("--defocus-a-init", type=float, default=0.01)
    parser.add_argument("--lr-color", type=float, default=5e-3)
    args = _apply_config(parser, argv, "fit")

    ds_dir = _require_path(args.dataset, "dataset directory")
    dataset = load_dataset(ds_dir)
    init_path = Path(args.init_ply) if args.init_ply else ds_dir / "scene_gt.ply"
    _require_path(init_path, "initial scene PLY")
    scene = read_ply(init_path)
    if any(j > 0 for j in (args.init_jitter_pos, args.init_jitter_scale, args.init_jitter_opacity, args.init_jitter_sh)):
        scene = jitter_scene(
            scene,
            seed=args.seed,
            pos_std=args.init_jitter_pos,
            log_scale_std=args.init_jitter_scale,
            logit_std=args.init_jitter_opacity,
            sh_std=args.init_jitter_sh,
        )

    cfg = FitConfig(
        iterations=args.iterations,
        lambda_l1=args.lambda_l1,
        lambda_dssim=args.lambda_dssim,
        lr_position=args.lr_position,
        lr_log_scale=args.lr_log_scale,
        lr_rotation=args.lr_rotation,
        lr_opacity=args.lr_opacity,
        lr_sh=args.lr_sh,
        lr_pose_rot=args.lr_pose_rot,
        lr_pose_trans=args.lr_pose_trans,
        lr_blur_std=args.lr_blur_std,
        lr_defocus=args.lr_defocus,
        lr_color=args.lr_color,
        defocus_a_init=args.defocus_a_init,
        prune_opacity_threshold=args.prune_threshold,
        prune_interval=args.prune_interval,
        seed=args.seed,
        enable_motion=not args.disable_motion,
        enable_defocus=not args.disable_defocus,
        enable_color=not args.disable_color,
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise CliError(str(e))

    result = fit(scene, dataset.views, dataset.observed, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(result.scene, out / "scene.ply")
    save_params(result.params_by_id(), out / "params.json")
    write_trace_csv(result.trace, out / "loss.csv")
    final_loss = result.trace[-1][2] if result.trace else float("nan")
    print(f"fit done: {len(result.scene)} primitives, final step loss {final_loss:.6f}")
    print(f"outputs in {out}")
    return 0


# -- render -------------------------------------------------------------------


def cmd_render(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit render", description="Render views of a PLY scene.")
    parser.add_argument("--ply", required=True)
    parser.add_argument("--cameras", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", help="TOML/JSON config file ([render] section)")
    parser.add_argument("--view", action="append", default=None, help="view id (repeatable; default all)")
    parser.add_argument("--params", default=None, help="per-image params JSON")
    parser.add_argument("--mc-oracle", type=int, default=0, metavar="N", help="use the N-sample physical-blur path")
    parser.add_argument("--mc-seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--npy", action="store_true", help="also dump raw float images")
    parser.add_argument("--background", nargs=3, type=float, default=(0.0, 0.0, 0.0))
    parser.add_argument("--sigma-cutoff", type=float, default=3.0)
    parser.add_argument("--min-alpha", type=float, default=1.0 / 255.0)
    parser.add_argument("--transmittance-floor", type=float, default=1e-4)
    parser.add_argument("--alpha-clamp-max", type=float, default=0.999)
    args = _apply_config(parser, argv, "render")

    scene = read_ply(_require_path(args.ply, "scene PLY"))
    views = load_cameras(_require_path(args.cameras, "camera file"))
    params_by_id = load_params(_require_path(args.params, "params file")) if args.params else {}
    if args.view:
        by_id = {v.id: v for v in views}
        missing = [vid for vid in args.view if vid not in by_id]
        if missing:
            raise CliError(f"view id not in camera file: {missing[0]}")
        views = [by_id[vid] for vid in args.view]

    try:
        opts = RenderOptions(
            sigma_cutoff=args.sigma_cutoff,
            min_alpha=args.min_alpha,
            transmittance_floor=args.transmittance_floor,
            alpha_clamp_max=args.alpha_clamp_max,
            background=np.array(args.background),
        )
    except ValueError as e:
        raise CliError(str(e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for view in views:
        params = params_by_id.get(view.id, PerImageParams.identity())
        if args.mc_oracle > 0:
            rng = np.random.default_rng(args.mc_seed)
            img = render_mc_oracle(scene, view.camera, params, args.mc_oracle, rng, opts, threads=args.threads)
        else:
            img = render(scene, view.camera, params, opts, threads=args.threads)
        write_png(img, out / f"{view.id}.png")
        if args.npy:
            write_npy(img, out / f"{view.id}.npy")
    print(f"rendered {len(views)} view(s) to {out}")
    return 0


# -- adapt --------------------------------------------------------------------


def cmd_adapt(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit adapt", description="Test-time pose/color adaptation of one view.")
    parser.add_argument("--ply", required=True)
    parser.add_argument("--cameras", required=True)
    parser.add_argument("--view", required=True)
    parser.add_argument("--image", default=None, help="override the view's image path")
    parser.add_argument("--config", help="TOML/JSON config file ([adapt] section)")
    parser.add_argument("--steps", type=int, default=1000)
    parser.add_argument("--out", default=None, help="write adapted params JSON here")
    args = _apply_config(parser, argv, "adapt")

    scene = read_ply(_require_path(args.ply, "scene PLY"))
    cam_path = _require_path(args.cameras, "camera file")
    views = {v.id: v for v in load_cameras(cam_path)}
    if args.view not in views:
        raise CliError(f"view id not in camera file: {args.view}")
    view = views[args.view]
    image_path = args.image or (
        str(cam_path.parent / view.image_path) if view.image_path else None
    )
    if image_path is None:
        raise CliError(f"view {args.view} has no image_path; pass --image")
    image = read_png(_require_path(image_path, "image"))

    result = test_time_adapt(scene, image, view, AdaptConfig(steps=args.steps))
    print(
        f"view={view.id} steps={args.steps} "
        f"psnr_before={result.psnr_before:.2f} psnr_after={result.psnr_after:.2f}"
    )
    if args.out:
        save_params({view.id: result.params}, args.out)
        print(f"adapted params written to {args.out}")
    return 0


# -- eval ---------------------------------------------------------------------


def cmd_eval(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit eval", description="Evaluate a model on a dataset.")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--ply", required=True, help="fitted scene")
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", help="TOML/JSON config file ([eval] section)")
    parser.add_argument("--against", choices=("observed", "sharp"), default="observed")
    parser.add_argument("--select-k", type=int, default=10)
    parser.add_argument("--min-dist", type=float, default=0.5)
    parser.add_argument("--min-angle", type=float, default=60.0)
    parser.add_argument("--conflict-mode", choices=("conjunctive", "disjunctive"), default="conjunctive")
    parser.add_argument("--adapt-steps", type=int, default=0, help="test-time adaptation steps for selected views")
    parser.add_argument("--threads", type=int, default=1)
    args = _apply_config(parser, argv, "eval")

    dataset = load_dataset(_require_path(args.dataset, "dataset directory"))
    scene = read_ply(_require_path(args.ply, "scene PLY"))
    if args.against == "sharp" and not dataset.sharp:
        raise CliError("dataset has no sharp/ renders to evaluate against")
    references = dataset.sharp if args.against == "sharp" else dataset.observed

    records = [
        ViewRecord(id=v.id, camera=v.camera, score=blurriness(obs))
        for v, obs in zip(dataset.views, dataset.observed)
    ]
    selected_ids = {
        r.id
        for r in select_test_views(
            list(records), k=args.select_k, min_dist=args.min_dist,
            min_angle_deg=args.min_angle, mode=args.conflict_mode,
        )
    }

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for view, ref, rec in zip(dataset.views, references, records):
        img = render(scene, view.camera, PerImageParams.identity(), threads=args.threads)
        row = {
            "id": view.id,
            "blurriness": rec.score,
            "selected": int(rec.id in selected_ids),
            "psnr": psnr(img, ref),
            "ssim": ssim(img, ref),
            "psnr_adapted": "",
            "ssim_adapted": "",
        }
        if args.adapt_steps > 0 and rec.id in selected_ids:
            adapted = test_time_adapt(scene, ref, view, AdaptConfig(steps=args.adapt_steps))
            img_adapted = render(scene, view.camera, adapted.params, threads=args.threads)
            row["psnr_adapted"] = psnr(img_adapted, ref)
            row["ssim_adapted"] = ssim(img_adapted, ref)
        rows.append(row)

    with open(out / "per_view.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    def _mean(key, subset):
        vals = [r[key] for r in subset if r[key] != ""]
        return float(np.mean(vals)) if vals else ""

    sel = [r for r in rows if r["selected"]]
    agg = [
        {"subset": "all", "n": len(rows), "psnr": _mean("psnr", rows), "ssim": _mean("ssim", rows),
         "psnr_adapted": _mean("psnr_adapted", rows), "ssim_adapted": _mean("ssim_adapted", rows)},
        {"subset": "selected", "n": len(sel), "psnr": _mean("psnr", sel), "ssim": _mean("ssim", sel),
         "psnr_adapted": _mean("psnr_adapted", sel), "ssim_adapted": _mean("ssim_adapted", sel)},
    ]
    with open(out / "aggregate.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(agg[0].keys()))
        writer.writeheader()
        writer.writerows(agg)
    print(f"eval written to {out} (selected {len(sel)}/{len(rows)} views, vs {args.against})")
    return 0


# -- check --------------------------------------------------------------------


def make_check_fixture(seed: int = 0):
    """The standard 5-primitive 32x32 gradient-audit fixture."""
    from .camera import PinholeCamera, look_at
    from .perimage import ColorParams, DefocusParams, MotionBlurParams

    rng = np.random.default_rng(seed)
    n = 5
    scene = Scene(
        positions=rng.uniform(-0.4, 0.4, (n, 3)),
        log_scales=rng.uniform(np.log(0.06), np.log(0.14), (n, 3)),
        rotations=np.stack([random_unit_quat(rng) for _ in range(n)]),
        opacity_logits=rng.uniform(0.2, 1.6, n),
        sh=np.concatenate(
            [rng.uniform(0.0, 0.9, (n, 1, 3)), 0.06 * rng.standard_normal((n, 15, 3))], axis=1
        ),
        sh_degree=3,
    )
    rot, trans = look_at(np.array([2.3, 0.5, 0.7]), np.zeros(3))
    cam = PinholeCamera(fx=40.0, fy=40.0, cx=16.0, cy=16.0, width=32, height=32,
                        world_to_cam_rot=rot, world_to_cam_trans=trans)
    params = PerImageParams(
        motion=MotionBlurParams(
            rotation=np.array([0.9995, 0.012, -0.018, 0.014]),
            translation=np.array([0.012, -0.016, 0.007]),
            log_std_rot=np.full(3, np.log(8e-3)),
            log_std_trans=np.full(3, np.log(5e-3)),
        ),
        defocus=DefocusParams(a=1.4, inv_focus_depth=0.45),
        color=ColorParams(
            gain=np.eye(3) + 0.04 * rng.standard_normal((3, 3)),
            offset=0.03 * rng.standard_normal(3),
        ),
    )
    return scene, cam, params


def cmd_check(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit check", description="Analytic-vs-FD gradient audit.")
    parser.add_argument("--config", help="TOML/JSON config file ([check] section)")
    parser.add_argument("--seed", type=int, default=0)
    args = _apply_config(parser, argv, "check")

    scene, cam, params = make_check_fixture(args.seed)
    report = check_gradients(scene, cam, params, seed=args.seed)
    print(report.format_table())
    return 0 if report.passed else 1


# -- export -------------------------------------------------------------------


def cmd_export(argv: list[str]) -> int:
    parser = _Parser(prog="gsfit export", description="Bake color params into SH and write a viewer PLY.")
    parser.add_argument("--ply", required=True)
    parser.add_argument("--params", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", help="TOML/JSON config file ([export] section)")
    parser.add_argument("--image-id", default=None, help="use this image's color params (default: mean over images)")
    args = _apply_config(parser, argv, "export")

    scene = read_ply(_require_path(args.ply, "scene PLY"))
    params_by_id = load_params(_require_path(args.params, "params file"))
    if args.image_id is not None:
        if args.image_id not in params_by_id:
            raise CliError(f"image id not in params file: {args.image_id}")
        color = params_by_id[args.image_id].color
    else:
        color = mean_color_params(params_by_id)

    baked = scene.copy()
    for i in range(len(baked)):
        baked.sh[i] = absorb_color_into_sh(baked.sh[i], color)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_ply(baked, args.out)
    print(f"baked scene written to {args.out}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "render": cmd_render,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "check": cmd_check,
    "export": cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: gsfit {synth,fit,render,adapt,eval,check,export} [options]")
        print(__doc__.strip())
        return 0
    command = argv[0]
    if command not in COMMANDS:
        print(f"gsfit: unknown command {command!r}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[command](argv[1:])
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except CliError as e:
        print(f"gsfit {command}: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help exits 0
        code = e.code if isinstance(e.code, int) else 0
        return code
    except (ValueError, OSError, KeyError) as e:
        print(f"gsfit {command}: runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
