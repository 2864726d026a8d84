#!/usr/bin/env python3
"""Regenerate the committed plain-render regression fixture.

The golden image pins the mechanisms-disabled render path: any change to
splatting, sorting, compositing or quantization shows up as a byte diff in
tests/test_render.py::test_plain_render_matches_golden.
"""

from pathlib import Path

from gsfit.image_io import write_png
from gsfit.perimage import PerImageParams
from gsfit.render import render
from gsfit.synth import generate_scene, orbit_cameras

OUT = Path(__file__).resolve().parent.parent / "tests" / "data" / "golden_plain_render.png"


def main():
    scene = generate_scene(50, 1.0, 3, seed=11)
    cam = orbit_cameras(8, 1.0, 64, 64)[2].camera
    params = PerImageParams(enable_motion=False, enable_defocus=False, enable_color=False)
    img = render(scene, cam, params)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    write_png(img, OUT)
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
