"""Analytic-vs-finite-difference gradient audit.

The audit renders a small scene, compares render_backward against central
differences of a smooth scalar functional, and reports the worst relative
error per parameter group. Coordinates whose +/-2h perturbation flips any
discrete renderer decision (culling, sort order, compositing masks, clamps)
are excluded: across such a flip the finite difference straddles two smooth
branches and measures nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backward import render_backward
from .camera import PinholeCamera
from .params import GROUPS, ParamLayout
from .perimage import PerImageParams
from .render import RenderOptions, render, render_signature
from .scene import Scene

REL_TOL = 1e-3
FD_ABS_FLOOR = 1e-8  # below this FD magnitude, compare absolutely
ABS_TOL = 1e-6


@dataclass
class GroupReport:
    group: str
    n_checked: int
    n_excluded: int
    max_rel_err: float
    worst_address: str
    passed: bool


@dataclass
class GradReport:
    groups: list[GroupReport]

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.groups)

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    def format_table(self) -> str:
        lines = [
            f"{'group':<16s} {'checked':>8s} {'excluded':>9s} {'max rel err':>12s}  worst offender",
            "-" * 78,
        ]
        for g in self.groups:
            lines.append(
                f"{g.group:<16s} {g.n_checked:>8d} {g.n_excluded:>9d} {g.max_rel_err:>12.3e}"
                f"  {g.worst_address}{'' if g.passed else '   FAIL'}"
            )
        lines.append("-" * 78)
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tolerance {REL_TOL:g})")
        return "\n".join(lines)


def _tangent_project(vec: np.ndarray, layout: ParamLayout, theta: np.ndarray, group: str) -> None:
    """Remove the radial component of quaternion-group gradients in place
    (the forward normalizes, so the radial direction carries no signal)."""
    mask = layout.group_mask(group)
    idx = np.flatnonzero(mask)
    for start in range(0, idx.size, 4):
        block = idx[start : start + 4]
        q = theta[block]
        u = q / np.linalg.norm(q)
        g = vec[block]
        vec[block] = g - u * float(g @ u)


def check_gradients(
    scene: Scene,
    cam: PinholeCamera,
    params: PerImageParams,
    seed: int = 0,
    h_rel: float = 1e-4,
    h_floor: float = 1e-6,
    opts: RenderOptions | None = None,
) -> GradReport:
    """Compare the analytic adjoint against central differences, group by
    group, on a quadratic functional of the rendered image."""
    if len(scene) > 10:
        raise ValueError("gradient audit is meant for scenes of <= 10 primitives")
    opts = opts if opts is not None else RenderOptions()
    rng = np.random.default_rng(seed)
    weights = rng.uniform(0.5, 1.5, (cam.height, cam.width, 3))
    target = rng.uniform(0.2, 0.4, (cam.height, cam.width, 3))

    layout = ParamLayout.for_problem(scene, 1)
    theta0 = layout.pack(scene, [params])

    def loss_at(vec: np.ndarray) -> float:
        s, ps = layout.unpack(vec, [params])
        img = render(s, cam, ps[0], opts)
        return float(np.sum(weights * (img - target) ** 2))

    def signature_at(vec: np.ndarray) -> bytes:
        s, ps = layout.unpack(vec, [params])
        return render_signature(s, cam, ps[0], opts)

    img, cache = render(scene, cam, params, opts, want_cache=True)
    grad_out = 2.0 * weights * (img - target)
    sg, ig = render_backward(scene, cam, params, grad_out, opts, cache)
    analytic = layout.pack_grads(sg, [ig])

    base_sig = signature_at(theta0)
    fd = np.zeros(layout.size)
    excluded = np.zeros(layout.size, dtype=bool)
    for i in range(layout.size):
        if not np.isfinite(theta0[i]):
            excluded[i] = True  # exactly-zero blur stds sit at -inf
            continue
        h = max(h_rel * abs(theta0[i]), h_floor)
        probe = theta0.copy()
        probe[i] = theta0[i] + 2.0 * h
        sig_plus = signature_at(probe)
        probe[i] = theta0[i] - 2.0 * h
        sig_minus = signature_at(probe)
        if sig_plus != base_sig or sig_minus != base_sig:
            excluded[i] = True
            continue
        probe[i] = theta0[i] + h
        f_plus = loss_at(probe)
        probe[i] = theta0[i] - h
        f_minus = loss_at(probe)
        fd[i] = (f_plus - f_minus) / (2.0 * h)

    for quat_group in ("rotation", "pose_rot"):
        _tangent_project(analytic, layout, theta0, quat_group)
        _tangent_project(fd, layout, theta0, quat_group)

    reports = []
    for name in GROUPS:
        mask = layout.group_mask(name) & ~excluded
        n_excluded = int((layout.group_mask(name) & excluded).sum())
        idx = np.flatnonzero(mask)
        worst_err = 0.0
        worst_addr = "-"
        for i in idx:
            if abs(fd[i]) < FD_ABS_FLOOR:
                err = abs(analytic[i] - fd[i]) / (ABS_TOL / REL_TOL)
            else:
                err = abs(analytic[i] - fd[i]) / abs(fd[i])
            if err > worst_err:
                worst_err = err
                worst_addr = layout.address(i)
        reports.append(
            GroupReport(
                group=name,
                n_checked=int(idx.size),
                n_excluded=n_excluded,
                max_rel_err=worst_err,
                worst_address=worst_addr,
                passed=worst_err < REL_TOL,
            )
        )
    return GradReport(groups=reports)
