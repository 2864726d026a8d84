"""Hand-derived adjoint of the forward renderer.

render_backward walks the compositing records in reverse, accumulating
per-splat gradients (color, effective opacity, 2D mean, conic), then pushes
them through the defocus, projection, motion-blur, covariance-parametrization
and color chains, all vectorized over primitives. Clamps and cutoffs use the
zero-outside / pass-through-inside subgradient, taking the inside branch at
exact boundaries; the depth sort is treated as constant.

Gradient sums over a splat's footprint use numpy's pairwise reduction over
the footprint array, whose shape is fixed by the forward pass; the backward
runs on a single worker, so the reduction tree never depends on thread count.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .camera import PinholeCamera
from .math3d import inv3_batch
from .params import ImageGrads, SceneGrads
from .perimage import PerImageParams
from .render import RenderCache, RenderOptions, render
from .scene import Scene, sh_basis_gradient


def _inv2_batch(m: np.ndarray) -> np.ndarray:
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1] / det
    out[..., 1, 1] = m[..., 0, 0] / det
    out[..., 0, 1] = -m[..., 0, 1] / det
    out[..., 1, 0] = -m[..., 1, 0] / det
    return out


def _quat_backward_batch(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Vectorized gradient of quat_to_rotation w.r.t. unnormalized (K,4) q."""
    n = np.linalg.norm(q, axis=1, keepdims=True)
    u = q / n
    w, x, y, z = u.T
    r = d_rot
    g_w = (
        -2 * z * r[:, 0, 1] + 2 * y * r[:, 0, 2]
        + 2 * z * r[:, 1, 0] - 2 * x * r[:, 1, 2]
        - 2 * y * r[:, 2, 0] + 2 * x * r[:, 2, 1]
    )
    g_x = (
        2 * y * r[:, 0, 1] + 2 * z * r[:, 0, 2]
        + 2 * y * r[:, 1, 0] - 4 * x * r[:, 1, 1] - 2 * w * r[:, 1, 2]
        + 2 * z * r[:, 2, 0] + 2 * w * r[:, 2, 1] - 4 * x * r[:, 2, 2]
    )
    g_y = (
        -4 * y * r[:, 0, 0] + 2 * x * r[:, 0, 1] + 2 * w * r[:, 0, 2]
        + 2 * x * r[:, 1, 0] + 2 * z * r[:, 1, 2]
        - 2 * w * r[:, 2, 0] + 2 * z * r[:, 2, 1] - 4 * y * r[:, 2, 2]
    )
    g_z = (
        -4 * z * r[:, 0, 0] - 2 * w * r[:, 0, 1] + 2 * x * r[:, 0, 2]
        + 2 * w * r[:, 1, 0] - 4 * z * r[:, 1, 1] + 2 * y * r[:, 1, 2]
        + 2 * x * r[:, 2, 0] + 2 * y * r[:, 2, 1]
    )
    g_unit = np.stack([g_w, g_x, g_y, g_z], axis=1)
    radial = np.sum(g_unit * u, axis=1, keepdims=True)
    return (g_unit - u * radial) / n


def render_backward(
    scene: Scene,
    cam: PinholeCamera,
    params: Optional[PerImageParams],
    grad_out: np.ndarray,
    opts: Optional[RenderOptions] = None,
    cache: Optional[RenderCache] = None,
) -> tuple[SceneGrads, ImageGrads]:
    """Gradients of sum(grad_out * rendered_image) w.r.t. every parameter."""
    params = params if params is not None else PerImageParams.identity()
    opts = opts if opts is not None else RenderOptions()
    if cache is None:
        _, cache = render(scene, cam, params, opts, want_cache=True)
    fr = cache.frame
    k_total = len(scene)

    # final [0,1] clamp (inside branch at the exact boundary)
    d_raw = grad_out * ((cache.raw >= 0.0) & (cache.raw <= 1.0))

    # -- compositing, reversed --------------------------------------------
    d_color_out = np.zeros((k_total, 3))
    d_alpha_eff = np.zeros(k_total)
    d_uv = np.zeros((k_total, 2))
    d_conic = np.zeros((k_total, 2, 2))

    suffix = cache.final_t[:, :, None] * opts.background  # color composited after splat i
    for rec in reversed(cache.records):
        k = rec.k
        rows = slice(rec.r0, rec.r1)
        cols = slice(rec.c0, rec.c1)
        d_c = d_raw[rows, cols]
        a = np.minimum(fr.alpha_eff[k] * rec.gauss, opts.alpha_clamp_max)
        w = np.where(rec.contrib, rec.t_before * a, 0.0)
        color_k = fr.color_out[k]

        d_color_out[k] += np.einsum("yx,yxc->c", w, d_c)

        suf = suffix[rows, cols]
        d_a = np.einsum(
            "yxc,yxc->yx", d_c, rec.t_before[:, :, None] * color_k - suf / (1.0 - a)[:, :, None]
        )
        live = rec.contrib & rec.unclamped
        d_a = np.where(live, d_a, 0.0)
        suffix[rows, cols] = suf + w[:, :, None] * color_k

        d_alpha_eff[k] += np.sum(d_a * rec.gauss)
        d_g = d_a * fr.alpha_eff[k]
        d_quad = -0.5 * rec.gauss * d_g

        dx = (np.arange(rec.c0, rec.c1) + 0.5) - fr.uv[k, 0]
        dy = (np.arange(rec.r0, rec.r1) + 0.5) - fr.uv[k, 1]
        m = fr.conic[k]
        px = m[0, 0] * dx[None, :] + m[0, 1] * dy[:, None]
        py = m[0, 1] * dx[None, :] + m[1, 1] * dy[:, None]
        d_uv[k, 0] += np.sum(d_quad * (-2.0) * px)
        d_uv[k, 1] += np.sum(d_quad * (-2.0) * py)
        d_conic[k, 0, 0] += np.sum(d_quad * dx[None, :] ** 2)
        d_conic[k, 0, 1] += np.sum(d_quad * 2.0 * dx[None, :] * dy[:, None])
        d_conic[k, 1, 1] += np.sum(d_quad * dy[:, None] ** 2)

    # -- conic -> cov2d ------------------------------------------------------
    d_cov2d = -np.einsum("kij,kjl,klm->kim", fr.conic, d_conic, fr.conic)

    # -- defocus stage -----------------------------------------------------
    z = np.where(fr.depth > 0, fr.depth, 1.0)
    if params.enable_defocus:
        d_alpha_z = d_alpha_eff * fr.mass_df
        d_mass = d_alpha_eff * fr.alpha_z
        inv_base = _inv2_batch(fr.cov2d_base)
        half = 0.5 * fr.mass_df * d_mass
        d_base = d_cov2d + half[:, None, None] * (inv_base - fr.conic)
        tr_conic = fr.conic[:, 0, 0] + fr.conic[:, 1, 1]
        d_r2 = d_cov2d[:, 0, 0] + d_cov2d[:, 1, 1] - half * tr_conic
        gap = params.defocus.inv_focus_depth - 1.0 / z
        d_defocus_a = float(np.sum(d_r2 * 2.0 * params.defocus.a * gap * gap))
        d_defocus_rho = float(np.sum(d_r2 * params.defocus.a**2 * 2.0 * gap))
        d_z_defocus = d_r2 * params.defocus.a**2 * 2.0 * gap / (z * z)
    else:
        d_alpha_z = d_alpha_eff
        d_base = d_cov2d
        d_defocus_a = 0.0
        d_defocus_rho = 0.0
        d_z_defocus = np.zeros(k_total)

    # -- projection stage: base = jw Sigma_z jw^T + floor ------------------
    d_sigma_z = np.einsum("kji,kjl,klm->kim", fr.jw, d_base, fr.jw)
    d_base_sym = d_base + np.transpose(d_base, (0, 2, 1))
    d_jw = np.einsum("kij,kjl,klm->kim", d_base_sym, fr.jw, fr.sigma_z)
    d_jproj = d_jw @ cam.world_to_cam_rot.T

    xc = fr.x_cam
    d_xcam = np.zeros((k_total, 3))
    fz = cam.fx / z
    gz = cam.fy / z
    d_xcam[:, 0] += d_jproj[:, 0, 2] * (-fz / z)
    d_xcam[:, 1] += d_jproj[:, 1, 2] * (-gz / z)
    d_xcam[:, 2] += (
        d_jproj[:, 0, 0] * (-fz / z)
        + d_jproj[:, 0, 2] * (2.0 * cam.fx * xc[:, 0] / z**3)
        + d_jproj[:, 1, 1] * (-gz / z)
        + d_jproj[:, 1, 2] * (2.0 * cam.fy * xc[:, 1] / z**3)
    )
    # uv = (fx X/Z + cx, fy Y/Z + cy)
    d_xcam[:, 0] += d_uv[:, 0] * fz
    d_xcam[:, 1] += d_uv[:, 1] * gz
    d_xcam[:, 2] += d_uv[:, 0] * (-cam.fx * xc[:, 0] / z**2) + d_uv[:, 1] * (
        -cam.fy * xc[:, 1] / z**2
    )
    d_xcam[:, 2] += d_z_defocus

    d_mu_z = d_xcam @ cam.world_to_cam_rot

    # -- color stage --------------------------------------------------------
    ig = ImageGrads()
    ig.defocus_a = d_defocus_a
    ig.defocus_rho = d_defocus_rho
    if params.enable_color:
        ig.color_gain = np.einsum("kc,kd->cd", d_color_out, fr.color_dec)
        ig.color_offset = d_color_out.sum(axis=0)
        d_color_dec = d_color_out @ params.color.gain
    else:
        d_color_dec = d_color_out
    d_color_raw = d_color_dec * (fr.color_raw >= 0.0)
    d_sh = np.einsum("kb,kc->kbc", fr.basis, d_color_raw)
    basis_grad = sh_basis_gradient(fr.view_dir, scene.sh_degree)
    coef = np.einsum("kbc,kc->kb", scene.sh, d_color_raw)
    d_dir = np.einsum("kb,kbd->kd", coef, basis_grad)
    dist = np.where(fr.view_dist > 0, fr.view_dist, 1.0)
    radial = np.sum(d_dir * fr.view_dir, axis=1, keepdims=True)
    d_mu_z += (d_dir - fr.view_dir * radial) / dist[:, None]

    # -- motion stage -------------------------------------------------------
    if params.enable_motion:
        rot = params.motion.rotation_matrix()
        d_alpha = d_alpha_z * fr.mass_mb
        d_mass_mb = d_alpha_z * fr.alpha
        half = 0.5 * fr.mass_mb * d_mass_mb
        d_sigma = half[:, None, None] * inv3_batch(fr.sigma)
        d_sigma_z += -half[:, None, None] * inv3_batch(fr.sigma_z)

        # Sigma_z = R inner R^T
        d_inner = np.einsum("ji,kjl,lm->kim", rot, d_sigma_z, rot)
        d_sigma += d_inner

        mu = scene.positions
        kx = np.zeros((k_total, 3, 3))
        kx[:, 0, 1] = -mu[:, 2]
        kx[:, 0, 2] = mu[:, 1]
        kx[:, 1, 0] = mu[:, 2]
        kx[:, 1, 2] = -mu[:, 0]
        kx[:, 2, 0] = -mu[:, 1]
        kx[:, 2, 1] = mu[:, 0]
        rot_cov = params.motion.rot_cov_diag()
        trans_cov_grad = np.einsum("kii->ki", d_inner)  # diagonal of d_inner
        diag_r = np.einsum("kaj,kac,kcj->kj", kx, d_inner, kx)
        ig.log_std_rot = np.sum(diag_r, axis=0) * 2.0 * rot_cov
        ig.log_std_trans = np.sum(trans_cov_grad, axis=0) * 2.0 * params.motion.trans_cov_diag()

        d_inner_sym = d_inner + np.transpose(d_inner, (0, 2, 1))
        d_kx = np.einsum("kij,kjl,l->kil", d_inner_sym, kx, rot_cov)
        d_mu = np.empty((k_total, 3))
        d_mu[:, 0] = -d_kx[:, 1, 2] + d_kx[:, 2, 1]
        d_mu[:, 1] = d_kx[:, 0, 2] - d_kx[:, 2, 0]
        d_mu[:, 2] = -d_kx[:, 0, 1] + d_kx[:, 1, 0]

        d_sigma_z_sym = d_sigma_z + np.transpose(d_sigma_z, (0, 2, 1))
        inner = np.einsum("ji,kjl,lm->kim", rot, fr.sigma_z, rot)  # R^T Sigma_z R
        d_rot_pi = np.einsum("kij,kjl->il", d_sigma_z_sym, np.einsum("jl,klm->kjm", rot, inner))
        d_rot_pi += np.einsum("ki,kj->ij", d_mu_z, mu)
        ig.pose_rot = _quat_backward_batch(
            params.motion.rotation[None], d_rot_pi[None]
        )[0]
        ig.pose_trans = d_mu_z.sum(axis=0)
        d_mu += d_mu_z @ rot
    else:
        d_sigma = d_sigma_z
        d_mu = d_mu_z
        d_alpha = d_alpha_z

    # -- primitive covariance parametrization -------------------------------
    d_sigma_sym = d_sigma + np.transpose(d_sigma, (0, 2, 1))
    d_rot_prim = np.einsum("kij,kjl,kl->kil", d_sigma_sym, fr.rot_prim, fr.var_prim)
    d_var_diag = np.einsum("kaj,kac,kcj->kj", fr.rot_prim, d_sigma, fr.rot_prim)
    d_log_scales = d_var_diag * 2.0 * fr.var_prim
    d_rotations = _quat_backward_batch(scene.rotations, d_rot_prim)
    d_logits = d_alpha * fr.alpha * (1.0 - fr.alpha)

    sg = SceneGrads(
        positions=d_mu,
        log_scales=d_log_scales,
        rotations=d_rotations,
        opacity_logits=d_logits,
        sh=d_sh,
    )
    return sg, ig


def fd_gradient(loss_fn, theta: np.ndarray, h_rel: float = 1e-4, h_floor: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector.

    Step per coordinate: max(h_rel * |theta_i|, h_floor). Coordinates at -inf
    (exactly-zero blur stds) are left untouched and report zero.
    """
    if h_rel <= 0:
        raise ValueError("h_rel must be positive")
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        if not np.isfinite(theta[i]):
            continue
        h = max(h_rel * abs(theta[i]), h_floor)
        plus = theta.copy()
        plus[i] += h
        minus = theta.copy()
        minus[i] -= h
        grad[i] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)
    return grad
