"""Image metrics and the noisy-capture evaluation protocol.

Test views are chosen by sharpness (maximum luma gradient magnitude) under a
spatial-diversity constraint: a candidate conflicts with an already-selected
view when it is within both the distance and the angle threshold (the
conjunctive reading of "within 0.5m and 60 degrees"); a disjunctive mode is
available behind a flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .camera import PinholeCamera

REC601 = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 99.0


def luma(img: np.ndarray) -> np.ndarray:
    return img @ REC601


def blurriness(img: np.ndarray) -> float:
    """Maximum central-difference gradient magnitude of the luma channel.

    Higher means sharper; a constant image scores 0. Needs at least a 3x3
    interior to produce a nonzero stencil.
    """
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError("image must be at least 2x2")
    lum = luma(img)
    if lum.shape[0] < 3 or lum.shape[1] < 3:
        return 0.0
    gx = 0.5 * (lum[1:-1, 2:] - lum[1:-1, :-2])
    gy = 0.5 * (lum[2:, 1:-1] - lum[:-2, 1:-1])
    return float(np.sqrt(gx * gx + gy * gy).max())


@dataclass
class ViewRecord:
    id: str
    camera: PinholeCamera
    score: float
    selected: bool = field(default=False)


def _conflicts(a: PinholeCamera, b: PinholeCamera, min_dist: float, min_angle_deg: float, mode: str) -> bool:
    dist = float(np.linalg.norm(a.center() - b.center()))
    cosang = float(np.clip(np.dot(a.optical_axis(), b.optical_axis()), -1.0, 1.0))
    angle = float(np.degrees(np.arccos(cosang)))
    if mode == "conjunctive":
        return dist < min_dist and angle < min_angle_deg
    if mode == "disjunctive":
        return dist < min_dist or angle < min_angle_deg
    raise ValueError(f"unknown conflict mode {mode!r}")


def select_test_views(
    views: list[ViewRecord],
    k: int = 10,
    min_dist: float = 0.5,
    min_angle_deg: float = 60.0,
    mode: str = "conjunctive",
) -> list[ViewRecord]:
    """Greedy sharpest-first selection under the pairwise diversity
    constraint. Ties on score break by ascending id; returns at most k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(views, key=lambda v: (-v.score, v.id))
    chosen: list[ViewRecord] = []
    for cand in ranked:
        if len(chosen) >= k:
            break
        if any(_conflicts(cand.camera, s.camera, min_dist, min_angle_deg, mode) for s in chosen):
            continue
        cand.selected = True
        chosen.append(cand)
    return chosen


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _gaussian_window() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _filter_valid(chan: np.ndarray) -> np.ndarray:
    """Gaussian-window local means at all fully-interior window positions."""
    win = sliding_window_view(chan, (SSIM_WINDOW, SSIM_WINDOW))
    return np.tensordot(win, _WINDOW, axes=([2, 3], [0, 1]))


def _ssim_channel(a: np.ndarray, b: np.ndarray, want_grad: bool):
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    mu_a = _filter_valid(a)
    mu_b = _filter_valid(b)
    var_a = _filter_valid(a * a) - mu_a * mu_a
    var_b = _filter_valid(b * b) - mu_b * mu_b
    cov = _filter_valid(a * b) - mu_a * mu_b
    a1 = 2.0 * mu_a * mu_b + c1
    a2 = 2.0 * cov + c2
    b1 = mu_a * mu_a + mu_b * mu_b + c1
    b2 = var_a + var_b + c2
    smap = (a1 * a2) / (b1 * b2)
    if not want_grad:
        return float(smap.mean()), None

    n = smap.size
    t_mu = (a2 / b2) * (2.0 * mu_b * b1 - a1 * 2.0 * mu_a) / (b1 * b1)
    t_var = -smap / b2
    t_cov = (a1 / b1) * (2.0 / b2)
    # dS/da_q = w (*) [t_mu + t_var * 2 (a_q - mu_a) + t_cov * (b_q - mu_b)]
    grad = _scatter_back(t_mu, a.shape)
    grad += 2.0 * a * _scatter_back(t_var, a.shape) - 2.0 * _scatter_back(t_var * mu_a, a.shape)
    grad += b * _scatter_back(t_cov, a.shape) - _scatter_back(t_cov * mu_b, a.shape)
    return float(smap.mean()), grad / n


def _scatter_back(valid_map: np.ndarray, out_shape) -> np.ndarray:
    """Transpose of _filter_valid as a linear map: pixel q accumulates
    window_weight[q - p] * value[p] over valid positions p containing q."""
    pad = SSIM_WINDOW - 1
    padded = np.zeros((valid_map.shape[0] + 2 * pad, valid_map.shape[1] + 2 * pad))
    padded[pad:-pad, pad:-pad] = valid_map
    win = sliding_window_view(padded, (SSIM_WINDOW, SSIM_WINDOW))
    # correlate with the flipped kernel; the Gaussian window is symmetric
    out = np.tensordot(win, _WINDOW, axes=([2, 3], [0, 1]))
    return out[: out_shape[0], : out_shape[1]]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over channels and fully-interior 11x11 window positions."""
    value, _ = ssim_with_gradient(a, b, want_grad=False)
    return value


def ssim_with_gradient(a: np.ndarray, b: np.ndarray, want_grad: bool = True):
    """(ssim, d ssim / d a); the gradient is exact for the implemented map."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    vals = []
    grads = np.zeros_like(a) if want_grad else None
    for c in range(a.shape[2]):
        v, g = _ssim_channel(a[:, :, c], b[:, :, c], want_grad)
        vals.append(v)
        if want_grad:
            grads[:, :, c] = g
    value = float(np.mean(vals))
    if want_grad:
        return value, grads / a.shape[2]
    return value, None
