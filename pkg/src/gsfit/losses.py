"""Photometric fitting loss: weighted L1 + structural dissimilarity."""

from __future__ import annotations

import numpy as np

from .evaluation import ssim_with_gradient


def fit_loss(rendered: np.ndarray, target: np.ndarray, lambda_l1: float, lambda_dssim: float):
    """loss = lambda_l1 * mean|r - t| + lambda_dssim * (1 - SSIM(r, t)).

    Returns (loss, l1, dssim, dloss/drendered). The L1 subgradient is
    sign(r - t), zero at exact equality.
    """
    diff = rendered - target
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / diff.size
    ssim_val, ssim_grad = ssim_with_gradient(rendered, target)
    dssim = 1.0 - ssim_val
    grad = lambda_l1 * d_l1 - lambda_dssim * ssim_grad
    return lambda_l1 * l1 + lambda_dssim * dssim, l1, dssim, grad
