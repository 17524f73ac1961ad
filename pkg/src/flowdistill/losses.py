"""Photometric and flow-distillation losses, masks and the depth activation.

Every loss here returns a per-pixel ``(H, W)`` map; reduction to a scalar
goes through :func:`final_loss`. The ``*_grad`` helpers return the adjoint
of a weighted sum of a per-pixel loss, which is what the optimizer chains
through the warp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    FLOW_EPSILON,
    CameraRig,
    DomainError,
    ShapeError,
    as_image,
    reduce_masked_mean,
)
from .warping import PaddingMode, depth_from_flow, inverse_warp, warp_gradient_depth


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.85
    ssim_c1: float = 0.01**2
    ssim_c2: float = 0.03**2
    ssim_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise DomainError("SSIM constants must be > 0")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise DomainError(f"ssim_window must be a positive odd integer, got {self.ssim_window}")


@dataclass(frozen=True)
class MaskConfig:
    delta: float = 80.0

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be > 0, got {self.delta}")


@dataclass(frozen=True)
class DepthActivation:
    """Maps a unit-interval output to depth via ``1 / (a * sigma + b)``."""

    min_depth: float = 0.1
    max_depth: float = 80.0
    a_coef: float = field(init=False)
    b_coef: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.min_depth < self.max_depth:
            raise DomainError("need 0 < min_depth < max_depth")
        object.__setattr__(self, "a_coef", 1.0 / self.min_depth - 1.0 / self.max_depth)
        object.__setattr__(self, "b_coef", 1.0 / self.max_depth)

    def sigma_for(self, depth):
        """Inverse of :func:`sigma_to_depth` (depth clipped to the valid range)."""
        depth = np.clip(np.asarray(depth, dtype=np.float64), self.min_depth, self.max_depth)
        return np.clip((1.0 / depth - self.b_coef) / self.a_coef, 0.0, 1.0)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


# --- box filter with replicate padding, and its adjoint ----------------------

def _box(x: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = x.shape[:2]
    p = x[np.clip(np.arange(-r, h + r), 0, h - 1)][:, np.clip(np.arange(-r, w + r), 0, w - 1)]
    out = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            out += p[i:i + h, j:j + w]
    return out / (k * k)


def _box_adjoint(g: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = g.shape[:2]
    gp = np.zeros((h + 2 * r, w + 2 * r) + g.shape[2:])
    for i in range(k):
        for j in range(k):
            gp[i:i + h, j:j + w] += g
    gp /= k * k
    if r:
        # fold the replicated border back onto the edge rows, then columns
        gp[r] += gp[:r].sum(axis=0)
        gp[r + h - 1] += gp[r + h:].sum(axis=0)
        gp = gp[r:r + h]
        gp[:, r] += gp[:, :r].sum(axis=1)
        gp[:, r + w - 1] += gp[:, r + w:].sum(axis=1)
        gp = gp[:, r:r + w]
    return gp


def _ssim_terms(a: np.ndarray, b: np.ndarray, cfg: LossConfig):
    k = cfg.ssim_window
    mu_a, mu_b = _box(a, k), _box(b, k)
    var_a = _box(a * a, k) - mu_a**2
    var_b = _box(b * b, k) - mu_b**2
    cov = _box(a * b, k) - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + cfg.ssim_c1
    a2 = 2 * cov + cfg.ssim_c2
    b1 = mu_a**2 + mu_b**2 + cfg.ssim_c1
    b2 = var_a + var_b + cfg.ssim_c2
    s = (a1 * a2) / (b1 * b2)
    return s, (mu_a, mu_b, a1, a2, b1, b2)


def _check_images(a, b):
    a, b = as_image(a), as_image(b)
    _same_shape(a, b)
    return a, b


def ssim(a: np.ndarray, b: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Channel-averaged SSIM map over a box window, full resolution."""
    a, b = _check_images(a, b)
    s, _ = _ssim_terms(a, b, cfg)
    return np.clip(s, -1.0, 1.0).mean(axis=2)


def photometric_error(target: np.ndarray, candidate: np.ndarray, cfg: LossConfig = LossConfig()) -> np.ndarray:
    target, candidate = _check_images(target, candidate)
    l1 = np.abs(target - candidate).mean(axis=2)
    return cfg.alpha / 2 * (1.0 - ssim(target, candidate, cfg)) + (1.0 - cfg.alpha) * l1


def photometric_error_grad(
    target: np.ndarray, candidate: np.ndarray, weights: np.ndarray, cfg: LossConfig = LossConfig()
) -> np.ndarray:
    """Gradient of ``sum(weights * pe(target, candidate))`` w.r.t. ``candidate``."""
    a, b = _check_images(target, candidate)
    weights = np.asarray(weights, dtype=np.float64)
    channels = b.shape[2]
    k = cfg.ssim_window
    s, (mu_a, mu_b, a1, a2, b1, b2) = _ssim_terms(a, b, cfg)
    # upstream on each channel's raw SSIM; the clamp is flat outside [-1, 1]
    up = -(cfg.alpha / 2) * weights[..., None] / channels * ((s >= -1.0) & (s <= 1.0))
    d_mu_b = up * s * (2 * mu_a / a1 - 2 * mu_b / b1 - 2 * mu_a / a2 + 2 * mu_b / b2)
    d_ebb = up * (-s / b2)
    d_eab = up * (2 * s / a2)
    grad = _box_adjoint(d_mu_b, k) + 2 * b * _box_adjoint(d_ebb, k) + a * _box_adjoint(d_eab, k)
    grad += (1.0 - cfg.alpha) / channels * weights[..., None] * np.sign(b - a)
    return grad


# --- losses -----------------------------------------------------------------

def photometric_loss(
    target: np.ndarray,
    source: np.ndarray,
    depth: np.ndarray,
    rig: CameraRig,
    cfg: LossConfig = LossConfig(),
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    warped = inverse_warp(source, depth, rig, padding).image
    return photometric_error(target, warped, cfg)


def auto_mask(
    target: np.ndarray,
    source: np.ndarray,
    depth: np.ndarray,
    rig: CameraRig,
    cfg: LossConfig = LossConfig(),
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    """1 where the warped reconstruction strictly beats the unwarped source."""
    warped_pe = photometric_loss(target, source, depth, rig, cfg, padding)
    raw_pe = photometric_error(target, source, cfg)
    return (warped_pe < raw_pe).astype(np.float64)


def depth_regression_loss(depth: np.ndarray, pseudo: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    pseudo = np.asarray(pseudo, dtype=np.float64)
    _same_shape(depth, pseudo)
    return np.log(np.abs(depth - pseudo) + 1.0)


def depth_regression_grad(depth: np.ndarray, pseudo: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(weights * L_dr)`` w.r.t. depth; subgradient 0 at the kink."""
    diff = np.asarray(depth, dtype=np.float64) - np.asarray(pseudo, dtype=np.float64)
    return weights * np.sign(diff) / (np.abs(diff) + 1.0)


def flow_guided_photometric_loss(
    source: np.ndarray,
    depth: np.ndarray,
    pseudo: np.ndarray,
    rig: CameraRig,
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    warped = inverse_warp(source, depth, rig, padding).image
    guided = inverse_warp(source, pseudo, rig, padding).image
    return np.abs(warped - guided).mean(axis=2)


def flow_guided_photometric_grad(
    source: np.ndarray,
    depth: np.ndarray,
    pseudo: np.ndarray,
    weights: np.ndarray,
    rig: CameraRig,
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    warped = inverse_warp(source, depth, rig, padding).image
    guided = inverse_warp(source, pseudo, rig, padding).image
    dwarp = warp_gradient_depth(source, depth, rig, padding)
    per_channel = np.sign(warped - guided) * dwarp
    return weights * per_channel.mean(axis=2)


def flow_distillation_loss(
    source: np.ndarray,
    depth: np.ndarray,
    prior_flow: np.ndarray,
    rig: CameraRig,
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    """Depth regression plus flow-guided photometric loss against the prior flow.

    Every pixel is evaluated; callers mask out-of-range flow beforehand.
    """
    pseudo = depth_from_flow(prior_flow, rig)
    return depth_regression_loss(depth, pseudo) + flow_guided_photometric_loss(
        source, depth, pseudo, rig, padding
    )


def prior_flow_mask(prior_flow: np.ndarray, rig: CameraRig, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """1 where the prior flow is long enough to imply a depth below ``delta``."""
    mag = np.abs(np.asarray(prior_flow, dtype=np.float64))
    return (mag > rig.fb / cfg.delta).astype(np.float64)


def sigma_to_depth(sigma: np.ndarray, act: DepthActivation = DepthActivation()) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.all((sigma >= 0.0) & (sigma <= 1.0)):
        raise DomainError("sigma must lie in [0, 1]")
    return 1.0 / (act.a_coef * sigma + act.b_coef)


def sigma_to_depth_grad(sigma: np.ndarray, act: DepthActivation = DepthActivation()) -> np.ndarray:
    depth = sigma_to_depth(sigma, act)
    return -act.a_coef * depth**2


def final_loss(per_pixel_loss: np.ndarray | Sequence[np.ndarray], mask: np.ndarray) -> float:
    """Masked mean per scale, then the unweighted mean across scales.

    ``per_pixel_loss`` is one ``(H, W)`` map or a sequence of them, each
    already at full resolution; the same mask applies to every scale.
    """
    if isinstance(per_pixel_loss, np.ndarray) and per_pixel_loss.ndim == 2:
        scales = [per_pixel_loss]
    else:
        scales = list(per_pixel_loss)
    if not scales:
        raise ShapeError("need at least one scale")
    return float(np.mean([reduce_masked_mean(loss, mask) for loss in scales]))


__all__ = [
    "FLOW_EPSILON",
    "LossConfig",
    "MaskConfig",
    "DepthActivation",
    "ssim",
    "photometric_error",
    "photometric_error_grad",
    "photometric_loss",
    "auto_mask",
    "depth_regression_loss",
    "depth_regression_grad",
    "flow_guided_photometric_loss",
    "flow_guided_photometric_grad",
    "flow_distillation_loss",
    "prior_flow_mask",
    "sigma_to_depth",
    "sigma_to_depth_grad",
    "final_loss",
]
