"""Inverse warping along rectified scanlines and the depth <-> flow maps.

Convention: target = left image, source = right image. A target pixel at
column ``c`` with depth ``D`` is found in the source at ``c - f_x * b / D``,
so the stored (signed) flow is negative.
"""

from __future__ import annotations

from enum import Enum
from typing import NamedTuple

import numpy as np

from .core import (
    FLOW_EPSILON,
    CameraRig,
    DegenerateFlowError,
    DomainError,
    ShapeError,
    as_image,
)


class PaddingMode(str, Enum):
    BORDER = "border"
    ZEROS = "zeros"


class WarpResult(NamedTuple):
    image: np.ndarray
    in_bounds: np.ndarray


def _check_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth must be (H, W), got {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise DomainError("depth values must be finite and > 0")
    return depth


def flow_from_depth(depth: np.ndarray, rig: CameraRig) -> np.ndarray:
    depth = _check_depth(depth)
    return -(rig.fb / depth)


def depth_from_flow(flow: np.ndarray, rig: CameraRig) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    mag = np.abs(flow)
    if not np.all(mag > FLOW_EPSILON):
        raise DegenerateFlowError(
            f"{int(np.count_nonzero(~(mag > FLOW_EPSILON)))} pixel(s) with |flow| <= {FLOW_EPSILON}"
        )
    return rig.fb / mag


def _sample_columns(depth: np.ndarray, rig: CameraRig) -> np.ndarray:
    width = depth.shape[1]
    return np.arange(width, dtype=np.float64)[None, :] + flow_from_depth(depth, rig)


def _linear_taps(x: np.ndarray, width: int):
    """Left tap index and fractional weight for clamped coordinates ``x``.

    The cell is ``floor(x)`` except on the last column, which uses the cell
    to its left so the slope stays one-sided.
    """
    xc = np.clip(x, 0.0, width - 1.0)
    if width == 1:
        return np.zeros(x.shape, dtype=np.intp), np.zeros_like(xc)
    x0 = np.minimum(np.floor(xc), width - 2).astype(np.intp)
    return x0, xc - x0


def _check_pair(source: np.ndarray, depth: np.ndarray):
    source = as_image(source)
    depth = _check_depth(depth)
    if source.shape[:2] != depth.shape:
        raise ShapeError(f"source {source.shape[:2]} and depth {depth.shape} differ in size")
    return source, depth


def inverse_warp(
    source: np.ndarray,
    depth: np.ndarray,
    rig: CameraRig,
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> WarpResult:
    """Reconstruct the target view by bilinearly sampling ``source``.

    ``in_bounds`` is 1 where the continuous sample column lies in
    ``[0, W - 1]``. Border padding clamps the coordinate; zeros padding
    returns 0 for every out-of-bounds sample.
    """
    padding = PaddingMode(padding)
    source, depth = _check_pair(source, depth)
    height, width = depth.shape
    x = _sample_columns(depth, rig)
    in_bounds = (x >= 0.0) & (x <= width - 1.0)
    x0, frac = _linear_taps(x, width)
    rows = np.arange(height)[:, None]
    left = source[rows, x0]
    right = source[rows, np.minimum(x0 + 1, width - 1)]
    image = left + frac[..., None] * (right - left)
    if padding is PaddingMode.ZEROS:
        image = np.where(in_bounds[..., None], image, 0.0)
    return WarpResult(image, in_bounds.astype(np.float64))


def warp_gradient_depth(
    source: np.ndarray,
    depth: np.ndarray,
    rig: CameraRig,
    padding: PaddingMode | str = PaddingMode.BORDER,
) -> np.ndarray:
    """Per-pixel, per-channel derivative of the warped image w.r.t. that pixel's depth.

    Returns an ``(H, W, C)`` array. Out-of-bounds samples have zero
    derivative under both paddings (clamped or constant).
    """
    padding = PaddingMode(padding)
    source, depth = _check_pair(source, depth)
    height, width = depth.shape
    x = _sample_columns(depth, rig)
    in_bounds = (x >= 0.0) & (x <= width - 1.0)
    if width == 1:
        return np.zeros_like(source)
    x0, _ = _linear_taps(x, width)
    rows = np.arange(height)[:, None]
    slope = source[rows, x0 + 1] - source[rows, x0]
    dx_ddepth = rig.fb / depth**2
    return np.where(in_bounds[..., None], slope * dx_ddepth[..., None], 0.0)
