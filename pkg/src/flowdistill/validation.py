"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np

from .core import DataError, ShapeError
from .scene import RenderedScene


def check_map(x, name: str = "map", shape: tuple[int, int] | None = None) -> np.ndarray:
    """A finite ``(H, W)`` float64 array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (H, W), got shape {x.shape}")
    if shape is not None and x.shape != tuple(shape):
        raise ShapeError(f"{name} has shape {x.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains NaN or Inf")
    return x


def check_image(x, name: str = "image") -> np.ndarray:
    """A finite ``(H, W, C)`` image with ``C in {1, 3}`` and values in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise ShapeError(f"{name} must be (H, W) or (H, W, 1|3), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains NaN or Inf")
    if x.min() < 0 or x.max() > 1:
        raise DataError(f"{name} values must lie in [0, 1]")
    return x


def check_scene(scene) -> RenderedScene:
    if not isinstance(scene, RenderedScene):
        raise TypeError(f"expected a RenderedScene, got {type(scene).__name__}")
    shape = scene.depth_gt.shape
    check_image(scene.target, "target")
    check_image(scene.source, "source")
    check_map(scene.depth_gt, "depth_gt")
    check_map(scene.prior_flow, "prior_flow", shape)
    check_map(scene.occlusion, "occlusion", shape)
    if scene.target.shape[:2] != shape or scene.source.shape[:2] != shape:
        raise ShapeError("scene images and depth differ in size")
    return scene
