"""Raster containers, the stereo rig, errors and raster file I/O.

Rasters are plain float64 numpy arrays. Images are ``(H, W, C)`` with
``C in {1, 3}``; single-channel maps (depth, flow, masks, per-pixel losses)
are ``(H, W)``. Flow maps store only the signed horizontal displacement.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


class FlowDistillError(ValueError):
    """Base class for every domain error raised by this package."""


class DimensionError(FlowDistillError):
    pass


class ShapeError(FlowDistillError):
    pass


class DomainError(FlowDistillError):
    pass


class EmptyMaskError(FlowDistillError):
    """The mask removed every pixel, so a masked mean is undefined."""


class DegenerateFlowError(FlowDistillError):
    """A flow magnitude too small to convert to depth (infinite depth)."""


class FormatError(FlowDistillError):
    pass


class DataError(FlowDistillError):
    pass


#: smallest flow magnitude (px) accepted by the flow -> depth conversion
FLOW_EPSILON = 1e-6


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo pair: target is the left camera, source the right."""

    focal_x: float
    baseline: float

    def __post_init__(self):
        if not (np.isfinite(self.focal_x) and self.focal_x > 0):
            raise DomainError(f"focal_x must be > 0, got {self.focal_x}")
        if not (np.isfinite(self.baseline) and self.baseline > 0):
            raise DomainError(f"baseline must be > 0, got {self.baseline}")

    @property
    def fb(self) -> float:
        return self.focal_x * self.baseline


def raster_new(height: int, width: int, channels: int = 1, fill: float = 0.0) -> np.ndarray:
    if height < 1 or width < 1:
        raise DimensionError(f"raster must be at least 1x1, got {height}x{width}")
    if channels not in (1, 3):
        raise DimensionError(f"channels must be 1 or 3, got {channels}")
    return np.full((height, width, channels), float(fill), dtype=np.float64)


def raster_map2(a: np.ndarray, b: np.ndarray, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply the elementwise binary function ``f`` to two equal-shaped rasters."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return np.asarray(f(a, b), dtype=np.float64)


def reduce_masked_mean(values: np.ndarray, mask: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if values.shape != mask.shape:
        raise ShapeError(f"shape mismatch: {values.shape} vs {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise DomainError("mask values must be 0 or 1")
    keep = mask == 1
    count = int(np.count_nonzero(keep))
    if count == 0:
        raise EmptyMaskError("mask reserves no pixels")
    # selecting first keeps masked-out entries (even NaN) out of the sum
    return float(values[keep].sum() / count)


def as_image(x: np.ndarray) -> np.ndarray:
    """View a ``(H, W)`` map as a one-channel ``(H, W, 1)`` image."""
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


# --- PFM / PGM -------------------------------------------------------------

_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", re.DOTALL)


def write_pfm(path: str | Path, raster: np.ndarray) -> None:
    """Write a 1- or 3-channel raster as little-endian PFM (bottom row first)."""
    data = np.asarray(raster, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise DimensionError(f"PFM holds 1 or 3 channels, got shape {data.shape}")
    height, width = data.shape[:2]
    header = b"%s\n%d %d\n-1.0\n" % (tag, width, height)
    body = np.ascontiguousarray(data[::-1]).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file into float64; ``Pf`` gives ``(H, W)``, ``PF`` gives ``(H, W, 3)``."""
    blob = Path(path).read_bytes()
    m = _PFM_HEADER.match(blob)
    if m is None:
        raise FormatError(f"{path}: not a PFM file")
    tag, width, height = m.group(1), int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError:
        raise FormatError(f"{path}: bad PFM scale {m.group(4)!r}") from None
    if width < 1 or height < 1 or scale == 0:
        raise FormatError(f"{path}: bad PFM header")
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    body = blob[m.end():]
    if len(body) < 4 * count:
        raise FormatError(f"{path}: truncated PFM ({len(body)} of {4 * count} bytes)")
    data = np.frombuffer(body, dtype=dtype, count=count).astype(np.float64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape)[::-1].copy()


def write_pgm(path: str | Path, raster: np.ndarray) -> None:
    """8-bit binary PGM preview; 3-channel input is averaged to gray."""
    data = np.asarray(raster, dtype=np.float64)
    if data.ndim == 3:
        data = data.mean(axis=2)
    data = np.clip(data, 0.0, 1.0)
    pixels = np.floor(data * 255.0 + 0.5).astype(np.uint8)
    height, width = pixels.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (width, height) + pixels.tobytes())
