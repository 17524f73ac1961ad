"""Synthetic rectified-stereo scenes with exact ground truth.

Each surface carries a texture that is an analytic function of the row and
of the target-view column where the surface point projects, so the target
and source views sample one continuous function and the source is rendered
exactly, without resampling. The only approximation left in a warp is the
bilinear interpolation itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from . import config as _config
from .core import (
    CameraRig,
    DataError,
    FlowDistillError,
    FormatError,
    read_pfm,
    write_pfm,
    write_pgm,
)
from .warping import flow_from_depth

MIN_DEPTH = 0.1
MAX_DEPTH = 200.0
#: noisy prior flow is redrawn until its magnitude exceeds this (px)
MIN_NOISY_FLOW = 1e-3

SCENE_FILES = ("target.pfm", "source.pfm", "depth_gt.pfm", "prior_flow.pfm", "occlusion.pfm")


class SpecError(FlowDistillError):
    pass


# --- depth models -------------------------------------------------------------

@dataclass(frozen=True)
class ConstantPlane:
    depth: float


@dataclass(frozen=True)
class SlantedPlane:
    """Fronto-parallel per row; depth grows by ``gradient`` metres per row."""

    depth: float
    gradient: float


@dataclass(frozen=True)
class Box:
    row0: int
    row1: int
    col0: int
    col1: int
    depth: float


@dataclass(frozen=True)
class LayeredBoxes:
    background: float
    boxes: tuple[Box, ...] = ()


DepthModel = Union[ConstantPlane, SlantedPlane, LayeredBoxes]


# --- texture models -----------------------------------------------------------

@dataclass(frozen=True)
class SmoothRamp:
    pass


@dataclass(frozen=True)
class BandlimitedNoise:
    seed: int = 0
    max_freq: float = 0.15


@dataclass(frozen=True)
class PeriodicStripes:
    period: float = 8.0
    phase: float = 0.0
    amplitude: float = 0.35


TextureModel = Union[SmoothRamp, BandlimitedNoise, PeriodicStripes]


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 192
    rig: CameraRig = field(default_factory=lambda: CameraRig(100.0, 0.5))
    depth_model: DepthModel = field(default_factory=lambda: ConstantPlane(10.0))
    texture_model: TextureModel = field(default_factory=BandlimitedNoise)
    illumination_gain: float = 1.0
    illumination_bias: float = 0.0
    flow_noise_sigma: float = 0.0

    def validate(self) -> None:
        if self.height < 1 or self.width < 2:
            raise SpecError(f"scene must be at least 1x2, got {self.height}x{self.width}")
        if not 0.5 <= self.illumination_gain <= 1.5:
            raise SpecError(f"illumination_gain must lie in [0.5, 1.5], got {self.illumination_gain}")
        if not np.isfinite(self.illumination_bias):
            raise SpecError("illumination_bias must be finite")
        if not self.flow_noise_sigma >= 0:
            raise SpecError(f"flow_noise_sigma must be >= 0, got {self.flow_noise_sigma}")
        tex = self.texture_model
        if isinstance(tex, PeriodicStripes) and tex.period < 2:
            raise SpecError(f"stripe period must be >= 2 px, got {tex.period}")
        if isinstance(tex, BandlimitedNoise) and not 0 < tex.max_freq <= 0.5:
            raise SpecError(f"max_freq must lie in (0, 0.5] cycles/px, got {tex.max_freq}")
        for layer in _layers(self):
            if not np.all((layer.depth >= MIN_DEPTH) & (layer.depth <= MAX_DEPTH)):
                raise SpecError(f"depths must lie in [{MIN_DEPTH}, {MAX_DEPTH}] m")
        model = self.depth_model
        if isinstance(model, LayeredBoxes):
            for box in model.boxes:
                if not (0 <= box.row0 < box.row1 <= self.height and 0 <= box.col0 < box.col1 <= self.width):
                    raise SpecError(f"box {box} lies outside the {self.height}x{self.width} frame")
                if box.depth >= model.background:
                    raise SpecError(f"box {box} is not in front of the background")


# --- layers -------------------------------------------------------------------

@dataclass
class _Layer:
    index: int
    depth: np.ndarray  # per row, shape (H,)
    rows: np.ndarray  # bool (H,)
    lo: float  # continuous target-column extent [lo, hi)
    hi: float


def _layers(spec: SceneSpec) -> list[_Layer]:
    h = spec.height
    all_rows = np.ones(h, dtype=bool)
    model = spec.depth_model
    if isinstance(model, ConstantPlane):
        return [_Layer(0, np.full(h, float(model.depth)), all_rows, -np.inf, np.inf)]
    if isinstance(model, SlantedPlane):
        depth = model.depth + model.gradient * np.arange(h, dtype=np.float64)
        return [_Layer(0, depth, all_rows, -np.inf, np.inf)]
    if isinstance(model, LayeredBoxes):
        layers = [_Layer(0, np.full(h, float(model.background)), all_rows, -np.inf, np.inf)]
        for i, box in enumerate(model.boxes, 1):
            rows = np.zeros(h, dtype=bool)
            rows[box.row0:box.row1] = True
            # pixel centres col0..col1-1 own the half-open strip [col - 0.5, col + 0.5)
            layers.append(_Layer(i, np.full(h, float(box.depth)), rows, box.col0 - 0.5, box.col1 - 0.5))
        return layers
    raise SpecError(f"unknown depth model {model!r}")


def _nearest_layer(layers: list[_Layer], u_of_depth, rows: np.ndarray, width: int):
    """Depth, texture coordinate and layer index of the nearest surface per pixel.

    ``u_of_depth(z)`` gives the target-view column hit by each pixel's ray at
    depth ``z`` (identity for the target view, shifted for the source view).
    """
    h = rows.shape[0]
    best_z = np.full((h, width), np.inf)
    best_u = np.zeros((h, width))
    best_i = np.zeros((h, width), dtype=np.intp)
    for layer in layers:
        z = np.broadcast_to(layer.depth[:, None], (h, width))
        u = u_of_depth(z)
        covers = layer.rows[:, None] & (u >= layer.lo) & (u < layer.hi) & (z < best_z)
        best_z = np.where(covers, z, best_z)
        best_u = np.where(covers, u, best_u)
        best_i = np.where(covers, layer.index, best_i)
    return best_z, best_u, best_i


# --- textures -----------------------------------------------------------------

_LAYER_SHIFT = 37.3  # px; gives each layer its own appearance


def _noise_components(tex: BandlimitedNoise):
    rng = np.random.default_rng(tex.seed)
    n = 6
    fx = rng.uniform(0.1 * tex.max_freq, tex.max_freq, size=(3, n))
    fy = rng.uniform(-tex.max_freq, tex.max_freq, size=(3, n))
    phase = rng.uniform(0.0, 2 * np.pi, size=(3, n))
    amp = rng.uniform(0.5, 1.0, size=(3, n))
    amp *= 0.4 / amp.sum(axis=1, keepdims=True)
    return fx, fy, phase, amp


def texture(spec: SceneSpec, rows: np.ndarray, u: np.ndarray, layer: np.ndarray) -> np.ndarray:
    """Evaluate the scene texture; returns ``u.shape + (3,)`` values in [0, 1]."""
    tex = spec.texture_model
    u = u + _LAYER_SHIFT * layer
    rows = np.broadcast_to(rows, u.shape).astype(np.float64)
    if isinstance(tex, SmoothRamp):
        t = (u / max(spec.width - 1, 1))[..., None]
        out = 0.25 + np.array([0.5, -0.4, 0.3]) * t + np.array([0.0, 0.6, 0.1])
    elif isinstance(tex, PeriodicStripes):
        offsets = np.array([0.0, 0.7, 1.9])
        arg = 2 * np.pi * u / tex.period + tex.phase
        out = 0.5 + tex.amplitude * np.sin(arg[..., None] + offsets)
    elif isinstance(tex, BandlimitedNoise):
        fx, fy, phase, amp = _noise_components(tex)
        arg = 2 * np.pi * (u[..., None, None] * fx + rows[..., None, None] * fy) + phase
        out = 0.5 + (amp * np.sin(arg)).sum(axis=-1)
    else:
        raise SpecError(f"unknown texture model {tex!r}")
    return np.clip(out, 0.0, 1.0)


def interpolation_bound(spec: SceneSpec) -> float:
    """Upper bound on the bilinear reconstruction error of the source view.

    Linear interpolation between unit-spaced samples of a C2 function errs by
    at most ``max|f''| / 8``; the texture's second column-derivative is
    bounded analytically. Valid away from depth edges and clamping.
    """
    tex = spec.texture_model
    if isinstance(tex, SmoothRamp):
        curvature = 0.0
    elif isinstance(tex, PeriodicStripes):
        curvature = tex.amplitude * (2 * np.pi / tex.period) ** 2
    else:
        fx, _, _, amp = _noise_components(tex)
        curvature = float((amp * (2 * np.pi * fx) ** 2).sum(axis=1).max())
    return spec.illumination_gain * curvature / 8.0


# --- rendering ----------------------------------------------------------------

@dataclass
class RenderedScene:
    spec: SceneSpec
    target: np.ndarray
    source: np.ndarray
    depth_gt: np.ndarray
    prior_flow: np.ndarray
    occlusion: np.ndarray

    @property
    def rig(self) -> CameraRig:
        return self.spec.rig


def _noisy_flow(flow: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return flow.copy()
    noisy = flow + rng.normal(0.0, sigma, size=flow.shape)
    # truncated normal: redraw samples that would lose the sign (or vanish)
    for _ in range(1000):
        bad = noisy > -MIN_NOISY_FLOW
        if not bad.any():
            break
        noisy[bad] = flow[bad] + rng.normal(0.0, sigma, size=int(bad.sum()))
    else:
        noisy = np.minimum(noisy, -MIN_NOISY_FLOW)
    return noisy


def render(spec: SceneSpec, rng_seed: int = 0) -> RenderedScene:
    spec.validate()
    h, w = spec.height, spec.width
    fb = spec.rig.fb
    layers = _layers(spec)
    rows = np.arange(h)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]

    depth_gt, u_t, layer_t = _nearest_layer(layers, lambda z: np.broadcast_to(cols, z.shape), rows, w)
    target = texture(spec, rows, u_t, layer_t)

    # a source-column ray meets a surface at depth z at target column x + fb / z
    _, u_s, layer_s = _nearest_layer(layers, lambda z: cols + fb / z, rows, w)
    source = texture(spec, rows, u_s, layer_s)
    source = np.clip(spec.illumination_gain * source + spec.illumination_bias, 0.0, 1.0)

    occlusion = np.zeros((h, w))
    x_src = cols - fb / depth_gt
    for layer in layers:
        z = layer.depth[:, None]
        u = x_src + fb / z
        hidden = layer.rows[:, None] & (z < depth_gt) & (u >= layer.lo) & (u < layer.hi)
        occlusion[hidden] = 1.0

    rng = np.random.default_rng(rng_seed)
    prior_flow = _noisy_flow(flow_from_depth(depth_gt, spec.rig), spec.flow_noise_sigma, rng)
    return RenderedScene(spec, target, source, depth_gt, prior_flow, occlusion)


def stress_scene() -> tuple[SceneSpec, tuple[int, int]]:
    """Low-contrast periodic stripes behind which lies an out-of-range backdrop.

    The designated pixel sits in a wide near box, so the whole sweep samples
    one smooth, periodic source region; the stripes alias the photometric
    match into several minima, and the gain makes the source brighter than
    the target.
    """
    spec = SceneSpec(
        height=64,
        width=192,
        rig=CameraRig(100.0, 0.5),
        depth_model=LayeredBoxes(
            background=150.0,
            boxes=(
                Box(4, 60, 60, 150, 5.0),
                Box(8, 56, 8, 50, 20.0),
                Box(10, 40, 160, 188, 40.0),
            ),
        ),
        texture_model=PeriodicStripes(period=7.0, phase=0.3, amplitude=0.02),
        illumination_gain=1.1,
        illumination_bias=0.0,
        flow_noise_sigma=0.1,
    )
    return spec, (32, 120)


# --- serialization ------------------------------------------------------------

def spec_to_config(spec: SceneSpec) -> dict[str, object]:
    out: dict[str, object] = {
        "height": spec.height,
        "width": spec.width,
        "focal_x": float(spec.rig.focal_x),
        "baseline": float(spec.rig.baseline),
    }
    model = spec.depth_model
    if isinstance(model, ConstantPlane):
        out.update(depth_model="constant_plane", depth=float(model.depth))
    elif isinstance(model, SlantedPlane):
        out.update(depth_model="slanted_plane", depth=float(model.depth), depth_gradient=float(model.gradient))
    else:
        out.update(
            depth_model="layered_boxes",
            background_depth=float(model.background),
            boxes=";".join(f"{b.row0}:{b.row1}:{b.col0}:{b.col1}:{float(b.depth)!r}" for b in model.boxes),
        )
    tex = spec.texture_model
    if isinstance(tex, SmoothRamp):
        out["texture"] = "smooth_ramp"
    elif isinstance(tex, BandlimitedNoise):
        out.update(texture="bandlimited_noise", texture_seed=tex.seed, max_freq=float(tex.max_freq))
    else:
        out.update(
            texture="periodic_stripes",
            period=float(tex.period),
            phase=float(tex.phase),
            amplitude=float(tex.amplitude),
        )
    out.update(
        illumination_gain=float(spec.illumination_gain),
        illumination_bias=float(spec.illumination_bias),
        flow_noise_sigma=float(spec.flow_noise_sigma),
    )
    return out


_SCENE_KEYS = {
    "height", "width", "focal_x", "baseline", "depth_model", "depth", "depth_gradient",
    "background_depth", "boxes", "texture", "texture_seed", "max_freq", "period", "phase",
    "amplitude", "illumination_gain", "illumination_bias", "flow_noise_sigma",
}


def spec_from_config(cfg: Mapping[str, str]) -> SceneSpec:
    unknown = set(cfg) - _SCENE_KEYS
    if unknown:
        raise SpecError(f"unknown scene keys: {', '.join(sorted(unknown))}")
    f, i = _config.get_float, _config.get_int
    rig = CameraRig(f(cfg, "focal_x", 100.0), f(cfg, "baseline", 0.5))
    kind = cfg.get("depth_model", "constant_plane")
    if kind == "constant_plane":
        model: DepthModel = ConstantPlane(f(cfg, "depth", 10.0))
    elif kind == "slanted_plane":
        model = SlantedPlane(f(cfg, "depth", 10.0), f(cfg, "depth_gradient", 0.0))
    elif kind == "layered_boxes":
        boxes = []
        for item in filter(None, (s.strip() for s in cfg.get("boxes", "").split(";"))):
            parts = item.split(":")
            if len(parts) != 5:
                raise SpecError(f"box must be row0:row1:col0:col1:depth, got {item!r}")
            try:
                boxes.append(Box(*(int(p) for p in parts[:4]), float(parts[4])))
            except ValueError:
                raise SpecError(f"bad box {item!r}") from None
        model = LayeredBoxes(f(cfg, "background_depth", 150.0), tuple(boxes))
    else:
        raise SpecError(f"unknown depth_model {kind!r}")
    tkind = cfg.get("texture", "bandlimited_noise")
    if tkind == "smooth_ramp":
        tex: TextureModel = SmoothRamp()
    elif tkind == "bandlimited_noise":
        tex = BandlimitedNoise(i(cfg, "texture_seed", 0), f(cfg, "max_freq", 0.15))
    elif tkind == "periodic_stripes":
        tex = PeriodicStripes(f(cfg, "period", 8.0), f(cfg, "phase", 0.0), f(cfg, "amplitude", 0.35))
    else:
        raise SpecError(f"unknown texture {tkind!r}")
    spec = SceneSpec(
        height=i(cfg, "height", 64),
        width=i(cfg, "width", 192),
        rig=rig,
        depth_model=model,
        texture_model=tex,
        illumination_gain=f(cfg, "illumination_gain", 1.0),
        illumination_bias=f(cfg, "illumination_bias", 0.0),
        flow_noise_sigma=f(cfg, "flow_noise_sigma", 0.0),
    )
    spec.validate()
    return spec


def save_scene(scene: RenderedScene, directory: str | Path) -> list[Path]:
    """Write the scene files plus ``scene.cfg`` and PGM previews; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = dict(zip(SCENE_FILES, (scene.target, scene.source, scene.depth_gt, scene.prior_flow, scene.occlusion)))
    written = []
    for name, data in arrays.items():
        write_pfm(directory / name, data)
        written.append(directory / name)
    for name in ("target", "source"):
        write_pgm(directory / f"{name}.pgm", getattr(scene, name))
        written.append(directory / f"{name}.pgm")
    _config.write_config(directory / "scene.cfg", spec_to_config(scene.spec))
    written.append(directory / "scene.cfg")
    return written


def load_scene(directory: str | Path) -> RenderedScene:
    """Load a scene directory written by :func:`save_scene` (float32 precision)."""
    directory = Path(directory)
    if not (directory / "scene.cfg").is_file():
        raise FormatError(f"{directory}: missing scene.cfg")
    spec = spec_from_config(_config.read_config(directory / "scene.cfg"))
    data = {}
    for name in SCENE_FILES:
        path = directory / name
        if not path.is_file():
            raise FormatError(f"{directory}: missing {name}")
        data[name] = read_pfm(path)
        if not np.all(np.isfinite(data[name])):
            raise DataError(f"{path}: non-finite values")
    target, source, depth, flow, occ = (data[n] for n in SCENE_FILES)
    for name, arr in (("target", target), ("source", source)):
        if arr.shape != (spec.height, spec.width, 3):
            raise FormatError(f"{name} has shape {arr.shape}, expected ({spec.height}, {spec.width}, 3)")
    for name, arr in (("depth_gt", depth), ("prior_flow", flow), ("occlusion", occ)):
        if arr.shape != (spec.height, spec.width):
            raise FormatError(f"{name} has shape {arr.shape}, expected ({spec.height}, {spec.width})")
    return RenderedScene(spec, target, source, depth, flow, occ)


def load_prior_flow(path: str | Path) -> np.ndarray:
    """Read a one-channel PFM as a flow map, e.g. the output of a stereo network."""
    flow = read_pfm(path)
    if flow.ndim != 2:
        raise FormatError(f"{path}: expected a 1-channel (Pf) PFM")
    if not np.all(np.isfinite(flow)):
        raise DataError(f"{path}: flow contains NaN or Inf")
    return flow


def save_prior_flow(path: str | Path, flow: np.ndarray) -> None:
    write_pfm(path, flow)


__all__ = [
    "SpecError",
    "ConstantPlane",
    "SlantedPlane",
    "Box",
    "LayeredBoxes",
    "SmoothRamp",
    "BandlimitedNoise",
    "PeriodicStripes",
    "SceneSpec",
    "RenderedScene",
    "render",
    "stress_scene",
    "texture",
    "interpolation_bound",
    "spec_to_config",
    "spec_from_config",
    "save_scene",
    "load_scene",
    "load_prior_flow",
    "save_prior_flow",
]
