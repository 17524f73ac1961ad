"""Per-pixel depth optimization, evaluation metrics, landscape sweeps, gradient checks."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .core import EmptyMaskError, FlowDistillError, ShapeError, reduce_masked_mean
from .losses import (
    DepthActivation,
    LossConfig,
    MaskConfig,
    depth_regression_grad,
    depth_regression_loss,
    flow_distillation_loss,
    flow_guided_photometric_loss,
    photometric_error,
    photometric_error_grad,
    prior_flow_mask,
    sigma_to_depth,
    sigma_to_depth_grad,
)
from .scene import RenderedScene
from .warping import PaddingMode, depth_from_flow, inverse_warp, warp_gradient_depth


class DivergenceError(FlowDistillError):
    pass


class EmptyEvalError(FlowDistillError):
    pass


class LengthError(FlowDistillError):
    pass


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 400
    #: multiply lr by 0.1 from this step on; None keeps it constant
    decay_step: int | None = 300

    def __post_init__(self):
        if not self.lr >= 0:
            raise FlowDistillError(f"lr must be >= 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise FlowDistillError("betas must lie in [0, 1)")
        if self.steps < 0:
            raise FlowDistillError("steps must be >= 0")


@dataclass(frozen=True)
class Settings:
    """Everything besides the scene and the loss kind that shapes the objective."""

    loss: LossConfig = field(default_factory=LossConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    activation: DepthActivation = field(default_factory=DepthActivation)
    padding: PaddingMode = PaddingMode.BORDER


@dataclass(frozen=True)
class LossKind:
    """A loss combination such as ``Lfd+Mf``: photometric and/or distillation terms, one optional mask."""

    photometric: bool = False
    regression: bool = False
    guided: bool = False
    mask: str | None = None

    @classmethod
    def parse(cls, text: "str | LossKind") -> "LossKind":
        if isinstance(text, LossKind):
            return text
        parts = [p.strip() for p in str(text).split("+") if p.strip()]
        flags = dict(photometric=False, regression=False, guided=False)
        mask = None
        for part in parts:
            key = part.lower()
            if key == "lp":
                flags["photometric"] = True
            elif key == "ldr":
                flags["regression"] = True
            elif key == "lfp":
                flags["guided"] = True
            elif key == "lfd":
                flags["regression"] = flags["guided"] = True
            elif key in ("mp", "mf"):
                if mask is not None:
                    raise FlowDistillError(f"{text!r}: at most one mask")
                mask = "Mp" if key == "mp" else "Mf"
            else:
                raise FlowDistillError(f"{text!r}: unknown term {part!r}")
        if not any(flags.values()):
            raise FlowDistillError(f"{text!r}: no loss term")
        return cls(mask=mask, **flags)

    @property
    def needs_prior(self) -> bool:
        return self.regression or self.guided

    def __str__(self) -> str:
        terms = []
        if self.photometric:
            terms.append("Lp")
        if self.regression and self.guided:
            terms.append("Lfd")
        elif self.regression:
            terms.append("Ldr")
        elif self.guided:
            terms.append("Lfp")
        if self.mask:
            terms.append(self.mask)
        return "+".join(terms)


ABLATION_KINDS = ("Lp", "Lp+Mp", "Lp+Mf", "Lfd", "Lfd+Mp", "Lfd+Mf")
COMBINATION_KINDS = ("Ldr", "Lfp", "Ldr+Lfp")


# --- objective ----------------------------------------------------------------

class Objective:
    """Masked mean of the selected per-pixel losses, as a function of the sigma field."""

    def __init__(self, scene: RenderedScene, kind: "LossKind | str", settings: Settings = Settings()):
        self.scene = scene
        self.kind = LossKind.parse(kind)
        self.settings = settings
        self.rig = scene.rig
        self.prior_mask = prior_flow_mask(scene.prior_flow, self.rig, settings.mask)
        self.pseudo = None
        self._raw_pe = None
        self._guided = None
        if self.kind.needs_prior:
            flow = scene.prior_flow
            if self.kind.mask == "Mf":
                # masked-out pixels never reach the flow -> depth division
                flow = np.where(self.prior_mask == 1, flow, -self.rig.fb / settings.activation.max_depth)
            self.pseudo = depth_from_flow(flow, self.rig)

    def depth(self, sigma: np.ndarray) -> np.ndarray:
        return sigma_to_depth(sigma, self.settings.activation)

    def _warp(self, depth: np.ndarray) -> np.ndarray | None:
        if not (self.kind.photometric or self.kind.guided):
            return None
        s = self.settings
        return inverse_warp(self.scene.source, depth, self.rig, s.padding).image

    def mask(self, depth: np.ndarray, warped: np.ndarray | None = None) -> np.ndarray:
        if self.kind.mask == "Mf":
            return self.prior_mask
        if self.kind.mask == "Mp":
            s, scene = self.settings, self.scene
            if warped is None:
                warped = inverse_warp(scene.source, depth, self.rig, s.padding).image
            if self._raw_pe is None:
                self._raw_pe = photometric_error(scene.target, scene.source, s.loss)
            warped_pe = photometric_error(scene.target, warped, s.loss)
            return (warped_pe < self._raw_pe).astype(np.float64)
        return np.ones_like(depth)


    def per_pixel(self, depth: np.ndarray, warped: np.ndarray | None = None) -> np.ndarray:
        s, scene = self.settings, self.scene
        if warped is None:
            warped = self._warp(depth)
        total = np.zeros_like(depth)
        if self.kind.photometric:
            total += photometric_error(scene.target, warped, s.loss)
        if self.kind.regression:
            total += depth_regression_loss(depth, self.pseudo)
        if self.kind.guided:
            total += np.abs(warped - self.guided).mean(axis=2)
        return total

    @property
    def guided(self) -> np.ndarray:
        if self._guided is None:
            s = self.settings
            self._guided = inverse_warp(self.scene.source, self.pseudo, self.rig, s.padding).image
        return self._guided


    def value(self, sigma: np.ndarray, mask: np.ndarray | None = None) -> float:
        depth = self.depth(sigma)
        warped = self._warp(depth)
        if mask is None:
            mask = self.mask(depth, warped)
        return reduce_masked_mean(self.per_pixel(depth, warped), mask)

    def value_and_grad(self, sigma: np.ndarray, mask: np.ndarray | None = None):
        """Loss, its gradient w.r.t. sigma, and the (stop-gradient) mask used."""
        s, scene = self.settings, self.scene
        depth = self.depth(sigma)
        warped = self._warp(depth)
        if mask is None:
            mask = self.mask(depth, warped)
        loss = reduce_masked_mean(self.per_pixel(depth, warped), mask)
        weights = mask / np.count_nonzero(mask)
        grad_depth = np.zeros_like(depth)
        if self.kind.photometric or self.kind.guided:
            dwarp = warp_gradient_depth(scene.source, depth, self.rig, s.padding)
        if self.kind.photometric:
            g_img = photometric_error_grad(scene.target, warped, weights, s.loss)
            grad_depth += (g_img * dwarp).sum(axis=2)
        if self.kind.regression:
            grad_depth += depth_regression_grad(depth, self.pseudo, weights)
        if self.kind.guided:
            grad_depth += weights * (np.sign(warped - self.guided) * dwarp).mean(axis=2)
        return loss, grad_depth * sigma_to_depth_grad(sigma, s.activation), mask


# --- Adam -----------------------------------------------------------------------

class Adam:
    """Adam on a single array, with an optional one-off x0.1 learning-rate decay."""

    def __init__(self, cfg: AdamConfig):
        self.cfg = cfg
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        lr = cfg.lr
        if cfg.decay_step is not None and self.t >= cfg.decay_step:
            lr *= 0.1
        self.t += 1
        self.m = cfg.beta1 * self.m + (1 - cfg.beta1) * grad
        self.v = cfg.beta2 * self.v + (1 - cfg.beta2) * grad * grad
        m_hat = self.m / (1 - cfg.beta1**self.t)
        v_hat = self.v / (1 - cfg.beta2**self.t)
        return param - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


DIVERGENCE_LIMIT = 1e6


def optimize_depth(
    scene: RenderedScene,
    init_sigma: np.ndarray,
    kind: "LossKind | str",
    adam: AdamConfig = AdamConfig(),
    settings: Settings = Settings(),
) -> tuple[np.ndarray, list[float]]:
    """Projected Adam on the sigma field; returns the final field and the per-step loss.

    ``loss_trace[k]`` is the loss at the iterate before update ``k``, followed
    by the loss at the final iterate. Pixels outside the step's mask get a
    zero gradient, so a fixed mask leaves them bitwise untouched.
    """
    sigma = np.array(init_sigma, dtype=np.float64)
    if sigma.shape != scene.depth_gt.shape:
        raise ShapeError(f"init {sigma.shape} does not match scene {scene.depth_gt.shape}")
    if not np.all((sigma >= 0) & (sigma <= 1)):
        raise FlowDistillError("init sigma must lie in [0, 1]")
    objective = Objective(scene, kind, settings)
    opt = Adam(adam)
    trace: list[float] = []
    for _ in range(adam.steps):
        loss, grad, mask = objective.value_and_grad(sigma)
        _check_finite(loss)
        trace.append(loss)
        sigma = np.clip(opt.step(sigma, grad * mask), 0.0, 1.0)
    final = objective.value(sigma)
    _check_finite(final)
    trace.append(final)
    return sigma, trace


def _check_finite(loss: float) -> None:
    if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
        raise DivergenceError(f"loss diverged: {loss}")


# --- evaluation -------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def rows(self) -> list[tuple[str, float]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


def valid_pixels(scene: RenderedScene, max_depth: float = 80.0) -> np.ndarray:
    """In-bounds under the true depth, unoccluded, and within the distance cap."""
    depth = scene.depth_gt
    width = depth.shape[1]
    x = np.arange(width)[None, :] - scene.rig.fb / depth
    in_bounds = (x >= 0) & (x <= width - 1)
    return in_bounds & (scene.occlusion == 0) & (depth <= max_depth)


def evaluate(depth: np.ndarray, scene: RenderedScene, max_depth: float = 80.0) -> EvalReport:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != scene.depth_gt.shape:
        raise ShapeError(f"prediction {depth.shape} does not match scene {scene.depth_gt.shape}")
    valid = valid_pixels(scene, max_depth)
    if not valid.any():
        raise EmptyEvalError("no evaluation-valid pixels")
    return compute_errors(scene.depth_gt[valid], depth[valid])


def compute_errors(gt: np.ndarray, pred: np.ndarray) -> EvalReport:
    thresh = np.maximum(gt / pred, pred / gt)
    return EvalReport(
        abs_rel=float(np.mean(np.abs(gt - pred) / gt)),
        sq_rel=float(np.mean((gt - pred) ** 2 / gt)),
        rmse=float(np.sqrt(np.mean((gt - pred) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(gt) - np.log(pred)) ** 2))),
        delta1=float(np.mean(thresh < 1.25)),
        delta2=float(np.mean(thresh < 1.25**2)),
        delta3=float(np.mean(thresh < 1.25**3)),
    )


# --- landscape ------------------------------------------------------------------

LANDSCAPE_COLUMNS = ("L_p", "L_dr", "L_fp", "L_fd")


@dataclass
class LandscapeCurve:
    depths: np.ndarray
    loss_values: dict[str, np.ndarray]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("depth",) + LANDSCAPE_COLUMNS)
        for i, d in enumerate(self.depths):
            writer.writerow([repr(float(d))] + [repr(float(self.loss_values[k][i])) for k in LANDSCAPE_COLUMNS])
        return buf.getvalue()


def depth_grid(lo: float, hi: float, step: float) -> np.ndarray:
    """``lo, lo + step, ...`` up to ``hi`` inclusive (within half a step)."""
    if not step > 0 or not hi >= lo:
        raise FlowDistillError(f"bad range {lo}:{hi}:{step}")
    n = int(np.floor((hi - lo) / step + 0.5)) + 1
    return lo + step * np.arange(n)


def sweep_landscape(
    scene: RenderedScene,
    pixel: tuple[int, int],
    depths: Sequence[float],
    settings: Settings = Settings(),
) -> LandscapeCurve:
    """Each loss at one pixel as its depth varies, every other pixel at ground truth.

    The photometric term sees the pixel's SSIM window, so it is evaluated on
    the surrounding rows; the window is cut with replicate indexing, which is
    exactly how the full-image SSIM pads its border.
    """
    row, col = pixel
    h, w = scene.depth_gt.shape
    if not (0 <= row < h and 0 <= col < w):
        raise IndexError(f"pixel {pixel} outside the {h}x{w} frame")
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim != 1 or depths.size < 1 or np.any(np.diff(depths) <= 0):
        raise FlowDistillError("depths must be a strictly increasing sequence")
    r = settings.loss.ssim_window // 2
    rows = np.clip(np.arange(row - r, row + r + 1), 0, h - 1)
    cols = np.clip(np.arange(col - r, col + r + 1), 0, w - 1)
    target = scene.target[rows][:, cols]
    source = scene.source[rows]
    flow = scene.prior_flow[rows]
    depth = scene.depth_gt[rows].copy()
    pseudo = depth_from_flow(flow, scene.rig)
    rig, pad = scene.rig, settings.padding

    out = {k: np.empty(depths.size) for k in LANDSCAPE_COLUMNS}
    for i, d in enumerate(depths):
        depth[r, col] = d
        warped = inverse_warp(source, depth, rig, pad).image[:, cols]
        out["L_p"][i] = photometric_error(target, warped, settings.loss)[r, r]
        out["L_dr"][i] = depth_regression_loss(depth[r, col], pseudo[r, col])
        line = slice(r, r + 1)
        out["L_fp"][i] = flow_guided_photometric_loss(source[line], depth[line], pseudo[line], rig, pad)[0, col]
        out["L_fd"][i] = flow_distillation_loss(source[line], depth[line], flow[line], rig, pad)[0, col]
    return LandscapeCurve(depths, out)


def count_local_minima(values: Sequence[float]) -> int:
    """Strict interior local minima; a flat valley counts once if both flanks rise."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 3:
        raise LengthError(f"need at least 3 samples, got {v.size}")
    count = 0
    i = 1
    while i < v.size - 1:
        if v[i - 1] > v[i]:
            j = i
            while j + 1 < v.size and v[j + 1] == v[i]:
                j += 1
            if j + 1 < v.size and v[j + 1] > v[j]:
                count += 1
            i = j + 1
        else:
            i += 1
    return count


# --- gradient check -------------------------------------------------------------------

GRID_BAND = 1e-3  # px around bilinear grid lines
KINK_BAND = 1e-6


def _kink_terms(objective: Objective, depth: np.ndarray) -> list[np.ndarray]:
    """Per-pixel quantities whose sign change marks a non-differentiable point."""
    s, scene, rig = objective.settings, objective.scene, objective.rig
    terms = []
    if objective.kind.photometric:
        warped = inverse_warp(scene.source, depth, rig, s.padding).image
        terms.extend(np.moveaxis(warped - scene.target, 2, 0))
    if objective.kind.regression:
        terms.append(depth - objective.pseudo)
    if objective.kind.guided:
        warped = inverse_warp(scene.source, depth, rig, s.padding).image
        guided = inverse_warp(scene.source, objective.pseudo, rig, s.padding).image
        terms.extend(np.moveaxis(warped - guided, 2, 0))
    return terms


def grad_check(
    kind: "LossKind | str",
    scene: RenderedScene,
    sigma: np.ndarray,
    trials: int = 100,
    h_rel: float = 1e-5,
    settings: Settings = Settings(),
    seed: int = 0,
    inject: float = 0.0,
    abs_floor: float = 1e-12,
) -> float:
    """Worst relative error between analytic and central-difference d(loss)/d(sigma).

    Sites are drawn among reserved pixels, away from bilinear grid lines and
    from the absolute-value kinks. The mask is frozen at ``sigma`` (masks
    carry no gradient). ``inject`` adds a constant to the analytic gradient,
    for testing that the check detects faults.
    """
    if trials < 1:
        raise FlowDistillError("trials must be >= 1")
    objective = Objective(scene, kind, settings)
    sigma = np.asarray(sigma, dtype=np.float64)
    _, grad, mask = objective.value_and_grad(sigma)
    grad = grad + inject
    depth = objective.depth(sigma)
    x = np.arange(depth.shape[1])[None, :] - scene.rig.fb / depth
    off_grid = np.abs(x - np.round(x)) >= GRID_BAND
    candidates = np.flatnonzero((mask == 1) & off_grid)
    if candidates.size == 0:
        raise EmptyMaskError("no admissible gradient-check sites")
    rng = np.random.default_rng(seed)
    worst = 0.0
    checked = 0
    for _ in range(50 * trials):
        if checked == trials:
            break
        idx = np.unravel_index(rng.choice(candidates), sigma.shape)
        h = h_rel * max(sigma[idx], 1e-3)
        lo, hi = sigma.copy(), sigma.copy()
        lo[idx] -= h
        hi[idx] += h
        if lo[idx] < 0 or hi[idx] > 1:
            continue
        kinks_lo = _kink_terms(objective, objective.depth(lo))
        kinks_hi = _kink_terms(objective, objective.depth(hi))
        if any(np.sign(a[idx]) != np.sign(b[idx]) or abs(a[idx]) < KINK_BAND for a, b in zip(kinks_lo, kinks_hi)):
            continue
        fd = (objective.value(hi, mask) - objective.value(lo, mask)) / (2 * h)
        denom = max(abs(fd), abs(grad[idx]), abs_floor)
        worst = max(worst, abs(fd - grad[idx]) / denom)
        checked += 1
    if checked < trials:
        raise FlowDistillError(f"only {checked} of {trials} admissible sites found")
    return float(worst)


# --- CSV ---------------------------------------------------------------------------

def trace_to_csv(trace: Iterable[float]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("step", "loss"))
    for step, loss in enumerate(trace):
        writer.writerow((step, repr(float(loss))))
    return buf.getvalue()


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("metric", "value"))
    for name, value in report.rows():
        writer.writerow((name, repr(value)))
    return buf.getvalue()


def ablation_to_csv(results: Sequence[tuple[str, EvalReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(EvalReport)]
    writer.writerow(["loss"] + names)
    for kind, report in results:
        writer.writerow([kind] + [repr(v) for v in astuple(report)])
    return buf.getvalue()


# --- flat config ---------------------------------------------------------------

_SETTINGS_KEYS = {"alpha", "ssim_c1", "ssim_c2", "ssim_window", "delta", "min_depth", "max_depth", "padding"}


def settings_from_config(cfg) -> Settings:
    from . import config as _config

    unknown = set(cfg) - _SETTINGS_KEYS
    if unknown:
        raise FlowDistillError(f"unknown loss-config keys: {', '.join(sorted(unknown))}")
    f = _config.get_float
    defaults = LossConfig()
    try:
        padding = PaddingMode(cfg.get("padding", "border"))
    except ValueError:
        raise FlowDistillError(f"padding must be border or zeros, got {cfg['padding']!r}") from None
    return Settings(
        loss=LossConfig(
            alpha=f(cfg, "alpha", defaults.alpha),
            ssim_c1=f(cfg, "ssim_c1", defaults.ssim_c1),
            ssim_c2=f(cfg, "ssim_c2", defaults.ssim_c2),
            ssim_window=_config.get_int(cfg, "ssim_window", defaults.ssim_window),
        ),
        mask=MaskConfig(f(cfg, "delta", 80.0)),
        activation=DepthActivation(f(cfg, "min_depth", 0.1), f(cfg, "max_depth", 80.0)),
        padding=padding,
    )


def settings_to_config(settings: Settings) -> dict[str, object]:
    return {
        "alpha": settings.loss.alpha,
        "ssim_c1": settings.loss.ssim_c1,
        "ssim_c2": settings.loss.ssim_c2,
        "ssim_window": settings.loss.ssim_window,
        "delta": settings.mask.delta,
        "min_depth": settings.activation.min_depth,
        "max_depth": settings.activation.max_depth,
        "padding": settings.padding.value,
    }
