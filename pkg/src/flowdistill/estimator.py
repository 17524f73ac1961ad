"""scikit-learn style wrappers around the depth optimizer and the prior-flow mask.

A "sample" here is a whole rendered scene: the depth field is fitted per
scene, so :meth:`DepthFieldRegressor.predict` only answers for the scene it
was fitted on.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import CameraRig, ShapeError
from .losses import DepthActivation, LossConfig, MaskConfig, prior_flow_mask, sigma_to_depth
from .optim import AdamConfig, LossKind, Settings, evaluate, optimize_depth
from .validation import check_map, check_scene
from .warping import PaddingMode, depth_from_flow


class DepthFieldRegressor(RegressorMixin, BaseEstimator):
    """Fit a per-pixel depth field to one scene by projected Adam.

    Parameters
    ----------
    loss : str
        Loss combination, e.g. ``"Lfd+Mf"`` or ``"Lp+Mp"``.
    init_depth : float
        Constant initial depth in metres, mapped to sigma by the activation.
    lr, steps, decay_step, beta1, beta2, eps :
        Adam settings; ``decay_step=None`` keeps the rate constant.
    alpha, ssim_window, delta, min_depth, max_depth, padding :
        Loss, mask and activation settings.

    Attributes
    ----------
    sigma_ : ndarray of shape (H, W)
    depth_ : ndarray of shape (H, W)
    loss_trace_ : list of float
    n_iter_ : int
    """

    def __init__(
        self,
        loss="Lfd+Mf",
        init_depth=10.0,
        lr=3e-4,
        steps=400,
        decay_step=300,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        alpha=0.85,
        ssim_window=3,
        delta=80.0,
        min_depth=0.1,
        max_depth=80.0,
        padding="border",
    ):
        self.loss = loss
        self.init_depth = init_depth
        self.lr = lr
        self.steps = steps
        self.decay_step = decay_step
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.alpha = alpha
        self.ssim_window = ssim_window
        self.delta = delta
        self.min_depth = min_depth
        self.max_depth = max_depth
        self.padding = padding

    def _settings(self) -> Settings:
        return Settings(
            loss=LossConfig(alpha=self.alpha, ssim_window=self.ssim_window),
            mask=MaskConfig(self.delta),
            activation=DepthActivation(self.min_depth, self.max_depth),
            padding=PaddingMode(self.padding),
        )

    def _adam(self) -> AdamConfig:
        return AdamConfig(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            steps=self.steps, decay_step=self.decay_step,
        )

    def fit(self, X, y=None):
        scene = check_scene(X)
        kind = LossKind.parse(self.loss)
        settings = self._settings()
        adam = self._adam()
        init = np.full(scene.depth_gt.shape, float(settings.activation.sigma_for(self.init_depth)))
        sigma, trace = optimize_depth(scene, init, kind, adam, settings)
        self.sigma_ = sigma
        self.depth_ = sigma_to_depth(sigma, settings.activation)
        self.loss_trace_ = trace
        self.n_iter_ = adam.steps
        return self

    def predict(self, X=None):
        check_is_fitted(self, "depth_")
        if X is not None and check_scene(X).depth_gt.shape != self.depth_.shape:
            raise ShapeError(f"fitted on {self.depth_.shape}, got scene {X.depth_gt.shape}")
        return self.depth_.copy()

    def score(self, X, y=None):
        """Negative AbsRel on the evaluation-valid pixels (higher is better)."""
        return -evaluate(self.predict(X), check_scene(X)).abs_rel


class PriorFlowMasker(TransformerMixin, BaseEstimator):
    """Map a signed horizontal flow field to its in-range indicator (1 = keep)."""

    def __init__(self, focal_x=100.0, baseline=0.5, delta=80.0):
        self.focal_x = focal_x
        self.baseline = baseline
        self.delta = delta

    def fit(self, X, y=None):
        check_map(X, "flow")
        self.rig_ = CameraRig(float(self.focal_x), float(self.baseline))
        self.mask_config_ = MaskConfig(float(self.delta))
        self.threshold_ = self.rig_.fb / self.mask_config_.delta
        return self

    def transform(self, X):
        check_is_fitted(self, "rig_")
        return prior_flow_mask(check_map(X, "flow"), self.rig_, self.mask_config_)

    def pseudo_depth(self, X):
        check_is_fitted(self, "rig_")
        return depth_from_flow(check_map(X, "flow"), self.rig_)
