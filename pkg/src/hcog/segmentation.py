"""Part segmentation: optimize each kernel's segmentation logit against a 2D
mask oracle, then threshold to select the part's kernels.

Each iteration renders the scene from a fresh pose, asks the oracle for a
binary mask of the target part on the rendered image, and takes a step on
the seg logits under per-pixel binary cross-entropy between the rendered
probability channel and the mask, averaged over covered pixels (alpha >
0.05). Geometry, color, and opacity are untouched, bit for bit.

Steps use Adam at the configured learning rate: with the covered-pixel mean
reduction, raw-gradient steps provably cannot lift a logit from 0 to the 0.9
threshold within the default 200-iteration budget (the per-step change is
bounded by lr * (1 - p_seg)), while Adam's normalized steps make the budget
meaningful regardless of how many pixels a kernel owns.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .camera import CameraConfig, CameraView, sample_view
from .rasterizer import RenderOptions, backward, render, render_silhouette
from .scene import SEG_INIT_STD, Scene, sigmoid

__all__ = [
    "SegmentationConfig",
    "MaskOracle",
    "SyntheticMaskOracle",
    "WireMaskOracle",
    "EmptySelectionWarning",
    "segment_part",
    "bce_loss_and_grad",
]

COVERAGE_THRESHOLD = 0.05
PROB_CLAMP = 1e-6


class EmptySelectionWarning(UserWarning):
    """No kernel cleared the selection threshold for a part."""


@dataclass
class SegmentationConfig:
    iterations: int = 200
    learning_rate: float = 0.05
    threshold: float = 0.9
    views_per_iteration: int = 1

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


class MaskOracle(Protocol):
    def __call__(
        self, image: np.ndarray, query: str, *, view: CameraView | None = None, scene: Scene | None = None
    ) -> np.ndarray: ...


class SyntheticMaskOracle:
    """Ground-truth oracle: a selector maps a part query to a kernel set, and
    the mask is that sub-scene's silhouette from the requested view.

    ``dilate`` inflates the sub-scene's scales before thresholding so the
    mask covers the selected kernels' soft fringes, the way a real 2D mask
    hugs the full visible extent of a part rather than its opaque core.
    """

    def __init__(
        self,
        selector: Callable[[Scene, str], np.ndarray],
        options: RenderOptions = RenderOptions(),
        dilate: float = 1.0,
    ):
        self.selector = selector
        self.options = options
        self.dilate = dilate

    def __call__(self, image, query, *, view=None, scene=None):
        if view is None or scene is None:
            raise ValueError("synthetic oracle needs the live view and scene")
        sub = scene.subset(np.asarray(self.selector(scene, query)))
        if self.dilate != 1.0:
            sub.log_scales = sub.log_scales + np.float32(np.log(self.dilate))
        if len(sub) == 0:
            return np.zeros((view.height, view.width), dtype=bool)
        return render_silhouette(sub, np.ones(len(sub), dtype=bool), view, self.options)


class WireMaskOracle:
    """Adapter putting the HTTP mask client behind the oracle protocol."""

    def __init__(self, client):
        self.client = client

    def __call__(self, image, query, *, view=None, scene=None):
        return self.client.request(image, query)


def bce_loss_and_grad(prob: np.ndarray, mask: np.ndarray, alpha: np.ndarray) -> tuple[float, np.ndarray]:
    """Per-pixel binary cross-entropy between the rendered probability
    channel and a binary mask, averaged over covered pixels. Returns the loss
    and its gradient image w.r.t. the probability channel."""
    covered = alpha > COVERAGE_THRESHOLD
    count = int(covered.sum())
    grad = np.zeros_like(prob)
    if count == 0:
        return 0.0, grad
    p = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    m = mask.astype(np.float64)
    loss = float(-(m * np.log(p) + (1.0 - m) * np.log(1.0 - p))[covered].sum() / count)
    grad_vals = (-m / p + (1.0 - m) / (1.0 - p)) / count
    grad[covered] = grad_vals[covered]
    return loss, grad


class _Adam:
    # beta2 matches beta1: per-view visibility makes gradient magnitudes
    # heavy-tailed, and a long second-moment memory would throttle kernels
    # that are occluded in most sampled views
    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.9, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def segment_part(
    scene: Scene,
    part_text: str,
    oracle: MaskOracle,
    config: SegmentationConfig,
    rng: np.random.Generator,
    camera: CameraConfig,
    subset: np.ndarray | None = None,
    options: RenderOptions = RenderOptions(),
    on_iteration: Callable[[int, float], None] | None = None,
) -> np.ndarray:
    """Optimize seg logits toward the oracle's masks and return the indices
    with sigmoid(seg_logit) >= threshold.

    Only ``subset`` kernels (default: currently trainable ones) have their
    logits re-randomized and optimized; every other parameter of every
    kernel is bit-identical afterwards. An empty selection raises
    ``EmptySelectionWarning`` rather than failing.
    """
    if subset is None:
        subset_mask = scene.trainable.copy()
    else:
        subset_mask = np.asarray(subset)
        if subset_mask.dtype != bool:
            idx = subset_mask.astype(np.int64)
            subset_mask = np.zeros(len(scene), dtype=bool)
            subset_mask[idx] = True

    saved_trainable = scene.trainable.copy()
    saved_groups = {g: m.copy() for g, m in scene.group_masks.items()}
    scene.trainable = subset_mask.copy()
    for g in ("geometry", "color", "opacity"):
        scene.group_masks[g] = np.zeros(len(scene), dtype=bool)
    scene.group_masks["seg"] = subset_mask.copy()

    try:
        scene.seg_logits[subset_mask] = rng.normal(0.0, SEG_INIT_STD, int(subset_mask.sum())).astype(np.float32)
        adam = _Adam(int(subset_mask.sum()), config.learning_rate)

        for it in range(config.iterations):
            grad_sum = np.zeros(int(subset_mask.sum()))
            loss_sum = 0.0
            for _ in range(config.views_per_iteration):
                view = sample_view(rng, camera, scene)
                out = render(scene, view, options)
                mask = oracle(out.color, part_text, view=view, scene=scene)
                loss, grad_img = bce_loss_and_grad(out.prob, np.asarray(mask, dtype=bool), out.alpha)
                grads = backward(scene, view, out, prob_grad=grad_img)
                grad_sum += grads.seg_logit[subset_mask]
                loss_sum += loss
            delta = adam.step(grad_sum / config.views_per_iteration)
            logits = scene.seg_logits.astype(np.float64)
            logits[subset_mask] -= delta
            scene.seg_logits = logits.astype(np.float32)
            if on_iteration is not None:
                on_iteration(it, loss_sum / config.views_per_iteration)

        selected = np.nonzero(subset_mask & (sigmoid(scene.seg_logits) >= config.threshold))[0]
        if len(selected) == 0:
            warnings.warn(EmptySelectionWarning(f"no kernels selected for part {part_text!r}"))
        return selected
    finally:
        scene.trainable = saved_trainable
        scene.group_masks = saved_groups
