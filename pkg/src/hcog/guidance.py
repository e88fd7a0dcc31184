"""Score-distillation machinery.

The scene is optimized by rendering a view, asking a score provider to
predict the noise that was (notionally) added at a sampled diffusion
timestep, and pushing the difference between predicted and injected noise
back through the rasterizer:

    grad = w(t) * (noise_pred - noise) . d(render)/d(params)

The provider never receives gradients. Providers are duck-typed on
``predict_noise`` so the HTTP client, the deterministic photometric oracle,
and test stubs are interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .camera import CameraView
from .rasterizer import ParamGradients, RenderOptions, RenderOutput, backward, render
from .scene import Scene

__all__ = [
    "NoiseSchedule",
    "GuidanceRequest",
    "GuidanceResponse",
    "PhotometricOracle",
    "EchoProvider",
    "add_noise",
    "sds_gradient",
    "guidance_step",
    "combined_loss_gradient",
    "weight_fn",
]

PROVIDER_TAGS = ("multiview", "shape_conditioned")


@dataclass
class NoiseSchedule:
    """Linear-beta DDPM forward process; timesteps are 1-indexed and
    ``alpha_bar(0) == 1`` (no noise)."""

    steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    t_min_frac: float = 0.02
    t_max_frac: float = 0.98

    def __post_init__(self):
        betas = np.linspace(self.beta_start, self.beta_end, self.steps, dtype=np.float64)
        if not (0.0 < betas[0] and betas[-1] < 1.0 and np.all(np.diff(betas) > 0)):
            raise ValueError("betas must be strictly increasing within (0, 1)")
        self.betas = betas
        self.alphas_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        self.t_min = max(1, int(round(self.t_min_frac * self.steps)))
        self.t_max = min(self.steps, int(round(self.t_max_frac * self.steps)))

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise ValueError(f"timestep {t} outside [0, {self.steps}]")
        return float(self.alphas_bar[t])

    def sample_timestep(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.t_min, self.t_max + 1))


def add_noise(image: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-process sample: sqrt(abar_t) * image + sqrt(1 - abar_t) * noise."""
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * image + np.sqrt(1.0 - abar) * noise


@dataclass
class GuidanceRequest:
    prompt: str
    image: np.ndarray  # (H, W, 3) rendered color in [0, 1]
    timestep: int
    noise: np.ndarray  # (H, W, 3) the injected epsilon
    conditioning: np.ndarray | None = None  # (H, W) silhouette, or None
    provider: str = "multiview"
    cfg_scale: float = 7.5
    view: CameraView | None = None  # local-provider context; never serialized


@dataclass
class GuidanceResponse:
    noise_pred: np.ndarray  # (H, W, 3)

    def __post_init__(self):
        self.noise_pred = np.asarray(self.noise_pred, dtype=np.float64)
        if not np.isfinite(self.noise_pred).all():
            raise ValueError("noise prediction contains non-finite values")


class EchoProvider:
    """Returns the injected noise unchanged; downstream gradient is zero."""

    def predict_noise(self, request: GuidanceRequest) -> GuidanceResponse:
        return GuidanceResponse(noise_pred=request.noise.copy())


class PhotometricOracle:
    """Deterministic score stand-in for offline runs.

    Predicts ``noise + gain * (rendered - target)``, which turns the
    distillation update into plain image matching against ``target``. The
    target may be a fixed image or a per-view callable (e.g. a render of a
    reference scene from the requested pose).
    """

    def __init__(self, target: np.ndarray | Callable[[CameraView], np.ndarray], gain: float = 1.0):
        self._target = target
        self.gain = gain

    def target_image(self, view: CameraView | None) -> np.ndarray:
        if callable(self._target):
            if view is None:
                raise ValueError("per-view oracle target needs the request's view")
            return self._target(view)
        return self._target

    def predict_noise(self, request: GuidanceRequest) -> GuidanceResponse:
        target = self.target_image(request.view)
        if target.shape != request.image.shape:
            raise ValueError(f"target shape {target.shape} != render shape {request.image.shape}")
        return GuidanceResponse(noise_pred=request.noise + self.gain * (request.image - target))


def weight_fn(name: str, schedule: NoiseSchedule) -> Callable[[int], float]:
    """Named w(t) choices; "constant" is the default used throughout."""
    if name == "constant":
        return lambda t: 1.0
    if name == "one_minus_alpha_bar":
        return lambda t: 1.0 - schedule.alpha_bar(t)
    raise ValueError(f"unknown weight function {name!r}")


def sds_gradient(
    scene: Scene,
    view: CameraView,
    output: RenderOutput,
    response: GuidanceResponse,
    noise: np.ndarray,
    weight: float = 1.0,
) -> ParamGradients:
    """Distillation gradient for one provider reply: w(t) * (eps_hat - eps)
    chained through the rasterizer. The score model stays out of the graph."""
    if response.noise_pred.shape != noise.shape:
        raise ValueError(f"noise prediction shape {response.noise_pred.shape} != noise shape {noise.shape}")
    if noise.shape != output.color.shape:
        raise ValueError(f"noise shape {noise.shape} != render shape {output.color.shape}")
    return backward(scene, view, output, color_grad=weight * (response.noise_pred - noise))


def guidance_step(
    scene: Scene,
    view: CameraView,
    prompt: str,
    providers: dict[str, object],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    silhouette: np.ndarray | None = None,
    weights: dict[str, float] | None = None,
    cfg_scale: float = 7.5,
    w_t: str = "constant",
    options: RenderOptions = RenderOptions(),
) -> tuple[ParamGradients, dict]:
    """One distillation step over the given providers.

    Renders once, then queries providers in their dict order; each gets an
    independently sampled timestep and noise draw. Providers tagged
    ``shape_conditioned`` receive the silhouette as conditioning. Returns the
    weighted gradient sum and per-provider residual diagnostics.
    """
    output = render(scene, view, options)
    wt = weight_fn(w_t, schedule)
    total = ParamGradients.zeros(len(scene))
    diagnostics: dict[str, float] = {}
    for tag, provider in providers.items():
        t = schedule.sample_timestep(rng)
        # noise is drawn at wire precision (float32) so an echoing provider
        # cancels exactly even across the HTTP transport
        noise = rng.standard_normal(output.color.shape).astype("<f4").astype(np.float64)
        request = GuidanceRequest(
            prompt=prompt,
            image=output.color,
            timestep=t,
            noise=noise,
            conditioning=silhouette if tag == "shape_conditioned" else None,
            provider=tag,
            cfg_scale=cfg_scale,
            view=view,
        )
        response = provider.predict_noise(request)
        scale = (weights or {}).get(tag, 1.0) * wt(t)
        total = total + sds_gradient(scene, view, output, response, noise, weight=scale)
        diagnostics[tag] = float(np.mean((response.noise_pred - noise) ** 2))
    return total, diagnostics


def combined_loss_gradient(
    scene: Scene,
    view: CameraView,
    prompt: str,
    part_silhouette: np.ndarray | None,
    providers: dict[str, object],
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    **kwargs,
) -> ParamGradients:
    """Sum of the multiview and shape-conditioned distillation gradients
    (unit weights unless overridden); the silhouette conditions the
    shape-conditioned provider."""
    grads, _ = guidance_step(
        scene, view, prompt, providers, schedule, rng, silhouette=part_silhouette, **kwargs
    )
    return grads
