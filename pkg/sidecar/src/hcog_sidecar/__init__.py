"""Score-prediction and mask-segmentation HTTP service.

Implements the `/v1/score` and `/v1/segment` wire contracts of the hcog
optimizer, wrapping either real diffusion / promptable-segmentation models
(GPU deployments) or fully deterministic stub models for contract testing.
The package is intentionally independent of the optimizer: the shared
surface is the wire format alone.
"""

from .app import create_app
from .config import SidecarConfig
from .models import ModelLoadError

__all__ = ["create_app", "SidecarConfig", "ModelLoadError"]
__version__ = "0.1.0"
