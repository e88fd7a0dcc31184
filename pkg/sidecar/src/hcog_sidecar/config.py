"""Service configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = ["SidecarConfig"]

STUB_MODEL = "stub"


@dataclass
class SidecarConfig:
    """Model assignment per provider tag plus serving knobs.

    ``providers`` maps the score-provider tags the optimizer may send to
    model identifiers; ``segmenter`` names the mask model. The identifier
    ``"stub"`` selects the deterministic test models; anything else is
    treated as a deployable model checkpoint for the torch backends.
    """

    providers: dict[str, str] = field(
        default_factory=lambda: {"multiview": STUB_MODEL, "shape_conditioned": STUB_MODEL}
    )
    segmenter: str = STUB_MODEL
    device: str = "cpu"
    host: str = "127.0.0.1"
    port: int = 8040
    max_batch: int = 1

    def __post_init__(self):
        if not self.providers:
            raise ValueError("at least one score provider must be configured")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")

    @classmethod
    def from_file(cls, path) -> "SidecarConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(**data)

    @classmethod
    def stub(cls) -> "SidecarConfig":
        return cls()
