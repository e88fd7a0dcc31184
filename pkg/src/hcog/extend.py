"""Between-block kernel growth and pruning.

Extension appends new kernels spawned from uniformly sampled parents: every
property is copied except the position, which is drawn from the parent's own
ellipsoid plus a small isotropic perturbation. The pre-existing kernels are
frozen so only the new growth can learn the next block's parts.

After the new block has been optimized, elimination segments each of the
block's parts, marks the selected extension kernels as kept parts, and
deletes the rest, restoring everything else untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import CameraConfig
from .rasterizer import RenderOptions
from .scene import SEG_INIT_STD, Mark, Scene, freeze, quat_to_rotmat
from .segmentation import EmptySelectionWarning, MaskOracle, SegmentationConfig, segment_part

__all__ = ["ExtensionConfig", "extend", "label_eliminate"]


@dataclass
class ExtensionConfig:
    count: int | None = None  # None: match the current kernel count
    perturb_sigma: float = 0.01

    def __post_init__(self):
        if self.count is not None and self.count < 1:
            raise ValueError("extension count must be >= 1")
        if self.perturb_sigma < 0:
            raise ValueError("perturb_sigma must be >= 0")


def extend(
    scene: Scene,
    config: ExtensionConfig,
    rng: np.random.Generator,
    block_id: int | None = None,
) -> np.ndarray:
    """Append sampled kernels and freeze everything that existed before.

    Each new kernel copies its uniformly chosen parent bit-for-bit except:
    position = sample from N(parent position, parent covariance) plus
    N(0, perturb_sigma^2 I); seg logit re-randomized; mark = EXTENDED;
    block_id = the next block. Returns the new kernel indices.
    """
    n = len(scene)
    if n == 0:
        raise ValueError("cannot extend an empty scene")
    if not np.isin(scene.marks, (int(Mark.ORIGINAL), int(Mark.NEW_PART))).all():
        raise ValueError("scene still contains EXTENDED kernels; eliminate before extending again")
    k = config.count if config.count is not None else n
    if k < 1:
        raise ValueError("extension count must be >= 1")
    if block_id is None:
        block_id = int(scene.block_ids.max()) + 1

    parents = rng.integers(0, n, size=k)
    # x ~ N(mu, R diag(s^2) R^T)  via  mu + R (s * n)
    R = quat_to_rotmat(scene.rotations[parents])
    s = scene.scales()[parents]
    shape_noise = rng.standard_normal((k, 3))
    offsets = np.einsum("nij,nj->ni", R, s * shape_noise)
    perturb = config.perturb_sigma * rng.standard_normal((k, 3))
    positions = scene.positions[parents].astype(np.float64) + offsets + perturb
    seg = rng.normal(0.0, SEG_INIT_STD, k)

    addition = Scene(
        positions=positions,
        log_scales=scene.log_scales[parents].copy(),
        rotations=scene.rotations[parents].copy(),
        colors=scene.colors[parents].copy(),
        opacity_logits=scene.opacity_logits[parents].copy(),
        seg_logits=seg,
        block_ids=np.full(k, block_id, dtype=np.int32),
        marks=np.full(k, Mark.EXTENDED, dtype=np.uint8),
        trainable=np.ones(k, dtype=bool),
        rng_seed=scene.rng_seed,
    )
    freeze(scene, np.ones(n, dtype=bool))
    scene.append(addition)
    return np.arange(n, n + k)


def label_eliminate(
    scene: Scene,
    new_part_texts: list[str],
    oracle: MaskOracle,
    seg_config: SegmentationConfig,
    rng: np.random.Generator,
    camera: CameraConfig,
    options: RenderOptions = RenderOptions(),
) -> int:
    """Keep only the extension kernels segmented as one of the block's parts.

    Runs part segmentation over the EXTENDED kernels for every part text;
    the union of selections becomes NEW_PART and every remaining EXTENDED
    kernel is deleted. Prior-block kernels are untouched bit for bit.
    Returns the number of kernels removed.
    """
    extended = scene.marks == Mark.EXTENDED
    if not extended.any():
        raise ValueError("scene has no EXTENDED kernels to eliminate")

    keep = np.zeros(len(scene), dtype=bool)
    for text in new_part_texts:
        selected = segment_part(scene, text, oracle, seg_config, rng, camera, subset=extended, options=options)
        if len(selected) == 0:
            warnings.warn(EmptySelectionWarning(f"part {text!r} selected no extension kernels"))
            continue
        keep[selected] = True

    scene.marks[keep] = Mark.NEW_PART
    to_remove = np.nonzero(extended & ~keep)[0]
    scene.delete(to_remove)
    return len(to_remove)
