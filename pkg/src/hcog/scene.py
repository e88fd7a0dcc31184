"""Gaussian kernel collection: the scene data model.

A scene is stored struct-of-arrays in float32 (matching the on-disk layout)
so renders and optimizer steps vectorize; ``GaussianKernel`` is the
single-splat view used at API boundaries. Opacity and the segmentation
probability are stored as logits and scale as log-scale, so plain gradient
steps can never leave the valid domain.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mark",
    "GaussianKernel",
    "Scene",
    "PARAM_GROUPS",
    "MIN_SCALE",
    "covariance",
    "quat_to_rotmat",
    "freeze",
    "unfreeze",
    "random_ball_scene",
    "scene_equal",
    "scene_hash",
    "sigmoid",
    "logit",
]

MIN_SCALE = 1e-6
MIN_LOG_SCALE = float(np.log(MIN_SCALE))

PARAM_GROUPS = ("geometry", "color", "opacity", "seg")

SEG_INIT_STD = 0.1  # seg logits re-randomized as N(0, 0.01)


class Mark(enum.IntEnum):
    """Lifecycle tag of a kernel across block transitions."""

    ORIGINAL = 0
    EXTENDED = 1
    NEW_PART = 2


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianKernel:
    """One splat. ``scale``/``opacity``/``seg_prob`` are the natural-domain
    values; the scene keeps the unconstrained encodings."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion, wxyz
    color: np.ndarray
    opacity: float
    seg_prob: float
    block_id: int = 0
    mark: Mark = Mark.ORIGINAL


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (..., 4) wxyz quaternions (normalized first)."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance(kernel: GaussianKernel) -> np.ndarray:
    """3x3 covariance R S S^T R^T of one kernel."""
    R = quat_to_rotmat(kernel.rotation)
    s = np.maximum(np.asarray(kernel.scale, dtype=np.float64), MIN_SCALE)
    B = R * s[np.newaxis, :]
    return B @ B.T


@dataclass
class Scene:
    """Ordered kernel collection plus freeze state.

    ``trainable`` is the per-kernel master switch; ``group_masks`` refines it
    per parameter group. A parameter receives gradient only when both its
    kernel's master flag and its group flag are set.
    """

    positions: np.ndarray  # (N, 3) float32
    log_scales: np.ndarray  # (N, 3) float32
    rotations: np.ndarray  # (N, 4) float32, wxyz
    colors: np.ndarray  # (N, 3) float32
    opacity_logits: np.ndarray  # (N,) float32
    seg_logits: np.ndarray  # (N,) float32
    block_ids: np.ndarray  # (N,) int32
    marks: np.ndarray  # (N,) uint8
    trainable: np.ndarray  # (N,) bool
    group_masks: dict[str, np.ndarray] = field(default_factory=dict)
    rng_seed: int = 0
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32).reshape(n, 3)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float32).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float32).reshape(n, 4)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float32).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float32).reshape(n)
        self.seg_logits = np.ascontiguousarray(self.seg_logits, dtype=np.float32).reshape(n)
        self.block_ids = np.ascontiguousarray(self.block_ids, dtype=np.int32).reshape(n)
        self.marks = np.ascontiguousarray(self.marks, dtype=np.uint8).reshape(n)
        self.trainable = np.ascontiguousarray(self.trainable, dtype=bool).reshape(n)
        for g in PARAM_GROUPS:
            if g not in self.group_masks:
                self.group_masks[g] = np.ones(n, dtype=bool)
            else:
                self.group_masks[g] = np.ascontiguousarray(self.group_masks[g], dtype=bool).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    # -- natural-domain accessors -------------------------------------------

    def scales(self) -> np.ndarray:
        return np.maximum(np.exp(self.log_scales.astype(np.float64)), MIN_SCALE)

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def seg_probs(self) -> np.ndarray:
        return sigmoid(self.seg_logits)

    def kernel(self, i: int) -> GaussianKernel:
        return GaussianKernel(
            position=self.positions[i].astype(np.float64),
            scale=self.scales()[i],
            rotation=self.rotations[i].astype(np.float64),
            color=self.colors[i].astype(np.float64),
            opacity=float(self.opacities()[i]),
            seg_prob=float(self.seg_probs()[i]),
            block_id=int(self.block_ids[i]),
            mark=Mark(int(self.marks[i])),
        )

    def trainable_in(self, group: str) -> np.ndarray:
        return self.trainable & self.group_masks[group]

    def bounding_radius(self, center=(0.0, 0.0, 0.0)) -> float:
        """Radius of the bounding sphere of kernel centers around ``center``."""
        if len(self) == 0:
            return 1.0
        d = np.linalg.norm(self.positions.astype(np.float64) - np.asarray(center, dtype=np.float64), axis=1)
        return float(max(d.max(), 1e-6))

    def copy(self) -> "Scene":
        return Scene(
            positions=self.positions.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            colors=self.colors.copy(),
            opacity_logits=self.opacity_logits.copy(),
            seg_logits=self.seg_logits.copy(),
            block_ids=self.block_ids.copy(),
            marks=self.marks.copy(),
            trainable=self.trainable.copy(),
            group_masks={g: m.copy() for g, m in self.group_masks.items()},
            rng_seed=self.rng_seed,
            extras={k: v.copy() for k, v in self.extras.items()},
        )

    def append(self, other: "Scene") -> None:
        """Append another scene's kernels in order (extras are dropped if the
        key sets differ)."""
        self.positions = np.concatenate([self.positions, other.positions])
        self.log_scales = np.concatenate([self.log_scales, other.log_scales])
        self.rotations = np.concatenate([self.rotations, other.rotations])
        self.colors = np.concatenate([self.colors, other.colors])
        self.opacity_logits = np.concatenate([self.opacity_logits, other.opacity_logits])
        self.seg_logits = np.concatenate([self.seg_logits, other.seg_logits])
        self.block_ids = np.concatenate([self.block_ids, other.block_ids])
        self.marks = np.concatenate([self.marks, other.marks])
        self.trainable = np.concatenate([self.trainable, other.trainable])
        for g in PARAM_GROUPS:
            self.group_masks[g] = np.concatenate([self.group_masks[g], other.group_masks[g]])
        self.extras = {
            k: np.concatenate([v, other.extras[k]]) for k, v in self.extras.items() if k in other.extras
        }

    def delete(self, indices) -> None:
        """Remove kernels by index, preserving the order of survivors."""
        keep = np.ones(len(self), dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        self.positions = self.positions[keep]
        self.log_scales = self.log_scales[keep]
        self.rotations = self.rotations[keep]
        self.colors = self.colors[keep]
        self.opacity_logits = self.opacity_logits[keep]
        self.seg_logits = self.seg_logits[keep]
        self.block_ids = self.block_ids[keep]
        self.marks = self.marks[keep]
        self.trainable = self.trainable[keep]
        for g in PARAM_GROUPS:
            self.group_masks[g] = self.group_masks[g][keep]
        self.extras = {k: v[keep] for k, v in self.extras.items()}

    def subset(self, mask_or_indices) -> "Scene":
        """Read-only sub-scene (used for silhouettes and synthetic masks)."""
        idx = np.asarray(mask_or_indices)
        if idx.dtype == bool:
            idx = np.nonzero(idx)[0]
        return Scene(
            positions=self.positions[idx],
            log_scales=self.log_scales[idx],
            rotations=self.rotations[idx],
            colors=self.colors[idx],
            opacity_logits=self.opacity_logits[idx],
            seg_logits=self.seg_logits[idx],
            block_ids=self.block_ids[idx],
            marks=self.marks[idx],
            trainable=self.trainable[idx],
            group_masks={g: m[idx] for g, m in self.group_masks.items()},
            rng_seed=self.rng_seed,
        )


def _as_mask(scene: Scene, which) -> np.ndarray:
    if callable(which):
        mask = np.asarray(which(scene), dtype=bool)
    else:
        which = np.asarray(which)
        if which.dtype == bool:
            mask = which
        else:
            mask = np.zeros(len(scene), dtype=bool)
            mask[which.astype(np.int64)] = True
    if mask.shape != (len(scene),):
        raise ValueError(f"mask shape {mask.shape} does not match scene of {len(scene)} kernels")
    return mask


def freeze(scene: Scene, which, groups=None) -> None:
    """Make kernels gradient-invisible.

    ``which`` is a boolean mask, an index array, or a predicate
    ``Scene -> bool mask``. With ``groups=None`` the master flag is cleared;
    otherwise only the named parameter groups are frozen for those kernels.
    """
    mask = _as_mask(scene, which)
    if groups is None:
        scene.trainable[mask] = False
    else:
        for g in groups:
            scene.group_masks[g][mask] = False


def unfreeze(scene: Scene, which, groups=None) -> None:
    mask = _as_mask(scene, which)
    if groups is None:
        scene.trainable[mask] = True
    else:
        for g in groups:
            scene.group_masks[g][mask] = True


def random_ball_scene(
    count: int,
    rng: np.random.Generator,
    radius: float = 1.0,
    color=(0.5, 0.5, 0.5),
    opacity: float = 0.1,
    scale: float | None = None,
    block_id: int = 0,
    seed: int = 0,
) -> Scene:
    """Uniform-in-ball initialization: gray, translucent, isotropic kernels."""
    if count < 1:
        raise ValueError("count must be >= 1")
    directions = rng.standard_normal((count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / 3.0)
    positions = directions * radii[:, None]
    if scale is None:
        scale = 1.5 * radius * count ** (-1.0 / 3.0)
    seg = rng.normal(0.0, SEG_INIT_STD, count)
    rotations = np.zeros((count, 4), dtype=np.float32)
    rotations[:, 0] = 1.0
    return Scene(
        positions=positions,
        log_scales=np.full((count, 3), np.log(scale)),
        rotations=rotations,
        colors=np.tile(np.asarray(color, dtype=np.float32), (count, 1)),
        opacity_logits=np.full(count, logit(opacity)),
        seg_logits=seg,
        block_ids=np.full(count, block_id, dtype=np.int32),
        marks=np.full(count, Mark.ORIGINAL, dtype=np.uint8),
        trainable=np.ones(count, dtype=bool),
        rng_seed=seed,
    )


_FIELDS = (
    "positions",
    "log_scales",
    "rotations",
    "colors",
    "opacity_logits",
    "seg_logits",
    "block_ids",
    "marks",
)


def scene_equal(a: Scene, b: Scene, fields=_FIELDS) -> bool:
    """Bitwise equality over kernel fields (freeze state excluded)."""
    if len(a) != len(b):
        return False
    return all(np.array_equal(getattr(a, f), getattr(b, f)) for f in fields)


def scene_hash(scene: Scene) -> str:
    """Content hash of all kernel fields; used to pair render tapes with the
    exact scene state they were produced from."""
    h = hashlib.sha256()
    for f in _FIELDS:
        arr = getattr(scene, f)
        h.update(f.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()
