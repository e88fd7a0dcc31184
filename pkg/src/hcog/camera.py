"""Pinhole camera on a view sphere: pose sampling, EWA projection of 3D
Gaussians to screen space, and view-conditioned prompt suffixes.

Conventions: world up is +z; the camera orbits ``look_at`` at (azimuth,
elevation, radius) and always looks at it. Camera frame is x-right, y-down,
z-forward, so depth is camera-frame z and image rows grow downward. Pixel
(row i, col j) has screen coordinates (j + 0.5, i + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .scene import GaussianKernel, Scene, covariance, quat_to_rotmat

__all__ = [
    "CameraView",
    "CameraConfig",
    "Projected2D",
    "ZNEAR",
    "camera_pose",
    "sample_view",
    "project",
    "project_scene",
    "view_prompt",
]

ZNEAR = 0.01
COV2D_FLOOR = 1e-8  # added to both eigenvalues of every projected covariance


@dataclass(frozen=True)
class CameraView:
    azimuth: float  # degrees, [0, 360)
    elevation: float  # degrees, [-90, 90]
    radius: float
    fov_y: float = 49.1
    width: int = 64
    height: int = 64
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0 < self.fov_y < 180:
            raise ValueError("fov_y must be in (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def focal(self) -> float:
        return 0.5 * self.height / math.tan(math.radians(self.fov_y) / 2)


@dataclass(frozen=True)
class CameraConfig:
    """Pose-sampling configuration. ``radius=None`` resolves to the scene's
    bounding-sphere radius times ``radius_scale``."""

    radius: float | None = None
    radius_scale: float = 1.8
    fov_y: float = 49.1
    width: int = 64
    height: int = 64
    elevation_range: tuple[float, float] = (-45.0, 45.0)
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class Projected2D:
    center: np.ndarray  # (2,) pixels
    cov: np.ndarray  # (2, 2) pixels^2
    depth: float  # camera-frame z


def camera_pose(view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """World->camera rotation (rows: right, down, forward) and camera position."""
    az = math.radians(view.azimuth)
    el = math.radians(view.elevation)
    look_at = np.asarray(view.look_at, dtype=np.float64)
    direction = np.array(
        [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)], dtype=np.float64
    )
    position = look_at + view.radius * direction
    forward = -direction
    up = np.asarray(view.up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-8:  # camera aligned with up: pick any side axis
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = -np.cross(right, forward)
    W = np.stack([right, down, forward])
    return W, position


def sample_view(rng: np.random.Generator, config: CameraConfig, scene: Scene | None = None) -> CameraView:
    """Draw a pose: azimuth ~ U[0, 360), elevation ~ U over the configured
    range (default [-45, 45])."""
    radius = config.radius
    if radius is None:
        if scene is None:
            raise ValueError("camera radius unset and no scene given to derive it from")
        radius = scene.bounding_radius(config.look_at) * config.radius_scale
    azimuth = float(rng.uniform(0.0, 360.0))
    elevation = float(rng.uniform(*config.elevation_range))
    return CameraView(
        azimuth=azimuth,
        elevation=elevation,
        radius=radius,
        fov_y=config.fov_y,
        width=config.width,
        height=config.height,
        look_at=config.look_at,
    )


def project_scene(scene: Scene, view: CameraView) -> dict[str, np.ndarray]:
    """Vectorized projection of every kernel.

    Returns camera-frame positions ``t``, screen centers, 2x2 covariances,
    depths, the world->camera rotation, per-kernel EWA Jacobians, and the
    in-front mask. The rasterizer's forward and backward passes both consume
    this, so the linearization is computed in exactly one place.
    """
    W, cam_pos = camera_pose(view)
    f = view.focal
    x = scene.positions.astype(np.float64)
    t = (x - cam_pos) @ W.T
    tz = t[:, 2]
    in_front = tz > ZNEAR
    tz_safe = np.where(in_front, tz, 1.0)

    centers = np.empty((len(scene), 2), dtype=np.float64)
    centers[:, 0] = f * t[:, 0] / tz_safe + view.width / 2.0
    centers[:, 1] = f * t[:, 1] / tz_safe + view.height / 2.0

    J = np.zeros((len(scene), 2, 3), dtype=np.float64)
    J[:, 0, 0] = f / tz_safe
    J[:, 0, 2] = -f * t[:, 0] / tz_safe**2
    J[:, 1, 1] = f / tz_safe
    J[:, 1, 2] = -f * t[:, 1] / tz_safe**2

    R = quat_to_rotmat(scene.rotations)
    s = scene.scales()
    B = R * s[:, None, :]  # R @ diag(s)
    sigma = B @ np.swapaxes(B, 1, 2)

    A = J @ W[np.newaxis, :, :]
    cov2d = A @ sigma @ np.swapaxes(A, 1, 2)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    return {
        "W": W,
        "cam_pos": cam_pos,
        "t": t,
        "centers": centers,
        "J": J,
        "R": R,
        "s": s,
        "B": B,
        "sigma": sigma,
        "A": A,
        "cov2d": cov2d,
        "depths": tz,
        "in_front": in_front,
    }


def project(kernel: GaussianKernel, view: CameraView) -> Projected2D:
    """Project one kernel; requires it in front of the camera (z > ZNEAR)."""
    W, cam_pos = camera_pose(view)
    t = W @ (np.asarray(kernel.position, dtype=np.float64) - cam_pos)
    if t[2] <= ZNEAR:
        raise ValueError(f"kernel behind camera: z={t[2]:.4f}")
    f = view.focal
    center = np.array([f * t[0] / t[2] + view.width / 2.0, f * t[1] / t[2] + view.height / 2.0])
    J = np.array(
        [
            [f / t[2], 0.0, -f * t[0] / t[2] ** 2],
            [0.0, f / t[2], -f * t[1] / t[2] ** 2],
        ]
    )
    A = J @ W
    cov = A @ covariance(kernel) @ A.T + COV2D_FLOOR * np.eye(2)
    return Projected2D(center=center, cov=cov, depth=float(t[2]))


def view_prompt(base_text: str, view: CameraView) -> str:
    """Append the view suffix: quadrant by azimuth, overridden to overhead
    above 60 degrees elevation."""
    if view.elevation > 60.0:
        return base_text + ", overhead view"
    az = view.azimuth % 360.0
    if az < 45.0 or az >= 315.0:
        return base_text + ", front view"
    if az < 135.0 or (225.0 <= az < 315.0):
        return base_text + ", side view"
    return base_text + ", back view"


def turntable_views(config: CameraConfig, scene: Scene, azimuths, elevation: float = 15.0) -> list[CameraView]:
    """Fixed-elevation ring of views used for per-block snapshots."""
    radius = config.radius
    if radius is None:
        radius = scene.bounding_radius(config.look_at) * config.radius_scale
    return [
        replace(
            CameraView(
                azimuth=float(az),
                elevation=elevation,
                radius=radius,
                fov_y=config.fov_y,
                width=config.width,
                height=config.height,
                look_at=config.look_at,
            )
        )
        for az in azimuths
    ]
