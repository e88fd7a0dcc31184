import numpy as np
import pytest

from hcog.camera import CameraView
from hcog.rasterizer import RenderOptions, backward, render
from hcog.rng import stream
from hcog.scene import Mark, Scene, logit

SEG_ORACLE_DILATE = 1.5  # synthetic masks cover the selected kernels' fringes


def build_scene(
    n: int,
    seed: int,
    radius: float = 0.8,
    scale_log_mean: float = -2.0,
    anisotropic: bool = True,
    opacity_range=(0.2, 0.95),
    seed_path=("fixture",),
) -> Scene:
    """Random well-conditioned scene for renderer tests."""
    rng = stream(seed, *seed_path)
    positions = rng.uniform(-radius, radius, (n, 3))
    log_scales = rng.normal(scale_log_mean, 0.4 if anisotropic else 0.0, (n, 3))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    colors = rng.random((n, 3))
    opac = rng.uniform(*opacity_range, n)
    return Scene(
        positions=positions,
        log_scales=log_scales,
        rotations=quats,
        colors=colors,
        opacity_logits=logit(opac),
        seg_logits=rng.normal(0.0, 1.0, n),
        block_ids=np.zeros(n, dtype=np.int32),
        marks=np.full(n, Mark.ORIGINAL, dtype=np.uint8),
        trainable=np.ones(n, dtype=bool),
        rng_seed=seed,
    )


def random_view(seed: int, width: int = 32, height: int = 32) -> CameraView:
    rng = stream(seed, "fixture-view")
    return CameraView(
        azimuth=float(rng.uniform(0, 360)),
        elevation=float(rng.uniform(-45, 45)),
        radius=float(rng.uniform(2.0, 3.5)),
        width=width,
        height=height,
    )


# Cutoffs are disabled for gradient checks so the rendered function is smooth
# in every parameter; cutoff handling is covered by the reference-renderer
# equivalence tests instead.
FD_OPTIONS = RenderOptions(alpha_cutoff=None, sigma_cutoff=None)

_GROUP_ATTRS = {
    "position": "positions",
    "log_scale": "log_scales",
    "rotation": "rotations",
    "color": "colors",
    "opacity_logit": "opacity_logits",
    "seg_logit": "seg_logits",
}


def fd_gradient_errors(scene: Scene, view: CameraView, seed: int, h: float = 1e-4) -> dict[str, float]:
    """Central finite differences of sum(channels * random upstream images)
    against the analytic backward pass; returns worst relative error per
    parameter group."""
    rng = stream(seed, "fd-upstream")
    gC = rng.normal(size=(view.height, view.width, 3))
    gP = rng.normal(size=(view.height, view.width))
    gA = rng.normal(size=(view.height, view.width))

    out = render(scene, view, FD_OPTIONS)
    analytic = backward(scene, view, out, color_grad=gC, prob_grad=gP, alpha_grad=gA)

    def loss(sc: Scene) -> float:
        o = render(sc, view, FD_OPTIONS)
        return float((o.color * gC).sum() + (o.prob * gP).sum() + (o.alpha * gA).sum())

    errors: dict[str, float] = {}
    for group, attr in _GROUP_ATTRS.items():
        ga = getattr(analytic, group)
        worst = 0.0
        arr = getattr(scene, attr)
        flat_shape = arr.shape
        for k in range(flat_shape[0]):
            axes = range(flat_shape[1]) if arr.ndim == 2 else [None]
            for a in axes:
                idx = (k, a) if a is not None else (k,)
                sc2 = scene.copy()
                arr2 = getattr(sc2, attr)
                orig = arr2[idx]
                arr2[idx] = orig + h
                lp = loss(sc2)
                arr2[idx] = orig - h
                lm = loss(sc2)
                # parameters are stored float32: divide by the realized step
                realized = np.float64(np.float32(orig + h)) - np.float64(np.float32(orig - h))
                fd = (lp - lm) / realized
                an = ga[idx]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
                worst = max(worst, rel)
        errors[group] = worst
    return errors


@pytest.fixture
def rng():
    return stream(1234, "test")


def ball_positions(rng: np.random.Generator, n: int, center, radius: float) -> np.ndarray:
    directions = rng.standard_normal((n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(n) ** (1.0 / 3.0)
    return np.asarray(center, dtype=np.float64) + directions * radii[:, None]


def cluster_scene(clusters, scale: float = 0.05, opacity: float = 0.9, seed: int = 0) -> Scene:
    """Scene made of uniform balls of kernels; ``clusters`` is a list of
    (count, center, ball_radius, mark, block_id)."""
    rng = stream(seed, "cluster-fixture")
    positions = []
    marks = []
    blocks = []
    for count, center, ball_radius, mark, block_id in clusters:
        positions.append(ball_positions(rng, count, center, ball_radius))
        marks.append(np.full(count, mark, dtype=np.uint8))
        blocks.append(np.full(count, block_id, dtype=np.int32))
    positions = np.concatenate(positions)
    n = len(positions)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    return Scene(
        positions=positions,
        log_scales=np.full((n, 3), np.log(scale)),
        rotations=rotations,
        colors=rng.random((n, 3)),
        opacity_logits=np.full(n, logit(opacity)),
        seg_logits=np.zeros(n),
        block_ids=np.concatenate(blocks),
        marks=np.concatenate(marks),
        trainable=np.ones(n, dtype=bool),
        rng_seed=seed,
    )


def two_cluster_scene(seed: int = 0, per_cluster: int = 40) -> tuple[Scene, np.ndarray]:
    """Top and bottom kernel balls, separated far beyond their footprints;
    ground truth selects the top one."""
    scene = cluster_scene(
        [
            (per_cluster, (0, 0, 0.6), 0.15, Mark.ORIGINAL, 0),
            (per_cluster, (0, 0, -0.6), 0.15, Mark.ORIGINAL, 0),
        ],
        seed=seed,
    )
    truth = np.arange(len(scene)) < per_cluster
    return scene, truth


def elimination_fixture(seed: int = 0) -> tuple[Scene, np.ndarray]:
    """Post-extension state: 50 untouchable originals, 200 extension kernels
    of which the 120 in the top ball are the genuine new part."""
    scene = cluster_scene(
        [
            (50, (0, 0, 0), 0.2, Mark.ORIGINAL, 0),
            (120, (0, 0, 0.8), 0.25, Mark.EXTENDED, 1),
            (80, (0, 0, -0.8), 0.25, Mark.EXTENDED, 1),
        ],
        scale=0.06,
        seed=seed,
    )
    truth = np.zeros(len(scene), dtype=bool)
    truth[50:170] = True
    return scene, truth
