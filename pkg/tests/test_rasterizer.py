import numpy as np
import pytest

from hcog.camera import CameraView
from hcog.rasterizer import (
    RenderOptions,
    TapeMismatchError,
    backward,
    render,
    render_brute_force,
    render_silhouette,
)
from hcog.rng import stream
from hcog.scene import Mark, Scene, logit

from conftest import build_scene, random_view


def empty_scene() -> Scene:
    return Scene(
        positions=np.empty((0, 3)),
        log_scales=np.empty((0, 3)),
        rotations=np.empty((0, 4)),
        colors=np.empty((0, 3)),
        opacity_logits=np.empty(0),
        seg_logits=np.empty(0),
        block_ids=np.empty(0, dtype=np.int32),
        marks=np.empty(0, dtype=np.uint8),
        trainable=np.empty(0, dtype=bool),
    )


def axis_scene(entries) -> Scene:
    """Kernels placed along the camera axis; entries are
    (x_position, color, opacity)."""
    n = len(entries)
    positions = np.array([[e[0], 0.0, 0.0] for e in entries])
    colors = np.array([e[1] for e in entries], dtype=np.float64)
    opac = np.array([e[2] for e in entries])
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return Scene(
        positions=positions,
        log_scales=np.full((n, 3), np.log(0.3)),
        rotations=rot,
        colors=colors,
        opacity_logits=logit(opac),
        seg_logits=np.zeros(n),
        block_ids=np.zeros(n, dtype=np.int32),
        marks=np.full(n, Mark.ORIGINAL, dtype=np.uint8),
        trainable=np.ones(n, dtype=bool),
    )


# odd image size puts a pixel center exactly on the optical axis
CENTER_VIEW = CameraView(azimuth=0.0, elevation=0.0, radius=2.0, width=33, height=33)
CENTER = (16, 16)


def test_empty_scene_renders_zeros():
    out = render(empty_scene(), CENTER_VIEW)
    assert not out.color.any()
    assert not out.prob.any()
    assert not out.alpha.any()


def test_single_kernel_center_pixel():
    scene = axis_scene([(0.0, (1.0, 0.0, 0.0), 0.8)])
    out = render(scene, CENTER_VIEW)
    assert np.allclose(out.color[CENTER], [0.8, 0.0, 0.0], atol=1e-7)
    assert np.isclose(out.alpha[CENTER], 0.8, atol=1e-7)


def test_two_kernel_compositing():
    scene = axis_scene([(0.2, (1.0, 0.0, 0.0), 0.5), (-0.2, (0.0, 0.0, 1.0), 0.5)])
    out = render(scene, CENTER_VIEW)
    assert np.allclose(out.color[CENTER], [0.5, 0.0, 0.25], atol=1e-6)
    assert np.isclose(out.alpha[CENTER], 0.75, atol=1e-6)


@pytest.mark.parametrize("seed", range(20))
def test_tiled_matches_brute_force(seed):
    rng = stream(seed, "bf-size")
    n = int(rng.integers(1, 65))
    scene = build_scene(n, seed=seed, seed_path=("bf-scene",))
    view = random_view(seed)
    out = render(scene, view)
    ref = render_brute_force(scene, view)
    for channel in ("color", "prob", "alpha", "depth"):
        assert np.abs(getattr(out, channel) - ref[channel]).max() <= 1e-5


def test_weights_sum_to_alpha_and_bounded():
    for seed in range(10):
        scene = build_scene(40, seed=seed, opacity_range=(0.5, 0.999))
        out = render(scene, random_view(seed))
        assert out.alpha.max() <= 1.0 + 1e-9
        assert out.alpha.min() >= 0.0
        assert (out.prob <= out.alpha + 1e-6).all()
        assert out.color.min() >= 0.0 and out.color.max() <= 1.0 + 1e-9


def test_render_deterministic_bitwise():
    scene = build_scene(30, seed=4)
    view = random_view(4)
    a = render(scene, view)
    b = render(scene, view)
    assert np.array_equal(a.color, b.color)
    assert np.array_equal(a.prob, b.prob)


def test_worker_count_does_not_change_bits():
    scene = build_scene(50, seed=5)
    view = random_view(5, width=48, height=48)
    serial = render(scene, view, RenderOptions(workers=1))
    threaded = render(scene, view, RenderOptions(workers=4))
    for channel in ("color", "prob", "alpha", "depth"):
        assert np.array_equal(getattr(serial, channel), getattr(threaded, channel))

    gC = stream(5, "upstream").normal(size=(48, 48, 3))
    g1 = backward(scene, view, serial, color_grad=gC)
    g4 = backward(scene, view, threaded, color_grad=gC)
    assert np.array_equal(g1.position, g4.position)
    assert np.array_equal(g1.rotation, g4.rotation)


def test_tape_mismatch_rejected():
    scene = build_scene(8, seed=6)
    view = random_view(6)
    out = render(scene, view)
    scene.colors[0, 0] += 0.1
    with pytest.raises(TapeMismatchError):
        backward(scene, view, out, color_grad=np.zeros((32, 32, 3)))


def test_all_channels_export_to_png(tmp_path):
    from hcog.images import load_png, save_png

    scene = build_scene(20, seed=10, opacity_range=(0.5, 0.9))
    out = render(scene, random_view(10))
    save_png(out.color, tmp_path / "color.png")
    save_png(out.prob, tmp_path / "prob.png")
    save_png(out.alpha, tmp_path / "alpha.png")
    color = load_png(tmp_path / "color.png")
    assert color.shape == (32, 32, 3)
    assert np.abs(color.astype(float) / 255.0 - out.color).max() <= 1 / 255.0 + 1e-9
    for name, channel in (("prob", out.prob), ("alpha", out.alpha)):
        gray = load_png(tmp_path / f"{name}.png")
        assert gray.shape == (32, 32)
        assert np.abs(gray.astype(float) / 255.0 - channel).max() <= 1 / 255.0 + 1e-9


class TestSilhouette:
    def test_empty_predicate(self):
        scene = build_scene(10, seed=7)
        mask = render_silhouette(scene, np.zeros(10, dtype=bool), random_view(7))
        assert not mask.any()

    def test_full_predicate_equals_thresholded_alpha(self):
        scene = build_scene(10, seed=8, opacity_range=(0.6, 0.95))
        view = random_view(8)
        mask = render_silhouette(scene, np.ones(10, dtype=bool), view)
        alpha = render(scene, view).alpha
        assert np.array_equal(mask, alpha >= 0.5)

    def test_cluster_mask_matches_analytic_disk(self):
        # two stacks of identical isotropic kernels at +z and -z; stacked
        # alpha is 1 - (1 - a')^m, so the 0.5 contour of the +z silhouette
        # is a disk of closed-form radius around its projected center
        m = 20
        opacity = 0.95
        positions = np.concatenate([np.tile([0.0, 0.0, 0.5], (m, 1)), np.tile([0.0, 0.0, -0.5], (m, 1))])
        n = 2 * m
        rot = np.zeros((n, 4))
        rot[:, 0] = 1.0
        scene = Scene(
            positions=positions,
            log_scales=np.full((n, 3), np.log(0.12)),
            rotations=rot,
            colors=np.full((n, 3), 0.7),
            opacity_logits=np.full(n, logit(opacity)),
            seg_logits=np.zeros(n),
            block_ids=np.zeros(n, dtype=np.int32),
            marks=np.full(n, Mark.ORIGINAL, dtype=np.uint8),
            trainable=np.ones(n, dtype=bool),
        )
        view = CameraView(azimuth=30.0, elevation=5.0, radius=2.6, width=64, height=64)
        mask = render_silhouette(scene, np.arange(n) < m, view)

        from hcog.camera import project
        from hcog.scene import GaussianKernel

        proj = project(
            GaussianKernel(
                position=np.array([0.0, 0.0, 0.5]),
                scale=np.full(3, 0.12),
                rotation=np.array([1.0, 0, 0, 0]),
                color=np.ones(3),
                opacity=opacity,
                seg_prob=0.5,
            ),
            view,
        )
        # per-kernel alpha at the 0.5 crossing of the stack
        a_cross = 1.0 - 0.5 ** (1.0 / m)
        sigma_px = np.sqrt(0.5 * (proj.cov[0, 0] + proj.cov[1, 1]))
        r_px = sigma_px * np.sqrt(2.0 * np.log(opacity / a_cross))
        ys, xs = np.meshgrid(np.arange(64) + 0.5, np.arange(64) + 0.5, indexing="ij")
        disk = (xs - proj.center[0]) ** 2 + (ys - proj.center[1]) ** 2 <= r_px**2
        inter = (mask & disk).sum()
        union = (mask | disk).sum()
        assert inter / union >= 0.9
