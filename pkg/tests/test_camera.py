import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from hcog.camera import (
    CameraConfig,
    CameraView,
    camera_pose,
    project,
    sample_view,
    view_prompt,
)
from hcog.rng import stream
from hcog.scene import GaussianKernel

from conftest import build_scene


def make_kernel(position, scale=0.1, rotation=(1.0, 0, 0, 0)) -> GaussianKernel:
    return GaussianKernel(
        position=np.asarray(position, dtype=np.float64),
        scale=np.full(3, scale) if np.isscalar(scale) else np.asarray(scale),
        rotation=np.asarray(rotation, dtype=np.float64),
        color=np.ones(3) * 0.5,
        opacity=0.8,
        seg_prob=0.5,
    )


class TestSampling:
    def test_elevation_and_azimuth_bounds(self):
        rng = stream(0, "views")
        config = CameraConfig(radius=2.0)
        elevations = []
        azimuths = []
        for _ in range(100_000):
            v = sample_view(rng, config)
            elevations.append(v.elevation)
            azimuths.append(v.azimuth)
        elevations = np.asarray(elevations)
        azimuths = np.asarray(azimuths)
        assert -45.0 <= elevations.min() <= -44.5
        assert 44.5 <= elevations.max() <= 45.0
        assert azimuths.min() >= 0.0 and azimuths.max() < 360.0

    def test_azimuth_histogram_uniform(self):
        rng = stream(1, "views")
        config = CameraConfig(radius=2.0)
        n = 100_000
        azimuths = np.array([sample_view(rng, config).azimuth for _ in range(n)])
        counts, _ = np.histogram(azimuths, bins=36, range=(0.0, 360.0))
        p = 1.0 / 36.0
        sigma = np.sqrt(n * p * (1 - p))
        assert (np.abs(counts - n * p) <= 3.0 * sigma).all()

    def test_fixed_seed_repeats(self):
        config = CameraConfig(radius=2.0)
        v1 = sample_view(stream(7, "v"), config)
        v2 = sample_view(stream(7, "v"), config)
        assert v1 == v2

    def test_radius_from_scene_bounding_sphere(self):
        scene = build_scene(32, seed=2, radius=0.5)
        rng = stream(3, "v")
        v = sample_view(rng, CameraConfig(), scene)
        assert np.isclose(v.radius, scene.bounding_radius() * 1.8)


class TestProjection:
    def test_center_kernel_projects_to_image_center(self):
        view = CameraView(azimuth=0.0, elevation=0.0, radius=3.0, width=64, height=48)
        p = project(make_kernel([0.0, 0.0, 0.0]), view)
        assert np.allclose(p.center, [32.0, 24.0], atol=1e-9)
        assert np.isclose(p.depth, 3.0)

    def test_doubling_radius_quarters_covariance(self):
        near = CameraView(azimuth=33.0, elevation=10.0, radius=2.0)
        far = CameraView(azimuth=33.0, elevation=10.0, radius=4.0)
        k = make_kernel([0.0, 0.0, 0.0], scale=0.05)
        cov_near = project(k, near).cov
        cov_far = project(k, far).cov
        ratio = np.trace(cov_far) / np.trace(cov_near)
        assert abs(ratio - 0.25) < 0.25 * 0.05

    @pytest.mark.parametrize("seed", range(8))
    def test_center_matches_homogeneous_matrix_oracle(self, seed):
        rng = stream(seed, "proj-oracle")
        view = CameraView(
            azimuth=float(rng.uniform(0, 360)),
            elevation=float(rng.uniform(-45, 45)),
            radius=float(rng.uniform(2, 4)),
            width=128,
            height=96,
        )
        pos = rng.uniform(-0.5, 0.5, 3)
        got = project(make_kernel(pos), view).center

        # independent oracle: full 4x4 projection matrix in homogeneous coords
        W, cam_pos = camera_pose(view)
        M = np.eye(4)
        M[:3, :3] = W
        M[:3, 3] = -W @ cam_pos
        f = view.focal
        K = np.array(
            [
                [f, 0, view.width / 2.0, 0],
                [0, f, view.height / 2.0, 0],
                [0, 0, 1, 0],
            ]
        )
        uvw = K @ M @ np.append(pos, 1.0)
        expected = uvw[:2] / uvw[2]
        assert np.abs(got - expected).max() <= 1e-4

    @pytest.mark.parametrize("delta", [17.0, 120.0, 261.0])
    def test_rotation_equivariance_about_up_axis(self, delta):
        rng = stream(5, "equiv")
        pos = rng.uniform(-0.4, 0.4, 3)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        base_view = CameraView(azimuth=40.0, elevation=12.0, radius=2.5)
        k = make_kernel(pos, scale=(0.05, 0.1, 0.02), rotation=q)
        before = project(k, base_view)

        rot = Rotation.from_euler("z", delta, degrees=True)
        pos_r = rot.apply(pos)
        q_scipy = rot * Rotation.from_quat([q[1], q[2], q[3], q[0]])
        xyzw = q_scipy.as_quat()
        k_r = make_kernel(pos_r, scale=(0.05, 0.1, 0.02), rotation=(xyzw[3], *xyzw[:3]))
        view_r = CameraView(azimuth=(40.0 + delta) % 360.0, elevation=12.0, radius=2.5)
        after = project(k_r, view_r)

        assert np.abs(before.center - after.center).max() < 1e-5
        assert np.abs(before.cov - after.cov).max() < 1e-5
        assert abs(before.depth - after.depth) < 1e-9

    def test_behind_camera_rejected(self):
        view = CameraView(azimuth=0.0, elevation=0.0, radius=1.0)
        with pytest.raises(ValueError, match="behind"):
            project(make_kernel([5.0, 0.0, 0.0]), view)

    def test_covariance_floor(self):
        view = CameraView(azimuth=0.0, elevation=0.0, radius=2.0)
        p = project(make_kernel([0.0, 0.0, 0.0], scale=1e-6), view)
        assert np.linalg.eigvalsh(p.cov).min() >= 1e-8 * 0.99


class TestViewPrompt:
    @pytest.mark.parametrize(
        "azimuth,expected",
        [
            (0.0, ", front view"),
            (350.0, ", front view"),
            (95.0, ", side view"),
            (260.0, ", side view"),
            (180.0, ", back view"),
            (140.0, ", back view"),
        ],
    )
    def test_azimuth_quadrants(self, azimuth, expected):
        v = CameraView(azimuth=azimuth, elevation=10.0, radius=2.0)
        assert view_prompt("a red car", v) == "a red car" + expected

    def test_overhead_overrides(self):
        v = CameraView(azimuth=0.0, elevation=72.0, radius=2.0)
        assert view_prompt("a red car", v).endswith(", overhead view")
