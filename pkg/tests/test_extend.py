import numpy as np
import pytest

from hcog.camera import CameraConfig
from hcog.extend import ExtensionConfig, extend, label_eliminate
from hcog.rng import stream
from hcog.scene import Mark, covariance, scene_equal
from hcog.segmentation import EmptySelectionWarning, SegmentationConfig, SyntheticMaskOracle

from conftest import SEG_ORACLE_DILATE, build_scene, elimination_fixture

CAMERA = CameraConfig(width=64, height=64)
# 25 Adam steps at lr 0.05 move a logit by at most 1.25, so the quick config
# pairs the shorter budget with a proportionally lower threshold
QUICK = SegmentationConfig(iterations=25, threshold=0.6)


class TestExtend:
    def test_copied_fields_bit_equal_to_parent(self):
        scene = build_scene(10, seed=0)
        before = scene.copy()
        rng = stream(0, "ext")
        new = extend(scene, ExtensionConfig(count=50), rng, block_id=1)
        assert len(scene) == 60
        assert (scene.marks[new] == Mark.EXTENDED).all()
        assert (scene.block_ids[new] == 1).all()

        # recover each child's parent by matching the copied color rows
        for child in new:
            matches = np.nonzero((before.colors == scene.colors[child]).all(axis=1))[0]
            assert len(matches) >= 1
            parent = matches[0]
            assert np.array_equal(scene.log_scales[child], before.log_scales[parent])
            assert np.array_equal(scene.rotations[child], before.rotations[parent])
            assert scene.opacity_logits[child] == before.opacity_logits[parent]

    def test_existing_kernels_untouched_and_frozen(self):
        scene = build_scene(12, seed=1)
        before = scene.copy()
        extend(scene, ExtensionConfig(), stream(1, "ext"))
        assert scene_equal(scene.subset(np.arange(12)), before)
        assert not scene.trainable[:12].any()
        assert scene.trainable[12:].all()

    def test_default_count_doubles_scene(self):
        scene = build_scene(17, seed=2)
        new = extend(scene, ExtensionConfig(), stream(2, "ext"))
        assert len(new) == 17
        assert len(scene) == 34

    def test_zero_perturbation_tiny_parent_collapses_to_parent(self):
        scene = build_scene(1, seed=3)
        scene.log_scales[:] = np.log(1e-6)  # parent ellipsoid shrunk to a point
        new = extend(scene, ExtensionConfig(count=8, perturb_sigma=0.0), stream(3, "ext"))
        assert np.allclose(scene.positions[new], scene.positions[0], atol=1e-5)

    def test_moment_matching_single_parent(self):
        scene = build_scene(1, seed=4)
        scene.log_scales[0] = np.log([0.05, 0.08, 0.03])
        scene.rotations[0] = [1.0, 0.0, 0.0, 0.0]
        parent_pos = scene.positions[0].astype(np.float64)
        n = 10_000
        new = extend(scene, ExtensionConfig(count=n, perturb_sigma=0.01), stream(4, "ext"))
        samples = scene.positions[new].astype(np.float64)
        s2 = np.exp(2 * scene.log_scales[0].astype(np.float64))
        expected_var = s2 + 0.01**2
        sigma = np.sqrt(expected_var)
        mean_err = np.abs(samples.mean(axis=0) - parent_pos)
        assert (mean_err <= 4.0 * sigma / np.sqrt(n)).all()
        var = samples.var(axis=0)
        assert (np.abs(var - expected_var) <= 0.05 * expected_var).all()

    def test_errors(self):
        scene = build_scene(4, seed=5)
        with pytest.raises(ValueError, match="count"):
            ExtensionConfig(count=0)
        scene.marks[0] = Mark.EXTENDED
        with pytest.raises(ValueError, match="EXTENDED"):
            extend(scene, ExtensionConfig(), stream(5, "ext"))


class TestLabelEliminate:
    def test_all_marked_keeps_everything(self):
        scene, truth = elimination_fixture(seed=0)
        n_before = len(scene)

        class EverythingOracle:
            def __call__(self, image, query, *, view=None, scene=None):
                return np.ones(image.shape[:2], dtype=bool)

        # full iteration budget: deeply buried kernels need the whole run to
        # clear the 0.9 selection threshold even with an all-ones mask
        removed = label_eliminate(scene, ["hat"], EverythingOracle(), SegmentationConfig(), stream(0, "e"), CAMERA)
        assert removed == 0
        assert len(scene) == n_before
        assert not (scene.marks == Mark.EXTENDED).any()

    def test_none_marked_removes_all_extended(self):
        scene, truth = elimination_fixture(seed=1)
        originals = scene.subset(scene.marks == Mark.ORIGINAL).copy()

        class NothingOracle:
            def __call__(self, image, query, *, view=None, scene=None):
                return np.zeros(image.shape[:2], dtype=bool)

        with pytest.warns(EmptySelectionWarning):
            removed = label_eliminate(scene, ["hat"], NothingOracle(), QUICK, stream(1, "e"), CAMERA)
        assert removed == 200
        assert len(scene) == 50
        assert scene_equal(scene, originals)

    def test_set_algebra_on_ground_truth_fixture(self):
        scene, truth = elimination_fixture(seed=0)
        before = scene.copy()
        oracle = SyntheticMaskOracle(lambda s, q: truth[: len(s)], dilate=SEG_ORACLE_DILATE)
        removed = label_eliminate(
            scene, ["hat"], oracle, SegmentationConfig(), stream(0, "seg"), CAMERA
        )
        assert removed == 80
        assert len(scene) == 170
        assert (scene.marks[:50] == Mark.ORIGINAL).all()
        assert (scene.marks[50:] == Mark.NEW_PART).all()
        # original kernels bit-identical, including their seg logits
        assert scene_equal(scene.subset(np.arange(50)), before.subset(np.arange(50)))
        assert np.array_equal(scene.seg_logits[:50], before.seg_logits[:50])
        # survivors are exactly the ground-truth new-part kernels
        assert np.array_equal(scene.positions[50:], before.positions[50:170])

    def test_no_extended_kernels_is_an_error(self):
        scene = build_scene(5, seed=6)
        with pytest.raises(ValueError, match="EXTENDED"):
            label_eliminate(scene, ["x"], SyntheticMaskOracle(lambda s, q: None), QUICK, stream(6, "e"), CAMERA)

    def test_extend_then_reject_all_is_identity(self):
        scene = build_scene(20, seed=7)
        before = scene.copy()

        class NothingOracle:
            def __call__(self, image, query, *, view=None, scene=None):
                return np.zeros(image.shape[:2], dtype=bool)

        extend(scene, ExtensionConfig(), stream(7, "ext"))
        with pytest.warns(EmptySelectionWarning):
            label_eliminate(scene, ["part"], NothingOracle(), QUICK, stream(7, "e"), CAMERA)
        assert scene_equal(scene, before)
