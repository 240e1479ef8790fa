"""
Tests for the training loss terms
"""
import math
import unittest
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import InvalidDepth, InvalidParam, NonFinite, NotNormalized, ShapeMismatch
from src.geometry import Pose, Rotation
from src.losses import (
    focal_binary_soft,
    focal_binary_soft_grad,
    focal_multiclass,
    focal_multiclass_grad,
    mask_bce,
    mask_bce_grad,
    numerical_gradient,
    regression_loss_rot,
    regression_loss_trans,
    total_loss,
)
from src.models import BBox, CameraIntrinsics, LossWeights, SiteCoords
from src.symlabels import Mesh, RotationSoftLabels, SymmetrySet, box_mesh, pose_distance_symm


class TestFocalBinary(unittest.TestCase):
    """Soft-label binary focal loss over rotation classes."""

    def test_single_positive(self):
        self.assertAlmostEqual(focal_binary_soft([0.9], [1.0]), -100 * 0.01 * math.log(0.9), places=12)
        self.assertAlmostEqual(focal_binary_soft([0.9], [1.0]), 0.10536, places=5)

    def test_accepts_label_object(self):
        labels = RotationSoftLabels(np.array([1.0, 0.0]), sigma=1.0)
        self.assertAlmostEqual(focal_binary_soft([0.9, 0.0], labels), focal_binary_soft([0.9], [1.0]), places=9)

    def test_negative_vanishes(self):
        self.assertLess(focal_binary_soft([1e-9], [0.0]), 1e-12)

    def test_monotone(self):
        p = np.linspace(0.05, 0.95, 19)
        pos = [focal_binary_soft([v], [1.0]) for v in p]
        neg = [focal_binary_soft([v], [0.0]) for v in p]
        self.assertTrue(np.all(np.diff(pos) < 0))
        self.assertTrue(np.all(np.diff(neg) > 0))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.uniform(0.1, 0.9, 6)
            l = rng.uniform(0.0, 1.0, 6)
            expected = numerical_gradient(lambda x: focal_binary_soft(x, l), p)
            np.testing.assert_allclose(focal_binary_soft_grad(p, l), expected, rtol=1e-4, atol=1e-8)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            focal_binary_soft([0.5, 0.5], [1.0])


class TestFocalMulticlass(unittest.TestCase):
    """Multi-class focal loss over translation bins."""

    def test_one_hot(self):
        p = np.array([0.1, 0.8, 0.1])
        self.assertAlmostEqual(focal_multiclass(p, [0, 1, 0]), 0.04 * -math.log(0.8), places=12)
        self.assertAlmostEqual(focal_multiclass(p, [0, 1, 0]), 0.008926, places=6)

    def test_certain_prediction(self):
        self.assertLess(focal_multiclass([0.0, 1.0], [0, 1]), 1e-12)

    def test_not_normalized(self):
        with self.assertRaises(NotNormalized):
            focal_multiclass([0.5, 0.6], [0, 1])
        self.assertGreater(focal_multiclass([0.5, 0.6], [0, 0.5], validate=False), 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = rng.dirichlet(np.ones(5))
            l = np.exp(-0.5 * (np.arange(5) - rng.uniform(0, 4)) ** 2)
            expected = numerical_gradient(lambda x: focal_multiclass(x, l, validate=False), p)
            np.testing.assert_allclose(focal_multiclass_grad(p, l), expected, rtol=1e-4, atol=1e-8)


class TestRegressionLosses(unittest.TestCase):
    """Disentangled rotation and translation terms."""

    def setUp(self):
        self.mesh = box_mesh(100, 60, 40)
        self.gt = Pose(Rotation([0.8, 0.2, -0.4, 0.4]), [0, 0, 1000])

    def test_rotation_zero_at_gt(self):
        coarse = Rotation.from_axis_angle([1, 0, 0], 0.3)
        delta = self.gt.rotation @ coarse.inverse()
        self.assertLess(regression_loss_rot(delta, coarse, self.gt, self.mesh), 1e-12)

    def test_rotation_symmetric(self):
        flip = Rotation.from_axis_angle([0, 0, 1], math.pi)
        sym = SymmetrySet([(flip, (0, 0, 0))])
        loss = regression_loss_rot(self.gt.rotation @ flip, Rotation.identity(), self.gt, self.mesh, sym)
        self.assertLess(loss, 1e-12)

    def test_rotation_matches_pose_distance(self):
        delta = Rotation.from_axis_angle([0, 1, 0], 0.2)
        coarse = Rotation.from_axis_angle([1, 0, 0], 0.3)
        expected = pose_distance_symm(self.gt.with_rotation(delta @ coarse), self.gt, self.mesh)
        self.assertEqual(regression_loss_rot(delta, coarse, self.gt, self.mesh), expected)


class TestTranslationLoss(unittest.TestCase):
    """regression_loss_trans on a point-mass object."""

    def setUp(self):
        self.point = Mesh([[0.0, 0.0, 0.0]])
        self.cam = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240)
        self.bbox = BBox(center_x=320, center_y=240, size=100)
        self.gt = Pose(Rotation.identity(), [0, 0, 1000])

    def loss(self, component, site):
        return regression_loss_trans(component, site, self.gt, self.bbox, self.cam, self.point)

    def test_xy_offset(self):
        # tau_x = 0.01 moves the projection by 1 px, 2 mm at 1 m
        self.assertAlmostEqual(self.loss("xy", SiteCoords(tau_x=0.01, tau_y=0.0, tau_z=9.0)), 1.5, places=9)

    def test_z_offset(self):
        self.assertAlmostEqual(self.loss("z", SiteCoords(tau_x=0.3, tau_y=0.3, tau_z=2.01)), 4.5, places=9)

    def test_zero_at_gt(self):
        site = SiteCoords(tau_x=0.0, tau_y=0.0, tau_z=2.0)
        self.assertLess(self.loss("xy", site) + self.loss("z", site), 1e-12)

    def test_invalid_depth(self):
        with self.assertRaises(InvalidDepth):
            self.loss("z", SiteCoords(tau_x=0.0, tau_y=0.0, tau_z=-0.5))

    def test_unknown_component(self):
        with self.assertRaises(InvalidParam):
            self.loss("xz", SiteCoords(tau_x=0.0, tau_y=0.0, tau_z=2.0))


class TestMaskBce(unittest.TestCase):
    """mask_bce."""

    def test_perfect(self):
        gt = np.array([[0.0, 1.0], [1.0, 0.0]])
        self.assertLess(mask_bce(gt, gt), 1e-5)

    def test_half(self):
        gt = (np.arange(16).reshape(4, 4) % 2).astype(float)
        self.assertAlmostEqual(mask_bce(np.full((4, 4), 0.5), gt), math.log(2), places=12)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            p = rng.uniform(0.1, 0.9, (3, 4))
            g = (rng.random((3, 4)) > 0.5).astype(float)
            expected = numerical_gradient(lambda x: mask_bce(x, g), p)
            np.testing.assert_allclose(mask_bce_grad(p, g), expected, rtol=1e-4, atol=1e-8)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            mask_bce(np.zeros((2, 2)), np.zeros((2, 3)))


class TestTotalLoss(unittest.TestCase):
    """total_loss."""

    def test_published_weights(self):
        self.assertAlmostEqual(total_loss([1.0] * 7), 16.25, places=12)
        self.assertEqual(total_loss([0.0] * 7), 0.0)

    def test_linear(self):
        terms = np.array([0.3, 1.2, 0.7, 4.0, 2.5, 9.0, 0.1])
        self.assertAlmostEqual(total_loss(2 * terms), 2 * total_loss(terms), places=12)

    def test_custom_weights(self):
        w = LossWeights(w_cls_rot=1, w_cls_xy=0, w_cls_z=0, w_reg_rot=0, w_reg_xy=0, w_reg_z=0, w_mask=0)
        self.assertEqual(total_loss([3, 1, 1, 1, 1, 1, 1], w), 3.0)

    def test_errors(self):
        with self.assertRaises(NonFinite):
            total_loss([1, 1, 1, float("nan"), 1, 1, 1])
        with self.assertRaises(ShapeMismatch):
            total_loss([1, 1, 1])


if __name__ == "__main__":
    unittest.main()
