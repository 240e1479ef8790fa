"""
Basic tests for PoseKit
"""
import unittest
import sys
from pathlib import Path

# Add repo root to path
sys.path.insert(0, str(Path(__file__).parent.parent))


class TestBasicFunctionality(unittest.TestCase):
    """Basic functionality tests."""

    def test_imports(self):
        """Test that all modules can be imported."""
        try:
            from src import geometry
            from src import so3grid
            from src import symlabels
            from src import losses
            from src import correlation
            from src import render
            from src import metrics
            from src import bopio
            from src import cli
            from src import models
            self.assertTrue(True, "All modules imported successfully")
        except ImportError as e:
            self.fail(f"Import failed: {e}")

    def test_version(self):
        """Test package version string."""
        from src import __version__

        self.assertEqual(__version__, "1.0.0")

    def test_settings_defaults(self):
        """Test settings defaults when no POSEKIT_* variables are set."""
        import os
        from unittest import mock
        from src.config import get_settings

        clean = {k: v for k, v in os.environ.items() if not k.startswith("POSEKIT_")}
        with mock.patch.dict(os.environ, clean, clear=True):
            settings = get_settings()
        self.assertEqual(settings.sigma_frac, 0.03)
        self.assertEqual(settings.symmetry_steps, 36)
        self.assertEqual(settings.max_vertices, 10000)
        self.assertEqual(settings.crop_size, 256)
        self.assertGreaterEqual(settings.jobs, 1)

    def test_settings_from_environment(self):
        """Test that environment variables override settings."""
        import os
        from unittest import mock
        from src.config import get_settings

        with mock.patch.dict(os.environ, {"POSEKIT_JOBS": "3", "POSEKIT_SYMMETRY_STEPS": "12"}):
            settings = get_settings()
        self.assertEqual(settings.jobs, 3)
        self.assertEqual(settings.symmetry_steps, 12)

    def test_pydantic_models(self):
        """Test Pydantic models."""
        from pydantic import ValidationError
        from src.models import BBox, CameraIntrinsics, LossWeights, PyramidSpec, SiteCoords

        cam = CameraIntrinsics(fx=500, fy=500, cx=320, cy=240)
        self.assertEqual(cam.width, 640)  # default value
        self.assertEqual(cam.height, 480)
        self.assertAlmostEqual(cam.focal, 500.0)

        with self.assertRaises(ValidationError):
            CameraIntrinsics(fx=0, fy=500, cx=320, cy=240)
        with self.assertRaises(ValidationError):
            BBox(center_x=0, center_y=0, size=-1)
        with self.assertRaises(ValidationError):
            SiteCoords(tau_x=float("nan"), tau_y=0, tau_z=1)

        weights = LossWeights()
        self.assertAlmostEqual(float(weights.as_vector().sum()), 16.25)
        with self.assertRaises(ValidationError):
            LossWeights(w_plus=0)

        spec = PyramidSpec.canonical()
        self.assertEqual([s.in_channels for s in spec.scales], [186, 377, 505])
        self.assertEqual([s.resolution for s in spec.scales], [64, 32, 16])

    def test_camera_from_K(self):
        """Test intrinsics decoded from a row-major 3x3 matrix."""
        from src.models import CameraIntrinsics

        cam = CameraIntrinsics.from_K([600, 0, 325, 0, 610, 245, 0, 0, 1], width=1280, height=720)
        self.assertEqual((cam.fx, cam.fy, cam.cx, cam.cy), (600, 610, 325, 245))
        self.assertEqual(cam.K[1, 2], 245)
        self.assertEqual(cam.width, 1280)

    def test_error_hierarchy(self):
        """Test exception hierarchy and parse locations."""
        from src.errors import (
            FieldCount, InvalidWindow, MissingCamera, ParseError, PoseKitError, SpecViolation,
        )

        self.assertTrue(issubclass(InvalidWindow, PoseKitError))
        self.assertTrue(issubclass(InvalidWindow, ValueError))
        self.assertTrue(issubclass(FieldCount, ParseError))
        self.assertTrue(issubclass(MissingCamera, PoseKitError))

        err = ParseError("bad row", "results.csv row 3")
        self.assertEqual(err.location, "results.csv row 3")
        self.assertIn("row 3", str(err))

        violation = SpecViolation(1, 377, 360)
        self.assertEqual((violation.scale, violation.expected, violation.actual), (1, 377, 360))


if __name__ == "__main__":
    unittest.main()
