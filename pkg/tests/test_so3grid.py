"""
Tests for the HEALPix / Hopf SO(3) grid
"""
import math
import tempfile
import unittest
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import InvalidParam, ParseError
from src.geometry import Rotation, quaternion_angles
from src.so3grid import (
    SO3Grid,
    ang2pix_ring,
    format_grid,
    healpix_centers,
    in_plane_count,
    nearest_bucket,
    nearest_buckets,
    nearest_neighbor_angles,
    random_rotations,
    read_grid,
    so3_prototypes,
    write_grid,
)


class TestHealpix(unittest.TestCase):
    """HEALPix RING pixel centers."""

    def test_counts(self):
        self.assertEqual(len(healpix_centers(1)), 12)
        self.assertEqual(len(healpix_centers(4)), 192)

    def test_domain(self):
        s2 = healpix_centers(4)
        self.assertTrue(np.all((s2.theta >= 0) & (s2.theta <= math.pi)))
        self.assertTrue(np.all((s2.phi >= 0) & (s2.phi < 2 * math.pi)))

    def test_balanced_hemispheres(self):
        """Ring latitudes are mirror-symmetric about the equator."""
        s2 = healpix_centers(3)
        self.assertAlmostEqual(float(np.cos(s2.theta).sum()), 0.0, places=10)
        np.testing.assert_allclose(np.linalg.norm(s2.unit_vectors(), axis=1), 1.0)

    def test_equal_area_monte_carlo(self):
        """Uniform directions fill every pixel within 2% of 1/12."""
        rng = np.random.default_rng(0)
        samples = rng.standard_normal((1_000_000, 3))
        samples /= np.linalg.norm(samples, axis=1, keepdims=True)
        theta = np.arccos(np.clip(samples[:, 2], -1.0, 1.0))
        phi = np.arctan2(samples[:, 1], samples[:, 0])
        share = np.bincount(ang2pix_ring(1, theta, phi), minlength=12) / len(samples)
        np.testing.assert_allclose(share, 1 / 12, rtol=0.02)

    def test_centers_fall_in_own_pixel(self):
        for n_side in (1, 2, 4):
            s2 = healpix_centers(n_side)
            np.testing.assert_array_equal(ang2pix_ring(n_side, s2.theta, s2.phi), np.arange(len(s2)))

    def test_first_ring_positions(self):
        s2 = healpix_centers(1)
        np.testing.assert_allclose(np.cos(s2.theta[:4]), 2 / 3, atol=1e-12)
        np.testing.assert_allclose(s2.phi[:4], [math.pi / 4, 3 * math.pi / 4, 5 * math.pi / 4, 7 * math.pi / 4], atol=1e-12)
        np.testing.assert_allclose(np.cos(s2.theta[4:8]), 0.0, atol=1e-12)

    def test_negative_longitude(self):
        self.assertEqual(ang2pix_ring(1, [math.acos(2 / 3)], [-math.pi / 4])[0], 3)

    def test_invalid(self):
        with self.assertRaises(InvalidParam):
            healpix_centers(0)


class TestPrototypes(unittest.TestCase):
    """so3_prototypes."""

    @classmethod
    def setUpClass(cls):
        cls.grid4 = so3_prototypes(4)

    def test_published_sizes(self):
        self.assertEqual(so3_prototypes(2).K, 576)
        self.assertEqual(so3_prototypes(3).K, 1944)
        self.assertEqual(self.grid4.K, 4608)
        self.assertEqual(self.grid4.m1, 24)
        self.assertEqual(self.grid4.m2, 192)

    def test_in_plane_count(self):
        self.assertEqual([in_plane_count(12 * n * n) for n in (2, 3, 4)], [12, 18, 24])

    def test_unit_canonical_quaternions(self):
        q = self.grid4.quaternions
        np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
        self.assertTrue(np.all(q[:, 0] >= 0))

    def test_no_duplicates(self):
        self.assertGreater(nearest_neighbor_angles(self.grid4).min(), 1e-6)

    def test_adjacent_angle(self):
        """Median nearest-prototype angle is close to 14.7 degrees."""
        median = math.degrees(float(np.median(nearest_neighbor_angles(self.grid4))))
        self.assertGreaterEqual(median, 13.0)
        self.assertLessEqual(median, 16.0)

    def test_invalid(self):
        with self.assertRaises(InvalidParam):
            so3_prototypes(0)


class TestNearestBucket(unittest.TestCase):
    """nearest_bucket and batch assignment."""

    @classmethod
    def setUpClass(cls):
        cls.grid2 = so3_prototypes(2)
        cls.grid4 = so3_prototypes(4)

    def test_prototypes_map_to_themselves(self):
        for k in range(0, self.grid2.K, 7):
            self.assertEqual(nearest_bucket(self.grid2.prototype(k), self.grid2), k)
        np.testing.assert_array_equal(nearest_buckets(self.grid2.quaternions, self.grid2), np.arange(self.grid2.K))

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(1)
        quats = random_rotations(10_000, rng)
        batch = nearest_buckets(quats, self.grid2)
        for i in range(0, len(quats), 50):
            angles = quaternion_angles(quats[i], self.grid2.quaternions)
            self.assertEqual(batch[i], int(np.argmin(angles)))
            self.assertEqual(nearest_bucket(Rotation(quats[i]), self.grid2), batch[i])

    def test_tie_goes_to_lowest_index(self):
        far = [Rotation.from_axis_angle([1, 0, 0], math.radians(90 + 10 * i)).q for i in range(10)]
        quats = np.array(far)
        quats[3] = Rotation.from_axis_angle([0, 0, 1], math.radians(10)).q
        quats[7] = Rotation.from_axis_angle([0, 0, 1], math.radians(-10)).q
        grid = SO3Grid(1, 1, quats)
        angles = quaternion_angles(Rotation.identity().q, grid.quaternions)
        self.assertAlmostEqual(angles[3], angles[7], places=15)
        self.assertEqual(nearest_bucket(Rotation.identity(), grid), 3)
        self.assertEqual(int(nearest_buckets(Rotation.identity().q, grid)[0]), 3)

    def test_occupancy_balance(self):
        rng = np.random.default_rng(2)
        counts = np.bincount(nearest_buckets(random_rotations(100_000, rng), self.grid2), minlength=self.grid2.K)
        self.assertGreater(counts.min(), 0)
        self.assertLess(counts.max() / counts.min(), 3.0)

    def test_covering_radius(self):
        rng = np.random.default_rng(3)
        quats = random_rotations(10_000, rng)
        idx = nearest_buckets(quats, self.grid4)
        protos = self.grid4.quaternions[idx]
        dots = np.clip(np.abs(np.einsum("ij,ij->i", quats, protos)), 0, 1)
        self.assertLess(float((2 * np.arccos(dots)).max()), 0.30)


class TestGridExport(unittest.TestCase):
    """Grid text format."""

    def test_header_and_rows(self):
        grid = so3_prototypes(1)
        lines = format_grid(grid).splitlines()
        self.assertEqual(lines[0], f"# so3grid n_side=1 K={grid.K}")
        self.assertEqual(len(lines), grid.K + 1)
        self.assertTrue(lines[1].startswith("0 "))

    def test_write_read(self):
        grid = so3_prototypes(2)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "grid.txt"
            write_grid(grid, path)
            loaded = read_grid(path)
        self.assertEqual(loaded.K, grid.K)
        self.assertEqual(loaded.m1, grid.m1)
        np.testing.assert_allclose(loaded.quaternions, grid.quaternions, atol=1e-15)

    def test_malformed(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "grid.txt"
            path.write_text("# so3grid n_side=1 K=2\n0 1 0 0 0\n1 1 0 0\n")
            with self.assertRaises(ParseError) as ctx:
                read_grid(path)
        self.assertIn(":3", ctx.exception.location)


if __name__ == "__main__":
    unittest.main()
