"""
Tests for the HTTP API
"""
import math
import unittest
import sys
from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

sys.path.insert(0, str(Path(__file__).parent.parent))

from main import app
from src.so3grid import so3_prototypes

CAMERA = {"fx": 500, "fy": 500, "cx": 320, "cy": 240}
BBOX = {"center_x": 320, "center_y": 240, "size": 200}


class TestApi(unittest.TestCase):
    """Endpoints under /api/v1."""

    @classmethod
    def setUpClass(cls):
        cls.client = TestClient(app)

    def test_health_after_startup(self):
        with TestClient(app) as client:
            response = client.get("/api/v1/health")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["status"], "healthy")

    def test_grid_info(self):
        response = self.client.get("/api/v1/grid/4")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json(), {"n_side": 4, "m1": 24, "m2": 192, "K": 4608})
        self.assertEqual(self.client.get("/api/v1/grid/9").status_code, 422)

    def test_nearest(self):
        q = so3_prototypes(2).quaternions[10].tolist()
        response = self.client.post("/api/v1/grid/nearest", json={"n_side": 2, "q": q})
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertEqual(body["index"], 10)
        self.assertLess(body["angle_deg"], 1e-6)
        bad = self.client.post("/api/v1/grid/nearest", json={"n_side": 2, "q": [0, 0, 0, 0]})
        self.assertEqual(bad.status_code, 422)

    def test_site_round_trip(self):
        encoded = self.client.post("/api/v1/site/encode", json={"t": [40, -20, 1000], "bbox": BBOX, "camera": CAMERA})
        self.assertEqual(encoded.status_code, 200)
        site = encoded.json()
        self.assertAlmostEqual(site["tau_z"], 2.0, places=12)
        self.assertAlmostEqual(site["tau_x"], 0.1, places=12)
        decoded = self.client.post("/api/v1/site/decode", json={"site": site, "bbox": BBOX, "camera": CAMERA})
        self.assertEqual(decoded.status_code, 200)
        np.testing.assert_allclose(decoded.json()["t"], [40, -20, 1000], atol=1e-9)

    def test_site_errors(self):
        behind = self.client.post("/api/v1/site/encode", json={"t": [0, 0, 0], "bbox": BBOX, "camera": CAMERA})
        self.assertEqual(behind.status_code, 422)
        site = {"tau_x": 0, "tau_y": 0, "tau_z": -1}
        bad_depth = self.client.post("/api/v1/site/decode", json={"site": site, "bbox": BBOX, "camera": CAMERA})
        self.assertEqual(bad_depth.status_code, 422)

    def test_perspective(self):
        response = self.client.post("/api/v1/perspective", json={"bbox": BBOX, "camera": CAMERA})
        self.assertEqual(response.status_code, 200)
        np.testing.assert_allclose(response.json()["features"], [0.0, 0.0, 0.4])
        missing = self.client.post("/api/v1/perspective", json={"bbox": BBOX, "camera": CAMERA, "stage": "regressor"})
        self.assertEqual(missing.status_code, 422)

    def test_tta_select(self):
        quarter = [math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4)]
        response = self.client.post("/api/v1/tta/select", json={"candidates": [
            {"pose": {"q": [1, 0, 0, 0], "t": [0, 0, 1000]}, "score": 0.2},
            {"pose": {"q": quarter, "t": [5, 0, 900]}, "score": 0.9, "quarter_turns": 1},
        ]})
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertEqual(body["index"], 1)
        np.testing.assert_allclose(body["pose"]["q"], [1, 0, 0, 0], atol=1e-12)
        self.assertEqual(body["pose"]["t"], [5, 0, 900])
        empty = self.client.post("/api/v1/tta/select", json={"candidates": []})
        self.assertEqual(empty.status_code, 422)

    def test_api_info(self):
        response = self.client.get("/api/v1/api-info")
        self.assertEqual(response.status_code, 200)
        self.assertIn("POST /grid/nearest", response.json()["endpoints"])


if __name__ == "__main__":
    unittest.main()
