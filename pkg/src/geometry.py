"""Rotations, poses, SITE translation encoding and two-stage pose composition.

Quaternions are stored scalar-first (w, x, y, z) in canonical form (w >= 0).
Translations are in millimeters, angles in radians.
"""
import logging
import math
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .errors import (
    BehindCamera,
    DegenerateInput,
    InvalidDepth,
    InvalidParam,
    MissingCoarse,
    NonFinite,
)
from .models import BBox, CameraIntrinsics, Rot6D, SiteCoords

logger = logging.getLogger(__name__)

GRAM_SCHMIDT_EPS = 1e-8


def canonicalize_quaternions(quats: np.ndarray) -> np.ndarray:
    """Normalize rows of an (N, 4) array and flip signs so that w >= 0.

    When w == 0 the first nonzero vector component is made positive.
    """
    arr = np.asarray(quats, dtype=np.float64)
    q = arr.reshape(-1, 4)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0
    zero_w = q[:, 0] == 0
    if np.any(zero_w):
        vec = q[:, 1:]
        first = np.argmax(vec != 0, axis=1)
        lead = vec[np.arange(len(vec)), first]
        flip = flip | (zero_w & (lead < 0))
    return np.where(flip[:, None], -q, q).reshape(arr.shape)


def quaternions_to_matrices(quats: np.ndarray) -> np.ndarray:
    q = np.asarray(quats, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quaternion_angles(q: np.ndarray, others: np.ndarray) -> np.ndarray:
    """Geodesic angles between one unit quaternion and an (N, 4) batch.

    Uses 4*atan2(|a - b|, |a + b|) on sign-aligned pairs, which equals
    2*arccos(|<a, b>|) but keeps full precision near zero.
    """
    q = np.asarray(q, dtype=np.float64)
    others = np.atleast_2d(np.asarray(others, dtype=np.float64))
    sign = np.where(others @ q < 0, -1.0, 1.0)[:, None]
    aligned = others * sign
    diff = np.linalg.norm(aligned - q, axis=1)
    summ = np.linalg.norm(aligned + q, axis=1)
    return 4.0 * np.arctan2(diff, summ)


def orthonormalize(matrix: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (SVD polar factor)."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


class Rotation:
    """Immutable 3D rotation backed by a canonical unit quaternion."""

    __slots__ = ("_q",)

    def __init__(self, q: Sequence[float]):
        arr = np.asarray(q, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(arr)):
            raise NonFinite("quaternion has non-finite components")
        if np.linalg.norm(arr) < 1e-12:
            raise DegenerateInput("zero quaternion")
        arr = canonicalize_quaternions(arr)
        arr.setflags(write=False)
        self._q = arr

    @classmethod
    def identity(cls) -> "Rotation":
        return cls([1.0, 0.0, 0.0, 0.0])

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Rotation":
        x, y, z, w = ScipyRotation.from_matrix(np.asarray(matrix, dtype=np.float64)).as_quat()
        return cls([w, x, y, z])

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm < 1e-12:
            raise DegenerateInput("rotation axis must be non-zero")
        axis = axis / norm
        half = 0.5 * angle
        return cls([math.cos(half), *(math.sin(half) * axis)])

    @property
    def q(self) -> np.ndarray:
        return self._q

    @property
    def matrix(self) -> np.ndarray:
        return quaternions_to_matrices(self._q)

    def inverse(self) -> "Rotation":
        w, x, y, z = self._q
        return Rotation([w, -x, -y, -z])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.matrix.T

    def __matmul__(self, other: "Rotation") -> "Rotation":
        """Hamilton product: (self @ other).matrix == self.matrix @ other.matrix."""
        w1, x1, y1, z1 = self._q
        w2, x2, y2, z2 = other.q
        return Rotation([
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ])

    def __eq__(self, other) -> bool:
        return isinstance(other, Rotation) and np.array_equal(self._q, other.q)

    def __hash__(self) -> int:
        return hash(tuple(self._q.tolist()))

    def __repr__(self) -> str:
        w, x, y, z = self._q
        return f"Rotation(w={w:.6f}, x={x:.6f}, y={y:.6f}, z={z:.6f})"


class Pose:
    """Rigid transform model -> camera; translation in millimeters."""

    __slots__ = ("rotation", "_t")

    def __init__(self, rotation: Rotation, translation: Sequence[float]):
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise NonFinite("translation has non-finite components")
        t.setflags(write=False)
        self.rotation = rotation
        self._t = t

    @classmethod
    def from_Rt(cls, R: np.ndarray, t: Sequence[float]) -> "Pose":
        return cls(Rotation.from_matrix(R), t)

    @property
    def translation(self) -> np.ndarray:
        return self._t

    def transform(self, points: np.ndarray) -> np.ndarray:
        return self.rotation.apply(points) + self._t

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply other first, then self."""
        return Pose(self.rotation @ other.rotation, self.rotation.apply(other.translation) + self._t)

    def with_rotation(self, rotation: Rotation) -> "Pose":
        return Pose(rotation, self._t)

    def with_translation(self, translation: Sequence[float]) -> "Pose":
        return Pose(self.rotation, translation)

    def __repr__(self) -> str:
        tx, ty, tz = self._t
        return f"Pose({self.rotation!r}, t=({tx:.3f}, {ty:.3f}, {tz:.3f}))"


def rot6d_to_matrix(r: Rot6D) -> Rotation:
    """Gram-Schmidt on (a1, a2); the third column is b1 x b2."""
    a1 = np.asarray(r.a1, dtype=np.float64)
    a2 = np.asarray(r.a2, dtype=np.float64)
    n1 = np.linalg.norm(a1)
    if n1 < GRAM_SCHMIDT_EPS:
        raise DegenerateInput(f"first column norm {n1:.3e} below {GRAM_SCHMIDT_EPS}")
    b1 = a1 / n1
    u = a2 - np.dot(b1, a2) * b1
    n2 = np.linalg.norm(u)
    if n2 < GRAM_SCHMIDT_EPS:
        raise DegenerateInput(f"second column is parallel to the first (residual {n2:.3e})")
    b2 = u / n2
    b3 = np.cross(b1, b2)
    return Rotation.from_matrix(np.column_stack([b1, b2, b3]))


def matrix_to_rot6d(rot: Rotation) -> Rot6D:
    m = rot.matrix
    return Rot6D(a1=tuple(m[:, 0]), a2=tuple(m[:, 1]))


def compose_pose(
    delta_rot: Rotation,
    delta_site: SiteCoords,
    coarse_rot: Rotation,
    coarse_site: SiteCoords,
) -> Tuple[Rotation, SiteCoords]:
    """Combine classifier and regressor outputs: R = dR R^c, tau = tau^c + dtau (z included)."""
    site = SiteCoords(
        tau_x=coarse_site.tau_x + delta_site.tau_x,
        tau_y=coarse_site.tau_y + delta_site.tau_y,
        tau_z=coarse_site.tau_z + delta_site.tau_z,
    )
    return delta_rot @ coarse_rot, site


def site_encode(t: Sequence[float], bbox: BBox, cam: CameraIntrinsics) -> SiteCoords:
    tx, ty, tz = (float(v) for v in t)
    if tz <= 0:
        raise BehindCamera(f"t_z = {tz} mm is not in front of the camera")
    u = cam.fx * tx / tz + cam.cx
    v = cam.fy * ty / tz + cam.cy
    return SiteCoords(
        tau_x=(u - bbox.center_x) / bbox.size,
        tau_y=(v - bbox.center_y) / bbox.size,
        tau_z=tz / (bbox.resize_ratio * cam.focal),
    )


def site_decode(s: SiteCoords, bbox: BBox, cam: CameraIntrinsics) -> np.ndarray:
    if s.tau_z <= 0:
        raise InvalidDepth(f"tau_z = {s.tau_z} must be positive")
    tz = s.tau_z * bbox.resize_ratio * cam.focal
    u = s.tau_x * bbox.size + bbox.center_x
    v = s.tau_y * bbox.size + bbox.center_y
    return np.array([(u - cam.cx) * tz / cam.fx, (v - cam.cy) * tz / cam.fy, tz])


def perspective_features(
    bbox: BBox,
    cam: CameraIntrinsics,
    stage: Literal["classifier", "regressor"] = "classifier",
    coarse_t: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Global crop context fed next to the crop features.

    classifier: [(b_x - c_x)/f, (b_y - c_y)/f, s_bbox/f]
    regressor:  [t_x/t_z, t_y/t_z, s_bbox/f] from the coarse translation
    """
    f = cam.focal
    if stage == "classifier":
        return np.array([
            (bbox.center_x - cam.cx) / f,
            (bbox.center_y - cam.cy) / f,
            bbox.size / f,
        ])
    if stage == "regressor":
        if coarse_t is None:
            raise MissingCoarse("regressor stage needs the coarse translation")
        tx, ty, tz = (float(v) for v in coarse_t)
        if tz <= 0:
            raise InvalidDepth(f"coarse t_z = {tz} must be positive")
        return np.array([tx / tz, ty / tz, bbox.size / f])
    raise InvalidParam(f"unknown stage '{stage}'")


def geodesic_angle(r1: Rotation, r2: Rotation) -> float:
    return float(quaternion_angles(r1.q, r2.q[None, :])[0])


def undo_crop_rotation(rot: Rotation, quarter_turns: int) -> Rotation:
    """Map a rotation predicted on a crop turned by k * 90 deg about the optical axis back to the original crop."""
    return Rotation.from_axis_angle([0.0, 0.0, 1.0], -0.5 * math.pi * quarter_turns) @ rot


def bbox_from_pose(
    vertices: np.ndarray,
    pose: Pose,
    cam: CameraIntrinsics,
    padding: float = 1.5,
    crop_size: int = 256,
) -> BBox:
    """Padded square crop around the projection of a model's vertices."""
    pts = pose.transform(vertices)
    if np.any(pts[:, 2] <= 0):
        raise BehindCamera("model is not entirely in front of the camera")
    u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    side = max(u.max() - u.min(), v.max() - v.min(), 1.0) * padding
    return BBox(
        center_x=0.5 * (u.max() + u.min()),
        center_y=0.5 * (v.max() + v.min()),
        size=side,
        resize_ratio=crop_size / side,
    )
