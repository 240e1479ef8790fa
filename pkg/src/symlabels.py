"""Object meshes, symmetry sets, symmetry-aware pose distance and soft classification labels."""
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial.distance import pdist

from .errors import EmptyInput, InvalidParam, OutOfRange, TooFewVertices
from .geometry import Pose, Rotation, orthonormalize
from .models import SiteCoords
from .so3grid import SO3Grid

logger = logging.getLogger(__name__)

SMOOTH_L1_BETA = 1.0
MAX_VERTICES = 10000
LABEL_CHUNK_ELEMENTS = 4_000_000


class Mesh:
    def __init__(self, vertices: np.ndarray, triangles: Optional[np.ndarray] = None):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        tri = np.zeros((0, 3), dtype=np.int64) if triangles is None else np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(v) < 1:
            raise InvalidParam("mesh needs at least one vertex")
        if not np.all(np.isfinite(v)):
            raise InvalidParam("mesh has non-finite vertex coordinates")
        if tri.size and (tri.min() < 0 or tri.max() >= len(v)):
            raise InvalidParam(f"triangle index out of range [0, {len(v)})")
        v.setflags(write=False)
        tri.setflags(write=False)
        self.vertices = v
        self.triangles = tri

    def __len__(self) -> int:
        return len(self.vertices)

    def sample_vertices(self, max_vertices: int = MAX_VERTICES) -> np.ndarray:
        """Deterministic stride subsample down to max_vertices."""
        n = len(self.vertices)
        if n <= max_vertices:
            return self.vertices
        return self.vertices[(np.arange(max_vertices) * n) // max_vertices]


class SymmetrySet:
    """Rigid object symmetries x -> R_s x + t_s; the identity is always first."""

    def __init__(self, transforms: Iterable[Tuple[Rotation, Sequence[float]]] = ()):
        rotations = [Rotation.identity().matrix]
        offsets = [np.zeros(3)]
        for rot, offset in transforms:
            rotations.append(rot.matrix)
            offsets.append(np.asarray(offset, dtype=np.float64).reshape(3))
        self.rotations = np.stack(rotations)
        self.offsets = np.stack(offsets)

    @classmethod
    def from_spec(
        cls,
        discrete: Iterable[Tuple[np.ndarray, Sequence[float]]] = (),
        continuous: Iterable[Tuple[Sequence[float], Sequence[float]]] = (),
        steps: int = 36,
    ) -> "SymmetrySet":
        """Discrete (R, t) pairs plus continuous (axis, offset) entries discretized into `steps`.

        A continuous entry rotates about the axis through `offset`: x -> R (x - o) + o.
        """
        if steps < 1:
            raise InvalidParam(f"steps must be >= 1, got {steps}")
        transforms = [(Rotation.from_matrix(orthonormalize(R)), t) for R, t in discrete]
        for axis, offset in continuous:
            o = np.asarray(offset, dtype=np.float64)
            for i in range(steps):
                rot = Rotation.from_axis_angle(axis, 2 * math.pi * i / steps)
                transforms.append((rot, o - rot.apply(o)))
        return cls(transforms)

    def __len__(self) -> int:
        return len(self.rotations)

    @property
    def is_symmetric(self) -> bool:
        return bool(
            np.any(np.abs(self.rotations[1:] - np.eye(3)) > 1e-12)
            or np.any(np.abs(self.offsets[1:]) > 1e-12)
        )

    def apply_all(self, points: np.ndarray) -> np.ndarray:
        """(S, V, 3) array: every symmetry applied to every point."""
        return np.einsum("sij,vj->svi", self.rotations, points) + self.offsets[:, None, :]

    def transforms(self) -> List[Tuple[Rotation, np.ndarray]]:
        return [(Rotation.from_matrix(R), t) for R, t in zip(self.rotations, self.offsets)]


class ObjectAsset:
    def __init__(self, mesh: Mesh, symmetries: Optional[SymmetrySet] = None, diameter: Optional[float] = None):
        self.mesh = mesh
        self.symmetries = symmetries if symmetries is not None else SymmetrySet()
        self.diameter = diameter if diameter is not None else object_diameter(mesh)


def box_mesh(sx: float, sy: float, sz: float) -> Mesh:
    """Axis-aligned box centered at the origin, 8 vertices and 12 triangles."""
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    faces = [
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
    ]
    return Mesh(corners * np.array([sx, sy, sz]), np.array(faces))


def cylinder_mesh(radius: float, height: float, segments: int = 36) -> Mesh:
    """Closed cylinder along z whose rim vertices are invariant under 2*pi/segments turns."""
    ang = 2 * math.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(ang), radius * np.sin(ang)])
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    centers = np.array([[0.0, 0.0, -height / 2], [0.0, 0.0, height / 2]])
    vertices = np.vstack([bottom, top, centers])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + j], [i, segments + j, segments + i], [cb, j, i], [ct, segments + i, segments + j]]
    return Mesh(vertices, np.array(faces))


def object_diameter(mesh: Mesh) -> float:
    """Farthest pairwise vertex distance; hull vertices are searched when the hull exists."""
    v = mesh.vertices
    if len(v) < 2:
        raise TooFewVertices(f"diameter needs at least 2 vertices, got {len(v)}")
    candidates = v
    if len(v) > 64:
        try:
            candidates = v[ConvexHull(v).vertices]
        except Exception:
            # flat or collinear clouds have no 3D hull
            candidates = v
    return float(pdist(candidates).max())


def smooth_l1(e: np.ndarray, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    return np.where(e < beta, 0.5 * e * e / beta, e - 0.5 * beta)


def pose_distance_symm(
    p1: Pose,
    p2: Pose,
    mesh: Mesh,
    sym: Optional[SymmetrySet] = None,
    beta: float = SMOOTH_L1_BETA,
    max_vertices: int = MAX_VERTICES,
) -> float:
    """min over S of mean_x smoothL1(|T1 x - T2 S x|), in mm."""
    sym = sym if sym is not None else SymmetrySet()
    pts = mesh.sample_vertices(max_vertices)
    a = p1.transform(pts)
    b = np.einsum("ij,svj->svi", p2.rotation.matrix, sym.apply_all(pts)) + p2.translation
    per_sym = smooth_l1(np.linalg.norm(a[None] - b, axis=2), beta).mean(axis=1)
    return float(per_sym.min())


class RotationSoftLabels:
    def __init__(self, values: np.ndarray, sigma: float):
        self.values = np.asarray(values, dtype=np.float64)
        self.sigma = sigma

    def __len__(self) -> int:
        return len(self.values)


def rotation_soft_labels(
    gt: Pose,
    grid: SO3Grid,
    mesh: Mesh,
    sym: Optional[SymmetrySet],
    sigma: float,
    beta: float = SMOOTH_L1_BETA,
    max_vertices: int = MAX_VERTICES,
) -> RotationSoftLabels:
    """l_k = exp(-rho((R*, t*), (R_k, t*)) / sigma) for every prototype (not normalized)."""
    if not sigma > 0:
        raise InvalidParam(f"sigma must be positive, got {sigma}")
    sym = sym if sym is not None else SymmetrySet()
    pts = mesh.sample_vertices(max_vertices)
    # t* appears on both sides and cancels
    a = gt.rotation.apply(pts)
    sym_pts = sym.apply_all(pts)
    protos = grid.matrices()
    chunk = max(1, LABEL_CHUNK_ELEMENTS // (len(sym) * len(pts)))
    rho = np.empty(grid.K)
    for start in range(0, grid.K, chunk):
        b = np.einsum("kij,svj->ksvi", protos[start:start + chunk], sym_pts)
        dist = np.linalg.norm(a[None, None] - b, axis=3)
        rho[start:start + chunk] = smooth_l1(dist, beta).mean(axis=2).min(axis=1)
    values = np.maximum(np.exp(-rho / sigma), np.finfo(np.float64).tiny)
    logger.debug(f"Rotation labels: K={grid.K}, max={values.max():.4f}, sigma={sigma:.3f} mm")
    return RotationSoftLabels(values, sigma)


class TranslationGrid:
    """Uniform bins over the SITE ranges: n_xy x n_xy for (tau_x, tau_y), n_z for tau_z."""

    def __init__(
        self,
        xy_range: Tuple[float, float] = (-0.5, 0.5),
        z_range: Tuple[float, float] = (0.1, 10.0),
        n_xy: int = 64,
        n_z: int = 1000,
    ):
        if not (xy_range[1] > xy_range[0] and z_range[1] > z_range[0] and n_xy >= 1 and n_z >= 1):
            raise InvalidParam("translation grid ranges must be increasing and bin counts positive")
        self.xy_range = tuple(xy_range)
        self.z_range = tuple(z_range)
        self.n_xy = n_xy
        self.n_z = n_z
        self.xy_width = (xy_range[1] - xy_range[0]) / n_xy
        self.z_width = (z_range[1] - z_range[0]) / n_z

    @property
    def xy_centers(self) -> np.ndarray:
        return self.xy_range[0] + (np.arange(self.n_xy) + 0.5) * self.xy_width

    @property
    def z_centers(self) -> np.ndarray:
        return self.z_range[0] + (np.arange(self.n_z) + 0.5) * self.z_width

    def _units(self, value: float, lo: float, hi: float, width: float, n: int, name: str) -> float:
        """Position in bin widths from the lower edge, clamped to [0, n]."""
        if not lo <= value <= hi:
            raise OutOfRange(f"{name} = {value} outside [{lo}, {hi}]")
        return min(max((value - lo) / width, 0.0), float(n))

    @staticmethod
    def _bin(units: float) -> int:
        # bins are (j, j + 1] in width units (the first also holds 0); a value on an
        # edge belongs to the lower bin, the same bin the Gaussian argmax picks on its tie
        return max(math.ceil(units) - 1, 0)

    def xy_units(self, tau_x: float, tau_y: float) -> Tuple[float, float]:
        lo, hi = self.xy_range
        return (
            self._units(tau_y, lo, hi, self.xy_width, self.n_xy, "tau_y"),
            self._units(tau_x, lo, hi, self.xy_width, self.n_xy, "tau_x"),
        )

    def z_units(self, tau_z: float) -> float:
        return self._units(tau_z, *self.z_range, self.z_width, self.n_z, "tau_z")

    def xy_bin(self, tau_x: float, tau_y: float) -> Tuple[int, int]:
        """(row, col) = (y bin, x bin)."""
        uy, ux = self.xy_units(tau_x, tau_y)
        return self._bin(uy), self._bin(ux)

    def z_bin(self, tau_z: float) -> int:
        return self._bin(self.z_units(tau_z))

    def decode(self, xy_index: int, z_index: int) -> SiteCoords:
        """Bin centers of a flat xy index (row-major over (y, x)) and a z index."""
        row, col = divmod(int(xy_index), self.n_xy)
        return SiteCoords(
            tau_x=float(self.xy_centers[col]),
            tau_y=float(self.xy_centers[row]),
            tau_z=float(self.z_centers[z_index]),
        )


class TranslationSoftLabels:
    def __init__(self, xy: np.ndarray, z: np.ndarray, grid: TranslationGrid):
        self.xy = xy
        self.z = z
        self.grid = grid


def translation_soft_labels(
    gt_site: SiteCoords,
    xy_range: Tuple[float, float] = (-0.5, 0.5),
    z_range: Tuple[float, float] = (0.1, 10.0),
    n_xy: int = 64,
    n_z: int = 1000,
    sigma_bins: float = 1.0,
) -> TranslationSoftLabels:
    """Gaussian labels around the ground truth, sigma measured in bin widths.

    Distances are taken in bin units so a ground truth on a bin edge ties its two
    neighbouring centers exactly and the arg-max lands in the containing bin.
    """
    grid = TranslationGrid(xy_range, z_range, n_xy, n_z)
    uy, ux = grid.xy_units(gt_site.tau_x, gt_site.tau_y)
    uz = grid.z_units(gt_site.tau_z)
    two_var = 2.0 * sigma_bins * sigma_bins
    xy_centers = np.arange(grid.n_xy) + 0.5
    gx = np.exp(-((xy_centers - ux) ** 2) / two_var)
    gy = np.exp(-((xy_centers - uy) ** 2) / two_var)
    z = np.exp(-((np.arange(grid.n_z) + 0.5 - uz) ** 2) / two_var)
    return TranslationSoftLabels(np.outer(gy, gx), z, grid)


LabelLike = Union[RotationSoftLabels, TranslationSoftLabels, Sequence[float], np.ndarray]


def hard_label(labels: LabelLike) -> Union[int, Tuple[int, int]]:
    """Arg-max class index, lowest index on ties; (flat xy index, z index) for translation labels."""
    if isinstance(labels, TranslationSoftLabels):
        return int(np.argmax(labels.xy.ravel())), int(np.argmax(labels.z))
    values = labels.values if isinstance(labels, RotationSoftLabels) else np.asarray(labels, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyInput("cannot take the arg-max of empty labels")
    return int(np.argmax(values))


def one_hot_labels(labels: RotationSoftLabels) -> RotationSoftLabels:
    """Hard-label variant of soft labels: 1 at the arg-max, 0 elsewhere."""
    values = np.zeros_like(labels.values)
    values[hard_label(labels)] = 1.0
    return RotationSoftLabels(values, labels.sigma)


def decode_classes(
    rot_index: int,
    xy_index: int,
    z_index: int,
    grid: SO3Grid,
    tgrid: TranslationGrid,
) -> Tuple[Rotation, SiteCoords]:
    """Coarse pose from the three classifier arg-max indices."""
    return grid.prototype(rot_index), tgrid.decode(xy_index, z_index)
