"""Pinhole z-buffer rasterizer: depth and visibility masks of a mesh under a pose."""
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import cv2
import numpy as np

from .geometry import Pose
from .models import CameraIntrinsics
from .symlabels import Mesh

logger = logging.getLogger(__name__)

Z_NEAR = 10.0
EDGE_TOL = 1e-9
DEPTH_PNG_SCALE = 0.1  # mm per PNG unit


def project_vertices(
    mesh: Mesh,
    pose: Pose,
    cam: CameraIntrinsics,
    z_near: float = Z_NEAR,
) -> Tuple[np.ndarray, np.ndarray]:
    """(N, 3) array of (u, v, Z) and a clipped flag (Z <= z_near); u, v are nan where Z <= 0."""
    pts = pose.transform(mesh.vertices)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(z > 0, cam.fx * pts[:, 0] / z + cam.cx, np.nan)
        v = np.where(z > 0, cam.fy * pts[:, 1] / z + cam.cy, np.nan)
    return np.column_stack([u, v, z]), z <= z_near


def rasterize(
    mesh: Mesh,
    pose: Pose,
    cam: CameraIntrinsics,
    size: Optional[Tuple[int, int]] = None,
    z_near: float = Z_NEAR,
) -> Tuple[np.ndarray, np.ndarray]:
    """Depth map (mm, 0 = empty) and mask of the nearest surface at every pixel.

    Pixel (row, col) samples the image point (u=col, v=row). Edges are
    inclusive, depth is interpolated perspective-correctly and a pixel is
    overwritten only by a strictly nearer surface, visiting triangles in
    mesh order. Triangles with a vertex at Z <= z_near are skipped.
    """
    width, height = size if size is not None else (cam.width, cam.height)
    zbuf = np.full((height, width), np.inf)
    uvz, clipped = project_vertices(mesh, pose, cam, z_near)
    drawn = 0
    for tri in mesh.triangles:
        if clipped[tri].any():
            continue
        (u0, v0, z0), (u1, v1, z1), (u2, v2, z2) = uvz[tri]
        area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
        if abs(area) < 1e-12:
            continue
        c_lo = max(int(np.ceil(min(u0, u1, u2) - EDGE_TOL)), 0)
        c_hi = min(int(np.floor(max(u0, u1, u2) + EDGE_TOL)), width - 1)
        r_lo = max(int(np.ceil(min(v0, v1, v2) - EDGE_TOL)), 0)
        r_hi = min(int(np.floor(max(v0, v1, v2) + EDGE_TOL)), height - 1)
        if c_lo > c_hi or r_lo > r_hi:
            continue
        cols, rows = np.meshgrid(np.arange(c_lo, c_hi + 1), np.arange(r_lo, r_hi + 1))
        b0 = ((u1 - cols) * (v2 - rows) - (u2 - cols) * (v1 - rows)) / area
        b1 = ((u2 - cols) * (v0 - rows) - (u0 - cols) * (v2 - rows)) / area
        b2 = 1.0 - b0 - b1
        inside = (b0 >= -EDGE_TOL) & (b1 >= -EDGE_TOL) & (b2 >= -EDGE_TOL)
        if not inside.any():
            continue
        depth = 1.0 / (b0 / z0 + b1 / z1 + b2 / z2)
        window = zbuf[r_lo:r_hi + 1, c_lo:c_hi + 1]
        closer = inside & (depth < window)
        window[closer] = depth[closer]
        drawn += 1
    depth = np.where(np.isfinite(zbuf), zbuf, 0.0)
    logger.debug(f"Rasterized {drawn}/{len(mesh.triangles)} triangles at {width}x{height}")
    return depth, depth > 0


def write_depth_png(depth: np.ndarray, path: Union[str, Path]):
    """16-bit depth PNG at 0.1 mm per unit, saturating at 65535."""
    units = np.clip(np.rint(np.asarray(depth) / DEPTH_PNG_SCALE), 0, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), units):
        raise OSError(f"could not write depth image to {path}")
    logger.info(f"Wrote {units.shape[1]}x{units.shape[0]} depth image to {path}")


def read_depth_png(path: Union[str, Path]) -> np.ndarray:
    units = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if units is None:
        raise OSError(f"could not read depth image {path}")
    return units.astype(np.float64) * DEPTH_PNG_SCALE
