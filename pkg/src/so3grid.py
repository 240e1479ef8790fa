"""Uniform SO(3) partition: HEALPix sphere centers lifted through the Hopf fibration."""
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Union

import healpy as hp
import numpy as np
from sklearn.neighbors import NearestNeighbors

from .errors import InvalidParam, ParseError
from .geometry import Rotation, canonicalize_quaternions, quaternions_to_matrices

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


class S2Grid:
    def __init__(self, n_side: int, theta: np.ndarray, phi: np.ndarray):
        self.n_side = n_side
        self.theta = theta
        self.phi = phi

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def centers(self) -> np.ndarray:
        """(N, 2) array of (colatitude, longitude) in radians."""
        return np.column_stack([self.theta, self.phi])

    def unit_vectors(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.column_stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])


class SO3Grid:
    """K prototype rotations; index k = s2_index * m1 + in_plane_index."""

    def __init__(self, n_side: int, m1: int, quaternions: np.ndarray):
        self.n_side = n_side
        self.m1 = m1
        quats = canonicalize_quaternions(np.asarray(quaternions, dtype=np.float64).reshape(-1, 4))
        quats.setflags(write=False)
        self._quats = quats
        self._prototypes: Optional[List[Rotation]] = None
        self._index: Optional[NearestNeighbors] = None

    @property
    def K(self) -> int:
        return len(self._quats)

    @property
    def m2(self) -> int:
        return 12 * self.n_side * self.n_side

    @property
    def quaternions(self) -> np.ndarray:
        return self._quats

    @property
    def prototypes(self) -> List[Rotation]:
        if self._prototypes is None:
            self._prototypes = [Rotation(q) for q in self._quats]
        return self._prototypes

    def prototype(self, k: int) -> Rotation:
        return Rotation(self._quats[k])

    def matrices(self) -> np.ndarray:
        return quaternions_to_matrices(self._quats)

    def neighbor_index(self) -> NearestNeighbors:
        """Exact Euclidean index over {q_k} and {-q_k}; chord order equals geodesic order."""
        if self._index is None:
            self._index = NearestNeighbors(algorithm="kd_tree").fit(
                np.vstack([self._quats, -self._quats])
            )
        return self._index

    def __len__(self) -> int:
        return self.K


def healpix_centers(n_side: int) -> S2Grid:
    """RING-scheme pixel centers of the HEALPix pixelization (12 * n_side^2 pixels)."""
    if n_side < 1:
        raise InvalidParam(f"n_side must be >= 1, got {n_side}")
    theta, phi = hp.pix2ang(n_side, np.arange(hp.nside2npix(n_side)), nest=False)
    return S2Grid(n_side, np.asarray(theta, dtype=np.float64), np.asarray(phi, dtype=np.float64))


def ang2pix_ring(n_side: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """RING pixel index of each (colatitude, longitude) direction."""
    if n_side < 1:
        raise InvalidParam(f"n_side must be >= 1, got {n_side}")
    phi = np.mod(np.asarray(phi, dtype=np.float64), 2 * math.pi)
    return np.asarray(hp.ang2pix(n_side, np.asarray(theta, dtype=np.float64), phi, nest=False), dtype=np.int64)


def in_plane_count(m2: int) -> int:
    # floor keeps m1 = 24 at m2 = 192 (round would give 25)
    return int(math.floor(math.sqrt(math.pi * m2)))


def hopf_to_quaternions(theta: np.ndarray, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
    ct = np.cos(theta / 2)
    st = np.sin(theta / 2)
    return np.column_stack([
        ct * np.cos(psi / 2),
        ct * np.sin(psi / 2),
        st * np.cos(phi + psi / 2),
        st * np.sin(phi + psi / 2),
    ])


def so3_prototypes(n_side: int) -> SO3Grid:
    s2 = healpix_centers(n_side)
    m1 = in_plane_count(len(s2))
    psi = 2 * math.pi * np.arange(m1) / m1
    quats = hopf_to_quaternions(
        np.repeat(s2.theta, m1),
        np.repeat(s2.phi, m1),
        np.tile(psi, len(s2)),
    )
    grid = SO3Grid(n_side, m1, quats)
    logger.debug(f"Built SO(3) grid n_side={n_side}: m2={len(s2)}, m1={m1}, K={grid.K}")
    return grid


def _pick_lowest_tie(dots: np.ndarray, candidates: np.ndarray) -> int:
    best = dots.max()
    tied = candidates[dots >= best - TIE_TOLERANCE]
    return int(tied.min())


def nearest_bucket(rot: Rotation, grid: SO3Grid) -> int:
    """Prototype index with the smallest geodesic angle; ties go to the lowest index."""
    dots = np.abs(grid.quaternions @ rot.q)
    return _pick_lowest_tie(dots, np.arange(grid.K))


def nearest_buckets(quats: np.ndarray, grid: SO3Grid, n_candidates: int = 8) -> np.ndarray:
    """Batch nearest_bucket over an (N, 4) quaternion array."""
    quats = np.atleast_2d(np.asarray(quats, dtype=np.float64))
    k = min(n_candidates, 2 * grid.K)
    _, idx = grid.neighbor_index().kneighbors(quats, n_neighbors=k)
    idx = idx % grid.K
    dots = np.abs(np.einsum("nkj,nj->nk", grid.quaternions[idx], quats))
    tied = dots >= dots.max(axis=1, keepdims=True) - TIE_TOLERANCE
    return np.where(tied, idx, grid.K).min(axis=1)


def nearest_neighbor_angles(grid: SO3Grid) -> np.ndarray:
    """Geodesic angle from every prototype to its closest other prototype."""
    dist, _ = grid.neighbor_index().kneighbors(grid.quaternions, n_neighbors=2)
    chord = np.clip(dist[:, 1], 0.0, 2.0)
    return 4.0 * np.arcsin(chord / 2.0)


def random_rotations(n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Uniform random unit quaternions (subgroup algorithm), canonical (N, 4)."""
    rng = rng if rng is not None else np.random.default_rng()
    u1, u2, u3 = rng.random((3, n))
    quats = np.column_stack([
        np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
        np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
        np.sqrt(u1) * np.sin(2 * np.pi * u3),
        np.sqrt(u1) * np.cos(2 * np.pi * u3),
    ])
    return canonicalize_quaternions(quats)


def format_grid(grid: SO3Grid) -> str:
    lines = [f"# so3grid n_side={grid.n_side} K={grid.K}"]
    for k, q in enumerate(grid.quaternions):
        lines.append(f"{k} " + " ".join(f"{v:.17g}" for v in q))
    return "\n".join(lines) + "\n"


def write_grid(grid: SO3Grid, path: Union[str, Path]):
    Path(path).write_text(format_grid(grid))
    logger.info(f"Wrote {grid.K} prototypes to {path}")


def read_grid(path: Union[str, Path]) -> SO3Grid:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# so3grid"):
        raise ParseError("missing '# so3grid' header", f"{path}:1")
    try:
        fields = dict(tok.split("=") for tok in lines[0].split()[2:])
        n_side, K = int(fields["n_side"]), int(fields["K"])
    except (KeyError, ValueError):
        raise ParseError("malformed header", f"{path}:1")
    quats = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        try:
            if len(parts) != 5 or int(parts[0]) != len(quats):
                raise ValueError
            quats.append([float(v) for v in parts[1:]])
        except ValueError:
            raise ParseError("expected 'k qw qx qy qz'", f"{path}:{lineno}")
    if len(quats) != K:
        raise ParseError(f"header announces K={K}, found {len(quats)} rows", str(path))
    return SO3Grid(n_side, K // (12 * n_side * n_side), np.array(quats))
