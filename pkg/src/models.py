import math
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


def _finite(value: float) -> float:
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


class CameraIntrinsics(BaseModel):
    model_config = ConfigDict(frozen=True)

    fx: float = Field(..., gt=0.0)
    fy: float = Field(..., gt=0.0)
    cx: float
    cy: float
    width: int = Field(default=640, ge=1)
    height: int = Field(default=480, ge=1)

    @property
    def focal(self) -> float:
        """Single focal length sqrt(fx * fy) used wherever one f is needed."""
        return math.sqrt(self.fx * self.fy)

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @classmethod
    def from_K(cls, K: List[float], width: int = 640, height: int = 480) -> "CameraIntrinsics":
        """Build intrinsics from a row-major 3x3 matrix given as 9 floats."""
        return cls(fx=K[0], fy=K[4], cx=K[2], cy=K[5], width=width, height=height)


class BBox(BaseModel):
    """Square crop around an object: center, side length and crop resize ratio."""

    model_config = ConfigDict(frozen=True)

    center_x: float
    center_y: float
    size: float = Field(..., gt=0.0)
    resize_ratio: float = Field(default=1.0, gt=0.0)


class SiteCoords(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau_x: float
    tau_y: float
    tau_z: float

    check_finite = field_validator("tau_x", "tau_y", "tau_z")(_finite)

    def as_array(self) -> np.ndarray:
        return np.array([self.tau_x, self.tau_y, self.tau_z])


class Rot6D(BaseModel):
    """First two rotation-matrix columns, not necessarily orthonormal."""

    model_config = ConfigDict(frozen=True)

    a1: Tuple[float, float, float]
    a2: Tuple[float, float, float]

    @field_validator("a1", "a2")
    @classmethod
    def components_finite(cls, value):
        for v in value:
            _finite(v)
        return value


class LossWeights(BaseModel):
    """Weights of the seven training terms; defaults are the published values."""

    model_config = ConfigDict(frozen=True)

    w_cls_rot: float = Field(default=0.05, ge=0.0)
    w_cls_xy: float = Field(default=2.0, ge=0.0)
    w_cls_z: float = Field(default=2.0, ge=0.0)
    w_reg_rot: float = Field(default=1.0, ge=0.0)
    w_reg_xy: float = Field(default=1.0, ge=0.0)
    w_reg_z: float = Field(default=0.2, ge=0.0)
    w_mask: float = Field(default=10.0, ge=0.0)
    w_plus: float = Field(default=100.0, gt=0.0)

    def as_vector(self) -> np.ndarray:
        return np.array([
            self.w_cls_rot, self.w_cls_xy, self.w_cls_z,
            self.w_reg_rot, self.w_reg_xy, self.w_reg_z,
            self.w_mask,
        ])


class ScaleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    resolution: int = Field(..., ge=1)
    in_channels: int = Field(..., ge=1)
    out_channels: int = Field(..., ge=1)
    stride: int = Field(..., ge=1)


class PyramidSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    scales: List[ScaleSpec]

    @classmethod
    def canonical(cls) -> "PyramidSpec":
        return cls(scales=[
            ScaleSpec(resolution=64, in_channels=186, out_channels=128, stride=2),
            ScaleSpec(resolution=32, in_channels=377, out_channels=256, stride=2),
            ScaleSpec(resolution=16, in_channels=505, out_channels=256, stride=1),
        ])


class ResultRow(BaseModel):
    """One line of a BOP results file."""

    scene_id: int = Field(..., ge=0)
    im_id: int = Field(..., ge=0)
    obj_id: int = Field(..., ge=0)
    score: float
    R: List[float] = Field(..., min_length=9, max_length=9)
    t: List[float] = Field(..., min_length=3, max_length=3)
    time: float = -1.0

    check_finite = field_validator("score", "time")(_finite)


class RecallReport(BaseModel):
    ar_vsd: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    ar_mssd: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    ar_mspd: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    ar: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    add_recall: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    auc_adds: Optional[float] = Field(default=None, ge=0.0, le=100.0)
    auc_add_s: Optional[float] = Field(default=None, ge=0.0, le=100.0)
    n_records: int = 0
    thresholds: Dict[str, List[float]] = Field(default_factory=dict)
    recalls: Dict[str, List] = Field(default_factory=dict)
    per_object: Dict[str, Dict[str, float]] = Field(default_factory=dict)


# HTTP request / response models

class PoseModel(BaseModel):
    q: Tuple[float, float, float, float]
    t: Tuple[float, float, float]


class HealthCheck(BaseModel):
    status: str
    version: str
    timestamp: str


class GridInfo(BaseModel):
    n_side: int
    m1: int
    m2: int
    K: int


class NearestRequest(BaseModel):
    n_side: int = Field(default=4, ge=1, le=8)
    q: Tuple[float, float, float, float]


class NearestResponse(BaseModel):
    index: int
    angle_deg: float
    prototype: Tuple[float, float, float, float]


class SiteEncodeRequest(BaseModel):
    t: Tuple[float, float, float]
    bbox: BBox
    camera: CameraIntrinsics


class SiteDecodeRequest(BaseModel):
    site: SiteCoords
    bbox: BBox
    camera: CameraIntrinsics


class TranslationResponse(BaseModel):
    t: Tuple[float, float, float]


class PerspectiveRequest(BaseModel):
    bbox: BBox
    camera: CameraIntrinsics
    stage: Literal["classifier", "regressor"] = "classifier"
    coarse_t: Optional[Tuple[float, float, float]] = None


class PerspectiveResponse(BaseModel):
    features: Tuple[float, float, float]


class TtaCandidate(BaseModel):
    pose: PoseModel
    score: float
    quarter_turns: int = Field(default=0, ge=0, le=3)


class TtaRequest(BaseModel):
    candidates: List[TtaCandidate] = Field(..., min_length=1)


class TtaResponse(BaseModel):
    index: int
    pose: PoseModel
