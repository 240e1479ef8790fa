from fastapi import APIRouter, HTTPException, Path as PathParam
from datetime import datetime
from typing import Dict
import logging
import math

import numpy as np

from src import __version__
from src.errors import PoseKitError
from src.geometry import Pose, Rotation, geodesic_angle, perspective_features, site_decode, site_encode, undo_crop_rotation
from src.metrics import tta_select_index
from src.models import (
    GridInfo, HealthCheck,
    NearestRequest, NearestResponse,
    PerspectiveRequest, PerspectiveResponse,
    PoseModel, SiteCoords, SiteDecodeRequest, SiteEncodeRequest, TranslationResponse,
    TtaRequest, TtaResponse,
)
from src.so3grid import SO3Grid, nearest_bucket, so3_prototypes

logger = logging.getLogger(__name__)

router = APIRouter()

grids: Dict[int, SO3Grid] = {}


def get_grid(n_side: int) -> SO3Grid:
    if n_side not in grids:
        grids[n_side] = so3_prototypes(n_side)
        logger.info(f"Cached SO(3) grid n_side={n_side} (K={grids[n_side].K})")
    return grids[n_side]


def unprocessable(e: PoseKitError) -> HTTPException:
    logger.error(f"Rejected request: {e}")
    return HTTPException(status_code=422, detail=str(e))


def pose_model(pose: Pose) -> PoseModel:
    return PoseModel(q=tuple(pose.rotation.q.tolist()), t=tuple(pose.translation.tolist()))


@router.get("/health", response_model=HealthCheck)
async def health_check():
    return HealthCheck(status="healthy", version=__version__, timestamp=datetime.now().isoformat())


@router.get("/grid/{n_side}", response_model=GridInfo)
async def grid_info(n_side: int = PathParam(..., ge=1, le=8)):
    grid = get_grid(n_side)
    return GridInfo(n_side=n_side, m1=grid.m1, m2=grid.m2, K=grid.K)


@router.post("/grid/nearest", response_model=NearestResponse)
async def grid_nearest(request: NearestRequest):
    try:
        rot = Rotation(request.q)
    except PoseKitError as e:
        raise unprocessable(e)
    grid = get_grid(request.n_side)
    k = nearest_bucket(rot, grid)
    proto = grid.prototype(k)
    return NearestResponse(
        index=k,
        angle_deg=math.degrees(geodesic_angle(rot, proto)),
        prototype=tuple(proto.q.tolist()),
    )


@router.post("/site/encode", response_model=SiteCoords)
async def encode_site(request: SiteEncodeRequest):
    try:
        return site_encode(request.t, request.bbox, request.camera)
    except PoseKitError as e:
        raise unprocessable(e)


@router.post("/site/decode", response_model=TranslationResponse)
async def decode_site(request: SiteDecodeRequest):
    try:
        t = site_decode(request.site, request.bbox, request.camera)
    except PoseKitError as e:
        raise unprocessable(e)
    return TranslationResponse(t=tuple(t.tolist()))


@router.post("/perspective", response_model=PerspectiveResponse)
async def perspective(request: PerspectiveRequest):
    try:
        features = perspective_features(request.bbox, request.camera, request.stage, request.coarse_t)
    except PoseKitError as e:
        raise unprocessable(e)
    return PerspectiveResponse(features=tuple(np.asarray(features).tolist()))


@router.post("/tta/select", response_model=TtaResponse)
async def tta_select(request: TtaRequest):
    """Undo each candidate's in-plane crop rotation, then keep the best-scoring one."""
    try:
        index = tta_select_index([c.score for c in request.candidates])
        best = request.candidates[index]
        rot = undo_crop_rotation(Rotation(best.pose.q), best.quarter_turns)
        pose = Pose(rot, best.pose.t)
    except PoseKitError as e:
        raise unprocessable(e)
    return TtaResponse(index=index, pose=pose_model(pose))


@router.get("/api-info")
async def get_api_info():
    return {
        "name": "PoseKit API",
        "version": __version__,
        "description": "Pure geometry, SO(3) grid and selection operations of the pose pipeline",
        "endpoints": {
            "GET /health": "Health check",
            "GET /grid/{n_side}": "SO(3) grid sizes",
            "POST /grid/nearest": "Nearest rotation bucket",
            "POST /site/encode": "Metric translation to SITE coordinates",
            "POST /site/decode": "SITE coordinates to metric translation",
            "POST /perspective": "Perspective-aware crop features",
            "POST /tta/select": "Test-time augmentation winner",
        },
    }
