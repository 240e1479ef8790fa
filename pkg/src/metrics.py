"""Pose-error metrics, recall aggregation and test-time-augmentation selection."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from sklearn.neighbors import NearestNeighbors

from .bopio import row_pose
from .config import get_settings
from .errors import EmptyInput, EmptyRender, InvalidParam, MissingAsset
from .geometry import Pose
from .models import CameraIntrinsics, RecallReport, ResultRow
from .render import rasterize
from .symlabels import Mesh, ObjectAsset, SymmetrySet

logger = logging.getLogger(__name__)

# BOP19 parameterization
CORRESPONDENCE_THRESHOLDS = np.arange(1, 11) / 20.0
VSD_TAUS = np.arange(1, 11) / 20.0
MSPD_THRESHOLDS = np.arange(1, 11) * 5.0
ADD_FRACTION = 0.1
AUC_MAX_THRESHOLD = 100.0

ALL_METRICS = ("vsd", "mssd", "mspd", "add", "adds", "auc")


def _symmetric_gt_points(gt: Pose, pts: np.ndarray, sym: Optional[SymmetrySet]) -> np.ndarray:
    """(S, V, 3) camera-frame points of gt o S for every symmetry S."""
    sym = sym if sym is not None else SymmetrySet()
    return np.einsum("ij,svj->svi", gt.rotation.matrix, sym.apply_all(pts)) + gt.translation


def mssd(est: Pose, gt: Pose, mesh: Mesh, sym: Optional[SymmetrySet] = None) -> float:
    """Maximum Symmetry-Aware Surface Distance in mm."""
    pts = mesh.vertices
    pts_est = est.transform(pts)
    dists = np.linalg.norm(pts_est[None] - _symmetric_gt_points(gt, pts, sym), axis=2)
    return float(dists.max(axis=1).min())


def _project(points: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    z = points[..., 2]
    return np.stack([cam.fx * points[..., 0] / z + cam.cx, cam.fy * points[..., 1] / z + cam.cy], axis=-1)


def mspd(est: Pose, gt: Pose, mesh: Mesh, sym: Optional[SymmetrySet], cam: CameraIntrinsics) -> float:
    """Maximum Symmetry-Aware Projection Distance in pixels; inf when a vertex is not in front of the camera."""
    pts = mesh.vertices
    pts_est = est.transform(pts)
    pts_gt = _symmetric_gt_points(gt, pts, sym)
    # index 0 is the identity, i.e. the ground-truth pose itself
    if np.any(pts_est[:, 2] <= 0) or np.any(pts_gt[0, :, 2] <= 0):
        return float("inf")
    valid = np.all(pts_gt[..., 2] > 0, axis=1)
    proj_est = _project(pts_est, cam)
    proj_gt = _project(pts_gt[valid], cam)
    return float(np.linalg.norm(proj_est[None] - proj_gt, axis=2).max(axis=1).min())


def vsd_errors(
    est: Pose,
    gt: Pose,
    mesh: Mesh,
    cam: CameraIntrinsics,
    taus: Sequence[float],
) -> np.ndarray:
    """Visible Surface Discrepancy for several tolerances from one pair of renders (full visibility)."""
    depth_est, mask_est = rasterize(mesh, est, cam)
    depth_gt, mask_gt = rasterize(mesh, gt, cam)
    union = mask_est | mask_gt
    n_union = int(union.sum())
    if n_union == 0:
        raise EmptyRender("neither pose renders any pixel")
    both = mask_est & mask_gt
    diff = np.abs(depth_est[both] - depth_gt[both])
    taus = np.asarray(taus, dtype=np.float64)
    matched = (diff[None, :] < taus[:, None]).sum(axis=1)
    return 1.0 - matched / n_union


def vsd(est: Pose, gt: Pose, mesh: Mesh, cam: CameraIntrinsics, tau: float) -> float:
    return float(vsd_errors(est, gt, mesh, cam, [tau])[0])


def add_adds(est: Pose, gt: Pose, mesh: Mesh, symmetric: bool) -> float:
    """ADD, or ADD-S (closest model point) when symmetric, in mm."""
    pts_est = est.transform(mesh.vertices)
    pts_gt = gt.transform(mesh.vertices)
    if not symmetric:
        return float(np.linalg.norm(pts_est - pts_gt, axis=1).mean())
    nn = NearestNeighbors(n_neighbors=1, algorithm="kd_tree").fit(pts_gt)
    dist, _ = nn.kneighbors(pts_est)
    return float(dist.mean())


def auc(errors: Sequence[float], max_threshold: float = AUC_MAX_THRESHOLD) -> float:
    """Area under the accuracy-threshold curve on [0, max_threshold], in percent.

    Integrates the empirical step function exactly: each error e contributes
    max(0, 1 - e / max_threshold).
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise EmptyInput("AUC needs at least one error value")
    if not max_threshold > 0:
        raise InvalidParam(f"max_threshold must be positive, got {max_threshold}")
    return float(100.0 * np.mean(np.maximum(0.0, 1.0 - e / max_threshold)))


def add_recall(errors: Sequence[float], diameters: Sequence[float], fraction: float = ADD_FRACTION) -> float:
    """Fraction of ADD(-S) errors below fraction * diameter."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise EmptyInput("recall needs at least one error value")
    return float(np.mean(e < fraction * np.asarray(diameters, dtype=np.float64)))


def tta_select_index(scores: Sequence[float]) -> int:
    if len(scores) == 0:
        raise EmptyInput("no candidates to select from")
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def tta_select(candidates: Sequence[Tuple[Pose, float]]) -> Pose:
    """Highest-score candidate; the earliest wins ties."""
    index = tta_select_index([score for _, score in candidates])
    return candidates[index][0]


class EvalRecord(BaseModel):
    """One ground-truth instance and the estimate matched to it (None when missed)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    scene_id: int = Field(..., ge=0)
    im_id: int = Field(..., ge=0)
    obj_id: int = Field(..., ge=0)
    est: Optional[Pose] = None
    score: float = 0.0
    gt: Pose
    asset: Optional[ObjectAsset] = None
    camera: Optional[CameraIntrinsics] = None


class RecordErrors(NamedTuple):
    obj_id: int
    diameter: float
    mssd: float
    mspd: float
    mspd_scale: float
    vsd: np.ndarray
    add: float
    adds: float
    add_s: float


def evaluate_record(record: EvalRecord, metrics: Iterable[str] = ALL_METRICS) -> RecordErrors:
    if record.asset is None or record.camera is None:
        raise MissingAsset(
            f"record scene={record.scene_id} im={record.im_id} obj={record.obj_id} lacks a mesh or intrinsics"
        )
    metrics = set(metrics)
    asset, cam = record.asset, record.camera
    d = asset.diameter
    inf = float("inf")
    vsd_err = np.ones(len(VSD_TAUS))
    e_mssd = e_mspd = e_add = e_adds = inf
    if record.est is not None:
        est, gt, mesh = record.est, record.gt, asset.mesh
        if "mssd" in metrics:
            e_mssd = mssd(est, gt, mesh, asset.symmetries)
        if "mspd" in metrics:
            e_mspd = mspd(est, gt, mesh, asset.symmetries, cam)
        if "vsd" in metrics:
            try:
                vsd_err = vsd_errors(est, gt, mesh, cam, VSD_TAUS * d)
            except EmptyRender:
                logger.warning(f"Empty renders for scene={record.scene_id} im={record.im_id} obj={record.obj_id}")
        if metrics & {"add", "adds", "auc"}:
            e_add = add_adds(est, gt, mesh, symmetric=False)
            e_adds = add_adds(est, gt, mesh, symmetric=True)
    e_add_s = e_adds if asset.symmetries.is_symmetric else e_add
    logger.debug(f"scene={record.scene_id} im={record.im_id} obj={record.obj_id}: mssd={e_mssd:.3f} mspd={e_mspd:.3f}")
    return RecordErrors(record.obj_id, d, e_mssd, e_mspd, cam.width / 640.0, vsd_err, e_add, e_adds, e_add_s)


def _recall_tables(errors: Sequence[RecordErrors]) -> Dict[str, np.ndarray]:
    """Per-record pass/fail arrays: mssd (N, 10), mspd (N, 10), vsd (N, 10 taus, 10 thresholds)."""
    diam = np.array([e.diameter for e in errors])
    return {
        "mssd": np.array([e.mssd for e in errors])[:, None] < CORRESPONDENCE_THRESHOLDS[None] * diam[:, None],
        "mspd": np.array([e.mspd for e in errors])[:, None] < MSPD_THRESHOLDS[None] * np.array([e.mspd_scale for e in errors])[:, None],
        "vsd": np.stack([e.vsd for e in errors])[:, :, None] < CORRESPONDENCE_THRESHOLDS[None, None, :],
    }


def average_recall(
    records: Sequence[EvalRecord],
    metrics: Iterable[str] = ALL_METRICS,
    jobs: Optional[int] = None,
) -> RecallReport:
    """BOP average recalls plus ADD(-S) recall and AUCs, with a per-object breakdown."""
    if not records:
        raise EmptyInput("no evaluation records")
    metrics = tuple(metrics)
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise InvalidParam(f"unknown metrics {sorted(unknown)}")
    jobs = jobs or get_settings().jobs
    ordered = sorted(records, key=lambda r: (r.scene_id, r.im_id, r.obj_id))
    logger.info(f"Evaluating {len(ordered)} records with {jobs} workers")
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        errors = list(pool.map(lambda r: evaluate_record(r, metrics), ordered))

    tables = _recall_tables(errors)
    report = {"n_records": len(errors), "thresholds": {}, "recalls": {}}
    per_record = pd.DataFrame({"obj_id": [e.obj_id for e in errors]})
    for name in ("mssd", "mspd", "vsd"):
        if name not in metrics:
            continue
        passed = tables[name]
        per_record[name] = passed.reshape(len(errors), -1).mean(axis=1)
        report["recalls"][name] = passed.mean(axis=0).tolist()
        report[f"ar_{name}"] = float(passed.mean())
    report["thresholds"]["mssd"] = CORRESPONDENCE_THRESHOLDS.tolist()
    report["thresholds"]["mspd"] = MSPD_THRESHOLDS.tolist()
    report["thresholds"]["vsd_tau"] = VSD_TAUS.tolist()
    report["thresholds"]["vsd_theta"] = CORRESPONDENCE_THRESHOLDS.tolist()
    if all(m in metrics for m in ("vsd", "mssd", "mspd")):
        report["ar"] = (report["ar_vsd"] + report["ar_mssd"] + report["ar_mspd"]) / 3.0

    if "add" in metrics:
        report["add_recall"] = add_recall([e.add_s for e in errors], [e.diameter for e in errors])
        per_record["add"] = [float(e.add_s < ADD_FRACTION * e.diameter) for e in errors]
    if "adds" in metrics:
        report["auc_adds"] = auc([e.adds for e in errors])
    if "auc" in metrics:
        report["auc_add_s"] = auc([e.add_s for e in errors])

    grouped = per_record.groupby("obj_id", sort=True)
    per_object = grouped.mean()
    per_object["n"] = grouped.size()
    report["per_object"] = {
        str(obj_id): {col: float(v) for col, v in row.items()} for obj_id, row in per_object.iterrows()
    }
    result = RecallReport(**report)
    logger.info(f"AR={result.ar} (vsd={result.ar_vsd}, mssd={result.ar_mssd}, mspd={result.ar_mspd})")
    return result


def match_estimates(
    estimates: Sequence[Tuple[Pose, float]],
    gts: Sequence[Pose],
    asset: ObjectAsset,
) -> List[Optional[Tuple[Pose, float]]]:
    """Greedy assignment for one (image, object): estimates by score, each to the unmatched gt with the smallest MSSD."""
    order = sorted(range(len(estimates)), key=lambda i: -estimates[i][1])
    matched: List[Optional[Tuple[Pose, float]]] = [None] * len(gts)
    for i in order:
        free = [j for j in range(len(gts)) if matched[j] is None]
        if not free:
            logger.warning(f"{len(estimates) - len(gts)} estimates left without a ground-truth instance")
            break
        est = estimates[i][0]
        best = min(free, key=lambda j: mssd(est, gts[j], asset.mesh, asset.symmetries))
        matched[best] = estimates[i]
    return matched


def build_records(
    scene_id: int,
    results: Sequence[ResultRow],
    gts: Sequence,
    assets: Dict[int, ObjectAsset],
) -> List[EvalRecord]:
    """One record per ground-truth instance of the scene, estimates matched per image and object.

    `gts` holds (im_id, obj_id, pose, camera) entries as read from scene files.
    """
    by_key: Dict[Tuple[int, int], List[Tuple[Pose, float]]] = {}
    for row in results:
        if row.scene_id != scene_id:
            continue
        by_key.setdefault((row.im_id, row.obj_id), []).append((row_pose(row), row.score))
    gt_by_key: Dict[Tuple[int, int], List] = {}
    for inst in gts:
        gt_by_key.setdefault((inst.im_id, inst.obj_id), []).append(inst)

    orphaned = set(by_key) - set(gt_by_key)
    if orphaned:
        logger.warning(f"Ignoring estimates for {len(orphaned)} (image, object) pairs without ground truth")

    records = []
    for (im_id, obj_id), insts in sorted(gt_by_key.items()):
        asset = assets.get(obj_id)
        estimates = by_key.get((im_id, obj_id), [])
        if asset is None:
            matched = [None] * len(insts)
        else:
            matched = match_estimates(estimates, [inst.pose for inst in insts], asset)
        for inst, m in zip(insts, matched):
            records.append(EvalRecord(
                scene_id=scene_id, im_id=im_id, obj_id=obj_id,
                est=m[0] if m else None, score=m[1] if m else 0.0,
                gt=inst.pose, asset=asset, camera=inst.camera,
            ))
    return records
