"""Training loss terms as per-sample scalars, with closed-form gradients where they exist."""
import logging
from typing import Callable, Literal, Optional, Sequence, Union

import numpy as np

from .errors import InvalidParam, NonFinite, NotNormalized, ShapeMismatch
from .geometry import Pose, Rotation, site_decode, site_encode
from .models import BBox, CameraIntrinsics, LossWeights, SiteCoords
from .symlabels import Mesh, RotationSoftLabels, SymmetrySet, pose_distance_symm

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7
NORMALIZATION_TOL = 1e-5

Labels = Union[RotationSoftLabels, Sequence[float], np.ndarray]


def _values(labels: Labels) -> np.ndarray:
    if isinstance(labels, RotationSoftLabels):
        return labels.values
    return np.asarray(labels, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what}: {a.shape} vs {b.shape}")


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _inside(p: np.ndarray) -> np.ndarray:
    # the clamp is flat outside this range
    return (p > PROB_EPS) & (p < 1.0 - PROB_EPS)


def focal_binary_soft(p_hat: Sequence[float], labels: Labels, w_plus: float = 100.0) -> float:
    """sum_k -w+ l (1-p)^2 log p - (1-l) p^2 log(1-p); summed over K, not averaged."""
    p = np.asarray(p_hat, dtype=np.float64)
    l = _values(labels)
    _same_shape(p, l, "probabilities and labels")
    p = _clamp(p)
    pos = -w_plus * l * (1 - p) ** 2 * np.log(p)
    neg = -(1 - l) * p ** 2 * np.log1p(-p)
    return float(np.sum(pos + neg))


def focal_binary_soft_grad(p_hat: Sequence[float], labels: Labels, w_plus: float = 100.0) -> np.ndarray:
    raw = np.asarray(p_hat, dtype=np.float64)
    l = _values(labels)
    _same_shape(raw, l, "probabilities and labels")
    p = _clamp(raw)
    d_pos = -w_plus * l * (-2 * (1 - p) * np.log(p) + (1 - p) ** 2 / p)
    d_neg = -(1 - l) * (2 * p * np.log1p(-p) - p ** 2 / (1 - p))
    return np.where(_inside(raw), d_pos + d_neg, 0.0)


def _check_distribution(p: np.ndarray):
    total = p.sum()
    if abs(total - 1.0) > NORMALIZATION_TOL:
        raise NotNormalized(f"probabilities sum to {total:.8f}")


def focal_multiclass(p_hat: Sequence[float], labels: Sequence[float], validate: bool = True) -> float:
    """-(1 - s)^2 log s with s = sum_j l_j p_j."""
    p = np.asarray(p_hat, dtype=np.float64)
    l = np.asarray(labels, dtype=np.float64)
    _same_shape(p, l, "probabilities and labels")
    if validate:
        _check_distribution(p)
    s = float(np.clip(np.dot(l.ravel(), p.ravel()), PROB_EPS, 1.0 - PROB_EPS))
    return float(-((1 - s) ** 2) * np.log(s))


def focal_multiclass_grad(p_hat: Sequence[float], labels: Sequence[float], validate: bool = True) -> np.ndarray:
    p = np.asarray(p_hat, dtype=np.float64)
    l = np.asarray(labels, dtype=np.float64)
    _same_shape(p, l, "probabilities and labels")
    if validate:
        _check_distribution(p)
    raw = float(np.dot(l.ravel(), p.ravel()))
    if not PROB_EPS < raw < 1.0 - PROB_EPS:
        return np.zeros_like(p)
    d_s = 2 * (1 - raw) * np.log(raw) - (1 - raw) ** 2 / raw
    return d_s * l


def regression_loss_rot(
    delta_rot: Rotation,
    coarse_rot: Rotation,
    gt: Pose,
    mesh: Mesh,
    sym: Optional[SymmetrySet] = None,
) -> float:
    """Rotation term of the disentangled loss; translation held at ground truth."""
    return pose_distance_symm(gt.with_rotation(delta_rot @ coarse_rot), gt, mesh, sym)


def regression_loss_trans(
    component: Literal["xy", "z"],
    pred_site: SiteCoords,
    gt: Pose,
    bbox: BBox,
    cam: CameraIntrinsics,
    mesh: Mesh,
    sym: Optional[SymmetrySet] = None,
) -> float:
    """Substitute only the predicted xy (or z) SITE component into the ground truth and measure the pose distance."""
    gt_site = site_encode(gt.translation, bbox, cam)
    if component == "xy":
        mixed = SiteCoords(tau_x=pred_site.tau_x, tau_y=pred_site.tau_y, tau_z=gt_site.tau_z)
    elif component == "z":
        mixed = SiteCoords(tau_x=gt_site.tau_x, tau_y=gt_site.tau_y, tau_z=pred_site.tau_z)
    else:
        raise InvalidParam(f"component must be 'xy' or 'z', got {component!r}")
    t = site_decode(mixed, bbox, cam)
    return pose_distance_symm(gt.with_translation(t), gt, mesh, sym)


def mask_bce(pred_mask: np.ndarray, gt_mask: np.ndarray) -> float:
    p = np.asarray(pred_mask, dtype=np.float64)
    g = np.asarray(gt_mask, dtype=np.float64)
    _same_shape(p, g, "predicted and ground-truth masks")
    p = _clamp(p)
    return float(np.mean(-(g * np.log(p) + (1 - g) * np.log1p(-p))))


def mask_bce_grad(pred_mask: np.ndarray, gt_mask: np.ndarray) -> np.ndarray:
    raw = np.asarray(pred_mask, dtype=np.float64)
    g = np.asarray(gt_mask, dtype=np.float64)
    _same_shape(raw, g, "predicted and ground-truth masks")
    p = _clamp(raw)
    grad = (-g / p + (1 - g) / (1 - p)) / p.size
    return np.where(_inside(raw), grad, 0.0)


def total_loss(terms: Sequence[float], w: Optional[LossWeights] = None) -> float:
    """Weighted sum in the order cls_R, cls_xy, cls_z, reg_R, reg_xy, reg_z, mask."""
    w = w if w is not None else LossWeights()
    values = np.asarray(terms, dtype=np.float64)
    if values.shape != (7,):
        raise ShapeMismatch(f"expected 7 loss terms, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"non-finite loss term at positions {np.flatnonzero(~np.isfinite(values)).tolist()}")
    return float(np.dot(w.as_vector(), values))


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function."""
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn(x)
        flat[i] = orig - step
        f_minus = fn(x)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2 * step)
    return grad
