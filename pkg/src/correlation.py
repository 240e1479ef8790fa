"""Windowed feature correlation and the multiscale residual correlation pyramid.

Feature volumes are numpy arrays of shape (d, H, W). A correlation volume has
window**2 channels; channel c enumerates the shift (v_y, v_x) in row-major
order from (-h, -h) to (h, h), h = (window - 1) // 2, and reads zeros outside
the image.
"""
import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidWindow, NonFinite, ShapeMismatch, SpecViolation
from .models import PyramidSpec

logger = logging.getLogger(__name__)

BENCHMARK_COLUMNS = ["d", "H", "W", "window", "impl", "ns_per_output_element", "checksum"]


def _as_volume(f: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeMismatch(f"{name} must be a non-empty d x H x W volume, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"{name} has non-finite values")
    return arr


def check_window(window: int, height: int, width: int):
    if window < 1 or window % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd integer, got {window}")
    limit = 2 * min(height, width) - 1
    if window > limit:
        raise InvalidWindow(f"window {window} exceeds {limit} for a {height}x{width} volume")


def shift_offsets(window: int) -> List[tuple]:
    h = (window - 1) // 2
    return [(vy, vx) for vy in range(-h, h + 1) for vx in range(-h, h + 1)]


def _corr_naive(f_s: np.ndarray, f_r: np.ndarray, window: int) -> np.ndarray:
    d, H, W = f_s.shape
    out = np.zeros((window * window, H, W))
    for c, (vy, vx) in enumerate(shift_offsets(window)):
        for y in range(H):
            for x in range(W):
                yy, xx = y + vy, x + vx
                if 0 <= yy < H and 0 <= xx < W:
                    out[c, y, x] = np.dot(f_s[:, y, x], f_r[:, yy, xx])
    return out / math.sqrt(d)


def _corr_shifted(f_s: np.ndarray, f_r: np.ndarray, window: int) -> np.ndarray:
    d, H, W = f_s.shape
    h = (window - 1) // 2
    padded = np.pad(f_r, ((0, 0), (h, h), (h, h)))
    out = np.empty((window * window, H, W))
    for c, (vy, vx) in enumerate(shift_offsets(window)):
        shifted = padded[:, h + vy:h + vy + H, h + vx:h + vx + W]
        out[c] = np.einsum("dhw,dhw->hw", f_s, shifted)
    return out / math.sqrt(d)


def _corr_windowed(f_s: np.ndarray, f_r: np.ndarray, window: int) -> np.ndarray:
    d, H, W = f_s.shape
    h = (window - 1) // 2
    padded = np.pad(f_r, ((0, 0), (h, h), (h, h)))
    patches = sliding_window_view(padded, (window, window), axis=(1, 2))
    out = np.einsum("dhw,dhwij->ijhw", f_s, patches)
    return out.reshape(window * window, H, W) / math.sqrt(d)


IMPLEMENTATIONS: Dict[str, Callable[[np.ndarray, np.ndarray, int], np.ndarray]] = {
    "naive": _corr_naive,
    "shifted": _corr_shifted,
    "windowed": _corr_windowed,
}


def corr_volume(f_s: np.ndarray, f_r: np.ndarray, window: int, impl: str = "shifted") -> np.ndarray:
    """c(v, x) = f_s(x) . f_r(x + v) / sqrt(d) for every shift in the window."""
    f_s = _as_volume(f_s, "rendered features")
    f_r = _as_volume(f_r, "real features")
    if f_s.shape != f_r.shape:
        raise ShapeMismatch(f"feature volumes differ: {f_s.shape} vs {f_r.shape}")
    check_window(window, f_s.shape[1], f_s.shape[2])
    try:
        kernel = IMPLEMENTATIONS[impl]
    except KeyError:
        raise ValueError(f"unknown correlation implementation '{impl}'")
    return kernel(f_s, f_r, window)


def project_features(f: np.ndarray, proj: np.ndarray) -> np.ndarray:
    """Shared 1x1 convolution: the same out x in matrix at every pixel."""
    f = _as_volume(f, "features")
    proj = np.asarray(proj, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[1] != f.shape[0]:
        raise ShapeMismatch(f"projection {proj.shape} does not take {f.shape[0]} input channels")
    return np.einsum("oi,ihw->ohw", proj, f)


def avg_pool2x2(f: np.ndarray) -> np.ndarray:
    d, H, W = f.shape
    if H < 2 or W < 2:
        raise ShapeMismatch(f"cannot pool a {H}x{W} volume")
    h2, w2 = H // 2, W // 2
    return f[:, :2 * h2, :2 * w2].reshape(d, h2, 2, w2, 2).mean(axis=(2, 4))


class PyramidResult:
    def __init__(self, levels: List[np.ndarray], fused: List[np.ndarray]):
        self.levels = levels
        self.fused = fused

    @property
    def channels(self) -> tuple:
        return tuple(level.shape[0] for level in self.levels)


def build_pyramid_concat(
    real_feats: Sequence[np.ndarray],
    rendered_feats: Sequence[np.ndarray],
    mask: np.ndarray,
    projections: Sequence[np.ndarray],
    window: int = 11,
    fusions: Optional[Sequence[Optional[np.ndarray]]] = None,
    spec: Optional[PyramidSpec] = None,
) -> PyramidResult:
    """Aggregate real features, correlation features and the pooled previous level, finest first.

    Level 0 concatenates [real, mask, corr]; every coarser level concatenates
    [real, corr, avg_pool2x2(previous fusion output)]. A fusion is a per-pixel
    linear map standing in for the learned 3x3 convolution (identity if None).
    """
    n = len(real_feats)
    if n == 0 or len(rendered_feats) != n or len(projections) != n:
        raise ShapeMismatch(
            f"need matching scale counts: {n} real, {len(rendered_feats)} rendered, {len(projections)} projections"
        )
    fusions = list(fusions) if fusions is not None else [None] * n
    if len(fusions) != n:
        raise ShapeMismatch(f"{len(fusions)} fusion maps for {n} scales")
    if spec is not None and len(spec.scales) != n:
        raise ShapeMismatch(f"pyramid spec has {len(spec.scales)} scales, got {n}")

    levels, fused = [], []
    pooled = None
    for i in range(n):
        real = _as_volume(real_feats[i], f"real features at scale {i}")
        rendered = _as_volume(rendered_feats[i], f"rendered features at scale {i}")
        if real.shape[1:] != rendered.shape[1:]:
            raise ShapeMismatch(f"scale {i}: real {real.shape} vs rendered {rendered.shape}")
        corr = corr_volume(project_features(rendered, projections[i]), project_features(real, projections[i]), window)
        if i == 0:
            m = np.asarray(mask, dtype=np.float64)
            if m.shape != real.shape[1:]:
                raise ShapeMismatch(f"mask {m.shape} does not match finest scale {real.shape[1:]}")
            parts = [real, m[None], corr]
        else:
            if pooled.shape[1:] != real.shape[1:]:
                raise ShapeMismatch(f"scale {i} is {real.shape[1:]}, previous scale pools to {pooled.shape[1:]}")
            parts = [real, corr, pooled]
        concat = np.concatenate(parts, axis=0)
        if spec is not None and concat.shape[0] != spec.scales[i].in_channels:
            raise SpecViolation(i, spec.scales[i].in_channels, concat.shape[0])
        out = concat if fusions[i] is None else project_features(concat, fusions[i])
        logger.debug(f"Scale {i}: {concat.shape[0]} channels at {concat.shape[1]}x{concat.shape[2]} -> {out.shape[0]}")
        levels.append(concat)
        fused.append(out)
        if i < n - 1:
            pooled = avg_pool2x2(out)
    return PyramidResult(levels, fused)


def run_benchmark(
    d: int,
    H: int,
    W: int,
    window: int,
    impls: Sequence[str] = ("naive", "shifted", "windowed"),
    repeat: int = 1,
    seed: int = 0,
) -> pd.DataFrame:
    """Time each implementation on one random pair of volumes."""
    check_window(window, H, W)
    rng = np.random.default_rng(seed)
    f_s = rng.standard_normal((d, H, W))
    f_r = rng.standard_normal((d, H, W))
    rows = []
    for impl in impls:
        start = time.perf_counter_ns()
        for _ in range(repeat):
            out = corr_volume(f_s, f_r, window, impl=impl)
        elapsed = time.perf_counter_ns() - start
        per_element = elapsed / (repeat * out.size)
        logger.info(f"{impl}: {per_element:.2f} ns per output element")
        rows.append({
            "d": d, "H": H, "W": W, "window": window, "impl": impl,
            "ns_per_output_element": per_element,
            "checksum": float(out.sum()),
        })
    return pd.DataFrame(rows, columns=BENCHMARK_COLUMNS)
