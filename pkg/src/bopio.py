"""Mesh, symmetry, scene ground-truth, results and report file I/O (BOP conventions, millimeters)."""
import io
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import get_settings
from .errors import FieldCount, MissingCamera, NonRigid, ParseError
from .geometry import Pose, orthonormalize
from .models import CameraIntrinsics, RecallReport, ResultRow
from .symlabels import Mesh, ObjectAsset, SymmetrySet

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RESULT_COLUMNS = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"]
RESULT_ORTHO_TOL = 1e-4
SYMMETRY_ORTHO_TOL = 1e-3

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
FACE_LISTS = ("vertex_indices", "vertex_index")


class PlyProperty(NamedTuple):
    name: str
    dtype: str
    count_dtype: Optional[str] = None  # set for list properties


class PlyElement(NamedTuple):
    name: str
    count: int
    properties: List[PlyProperty]


class GtPose(NamedTuple):
    im_id: int
    obj_id: int
    pose: Pose


class GtInstance(NamedTuple):
    im_id: int
    obj_id: int
    pose: Pose
    camera: CameraIntrinsics


class ModelInfo(NamedTuple):
    diameter: float
    symmetries: SymmetrySet


# Meshes

def _fan(polygon: Sequence[int]) -> List[Tuple[int, int, int]]:
    return [(polygon[0], polygon[i], polygon[i + 1]) for i in range(1, len(polygon) - 1)]


def _parse_ply_header(data: bytes, path: PathLike) -> Tuple[str, List[PlyElement], int]:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError("not a PLY file (missing 'ply' magic or 'end_header')", f"{path}:1")
    body_start = data.index(b"\n", end) + 1
    fmt = None
    elements: List[PlyElement] = []
    for lineno, raw in enumerate(data[:end].decode("ascii", errors="replace").splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1] if len(parts) > 1 else ""
            if fmt not in ("ascii", "binary_little_endian"):
                raise ParseError(f"unsupported PLY format '{fmt}'", f"{path}:{lineno}")
        elif parts[0] == "element" and len(parts) == 3:
            elements.append(PlyElement(parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            try:
                if parts[1] == "list":
                    prop = PlyProperty(parts[4], PLY_TYPES[parts[3]], PLY_TYPES[parts[2]])
                else:
                    prop = PlyProperty(parts[2], PLY_TYPES[parts[1]])
            except (IndexError, KeyError):
                raise ParseError(f"bad property line '{raw.strip()}'", f"{path}:{lineno}")
            elements[-1].properties.append(prop)
        else:
            raise ParseError(f"unexpected header line '{raw.strip()}'", f"{path}:{lineno}")
    if fmt is None:
        raise ParseError("PLY header has no format line", f"{path}:1")
    return fmt, elements, body_start


def _warn_unused(elements: List[PlyElement], path: PathLike):
    wanted = {"vertex": {"x", "y", "z"}, "face": set(FACE_LISTS)}
    skipped = [
        f"{el.name}.{p.name}" for el in elements for p in el.properties
        if p.name not in wanted.get(el.name, set())
    ]
    if skipped:
        logger.warning(f"Skipping PLY properties in {path}: {', '.join(skipped)}")


def _read_ply_ascii(text: str, elements: List[PlyElement], first_line: int, path: PathLike):
    lines = text.splitlines()
    cursor = 0
    vertices, faces = None, []
    for el in elements:
        columns = {p.name: i for i, p in enumerate(el.properties)}
        rows = []
        for _ in range(el.count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            if cursor >= len(lines):
                raise ParseError(f"file ends inside element '{el.name}'", f"{path}:{first_line + cursor}")
            tokens = lines[cursor].split()
            values, pos = [], 0
            try:
                for p in el.properties:
                    if p.count_dtype is None:
                        values.append(float(tokens[pos]))
                        pos += 1
                    else:
                        n = int(tokens[pos])
                        values.append([int(v) for v in tokens[pos + 1:pos + 1 + n]])
                        if len(values[-1]) != n:
                            raise IndexError
                        pos += 1 + n
            except (IndexError, ValueError):
                raise ParseError(f"malformed '{el.name}' row", f"{path}:{first_line + cursor}")
            rows.append(values)
            cursor += 1
        if el.name == "vertex":
            vertices = np.array([[r[columns[a]] for a in "xyz"] for r in rows], dtype=np.float64).reshape(-1, 3)
        elif el.name == "face":
            key = next((k for k in FACE_LISTS if k in columns), None)
            if key is not None:
                for r in rows:
                    faces.extend(_fan(r[columns[key]]))
    return vertices, faces


def _read_ply_binary(data: bytes, elements: List[PlyElement], offset: int, path: PathLike):
    vertices, faces = None, []
    for el in elements:
        start = offset
        has_list = any(p.count_dtype for p in el.properties)
        if not has_list:
            dtype = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
            size = dtype.itemsize * el.count
            if offset + size > len(data):
                raise ParseError(f"truncated data in element '{el.name}'", f"byte {offset}")
            table = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
            offset += size
            if el.name == "vertex":
                vertices = np.column_stack([table[a].astype(np.float64) for a in "xyz"])
            continue
        polygons = []
        try:
            for _ in range(el.count):
                row = {}
                for p in el.properties:
                    if p.count_dtype is None:
                        row[p.name] = np.frombuffer(data, "<" + p.dtype, 1, offset)[0]
                        offset += np.dtype(p.dtype).itemsize
                    else:
                        n = int(np.frombuffer(data, "<" + p.count_dtype, 1, offset)[0])
                        offset += np.dtype(p.count_dtype).itemsize
                        row[p.name] = np.frombuffer(data, "<" + p.dtype, n, offset).astype(np.int64)
                        offset += n * np.dtype(p.dtype).itemsize
                key = next((k for k in FACE_LISTS if k in row), None)
                if el.name == "face" and key is not None:
                    polygons.append(row[key].tolist())
        except ValueError:
            raise ParseError(f"truncated data in element '{el.name}' (element starts at byte {start})", f"byte {offset}")
        for poly in polygons:
            faces.extend(_fan(poly))
    return vertices, faces


def _load_ply(path: Path) -> Mesh:
    data = path.read_bytes()
    fmt, elements, body_start = _parse_ply_header(data, path)
    _warn_unused(elements, path)
    vertex = next((el for el in elements if el.name == "vertex"), None)
    if vertex is None or not {"x", "y", "z"} <= {p.name for p in vertex.properties}:
        raise ParseError("PLY has no vertex element with x, y, z", str(path))
    if fmt == "ascii":
        header_lines = data[:body_start].count(b"\n")
        vertices, faces = _read_ply_ascii(data[body_start:].decode("ascii"), elements, header_lines + 1, path)
    else:
        vertices, faces = _read_ply_binary(data, elements, body_start, path)
    return _build_mesh(vertices, faces, path)


def _load_obj(path: Path) -> Mesh:
    vertices, faces = [], []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                if tokens[0] == "v":
                    vertices.append([float(v) for v in tokens[1:4]])
                    if len(vertices[-1]) != 3:
                        raise ValueError
                elif tokens[0] == "f":
                    polygon = []
                    for tok in tokens[1:]:
                        idx = int(tok.split("/")[0])
                        polygon.append(idx - 1 if idx > 0 else len(vertices) + idx)
                    if len(polygon) < 3:
                        raise ValueError
                    faces.extend(_fan(polygon))
            except ValueError:
                raise ParseError(f"malformed '{tokens[0]}' line", f"{path}:{lineno}")
    return _build_mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces, path)


def _build_mesh(vertices: Optional[np.ndarray], faces: List, path: PathLike) -> Mesh:
    if vertices is None or len(vertices) == 0:
        raise ParseError("mesh has no vertices", str(path))
    if not np.all(np.isfinite(vertices)):
        raise ParseError("non-finite vertex coordinate", str(path))
    tri = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if tri.size and (tri.min() < 0 or tri.max() >= len(vertices)):
        raise ParseError(f"face index out of range for {len(vertices)} vertices", str(path))
    return Mesh(vertices, tri)


def load_mesh(path: PathLike) -> Mesh:
    """ASCII / binary little-endian PLY or OBJ; polygons are fan-triangulated."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        mesh = _load_ply(path)
    elif suffix == ".obj":
        mesh = _load_obj(path)
    else:
        raise ParseError(f"unsupported mesh format '{suffix}'", str(path))
    logger.info(f"Loaded {path.name}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return mesh


# Symmetries and model info

def _read_json(path: PathLike):
    try:
        with open(path, "r") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", f"{path}:{e.lineno}")


def _floats(values, n: int, what: str, where: str) -> np.ndarray:
    try:
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError):
        raise ParseError(f"{what} must be numbers", where)
    if arr.size != n:
        raise FieldCount(f"{what} has {arr.size} values, expected {n}", where)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{what} has non-finite values", where)
    return arr


def _rigid(R: np.ndarray, where: str) -> np.ndarray:
    R = R.reshape(3, 3)
    if np.abs(R @ R.T - np.eye(3)).max() > SYMMETRY_ORTHO_TOL or np.linalg.det(R) < 0:
        raise NonRigid(f"symmetry at {where} is not a proper rotation")
    return orthonormalize(R)


def _symmetry_set(discrete: List, continuous: List, steps: int, where: str) -> SymmetrySet:
    disc = []
    for i, (R, t) in enumerate(discrete):
        disc.append((_rigid(R, f"{where}[{i}]"), t))
    return SymmetrySet.from_spec(disc, continuous, steps)


def load_symmetries(path: PathLike, steps: Optional[int] = None) -> SymmetrySet:
    """JSON list of {R, t} discrete and {axis, offset} continuous entries; identity is added."""
    steps = steps if steps is not None else get_settings().symmetry_steps
    entries = _read_json(path)
    if not isinstance(entries, list):
        raise ParseError("symmetry file must hold a JSON list", str(path))
    discrete, continuous = [], []
    for i, entry in enumerate(entries):
        where = f"{path}[{i}]"
        if not isinstance(entry, dict):
            raise ParseError("symmetry entry must be an object", where)
        if "R" in entry:
            discrete.append((_floats(entry["R"], 9, "R", where), _floats(entry.get("t", [0, 0, 0]), 3, "t", where)))
        elif "axis" in entry:
            continuous.append((_floats(entry["axis"], 3, "axis", where), _floats(entry.get("offset", [0, 0, 0]), 3, "offset", where)))
        else:
            raise ParseError("symmetry entry needs 'R' or 'axis'", where)
    sym = _symmetry_set(discrete, continuous, steps, str(path))
    logger.info(f"Loaded {len(sym)} symmetry transforms from {path}")
    return sym


def load_models_info(path: PathLike, steps: Optional[int] = None) -> Dict[int, ModelInfo]:
    """BOP models_info.json: diameter plus 4x4 discrete and axis/offset continuous symmetries."""
    steps = steps if steps is not None else get_settings().symmetry_steps
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise ParseError("models_info must hold a JSON object", str(path))
    info = {}
    for key, entry in raw.items():
        where = f"{path}[{key}]"
        try:
            obj_id = int(key)
            diameter = float(entry["diameter"])
        except (KeyError, TypeError, ValueError):
            raise ParseError("entry needs an integer key and a 'diameter'", where)
        if not math.isfinite(diameter) or diameter <= 0:
            raise ParseError(f"invalid diameter {diameter}", where)
        discrete = []
        for m in entry.get("symmetries_discrete", []):
            mat = _floats(m, 16, "symmetries_discrete", where).reshape(4, 4)
            discrete.append((mat[:3, :3].reshape(-1), mat[:3, 3]))
        continuous = [
            (_floats(c.get("axis"), 3, "axis", where), _floats(c.get("offset", [0, 0, 0]), 3, "offset", where))
            for c in entry.get("symmetries_continuous", [])
        ]
        info[obj_id] = ModelInfo(diameter, _symmetry_set(discrete, continuous, steps, where))
    return info


def load_assets(models_dir: PathLike, obj_ids: Sequence[int], steps: Optional[int] = None) -> Dict[int, ObjectAsset]:
    """obj_XXXXXX.ply meshes, with diameters and symmetries from models_info.json when present."""
    models_dir = Path(models_dir)
    info_path = models_dir / "models_info.json"
    info = load_models_info(info_path, steps) if info_path.exists() else {}
    assets = {}
    for obj_id in sorted(set(obj_ids)):
        mesh_path = models_dir / f"obj_{obj_id:06d}.ply"
        if not mesh_path.exists():
            logger.warning(f"No mesh for object {obj_id} in {models_dir}")
            continue
        entry = info.get(obj_id)
        mesh = load_mesh(mesh_path)
        if entry is None:
            assets[obj_id] = ObjectAsset(mesh)
        else:
            assets[obj_id] = ObjectAsset(mesh, entry.symmetries, entry.diameter)
    return assets


# Results

def _format_floats(values: Sequence[float]) -> str:
    return " ".join(f"{float(v):.15g}" for v in values)


def read_results(path: PathLike) -> List[ResultRow]:
    text = Path(path).read_text()
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise ParseError("results file is empty (no header)", f"{path}:1")
    # one column per cell of the widest line so extra cells are counted, never taken as an index
    width = max(line.count(",") + 1 for line in lines)
    raw = pd.read_csv(
        io.StringIO(text), header=None, names=list(range(width)), index_col=False, dtype=str, keep_default_na=False
    )
    n_cols = len(RESULT_COLUMNS)
    cells = raw.notna().sum(axis=1).to_numpy()
    if cells[0] != n_cols or list(raw.iloc[0, :n_cols]) != RESULT_COLUMNS:
        raise ParseError(f"expected header {','.join(RESULT_COLUMNS)}", f"{path}:1")
    bad = np.flatnonzero(cells[1:] != n_cols)
    if len(bad):
        i = int(bad[0]) + 1
        raise FieldCount(f"row has {int(cells[i])} cells, expected {n_cols}", f"{path} row {i}")
    df = raw.iloc[1:, :n_cols].set_axis(RESULT_COLUMNS, axis=1)
    rows = []
    for i, rec in enumerate(df.itertuples(index=False), start=1):
        where = f"{path} row {i}"
        try:
            ids = [int(rec.scene_id), int(rec.im_id), int(rec.obj_id)]
            score, time = float(rec.score), float(rec.time)
            R = [float(v) for v in rec.R.split()]
            t = [float(v) for v in rec.t.split()]
        except ValueError as e:
            raise ParseError(f"bad numeric field: {e}", where)
        if len(R) != 9:
            raise FieldCount(f"R has {len(R)} values, expected 9", where)
        if len(t) != 3:
            raise FieldCount(f"t has {len(t)} values, expected 3", where)
        if not all(math.isfinite(v) for v in [score, time, *R, *t]):
            raise ParseError("non-finite value", where)
        Rm = np.array(R).reshape(3, 3)
        if np.abs(Rm @ Rm.T - np.eye(3)).max() > RESULT_ORTHO_TOL or np.linalg.det(Rm) < 0:
            raise ParseError("R is not a rotation within 1e-4", where)
        rows.append(ResultRow(scene_id=ids[0], im_id=ids[1], obj_id=ids[2], score=score, R=R, t=t, time=time))
    logger.info(f"Read {len(rows)} estimates from {path}")
    return rows


def write_results(rows: Sequence[ResultRow], path: PathLike):
    df = pd.DataFrame(
        [
            [str(r.scene_id), str(r.im_id), str(r.obj_id), f"{r.score:.15g}", _format_floats(r.R), _format_floats(r.t), f"{r.time:.15g}"]
            for r in rows
        ],
        columns=RESULT_COLUMNS,
    )
    df.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Wrote {len(rows)} estimates to {path}")


def row_pose(row: ResultRow) -> Pose:
    """Estimated pose of a result row with R snapped to the nearest rotation."""
    return Pose.from_Rt(orthonormalize(np.reshape(row.R, (3, 3))), row.t)


# Scene ground truth

def _gt_pose(entry: dict, where: str) -> Tuple[int, Pose]:
    try:
        obj_id = int(entry["obj_id"])
        R = _floats(entry["cam_R_m2c"], 9, "cam_R_m2c", where).reshape(3, 3)
        t = _floats(entry["cam_t_m2c"], 3, "cam_t_m2c", where)
    except (KeyError, TypeError):
        raise ParseError("gt entry needs obj_id, cam_R_m2c and cam_t_m2c", where)
    if np.abs(R @ R.T - np.eye(3)).max() > RESULT_ORTHO_TOL or np.linalg.det(R) < 0:
        raise ParseError("cam_R_m2c is not a rotation within 1e-4", where)
    return obj_id, Pose.from_Rt(orthonormalize(R), t)


def read_scene_gt_poses(gt_path: PathLike) -> List[GtPose]:
    raw = _read_json(gt_path)
    if not isinstance(raw, dict):
        raise ParseError("scene_gt must hold a JSON object", str(gt_path))
    poses = []
    for key in sorted(raw, key=lambda k: int(k) if str(k).isdigit() else -1):
        try:
            im_id = int(key)
        except ValueError:
            raise ParseError(f"image key '{key}' is not an integer", str(gt_path))
        for i, entry in enumerate(raw[key]):
            obj_id, pose = _gt_pose(entry, f"{gt_path}[{key}][{i}]")
            poses.append(GtPose(im_id, obj_id, pose))
    return poses


def read_scene_camera(camera_path: PathLike) -> Dict[int, CameraIntrinsics]:
    settings = get_settings()
    raw = _read_json(camera_path)
    if not isinstance(raw, dict):
        raise ParseError("scene_camera must hold a JSON object", str(camera_path))
    cameras = {}
    for key, entry in raw.items():
        where = f"{camera_path}[{key}]"
        try:
            K = _floats(entry["cam_K"], 9, "cam_K", where)
            cameras[int(key)] = CameraIntrinsics.from_K(
                K.tolist(),
                width=int(entry.get("width", settings.image_width)),
                height=int(entry.get("height", settings.image_height)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad camera entry: {e}", where)
    return cameras


def read_scene_gt(gt_path: PathLike, camera_path: PathLike) -> List[GtInstance]:
    """scene_gt.json joined with scene_camera.json, ordered by image id then instance."""
    cameras = read_scene_camera(camera_path)
    instances = []
    for gt in read_scene_gt_poses(gt_path):
        if gt.im_id not in cameras:
            raise MissingCamera(f"image {gt.im_id} has ground truth but no entry in {camera_path}")
        instances.append(GtInstance(gt.im_id, gt.obj_id, gt.pose, cameras[gt.im_id]))
    logger.info(f"Read {len(instances)} ground-truth instances from {gt_path}")
    return instances


# Reports

def report_frame(report: RecallReport) -> pd.DataFrame:
    """Flat (scope, metric, tau, threshold, value) table of a recall report."""
    rows = []
    for metric in ("ar", "ar_vsd", "ar_mssd", "ar_mspd", "add_recall", "auc_adds", "auc_add_s"):
        value = getattr(report, metric)
        if value is not None:
            rows.append(("all", metric, "", "", value))
    for metric in ("mssd", "mspd"):
        for th, value in zip(report.thresholds.get(metric, []), report.recalls.get(metric, [])):
            rows.append(("all", metric, "", th, value))
    if "vsd" in report.recalls:
        for tau, per_theta in zip(report.thresholds["vsd_tau"], report.recalls["vsd"]):
            for th, value in zip(report.thresholds["vsd_theta"], per_theta):
                rows.append(("all", "vsd", tau, th, value))
    for obj_id, values in sorted(report.per_object.items(), key=lambda kv: int(kv[0])):
        for metric, value in sorted(values.items()):
            rows.append((f"obj_{obj_id}", metric, "", "", value))
    return pd.DataFrame(rows, columns=["scope", "metric", "tau", "threshold", "value"])


def format_report_json(report: RecallReport) -> str:
    return json.dumps(report.model_dump(), sort_keys=True, indent=2) + "\n"


def write_report(report: RecallReport, json_path: PathLike, csv_path: Optional[PathLike] = None):
    Path(json_path).write_text(format_report_json(report))
    if csv_path is not None:
        report_frame(report).to_csv(csv_path, index=False, lineterminator="\n")
    logger.info(f"Wrote report to {json_path}" + (f" and {csv_path}" if csv_path else ""))
