from __future__ import annotations

"""
File formats read and written by the command-line pipelines.

- CMAP v1     confidence map, text header + little-endian float32, row-major
- points      one `x,y` per line, optional first line `closed`
- records     one-line whitespace-separated circle / transform / fit summary
- PDM v1      text header + whitespace-separated reals
- CTVOL v1    text header + little-endian int16 HU, x fastest
- OBJ subset  `v` and `f` lines
- PGM         binary 8-bit P5, through pillow

Every writer is deterministic: same inputs, same bytes.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from core.errors import DeepMorphError, FormatError
from core.types import Circle, ConfidenceMap, PointSet, Polyline
from drr.projection import TriangleMesh
from drr.volume import CtVolume
from fitting.pdm import PointDistributionModel
from fitting.transform import SimilarityTransform2D
from synth.confmap import Square

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _num(v: float) -> str:
    return f"{float(v):.17g}"


def _read_header(raw: bytes, magic: str, n_fields: int, path: PathLike) -> Tuple[List[str], bytes]:
    line, sep, body = raw.partition(b"\n")
    if not sep:
        raise FormatError(f"{path}: missing header line")
    try:
        fields = line.decode("ascii").split()
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: header is not ASCII") from e
    if len(fields) != n_fields or fields[0] != magic or fields[1] != "1":
        raise FormatError(f"{path}: expected a '{magic} 1' header with {n_fields} fields")
    return fields, body


def _floats(tokens: Sequence[str], path: PathLike) -> np.ndarray:
    try:
        return np.asarray([float(t) for t in tokens], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


# -------------------------
# Confidence maps
# -------------------------
def write_cmap(path: PathLike, cmap: ConfidenceMap) -> None:
    with open(path, "wb") as f:
        f.write(f"CMAP 1 {cmap.width} {cmap.height}\n".encode("ascii"))
        f.write(cmap.values.astype("<f4").tobytes(order="C"))


def read_cmap(path: PathLike) -> ConfidenceMap:
    raw = Path(path).read_bytes()
    fields, body = _read_header(raw, "CMAP", 4, path)
    try:
        width, height = int(fields[2]), int(fields[3])
    except ValueError as e:
        raise FormatError(f"{path}: bad map size") from e
    if width < 1 or height < 1 or len(body) != 4 * width * height:
        raise FormatError(f"{path}: expected {width}x{height} float32 values, got {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f4").astype(np.float64)
    try:
        return ConfidenceMap.from_row_major(width, height, values)
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e


# -------------------------
# Point sets and polylines
# -------------------------
def write_points(path: PathLike, points: np.ndarray, closed: bool = False) -> None:
    lines = ["closed"] if closed else []
    lines += [f"{_num(x)},{_num(y)}" for x, y in np.asarray(points, dtype=np.float64).reshape(-1, 2)]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_point_lines(path: PathLike) -> Tuple[np.ndarray, bool]:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    closed = bool(lines) and lines[0].lower() == "closed"
    if closed:
        lines = lines[1:]
    pts = []
    for ln in lines:
        parts = ln.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}: expected 'x,y' but got {ln!r}")
        pts.append(_floats(parts, path))
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2), closed


def read_point_set(path: PathLike) -> PointSet:
    pts, _ = _read_point_lines(path)
    return PointSet(pts)


def write_polyline(path: PathLike, curve: Polyline) -> None:
    write_points(path, curve.vertices, closed=curve.closed)


def read_polyline(path: PathLike) -> Polyline:
    pts, closed = _read_point_lines(path)
    try:
        return Polyline(pts, closed=closed)
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e


def read_shape_vector(path: PathLike) -> np.ndarray:
    """Training shape: a point file flattened to [x1, y1, ..., xN, yN]."""
    pts, _ = _read_point_lines(path)
    return pts.ravel()


# -------------------------
# One-line records
# -------------------------
@dataclass(frozen=True)
class CircleRecord:
    circle: Circle
    cost: float = 0.0
    n_points: int = 0
    method: str = "truth"


def write_circle_record(path: PathLike, record: CircleRecord) -> None:
    c = record.circle
    Path(path).write_text(
        f"{_num(c.cx)} {_num(c.cy)} {_num(c.r)} {_num(record.cost)} {record.n_points} {record.method}\n"
    )


def read_circle_record(path: PathLike) -> CircleRecord:
    fields = Path(path).read_text().split()
    if len(fields) not in (3, 6):
        raise FormatError(f"{path}: expected 'cx cy r [cost n_points method]'")
    cx, cy, r = _floats(fields[:3], path)
    try:
        circle = Circle(cx, cy, r)
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e
    if len(fields) == 3:
        return CircleRecord(circle)
    try:
        return CircleRecord(circle, float(fields[3]), int(fields[4]), fields[5])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_transform_record(path: PathLike, t: SimilarityTransform2D) -> None:
    tx, ty = t.translation
    Path(path).write_text(f"{_num(t.rotation)} {_num(t.scale)} {_num(tx)} {_num(ty)} {int(t.reflected)}\n")


def read_transform_record(path: PathLike) -> SimilarityTransform2D:
    fields = Path(path).read_text().split()
    if len(fields) != 5 or fields[4] not in ("0", "1"):
        raise FormatError(f"{path}: expected 'rotation scale tx ty reflected'")
    rot, scale, tx, ty = _floats(fields[:4], path)
    return SimilarityTransform2D(rot, scale, (tx, ty), fields[4] == "1")


def write_fit_summary(path: PathLike, converged: bool, iterations: int, final_movement: float) -> None:
    Path(path).write_text(f"{int(converged)} {iterations} {_num(final_movement)}\n")


def read_fit_summary(path: PathLike) -> Tuple[bool, int, float]:
    fields = Path(path).read_text().split()
    if len(fields) != 3:
        raise FormatError(f"{path}: expected 'converged iterations final_movement'")
    try:
        return fields[0] == "1", int(fields[1]), float(fields[2])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def write_squares(path: PathLike, squares: Sequence[Square]) -> None:
    Path(path).write_text("".join(f"{s.x0} {s.y0} {s.side}\n" for s in squares))


def read_squares(path: PathLike) -> List[Square]:
    out = []
    for ln in Path(path).read_text().splitlines():
        if not ln.strip():
            continue
        try:
            x0, y0, side = (int(v) for v in ln.split())
        except ValueError as e:
            raise FormatError(f"{path}: expected 'x0 y0 side' but got {ln!r}") from e
        out.append(Square(x0, y0, side))
    return out


# -------------------------
# Point distribution models
# -------------------------
def write_pdm(path: PathLike, model: PointDistributionModel) -> None:
    lines = [f"PDM 1 {model.n_points} {model.n_modes}"]
    lines.append(" ".join(_num(v) for v in model.mean))
    lines.append(" ".join(_num(v) for v in model.eigenvalues))
    lines += [" ".join(_num(v) for v in mode) for mode in model.modes]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pdm(path: PathLike) -> PointDistributionModel:
    tokens = Path(path).read_text().split()
    if len(tokens) < 3 or tokens[0] != "PDM" or tokens[1] != "1":
        raise FormatError(f"{path}: missing 'PDM 1 N M' header")
    try:
        n, m = int(tokens[2]), int(tokens[3])
    except (ValueError, IndexError) as e:
        raise FormatError(f"{path}: bad model size") from e
    body = _floats(tokens[4:], path)
    expected = 2 * n + m + m * 2 * n
    if body.size != expected:
        raise FormatError(f"{path}: expected {expected} values for N={n}, M={m}, got {body.size}")
    mean = body[:2 * n]
    lam = body[2 * n:2 * n + m]
    modes = body[2 * n + m:].reshape(m, 2 * n)
    try:
        return PointDistributionModel(mean, modes, lam)
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e


# -------------------------
# Volumes and meshes
# -------------------------
def write_ctvol(path: PathLike, volume: CtVolume) -> None:
    nx, ny, nz = volume.dims
    header = " ".join(["CTVOL", "1", str(nx), str(ny), str(nz)]
                      + [_num(v) for v in volume.spacing] + [_num(v) for v in volume.origin])
    with open(path, "wb") as f:
        f.write((header + "\n").encode("ascii"))
        f.write(np.rint(volume.values).astype("<i2").tobytes(order="C"))


def read_ctvol(path: PathLike) -> CtVolume:
    raw = Path(path).read_bytes()
    fields, body = _read_header(raw, "CTVOL", 11, path)
    try:
        nx, ny, nz = (int(v) for v in fields[2:5])
    except ValueError as e:
        raise FormatError(f"{path}: bad volume dimensions") from e
    spacing = _floats(fields[5:8], path)
    origin = _floats(fields[8:11], path)
    if min(nx, ny, nz) < 1 or len(body) != 2 * nx * ny * nz:
        raise FormatError(f"{path}: expected {nx}x{ny}x{nz} int16 values, got {len(body)} bytes")
    values = np.frombuffer(body, dtype="<i2").reshape(nz, ny, nx)
    try:
        return CtVolume(values, tuple(spacing), tuple(origin))
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e


def read_obj(path: PathLike) -> TriangleMesh:
    """`v x y z` and `f a b c ...` lines (1-based, `a/t/n` allowed); polygons are fanned."""
    vertices, faces = [], []
    for ln in Path(path).read_text().splitlines():
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise FormatError(f"{path}: vertex line needs 3 coordinates: {ln!r}")
            vertices.append(_floats(parts[1:4], path))
        elif parts[0] == "f":
            try:
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            except ValueError as e:
                raise FormatError(f"{path}: bad face line {ln!r}") from e
            if len(idx) < 3:
                raise FormatError(f"{path}: face needs at least 3 vertices: {ln!r}")
            faces += [(idx[0], idx[k], idx[k + 1]) for k in range(1, len(idx) - 1)]
    try:
        return TriangleMesh(np.asarray(vertices).reshape(-1, 3), np.asarray(faces, dtype=np.int64).reshape(-1, 3))
    except DeepMorphError as e:
        raise FormatError(f"{path}: {e}") from e


def write_obj(path: PathLike, mesh: TriangleMesh) -> None:
    lines = [f"v {_num(x)} {_num(y)} {_num(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# -------------------------
# Images
# -------------------------
def write_pgm(path: PathLike, image: np.ndarray) -> None:
    arr = np.ascontiguousarray(image, dtype=np.uint8)
    if arr.ndim != 2:
        raise FormatError(f"PGM images are 2D, got shape {arr.shape}")
    Image.fromarray(arr).save(path, format="PPM")


def read_pgm(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise FormatError(f"{path}: expected an 8-bit grayscale image, got mode {img.mode}")
            return np.array(img, dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise FormatError(f"{path}: {e}") from e


def confmap_to_gray(cmap: ConfidenceMap) -> np.ndarray:
    return np.floor(cmap.values * 255.0 + 0.5).astype(np.uint8)


def mask_to_gray(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)


def draw_overlay(image: np.ndarray, points: np.ndarray, closed: bool = True, value: int = 255) -> np.ndarray:
    """
    Copy of `image` with the polyline through `points` drawn at `value`.
    Segments are sampled at <= 0.5 px spacing and rounded to pixels; parts
    outside the image are skipped.
    """
    out = np.array(image, dtype=np.uint8, copy=True)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        return out
    starts, ends = pts[:-1], pts[1:]
    if closed and pts.shape[0] > 2:
        starts = np.vstack([starts, pts[-1:]])
        ends = np.vstack([ends, pts[:1]])

    samples = [pts]
    for a, b in zip(starts, ends):
        n = max(2, int(np.ceil(2.0 * np.hypot(*(b - a)))) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        samples.append(a + t * (b - a))
    xy = np.floor(np.vstack(samples) + 0.5).astype(np.int64)
    h, w = out.shape
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    out[xy[inside, 1], xy[inside, 0]] = value
    return out
