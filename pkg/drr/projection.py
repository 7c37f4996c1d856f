from __future__ import annotations

"""
Ground-truth silhouettes of surface meshes: perspective vertex projection,
rasterisation, disk closing and an ordered outer boundary.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage
from skimage import measure, morphology

from core.errors import EmptyProjection, InvalidGeometry
from core.types import Polyline
from drr.render import CameraGeometry

logger = logging.getLogger(__name__)

DEFAULT_CLOSING_RADIUS = 3


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) mm
    faces: np.ndarray     # (F, 3) zero-based indices

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3).copy()
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3).copy()
        if f.shape[0] < 1:
            raise InvalidGeometry("mesh needs at least one face")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise InvalidGeometry("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


def project_vertices(camera: CameraGeometry, vertices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Central projection through the focal point onto the detector plane.

    Returns (k, 2) pixel coordinates (x = column, y = row) and a flag for
    vertices on the detector side of the focal point; others get NaN.
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(camera.focal_point)
    c = np.asarray(camera.detector_center)
    n = camera.normal()

    denom = (pts - f) @ n
    numer = float((c - f) @ n)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = numer / denom
    in_front = (denom != 0.0) & (t > 0.0)

    xy = np.full((pts.shape[0], 2), np.nan)
    hit = f + t[in_front, None] * (pts[in_front] - f)
    rel = hit - c
    xy[in_front, 0] = rel @ np.asarray(camera.detector_u) / camera.pixel_pitch + (camera.width - 1) / 2.0
    xy[in_front, 1] = rel @ np.asarray(camera.detector_v) / camera.pixel_pitch + (camera.height - 1) / 2.0
    return xy, in_front


def _rasterize(xy: np.ndarray, width: int, height: int) -> np.ndarray:
    cols = np.floor(xy[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(xy[:, 1] + 0.5).astype(np.int64)
    inside = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    mask = np.zeros((height, width), dtype=bool)
    mask[rows[inside], cols[inside]] = True
    return mask


def _close(mask: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return mask
    pad = radius + 1
    padded = np.pad(mask, pad)
    closed = ndimage.binary_closing(padded, structure=morphology.disk(radius))
    return closed[pad:-pad, pad:-pad]


def _largest_component(mask: np.ndarray) -> np.ndarray:
    labels, count = ndimage.label(mask)
    if count <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def trace_outline(component: np.ndarray) -> Polyline:
    """Ordered closed boundary of a filled binary component, as pixel centres."""
    padded = np.pad(component, 1)
    contours = measure.find_contours(padded.astype(np.float64), 0.5)
    if not contours:
        raise EmptyProjection("no boundary found")
    contour = max(contours, key=len)

    pixels = []
    for r, c in contour:
        # iso-crossings lie halfway between an inside and an outside pixel
        for rr, cc in ((np.floor(r), np.floor(c)), (np.ceil(r), np.ceil(c)),
                       (np.floor(r), np.ceil(c)), (np.ceil(r), np.floor(c))):
            if padded[int(rr), int(cc)]:
                px = (cc - 1.0, rr - 1.0)
                if not pixels or pixels[-1] != px:
                    pixels.append(px)
                break
    while len(pixels) > 1 and pixels[-1] == pixels[0]:
        pixels.pop()
    if len(pixels) < 2:
        raise EmptyProjection("projected silhouette is too small to outline")
    return Polyline(np.asarray(pixels), closed=True)


def project_mesh_ground_truth(
    mesh: TriangleMesh,
    camera: CameraGeometry,
    closing_radius: int = DEFAULT_CLOSING_RADIUS,
) -> Tuple[Polyline, np.ndarray]:
    """
    Silhouette outline and binary mask of the projected mesh vertices.
    The outline traces the largest connected region of the closed mask.
    """
    if closing_radius < 0:
        raise ValueError("closing_radius must be >= 0")
    xy, in_front = project_vertices(camera, mesh.vertices)
    if not np.any(in_front):
        raise EmptyProjection("no mesh vertex lies in front of the detector")
    raster = _rasterize(xy[in_front], camera.width, camera.height)
    if not raster.any():
        raise EmptyProjection("no mesh vertex projects inside the image")

    closed = _close(raster, closing_radius)
    mask = ndimage.binary_fill_holes(closed)
    component = ndimage.binary_fill_holes(_largest_component(closed))
    outline = trace_outline(component)
    logger.info("projected %d vertices, mask %d px, outline %d vertices",
                int(in_front.sum()), int(mask.sum()), len(outline))
    return outline, mask
