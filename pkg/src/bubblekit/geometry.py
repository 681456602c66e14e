"""Raster and star-polygon primitives.

Conventions used throughout the package:

* Rasters are numpy arrays indexed ``[row, col]``; pixel centers sit at
  integer coordinates, so pixel ``(r, c)`` covers ``[r-0.5, r+0.5) x
  [c-0.5, c+0.5)``.
* Ray direction ``i`` of ``k`` has angle ``theta = 2*pi*i/k`` measured from
  the +col axis, counter-clockwise in the (row, col) frame: the unit vector
  is ``(sin(theta), cos(theta))`` in (row, col) order.
* Label maps store one non-negative integer per pixel; 0 is background and
  any positive value is an instance id.

All functions are pure; returned values should be treated as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage as ndi

from .errors import CenterOutsideInstance, DimensionMismatch

DEFAULT_RAY_COUNT = 64
RAY_STEP_PX = 0.5
_REFINE_ITERS = 25


@dataclass(frozen=True)
class LabelMap:
    """Integer instance-id raster (0 = background, k > 0 = instance k)."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int32)
        if ids.ndim != 2 or ids.size == 0:
            raise ValueError("label map must be a non-empty 2-d raster")
        if ids.min() < 0:
            raise ValueError("label map ids must be non-negative")
        ids.setflags(write=False)
        object.__setattr__(self, "ids", ids)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape

    def instance_ids(self) -> np.ndarray:
        """Sorted positive ids present in the map."""
        ids = np.unique(self.ids)
        return ids[ids > 0]

    def mask(self, instance_id: int) -> np.ndarray:
        return self.ids == instance_id


@dataclass(frozen=True)
class PixelScale:
    """Physical pixel size."""

    mm_per_px: float

    def __post_init__(self):
        if not (self.mm_per_px > 0):
            raise ValueError("mm_per_px must be positive")


@dataclass(frozen=True)
class StarPolygon:
    """Object center plus k radial distances at fixed angles.

    ``radii[i]`` is the boundary distance along direction ``2*pi*i/k``.
    ``unit`` flags whether radii are in pixels or millimeters; the center is
    always in (row, col) raster coordinates.
    """

    center: tuple[float, float]
    radii: np.ndarray
    unit: str = "px"

    def __post_init__(self):
        radii = np.ascontiguousarray(self.radii, dtype=np.float64)
        if radii.ndim != 1 or radii.size < 3:
            raise ValueError("radii must be a 1-d array with k >= 3")
        if not np.all(np.isfinite(radii)) or radii.min() < 0:
            raise ValueError("radii must be finite and non-negative")
        if self.unit not in ("px", "mm"):
            raise ValueError("unit must be 'px' or 'mm'")
        radii.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def k(self) -> int:
        return self.radii.size

    def vertices(self) -> np.ndarray:
        """(k, 2) vertex coordinates, center + radius * direction."""
        return np.asarray(self.center) + self.radii[:, None] * ray_directions(self.k)

    def area(self) -> float:
        """Polygon area in unit^2 (fan triangulation about the center)."""
        r = self.radii
        return float(0.5 * np.sin(2 * np.pi / self.k) * np.sum(r * np.roll(r, -1)))

    def to_mm(self, scale: PixelScale) -> "StarPolygon":
        if self.unit == "mm":
            return self
        return replace(self, radii=self.radii * scale.mm_per_px, unit="mm")

    def to_px(self, scale: PixelScale) -> "StarPolygon":
        if self.unit == "px":
            return self
        return replace(self, radii=self.radii / scale.mm_per_px, unit="px")


def ray_directions(k: int) -> np.ndarray:
    """(k, 2) unit direction vectors in (row, col) order."""
    theta = 2.0 * np.pi * np.arange(k) / k
    return np.stack([np.sin(theta), np.cos(theta)], axis=1)


def distance_to_background(labels: LabelMap) -> np.ndarray:
    """Exact Euclidean distance to the nearest pixel of a different label.

    Pixels of other instances terminate distances just like background;
    background pixels hold 0. An instance covering the whole raster gets
    +inf (no terminating pixel exists).
    """
    out = np.zeros(labels.shape, dtype=np.float64)
    for i in labels.instance_ids():
        m = labels.ids == i
        if m.all():
            out[m] = np.inf
        else:
            out[m] = ndi.distance_transform_edt(m)[m]
    return out


def object_probability(labels: LabelMap) -> np.ndarray:
    """Per-instance normalized distance to background, in [0, 1].

    Each instance is normalized by its own maximum so every instance
    attains 1 at its innermost pixel(s); background is exactly 0.
    """
    dist = distance_to_background(labels)
    out = np.zeros(labels.shape, dtype=np.float64)
    for i in labels.instance_ids():
        m = labels.ids == i
        peak = dist[m].max()
        out[m] = 1.0 if not np.isfinite(peak) else dist[m] / peak
    return out


def _cast_rays(ids: np.ndarray, center: tuple[float, float], instance_id: int,
               k: int, step: float = RAY_STEP_PX) -> tuple[np.ndarray, np.ndarray]:
    """March k rays from `center` until the containing pixel is not `instance_id`.

    Returns (radii, stop_labels): the bisection-refined crossing distance per
    ray and the label of the first pixel past the crossing (0 when the ray
    leaves the raster).
    """
    h, w = ids.shape
    dirs = ray_directions(k)
    cr, cc = float(center[0]), float(center[1])

    max_t = float(np.hypot(h, w)) + 2.0 * step
    ts = np.arange(1, int(np.ceil(max_t / step)) + 1, dtype=np.float64) * step

    rows = np.rint(cr + ts[None, :] * dirs[:, :1]).astype(np.int64)
    cols = np.rint(cc + ts[None, :] * dirs[:, 1:]).astype(np.int64)
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    lab = np.where(inside, ids[rows.clip(0, h - 1), cols.clip(0, w - 1)], -1)
    on_instance = lab == instance_id

    first_out = np.argmax(~on_instance, axis=1)
    hi = ts[first_out]
    lo = np.maximum(hi - step, 0.0)

    for _ in range(_REFINE_ITERS):
        mid = 0.5 * (lo + hi)
        r = np.rint(cr + mid * dirs[:, 0]).astype(np.int64)
        c = np.rint(cc + mid * dirs[:, 1]).astype(np.int64)
        ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
        mid_on = ok & (ids[r.clip(0, h - 1), c.clip(0, w - 1)] == instance_id)
        lo = np.where(mid_on, mid, lo)
        hi = np.where(mid_on, hi, mid)

    radii = 0.5 * (lo + hi)

    probe = radii + 0.25 * step
    r = np.rint(cr + probe * dirs[:, 0]).astype(np.int64)
    c = np.rint(cc + probe * dirs[:, 1]).astype(np.int64)
    ok = (r >= 0) & (r < h) & (c >= 0) & (c < w)
    stop = np.where(ok, ids[r.clip(0, h - 1), c.clip(0, w - 1)], 0).astype(np.int64)
    return radii, stop


def radial_distances(labels: LabelMap, center: tuple[float, float],
                     instance_id: int, k: int = DEFAULT_RAY_COUNT) -> StarPolygon:
    """Radial boundary distances of one instance as seen from `center`.

    The center must lie on a pixel of the instance. Radii are measured in
    pixels to the first ray position whose containing pixel is not the
    instance (other-instance pixels terminate rays like background does).
    """
    h, w = labels.shape
    r0, c0 = int(np.rint(center[0])), int(np.rint(center[1]))
    if not (0 <= r0 < h and 0 <= c0 < w) or labels.ids[r0, c0] != instance_id:
        raise CenterOutsideInstance(
            f"center {center} does not lie on instance {instance_id}")
    radii, _ = _cast_rays(labels.ids, center, instance_id, k)
    return StarPolygon(center=center, radii=radii, unit="px")


def instance_centroid(labels: LabelMap, instance_id: int) -> tuple[float, float]:
    """Mean (row, col) of the instance's pixel coordinates."""
    pts = np.argwhere(labels.ids == instance_id)
    if pts.size == 0:
        raise ValueError(f"instance {instance_id} has no pixels")
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())


def rasterize(poly: StarPolygon, shape: tuple[int, int]) -> np.ndarray:
    """Binary mask of pixels whose center lies inside the polygon.

    Pixel centers are tested against the triangle fan about the polygon
    center (exact for star polygons): a point is inside when it lies on the
    center side of the chord of its angular sector. Clipped to the canvas;
    a polygon fully outside yields an empty mask.
    """
    if poly.unit != "px":
        raise ValueError("rasterize expects a polygon with unit 'px'")
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    verts = poly.vertices()
    r_min = max(int(np.floor(verts[:, 0].min())), 0)
    r_max = min(int(np.ceil(verts[:, 0].max())), h - 1)
    c_min = max(int(np.floor(verts[:, 1].min())), 0)
    c_max = min(int(np.ceil(verts[:, 1].max())), w - 1)
    if r_min > r_max or c_min > c_max:
        return mask

    cy, cx = poly.center
    rr, cc = np.meshgrid(np.arange(r_min, r_max + 1, dtype=np.float64),
                         np.arange(c_min, c_max + 1, dtype=np.float64),
                         indexing="ij")
    dy = rr - cy
    dx = cc - cx
    sector = np.floor((np.arctan2(dy, dx) % (2.0 * np.pi))
                      * (poly.k / (2.0 * np.pi))).astype(np.int64) % poly.k
    y1, x1 = verts[sector, 0], verts[sector, 1]
    nxt = (sector + 1) % poly.k
    y2, x2 = verts[nxt, 0], verts[nxt, 1]
    # side of the sector chord: the point and the center must agree
    s_pt = (x2 - x1) * (rr - y1) - (y2 - y1) * (cc - x1)
    s_ctr = (x2 - x1) * (cy - y1) - (y2 - y1) * (cx - x1)
    inside = (s_ctr != 0.0) & (s_pt * s_ctr >= 0.0)
    mask[r_min:r_max + 1, c_min:c_max + 1] = inside
    return mask


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def nms_polygons(candidates: list[tuple[StarPolygon, float]],
                 overlap_threshold: float = 0.3,
                 shape: tuple[int, int] | None = None,
                 ) -> list[tuple[StarPolygon, float]]:
    """Greedy non-maximum suppression of scored star polygons.

    Candidates are visited in descending score order (ties keep the earlier
    candidate first); one is suppressed when its rasterized IoU with any
    already-selected polygon exceeds `overlap_threshold`. When `shape` is
    None a common bounding canvas over all candidates is used.
    """
    if not candidates:
        return []
    if shape is None:
        all_verts = np.concatenate([p.vertices() for p, _ in candidates])
        origin = np.floor(all_verts.min(axis=0)) - 1.0
        extent = np.ceil(all_verts.max(axis=0)) + 2.0
        shape = (int(extent[0] - origin[0]), int(extent[1] - origin[1]))
        shifted = [replace(p, center=(p.center[0] - origin[0], p.center[1] - origin[1]))
                   for p, _ in candidates]
    else:
        shifted = [p for p, _ in candidates]

    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i][1], i))
    masks: dict[int, np.ndarray] = {}

    def mask_of(i: int) -> np.ndarray:
        if i not in masks:
            masks[i] = rasterize(shifted[i], shape)
        return masks[i]

    selected: list[int] = []
    for i in order:
        if all(iou(mask_of(i), mask_of(j)) <= overlap_threshold for j in selected):
            selected.append(i)
    return [candidates[i] for i in selected]
