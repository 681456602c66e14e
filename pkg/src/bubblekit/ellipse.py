"""Ellipse-based hidden-part reconstruction.

Contour pixels that touch another instance are dropped before fitting, so
the ellipse extrapolates over the occluded part. The fit is the direct
discriminant-constrained algebraic least squares (numerically stable
reduced eigenproblem), with input normalization for conditioning. When the
free-contour fit fails or comes out smaller than the segment itself, the
complete contour is used as a fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import DegenerateSegment, InsufficientPoints, NonEllipseConic
from .geometry import LabelMap

_COND_RTOL = 1e-10
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Ellipse:
    """center (row, col) px; semi-axes a >= b > 0 px; rotation of the major
    axis from the +col axis toward +row, in [0, pi)."""

    center: tuple[float, float]
    a: float
    b: float
    rotation: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"semi-axes must satisfy a >= b > 0, got ({self.a}, {self.b})")

    @property
    def area(self) -> float:
        return float(np.pi * self.a * self.b)

    def contains(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        dy = np.asarray(rows, dtype=np.float64) - self.center[0]
        dx = np.asarray(cols, dtype=np.float64) - self.center[1]
        ct, st = np.cos(self.rotation), np.sin(self.rotation)
        u = dx * ct + dy * st
        v = -dx * st + dy * ct
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class EllipseReconstruction:
    ellipse: Ellipse
    fallback: bool              # the complete-contour refit was used
    fallback_exhausted: bool    # both fits were smaller than the segment


def _contour_mask(ids: np.ndarray, instance_id: int) -> np.ndarray:
    m = ids == instance_id
    eroded = ndi.binary_erosion(m, structure=_EIGHT, border_value=0)
    return m & ~eroded


def contour_points(labels: LabelMap, instance_id: int) -> np.ndarray:
    """All 8-connected contour pixels of the instance, as (n, 2) (row, col)."""
    if not (labels.ids == instance_id).any():
        raise DegenerateSegment(f"instance {instance_id} has no pixels")
    return np.argwhere(_contour_mask(labels.ids, instance_id))


def free_contour_points(labels: LabelMap, instance_id: int) -> np.ndarray:
    """Contour pixels whose 8-neighborhood holds no pixel of another instance."""
    if not (labels.ids == instance_id).any():
        raise DegenerateSegment(f"instance {instance_id} has no pixels")
    contour = _contour_mask(labels.ids, instance_id)
    other = (labels.ids > 0) & (labels.ids != instance_id)
    near_other = ndi.binary_dilation(other, structure=_EIGHT)
    return np.argwhere(contour & ~near_other)


def _outward_boundary(ids: np.ndarray, instance_id: int,
                      pixels: np.ndarray) -> np.ndarray:
    """Sub-pixel boundary samples for fitting: the corner vertices of every
    outward-facing pixel edge among the given contour pixels. A pixel covers
    [r-0.5, r+0.5] x [c-0.5, c+0.5], so these corners trace the boundary of
    the segment as a region instead of a half-pixel-inset ring of centers."""
    if len(pixels) == 0:
        return pixels.astype(np.float64)
    m = ids == instance_id
    h, w = m.shape
    padded = np.pad(m, 1, constant_values=False)
    corners: set[tuple[float, float]] = set()
    edges = {(-1, 0): ((-0.5, -0.5), (-0.5, 0.5)),
             (1, 0): ((0.5, -0.5), (0.5, 0.5)),
             (0, -1): ((-0.5, -0.5), (0.5, -0.5)),
             (0, 1): ((-0.5, 0.5), (0.5, 0.5))}
    for (dr, dc), (c1, c2) in edges.items():
        nb = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        open_edge = np.zeros((h, w), dtype=bool)
        open_edge[pixels[:, 0], pixels[:, 1]] = True
        open_edge &= ~nb
        for r, c in np.argwhere(open_edge):
            corners.add((r + c1[0], c + c1[1]))
            corners.add((r + c2[0], c + c2[1]))
    return np.array(sorted(corners), dtype=np.float64).reshape(-1, 2)


def fit_ellipse(points: np.ndarray) -> Ellipse:
    """Direct least-squares conic fit constrained to an ellipse.

    `points` is (n, 2) in (row, col); n >= 5 non-collinear points are
    required. Raises InsufficientPoints for too few or rank-deficient input
    and NonEllipseConic when the constrained solve yields no real ellipse.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    if len(pts) < 5:
        raise InsufficientPoints(f"need at least 5 points, got {len(pts)}")

    y = pts[:, 0]
    x = pts[:, 1]
    mx, my = x.mean(), y.mean()
    scale = np.sqrt(((x - mx) ** 2 + (y - my) ** 2).mean())
    if scale == 0:
        raise InsufficientPoints("all points coincide")
    xn = (x - mx) / scale
    yn = (y - my) / scale

    d1 = np.column_stack([xn * xn, xn * yn, yn * yn])
    d2 = np.column_stack([xn, yn, np.ones_like(xn)])
    design = np.hstack([d1, d2])
    sv = np.linalg.svd(design.T @ design, compute_uv=False)
    # exact-conic data leaves one null direction (the conic itself); anything
    # below rank 5 (collinear points, repeated points) is unfittable
    if sv[4] <= sv[0] * _COND_RTOL:
        raise InsufficientPoints("points are collinear or otherwise rank-deficient")

    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    # inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    m = np.array([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigval, eigvec = np.linalg.eig(m)

    best = None
    for j in range(3):
        if abs(eigval[j].imag) > 1e-9:
            continue
        a1 = eigvec[:, j].real
        disc = 4.0 * a1[0] * a1[2] - a1[1] ** 2
        if disc > 0:
            best = a1
            break
    if best is None:
        raise NonEllipseConic("no eigenvector satisfies the ellipse constraint")
    conic_n = np.concatenate([best, t @ best])

    # undo normalization via the conic matrix transform
    qn = np.array([[conic_n[0], conic_n[1] / 2, conic_n[3] / 2],
                   [conic_n[1] / 2, conic_n[2], conic_n[4] / 2],
                   [conic_n[3] / 2, conic_n[4] / 2, conic_n[5]]])
    tf = np.array([[1 / scale, 0, -mx / scale],
                   [0, 1 / scale, -my / scale],
                   [0, 0, 1]])
    q = tf.T @ qn @ tf
    return _conic_to_ellipse(q)


def _conic_to_ellipse(q: np.ndarray) -> Ellipse:
    """Convert a 3x3 conic matrix (in x=col, y=row coordinates) to
    center/axes/rotation form."""
    a, b, c = q[0, 0], 2 * q[0, 1], q[1, 1]
    d, e, f = 2 * q[0, 2], 2 * q[1, 2], q[2, 2]
    den = 4 * a * c - b * b
    if den <= 0:
        raise NonEllipseConic("conic discriminant is not elliptic")
    x0 = (b * e - 2 * c * d) / den
    y0 = (b * d - 2 * a * e) / den
    mu = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f

    m2 = np.array([[a, b / 2], [b / 2, c]])
    lam, vec = np.linalg.eigh(m2)
    axes2 = -mu / lam
    if not np.all(axes2 > 0):
        raise NonEllipseConic("conic has no real elliptic solution")
    semi = np.sqrt(axes2)
    major = int(np.argmax(semi))
    vx, vy = vec[0, major], vec[1, major]
    rotation = float(np.arctan2(vy, vx) % np.pi)
    return Ellipse(center=(float(y0), float(x0)),
                   a=float(semi.max()), b=float(semi.min()), rotation=rotation)


def reconstruct_ellipse(labels: LabelMap, instance_id: int) -> EllipseReconstruction:
    """Fit on free contour points; fall back to the complete contour when the
    fit fails or is smaller than the segment.

    The returned ellipse has area >= the segment's pixel count unless
    `fallback_exhausted` is set, in which case both fits came out small and
    the larger one is returned."""
    segment_area = int((labels.ids == instance_id).sum())
    if segment_area == 0:
        raise DegenerateSegment(f"instance {instance_id} has no pixels")

    free = _outward_boundary(labels.ids, instance_id,
                             free_contour_points(labels, instance_id))
    first = None
    try:
        first = fit_ellipse(free)
    except (InsufficientPoints, NonEllipseConic):
        pass
    if first is not None and first.area >= segment_area:
        return EllipseReconstruction(first, fallback=False, fallback_exhausted=False)

    full = _outward_boundary(labels.ids, instance_id,
                             contour_points(labels, instance_id))
    try:
        second = fit_ellipse(full)
    except (InsufficientPoints, NonEllipseConic):
        if first is None:
            raise
        return EllipseReconstruction(first, fallback=True, fallback_exhausted=True)

    if second.area >= segment_area:
        return EllipseReconstruction(second, fallback=True, fallback_exhausted=False)
    if first is not None and first.area > second.area:
        return EllipseReconstruction(first, fallback=True, fallback_exhausted=True)
    return EllipseReconstruction(second, fallback=True, fallback_exhausted=True)


def reconstruction_record(instance_id: int, rec: EllipseReconstruction) -> dict:
    """JSON-line record for one reconstructed instance."""
    return {
        "id": instance_id,
        "center": [rec.ellipse.center[0], rec.ellipse.center[1]],
        "a_px": rec.ellipse.a,
        "b_px": rec.ellipse.b,
        "theta_rad": rec.ellipse.rotation,
        "fallback": rec.fallback,
        "fallback_exhausted": rec.fallback_exhausted,
    }
