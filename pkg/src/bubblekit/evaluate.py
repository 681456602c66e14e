"""Instance matching, AP@IoU, bubble-size histograms, gas volume fraction.

AP at threshold t is TP / (TP + FP + FN) after greedy one-to-one matching
of instances with IoU >= t; batch AP is the mean of per-image values.
Sizes and volumes use the area-equivalent rule throughout: equivalent
diameter d = 2*sqrt(area/pi) and sphere volume pi/6 * d^3.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .ellipse import Ellipse
from .geometry import LabelMap, PixelScale, StarPolygon

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.901, 0.05), 2))


@dataclass
class MatchResult:
    threshold: float
    pairs: list[tuple[int, int, float]]   # (pred_id, gt_id, iou)
    tp: int
    fp: int
    fn: int


def pairwise_iou(pred: LabelMap, gt: LabelMap
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """IoU between every overlapping (pred, gt) instance pair.

    Returns (pred_ids, gt_ids, iou_matrix) where the matrix is indexed by
    position in the id arrays."""
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    pred_ids = pred.instance_ids()
    gt_ids = gt.instance_ids()
    iou = np.zeros((len(pred_ids), len(gt_ids)))
    if len(pred_ids) == 0 or len(gt_ids) == 0:
        return pred_ids, gt_ids, iou

    pred_pos = {int(i): n for n, i in enumerate(pred_ids)}
    gt_pos = {int(i): n for n, i in enumerate(gt_ids)}
    both = (pred.ids > 0) & (gt.ids > 0)
    pv = pred.ids[both]
    gv = gt.ids[both]
    inter: dict[tuple[int, int], int] = {}
    keys, counts = np.unique(np.stack([pv, gv]), axis=1, return_counts=True)
    for (p, g), n in zip(keys.T, counts):
        inter[(int(p), int(g))] = int(n)

    pred_area = {int(i): int((pred.ids == i).sum()) for i in pred_ids}
    gt_area = {int(i): int((gt.ids == i).sum()) for i in gt_ids}
    for (p, g), n in inter.items():
        union = pred_area[p] + gt_area[g] - n
        iou[pred_pos[p], gt_pos[g]] = n / union
    return pred_ids, gt_ids, iou


def match_instances(pred: LabelMap, gt: LabelMap, threshold: float) -> MatchResult:
    """Greedy one-to-one matching of pairs with IoU >= threshold, visited in
    descending IoU (ties by lower pred id, then lower gt id)."""
    pred_ids, gt_ids, iou = pairwise_iou(pred, gt)
    cand = [(float(iou[i, j]), int(pred_ids[i]), int(gt_ids[j]))
            for i in range(len(pred_ids)) for j in range(len(gt_ids))
            if iou[i, j] >= threshold]
    cand.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p: set[int] = set()
    used_g: set[int] = set()
    pairs = []
    for v, p, g in cand:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g, v))
    tp = len(pairs)
    return MatchResult(threshold=threshold, pairs=pairs, tp=tp,
                       fp=len(pred_ids) - tp, fn=len(gt_ids) - tp)


def average_precision(match: MatchResult) -> float:
    """TP / (TP + FP + FN); an empty image with an empty prediction is 1."""
    denom = match.tp + match.fp + match.fn
    if denom == 0:
        return 1.0
    return match.tp / denom


def ap_curve(pred: LabelMap, gt: LabelMap,
             thresholds=DEFAULT_THRESHOLDS) -> dict[float, float]:
    return {float(t): average_precision(match_instances(pred, gt, t))
            for t in thresholds}


def mean_ap_curve(curves: list[dict[float, float]],
                  thresholds=DEFAULT_THRESHOLDS) -> dict[float, float]:
    """Batch AP: mean of the per-image AP at each threshold."""
    return {float(t): float(np.mean([c[float(t)] for c in curves]))
            for t in thresholds}


def instance_areas_mm2(instances, pixel_scale: PixelScale | None = None
                       ) -> np.ndarray:
    """Projected areas in mm^2 for a LabelMap, star polygons, or ellipses.

    Pixel-unit inputs (label maps, px polygons, ellipses) require
    `pixel_scale`; mm polygons are used as-is."""
    if isinstance(instances, LabelMap):
        if pixel_scale is None:
            raise ValueError("pixel_scale required for label maps")
        counts = np.array([(instances.ids == i).sum()
                           for i in instances.instance_ids()], dtype=np.float64)
        return counts * pixel_scale.mm_per_px ** 2

    areas = []
    for obj in instances:
        if isinstance(obj, StarPolygon):
            if obj.unit == "mm":
                areas.append(obj.area())
            else:
                if pixel_scale is None:
                    raise ValueError("pixel_scale required for px polygons")
                areas.append(obj.area() * pixel_scale.mm_per_px ** 2)
        elif isinstance(obj, Ellipse):
            if pixel_scale is None:
                raise ValueError("pixel_scale required for ellipses")
            areas.append(obj.area * pixel_scale.mm_per_px ** 2)
        else:
            areas.append(float(obj))   # already an area in mm^2
    return np.asarray(areas, dtype=np.float64)


def equivalent_diameters_mm(areas_mm2: np.ndarray) -> np.ndarray:
    return 2.0 * np.sqrt(np.asarray(areas_mm2, dtype=np.float64) / np.pi)


def volumes_mm3(areas_mm2: np.ndarray) -> np.ndarray:
    """Area-equivalent sphere volume per instance."""
    d = equivalent_diameters_mm(areas_mm2)
    return np.pi / 6.0 * d ** 3


@dataclass
class SizeHistogram:
    bin_edges: np.ndarray    # len(counts) + 1, starting at 0, fixed width
    counts: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.bin_edges[1] - self.bin_edges[0]) if len(self.bin_edges) > 1 else 0.0


def size_histogram(instances, pixel_scale: PixelScale | None,
                   bin_width_mm: float = 0.5) -> SizeHistogram:
    """Histogram of equivalent diameters with fixed-width bins from 0."""
    if bin_width_mm <= 0:
        raise ValueError("bin width must be positive")
    areas = instance_areas_mm2(instances, pixel_scale)
    if len(areas) == 0:
        return SizeHistogram(bin_edges=np.array([0.0]), counts=np.zeros(0, dtype=int))
    d = equivalent_diameters_mm(areas)
    n_bins = int(np.floor(d.max() / bin_width_mm)) + 1
    edges = np.arange(n_bins + 1) * bin_width_mm
    idx = np.minimum(np.floor(d / bin_width_mm).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return SizeHistogram(bin_edges=edges, counts=counts)


def gas_fraction(instances, pixel_scale: PixelScale, depth_mm: float,
                 canvas: tuple[int, int]) -> float:
    """Total instance volume over the domain volume W_mm * H_mm * depth_mm.

    `canvas` is (height, width) in pixels."""
    if depth_mm <= 0:
        raise ValueError("depth must be positive")
    areas = instance_areas_mm2(instances, pixel_scale)
    h_mm = canvas[0] * pixel_scale.mm_per_px
    w_mm = canvas[1] * pixel_scale.mm_per_px
    return float(volumes_mm3(areas).sum() / (w_mm * h_mm * depth_mm))


def alpha_rel_error(alpha_predicted: float, alpha_reference: float) -> float:
    return alpha_predicted / alpha_reference


@dataclass
class ImageEval:
    name: str
    group: float | None = None            # e.g. the scene's target alpha
    alpha_ref: float | None = None
    alpha_raw: float | None = None
    alpha_rdc: float | None = None
    alpha_ellipse: float | None = None
    ap: dict[float, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    images: list[ImageEval]
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS

    def mean_ap(self) -> dict[float, float]:
        curves = [im.ap for im in self.images if im.ap]
        if not curves:
            return {}
        return mean_ap_curve(curves, self.thresholds)

    def group_stats(self) -> dict:
        """Per-group mean and standard deviation of alpha relative errors."""
        groups: dict = {}
        for im in self.images:
            groups.setdefault(im.group, []).append(im)
        out = {}
        for g, ims in sorted(groups.items(), key=lambda kv: (kv[0] is None, kv[0])):
            entry = {"n_images": len(ims)}
            for kind in ("raw", "rdc", "ellipse"):
                vals = [getattr(im, f"alpha_{kind}") / im.alpha_ref
                        for im in ims
                        if getattr(im, f"alpha_{kind}") is not None and im.alpha_ref]
                if vals:
                    entry[f"alpha_rel_error_{kind}_mean"] = float(np.mean(vals))
                    entry[f"alpha_rel_error_{kind}_sd"] = float(np.std(vals))
            out[str(g)] = entry
        return out


def write_report_csv(path, report: EvalReport) -> None:
    """One row per image: alphas and AP at each threshold."""
    cols = ["image", "group", "alpha_ref", "alpha_pred_raw", "alpha_pred_rdc",
            "alpha_pred_ellipse"]
    cols += [f"ap_{t:.2f}" for t in report.thresholds]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for im in report.images:
            row = [im.name, im.group, im.alpha_ref, im.alpha_raw, im.alpha_rdc,
                   im.alpha_ellipse]
            row += [im.ap.get(float(t)) for t in report.thresholds]
            w.writerow(["" if v is None else v for v in row])


def write_report_json(path, report: EvalReport) -> None:
    doc = {
        "n_images": len(report.images),
        "thresholds": list(report.thresholds),
        "mean_ap": {f"{t:.2f}": v for t, v in report.mean_ap().items()},
        "groups": report.group_stats(),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_histogram_csv(path, hist: SizeHistogram) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_left_mm", "count"])
        for left, n in zip(hist.bin_edges[:-1], hist.counts):
            w.writerow([float(left), int(n)])
