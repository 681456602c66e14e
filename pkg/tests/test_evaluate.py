import csv
import json

import numpy as np
import pytest

from bubblekit.ellipse import Ellipse
from bubblekit.errors import DimensionMismatch
from bubblekit.evaluate import (DEFAULT_THRESHOLDS, EvalReport, ImageEval,
                                alpha_rel_error, ap_curve, average_precision,
                                equivalent_diameters_mm, gas_fraction,
                                instance_areas_mm2, match_instances,
                                mean_ap_curve, size_histogram,
                                write_histogram_csv, write_report_csv,
                                write_report_json)
from bubblekit.geometry import LabelMap, PixelScale, StarPolygon

from conftest import disk_mask

SCALE = PixelScale(0.05)


def labelmap_of(*masks):
    ids = np.zeros(masks[0].shape, np.int32)
    for i, m in enumerate(masks, start=1):
        ids[m] = i
    return LabelMap(ids)


class TestMatchInstances:
    def test_identity(self):
        lm = labelmap_of(disk_mask((30, 30), (10, 10), 5),
                         disk_mask((30, 30), (22, 22), 4))
        for t in DEFAULT_THRESHOLDS:
            m = match_instances(lm, lm, t)
            assert (m.tp, m.fp, m.fn) == (2, 0, 0)

    def test_empty_prediction(self):
        gt = labelmap_of(disk_mask((30, 30), (6, 6), 3),
                         disk_mask((30, 30), (15, 15), 3),
                         disk_mask((30, 30), (24, 24), 3))
        pred = LabelMap(np.zeros((30, 30), np.int32))
        m = match_instances(pred, gt, 0.5)
        assert (m.tp, m.fp, m.fn) == (0, 0, 3)

    def test_two_preds_one_gt(self):
        # ious ~0.8 and ~0.6 against one gt: best pair wins, other is FP
        gt_mask = np.zeros((20, 30), bool)
        gt_mask[5:15, 5:15] = True
        p1 = np.zeros((20, 30), bool)
        p1[5:15, 5:13] = True    # iou 80/100... = 0.8
        p2 = np.zeros((20, 30), bool)
        p2[5:15, 13:21] = True   # small overlap with gt
        gt = labelmap_of(gt_mask)
        pred = labelmap_of(p1, p2)
        m = match_instances(pred, gt, 0.5)
        assert m.tp == 1
        assert m.fp == 1
        assert m.fn == 0
        assert m.pairs[0][0] == 1 and m.pairs[0][1] == 1

    def test_one_to_one(self):
        big = np.zeros((20, 20), bool)
        big[2:18, 2:18] = True
        gt = labelmap_of(big)
        pred = labelmap_of(big)
        m = match_instances(pred, gt, 0.5)
        assert m.tp == 1 and len(m.pairs) == 1

    def test_counts_swap_under_exchange(self, rng):
        for _ in range(15):
            masks_a = [disk_mask((40, 40), tuple(rng.uniform(5, 35, 2)),
                                 rng.uniform(2, 7)) for _ in range(3)]
            masks_b = [disk_mask((40, 40), tuple(rng.uniform(5, 35, 2)),
                                 rng.uniform(2, 7)) for _ in range(2)]
            a = labelmap_of(*masks_a)
            b = labelmap_of(*masks_b)
            m_ab = match_instances(a, b, 0.5)
            m_ba = match_instances(b, a, 0.5)
            assert m_ab.tp == m_ba.tp
            assert m_ab.fp == m_ba.fn
            assert m_ab.fn == m_ba.fp

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            match_instances(LabelMap(np.zeros((4, 4), np.int32)),
                            LabelMap(np.zeros((5, 4), np.int32)), 0.5)


class TestAveragePrecision:
    def test_perfect(self):
        lm = labelmap_of(disk_mask((20, 20), (10, 10), 5))
        for t, v in ap_curve(lm, lm).items():
            assert v == 1.0

    def test_formula(self):
        from bubblekit.evaluate import MatchResult
        assert average_precision(MatchResult(0.5, [], 1, 0, 1)) == 0.5
        assert average_precision(MatchResult(0.5, [], 3, 1, 2)) == 0.5
        assert average_precision(MatchResult(0.5, [], 0, 0, 0)) == 1.0

    def test_default_thresholds(self):
        assert DEFAULT_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8,
                                      0.85, 0.9)

    def test_non_increasing_in_threshold(self, rng):
        for _ in range(20):
            gt_masks = [disk_mask((48, 48), tuple(rng.uniform(8, 40, 2)),
                                  rng.uniform(3, 8)) for _ in range(3)]
            pred_masks = [disk_mask((48, 48),
                                    (c[0] + rng.normal(0, 2),
                                     c[1] + rng.normal(0, 2)),
                                    r + rng.normal(0, 1))
                          for c, r in [((20, 20), 6), ((35, 12), 5), ((10, 38), 4)]]
            gt = labelmap_of(*gt_masks)
            pred = labelmap_of(*[m for m in pred_masks if m.any()])
            curve = ap_curve(pred, gt)
            vals = [curve[t] for t in sorted(curve)]
            assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_batch_mean(self):
        lm = labelmap_of(disk_mask((20, 20), (10, 10), 5))
        empty = LabelMap(np.zeros((20, 20), np.int32))
        curves = [ap_curve(lm, lm), ap_curve(empty, lm)]
        mean = mean_ap_curve(curves)
        assert mean[0.5] == pytest.approx(0.5)


class TestSizeHistogram:
    def test_single_disk_bin(self):
        # area pi*4 mm^2 -> d_eq = 4 mm -> bin [4.0, 4.5)
        hist = size_histogram([np.pi * 4.0], None, bin_width_mm=0.5)
        assert hist.counts.sum() == 1
        left = hist.bin_edges[:-1][hist.counts > 0]
        assert left[0] == pytest.approx(4.0)

    def test_empty(self):
        hist = size_histogram([], None, bin_width_mm=0.5)
        assert hist.counts.sum() == 0
        assert len(hist.counts) == 0

    def test_conservation(self, rng):
        areas = rng.uniform(0.5, 40.0, 37)
        hist = size_histogram(list(areas), None, bin_width_mm=0.5)
        assert hist.counts.sum() == 37

    def test_from_labelmap(self):
        lm = labelmap_of(disk_mask((40, 40), (20, 20), 10))
        hist = size_histogram(lm, SCALE, bin_width_mm=0.1)
        d_expected = 2 * np.sqrt((lm.ids == 1).sum() * 0.05 ** 2 / np.pi)
        left = hist.bin_edges[:-1][hist.counts > 0][0]
        assert left <= d_expected < left + 0.1


class TestGasFraction:
    def test_single_bubble_arithmetic(self):
        # 4 mm equivalent diameter bubble in a 12.8 x 12.8 x 30 mm domain
        area = np.pi * 4.0   # mm^2 -> d_eq 4 mm
        alpha = gas_fraction([area], SCALE, 30.0, canvas=(256, 256))
        v = np.pi / 6 * 4.0 ** 3
        assert alpha == pytest.approx(v / (12.8 * 12.8 * 30.0), rel=1e-12)

    def test_no_instances(self):
        assert gas_fraction([], SCALE, 30.0, canvas=(64, 64)) == 0.0

    def test_identity_ratio(self):
        polys = [StarPolygon((0, 0), np.full(64, 2.0), unit="mm")]
        a1 = gas_fraction(polys, SCALE, 30.0, (256, 256))
        a2 = gas_fraction(polys, SCALE, 30.0, (256, 256))
        assert alpha_rel_error(a1, a2) == 1.0

    def test_additive_over_disjoint_sets(self, rng):
        areas = list(rng.uniform(1, 20, 6))
        whole = gas_fraction(areas, SCALE, 30.0, (256, 256))
        parts = (gas_fraction(areas[:2], SCALE, 30.0, (256, 256))
                 + gas_fraction(areas[2:], SCALE, 30.0, (256, 256)))
        assert whole == pytest.approx(parts, rel=1e-12)

    def test_invalid_depth(self):
        with pytest.raises(ValueError):
            gas_fraction([], SCALE, 0.0, (64, 64))


class TestAreas:
    def test_polygon_vs_analytic_ellipse_area(self, rng):
        # the polygon and analytic routes agree within 2 % at k=64, R >= 10 px
        for _ in range(10):
            a = rng.uniform(10, 40)
            b = rng.uniform(10, a)
            theta = 2 * np.pi * np.arange(64) / 64
            radii = a * b / np.hypot(b * np.cos(theta), a * np.sin(theta))
            poly = StarPolygon((0, 0), radii, unit="px")
            analytic = np.pi * a * b
            assert poly.area() == pytest.approx(analytic, rel=0.02)

    def test_ellipse_area_route(self):
        e = Ellipse((0, 0), 10.0, 5.0, 0.0)
        areas = instance_areas_mm2([e], SCALE)
        assert areas[0] == pytest.approx(np.pi * 50 * 0.05 ** 2)

    def test_mm_polygon_needs_no_scale(self):
        poly = StarPolygon((0, 0), np.full(64, 2.0), unit="mm")
        areas = instance_areas_mm2([poly], None)
        assert areas[0] == pytest.approx(poly.area())

    def test_px_polygon_requires_scale(self):
        poly = StarPolygon((0, 0), np.full(64, 2.0), unit="px")
        with pytest.raises(ValueError):
            instance_areas_mm2([poly], None)


class TestReportWriters:
    def _report(self):
        images = [
            ImageEval(name="img0", group=0.05, alpha_ref=0.05, alpha_raw=0.045,
                      alpha_rdc=0.049, alpha_ellipse=0.051,
                      ap={float(t): 1.0 for t in DEFAULT_THRESHOLDS}),
            ImageEval(name="img1", group=0.05, alpha_ref=0.05, alpha_raw=0.040,
                      alpha_rdc=0.048, alpha_ellipse=0.055,
                      ap={float(t): 0.5 for t in DEFAULT_THRESHOLDS}),
        ]
        return EvalReport(images=images)

    def test_csv_columns(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(path, self._report())
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0][:6] == ["image", "group", "alpha_ref", "alpha_pred_raw",
                               "alpha_pred_rdc", "alpha_pred_ellipse"]
        assert rows[0][6:] == [f"ap_{t:.2f}" for t in DEFAULT_THRESHOLDS]
        assert len(rows) == 3

    def test_summary_stats(self, tmp_path):
        path = tmp_path / "summary.json"
        write_report_json(path, self._report())
        doc = json.loads(path.read_text())
        grp = doc["groups"]["0.05"]
        assert grp["n_images"] == 2
        assert grp["alpha_rel_error_raw_mean"] == pytest.approx(
            np.mean([0.045 / 0.05, 0.040 / 0.05]))
        assert grp["alpha_rel_error_raw_sd"] == pytest.approx(
            np.std([0.9, 0.8]))
        assert doc["mean_ap"]["0.50"] == pytest.approx(0.75)

    def test_histogram_csv(self, tmp_path):
        hist = size_histogram([np.pi, np.pi * 4], None, 0.5)
        path = tmp_path / "hist.csv"
        write_histogram_csv(path, hist)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["bin_left_mm", "count"]
        total = sum(int(r[1]) for r in rows[1:])
        assert total == 2
