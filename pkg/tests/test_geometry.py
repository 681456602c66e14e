import numpy as np
import pytest

from bubblekit.errors import CenterOutsideInstance, DimensionMismatch
from bubblekit.geometry import (LabelMap, StarPolygon, distance_to_background,
                                iou, nms_polygons, object_probability,
                                radial_distances, rasterize, ray_directions)

from conftest import disk_labelmap, disk_mask, random_labelmap


def brute_force_distance(labels):
    """O(N^2) oracle: per foreground pixel, min distance to any pixel of a
    different label (background included)."""
    ids = labels.ids
    out = np.zeros(ids.shape, dtype=np.float64)
    coords = np.argwhere(np.ones_like(ids, dtype=bool))
    for r, c in np.argwhere(ids > 0):
        other = coords[ids[coords[:, 0], coords[:, 1]] != ids[r, c]]
        if len(other) == 0:
            out[r, c] = np.inf
        else:
            out[r, c] = np.sqrt(((other - (r, c)) ** 2).sum(axis=1)).min()
    return out


class TestDistanceToBackground:
    def test_all_background(self):
        assert not distance_to_background(LabelMap(np.zeros((5, 7), np.int32))).any()

    def test_single_pixel(self):
        ids = np.zeros((5, 5), np.int32)
        ids[2, 2] = 1
        d = distance_to_background(LabelMap(ids))
        assert d[2, 2] == 1.0
        assert d.sum() == 1.0

    def test_disk_center_value(self):
        lm = disk_labelmap((31, 31), (15, 15), 10)
        d = distance_to_background(lm)
        assert abs(d[15, 15] - 10) <= 0.5
        expected = brute_force_distance(lm)
        assert np.allclose(d, expected)

    def test_matches_brute_force_on_random_rasters(self, rng):
        for _ in range(30):
            lm = random_labelmap(rng, max_side=16)
            assert np.allclose(distance_to_background(lm),
                               brute_force_distance(lm), atol=1e-9)

    def test_other_instances_terminate_distances(self):
        ids = np.zeros((3, 7), np.int32)
        ids[1, 1:4] = 1
        ids[1, 4:6] = 2
        d = distance_to_background(LabelMap(ids))
        # the instance-1 pixel at col 3 is adjacent to instance 2
        assert d[1, 3] == 1.0


class TestObjectProbability:
    def test_single_pixel_instance(self):
        ids = np.zeros((4, 4), np.int32)
        ids[1, 2] = 1
        p = object_probability(LabelMap(ids))
        assert p[1, 2] == 1.0

    def test_disk_monotone_along_rays(self):
        lm = disk_labelmap((41, 41), (20, 20), 14)
        p = object_probability(lm)
        peak = np.unravel_index(np.argmax(p), p.shape)
        for ang in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            ts = np.arange(0, 13, 1.0)
            rr = np.rint(peak[0] + ts * np.sin(ang)).astype(int)
            cc = np.rint(peak[1] + ts * np.cos(ang)).astype(int)
            vals = p[rr, cc]
            assert (np.diff(vals) <= 1e-12).all()

    def test_touching_instances_normalized_independently(self):
        ids = np.zeros((9, 18), np.int32)
        ids[disk_mask((9, 18), (4, 4), 3)] = 1
        ids[disk_mask((9, 18), (4, 12), 3)] = 2
        p = object_probability(LabelMap(ids))
        assert p[ids == 1].max() == 1.0
        assert p[ids == 2].max() == 1.0

    def test_range_and_background(self, rng):
        for _ in range(10):
            lm = random_labelmap(rng)
            p = object_probability(lm)
            assert p.min() >= 0 and p.max() <= 1
            assert (p[lm.ids == 0] == 0).all()


class TestRadialDistances:
    def test_disk_radii(self):
        lm = disk_labelmap((64, 64), (32, 32), 20)
        poly = radial_distances(lm, (32, 32), 1, k=64)
        assert poly.unit == "px"
        assert (poly.radii >= 19).all() and (poly.radii <= 21).all()

    def test_single_pixel_instance(self):
        ids = np.zeros((5, 5), np.int32)
        ids[2, 2] = 1
        poly = radial_distances(LabelMap(ids), (2, 2), 1, k=4)
        assert (poly.radii <= 1).all()

    def test_square_half_side(self):
        ids = np.zeros((31, 31), np.int32)
        ids[5:26, 5:26] = 1   # side 21, center (15, 15)
        poly = radial_distances(LabelMap(ids), (15, 15), 1, k=4)
        assert np.allclose(poly.radii, 10.5, atol=0.02)

    def test_center_outside_raises(self):
        lm = disk_labelmap((20, 20), (10, 10), 4)
        with pytest.raises(CenterOutsideInstance):
            radial_distances(lm, (1, 1), 1)
        with pytest.raises(CenterOutsideInstance):
            radial_distances(lm, (-3, 10), 1)

    def test_radii_bounded_by_diagonal(self, rng):
        for _ in range(10):
            lm = random_labelmap(rng)
            ids = lm.instance_ids()
            if len(ids) == 0:
                continue
            inst = int(ids[0])
            pt = np.argwhere(lm.ids == inst)[0]
            poly = radial_distances(lm, tuple(pt.astype(float)), inst)
            assert poly.radii.max() <= np.hypot(*lm.shape)

    def test_rays_stop_at_other_instance(self):
        ids = np.zeros((9, 21), np.int32)
        ids[3:6, 2:10] = 1
        ids[3:6, 10:18] = 2
        poly = radial_distances(LabelMap(ids), (4, 5), 1, k=4)
        # direction 0 = +col: must stop at the instance-2 border near col 9.5
        assert abs(poly.radii[0] - 4.5) < 0.05


class TestRasterize:
    def test_zero_radii_empty(self):
        poly = StarPolygon(center=(10, 10), radii=np.zeros(8), unit="px")
        assert rasterize(poly, (20, 20)).sum() == 0

    def test_disk_roundtrip_iou(self):
        mask = disk_mask((64, 64), (31.7, 32.2), 20)
        lm = LabelMap(mask.astype(np.int32))
        poly = radial_distances(lm, (31.7, 32.2), 1, k=64)
        again = rasterize(poly, (64, 64))
        assert iou(again, mask) >= 0.95

    def test_off_canvas_empty(self):
        poly = StarPolygon(center=(-40, -40), radii=np.full(16, 5.0), unit="px")
        assert rasterize(poly, (20, 20)).sum() == 0

    def test_matches_even_odd_oracle(self, rng):
        for _ in range(25):
            k = int(rng.choice([8, 16, 64]))
            radii = rng.uniform(2, 20, k)
            poly = StarPolygon(center=tuple(rng.uniform(15, 35, 2)),
                               radii=radii, unit="px")
            got = rasterize(poly, (50, 50))
            assert np.array_equal(got, even_odd_rasterize(poly, (50, 50)))

    def test_mm_polygon_rejected(self):
        poly = StarPolygon(center=(5, 5), radii=np.ones(8), unit="mm")
        with pytest.raises(ValueError):
            rasterize(poly, (10, 10))


def even_odd_rasterize(poly, shape):
    """Independent classic crossing-number rasterizer."""
    h, w = shape
    verts = poly.vertices()
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                         indexing="ij")
    inside = np.zeros(rr.shape, dtype=bool)
    y1, x1 = verts[:, 0], verts[:, 1]
    y2, x2 = np.roll(y1, -1), np.roll(x1, -1)
    for i in range(poly.k):
        if y1[i] == y2[i]:
            continue
        crosses = (y1[i] > rr) != (y2[i] > rr)
        x_at = (x2[i] - x1[i]) * (rr - y1[i]) / (y2[i] - y1[i]) + x1[i]
        inside ^= crosses & (cc < x_at)
    return inside


class TestIou:
    def test_identical(self):
        m = disk_mask((20, 20), (10, 10), 5)
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((10, 10), bool)
        b = np.zeros((10, 10), bool)
        a[0, 0] = True
        b[5, 5] = True
        assert iou(a, b) == 0.0

    def test_half_overlapping_squares(self):
        a = np.zeros((20, 30), bool)
        b = np.zeros((20, 30), bool)
        a[0:10, 0:10] = True
        b[0:10, 5:15] = True
        assert iou(a, b) == pytest.approx(50 / 150)

    def test_both_empty(self):
        z = np.zeros((5, 5), bool)
        assert iou(z, z) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            iou(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


def _disk_poly(center, radius, k=16):
    return StarPolygon(center=center, radii=np.full(k, float(radius)), unit="px")


class TestNmsPolygons:
    def test_single_candidate(self):
        got = nms_polygons([(_disk_poly((10, 10), 5), 0.7)])
        assert len(got) == 1

    def test_identical_pair_suppressed(self):
        p = _disk_poly((10, 10), 5)
        got = nms_polygons([(p, 0.8), (p, 0.9)], overlap_threshold=0.3)
        assert len(got) == 1
        assert got[0][1] == 0.9

    def test_disjoint_all_survive(self):
        cands = [(_disk_poly((10, 10), 4), 0.5),
                 (_disk_poly((10, 30), 4), 0.9),
                 (_disk_poly((30, 10), 4), 0.1)]
        got = nms_polygons(cands, overlap_threshold=0.3)
        assert len(got) == 3

    def test_order_independent_and_no_overlapping_pair(self, rng):
        cands = []
        for _ in range(12):
            c = tuple(rng.uniform(5, 45, 2))
            cands.append((_disk_poly(c, rng.uniform(3, 9)), float(rng.uniform(0, 1))))
        kept = nms_polygons(cands, overlap_threshold=0.3, shape=(50, 50))
        perm = [cands[i] for i in rng.permutation(len(cands))]
        kept_perm = nms_polygons(perm, overlap_threshold=0.3, shape=(50, 50))
        key = lambda t: t[1]
        assert sorted(kept, key=key) == sorted(kept_perm, key=key)
        masks = [rasterize(p, (50, 50)) for p, _ in kept]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                assert iou(masks[i], masks[j]) <= 0.3


class TestStarPolygon:
    def test_validation(self):
        with pytest.raises(ValueError):
            StarPolygon(center=(0, 0), radii=np.array([1.0, -2.0, 1.0]))
        with pytest.raises(ValueError):
            StarPolygon(center=(0, 0), radii=np.ones(4), unit="inch")

    def test_direction_convention(self):
        d = ray_directions(4)
        # angle 0 -> +col, angle pi/2 -> +row
        assert np.allclose(d[0], [0, 1], atol=1e-12)
        assert np.allclose(d[1], [1, 0], atol=1e-12)

    def test_area_of_regular_polygon(self):
        poly = _disk_poly((0, 0), 10.0, k=64)
        expected = 0.5 * 64 * 100 * np.sin(2 * np.pi / 64)
        assert poly.area() == pytest.approx(expected)

    def test_unit_conversions(self):
        from bubblekit.geometry import PixelScale
        poly = _disk_poly((1, 2), 10.0, k=8)
        mm = poly.to_mm(PixelScale(0.05))
        assert mm.unit == "mm"
        assert np.allclose(mm.radii, 0.5)
        back = mm.to_px(PixelScale(0.05))
        assert np.allclose(back.radii, poly.radii)
