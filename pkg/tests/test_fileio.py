import numpy as np
import pytest

from bubblekit.fileio import (read_ellipses_jsonl, read_labelmap, read_pgm,
                              read_polygons_jsonl, read_weight_raster,
                              write_ellipses_jsonl, write_labelmap, write_pgm,
                              write_polygons_jsonl, write_weight_raster)
from bubblekit.geometry import LabelMap, StarPolygon


class TestPgm:
    def test_16bit_roundtrip(self, tmp_path, rng):
        data = rng.integers(0, 65536, size=(13, 17)).astype(np.uint16)
        path = tmp_path / "x.pgm"
        write_pgm(path, data, maxval=65535)
        again = read_pgm(path)
        assert again.dtype == np.uint16
        assert np.array_equal(again, data)

    def test_8bit_roundtrip(self, tmp_path, rng):
        data = rng.integers(0, 256, size=(5, 9)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, data, maxval=255)
        assert np.array_equal(read_pgm(path), data)

    def test_big_endian_samples(self, tmp_path):
        data = np.array([[0x0102]], dtype=np.uint16)
        path = tmp_path / "be.pgm"
        write_pgm(path, data, maxval=65535)
        raw = path.read_bytes()
        assert raw.endswith(b"\x01\x02")

    def test_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04")
        got = read_pgm(path)
        assert np.array_equal(got, [[1, 2], [3, 4]])

    def test_rejects_other_formats(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
        with pytest.raises(ValueError):
            read_pgm(path)

    def test_labelmap_roundtrip(self, tmp_path):
        ids = np.zeros((6, 7), np.int32)
        ids[2:4, 3:6] = 2
        ids[0, 0] = 40000
        path = tmp_path / "labels.pgm"
        write_labelmap(path, LabelMap(ids))
        again = read_labelmap(path)
        assert np.array_equal(again.ids, ids)

    def test_labelmap_range_checked(self, tmp_path):
        ids = np.full((2, 2), 70000, np.int32)
        with pytest.raises(ValueError):
            write_labelmap(tmp_path / "x.pgm", LabelMap(ids))


class TestPolygonsJsonl:
    def test_roundtrip(self, tmp_path, rng):
        records = [
            (1, StarPolygon((1.5, 2.25), rng.uniform(0, 9, 64), unit="px")),
            (4, StarPolygon((7.0, 3.0), rng.uniform(0, 4, 64), unit="mm")),
        ]
        path = tmp_path / "polys.jsonl"
        write_polygons_jsonl(path, records)
        again = read_polygons_jsonl(path)
        assert len(again) == 2
        for (id_a, p_a), (id_b, p_b) in zip(records, again):
            assert id_a == id_b
            assert p_a.unit == p_b.unit
            assert p_a.center == p_b.center
            assert np.allclose(p_a.radii, p_b.radii)

    def test_k_field_checked(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id":1,"center":[0,0],"k":8,"unit":"px",'
                        '"radii":[1,1,1,1]}\n')
        with pytest.raises(ValueError):
            read_polygons_jsonl(path)


class TestEllipsesJsonl:
    def test_roundtrip(self, tmp_path):
        records = [{"id": 2, "center": (3.5, 4.5), "a_px": 9.0, "b_px": 4.0,
                    "theta_rad": 0.25, "fallback": True,
                    "fallback_exhausted": False}]
        path = tmp_path / "ell.jsonl"
        write_ellipses_jsonl(path, records)
        again = read_ellipses_jsonl(path)
        assert again[0]["id"] == 2
        assert again[0]["a_px"] == 9.0
        assert again[0]["fallback"] is True


class TestWeightRaster:
    def test_roundtrip_and_header(self, tmp_path):
        w = np.array([[0.05, 1.0], [10.0, 0.05], [1.0, 1.0]], np.float32)
        path = tmp_path / "w.bin"
        write_weight_raster(path, w, meta={"d_threshold": 10.0})
        raw = path.read_bytes()
        assert len(raw) == 16 + 4 * w.size
        assert raw[:8] == b"WMAPF32\x00"
        again = read_weight_raster(path)
        assert np.array_equal(again, w)
        sidecar = (tmp_path / "w.bin.json").read_text()
        assert '"width": 2' in sidecar
        assert '"d_threshold": 10.0' in sidecar

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 24)
        with pytest.raises(ValueError):
            read_weight_raster(path)
