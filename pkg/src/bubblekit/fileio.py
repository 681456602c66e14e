"""Plain-format readers and writers: PGM rasters, JSONL records, weight rasters.

Everything written here is readable without this package: binary PGM ("P5")
for label maps (16-bit big-endian) and rendered images (8-bit), JSON lines
for polygon and ellipse records, and a small float32 raster format for
weight maps.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import LabelMap, StarPolygon

WEIGHT_RASTER_MAGIC = b"WMAPF32\x00"


def write_pgm(path, data: np.ndarray, maxval: int = 65535) -> None:
    """Write a P5 PGM; samples are big-endian 16-bit when maxval > 255."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("PGM data must be 2-d")
    if data.min() < 0 or data.max() > maxval:
        raise ValueError(f"data out of range for maxval={maxval}")
    h, w = data.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    Path(path).write_bytes(header + data.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM (8- or 16-bit), tolerating comment lines."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5)")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = int(tokens[0]), int(tokens[1]), int(tokens[2])
    if maxval > 255:
        data = np.frombuffer(raw, dtype=">u2", count=w * h, offset=pos)
        return data.reshape(h, w).astype(np.uint16)
    data = np.frombuffer(raw, dtype="u1", count=w * h, offset=pos)
    return data.reshape(h, w).copy()


def write_labelmap(path, labels: LabelMap) -> None:
    if labels.ids.max(initial=0) > 65535:
        raise ValueError("instance ids exceed the 16-bit PGM range")
    write_pgm(path, labels.ids, maxval=65535)


def read_labelmap(path) -> LabelMap:
    return LabelMap(read_pgm(path).astype(np.int32))


def write_polygons_jsonl(path, records: list[tuple[int, StarPolygon]]) -> None:
    """One JSON object per line: {id, center, k, unit, radii}."""
    with open(path, "w") as f:
        for inst_id, poly in records:
            f.write(json.dumps({
                "id": int(inst_id),
                "center": [poly.center[0], poly.center[1]],
                "k": poly.k,
                "unit": poly.unit,
                "radii": [float(r) for r in poly.radii],
            }) + "\n")


def read_polygons_jsonl(path) -> list[tuple[int, StarPolygon]]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            poly = StarPolygon(center=tuple(obj["center"]),
                               radii=np.asarray(obj["radii"], dtype=np.float64),
                               unit=obj["unit"])
            if poly.k != obj["k"]:
                raise ValueError(f"{path}: k field disagrees with radii length")
            records.append((int(obj["id"]), poly))
    return records


def write_ellipses_jsonl(path, records: list[dict]) -> None:
    """One JSON object per line: {id, center, a_px, b_px, theta_rad, fallback,
    fallback_exhausted}."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps({
                "id": int(rec["id"]),
                "center": [float(rec["center"][0]), float(rec["center"][1])],
                "a_px": float(rec["a_px"]),
                "b_px": float(rec["b_px"]),
                "theta_rad": float(rec["theta_rad"]),
                "fallback": bool(rec["fallback"]),
                "fallback_exhausted": bool(rec["fallback_exhausted"]),
            }) + "\n")


def read_ellipses_jsonl(path) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_weight_raster(path, weights: np.ndarray, meta: dict | None = None) -> None:
    """float32 raster: 16-byte header (8-byte magic, u32 width, u32 height,
    little-endian) followed by row-major float32 samples; JSON sidecar at
    `<path>.json`."""
    weights = np.asarray(weights, dtype=np.float32)
    if weights.ndim != 2:
        raise ValueError("weight raster must be 2-d")
    h, w = weights.shape
    header = WEIGHT_RASTER_MAGIC + struct.pack("<II", w, h)
    Path(path).write_bytes(header + weights.astype("<f4").tobytes())
    sidecar = {"width": w, "height": h, "dtype": "float32", "order": "row-major"}
    sidecar.update(meta or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_weight_raster(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:8] != WEIGHT_RASTER_MAGIC:
        raise ValueError(f"{path}: bad weight raster magic")
    w, h = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw, dtype="<f4", count=w * h, offset=16)
    return data.reshape(h, w).astype(np.float32)
