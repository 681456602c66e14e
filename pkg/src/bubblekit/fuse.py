"""Seed-map fusion and training-weight-map export.

`grow_instances` dilates seed instances into a foreground mask until the
mask is filled: every claimable foreground pixel goes to the instance whose
original seed region is nearest in Euclidean distance (ties to the lower
id). Claimable means 8-connected to some seed through foreground; anything
else stays background and is reported. Distances are compared as exact
integer squares, so the result is reproducible and matches a brute-force
nearest-seed assignment pixel for pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import DimensionMismatch
from .geometry import LabelMap

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class GrowResult:
    labels: LabelMap
    unreached_foreground: int


def _squared_distance_to(mask: np.ndarray) -> np.ndarray:
    """Exact integer squared Euclidean distance to the nearest True pixel."""
    if not mask.any():
        raise ValueError("empty target mask")
    _, (ir, ic) = ndi.distance_transform_edt(~mask, return_indices=True)
    rr, cc = np.indices(mask.shape)
    return (rr - ir).astype(np.int64) ** 2 + (cc - ic).astype(np.int64) ** 2


def grow_instances(seeds: LabelMap, foreground: np.ndarray) -> GrowResult:
    """Grow seed instances over a foreground mask (SD+UNet fusion step).

    Seed pixels are never relabeled, even outside the foreground. Foreground
    pixels in components without any seed remain background and are counted
    in the result."""
    foreground = np.asarray(foreground).astype(bool)
    if foreground.shape != seeds.shape:
        raise DimensionMismatch(
            f"foreground {foreground.shape} vs seeds {seeds.shape}")

    ids = seeds.ids
    out = ids.copy()
    domain = foreground | (ids > 0)
    comp, _ = ndi.label(domain, structure=_EIGHT)

    seeded_comps = np.unique(comp[ids > 0])
    seeded_comps = seeded_comps[seeded_comps > 0]
    claimable_all = foreground & (ids == 0)
    reachable = claimable_all & np.isin(comp, seeded_comps)
    unreached = int(claimable_all.sum() - reachable.sum())

    for comp_id in seeded_comps:
        in_comp = comp == comp_id
        claim = reachable & in_comp
        if not claim.any():
            continue
        cand = np.unique(ids[in_comp & (ids > 0)])
        if len(cand) == 1:
            out[claim] = cand[0]
            continue
        best_d2 = np.full(ids.shape, np.iinfo(np.int64).max, dtype=np.int64)
        best_id = np.zeros(ids.shape, dtype=np.int32)
        for inst in cand:  # ascending ids: strict < keeps the lower id on ties
            d2 = _squared_distance_to(in_comp & (ids == inst))
            better = claim & (d2 < best_d2)
            best_d2[better] = d2[better]
            best_id[better] = inst
        out[claim] = best_id[claim]

    return GrowResult(labels=LabelMap(out), unreached_foreground=unreached)


def weight_map(labels: LabelMap, d_threshold: float = 10.0) -> np.ndarray:
    """Loss weight per pixel: 1 inside any instance, 10 on background pixels
    whose two nearest distinct-instance interfaces are both closer than
    `d_threshold`, 0.05 elsewhere.

    With fewer than two instances there is no second interface, so all
    exterior pixels get 0.05."""
    ids = labels.ids
    w = np.full(ids.shape, 0.05, dtype=np.float64)
    inside = ids > 0
    w[inside] = 1.0

    instances = labels.instance_ids()
    if len(instances) >= 2:
        thr2 = float(d_threshold) ** 2
        big = np.iinfo(np.int64).max
        best1 = np.full(ids.shape, big, dtype=np.int64)
        best2 = np.full(ids.shape, big, dtype=np.int64)
        for inst in instances:
            d2 = _squared_distance_to(ids == inst)
            closer = d2 < best1
            best2 = np.where(closer, best1, np.minimum(best2, d2))
            best1 = np.where(closer, d2, best1)
        narrow = ~inside & (best1 < thr2) & (best2 < thr2)
        w[narrow] = 10.0
    return w
