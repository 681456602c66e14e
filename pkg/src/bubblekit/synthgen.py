"""Parametric bubble shapes and synthetic occlusion scenes with ground truth.

Shapes are star-convex by construction: an ellipse radius function modulated
by low-order harmonics. Scenes composite bubbles front-to-back on an empty
canvas, keep per-bubble full and visible masks, and expose the visible parts
as a LabelMap. Two recipes are provided: small two/three-bubble overlap
scenes for training the radial-distance regressor, and gas-fraction scenes
that stack bubbles until a target volume fraction is reached.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .errors import InvalidRange, PlacementFailure
from .geometry import (DEFAULT_RAY_COUNT, LabelMap, PixelScale, StarPolygon,
                       rasterize)

SHAPE_CLASSES = ("spherical", "ellipsoidal", "wobbling")


@dataclass(frozen=True)
class BubbleShape:
    """One bubble outline in physical units.

    The radius function is
    ``r(theta) = r_ellipse(a, b, theta - orientation) * (1 + sum_n c_n * cos(n*theta + phi_n))``
    for n = 2..4. `polygon` is its k-point discretization (unit mm, centered
    at the origin).
    """

    equivalent_diameter: float
    a: float
    b: float
    orientation: float
    wobble_amp: tuple[float, ...]
    wobble_phase: tuple[float, ...]
    polygon: StarPolygon

    def radius_mm(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        phi = theta - self.orientation
        base = self.a * self.b / np.hypot(self.b * np.cos(phi), self.a * np.sin(phi))
        mod = np.ones_like(theta)
        for n, (c, p) in enumerate(zip(self.wobble_amp, self.wobble_phase), start=2):
            mod += c * np.cos(n * theta + p)
        return base * mod

    def projected_area_mm2(self, n_samples: int = 4096) -> float:
        """Area enclosed by the radius function, 0.5 * integral of r^2."""
        theta = 2.0 * np.pi * np.arange(n_samples) / n_samples
        r = self.radius_mm(theta)
        return float(np.pi * np.mean(r * r))


def sample_shape(size_range: tuple[float, float], shape_class: str,
                 rng: np.random.Generator, k: int = DEFAULT_RAY_COUNT) -> BubbleShape:
    """Draw one bubble shape with equivalent diameter uniform in `size_range`."""
    lo, hi = float(size_range[0]), float(size_range[1])
    if not (0 < lo <= hi):
        raise InvalidRange(f"size range must satisfy 0 < lo <= hi, got {size_range}")
    if shape_class not in SHAPE_CLASSES:
        raise InvalidRange(f"unknown shape class {shape_class!r}")

    d = rng.uniform(lo, hi)
    if shape_class == "spherical":
        aspect = 1.0
    else:
        aspect = rng.uniform(0.5, 1.0)
    # keep the base ellipse area equal to the equivalent-diameter circle
    a = 0.5 * d / np.sqrt(aspect)
    b = 0.5 * d * np.sqrt(aspect)
    orientation = rng.uniform(0.0, np.pi)

    if shape_class == "wobbling":
        amp = tuple(rng.uniform(0.0, 0.08) for _ in range(3))
        phase = tuple(rng.uniform(0.0, 2.0 * np.pi) for _ in range(3))
    else:
        amp = (0.0, 0.0, 0.0)
        phase = (0.0, 0.0, 0.0)

    theta = 2.0 * np.pi * np.arange(k) / k
    phi = theta - orientation
    base = a * b / np.hypot(b * np.cos(phi), a * np.sin(phi))
    mod = np.ones(k)
    for n, (c, p) in enumerate(zip(amp, phase), start=2):
        mod += c * np.cos(n * theta + p)
    poly = StarPolygon(center=(0.0, 0.0), radii=base * mod, unit="mm")
    return BubbleShape(equivalent_diameter=d, a=a, b=b, orientation=orientation,
                       wobble_amp=amp, wobble_phase=phase, polygon=poly)


def bubble_volume(shape: BubbleShape) -> float:
    """Volume of the area-equivalent sphere, in mm^3."""
    area = shape.projected_area_mm2()
    if area <= 0:
        return 0.0
    d_eq = 2.0 * np.sqrt(area / np.pi)
    return float(np.pi / 6.0 * d_eq ** 3)


@dataclass
class PlacedBubble:
    id: int
    position: tuple[float, float]     # (row, col) px of the shape center
    depth_rank: int                   # 0 = frontmost
    radii_mm: np.ndarray
    k: int
    full_mask: np.ndarray
    visible_mask: np.ndarray
    volume_mm3: float
    shape: BubbleShape | None = None

    def full_polygon_px(self, scale: PixelScale) -> StarPolygon:
        return StarPolygon(center=self.position,
                           radii=self.radii_mm / scale.mm_per_px, unit="px")

    def full_polygon_mm(self) -> StarPolygon:
        return StarPolygon(center=self.position, radii=self.radii_mm, unit="mm")


@dataclass
class Scene:
    width: int
    height: int
    pixel_scale: PixelScale
    depth_mm: float
    bubbles: list[PlacedBubble]       # ordered front-to-back
    labels: LabelMap
    achieved_alpha: float
    target_alpha: float | None = None
    seed: int | None = None

    @property
    def domain_volume_mm3(self) -> float:
        s = self.pixel_scale.mm_per_px
        return self.width * s * self.height * s * self.depth_mm


@dataclass
class SceneConfig:
    width: int = 256
    height: int = 256
    mm_per_px: float = 0.05
    depth_mm: float = 30.0
    size_range_mm: tuple[float, float] = (2.0, 7.0)
    shape_classes: tuple[str, ...] = SHAPE_CLASSES
    count_bubbles: int | None = None            # 2 or 3 for the overlap recipe
    target_alpha: float | None = None
    visibility_min: float = 0.10
    overlap_range: tuple[float, float] = (0.10, 0.90)
    k: int = DEFAULT_RAY_COUNT
    max_attempts: int = 10_000

    @property
    def pixel_scale(self) -> PixelScale:
        return PixelScale(self.mm_per_px)


def _place_full_mask(shape: BubbleShape, position: tuple[float, float],
                     config: SceneConfig) -> np.ndarray:
    poly = StarPolygon(center=position,
                       radii=shape.polygon.radii / config.mm_per_px, unit="px")
    return rasterize(poly, (config.height, config.width))


def _sample_position(max_radius_px: float, config: SceneConfig,
                     rng: np.random.Generator) -> tuple[float, float] | None:
    """Uniform position keeping the full outline inside the canvas."""
    m = max_radius_px + 1.0
    if config.height - 1 - m <= m or config.width - 1 - m <= m:
        return None
    return (rng.uniform(m, config.height - 1 - m),
            rng.uniform(m, config.width - 1 - m))


def _visible_masks(full_masks: list[np.ndarray]) -> list[np.ndarray]:
    """Front-to-back painter visibility: each mask minus all masks in front."""
    covered = np.zeros(full_masks[0].shape, dtype=bool)
    visible = []
    for m in full_masks:
        visible.append(m & ~covered)
        covered |= m
    return visible


def _assemble(full_masks, shapes, positions, config, rng_seed,
              target_alpha) -> Scene:
    visible = _visible_masks(full_masks)
    ids = np.zeros((config.height, config.width), dtype=np.int32)
    bubbles = []
    total_volume = 0.0
    for rank, (m_full, m_vis, shape, pos) in enumerate(
            zip(full_masks, visible, shapes, positions)):
        inst_id = rank + 1
        ids[m_vis] = inst_id
        vol = bubble_volume(shape)
        total_volume += vol
        bubbles.append(PlacedBubble(
            id=inst_id, position=pos, depth_rank=rank,
            radii_mm=shape.polygon.radii.copy(), k=shape.polygon.k,
            full_mask=m_full, visible_mask=m_vis, volume_mm3=vol, shape=shape))
    scene = Scene(width=config.width, height=config.height,
                  pixel_scale=config.pixel_scale, depth_mm=config.depth_mm,
                  bubbles=bubbles, labels=LabelMap(ids),
                  achieved_alpha=0.0, target_alpha=target_alpha, seed=rng_seed)
    scene.achieved_alpha = total_volume / scene.domain_volume_mm3
    return scene


def compose_rdc_scene(config: SceneConfig, rng: np.random.Generator,
                      seed: int | None = None) -> Scene:
    """Two or three mutually overlapping bubbles on an empty canvas.

    Placements are rejection-sampled until for every front/back pair the
    covered fraction of the back bubble's full area lies inside
    `config.overlap_range`, and every bubble keeps at least
    `config.visibility_min` of its area visible.
    """
    n = config.count_bubbles
    if n not in (2, 3):
        raise InvalidRange(f"count_bubbles must be 2 or 3, got {n}")
    o_lo, o_hi = config.overlap_range

    attempts = 0
    shapes = None
    while attempts < config.max_attempts:
        attempts += 1
        if shapes is None or attempts % 50 == 0:
            shapes = [sample_shape(config.size_range_mm,
                                   rng.choice(config.shape_classes), rng)
                      for _ in range(n)]
        max_r_px = [s.polygon.radii.max() / config.mm_per_px for s in shapes]

        positions = []
        ok = True
        for i in range(n):
            if i == 0:
                pos = _sample_position(max_r_px[0], config, rng)
            else:
                # bias toward overlap: offset from an earlier bubble
                j = int(rng.integers(0, i))
                dist = rng.uniform(0.2, 0.95) * (max_r_px[i] + max_r_px[j])
                ang = rng.uniform(0.0, 2.0 * np.pi)
                pos = (positions[j][0] + dist * np.sin(ang),
                       positions[j][1] + dist * np.cos(ang))
                m = max_r_px[i] + 1.0
                if not (m <= pos[0] <= config.height - 1 - m
                        and m <= pos[1] <= config.width - 1 - m):
                    pos = None
            if pos is None:
                ok = False
                break
            positions.append(pos)
        if not ok:
            continue

        order = rng.permutation(n)
        full = [_place_full_mask(shapes[i], positions[i], config) for i in order]
        areas = [m.sum() for m in full]
        if min(areas) == 0:
            continue

        for f in range(n):
            for b in range(f + 1, n):
                frac = (full[f] & full[b]).sum() / areas[b]
                if not (o_lo <= frac <= o_hi):
                    ok = False
                    break
            if not ok:
                break
        if not ok:
            continue

        visible = _visible_masks(full)
        if any(v.sum() < config.visibility_min * a
               for v, a in zip(visible, areas)):
            continue

        return _assemble(full, [shapes[i] for i in order],
                         [positions[i] for i in order], config, seed, None)

    raise PlacementFailure(
        f"no valid {n}-bubble layout in {config.max_attempts} attempts", seed=seed)


def compose_alpha_scene(config: SceneConfig, rng: np.random.Generator,
                        seed: int | None = None) -> Scene:
    """Stack bubbles until the gas volume fraction reaches `target_alpha`.

    Each new bubble is pasted in front; a placement is accepted only if every
    earlier bubble keeps at least `visibility_min` of its area visible. After
    repeated failures the bubble's shape is re-drawn; the scene fails once
    `config.max_attempts` total attempts are spent.
    """
    alpha = config.target_alpha
    if alpha is None or not (0.0 < alpha <= 0.15):
        raise InvalidRange(f"target_alpha must be in (0, 0.15], got {alpha}")

    domain = (config.width * config.mm_per_px) * (config.height * config.mm_per_px) \
        * config.depth_mm

    full_masks: list[np.ndarray] = []     # front-to-back
    shapes: list[BubbleShape] = []
    positions: list[tuple[float, float]] = []
    visible: list[np.ndarray] = []
    volume_sum = 0.0
    attempts = 0

    def remaining_size_range() -> tuple[float, float]:
        # shrink the draw so the last bubble roughly fills the deficit
        # instead of overshooting the target by a whole bubble volume
        deficit = (alpha - volume_sum / domain) * domain
        d_fit = (6.0 * deficit / np.pi) ** (1.0 / 3.0)
        lo, hi = config.size_range_mm
        return lo, float(np.clip(d_fit, lo, hi))

    while volume_sum / domain < alpha:
        shape = sample_shape(remaining_size_range(),
                             rng.choice(config.shape_classes), rng)
        placed = False
        position_tries = 0
        while not placed:
            attempts += 1
            if attempts > config.max_attempts:
                raise PlacementFailure(
                    f"alpha target {alpha} not reached in "
                    f"{config.max_attempts} attempts", seed=seed)
            position_tries += 1
            if position_tries > 200:
                shape = sample_shape(remaining_size_range(),
                                     rng.choice(config.shape_classes), rng)
                position_tries = 0
            max_r_px = shape.polygon.radii.max() / config.mm_per_px
            pos = _sample_position(max_r_px, config, rng)
            if pos is None:
                raise PlacementFailure(
                    f"bubble of radius {max_r_px:.0f}px cannot fit the "
                    f"{config.height}x{config.width} canvas", seed=seed)
            new_mask = _place_full_mask(shape, pos, config)
            if new_mask.sum() == 0:
                continue
            new_visible = [v & ~new_mask for v in visible]
            if any(nv.sum() < config.visibility_min * f.sum()
                   for nv, f in zip(new_visible, full_masks)):
                continue
            full_masks.insert(0, new_mask)
            shapes.insert(0, shape)
            positions.insert(0, pos)
            visible = [new_mask] + new_visible
            volume_sum += bubble_volume(shape)
            placed = True

    return _assemble(full_masks, shapes, positions, config, seed, alpha)


@dataclass
class RenderStyle:
    background: int = 208
    interior: int = 176
    rim: int = 40
    glare: int = 232
    rim_width_px: float = 2.5
    glare_fraction: float = 0.35      # of the bubble's smallest radius
    noise_sigma: float = 3.0


def render(scene: Scene, style: RenderStyle | None = None, seed: int = 0) -> np.ndarray:
    """8-bit grayscale rendering: bright background, dark rim band, interior
    glare spot, seeded additive Gaussian noise. Bubbles are painted back to
    front so nearer bubbles overwrite farther ones."""
    from scipy import ndimage as ndi

    style = style or RenderStyle()
    img = np.full((scene.height, scene.width), float(style.background))
    for bubble in reversed(scene.bubbles):
        m = bubble.full_mask
        if not m.any():
            continue
        img[m] = style.interior
        rim = m & (ndi.distance_transform_edt(m) <= style.rim_width_px)
        img[rim] = style.rim
        r_glare = style.glare_fraction * bubble.radii_mm.min() / scene.pixel_scale.mm_per_px
        rr, cc = np.mgrid[0:scene.height, 0:scene.width]
        glare = m & ~rim & ((rr - bubble.position[0]) ** 2
                            + (cc - bubble.position[1]) ** 2 <= r_glare ** 2)
        img[glare] = style.glare
    rng = np.random.default_rng(seed)
    img += rng.normal(0.0, style.noise_sigma, img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


SCENE_SCHEMA = "bubblekit.scene/1"


def scene_ground_truth(scene: Scene) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "width": scene.width,
        "height": scene.height,
        "mm_per_px": scene.pixel_scale.mm_per_px,
        "depth_mm": scene.depth_mm,
        "target_alpha": scene.target_alpha,
        "achieved_alpha": scene.achieved_alpha,
        "seed": scene.seed,
        "bubbles": [{
            "id": b.id,
            "center": [b.position[0], b.position[1]],
            "depth_rank": b.depth_rank,
            "k": b.k,
            "radii_mm": [float(r) for r in b.radii_mm],
            "volume_mm3": b.volume_mm3,
        } for b in scene.bubbles],
    }


def write_scene(out_dir, name: str, scene: Scene,
                rendered: np.ndarray | None = None) -> list[Path]:
    """Write `<name>.json` + `<name>.labels.pgm` (+ `<name>.image.pgm`)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    json_path = out_dir / f"{name}.json"
    json_path.write_text(json.dumps(scene_ground_truth(scene), indent=2) + "\n")
    paths.append(json_path)
    labels_path = out_dir / f"{name}.labels.pgm"
    fileio.write_labelmap(labels_path, scene.labels)
    paths.append(labels_path)
    if rendered is not None:
        img_path = out_dir / f"{name}.image.pgm"
        fileio.write_pgm(img_path, rendered, maxval=255)
        paths.append(img_path)
    return paths


def load_scene(json_path) -> Scene:
    """Rebuild a Scene from its ground-truth JSON and labels PGM.

    Full masks are re-rasterized from the stored polygons; `shape` is not
    recoverable and is left as None."""
    json_path = Path(json_path)
    gt = json.loads(json_path.read_text())
    if gt.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"{json_path}: unknown scene schema {gt.get('schema')!r}")
    labels = fileio.read_labelmap(json_path.parent / (json_path.stem + ".labels.pgm"))
    scale = PixelScale(gt["mm_per_px"])
    shape_px = (gt["height"], gt["width"])
    bubbles = []
    for rec in sorted(gt["bubbles"], key=lambda r: r["depth_rank"]):
        poly_px = StarPolygon(center=tuple(rec["center"]),
                              radii=np.asarray(rec["radii_mm"]) / scale.mm_per_px,
                              unit="px")
        full = rasterize(poly_px, shape_px)
        bubbles.append(PlacedBubble(
            id=rec["id"], position=tuple(rec["center"]),
            depth_rank=rec["depth_rank"],
            radii_mm=np.asarray(rec["radii_mm"], dtype=np.float64),
            k=rec["k"], full_mask=full,
            visible_mask=labels.ids == rec["id"],
            volume_mm3=rec["volume_mm3"]))
    return Scene(width=gt["width"], height=gt["height"], pixel_scale=scale,
                 depth_mm=gt["depth_mm"], bubbles=bubbles, labels=labels,
                 achieved_alpha=gt["achieved_alpha"],
                 target_alpha=gt.get("target_alpha"), seed=gt.get("seed"))
