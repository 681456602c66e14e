"""Batch command-line front-end.

Subcommands: gen, train-rdc, reconstruct, fuse, weightmap, eval. Every
command is deterministic given its config and seed; generated artifacts are
plain PGM/JSON/CSV files. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, ellipse, evaluate, fileio, fuse, rdc, synthgen
from .errors import (DegenerateSegment, DimensionMismatch, InsufficientPoints,
                     NonEllipseConic, NonFiniteLoss, PlacementFailure)
from .geometry import LabelMap, PixelScale

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

WORKERS_ENV = "BUBBLEKIT_WORKERS"

GEN_DEFAULTS = {
    "rdc": {
        "mode": "rdc", "seed": 0, "count": 100,
        "width": 256, "height": 256, "mm_per_px": 0.05, "depth_mm": 30.0,
        "size_range_mm": [2.0, 7.0],
        "shape_classes": list(synthgen.SHAPE_CLASSES),
        "count_bubbles": None, "visibility_min": 0.10,
        "overlap_range": [0.10, 0.90], "render": False,
    },
    "alpha": {
        "mode": "alpha", "seed": 0,
        "alpha_targets": [0.025, 0.05, 0.075, 0.10], "scenes_per_target": 50,
        "width": 512, "height": 512, "mm_per_px": 0.05, "depth_mm": 30.0,
        "size_range_mm": [4.0, 8.0],
        "shape_classes": list(synthgen.SHAPE_CLASSES),
        "visibility_min": 0.10, "render": False,
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path, mode_default=None) -> dict:
    cfg = json.loads(Path(path).read_text()) if path else {}
    mode = cfg.get("mode", mode_default)
    if mode not in GEN_DEFAULTS:
        raise ValueError(f"config mode must be 'rdc' or 'alpha', got {mode!r}")
    merged = dict(GEN_DEFAULTS[mode])
    merged.update(cfg)
    return merged


def _scene_config(cfg: dict, target_alpha=None, count_bubbles=None) -> synthgen.SceneConfig:
    return synthgen.SceneConfig(
        width=cfg["width"], height=cfg["height"], mm_per_px=cfg["mm_per_px"],
        depth_mm=cfg["depth_mm"], size_range_mm=tuple(cfg["size_range_mm"]),
        shape_classes=tuple(cfg["shape_classes"]),
        count_bubbles=count_bubbles, target_alpha=target_alpha,
        visibility_min=cfg["visibility_min"],
        overlap_range=tuple(cfg.get("overlap_range", (0.10, 0.90))))


def _scene_tasks(cfg: dict) -> list[dict]:
    if cfg["mode"] == "rdc":
        return [{"index": i, "target_alpha": None} for i in range(cfg["count"])]
    tasks = []
    i = 0
    for target in cfg["alpha_targets"]:
        for _ in range(cfg["scenes_per_target"]):
            tasks.append({"index": i, "target_alpha": target})
            i += 1
    return tasks


def _gen_one(cfg: dict, task: dict, out_dir: Path) -> dict:
    """Generate and write one scene; the rng stream depends only on
    (seed, scene index), so results are independent of worker scheduling."""
    index = task["index"]
    rng = np.random.default_rng([cfg["seed"], index])
    if cfg["mode"] == "rdc":
        n = cfg.get("count_bubbles") or int(rng.integers(2, 4))
        scfg = _scene_config(cfg, count_bubbles=n)
        scene = synthgen.compose_rdc_scene(scfg, rng, seed=index)
    else:
        scfg = _scene_config(cfg, target_alpha=task["target_alpha"])
        scene = synthgen.compose_alpha_scene(scfg, rng, seed=index)
    rendered = synthgen.render(scene, seed=index) if cfg.get("render") else None
    name = f"scene_{index:05d}"
    paths = synthgen.write_scene(out_dir, name, scene, rendered)
    return {"name": name, "index": index,
            "target_alpha": scene.target_alpha,
            "achieved_alpha": scene.achieved_alpha,
            "n_bubbles": len(scene.bubbles),
            "files": [p.name for p in paths]}


def _gen_worker(args):
    cfg, task, out_dir = args
    try:
        return _gen_one(cfg, task, Path(out_dir))
    except PlacementFailure as exc:
        return {"error": str(exc), "index": task["index"]}


def cmd_gen(args) -> int:
    try:
        cfg = _load_config(args.config, mode_default=args.mode)
    except (ValueError, OSError) as exc:
        print(f"gen: bad config: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.render:
        cfg["render"] = True

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = _scene_tasks(cfg)
    workers = args.workers

    results = []
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = list(pool.imap_unordered(
                _gen_worker, [(cfg, t, str(out_dir)) for t in tasks]))
    else:
        results = [_gen_worker((cfg, t, str(out_dir))) for t in tasks]

    failures = [r for r in results if "error" in r]
    if failures:
        for r in sorted(results, key=lambda r: r["index"]):
            if "error" not in r:
                for fname in r["files"]:
                    (out_dir / fname).unlink(missing_ok=True)
        for r in failures:
            print(f"gen: scene {r['index']}: {r['error']}", file=sys.stderr)
        return EXIT_DATA

    results.sort(key=lambda r: r["index"])
    manifest = {
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "scenes": results,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for r in results:
        alpha = "" if r["target_alpha"] is None else \
            f"  target={r['target_alpha']:.4f} achieved={r['achieved_alpha']:.4f}"
        print(f"{r['name']}  bubbles={r['n_bubbles']}{alpha}")
    print(f"gen: wrote {len(results)} scenes to {out_dir}")
    return EXIT_OK


def _scene_json_paths(scenes_dir: Path) -> list[Path]:
    return sorted(p for p in scenes_dir.glob("*.json") if p.name != "manifest.json")


def cmd_train_rdc(args) -> int:
    scene_paths = _scene_json_paths(Path(args.scenes))
    if not scene_paths:
        print(f"train-rdc: no scene JSON files in {args.scenes}", file=sys.stderr)
        return EXIT_DATA

    cfg = rdc.TrainConfig()
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        cfg = rdc.TrainConfig(**{**cfg.__dict__, **overrides})
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.seed is not None:
        cfg.seed = args.seed

    samples = []
    skipped = 0
    for p in scene_paths:
        scene = synthgen.load_scene(p)
        s, sk = rdc.extract_samples(scene)
        samples.extend(s)
        skipped += sk
    print(f"train-rdc: {len(samples)} samples from {len(scene_paths)} scenes"
          + (f" ({skipped} degenerate segments skipped)" if skipped else ""))

    try:
        model, history = rdc.train(samples, cfg)
    except NonFiniteLoss as exc:
        print(f"train-rdc: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    rdc.save_model(args.out, model)
    loss_csv = args.loss_csv or str(Path(args.out).with_suffix(".loss.csv"))
    with open(loss_csv, "w") as f:
        f.write("epoch,train_mse,val_mse\n")
        for e, (tr, va) in enumerate(zip(history.train, history.validation)):
            f.write(f"{e},{tr!r},{va!r}\n")
    print(f"train-rdc: wrote {args.out} (final val MSE {history.validation[-1]:.6f})")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    if args.method == "rdc" and not args.model:
        print("reconstruct: --model is required for method=rdc", file=sys.stderr)
        return EXIT_USAGE
    try:
        labels = fileio.read_labelmap(args.labels)
    except (ValueError, OSError) as exc:
        print(f"reconstruct: {exc}", file=sys.stderr)
        return EXIT_DATA

    scale = PixelScale(args.mm_per_px)
    instance_ids = labels.instance_ids()

    if args.method == "ellipse":
        records = []
        skipped = []
        for inst in instance_ids:
            try:
                rec = ellipse.reconstruct_ellipse(labels, int(inst))
            except (DegenerateSegment, InsufficientPoints, NonEllipseConic) as exc:
                skipped.append((int(inst), str(exc)))
                continue
            records.append(ellipse.reconstruction_record(int(inst), rec))
        fileio.write_ellipses_jsonl(args.out, records)
        for inst, why in skipped:
            print(f"reconstruct: instance {inst} skipped: {why}", file=sys.stderr)
        print(f"reconstruct: {len(records)} ellipses -> {args.out}")
        return EXIT_OK

    model = None
    if args.method == "rdc":
        try:
            model = rdc.load_model(args.model)
        except (ValueError, OSError) as exc:
            print(f"reconstruct: {exc}", file=sys.stderr)
            return EXIT_DATA

    records = []
    for inst in instance_ids:
        if args.method == "none":
            center, radii_px, _ = rdc._visible_rays(labels, int(inst), args.k)
            poly = rdc.StarPolygon(center=center,
                                   radii=radii_px * scale.mm_per_px, unit="mm")
        else:
            poly = rdc.correct_polygon(model, labels, int(inst), scale)
        records.append((int(inst), poly))
    fileio.write_polygons_jsonl(args.out, records)
    print(f"reconstruct: {len(records)} polygons -> {args.out}")
    return EXIT_OK


def cmd_fuse(args) -> int:
    try:
        seeds = fileio.read_labelmap(args.seeds)
        foreground = fileio.read_pgm(args.foreground) > 0
    except (ValueError, OSError) as exc:
        print(f"fuse: {exc}", file=sys.stderr)
        return EXIT_DATA
    try:
        result = fuse.grow_instances(seeds, foreground)
    except DimensionMismatch as exc:
        print(f"fuse: {exc}", file=sys.stderr)
        return EXIT_DATA
    fileio.write_labelmap(args.out, result.labels)
    diag = {"unreached_foreground_pixels": result.unreached_foreground}
    diag_path = args.diagnostics or str(Path(args.out).with_suffix(".diagnostics.json"))
    Path(diag_path).write_text(json.dumps(diag, indent=2) + "\n")
    print(f"fuse: wrote {args.out} "
          f"(unreached foreground pixels: {result.unreached_foreground})")
    return EXIT_OK


def cmd_weightmap(args) -> int:
    try:
        labels = fileio.read_labelmap(args.labels)
    except (ValueError, OSError) as exc:
        print(f"weightmap: {exc}", file=sys.stderr)
        return EXIT_DATA
    w = fuse.weight_map(labels, d_threshold=args.threshold)
    fileio.write_weight_raster(args.out, w, meta={"d_threshold": args.threshold})
    print(f"weightmap: wrote {args.out}")
    return EXIT_OK


def _collect_by_stem(directory, suffixes: tuple[str, ...]) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(Path(directory).iterdir()):
        for suf in suffixes:
            if p.name.endswith(suf):
                found[p.name[:-len(suf)]] = p
                break
    return found


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    scene_paths = _scene_json_paths(gt_dir)
    if not scene_paths:
        print(f"eval: no ground-truth scenes in {gt_dir}", file=sys.stderr)
        return EXIT_DATA
    stems = [p.stem for p in scene_paths]

    pred_sets: dict[str, dict[str, Path]] = {}
    sources = {"labels": (args.labels, (".labels.pgm", ".pgm")),
               "raw": (args.raw, (".jsonl",)),
               "rdc": (args.rdc, (".jsonl",)),
               "ellipse": (args.ellipse, (".jsonl",))}
    for kind, (directory, sufs) in sources.items():
        if directory:
            pred_sets[kind] = _collect_by_stem(directory, sufs)
    if not pred_sets:
        print("eval: provide at least one of --labels/--raw/--rdc/--ellipse",
              file=sys.stderr)
        return EXIT_USAGE

    missing = [(kind, s) for kind, files in pred_sets.items()
               for s in stems if s not in files]
    if missing:
        for kind, s in missing:
            print(f"eval: --{kind} has no prediction for {s}", file=sys.stderr)
        return EXIT_DATA

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = []
    diam_acc: dict[str, list] = {"ref": [], "raw": [], "rdc": [], "ellipse": []}
    for path, stem in zip(scene_paths, stems):
        scene = synthgen.load_scene(path)
        scale = scene.pixel_scale
        canvas = (scene.height, scene.width)
        gt_polys = [b.full_polygon_mm() for b in scene.bubbles]
        im = evaluate.ImageEval(name=stem, group=scene.target_alpha)
        im.alpha_ref = evaluate.gas_fraction(gt_polys, scale, scene.depth_mm, canvas)
        diam_acc["ref"].extend(evaluate.equivalent_diameters_mm(
            evaluate.instance_areas_mm2(gt_polys, scale)))

        if "labels" in pred_sets:
            pred_labels = fileio.read_labelmap(pred_sets["labels"][stem])
            im.ap = evaluate.ap_curve(pred_labels, scene.labels)
            if "raw" not in pred_sets:
                im.alpha_raw = evaluate.gas_fraction(pred_labels, scale,
                                                     scene.depth_mm, canvas)
                diam_acc["raw"].extend(evaluate.equivalent_diameters_mm(
                    evaluate.instance_areas_mm2(pred_labels, scale)))
        for kind in ("raw", "rdc"):
            if kind in pred_sets:
                polys = [p for _, p in fileio.read_polygons_jsonl(pred_sets[kind][stem])]
                alpha = evaluate.gas_fraction(polys, scale, scene.depth_mm, canvas)
                setattr(im, f"alpha_{kind}", alpha)
                diam_acc[kind].extend(evaluate.equivalent_diameters_mm(
                    evaluate.instance_areas_mm2(polys, scale)))
        if "ellipse" in pred_sets:
            recs = fileio.read_ellipses_jsonl(pred_sets["ellipse"][stem])
            areas = [np.pi * r["a_px"] * r["b_px"] * scale.mm_per_px ** 2
                     for r in recs]
            im.alpha_ellipse = evaluate.gas_fraction(areas, scale,
                                                     scene.depth_mm, canvas)
            diam_acc["ellipse"].extend(evaluate.equivalent_diameters_mm(
                np.asarray(areas)))
        images.append(im)

    report = evaluate.EvalReport(images=images)
    evaluate.write_report_csv(out_dir / "report.csv", report)
    evaluate.write_report_json(out_dir / "summary.json", report)
    for kind, diams in diam_acc.items():
        if diams:
            areas = np.pi * (np.asarray(diams) / 2.0) ** 2
            hist = evaluate.size_histogram(list(areas), None, args.bin_width)
            evaluate.write_histogram_csv(out_dir / f"histogram_{kind}.csv", hist)
    print(f"eval: {len(images)} images -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bubblekit",
                     description="Overlapping-bubble scene generation, "
                                 "reconstruction and evaluation")
    default_workers = int(os.environ.get(WORKERS_ENV, "1"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes")
    p.add_argument("--config", help="JSON config; defaults depend on --mode")
    p.add_argument("--mode", choices=("rdc", "alpha"), default="rdc",
                   help="used when the config file sets no mode")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--render", action="store_true")
    p.add_argument("--workers", type=int, default=default_workers)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-rdc", help="train the radial distance corrector")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON with TrainConfig overrides")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-csv")
    p.set_defaults(func=cmd_train_rdc)

    p = sub.add_parser("reconstruct", help="per-instance hidden-part reconstruction")
    p.add_argument("--labels", required=True, help="input label map PGM")
    p.add_argument("--method", choices=("none", "rdc", "ellipse"), required=True)
    p.add_argument("--model", help="RDC model JSON (method=rdc)")
    p.add_argument("--mm-per-px", type=float, default=0.05)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fuse", help="grow seed instances into a foreground mask")
    p.add_argument("--seeds", required=True)
    p.add_argument("--foreground", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("weightmap", help="export the segmentation loss weight map")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=10.0)
    p.set_defaults(func=cmd_weightmap)

    p = sub.add_parser("eval", help="AP, size histograms and gas fractions")
    p.add_argument("--gt", required=True, help="ground-truth scenes directory")
    p.add_argument("--labels", help="predicted label map directory (AP)")
    p.add_argument("--raw", help="visible-polygon JSONL directory")
    p.add_argument("--rdc", help="RDC-corrected polygon JSONL directory")
    p.add_argument("--ellipse", help="ellipse JSONL directory")
    p.add_argument("--out", required=True)
    p.add_argument("--bin-width", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as exc:
        print(f"bubblekit: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PlacementFailure, DimensionMismatch) as exc:
        print(f"bubblekit: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
