"""Command-line surface for the guardrail detection pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import classifiers, detector, evaluation, floors, spacing, synthgen
from .config import ConfigError, PipelineConfig, apply_overrides, config_to_dict, load_config
from .vision import BoundingBox, Detection, ImageError, draw_boxes, draw_lines, load_image, save_png

log = logging.getLogger("guardscan")


def _setup_logging() -> None:
    level = os.environ.get("GUARDSCAN_LOG", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _detections_jsonl(image_name: str, dets: list[Detection]) -> str:
    lines = []
    for d in sorted(dets, key=lambda d: (-d.score, d.box.x, d.box.y)):
        lines.append(json.dumps(
            {"image": image_name, "x": d.box.x, "y": d.box.y,
             "w": d.box.w, "h": d.box.h, "score": d.score},
            sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + ("\n" if lines else "")


def _floors_jsonl(lines_: list) -> str:
    out = []
    for fl in lines_:
        out.append(json.dumps(
            {"slope": fl.slope, "intercept": fl.intercept,
             "coverage": fl.coverage, "support": fl.support},
            sort_keys=True, separators=(",", ":")))
    return "\n".join(out) + ("\n" if out else "")


def _resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    overrides = getattr(args, "set", None) or []
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _maybe_echo(args, cfg: PipelineConfig) -> bool:
    if getattr(args, "echo_config", False):
        print(json.dumps(config_to_dict(cfg), sort_keys=True, indent=2))
        return True
    return False


def _training_windows(ds, cfg: PipelineConfig, neg_per_image: int = 60):
    """Positive and negative grayscale window stacks from the training split."""
    pos_stacks, neg_stacks = [], []
    for i, name in enumerate(ds.train_names):
        img = load_image(ds.image_path(name))
        annotations = ds.annotations[name]
        if annotations:
            pos_stacks.append(detector.extract_windows(img, annotations, cfg.scan))
            neg_stacks.append(detector.perturbed_negative_windows(img, annotations, cfg.scan))
        neg = detector.sample_negative_windows(
            img, annotations, cfg.scan, neg_per_image, seed=cfg.seed + i)
        if len(neg):
            neg_stacks.append(neg)
    if not pos_stacks or not neg_stacks:
        raise ValueError("training split produced no positive or no negative windows")
    return np.concatenate(pos_stacks), np.concatenate(neg_stacks)


# ----------------------------------------------------------------- commands


def _cmd_keyframes(args, cfg):
    indices = detector.keyframe_indices(args.frames, args.fps, args.skip, args.stride)
    print("\n".join(str(i) for i in indices))
    return 0


def _cmd_synth(args, cfg):
    synth_cfg = cfg.synth
    if args.seed is not None:
        synth_cfg = synthgen.SynthConfig(**{
            **{k: v for k, v in vars(synth_cfg).items()}, "seed": args.seed})
    manifest = synthgen.make_dataset(synth_cfg, args.n_train, args.n_test, args.out)
    print(manifest)
    return 0


def _cmd_train_svm(args, cfg):
    from .hog import hog_from_window_stack

    ds = synthgen.load_dataset(args.dataset)
    pos, neg = _training_windows(ds, cfg)
    X = np.vstack([hog_from_window_stack(pos, cfg.hog),
                   hog_from_window_stack(neg, cfg.hog)])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    svm_cfg = cfg.svm
    if args.c_grid:
        grid = [float(c) for c in args.c_grid.split(",")]
        result = classifiers.grid_search_cv(X, y, grid, folds=args.folds,
                                            seed=cfg.seed, base_cfg=svm_cfg)
        log.info("grid search: best C=%g over %d trainings", result.best_c, result.n_trainings)
        svm_cfg = classifiers.SvmTrainConfig(
            C=result.best_c, seed=svm_cfg.seed,
            max_epochs=svm_cfg.max_epochs, tolerance=svm_cfg.tolerance)
    model = classifiers.train_linear_svm(X, y, svm_cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    classifiers.save_model(model, out, hog_params=cfg.hog)
    print(out)
    return 0


def _cmd_train_cascade(args, cfg):
    ds = synthgen.load_dataset(args.dataset)
    pos, neg = _training_windows(ds, cfg)
    model = classifiers.train_cascade(pos, neg, cfg.cascade)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    classifiers.save_model(model, out)
    print(out)
    return 0


def _load_any_model(path):
    model, hog_params = classifiers.load_model(path)
    return model, hog_params


def _cmd_detect(args, cfg):
    model, hog_params = _load_any_model(args.model)
    chunks = []
    for image_path in args.images:
        img = load_image(image_path)
        if isinstance(model, classifiers.LinearSvmModel):
            dets = detector.detect(img, model, cfg.scan, hog_params)
        else:
            dets = detector.detect(img, model, cfg.scan)
        name = Path(image_path).name
        chunks.append(_detections_jsonl(name, dets))
        if args.overlay_dir:
            overlay = draw_boxes(img, [d.box for d in dets], (0.0, 0.0, 1.0))
            out = Path(args.overlay_dir) / f"{Path(name).stem}_detections.png"
            out.parent.mkdir(parents=True, exist_ok=True)
            save_png(overlay, out)
    _atomic_write_text(Path(args.out), "".join(chunks))
    print(args.out)
    return 0


def _cmd_floors(args, cfg):
    img = load_image(args.image)
    lines = floors.detect_floors(img, cfg.floor)
    _atomic_write_text(Path(args.out), _floors_jsonl(lines))
    if args.overlay:
        overlay = draw_lines(img, lines, (1.0, 1.0, 1.0))
        save_png(overlay, args.overlay)
    print(args.out)
    return 0


def _cmd_pipeline(args, cfg):
    model, hog_params = _load_any_model(args.model)
    kind = "svm" if isinstance(model, classifiers.LinearSvmModel) else "cascade"
    models = evaluation.PipelineModels(
        svm=model if kind == "svm" else None,
        svm_hog=hog_params if kind == "svm" else None,
        cascade=model if kind == "cascade" else None,
    )
    if args.spacing_model:
        _, table = spacing.load_spacing_model(args.spacing_model)
    else:
        if not args.dataset:
            raise ValueError("either --spacing-model or --dataset (to fit one) is required")
        ds = synthgen.load_dataset(args.dataset)
        _, _, table = evaluation.fit_spacing_model_from_dataset(
            ds, cfg.floor, cfg.spacing.fit, cfg.spacing.k_range,
            cfg.spacing.bins, cfg.spacing.s_max, cfg.spacing.tau)
    models = evaluation.PipelineModels(
        svm=models.svm, svm_hog=models.svm_hog, cascade=models.cascade,
        spacing_table=table)

    if args.dataset and not args.images:
        ds = synthgen.load_dataset(args.dataset)
        image_paths = [ds.image_path(n) for n in ds.test_names]
    else:
        image_paths = [Path(p) for p in args.images]
    if not image_paths:
        raise ValueError("no input images: pass --dataset or --images")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(path: Path):
        img = load_image(path)
        floor_lines = floors.detect_floors(img, cfg.floor)
        dets = evaluation.run_stages(
            img, kind, ("floor", "spacing"), models, cfg.scan, cfg.floor,
            floors=floor_lines)
        return path.name, img, floor_lines, dets

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(process, image_paths))
    else:
        results = [process(p) for p in image_paths]

    chunks = []
    for name, img, floor_lines, dets in results:
        chunks.append(_detections_jsonl(name, dets))
        overlay = draw_lines(img, floor_lines, (1.0, 1.0, 1.0))
        overlay = draw_boxes(overlay, [d.box for d in dets], (0.0, 0.0, 1.0))
        save_png(overlay, out_dir / f"{Path(name).stem}_pipeline.png")
    _atomic_write_text(out_dir / "detections.jsonl", "".join(chunks))
    print(out_dir / "detections.jsonl")
    return 0


_STAGES_CHOICES = {
    "raw": ((),),
    "floor": (("floor",),),
    "spacing": (("floor", "spacing"),),
    "all": ((), ("floor",), ("floor", "spacing")),
}


def _cmd_eval(args, cfg):
    ds = synthgen.load_dataset(args.dataset)
    svm_model = svm_hog = cascade_model = None
    kinds = []
    if args.cascade_model:
        cascade_model, _ = _load_any_model(args.cascade_model)
        kinds.append("cascade")
    if args.svm_model:
        svm_model, svm_hog = _load_any_model(args.svm_model)
        kinds.append("svm")
    if not kinds:
        raise ValueError("at least one of --cascade-model / --svm-model is required")
    stage_sets = _STAGES_CHOICES[args.stages]
    combos = [(kind, stages) for stages in stage_sets for kind in kinds]
    # keep Table-style row order: both classifiers per stage block
    table = None
    if any("spacing" in s for s in stage_sets):
        _, _, table = evaluation.fit_spacing_model_from_dataset(
            ds, cfg.floor, cfg.spacing.fit, cfg.spacing.k_range,
            cfg.spacing.bins, cfg.spacing.s_max, cfg.spacing.tau)
    models = evaluation.PipelineModels(
        svm=svm_model, svm_hog=svm_hog, cascade=cascade_model, spacing_table=table)
    reports = evaluation.evaluate_pipeline(
        ds, combos, models, cfg.scan, cfg.floor,
        iou_threshold=cfg.eval.iou_threshold,
        overlay_dir=args.overlay_dir)
    if args.out:
        evaluation.write_report_csv(reports, args.out)
        if args.per_image:
            evaluation.write_per_image_jsonl(reports, args.per_image)
    print(evaluation.render_report_table(reports))
    return 0


def _cmd_report(args, cfg):
    reports = evaluation.read_report_csv(args.infile)
    print(evaluation.render_report_table(reports))
    return 0


# ------------------------------------------------------------------ parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value (repeatable), e.g. scan.stride_x=8")
    p.add_argument("--echo-config", action="store_true",
                   help="print the effective config and exit")
    p.add_argument("--jobs", type=int, default=1, help="parallel image workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guardscan",
                                     description="Guardrail-post detection pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keyframes", help="print sampled keyframe indices")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--fps", type=float, required=True)
    p.add_argument("--skip", type=float, required=True, help="seconds skipped at each end")
    p.add_argument("--stride", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_keyframes)

    p = sub.add_parser("synth", help="generate a synthetic facade dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=30)
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train-svm", help="train the linear SVM window classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c-grid", help="comma-separated C values for cross-validated search")
    p.add_argument("--folds", type=int, default=3)
    _add_common(p)
    p.set_defaults(func=_cmd_train_svm)

    p = sub.add_parser("train-cascade", help="train the cascade window classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=_cmd_train_cascade)

    p = sub.add_parser("detect", help="run a classifier over images")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="detections JSON-lines file")
    p.add_argument("--overlay-dir")
    p.add_argument("images", nargs="+")
    _add_common(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("floors", help="detect floor lines in an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="floors JSON-lines file")
    p.add_argument("--overlay")
    _add_common(p)
    p.set_defaults(func=_cmd_floors)

    p = sub.add_parser("pipeline", help="detect, floor-filter, and spacing-select")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", help="dataset (test split input; spacing model fit from train)")
    p.add_argument("--spacing-model", help="previously saved spacing model JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("images", nargs="*")
    _add_common(p)
    p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("eval", help="evaluate stage combinations on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--cascade-model")
    p.add_argument("--svm-model")
    p.add_argument("--stages", choices=sorted(_STAGES_CHOICES), default="all")
    p.add_argument("--out", help="report CSV path")
    p.add_argument("--per-image", help="per-image JSON-lines breakdown path")
    p.add_argument("--overlay-dir")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render a saved report CSV as a table")
    p.add_argument("infile")
    _add_common(p)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _resolve_config(args)
        if _maybe_echo(args, cfg):
            return 0
        return args.func(args, cfg)
    except (ConfigError, ImageError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"guardscan: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
