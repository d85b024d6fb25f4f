"""Detection-vs-ground-truth matching, precision/recall, and the stage-by-stage
pipeline evaluation table."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .classifiers import CascadeModel, LinearSvmModel
from .detector import ScanParams, detect
from .floors import FloorConfig, detect_floors, filter_by_floor, group_boxes_by_floor
from .hog import HogParams
from .spacing import (
    SpacingFitConfig,
    UbiquityTable,
    build_ubiquity_table,
    normalized_spacings,
    select_best_combination,
    select_k_bic,
)
from .synthgen import Dataset
from .vision import BoundingBox, Detection, Image, draw_boxes, iou, load_image, save_png

log = logging.getLogger(__name__)

STAGE_COMBOS = (
    ("cascade", ()),
    ("svm", ()),
    ("cascade", ("floor",)),
    ("svm", ("floor",)),
    ("cascade", ("floor", "spacing")),
    ("svm", ("floor", "spacing")),
)

_KIND_LABEL = {"cascade": "Cascade Classifier", "svm": "Linear SVM"}
_STAGE_LABEL = {"floor": "Floor Detection", "spacing": "Space Estimation"}


def combo_label(kind: str, stages: tuple[str, ...]) -> str:
    return " and ".join([_KIND_LABEL[kind]] + [_STAGE_LABEL[s] for s in stages])


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[Detection, BoundingBox], ...]


@dataclass(frozen=True)
class EvalReport:
    label: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    per_image: tuple[dict, ...] = ()


def match_detections(
    dets: list[Detection],
    gt: list[BoundingBox],
    iou_threshold: float = 0.5,
) -> MatchResult:
    """Greedy one-to-one matching by descending detection score.

    Each detection claims the unmatched ground-truth box with the highest
    IOU >= threshold; leftover detections are false positives, leftover ground
    truth are false negatives.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must be in (0, 1]")
    gt_sorted = sorted(gt, key=lambda b: (b.x, b.y, b.w, b.h))
    unmatched = set(range(len(gt_sorted)))
    pairs = []
    for det in sorted(dets, key=lambda d: (-d.score, d.box.x, d.box.y)):
        best_i, best_iou = -1, 0.0
        for i in sorted(unmatched):
            v = iou(det.box, gt_sorted[i])
            if v >= iou_threshold and v > best_iou:
                best_i, best_iou = i, v
        if best_i >= 0:
            unmatched.discard(best_i)
            pairs.append((det, gt_sorted[best_i]))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(dets) - tp, fn=len(gt) - tp, pairs=tuple(pairs))


def precision_recall(tp: int, fp: int, fn: int) -> tuple[float, float]:
    """Precision tp/(tp+fp), recall tp/(tp+fn); vacuous denominators default to
    1 (or 0 precision when positives were missed with no detections)."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be >= 0")
    if tp + fp == 0:
        precision = 1.0 if fn == 0 else 0.0
    else:
        precision = tp / (tp + fp)
    recall = 1.0 if tp + fn == 0 else tp / (tp + fn)
    return precision, recall


# ------------------------------------------------------------ pipeline runs


@dataclass(frozen=True)
class PipelineModels:
    svm: LinearSvmModel | None = None
    svm_hog: HogParams | None = None
    cascade: CascadeModel | None = None
    spacing_table: UbiquityTable | None = None


def fit_spacing_model_from_dataset(
    ds: Dataset,
    floor_cfg: FloorConfig,
    fit_cfg: SpacingFitConfig | None = None,
    k_range=range(1, 6),
    bins: int = 200,
    s_max: float = 4.0,
    tau: float | None = None,
):
    """Fit the normalized-spacing GMM from the training annotations, grouped by
    the floors detected on each training image; returns (k, model, table)."""
    samples: list[float] = []
    for name in ds.train_names:
        img = load_image(ds.image_path(name))
        floors = detect_floors(img, floor_cfg)
        grouped = group_boxes_by_floor(ds.annotations[name], floors, floor_cfg.max_dist)
        samples.extend(normalized_spacings(grouped))
    if len(samples) < max(k_range):
        raise ValueError(
            f"only {len(samples)} spacing samples from the training split; "
            f"cannot fit up to {max(k_range)} components"
        )
    k, model = select_k_bic(samples, k_range, fit_cfg)
    table = build_ubiquity_table(model, bins=bins, s_max=s_max, tau=tau)
    return k, model, table


def run_stages(
    img: Image,
    kind: str,
    stages: tuple[str, ...],
    models: PipelineModels,
    scan: ScanParams,
    floor_cfg: FloorConfig,
    raw_dets: list[Detection] | None = None,
    floors=None,
) -> list[Detection]:
    """Apply one classifier plus the requested filter stages to an image."""
    if raw_dets is None:
        if kind == "svm":
            if models.svm is None:
                raise ValueError("no SVM model provided")
            raw_dets = detect(img, models.svm, scan, models.svm_hog)
        elif kind == "cascade":
            if models.cascade is None:
                raise ValueError("no cascade model provided")
            raw_dets = detect(img, models.cascade, scan)
        else:
            raise ValueError(f"unknown classifier kind {kind!r}")
    dets = raw_dets
    if "floor" in stages:
        if floors is None:
            floors = detect_floors(img, floor_cfg)
        dets = filter_by_floor(dets, floors, floor_cfg.max_dist)
        if "spacing" in stages:
            if models.spacing_table is None:
                raise ValueError("no spacing model provided")
            by_floor = group_boxes_by_floor([d.box for d in dets], floors, floor_cfg.max_dist)
            det_by_box = {d.box: d for d in dets}
            selected: list[Detection] = []
            for _, boxes in sorted(by_floor.items()):
                floor_dets = [det_by_box[b] for b in boxes]
                selected.extend(select_best_combination(floor_dets, models.spacing_table))
            dets = sorted(selected, key=lambda d: (d.box.x, d.box.y))
    elif "spacing" in stages:
        raise ValueError("the spacing stage requires the floor stage")
    return dets


def evaluate_pipeline(
    ds: Dataset,
    combos,
    models: PipelineModels,
    scan: ScanParams,
    floor_cfg: FloorConfig,
    iou_threshold: float = 0.5,
    overlay_dir=None,
) -> list[EvalReport]:
    """Micro-averaged precision/recall for each (classifier, stages) combination
    over the dataset's test split; one report row per combination."""
    reports = []
    raw_cache: dict[tuple[str, str], list[Detection]] = {}
    floors_cache: dict[str, list] = {}
    images = {name: load_image(ds.image_path(name)) for name in ds.test_names}
    for kind, stages in combos:
        tp = fp = fn = 0
        per_image = []
        for name in ds.test_names:
            img = images[name]
            if (kind, name) not in raw_cache:
                raw_cache[(kind, name)] = run_stages(
                    img, kind, (), models, scan, floor_cfg
                )
            needs_floors = "floor" in stages
            if needs_floors and name not in floors_cache:
                floors_cache[name] = detect_floors(img, floor_cfg)
            dets = run_stages(
                img, kind, stages, models, scan, floor_cfg,
                raw_dets=raw_cache[(kind, name)],
                floors=floors_cache.get(name),
            )
            m = match_detections(dets, ds.annotations[name], iou_threshold)
            tp, fp, fn = tp + m.tp, fp + m.fp, fn + m.fn
            per_image.append({"image": name, "tp": m.tp, "fp": m.fp, "fn": m.fn})
            if overlay_dir is not None:
                _write_overlay(img, dets, ds.annotations[name],
                               floors_cache.get(name) or [],
                               Path(overlay_dir), kind, stages, name)
        precision, recall = precision_recall(tp, fp, fn)
        reports.append(EvalReport(
            label=combo_label(kind, stages),
            tp=tp, fp=fp, fn=fn,
            precision=precision, recall=recall,
            per_image=tuple(per_image),
        ))
    return reports


def _write_overlay(img, dets, gt, floors, out_dir, kind, stages, name):
    tag = "_".join([kind] + list(stages)) or kind
    out_dir.mkdir(parents=True, exist_ok=True)
    canvas = img
    if floors:
        from .vision import draw_lines

        canvas = draw_lines(canvas, floors, (1.0, 1.0, 1.0))
    canvas = draw_boxes(canvas, gt, (1.0, 0.0, 0.0))                 # ground truth: red
    canvas = draw_boxes(canvas, [d.box for d in dets], (0.0, 0.0, 1.0))  # detections: blue
    save_png(canvas, out_dir / f"{Path(name).stem}_{tag}.png")


# ----------------------------------------------------------------- reports


def write_report_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "precision", "recall", "tp", "fp", "fn"])
        for r in reports:
            writer.writerow([r.label, f"{r.precision:.4f}", f"{r.recall:.4f}",
                             r.tp, r.fp, r.fn])


def read_report_csv(path) -> list[EvalReport]:
    reports = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            reports.append(EvalReport(
                label=row["label"],
                tp=int(row["tp"]), fp=int(row["fp"]), fn=int(row["fn"]),
                precision=float(row["precision"]), recall=float(row["recall"]),
            ))
    return reports


def render_report_table(reports: list[EvalReport]) -> str:
    """Aligned text table with one row per stage combination."""
    header = ("Metric", "Precision", "Recall")
    width = max(len(header[0]), *(len(r.label) for r in reports)) if reports else len(header[0])
    lines = [f"{header[0]:<{width}}  {header[1]:>9}  {header[2]:>9}"]
    for r in reports:
        lines.append(f"{r.label:<{width}}  {r.precision:>9.4f}  {r.recall:>9.4f}")
    return "\n".join(lines)


def write_per_image_jsonl(reports: list[EvalReport], path) -> None:
    import json

    with open(path, "w") as fh:
        for r in reports:
            for rec in r.per_image:
                fh.write(json.dumps({"label": r.label, **rec},
                                    sort_keys=True, separators=(",", ":")) + "\n")
