"""Detection matching, precision/recall, and evaluation report plumbing."""

import numpy as np
import pytest

from guardscan.evaluation import (
    STAGE_COMBOS,
    EvalReport,
    combo_label,
    match_detections,
    precision_recall,
    read_report_csv,
    render_report_table,
    write_per_image_jsonl,
    write_report_csv,
)
from guardscan.vision import BoundingBox, Detection


def _det(x, y=0, score=1.0, w=24, h=72):
    return Detection(BoundingBox(x, y, w, h), score)


# ---------------------------------------------------------------- matching


def test_match_examples():
    gt = [BoundingBox(0, 0, 24, 72), BoundingBox(100, 0, 24, 72)]
    hit = _det(2, score=0.9)          # IOU with first gt well above 0.5
    miss = _det(50, score=0.8)
    m = match_detections([hit, miss], gt)
    assert (m.tp, m.fp, m.fn) == (1, 1, 1)
    assert m.pairs == ((hit, gt[0]),)


def test_match_one_to_one_greedy_by_score():
    gt = [BoundingBox(0, 0, 24, 72)]
    low = _det(2, score=0.2)
    high = _det(4, score=0.9)         # lower IOU but higher score claims the gt
    m = match_detections([low, high], gt)
    assert m.tp == 1 and m.fp == 1
    assert m.pairs[0][0] is high


def test_match_count_identities_random():
    rng = np.random.default_rng(35)
    for _ in range(50):
        gt = [BoundingBox(int(x), 0, 24, 72)
              for x in rng.choice(np.arange(0, 400, 30), size=5, replace=False)]
        dets = [_det(int(rng.integers(0, 400)), score=float(rng.random()))
                for _ in range(int(rng.integers(0, 10)))]
        m = match_detections(dets, gt)
        assert m.tp + m.fp == len(dets)
        assert m.tp + m.fn == len(gt)
        assert m.tp == len(m.pairs)


def test_match_gt_order_invariance():
    rng = np.random.default_rng(36)
    gt = [BoundingBox(int(x), 0, 24, 72) for x in (0, 40, 80, 120)]
    dets = [_det(int(x + rng.integers(-4, 5)), score=float(rng.random()))
            for x in (0, 40, 80, 200)]
    a = match_detections(dets, gt)
    b = match_detections(dets, list(reversed(gt)))
    assert (a.tp, a.fp, a.fn) == (b.tp, b.fp, b.fn)
    assert a.pairs == b.pairs


def test_match_threshold_validation():
    with pytest.raises(ValueError):
        match_detections([], [], iou_threshold=0.0)


# --------------------------------------------------------- precision/recall


def test_precision_recall_conventions():
    assert precision_recall(0, 0, 0) == (1.0, 1.0)
    assert precision_recall(0, 0, 5) == (0.0, 0.0)
    assert precision_recall(3, 1, 2) == (0.75, 0.6)
    with pytest.raises(ValueError):
        precision_recall(-1, 0, 0)


# -------------------------------------------------------------- combo rows


def test_six_stage_combo_labels():
    labels = [combo_label(kind, stages) for kind, stages in STAGE_COMBOS]
    assert labels == [
        "Cascade Classifier",
        "Linear SVM",
        "Cascade Classifier and Floor Detection",
        "Linear SVM and Floor Detection",
        "Cascade Classifier and Floor Detection and Space Estimation",
        "Linear SVM and Floor Detection and Space Estimation",
    ]


# ----------------------------------------------------------------- reports


def _sample_reports():
    return [
        EvalReport(label="Cascade Classifier", tp=30, fp=10, fn=5,
                   precision=0.75, recall=30 / 35,
                   per_image=({"image": "a.png", "tp": 30, "fp": 10, "fn": 5},)),
        EvalReport(label="Linear SVM", tp=28, fp=2, fn=7,
                   precision=28 / 30, recall=0.8),
    ]


def test_report_csv_roundtrip(tmp_path):
    reports = _sample_reports()
    p = tmp_path / "report.csv"
    write_report_csv(reports, p)
    back = read_report_csv(p)
    assert [r.label for r in back] == [r.label for r in reports]
    for got, want in zip(back, reports):
        assert (got.tp, got.fp, got.fn) == (want.tp, want.fp, want.fn)
        assert got.precision == pytest.approx(want.precision, abs=1e-4)
        assert got.recall == pytest.approx(want.recall, abs=1e-4)


def test_render_report_table():
    text = render_report_table(_sample_reports())
    lines = text.splitlines()
    assert lines[0].split() == ["Metric", "Precision", "Recall"]
    assert len(lines) == 3
    assert "Cascade Classifier" in lines[1]
    assert "0.7500" in lines[1]


def test_per_image_jsonl(tmp_path):
    import json

    p = tmp_path / "per_image.jsonl"
    write_per_image_jsonl(_sample_reports(), p)
    recs = [json.loads(l) for l in p.read_text().splitlines()]
    assert recs == [{"fn": 5, "fp": 10, "image": "a.png",
                     "label": "Cascade Classifier", "tp": 30}]


def test_micro_average_equality(small_ds, trained, pipeline_cfg):
    from guardscan.evaluation import PipelineModels, evaluate_pipeline

    reports = evaluate_pipeline(
        small_ds, [("svm", ()), ("svm", ("floor",))], trained["models"],
        pipeline_cfg.scan, pipeline_cfg.floor,
    )
    for r in reports:
        assert r.tp == sum(rec["tp"] for rec in r.per_image)
        assert r.fp == sum(rec["fp"] for rec in r.per_image)
        assert r.fn == sum(rec["fn"] for rec in r.per_image)
        p, rr = precision_recall(r.tp, r.fp, r.fn)
        assert (r.precision, r.recall) == (p, rr)
    # the floor filter can only reduce detections
    assert reports[1].tp + reports[1].fp <= reports[0].tp + reports[0].fp


def test_spacing_requires_floor(small_ds, trained, pipeline_cfg):
    from guardscan.evaluation import run_stages
    from guardscan.vision import Image

    img = Image(np.full((120, 120, 1), 0.8))
    with pytest.raises(ValueError, match="floor"):
        run_stages(img, "svm", ("spacing",), trained["models"],
                   pipeline_cfg.scan, pipeline_cfg.floor)
