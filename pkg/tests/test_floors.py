"""Floor-line detection and the floor-distance detection filter."""

import numpy as np
import pytest

from guardscan.floors import (
    FloorConfig,
    FloorLine,
    LineSegment,
    cluster_segments,
    detect_floors,
    detect_line_segments,
    filter_by_floor,
    group_boxes_by_floor,
    group_by_vanishing_point,
    select_floors,
)
from guardscan.vision import BoundingBox, Detection, Image


def _line_image(rows, w=160, h=120, thickness=2):
    px = np.full((h, w, 1), 0.9)
    for y in rows:
        px[y : y + thickness, 10 : w - 10] = 0.1
    return Image(px)


# ------------------------------------------------------------- segments


def test_blank_image_no_segments():
    assert detect_line_segments(Image(np.full((40, 40, 1), 0.5))) == []


def test_single_horizontal_line_segment():
    img = _line_image([60], w=120)
    segs = detect_line_segments(img)
    assert len(segs) >= 1
    seg = max(segs, key=lambda s: s.length)
    assert seg.length >= 90
    assert abs(seg.slope) < 0.02
    assert min(seg.x1, seg.x2) <= 12 and max(seg.x1, seg.x2) >= 108
    assert abs((seg.y1 + seg.y2) / 2 - 60.5) <= 2.0


def test_two_lines_forty_pixels_apart():
    img = _line_image([30, 70])
    segs = detect_line_segments(img)
    ys = sorted((s.y1 + s.y2) / 2 for s in segs if s.length >= 90)
    assert len(ys) == 2
    assert abs(ys[1] - ys[0] - 40.0) <= 2.0


def test_min_length_filters_short_runs():
    px = np.full((40, 40, 1), 0.9)
    px[20, 10:18] = 0.1          # 8-px run, below the 20-px minimum
    assert detect_line_segments(Image(px)) == []


def test_segment_properties():
    s = LineSegment(0.0, 10.0, 20.0, 10.0, 5.0)
    assert s.length == 20.0
    assert s.angle_deg == 0.0
    assert s.slope == 0.0
    assert s.intercept == 10.0
    v = LineSegment(5.0, 0.0, 5.0, 9.0, 1.0)
    assert v.angle_deg == 90.0
    assert v.slope == np.inf


# ---------------------------------------------------- vanishing points


def test_vp_grouping_parallel_family():
    segs = [LineSegment(0, y, 100, y + 1.0, 1.0) for y in (10.0, 40.0, 70.0)]
    outlier = LineSegment(0, 0, 10, 80, 1.0)
    groups = group_by_vanishing_point(segs + [outlier], FloorConfig(seed=0))
    sizes = sorted(len(g) for g in groups)
    assert sizes == [1, 3]
    big = max(groups, key=len)
    assert set(id(s) for s in big) == set(id(s) for s in segs)


def test_vp_grouping_empty_raises():
    with pytest.raises(ValueError):
        group_by_vanishing_point([])


def test_vp_grouping_singleton_appended():
    one = [LineSegment(0, 0, 10, 0, 1.0)]
    assert group_by_vanishing_point(one) == [one]


# ------------------------------------------------------------ clustering


def test_cluster_merges_within_tolerance():
    a = LineSegment(0, 50.0, 40, 50.0, 2.0)
    b = LineSegment(60, 52.0, 100, 52.0, 2.0)
    c = LineSegment(0, 90.0, 100, 90.0, 1.0)
    lines = cluster_segments([a, b, c])
    assert len(lines) == 2
    lines.sort(key=lambda l: l.intercept)
    assert 50.0 <= lines[0].y_at(50.0) <= 52.0
    assert lines[0].support == 2
    assert lines[0].coverage == pytest.approx(80.0)
    assert lines[1].support == 1


def test_cluster_single_linkage_chain():
    # Pairwise gaps of 4 chain into one cluster even though ends differ by 8.
    segs = [LineSegment(0, y, 30, y, 1.0) for y in (10.0, 14.0, 18.0)]
    assert len(cluster_segments(segs, intercept_tolerance=5.0)) == 1
    assert len(cluster_segments(segs, intercept_tolerance=3.0)) == 3


def test_cluster_rejects_steep_segment():
    steep = LineSegment(0, 0, 10, 8, 1.0)
    with pytest.raises(ValueError, match="slope"):
        cluster_segments([steep])


def test_cluster_empty():
    assert cluster_segments([]) == []


# ------------------------------------------------------------- selection


def test_select_floors_ordering():
    l1 = FloorLine(0.0, 100.0, coverage=200.0, support=3)
    l2 = FloorLine(0.0, 50.0, coverage=300.0, support=1)
    l3 = FloorLine(0.0, 20.0, coverage=200.0, support=5)
    top = select_floors([l1, l2, l3], 2)
    assert top == [l2, l3]
    assert select_floors([l1], 5) == [l1]
    with pytest.raises(ValueError):
        select_floors([l1], 0)


def test_detect_floors_three_lines():
    img = _line_image([20, 60, 100])
    floors = detect_floors(img, FloorConfig(k=3))
    assert len(floors) == 3
    got = sorted(fl.y_at(80.0) for fl in floors)
    for y, target in zip(got, (20.5, 60.5, 100.5)):
        assert abs(y - target) <= 2.0


# --------------------------------------------------------------- filter


def _det(x, y, score=1.0, w=24, h=72):
    return Detection(BoundingBox(x, y, w, h), score)


def test_filter_by_floor_distance_rule():
    floor = FloorLine(0.0, 100.0, coverage=100.0, support=1)
    on = _det(10, 28)            # bottom edge y2 = 100, distance 0
    near = _det(50, 38)          # y2 = 110, distance 10 -> kept (inclusive)
    far = _det(90, 39)           # y2 = 111, distance 11 -> dropped
    kept = filter_by_floor([on, near, far], [floor], max_dist=10.0)
    assert kept == [on, near]


def test_filter_fail_open_without_floors(caplog):
    dets = [_det(0, 0), _det(30, 40)]
    with caplog.at_level("WARNING"):
        kept = filter_by_floor(dets, [])
    assert kept == dets
    assert any("floor" in r.message for r in caplog.records)


def test_filter_subset_and_idempotent():
    rng = np.random.default_rng(23)
    floors = [FloorLine(0.01, 80.0, 100.0, 1), FloorLine(-0.01, 160.0, 100.0, 1)]
    dets = [_det(int(rng.integers(0, 200)), int(rng.integers(0, 150)),
                 float(rng.random())) for _ in range(50)]
    kept = filter_by_floor(dets, floors)
    assert all(d in dets for d in kept)
    assert filter_by_floor(kept, floors) == kept
    with pytest.raises(ValueError):
        filter_by_floor(dets, floors, max_dist=-1.0)


def test_group_boxes_by_floor_nearest():
    floors = [FloorLine(0.0, 100.0, 100.0, 1), FloorLine(0.0, 200.0, 100.0, 1)]
    near_first = BoundingBox(0, 30, 24, 72)     # y2 = 102
    near_second = BoundingBox(40, 126, 24, 72)  # y2 = 198
    nowhere = BoundingBox(80, 300, 24, 72)
    got = group_boxes_by_floor([near_first, near_second, nowhere], floors)
    assert got == {0: [near_first], 1: [near_second]}
    assert group_boxes_by_floor([near_first], []) == {}
