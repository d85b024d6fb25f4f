"""Floor-line detection: gradient edge linking, vanishing-point grouping,
intercept clustering, coverage ranking, and detection filtering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .vision import BoundingBox, Detection, Image, gradient, to_grayscale

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineSegment:
    x1: float
    y1: float
    x2: float
    y2: float
    strength: float  # summed gradient magnitude of the supporting pixels

    @property
    def length(self) -> float:
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)

    @property
    def angle_deg(self) -> float:
        """Direction of the segment in degrees, modulo 180."""
        return math.degrees(math.atan2(self.y2 - self.y1, self.x2 - self.x1)) % 180.0

    @property
    def slope(self) -> float:
        dx = self.x2 - self.x1
        if dx == 0.0:
            return math.inf
        return (self.y2 - self.y1) / dx

    @property
    def intercept(self) -> float:
        """y at x = 0 of the segment's supporting line (near-horizontal segments)."""
        return self.y1 - self.slope * self.x1


@dataclass(frozen=True)
class FloorLine:
    slope: float
    intercept: float   # y at x = 0
    coverage: float    # covered x-interval length in pixels
    support: int       # contributing segment count

    def __post_init__(self):
        if self.coverage <= 0 or self.support < 1:
            raise ValueError("floor line needs positive coverage and support >= 1")

    def y_at(self, x: float) -> float:
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class FloorConfig:
    grad_threshold: float = 0.2
    min_length: float = 20.0
    angle_tolerance_deg: float = 20.0
    link_radius: int = 2          # pixel linking neighborhood; bridges 1-px gaps
    ransac_iters: int = 200
    inlier_angle_deg: float = 3.0
    seed: int = 0
    intercept_tolerance: float = 5.0
    slope_tolerance: float = 0.2
    k: int = 10
    max_dist: float = 10.0


def _angle_diff(a, b):
    d = np.abs(a - b) % 180.0
    return np.minimum(d, 180.0 - d)


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def detect_line_segments(img: Image, cfg: FloorConfig | None = None) -> list[LineSegment]:
    """Threshold gradient magnitude, link nearby edge pixels with aligned
    orientations into runs, and fit each run's segment by least squares."""
    if cfg is None:
        cfg = FloorConfig()
    g = gradient(to_grayscale(img))
    mask = g.magnitude >= cfg.grad_threshold
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return []
    idx_grid = np.full(mask.shape, -1, dtype=np.int64)
    idx_grid[ys, xs] = np.arange(len(ys))
    orient = g.orientation[ys, xs]
    mags = g.magnitude[ys, xs]
    uf = _UnionFind(len(ys))
    h, w = mask.shape
    r = cfg.link_radius
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
               if (dy, dx) > (0, 0) or (dy == 0 and dx > 0)]
    for dy, dx in offsets:
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        src = np.nonzero(ok)[0]
        dst = idx_grid[ny[ok], nx[ok]]
        hit = dst >= 0
        src, dst = src[hit], dst[hit]
        aligned = _angle_diff(orient[src], orient[dst]) <= cfg.angle_tolerance_deg
        for i, j in zip(src[aligned], dst[aligned]):
            uf.union(i, j)
    roots = np.array([uf.find(i) for i in range(len(ys))])
    segments = []
    for root in np.unique(roots):
        member = roots == root
        px, py, pw = xs[member].astype(float), ys[member].astype(float), mags[member]
        if len(px) < 2:
            continue
        seg = _fit_segment(px, py, pw)
        if seg is not None and seg.length >= cfg.min_length:
            segments.append(seg)
    segments.sort(key=lambda s: (s.y1, s.x1, s.y2, s.x2))
    return segments


def _fit_segment(px: np.ndarray, py: np.ndarray, pw: np.ndarray) -> LineSegment | None:
    """Weighted least-squares line through a pixel run, parameterized along the
    dominant axis."""
    strength = float(pw.sum())
    x_ext = px.max() - px.min()
    y_ext = py.max() - py.min()
    if x_ext >= y_ext:
        a, b = _wlsq(px, py, pw)
        x1, x2 = float(px.min()), float(px.max())
        return LineSegment(x1, a * x1 + b, x2, a * x2 + b, strength)
    a, b = _wlsq(py, px, pw)
    y1, y2 = float(py.min()), float(py.max())
    return LineSegment(a * y1 + b, y1, a * y2 + b, y2, strength)


def _wlsq(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    sw = w.sum()
    mu, mv = (w * u).sum() / sw, (w * v).sum() / sw
    var = (w * (u - mu) ** 2).sum()
    if var == 0.0:
        return 0.0, float(mv)
    a = (w * (u - mu) * (v - mv)).sum() / var
    return float(a), float(mv - a * mu)


def _segment_vp(s1: LineSegment, s2: LineSegment) -> np.ndarray:
    """Homogeneous intersection of two segments' supporting lines (point at
    infinity for parallel segments)."""
    l1 = np.cross([s1.x1, s1.y1, 1.0], [s1.x2, s1.y2, 1.0])
    l2 = np.cross([s2.x1, s2.y1, 1.0], [s2.x2, s2.y2, 1.0])
    return np.cross(l1, l2)


def _angle_to_vp(vp: np.ndarray, seg: LineSegment) -> float:
    mx, my = (seg.x1 + seg.x2) / 2.0, (seg.y1 + seg.y2) / 2.0
    scale = max(abs(vp[0]), abs(vp[1]), 1e-12)
    if abs(vp[2]) / scale < 1e-9:
        dx, dy = vp[0], vp[1]
    else:
        dx, dy = vp[0] / vp[2] - mx, vp[1] / vp[2] - my
    if dx == 0.0 and dy == 0.0:
        return 0.0
    ang = math.degrees(math.atan2(dy, dx)) % 180.0
    return float(_angle_diff(np.array(ang), np.array(seg.angle_deg)))


def group_by_vanishing_point(segs: list[LineSegment], cfg: FloorConfig | None = None) -> list[list[LineSegment]]:
    """Greedy RANSAC extraction of segment groups sharing a vanishing point."""
    if cfg is None:
        cfg = FloorConfig()
    if not segs:
        raise ValueError("group_by_vanishing_point requires at least one segment")
    rng = np.random.default_rng(cfg.seed)
    remaining = list(segs)
    groups: list[list[LineSegment]] = []
    while len(remaining) >= 2:
        best: list[LineSegment] = []
        for _ in range(cfg.ransac_iters):
            i, j = rng.choice(len(remaining), size=2, replace=False)
            vp = _segment_vp(remaining[i], remaining[j])
            if not np.any(vp):
                continue  # degenerate (identical lines)
            inliers = [s for s in remaining
                       if _angle_to_vp(vp, s) <= cfg.inlier_angle_deg]
            if len(inliers) > len(best):
                best = inliers
        if len(best) < 2:
            break
        groups.append(best)
        chosen = set(id(s) for s in best)
        remaining = [s for s in remaining if id(s) not in chosen]
    groups.extend([s] for s in remaining)
    return groups


def cluster_segments(
    group: list[LineSegment],
    intercept_tolerance: float = 5.0,
    slope_tolerance: float = 0.2,
) -> list[FloorLine]:
    """Single-linkage clustering of near-horizontal segments on intercept;
    each cluster becomes one strength-weighted FloorLine."""
    if not group:
        return []
    for seg in group:
        if not abs(seg.slope) <= slope_tolerance:
            raise ValueError(
                f"segment ({seg.x1:.1f},{seg.y1:.1f})-({seg.x2:.1f},{seg.y2:.1f}) "
                f"has slope {seg.slope:.3f}, beyond tolerance {slope_tolerance}"
            )
    order = sorted(group, key=lambda s: (s.intercept, s.x1))
    clusters: list[list[LineSegment]] = [[order[0]]]
    for seg in order[1:]:
        if seg.intercept - clusters[-1][-1].intercept <= intercept_tolerance:
            clusters[-1].append(seg)
        else:
            clusters.append([seg])
    lines = []
    for members in clusters:
        us, vs, ws = [], [], []
        for seg in members:
            us.extend([seg.x1, seg.x2])
            vs.extend([seg.y1, seg.y2])
            ws.extend([seg.strength / 2.0, seg.strength / 2.0])
        a, b = _wlsq(np.array(us), np.array(vs), np.array(ws))
        coverage = _union_length([(min(s.x1, s.x2), max(s.x1, s.x2)) for s in members])
        lines.append(FloorLine(slope=a, intercept=b, coverage=coverage, support=len(members)))
    return lines


def _union_length(intervals: list[tuple[float, float]]) -> float:
    intervals = sorted(intervals)
    total = 0.0
    cur_lo, cur_hi = intervals[0]
    for lo, hi in intervals[1:]:
        if lo > cur_hi:
            total += cur_hi - cur_lo
            cur_lo, cur_hi = lo, hi
        else:
            cur_hi = max(cur_hi, hi)
    return total + (cur_hi - cur_lo)


def select_floors(lines: list[FloorLine], k: int) -> list[FloorLine]:
    """Top-k lines by x-coverage; ties by support, then by smaller intercept."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sorted(lines, key=lambda l: (-l.coverage, -l.support, l.intercept))[:k]


def filter_by_floor(
    dets: list[Detection],
    floors: list[FloorLine],
    max_dist: float = 10.0,
) -> list[Detection]:
    """Keep detections whose bottom-edge midpoint lies within `max_dist` pixels
    (vertically) of the nearest floor line; with no floors, keep everything."""
    if max_dist < 0:
        raise ValueError("max_dist must be >= 0")
    if not floors:
        log.warning("no floor lines detected; keeping all %d detections", len(dets))
        return list(dets)
    kept = []
    for det in dets:
        bx = det.box.center_x
        by = det.box.y2
        dist = min(abs(by - fl.y_at(bx)) for fl in floors)
        if dist <= max_dist:
            kept.append(det)
    return kept


def detect_floors(img: Image, cfg: FloorConfig | None = None) -> list[FloorLine]:
    """Full floor pipeline: segments -> vanishing-point groups -> pick the group
    with the most near-horizontal members -> cluster -> top-k by coverage."""
    if cfg is None:
        cfg = FloorConfig()
    segs = detect_line_segments(img, cfg)
    if not segs:
        return []
    groups = group_by_vanishing_point(segs, cfg)
    best_members: list[LineSegment] = []
    for grp in groups:
        horiz = [s for s in grp if abs(s.slope) <= cfg.slope_tolerance]
        if len(horiz) > len(best_members):
            best_members = horiz
    if not best_members:
        return []
    lines = cluster_segments(best_members, cfg.intercept_tolerance, cfg.slope_tolerance)
    return select_floors(lines, cfg.k)


def group_boxes_by_floor(
    boxes: list[BoundingBox],
    floors: list[FloorLine],
    max_dist: float = 10.0,
) -> dict[int, list[BoundingBox]]:
    """Assign each box to its nearest floor line (bottom-edge midpoint rule);
    boxes farther than `max_dist` from every floor are dropped."""
    assignment: dict[int, list[BoundingBox]] = {}
    for box in boxes:
        bx, by = box.center_x, box.y2
        best_i, best_d = -1, math.inf
        for i, fl in enumerate(floors):
            d = abs(by - fl.y_at(bx))
            if d < best_d:
                best_i, best_d = i, d
        if best_i >= 0 and best_d <= max_dist:
            assignment.setdefault(best_i, []).append(box)
    return assignment
