"""Raster primitives and box geometry shared by every pipeline stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageError(ValueError):
    """Unreadable or unsupported image file."""


@dataclass(frozen=True)
class Image:
    """Raster of intensities in [0, 1], stored as a (h, w, c) float array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must have positive dimensions")
        if not np.isfinite(px).all():
            raise ValueError("image intensities must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> np.ndarray:
        """Row-major flat view of the intensities."""
        return self.pixels.reshape(-1)


@dataclass(frozen=True)
class GradientField:
    """Signed derivatives of a single-channel image plus derived magnitude/orientation."""

    dx: np.ndarray
    dy: np.ndarray
    magnitude: np.ndarray
    orientation: np.ndarray  # degrees in [0, 180)


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Axis-aligned pixel box with top-left corner (x, y)."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2.0

    @property
    def center_y(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    """A scored bounding box."""

    box: BoundingBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("detection score must be finite")


def load_image(path) -> Image:
    """Load a PNG or binary PGM/PPM file, mapping 8-bit values v to v/255."""
    p = Path(path)
    try:
        with _PILImage.open(p) as im:
            im.load()
            fmt = im.format
            if fmt not in ("PNG", "PPM"):
                raise ImageError(f"unsupported image format {fmt!r}: {p}")
            if im.mode in ("P", "RGBA"):
                im = im.convert("RGB")
            elif im.mode in ("1", "LA", "I", "I;16"):
                im = im.convert("L")
            if im.mode not in ("L", "RGB"):
                raise ImageError(f"unsupported pixel mode {im.mode!r}: {p}")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except ImageError:
        raise
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageError(f"unreadable image file: {p}: {exc}") from exc
    return Image(arr)


def save_png(img: Image, path) -> None:
    """Write an image as 8-bit PNG."""
    arr = np.rint(img.pixels * 255.0).astype(np.uint8)
    if arr.shape[2] == 1:
        pil = _PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(arr, mode="RGB")
    pil.save(Path(path), format="PNG")


def to_grayscale(img: Image) -> Image:
    """Luminance image (0.299 R + 0.587 G + 0.114 B); 1-channel input is returned unchanged."""
    if img.channels == 1:
        return img
    w = np.asarray(LUMA_WEIGHTS)
    lum = img.pixels @ (w / w.sum())
    return Image(np.clip(lum, 0.0, 1.0))


def centered_diff(a: np.ndarray, axis: int) -> np.ndarray:
    """[-1, 0, 1] differences along `axis`; one-sided at the two border slices."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[axis]
    d = np.empty_like(a)

    def _sl(s):
        idx = [slice(None)] * a.ndim
        idx[axis] = s
        return tuple(idx)

    d[_sl(slice(1, n - 1))] = a[_sl(slice(2, n))] - a[_sl(slice(0, n - 2))]
    d[_sl(0)] = a[_sl(1)] - a[_sl(0)]
    d[_sl(n - 1)] = a[_sl(n - 1)] - a[_sl(n - 2)]
    return d


def gradient(img: Image) -> GradientField:
    """Per-pixel derivatives of a single-channel image (centered interior, one-sided borders)."""
    if img.channels != 1:
        raise ValueError("gradient requires a 1-channel image")
    if img.width < 3 or img.height < 3:
        raise ValueError(f"image too small for gradients: {img.width}x{img.height}")
    plane = img.pixels[:, :, 0]
    dx = centered_diff(plane, axis=1)
    dy = centered_diff(plane, axis=0)
    mag = np.hypot(dx, dy)
    orient = np.degrees(np.arctan2(dy, dx)) % 180.0
    return GradientField(dx=dx, dy=dy, magnitude=mag, orientation=orient)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 for disjoint boxes."""
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def nms(dets: list[Detection], iou_threshold: float = 0.3) -> list[Detection]:
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-score remaining detection (ties broken by smaller
    x then smaller y) and discards everything overlapping it with IOU >= threshold.
    Output is sorted by descending score.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box.x, dets[i].box.y))
    x1 = np.array([dets[i].box.x for i in order], dtype=np.float64)
    y1 = np.array([dets[i].box.y for i in order], dtype=np.float64)
    x2 = np.array([dets[i].box.x2 for i in order], dtype=np.float64)
    y2 = np.array([dets[i].box.y2 for i in order], dtype=np.float64)
    areas = (x2 - x1) * (y2 - y1)
    alive = np.ones(len(order), dtype=bool)
    kept: list[Detection] = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(dets[order[i]])
        rest = np.nonzero(alive[i + 1 :])[0] + i + 1
        if rest.size == 0:
            continue
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
        ov = inter / (areas[i] + areas[rest] - inter)
        alive[rest[ov >= iou_threshold]] = False
    return kept


def draw_boxes(img: Image, boxes, color, thickness: int = 2) -> Image:
    """Return a copy of the image with 2-px box outlines in the given RGB color."""
    px = img.pixels
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    out = px.copy()
    h, w = out.shape[:2]
    c = np.asarray(color, dtype=np.float64)
    for box in boxes:
        x1, y1 = max(box.x, 0), max(box.y, 0)
        x2, y2 = min(box.x2, w), min(box.y2, h)
        t = thickness
        out[y1 : min(y1 + t, h), x1:x2] = c
        out[max(y2 - t, 0) : y2, x1:x2] = c
        out[y1:y2, x1 : min(x1 + t, w)] = c
        out[y1:y2, max(x2 - t, 0) : x2] = c
    return Image(np.clip(out, 0.0, 1.0))


def draw_lines(img: Image, lines, color, thickness: int = 1) -> Image:
    """Return a copy of the image with y = slope*x + intercept lines drawn across its width."""
    px = img.pixels
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    out = px.copy()
    h, w = out.shape[:2]
    c = np.asarray(color, dtype=np.float64)
    xs = np.arange(w)
    for line in lines:
        ys = np.rint(line.slope * xs + line.intercept).astype(int)
        for t in range(thickness):
            yy = ys + t
            ok = (yy >= 0) & (yy < h)
            out[yy[ok], xs[ok]] = c
    return Image(np.clip(out, 0.0, 1.0))
