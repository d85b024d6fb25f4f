"""Keyframe index selection, dense sliding-window scanning, and threshold+NMS detection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .classifiers import (
    CascadeModel,
    LinearSvmModel,
    cascade_score_stack,
    svm_score_stack,
)
from .hog import HogParams, hog_from_window_stack, hog_length
from .vision import BoundingBox, Detection, Image, nms, to_grayscale

log = logging.getLogger(__name__)

_CHUNK = 1024  # windows scored per batch; bounds peak memory during scans


@dataclass(frozen=True)
class ScanParams:
    window_w: int = 24
    window_h: int = 72
    stride_x: int = 4
    stride_y: int = 4
    score_threshold: float = 0.0
    nms_iou: float = 0.1

    def __post_init__(self):
        if min(self.window_w, self.window_h, self.stride_x, self.stride_y) <= 0:
            raise ValueError("window size and strides must be positive")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ValueError("nms_iou must be in (0, 1]")


def keyframe_indices(total_frames: int, fps: float, skip_seconds: float, stride: int) -> list[int]:
    """Frame indices sampled every `stride` frames, skipping the clip's first and
    last `skip_seconds` seconds."""
    if total_frames <= 0 or fps <= 0 or stride <= 0 or skip_seconds < 0:
        raise ValueError("total_frames, fps, stride must be positive; skip_seconds >= 0")
    skip = math.ceil(skip_seconds * fps)
    start = skip
    end = total_frames - 1 - skip
    if start > end:
        raise ValueError(
            f"empty usable range: skipping {skip_seconds}s at {fps} fps leaves no frames "
            f"of the {total_frames}-frame clip"
        )
    return list(range(start, end + 1, stride))


def sliding_windows(img: Image, p: ScanParams) -> list[BoundingBox]:
    """Row-major enumeration of all fully-inside windows, starting at (0, 0)."""
    if p.window_w > img.width or p.window_h > img.height:
        log.warning(
            "window %dx%d larger than image %dx%d; no windows",
            p.window_w, p.window_h, img.width, img.height,
        )
        return []
    boxes = []
    for y in range(0, img.height - p.window_h + 1, p.stride_y):
        for x in range(0, img.width - p.window_w + 1, p.stride_x):
            boxes.append(BoundingBox(x, y, p.window_w, p.window_h))
    return boxes


def _window_stack(gray: np.ndarray, boxes: list[BoundingBox], p: ScanParams) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(gray, (p.window_h, p.window_w))
    return np.stack([view[b.y, b.x] for b in boxes])


def score_windows(img: Image, model, p: ScanParams, hog_params: HogParams | None = None) -> list[Detection]:
    """Score every sliding window; returns all windows the model accepts, pre-NMS.

    For a linear SVM every window is returned with its margin; for a cascade only
    windows accepted by every stage are returned, scored by the last-stage margin.
    """
    gray = to_grayscale(img).pixels[:, :, 0]
    boxes = sliding_windows(img, p)
    if not boxes:
        return []
    if isinstance(model, LinearSvmModel):
        if hog_params is None:
            hog_params = HogParams()
        if hog_length(p.window_w, p.window_h, hog_params) != model.feature_dim:
            raise ValueError(
                f"model expects {model.feature_dim} features but window "
                f"{p.window_w}x{p.window_h} yields {hog_length(p.window_w, p.window_h, hog_params)}"
            )
        dets = []
        for lo in range(0, len(boxes), _CHUNK):
            chunk = boxes[lo : lo + _CHUNK]
            wins = _window_stack(gray, chunk, p)
            scores = svm_score_stack(model, hog_from_window_stack(wins, hog_params))
            dets.extend(Detection(b, float(s)) for b, s in zip(chunk, scores))
        return dets
    if isinstance(model, CascadeModel):
        if (model.window_w, model.window_h) != (p.window_w, p.window_h):
            raise ValueError(
                f"cascade was trained for {model.window_w}x{model.window_h} windows, "
                f"scan uses {p.window_w}x{p.window_h}"
            )
        dets = []
        for lo in range(0, len(boxes), _CHUNK):
            chunk = boxes[lo : lo + _CHUNK]
            wins = _window_stack(gray, chunk, p)
            accepted, scores = cascade_score_stack(model, wins)
            dets.extend(
                Detection(b, float(s))
                for b, s, ok in zip(chunk, scores, accepted)
                if ok
            )
        return dets
    raise TypeError(f"unsupported model type {type(model).__name__}")


def detect(img: Image, model, p: ScanParams, hog_params: HogParams | None = None) -> list[Detection]:
    """Dense scan -> score threshold -> NMS; deterministic for fixed inputs."""
    scored = score_windows(img, model, p, hog_params)
    kept = [d for d in scored if d.score >= p.score_threshold]
    return nms(kept, p.nms_iou)


def extract_windows(img: Image, boxes: list[BoundingBox], p: ScanParams) -> np.ndarray:
    """Grayscale window crops centered on the given boxes, clamped inside the image."""
    gray = to_grayscale(img).pixels[:, :, 0]
    h, w = gray.shape
    wins = []
    for b in boxes:
        x = int(round(b.center_x - p.window_w / 2.0))
        y = int(round(b.center_y - p.window_h / 2.0))
        x = min(max(x, 0), w - p.window_w)
        y = min(max(y, 0), h - p.window_h)
        wins.append(gray[y : y + p.window_h, x : x + p.window_w])
    return np.stack(wins) if wins else np.empty((0, p.window_h, p.window_w))


def perturbed_negative_windows(
    img: Image,
    annotations: list[BoundingBox],
    p: ScanParams,
    offsets: tuple[tuple[int, int], ...] = (
        (0, -16), (0, -12), (0, 12), (0, 16), (-12, 0), (-8, 0), (8, 0), (12, 0),
    ),
) -> np.ndarray:
    """Hard negatives: windows shifted off each annotation by the given (dx, dy)
    offsets.  Training on these sharpens localization, so suppression keeps the
    centered window instead of a nearby shifted one."""
    shifted = [
        BoundingBox(b.x + dx, b.y + dy, b.w, b.h)
        for b in annotations
        for dx, dy in offsets
    ]
    return extract_windows(img, shifted, p)


def sample_negative_windows(
    img: Image,
    annotations: list[BoundingBox],
    p: ScanParams,
    count: int,
    seed: int,
    max_overlap: float = 0.2,
) -> np.ndarray:
    """Random grayscale windows overlapping every annotation below `max_overlap` IOU."""
    from .vision import iou

    gray = to_grayscale(img).pixels[:, :, 0]
    h, w = gray.shape
    if p.window_w > w or p.window_h > h:
        return np.empty((0, p.window_h, p.window_w))
    rng = np.random.default_rng(seed)
    wins = []
    attempts = 0
    while len(wins) < count and attempts < count * 50:
        attempts += 1
        x = int(rng.integers(0, w - p.window_w + 1))
        y = int(rng.integers(0, h - p.window_h + 1))
        cand = BoundingBox(x, y, p.window_w, p.window_h)
        if all(iou(cand, a) < max_overlap for a in annotations):
            wins.append(gray[y : y + p.window_h, x : x + p.window_w])
    return np.stack(wins) if wins else np.empty((0, p.window_h, p.window_w))
