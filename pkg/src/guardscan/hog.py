"""Histogram-of-oriented-gradients descriptor for fixed-size windows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vision import Image, centered_diff


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 8
    block_size: int = 2          # in cells
    block_stride: int = 1        # in cells
    bins: int = 9                # unsigned orientations over [0, 180)
    normalization_epsilon: float = 1e-6

    def __post_init__(self):
        if self.cell_size < 1 or self.block_size < 1 or self.block_stride < 1:
            raise ValueError("cell_size, block_size, block_stride must be positive")
        if self.bins < 1:
            raise ValueError("bins must be positive")
        if self.normalization_epsilon < 0:
            raise ValueError("normalization_epsilon must be >= 0")


def _check_window(width: int, height: int, p: HogParams) -> tuple[int, int]:
    if width % p.cell_size or height % p.cell_size:
        raise ValueError(
            f"window {width}x{height} not divisible by cell size {p.cell_size}"
        )
    cx, cy = width // p.cell_size, height // p.cell_size
    if cx < p.block_size or cy < p.block_size:
        raise ValueError(
            f"window {width}x{height} has {cx}x{cy} cells, fewer than block size {p.block_size}"
        )
    return cx, cy


def hog_length(width: int, height: int, p: HogParams) -> int:
    """Closed-form descriptor length for a window of the given size."""
    cx, cy = _check_window(width, height, p)
    bx = (cx - p.block_size) // p.block_stride + 1
    by = (cy - p.block_size) // p.block_stride + 1
    return bx * by * p.block_size * p.block_size * p.bins

def hog_from_window_stack(windows: np.ndarray, p: HogParams) -> np.ndarray:
    """Compute descriptors for a stack of grayscale windows.

    `windows` has shape (n, h, w) with intensities in [0, 1]; the result has
    shape (n, hog_length(w, h, p)).  Gradients are computed per window, so a
    stacked call is bit-identical to n single-window calls.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3:
        raise ValueError(f"expected (n, h, w) stack, got shape {windows.shape}")
    n, h, w = windows.shape
    cx, cy = _check_window(w, h, p)

    dx = centered_diff(windows, axis=2)
    dy = centered_diff(windows, axis=1)
    mag = np.hypot(dx, dy)
    ang = np.degrees(np.arctan2(dy, dx)) % 180.0

    # Magnitude-weighted bilinear vote between the two nearest bin centers
    # (centers at k * 180/bins, wrapping at 180).
    bw = 180.0 / p.bins
    t = ang / bw
    i0 = np.floor(t).astype(np.int64)
    frac = t - i0
    i0 %= p.bins
    i1 = (i0 + 1) % p.bins
    w0 = mag * (1.0 - frac)
    w1 = mag * frac

    hist = np.zeros((n, cy, cx, p.bins), dtype=np.float64)
    for b in range(p.bins):
        vb = np.where(i0 == b, w0, 0.0) + np.where(i1 == b, w1, 0.0)
        hist[:, :, :, b] = vb.reshape(n, cy, p.cell_size, cx, p.cell_size).sum(axis=(2, 4))

    bx = (cx - p.block_size) // p.block_stride + 1
    by = (cy - p.block_size) // p.block_stride + 1
    bs, st = p.block_size, p.block_stride
    blocks = np.empty((n, by, bx, bs, bs, p.bins), dtype=np.float64)
    for j in range(by):
        for i in range(bx):
            blocks[:, j, i] = hist[:, j * st : j * st + bs, i * st : i * st + bs, :]
    flat = blocks.reshape(n, by * bx, bs * bs * p.bins)
    norms = np.sqrt((flat * flat).sum(axis=2, keepdims=True) + p.normalization_epsilon**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        normed = np.where(norms > 0.0, flat / norms, 0.0)
    return normed.reshape(n, -1)


def compute_hog(window: Image, p: HogParams | None = None) -> np.ndarray:
    """Descriptor of a single grayscale window as a flat float vector."""
    if p is None:
        p = HogParams()
    if window.channels != 1:
        raise ValueError("compute_hog requires a 1-channel window")
    return hog_from_window_stack(window.pixels[None, :, :, 0], p)[0]
