"""Raster primitives and box geometry."""

import numpy as np
import pytest
from PIL import Image as PILImage

from guardscan.vision import (
    BoundingBox,
    Detection,
    Image,
    ImageError,
    centered_diff,
    draw_boxes,
    gradient,
    iou,
    load_image,
    nms,
    save_png,
    to_grayscale,
)


def _rand_box(rng, span=50):
    return BoundingBox(int(rng.integers(0, span)), int(rng.integers(0, span)),
                       int(rng.integers(1, span)), int(rng.integers(1, span)))


# ----------------------------------------------------------------- loading


def test_load_white_png(tmp_path):
    p = tmp_path / "white.png"
    PILImage.new("RGB", (1, 1), (255, 255, 255)).save(p)
    img = load_image(p)
    assert (img.width, img.height, img.channels) == (1, 1, 3)
    assert np.all(img.pixels == 1.0)


def test_load_truncated_file(tmp_path):
    p = tmp_path / "bad.png"
    whole = tmp_path / "ok.png"
    PILImage.new("RGB", (16, 16)).save(whole)
    p.write_bytes(whole.read_bytes()[:40])
    with pytest.raises(ImageError):
        load_image(p)


def test_load_pgm_values(tmp_path):
    p = tmp_path / "gray.pgm"
    p.write_bytes(b"P5\n4 2\n255\n" + bytes(range(8)))
    img = load_image(p)
    assert img.channels == 1
    assert np.allclose(img.data, np.arange(8) / 255.0)


def test_load_unsupported_format(tmp_path):
    p = tmp_path / "img.bmp"
    PILImage.new("RGB", (4, 4)).save(p, format="BMP")
    with pytest.raises(ImageError):
        load_image(p)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = Image(np.round(rng.random((12, 9, 3)) * 255) / 255.0)
    save_png(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert np.array_equal(back.pixels, img.pixels)


# ------------------------------------------------------------- image type


def test_image_validation():
    with pytest.raises(ValueError):
        Image(np.full((4, 4, 2), 0.5))
    with pytest.raises(ValueError):
        Image(np.full((4, 4, 1), 1.5))
    with pytest.raises(ValueError):
        Image(np.full((4, 4, 1), np.nan))


def test_to_grayscale():
    white = Image(np.ones((2, 2, 3)))
    assert np.all(to_grayscale(white).pixels == 1.0)
    red = np.zeros((2, 2, 3))
    red[:, :, 0] = 1.0
    assert np.allclose(to_grayscale(Image(red)).pixels, 0.299)
    gray = Image(np.full((3, 3, 1), 0.25))
    assert np.array_equal(to_grayscale(gray).pixels, gray.pixels)


# ------------------------------------------------------------- gradients


def test_gradient_constant_zero():
    g = gradient(Image(np.full((5, 7, 1), 0.4)))
    assert np.all(g.dx == 0) and np.all(g.dy == 0) and np.all(g.magnitude == 0)


def test_gradient_ramp():
    w = 9
    ramp = np.tile(np.arange(w) / (w - 1), (5, 1))
    g = gradient(Image(ramp[:, :, None]))
    assert np.allclose(g.dx[:, 1:-1], 2.0 / (w - 1))
    assert np.all(g.dy == 0)


def test_gradient_transpose_symmetry():
    rng = np.random.default_rng(1)
    a = rng.random((8, 11))
    g = gradient(Image(a[:, :, None]))
    gt = gradient(Image(a.T[:, :, None]))
    assert np.array_equal(gt.dx, g.dy.T)
    assert np.array_equal(gt.dy, g.dx.T)


def test_gradient_requires_min_size():
    with pytest.raises(ValueError):
        gradient(Image(np.zeros((2, 5, 1))))


def test_gradient_magnitude_identity():
    rng = np.random.default_rng(2)
    g = gradient(Image(rng.random((10, 10, 1))))
    assert np.allclose(g.magnitude**2, g.dx**2 + g.dy**2, atol=1e-9)
    assert np.all((g.orientation >= 0) & (g.orientation < 180))


# ------------------------------------------------------------------- iou


def test_iou_examples():
    a = BoundingBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(20, 20, 5, 5)) == 0.0
    assert iou(a, BoundingBox(5, 0, 10, 10)) == pytest.approx(50 / 150)


def test_iou_symmetry_random():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        a, b = _rand_box(rng), _rand_box(rng)
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0
    assert iou(_rand_box(rng), _rand_box(rng)) is not None


# ------------------------------------------------------------------- nms


def test_nms_examples():
    assert nms([], 0.5) == []
    b = BoundingBox(0, 0, 10, 10)
    kept = nms([Detection(b, 0.9), Detection(b, 0.5)], 0.5)
    assert [d.score for d in kept] == [0.9]
    dets = [
        Detection(BoundingBox(0, 0, 10, 10), 0.9),
        Detection(BoundingBox(4, 0, 10, 10), 0.8),
        Detection(BoundingBox(12, 0, 10, 10), 0.7),
    ]
    kept = nms(dets, 0.3)
    assert [d.score for d in kept] == [0.9, 0.7]


def test_nms_threshold_validation():
    with pytest.raises(ValueError):
        nms([], 0.0)
    with pytest.raises(ValueError):
        nms([], 1.5)


def test_nms_properties_random():
    rng = np.random.default_rng(4)
    for _ in range(200):
        dets = [Detection(_rand_box(rng, 30), float(rng.random()))
                for _ in range(int(rng.integers(1, 15)))]
        thr = float(rng.uniform(0.05, 1.0))
        kept = nms(dets, thr)
        assert all(k in dets for k in kept)
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert iou(a.box, b.box) < thr
        top = max(dets, key=lambda d: (d.score, -d.box.x, -d.box.y))
        assert any(k.score == top.score for k in kept)
        scores = [k.score for k in kept]
        assert scores == sorted(scores, reverse=True)


# ------------------------------------------------------------------ misc


def test_bounding_box_validation_and_accessors():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 5)
    b = BoundingBox(2, 3, 4, 6)
    assert (b.x2, b.y2) == (6, 9)
    assert (b.center_x, b.center_y) == (4.0, 6.0)
    assert b.area == 24


def test_detection_score_must_be_finite():
    with pytest.raises(ValueError):
        Detection(BoundingBox(0, 0, 1, 1), float("nan"))


def test_centered_diff_matches_manual():
    a = np.array([0.0, 1.0, 4.0, 9.0])
    d = centered_diff(a, axis=0)
    assert np.array_equal(d, [1.0, 4.0, 8.0, 5.0])


def test_draw_boxes_outlines():
    img = Image(np.zeros((20, 20, 1)))
    out = draw_boxes(img, [BoundingBox(2, 2, 10, 10)], (1.0, 0.0, 0.0))
    assert out.channels == 3
    assert np.all(out.pixels[2, 2:12, 0] == 1.0)   # top edge painted
    assert np.all(out.pixels[15, :, :] == 0.0)     # outside untouched
