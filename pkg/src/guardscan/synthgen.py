"""Deterministic synthetic building-facade renderer with ground-truth guardrail
annotations, floor lines, and distractor clutter for stress-testing the filters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .floors import FloorLine
from .spacing import GmmModel
from .vision import BoundingBox, Image, save_png

MANIFEST_VERSION = 1

DEFAULT_SPACING_MODEL = GmmModel(weights=(1.0,), means=(1.0,), variances=(0.02,))


@dataclass(frozen=True)
class SynthConfig:
    image_w: int = 480
    image_h: int = 360
    floor_ys: tuple[int, ...] = (110, 225, 340)   # y of each floor band top
    post_w: int = 18
    post_h: int = 72
    base_spacing: float = 48.0
    posts_per_floor: int | None = None            # None: fill the usable width
    spacing_model: GmmModel = DEFAULT_SPACING_MODEL
    missing_prob: float = 0.15
    noise_sigma: float = 0.02
    tilt_deg: float = 0.0
    background_intensity: float = 0.85
    post_intensity: float = 0.2
    floor_intensity: float = 0.3
    band_height: int = 3
    margin_x: int = 16
    off_floor_distractors: int = 3                # floating post look-alikes per scene
    spacing_distractor_prob: float = 0.25         # per-floor chance of an interloper post
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_prob < 1.0:
            raise ValueError("missing_prob must be in [0, 1)")
        if any(y + self.band_height > self.image_h or y - self.post_h < 0
               for y in self.floor_ys):
            raise ValueError("floors (with posts above them) must fit in the image")


@dataclass(frozen=True)
class SynthScene:
    image: Image
    post_annotations: tuple[BoundingBox, ...]
    true_floor_lines: tuple[FloorLine, ...]
    removed_posts: tuple[BoundingBox, ...]
    distractor_boxes: tuple[BoundingBox, ...]


def _draw_bar(canvas: np.ndarray, x: int, y_bottom: int, w: int, h: int, value: float) -> BoundingBox:
    canvas[y_bottom - h : y_bottom, x : x + w] = value
    return BoundingBox(x, y_bottom - h, w, h)


def _floor_positions(cfg: SynthConfig, rng: np.random.Generator) -> list[float]:
    """Left x coordinates of the post slots on one floor (before deletion)."""
    draws_needed = (cfg.posts_per_floor - 1) if cfg.posts_per_floor else None
    xs = [float(cfg.margin_x)]
    limit = cfg.image_w - cfg.margin_x - cfg.post_w
    while True:
        if draws_needed is not None and len(xs) >= cfg.posts_per_floor:
            break
        s = float(np.clip(cfg.spacing_model.sample(rng, 1)[0], 0.5, 3.0))
        nxt = xs[-1] + s * cfg.base_spacing
        if nxt > limit:
            if draws_needed is not None:
                raise ValueError(
                    f"posts would not fit: {cfg.posts_per_floor} posts exceed the "
                    f"usable width {limit - cfg.margin_x:.0f}px"
                )
            break
        xs.append(nxt)
    return xs


def render_facade(cfg: SynthConfig) -> SynthScene:
    """Render one facade; fully determined by cfg (including its seed)."""
    rng = np.random.default_rng(cfg.seed)
    canvas = np.full((cfg.image_h, cfg.image_w), cfg.background_intensity)
    slope = math.tan(math.radians(cfg.tilt_deg))
    xs_all = np.arange(cfg.image_w)

    annotations: list[BoundingBox] = []
    removed: list[BoundingBox] = []
    distractors: list[BoundingBox] = []
    floor_lines = []

    for floor_y in cfg.floor_ys:
        ys_band = np.rint(floor_y + slope * xs_all).astype(int)
        for x, yb in zip(xs_all, ys_band):
            canvas[yb : yb + cfg.band_height, x] = cfg.floor_intensity
        floor_lines.append(FloorLine(slope=slope, intercept=float(floor_y),
                                     coverage=float(cfg.image_w), support=1))

        kept_xs: list[int] = []
        for xf in _floor_positions(cfg, rng):
            xi = int(round(xf))
            yb = int(round(floor_y + slope * (xi + cfg.post_w / 2.0)))
            box = BoundingBox(xi, yb - cfg.post_h, cfg.post_w, cfg.post_h)
            if rng.random() < cfg.missing_prob:
                removed.append(box)
                continue
            _draw_bar(canvas, xi, yb, cfg.post_w, cfg.post_h, cfg.post_intensity)
            annotations.append(box)
            kept_xs.append(xi)

        # Occasional interloper post at an implausible offset from a real one:
        # survives floor filtering, should be dropped by spacing selection.
        if kept_xs and rng.random() < cfg.spacing_distractor_prob:
            anchor = int(rng.choice(kept_xs))
            side = 1 if rng.random() < 0.5 else -1
            xi = anchor + side * int(round(0.5 * cfg.base_spacing))
            if cfg.margin_x <= xi <= cfg.image_w - cfg.margin_x - cfg.post_w and all(
                abs(xi - k) >= cfg.post_w + 2 for k in kept_xs
            ):
                yb = int(round(floor_y + slope * (xi + cfg.post_w / 2.0)))
                distractors.append(
                    _draw_bar(canvas, xi, yb, cfg.post_w, cfg.post_h, cfg.post_intensity)
                )

    # Floating post look-alikes between floors: detectable, but far from any
    # floor line, so floor filtering should remove them.
    for _ in range(cfg.off_floor_distractors):
        xi = int(rng.integers(cfg.margin_x, cfg.image_w - cfg.margin_x - cfg.post_w + 1))
        candidates = []
        levels = sorted(cfg.floor_ys)
        for lo, hi in zip([0] + levels[:-1], levels):
            # whole bar stays between the bands, bottom >= 20px from the floor below
            top_limit = (lo + cfg.band_height + 2 + cfg.post_h) if lo else cfg.post_h
            bot_limit = hi - 20
            if bot_limit - top_limit >= 1:
                candidates.append((top_limit, bot_limit))
        if not candidates:
            break
        lo, hi = candidates[int(rng.integers(len(candidates)))]
        yb = int(rng.integers(lo, hi + 1))
        distractors.append(
            _draw_bar(canvas, xi, yb, cfg.post_w, cfg.post_h, cfg.post_intensity)
        )

    if cfg.noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, cfg.noise_sigma, canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)

    return SynthScene(
        image=Image(canvas),
        post_annotations=tuple(annotations),
        true_floor_lines=tuple(floor_lines),
        removed_posts=tuple(removed),
        distractor_boxes=tuple(distractors),
    )


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Dataset:
    root: Path
    train_names: tuple[str, ...]
    test_names: tuple[str, ...]
    annotations: dict          # image name -> list[BoundingBox]
    floor_truth: dict          # image name -> list[(slope, intercept)]

    def image_path(self, name: str) -> Path:
        return self.root / "images" / name


def _config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["spacing_model"] = {
        "weights": list(cfg.spacing_model.weights),
        "means": list(cfg.spacing_model.means),
        "variances": list(cfg.spacing_model.variances),
    }
    return d


def make_dataset(cfg: SynthConfig, n_train: int, n_test: int, out_dir) -> Path:
    """Render a train/test split of facades; per-scene seeds are offsets from
    cfg.seed so reruns are byte-identical.  Returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    names = []
    ann_lines = []
    floor_lines_out = []
    for i in range(n_train + n_test):
        scene_cfg = SynthConfig(**{**asdict(cfg), "spacing_model": cfg.spacing_model,
                                   "seed": cfg.seed + i})
        scene = render_facade(scene_cfg)
        name = f"scene_{i:04d}.png"
        names.append(name)
        save_png(scene.image, out / "images" / name)
        ann_lines.append({
            "image": name,
            "boxes": [[b.x, b.y, b.w, b.h] for b in scene.post_annotations],
        })
        floor_lines_out.append({
            "image": name,
            "lines": [[fl.slope, fl.intercept] for fl in scene.true_floor_lines],
        })
    _write_jsonl(out / "annotations.jsonl", ann_lines)
    _write_jsonl(out / "floors.jsonl", floor_lines_out)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "config": _config_dict(cfg),
        "train": names[:n_train],
        "test": names[n_train:],
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return manifest_path


def _write_jsonl(path: Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported dataset manifest version in {manifest_path}")
    annotations = {}
    for line in (root / "annotations.jsonl").read_text().splitlines():
        rec = json.loads(line)
        annotations[rec["image"]] = [BoundingBox(*b) for b in rec["boxes"]]
    floor_truth = {}
    floors_path = root / "floors.jsonl"
    if floors_path.exists():
        for line in floors_path.read_text().splitlines():
            rec = json.loads(line)
            floor_truth[rec["image"]] = [tuple(l) for l in rec["lines"]]
    return Dataset(
        root=root,
        train_names=tuple(manifest["train"]),
        test_names=tuple(manifest["test"]),
        annotations=annotations,
        floor_truth=floor_truth,
    )
