"""Window classifiers: linear SVM trained by dual coordinate descent and an
attentional cascade of boosted decision stumps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .hog import HogParams, hog_from_window_stack, hog_length

FORMAT_VERSION = 1


# ---------------------------------------------------------------- linear SVM


@dataclass(frozen=True)
class SvmTrainConfig:
    C: float = 1.0
    seed: int = 0
    max_epochs: int = 200
    tolerance: float = 1e-4  # relative duality gap

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be > 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    feature_dim: int
    train_config: SvmTrainConfig
    dual_objectives: tuple[float, ...] = ()  # per-epoch solver objective trace

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or len(w) != self.feature_dim:
            raise ValueError("weights length must equal feature_dim")
        if not np.isfinite(w).all() or not math.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def _check_labeled_set(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("descriptors must form a 2-D array")
    if len(X) != len(y):
        raise ValueError("descriptor and label counts differ")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be +1 or -1")
    if len(np.unique(y)) < 2:
        raise ValueError("single-class training set")
    return X, y


def train_linear_svm(X: np.ndarray, y: np.ndarray, cfg: SvmTrainConfig | None = None) -> LinearSvmModel:
    """L2-regularized hinge-loss SVM solved by deterministic dual coordinate descent.

    The bias is handled as an augmented constant feature.  Coordinates are
    visited in a fixed permutation drawn once from the seed; the solver stops
    when the relative duality gap falls below the tolerance.
    """
    if cfg is None:
        cfg = SvmTrainConfig()
    X, y = _check_labeled_set(X, y)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    qd = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    C = cfg.C
    perm = np.random.default_rng(cfg.seed).permutation(n)
    objectives = []
    for _ in range(cfg.max_epochs):
        for i in perm:
            g = y[i] * (Xa[i] @ w) - 1.0
            if (alpha[i] <= 0.0 and g >= 0.0) or (alpha[i] >= C and g <= 0.0):
                continue
            a_new = min(max(alpha[i] - g / qd[i], 0.0), C)
            if a_new != alpha[i]:
                w += (a_new - alpha[i]) * y[i] * Xa[i]
                alpha[i] = a_new
        reg = 0.5 * float(w @ w)
        objectives.append(reg - float(alpha.sum()))  # dual objective being minimized
        hinge = np.maximum(0.0, 1.0 - y * (Xa @ w)).sum()
        primal = reg + C * hinge
        dual = float(alpha.sum()) - reg
        if primal - dual <= cfg.tolerance * max(1.0, abs(primal)):
            break
    return LinearSvmModel(
        weights=w[:d],
        bias=float(w[d]),
        feature_dim=d,
        train_config=cfg,
        dual_objectives=tuple(objectives),
    )


def svm_score(model: LinearSvmModel, descriptor: np.ndarray) -> float:
    d = np.asarray(descriptor, dtype=np.float64)
    if d.shape != (model.feature_dim,):
        raise ValueError(f"descriptor has shape {d.shape}, expected ({model.feature_dim},)")
    return float(model.weights @ d + model.bias)


def svm_score_stack(model: LinearSvmModel, descriptors: np.ndarray) -> np.ndarray:
    D = np.asarray(descriptors, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] != model.feature_dim:
        raise ValueError(f"descriptor stack has shape {D.shape}, expected (n, {model.feature_dim})")
    return D @ model.weights + model.bias


# ---------------------------------------------------------------- grid search


@dataclass(frozen=True)
class GridSearchResult:
    best_c: float
    table: tuple[dict, ...]   # one row per C: {"C", "fold_accuracies", "mean_accuracy"}
    n_trainings: int


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=np.int64)
    for label in np.unique(y):
        idx = np.nonzero(y == label)[0]
        idx = idx[rng.permutation(len(idx))]
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.nonzero(assignment == f)[0] for f in range(folds)]


def grid_search_cv(
    X: np.ndarray,
    y: np.ndarray,
    c_grid: list[float],
    folds: int,
    seed: int = 0,
    base_cfg: SvmTrainConfig | None = None,
) -> GridSearchResult:
    """Stratified k-fold search over C; ties are broken toward the smaller C."""
    if not c_grid:
        raise ValueError("empty C grid")
    if folds < 2:
        raise ValueError("folds must be >= 2")
    X, y = _check_labeled_set(X, y)
    if len(X) < folds:
        raise ValueError(f"too few samples ({len(X)}) for {folds} folds")
    if base_cfg is None:
        base_cfg = SvmTrainConfig()
    fold_idx = _stratified_folds(y, folds, seed)
    all_idx = np.arange(len(X))
    rows = []
    n_trainings = 0
    for c in sorted(c_grid):
        accs = []
        for f in range(folds):
            val = fold_idx[f]
            train = np.setdiff1d(all_idx, val)
            cfg = SvmTrainConfig(C=c, seed=base_cfg.seed, max_epochs=base_cfg.max_epochs,
                                 tolerance=base_cfg.tolerance)
            model = train_linear_svm(X[train], y[train], cfg)
            n_trainings += 1
            pred = np.where(svm_score_stack(model, X[val]) >= 0.0, 1.0, -1.0)
            accs.append(float(np.mean(pred == y[val])))
        rows.append({"C": float(c), "fold_accuracies": tuple(accs),
                     "mean_accuracy": float(np.mean(accs))})
    best = max(rows, key=lambda r: (r["mean_accuracy"], -r["C"]))
    return GridSearchResult(best_c=best["C"], table=tuple(rows), n_trainings=n_trainings)


# ------------------------------------------------------------------- cascade


@dataclass(frozen=True)
class DecisionStump:
    feature: int
    threshold: float
    polarity: int     # +1: predict positive when value >= threshold
    weight: float     # AdaBoost alpha


@dataclass(frozen=True)
class CascadeStage:
    stumps: tuple[DecisionStump, ...]
    threshold: float
    hog_params: HogParams


@dataclass(frozen=True)
class CascadeModel:
    stages: tuple[CascadeStage, ...]
    window_w: int
    window_h: int

    def __post_init__(self):
        if not self.stages:
            raise ValueError("cascade must have at least one stage")
        counts = [len(s.stumps) for s in self.stages]
        if any(b < a for a, b in zip(counts, counts[1:])):
            raise ValueError("stage weak-learner counts must be non-decreasing")
        cells = [s.hog_params.cell_size for s in self.stages]
        if any(b > a for a, b in zip(cells, cells[1:])):
            raise ValueError("stage cell sizes must be non-increasing (finer granularity later)")


@dataclass(frozen=True)
class CascadeTrainConfig:
    stages_max: int = 5
    stage_min_detection_rate: float = 0.995
    stage_max_fp_rate: float = 0.5
    max_stumps_per_stage: int = 60
    hog_schedule: tuple[HogParams, ...] | None = None  # None: derived from window size
    seed: int = 0


@dataclass(frozen=True)
class CascadeResult:
    accepted: bool
    score: float                      # final-stage margin when accepted
    rejected_at_stage: int | None
    stages_evaluated: int


def default_hog_schedule(window_w: int, window_h: int, stages: int = 3) -> tuple[HogParams, ...]:
    """Coarse-to-fine cell schedule (16 -> 8 -> 8 where divisibility allows)."""
    targets = [16, 8, 8] + [8] * max(0, stages - 3)
    schedule = []
    prev = None
    for t in targets[:stages]:
        cell = t if prev is None else min(t, prev)
        while cell > 1 and (window_w % cell or window_h % cell
                            or window_w // cell < 2 or window_h // cell < 2):
            cell -= 1
        schedule.append(HogParams(cell_size=cell))
        prev = cell
    return tuple(schedule)


def _best_stump(F: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple[DecisionStump, float]:
    """Exhaustive weighted-error search over (feature, threshold, polarity)."""
    n, d = F.shape
    order = np.argsort(F, axis=0, kind="stable")
    ws = np.take_along_axis(np.broadcast_to(w[:, None], (n, d)), order, axis=0)
    ys = np.take_along_axis(np.broadcast_to(y[:, None], (n, d)), order, axis=0)
    fs = np.take_along_axis(F, order, axis=0)
    pos_below = np.cumsum(np.where(ys > 0, ws, 0.0), axis=0)
    neg_below = np.cumsum(np.where(ys < 0, ws, 0.0), axis=0)
    wn = neg_below[-1]
    # err_plus[i]: predict -1 for sorted[0..i], +1 above (polarity +1)
    err_plus = np.vstack([wn[None, :], pos_below + (wn - neg_below)])
    # splits between equal feature values are not realizable
    invalid = np.vstack([np.zeros((1, d), dtype=bool), fs[:-1] == fs[1:],
                         np.zeros((1, d), dtype=bool)])
    err_plus = np.where(invalid, np.inf, err_plus)
    err_minus = np.where(np.isinf(err_plus), np.inf, 1.0 - err_plus)
    best = None
    for errs, pol in ((err_plus, 1), (err_minus, -1)):
        flat = np.argmin(errs)
        i, f = np.unravel_index(flat, errs.shape)
        e = errs[i, f]
        if best is None or e < best[0]:
            best = (float(e), int(i), int(f), pol)
    e, i, f = best[0], best[1], best[2]
    col = fs[:, f]
    if i == 0:
        thr = float(col[0] - 1.0)
    elif i == n:
        thr = float(col[-1] + 1.0)
    else:
        thr = float(0.5 * (col[i - 1] + col[i]))
    return DecisionStump(feature=f, threshold=thr, polarity=best[3], weight=0.0), e


def _stump_predict(stump: DecisionStump, F: np.ndarray) -> np.ndarray:
    s = np.where(F[:, stump.feature] >= stump.threshold, 1.0, -1.0)
    return stump.polarity * s


def _train_stage(
    Fpos: np.ndarray,
    Fneg: np.ndarray,
    hog_params: HogParams,
    cfg: CascadeTrainConfig,
    min_stumps: int,
    stage_index: int,
) -> CascadeStage:
    npos, nneg = len(Fpos), len(Fneg)
    F = np.vstack([Fpos, Fneg])
    y = np.concatenate([np.ones(npos), -np.ones(nneg)])
    w = np.concatenate([np.full(npos, 0.5 / npos), np.full(nneg, 0.5 / nneg)])
    stumps: list[DecisionStump] = []
    margins = np.zeros(len(F))
    for t in range(cfg.max_stumps_per_stage):
        w = w / w.sum()
        stump, err = _best_stump(F, y, w)
        err = min(max(err, 1e-12), 1.0 - 1e-12)
        alpha = 0.5 * math.log((1.0 - err) / err)
        stump = DecisionStump(stump.feature, stump.threshold, stump.polarity, alpha)
        h = _stump_predict(stump, F)
        w = w * np.exp(-alpha * y * h)
        margins = margins + alpha * h
        stumps.append(stump)
        # largest threshold keeping detection rate >= d on the positives
        pos_sorted = np.sort(margins[:npos])
        k = int(math.floor((1.0 - cfg.stage_min_detection_rate) * npos))
        theta = float(pos_sorted[k])
        fpr = float(np.mean(margins[npos:] >= theta)) if nneg else 0.0
        if fpr <= cfg.stage_max_fp_rate and len(stumps) >= min_stumps:
            return CascadeStage(stumps=tuple(stumps), threshold=theta, hog_params=hog_params)
    raise ValueError(
        f"cascade stage {stage_index} cannot reach detection rate "
        f"{cfg.stage_min_detection_rate} with FP rate <= {cfg.stage_max_fp_rate} "
        f"within {cfg.max_stumps_per_stage} stumps"
    )


def stage_margins(stage: CascadeStage, F: np.ndarray) -> np.ndarray:
    m = np.zeros(len(F))
    for stump in stage.stumps:
        m += stump.weight * _stump_predict(stump, F)
    return m


def train_cascade(
    pos_windows: np.ndarray,
    neg_windows: np.ndarray,
    cfg: CascadeTrainConfig | None = None,
) -> CascadeModel:
    """Train an attentional cascade on grayscale window stacks of shape (n, h, w).

    Each stage boosts decision stumps over that stage's HOG features until it
    reaches the per-stage detection-rate and false-positive-rate targets;
    negatives surviving a stage feed the next one.
    """
    if cfg is None:
        cfg = CascadeTrainConfig()
    pos = np.asarray(pos_windows, dtype=np.float64)
    neg = np.asarray(neg_windows, dtype=np.float64)
    if pos.ndim != 3 or neg.ndim != 3:
        raise ValueError("window stacks must have shape (n, h, w)")
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("both positive and negative windows are required")
    h, w = pos.shape[1:]
    if neg.shape[1:] != (h, w):
        raise ValueError("positive and negative windows must have the same size")
    schedule = cfg.hog_schedule or default_hog_schedule(w, h, cfg.stages_max)
    stages: list[CascadeStage] = []
    min_stumps = 1
    for si in range(cfg.stages_max):
        params = schedule[min(si, len(schedule) - 1)]
        Fpos = hog_from_window_stack(pos, params)
        Fneg = hog_from_window_stack(neg, params)
        stage = _train_stage(Fpos, Fneg, params, cfg, min_stumps, si)
        stages.append(stage)
        min_stumps = len(stage.stumps)
        survive = stage_margins(stage, Fneg) >= stage.threshold
        neg = neg[survive]
        if len(neg) == 0:
            break
    return CascadeModel(stages=tuple(stages), window_w=w, window_h=h)


def cascade_classify(model: CascadeModel, window) -> CascadeResult:
    """Run one window through the cascade, exiting at the first rejecting stage."""
    from .vision import Image

    if isinstance(window, Image):
        if window.channels != 1:
            raise ValueError("cascade_classify requires a grayscale window")
        arr = window.pixels[:, :, 0]
    else:
        arr = np.asarray(window, dtype=np.float64)
    if arr.shape != (model.window_h, model.window_w):
        raise ValueError(
            f"window is {arr.shape[1]}x{arr.shape[0]}, detector expects "
            f"{model.window_w}x{model.window_h}"
        )
    margin = 0.0
    for si, stage in enumerate(model.stages):
        F = hog_from_window_stack(arr[None], stage.hog_params)
        margin = float(stage_margins(stage, F)[0])
        if margin < stage.threshold:
            return CascadeResult(accepted=False, score=margin,
                                 rejected_at_stage=si, stages_evaluated=si + 1)
    return CascadeResult(accepted=True, score=margin, rejected_at_stage=None,
                         stages_evaluated=len(model.stages))


def cascade_score_stack(model: CascadeModel, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched cascade evaluation: (accepted mask, final margins for accepted windows)."""
    windows = np.asarray(windows, dtype=np.float64)
    n = len(windows)
    accepted = np.ones(n, dtype=bool)
    scores = np.full(n, -np.inf)
    idx = np.arange(n)
    for stage in model.stages:
        if idx.size == 0:
            break
        F = hog_from_window_stack(windows[idx], stage.hog_params)
        m = stage_margins(stage, F)
        passed = m >= stage.threshold
        accepted[idx[~passed]] = False
        scores[idx[passed]] = m[passed]
        idx = idx[passed]
    scores[~accepted] = -np.inf
    return accepted, scores


# -------------------------------------------------------------- serialization


def _hog_params_dict(p: HogParams) -> dict:
    return asdict(p)


def _hog_params_from_dict(d: dict) -> HogParams:
    return HogParams(**d)


def save_model(model, path, hog_params: HogParams | None = None) -> None:
    """Write a model as a versioned JSON document (deterministic byte layout)."""
    if isinstance(model, LinearSvmModel):
        if hog_params is None:
            raise ValueError("hog_params is required when saving an SVM model")
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "svm",
            "hog_params": _hog_params_dict(hog_params),
            "payload": {
                "weights": [float(v) for v in model.weights],
                "bias": model.bias,
                "feature_dim": model.feature_dim,
                "train_config": asdict(model.train_config),
            },
        }
    elif isinstance(model, CascadeModel):
        doc = {
            "format_version": FORMAT_VERSION,
            "kind": "cascade",
            "hog_params": _hog_params_dict(model.stages[-1].hog_params),
            "payload": {
                "window_w": model.window_w,
                "window_h": model.window_h,
                "stages": [
                    {
                        "threshold": s.threshold,
                        "hog_params": _hog_params_dict(s.hog_params),
                        "stumps": [
                            [st.feature, st.threshold, st.polarity, st.weight]
                            for st in s.stumps
                        ],
                    }
                    for s in model.stages
                ],
            },
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text)


def load_model(path):
    """Load a serialized model; returns (model, hog_params)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"model file not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version in {p}")
    hog_params = _hog_params_from_dict(doc["hog_params"])
    payload = doc["payload"]
    if doc["kind"] == "svm":
        model = LinearSvmModel(
            weights=np.array(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            feature_dim=int(payload["feature_dim"]),
            train_config=SvmTrainConfig(**payload["train_config"]),
        )
        return model, hog_params
    if doc["kind"] == "cascade":
        stages = tuple(
            CascadeStage(
                stumps=tuple(
                    DecisionStump(int(f), float(t), int(pol), float(w))
                    for f, t, pol, w in s["stumps"]
                ),
                threshold=float(s["threshold"]),
                hog_params=_hog_params_from_dict(s["hog_params"]),
            )
            for s in payload["stages"]
        )
        model = CascadeModel(stages=stages, window_w=int(payload["window_w"]),
                             window_h=int(payload["window_h"]))
        return model, hog_params
    raise ValueError(f"unknown model kind {doc['kind']!r} in {p}")
