"""Normalized post-spacing model: GMM fitted by EM, space-ubiquity table, and
dynamic-programming selection of the most plausible detection chain per floor."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .vision import BoundingBox, Detection

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GmmModel:
    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    log_likelihoods: tuple[float, ...] = ()  # per-iteration fit trace

    def __post_init__(self):
        k = len(self.weights)
        if k < 1 or len(self.means) != k or len(self.variances) != k:
            raise ValueError("weights, means, variances must have equal positive length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")
        if any(v <= 0 for v in self.variances):
            raise ValueError("variances must be positive")

    @property
    def k(self) -> int:
        return len(self.weights)

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        var = np.asarray(self.variances)
        comp = np.exp(-0.5 * (x[..., None] - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
        return comp @ w

    def log_pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        w = np.log(np.asarray(self.weights))
        mu = np.asarray(self.means)
        var = np.asarray(self.variances)
        lc = w - 0.5 * np.log(2.0 * np.pi * var) - 0.5 * (x[..., None] - mu) ** 2 / var
        return logsumexp(lc, axis=-1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(self.k, size=n, p=np.asarray(self.weights))
        mu = np.asarray(self.means)[comp]
        sd = np.sqrt(np.asarray(self.variances))[comp]
        return rng.normal(mu, sd)

    def cdf(self, x) -> np.ndarray:
        from scipy.stats import norm

        x = np.asarray(x, dtype=np.float64)
        w = np.asarray(self.weights)
        mu = np.asarray(self.means)
        sd = np.sqrt(np.asarray(self.variances))
        return norm.cdf(x[..., None], loc=mu, scale=sd) @ w


@dataclass(frozen=True)
class SpacingFitConfig:
    seed: int = 0
    tol: float = 1e-6
    max_iter: int = 500
    variance_floor: float = 1e-4


@dataclass(frozen=True)
class UbiquityTable:
    """Binned plausibility of a normalized spacing: mixture density minus a penalty."""

    bin_edges: np.ndarray  # length bins + 1, over [0, s_max]
    values: np.ndarray     # length bins; may be negative
    tau: float

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if len(edges) != len(vals) + 1 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing with len(values)+1 entries")
        if not np.isfinite(vals).all():
            raise ValueError("table values must be finite")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        edges.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "values", vals)

    def lookup(self, s) -> np.ndarray:
        """Value of the bin containing s; out-of-range lookups clamp to the edge bins."""
        s = np.asarray(s, dtype=np.float64)
        idx = np.searchsorted(self.bin_edges, s, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        return self.values[idx]


def normalized_spacings(boxes_by_floor: dict) -> list[float]:
    """Consecutive center-x spacings per floor, each divided by that floor's
    median spacing; floors with fewer than two boxes contribute nothing."""
    samples: list[float] = []
    for _, boxes in sorted(boxes_by_floor.items()):
        if len(boxes) < 2:
            continue
        centers = sorted(b.center_x for b in boxes)
        spaces = np.diff(centers)
        med = float(np.median(spaces))
        if med <= 0:
            continue
        samples.extend(float(s / med) for s in spaces)
    return samples


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(k - 1):
        d2 = np.min((x[:, None] - np.array(centers)) ** 2, axis=1)
        total = d2.sum()
        if total == 0.0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(rng.choice(x, p=d2 / total))
    return np.array(centers)


def fit_gmm_em(samples, k: int, cfg: SpacingFitConfig | None = None) -> GmmModel:
    """Fit a k-component 1-D Gaussian mixture by EM with k-means++ initialization."""
    if cfg is None:
        cfg = SpacingFitConfig()
    x = np.asarray(list(samples), dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least {k} samples to fit {k} components, got {len(x)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > 1 and np.ptp(x) == 0.0:
        raise ValueError("degenerate sample set: all samples identical")
    rng = np.random.default_rng(cfg.seed)
    centers = np.sort(_kmeanspp_init(x, k, rng))
    assign = np.argmin(np.abs(x[:, None] - centers), axis=1)
    weights = np.empty(k)
    means = np.empty(k)
    variances = np.empty(k)
    global_var = max(float(np.var(x)), cfg.variance_floor)
    for j in range(k):
        members = x[assign == j]
        if len(members) == 0:
            weights[j], means[j], variances[j] = 1.0 / len(x), centers[j], global_var
        else:
            weights[j] = len(members) / len(x)
            means[j] = members.mean()
            variances[j] = max(float(np.var(members)), cfg.variance_floor)
    weights /= weights.sum()

    trace = []
    prev_ll = -np.inf
    for _ in range(cfg.max_iter):
        # E-step: log responsibilities
        lc = (np.log(weights) - 0.5 * np.log(2.0 * np.pi * variances)
              - 0.5 * (x[:, None] - means) ** 2 / variances)
        norm = logsumexp(lc, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        resp = np.exp(lc - norm[:, None])
        # M-step: weighted maximum likelihood
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        weights = nk / len(x)
        means = (resp * x[:, None]).sum(axis=0) / nk
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / nk
        variances = np.maximum(variances, cfg.variance_floor)
        weights = weights / weights.sum()
        if ll - prev_ll < cfg.tol and np.isfinite(prev_ll):
            break
        prev_ll = ll
    return GmmModel(
        weights=tuple(float(v) for v in weights),
        means=tuple(float(v) for v in means),
        variances=tuple(float(v) for v in variances),
        log_likelihoods=tuple(trace),
    )


def bic(model: GmmModel, n: int) -> float:
    """Bayesian information criterion: -2 loglik + p ln n with p = 3k - 1."""
    p = 3 * model.k - 1
    return -2.0 * model.log_likelihoods[-1] + p * math.log(n)


def select_k_bic(samples, k_range=range(1, 6), cfg: SpacingFitConfig | None = None) -> tuple[int, GmmModel]:
    """Fit each k and return the BIC minimizer; ties break toward smaller k."""
    ks = sorted(k_range)
    if not ks:
        raise ValueError("empty k range")
    x = list(samples)
    best: tuple[float, int, GmmModel] | None = None
    for k in ks:
        model = fit_gmm_em(x, k, cfg)
        score = bic(model, len(x))
        if best is None or score < best[0] - 1e-12:
            best = (score, k, model)
    return best[1], best[2]


def build_ubiquity_table(
    model: GmmModel,
    bins: int = 200,
    s_max: float = 4.0,
    tau: float | None = None,
) -> UbiquityTable:
    """Tabulate mixture density minus the penalty tau on a grid over [0, s_max].

    With tau unset it defaults to a quarter of the peak density, keeping the
    penalty proportionate to however the mixture was fitted.
    """
    if bins < 1 or s_max <= 0:
        raise ValueError("bins must be >= 1 and s_max > 0")
    edges = np.linspace(0.0, s_max, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = model.pdf(centers)
    if tau is None:
        tau = 0.25 * float(density.max())
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return UbiquityTable(bin_edges=edges, values=density - tau, tau=float(tau))


def chain_objective(centers_x, table: UbiquityTable, median: float) -> float:
    """Sum of table values over consecutive pairs of an ordered chain of centers."""
    if median <= 0:
        raise ValueError("median spacing must be positive")
    total = 0.0
    for a, b in zip(centers_x, centers_x[1:]):
        total += float(table.lookup((b - a) / median))
    return total


def select_best_combination(dets: list[Detection], table: UbiquityTable) -> list[Detection]:
    """Dynamic-programming selection of the detection chain with maximum summed
    spacing plausibility on one floor.

    The normalizing median is computed once from all consecutive candidate
    spacings before selection.  If no chain scores above zero, the single
    highest-score detection is kept (ties toward the leftmost).
    """
    if len(dets) < 2:
        return list(dets)
    order = sorted(dets, key=lambda d: (d.box.center_x, -d.score, d.box.y))
    cx = [d.box.center_x for d in order]
    spaces = np.diff(cx)
    med = float(np.median(spaces))
    fallback = max(order, key=lambda d: (d.score, -d.box.center_x))
    if med <= 0:
        return [fallback]
    n = len(order)
    f = [0.0] * n       # best chain objective ending at i
    parent = [-1] * n
    for i in range(1, n):
        for j in range(i):
            v = f[j] + float(table.lookup((cx[i] - cx[j]) / med))
            if v > f[i]:
                f[i], parent[i] = v, j
    best_i = max(range(n), key=lambda i: f[i])
    if f[best_i] <= 0.0:
        return [fallback]
    chain = []
    i = best_i
    while i != -1:
        chain.append(order[i])
        i = parent[i]
    chain.reverse()
    return chain


# -------------------------------------------------------------- persistence


def save_spacing_model(model: GmmModel, table: UbiquityTable, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "components": [
            {"weight": w, "mean": m, "variance": v}
            for w, m, v in zip(model.weights, model.means, model.variances)
        ],
        "bin_edges": [float(e) for e in table.bin_edges],
        "values": [float(v) for v in table.values],
        "tau": table.tau,
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text)


def load_spacing_model(path) -> tuple[GmmModel, UbiquityTable]:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"spacing model file not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported spacing model format version in {p}")
    comps = doc["components"]
    model = GmmModel(
        weights=tuple(c["weight"] for c in comps),
        means=tuple(c["mean"] for c in comps),
        variances=tuple(c["variance"] for c in comps),
    )
    table = UbiquityTable(
        bin_edges=np.array(doc["bin_edges"], dtype=np.float64),
        values=np.array(doc["values"], dtype=np.float64),
        tau=float(doc["tau"]),
    )
    return model, table


def export_spacing_csv(samples, model: GmmModel, path, bins: int = 40) -> None:
    """Histogram of spacing samples plus per-component density curves, as CSV."""
    x = np.asarray(list(samples), dtype=np.float64)
    hist, edges = np.histogram(x, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w = np.asarray(model.weights)
    mu = np.asarray(model.means)
    var = np.asarray(model.variances)
    comp = (w * np.exp(-0.5 * (centers[:, None] - mu) ** 2 / var)
            / np.sqrt(2.0 * np.pi * var))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "histogram_density"]
                        + [f"component_{i}" for i in range(model.k)])
        for i, c in enumerate(centers):
            writer.writerow([f"{c:.6f}", f"{hist[i]:.6f}"]
                            + [f"{comp[i, j]:.6f}" for j in range(model.k)])
