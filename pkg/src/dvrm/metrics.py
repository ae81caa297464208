"""Image similarity metrics, latent-space kNN and report aggregation."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_NAMES = ("pcc", "ssim", "psnr_db", "mse")


class UndefinedMetricError(ValueError):
    """The metric has no value for these inputs (e.g. correlation of two constants)."""


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def pcc(a, b) -> float:
    """Pearson correlation of the flattened images.

    If exactly one image is constant the covariance is zero and 0.0 is
    returned; two constant images raise ``UndefinedMetricError``.
    """
    a, b = _pair(a, b)
    da = a.ravel() - a.mean()
    db = b.ravel() - b.mean()
    va, vb = float(da @ da), float(db @ db)
    if va == 0.0 and vb == 0.0:
        raise UndefinedMetricError("pcc undefined: both images are constant")
    if va == 0.0 or vb == 0.0:
        return 0.0
    r = float(da @ db) / math.sqrt(va * vb)
    return max(-1.0, min(1.0, r))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 1.0, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over every fully contained Gaussian-weighted window."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError(f"ssim expects 2-D images, got shape {a.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")
    w = gaussian_window(window, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def local(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    mu_a, mu_b = local(a), local(b)
    var_a = local(a * a) - mu_a * mu_a
    var_b = local(b * b) - mu_b * mu_b
    cov = local(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``math.inf``.

    Use ``max_val = 2**n - 1`` for n-bit integer-coded images.
    """
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / err)


def _knn_vote(dists: np.ndarray, labels: np.ndarray, k: int) -> int:
    order = np.argsort(dists, kind="stable")[:k]
    votes: dict[int, list[float]] = {}
    for i in order:
        votes.setdefault(int(labels[i]), []).append(float(dists[i]))
    # most votes, then smallest summed distance, then lowest label
    return min(votes, key=lambda lab: (-len(votes[lab]), sum(votes[lab]), lab))


def knn_classify(train_vectors, train_labels, query, k: int = 5) -> int:
    """Majority label among the k nearest (Euclidean) training vectors.

    Equal distances keep training order. Vote ties go to the label whose
    neighbours have the smallest summed distance, then to the lowest label.
    """
    x = np.asarray(train_vectors, dtype=np.float64)
    y = np.asarray(train_labels)
    if len(x) == 0:
        raise ValueError("knn_classify needs a non-empty training set")
    if not 1 <= k <= len(x):
        raise ValueError(f"k must lie in [1, {len(x)}], got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    d = np.sqrt(((x - q) ** 2).sum(axis=1))
    return _knn_vote(d, y, k)


def knn_predict(train_vectors, train_labels, queries, k: int = 5) -> np.ndarray:
    return np.array([knn_classify(train_vectors, train_labels, q, k) for q in np.asarray(queries)], dtype=np.int64)


@dataclass
class ConfusionMatrix:
    labels: list[int]
    counts: np.ndarray  # rows true class, columns predicted

    @classmethod
    def from_predictions(cls, y_true, y_pred, labels=None) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist())) if labels is None else list(labels)
        pos = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[pos[int(t)], pos[int(p)]] += 1
        return cls(labels, counts)

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else math.nan

    def to_csv(self) -> str:
        head = "true\\pred," + ",".join(str(lab) for lab in self.labels)
        rows = [f"{lab}," + ",".join(str(c) for c in row) for lab, row in zip(self.labels, self.counts)]
        return "\n".join([head, *rows]) + "\n"


@dataclass(frozen=True)
class PairMetrics:
    pair_id: str
    pcc: float
    ssim: float
    psnr_db: float
    mse: float
    group: str = ""


@dataclass(frozen=True)
class Aggregate:
    n: int
    mean: dict
    std: dict
    inf_psnr: int = 0


def pair_metrics(pair_id, target, recon, group: str = "", max_val: float = 1.0) -> PairMetrics:
    return PairMetrics(str(pair_id), pcc(target, recon), ssim(target, recon, data_range=max_val),
                       psnr(target, recon, max_val), mse(target, recon), group)


def aggregate(rows: list[PairMetrics]) -> Aggregate:
    """Mean and sample (n-1) std per metric; n=1 reports std 0. Infinite PSNR is excluded."""
    mean, std = {}, {}
    inf_count = sum(1 for r in rows if math.isinf(r.psnr_db))
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in rows], dtype=np.float64)
        if name == "psnr_db":
            vals = vals[np.isfinite(vals)]
        if len(vals) == 0:
            mean[name], std[name] = (math.inf if name == "psnr_db" else math.nan), math.nan
            continue
        mean[name] = float(np.mean(vals))
        std[name] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return Aggregate(len(rows), mean, std, inf_count)


AVERAGE = "Average"


@dataclass
class EvalReport:
    per_pair: list[PairMetrics]
    groups: "OrderedDict[str, Aggregate]" = field(default_factory=OrderedDict)
    average: Aggregate | None = None

    def to_csv(self) -> str:
        lines = ["pair_id,pcc,ssim,psnr_db,mse"]
        for r in self.per_pair:
            lines.append(",".join([r.pair_id, *(_fmt(getattr(r, m)) for m in METRIC_NAMES)]))
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        cols = [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "std")]
        lines = ["group,n," + ",".join(cols) + ",psnr_inf_count"]
        for name, agg in [*self.groups.items(), (AVERAGE, self.average)]:
            vals = [_fmt(getattr(agg, s)[m]) for m in METRIC_NAMES for s in ("mean", "std")]
            lines.append(",".join([name, str(agg.n), *vals, str(agg.inf_psnr)]))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Mean±std table with PCC, SSIM, PSNR and MSE columns and an Average row."""
        header = ["No.", "Stimuli", "PCC", "SSIM", "PSNR", "MSE"]
        body = [[str(i + 1), name, *_cells(agg)] for i, (name, agg) in enumerate(self.groups.items())]
        body.append(["-", AVERAGE, *_cells(self.average)])
        widths = [max(len(row[c]) for row in [header, *body]) for c in range(len(header))]
        fmt = lambda row: "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        lines = [fmt(header), "  ".join("-" * w for w in widths), *map(fmt, body)]
        notes = [f"{name}: {agg.inf_psnr} pair(s) with infinite PSNR excluded from the PSNR column"
                 for name, agg in [*self.groups.items(), (AVERAGE, self.average)] if agg.inf_psnr]
        return "\n".join(lines + notes) + "\n"


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _cells(agg: Aggregate) -> list[str]:
    out = []
    for m, digits in zip(METRIC_NAMES, (3, 3, 3, 3)):
        mu, sd = agg.mean[m], agg.std[m]
        out.append("inf" if math.isinf(mu) else f"{mu:.{digits}f}±{sd:.{digits}f}")
    return out


def evaluate(pairs, pair_ids=None, groups=None, max_val: float = 1.0) -> EvalReport:
    """Score (target, reconstruction) pairs and aggregate per group plus an overall Average."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate needs at least one pair")
    pair_ids = list(pair_ids) if pair_ids is not None else [str(i) for i in range(len(pairs))]
    groups = list(groups) if groups is not None else ["all"] * len(pairs)
    if not len(pair_ids) == len(groups) == len(pairs):
        raise ValueError("pair_ids and groups must match the number of pairs")
    rows = [pair_metrics(pid, t, r, g, max_val) for pid, (t, r), g in zip(pair_ids, pairs, groups)]
    by_group: OrderedDict[str, list[PairMetrics]] = OrderedDict()
    for r in rows:
        by_group.setdefault(r.group, []).append(r)
    report = EvalReport(rows, OrderedDict((g, aggregate(rs)) for g, rs in by_group.items()), aggregate(rows))
    return report
