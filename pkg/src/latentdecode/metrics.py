"""Reconstruction quality measures.

* :func:`pixel_correlation` - Pearson r over all pixel values.
* :func:`two_way_identification` - percentage of (item, distractor) pairs in
  which a reconstruction is closer to its own ground truth.
* :func:`ssim` - Gaussian-window SSIM (11x11, sigma 1.5, K1=0.01, K2=0.03,
  L=1), averaged over channels and fully-inside window positions.
* :func:`feature_distance` - cosine distance between instance features.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageTooSmall, ShapeMismatch, TooFewItems, ZeroNorm, ZeroVariance

__all__ = [
    "MetricReport",
    "pixel_correlation",
    "two_way_identification",
    "two_way_per_item",
    "ssim",
    "feature_distance",
    "cosine_distance",
    "evaluate",
    "write_metric_csv",
]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_RANGE = 1.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def pixel_correlation(a, b) -> float:
    a, b = _pair(a, b)
    x = a.ravel() - a.mean()
    y = b.ravel() - b.mean()
    sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("pixel correlation is undefined for a constant image")
    return float((x @ y) / (sx * sy))


def _similarity_matrix(recons, truths, similarity):
    n = len(recons)
    if n != len(truths):
        raise ShapeMismatch(f"{n} reconstructions but {len(truths)} ground truths")
    if n < 2:
        raise TooFewItems("two-way identification needs at least two items")
    return np.array([[similarity(recons[i], truths[j]) for j in range(n)] for i in range(n)])


def two_way_per_item(recons, truths, similarity: Callable = pixel_correlation) -> np.ndarray:
    """Per-item share (in %) of distractors beaten; ties count one half."""
    S = _similarity_matrix(recons, truths, similarity)
    own = np.diag(S)[:, None]
    wins = (own > S).astype(float) + 0.5 * (own == S)
    np.fill_diagonal(wins, 0.0)
    return 100.0 * wins.sum(axis=1) / (len(S) - 1)


def two_way_identification(recons, truths, similarity: Callable = pixel_correlation) -> float:
    """Mean over all ordered pairs (i, j), j != i, of [sim(r_i, t_i) > sim(r_i, t_j)]."""
    return float(np.mean(two_way_per_item(recons, truths, similarity)))


def _gaussian_window() -> np.ndarray:
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * SSIM_SIGMA**2))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of an (H, W, C) array."""
    x = sliding_window_view(x, len(k), axis=0) @ k
    return sliding_window_view(x, len(k), axis=1) @ k


def _shifted_mean(x: np.ndarray) -> float:
    # constant maps come back exactly
    ref = x.flat[0]
    return float(ref + np.mean(x - ref))


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ImageTooSmall(f"SSIM needs images at least {SSIM_WINDOW} px on a side")
    k = _gaussian_window()
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    # shift by one pixel value per channel; moments are shift-invariant
    sa, sb = a[:1, :1, :], b[:1, :1, :]
    xa, xb = a - sa, b - sb
    fa, fb = _filter_valid(xa, k), _filter_valid(xb, k)
    var_a = _filter_valid(xa * xa, k) - fa * fa
    var_b = _filter_valid(xb * xb, k) - fb * fb
    cov = _filter_valid(xa * xb, k) - fa * fb
    mu_a, mu_b = fa + sa, fb + sb
    lum = (2.0 * (mu_a * mu_b) + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return _shifted_mean(lum * cs)


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNorm("cosine distance is undefined for a zero vector")
    return float(1.0 - (u / nu) @ (v / nv))


def feature_distance(a, b, feat) -> float:
    """1 - cosine similarity of the two images' instance features."""
    a, b = _pair(a, b)
    return cosine_distance(feat.instance_features(a), feat.instance_features(b))


@dataclass
class MetricReport:
    pix_comp: float
    ssim_mean: float
    feature_distance_mean: float
    pix_comp_items: list[float] = field(default_factory=list)
    ssim_items: list[float] = field(default_factory=list)
    feature_distance_items: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, float]:
        return {
            "pix_comp": self.pix_comp,
            "ssim": self.ssim_mean,
            "feature_distance": self.feature_distance_mean,
        }


def evaluate(recons: Sequence, truths: Sequence, feat=None) -> MetricReport:
    """All measures for one set of reconstructions.

    ``feat`` may be None, in which case feature distances are reported as NaN.
    """
    pix_items = two_way_per_item(recons, truths)
    ssim_items = [ssim(r, t) for r, t in zip(recons, truths)]
    if feat is not None:
        fd_items = [feature_distance(r, t, feat) for r, t in zip(recons, truths)]
    else:
        fd_items = [float("nan")] * len(recons)
    return MetricReport(
        pix_comp=float(np.mean(pix_items)),
        ssim_mean=float(np.mean(ssim_items)),
        feature_distance_mean=float(np.mean(fd_items)),
        pix_comp_items=[float(v) for v in pix_items],
        ssim_items=ssim_items,
        feature_distance_items=fd_items,
    )


def write_metric_csv(path, reports: Mapping[str, MetricReport], item_ids: Sequence[str]) -> None:
    """Rows ``item_id,metric,variant,value``; item_id ``ALL`` holds the means."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "metric", "variant", "value"])
        for variant, rep in reports.items():
            per_item = {
                "pix_comp": rep.pix_comp_items,
                "ssim": rep.ssim_items,
                "feature_distance": rep.feature_distance_items,
            }
            for metric, values in per_item.items():
                for item, v in zip(item_ids, values):
                    w.writerow([item, metric, variant, repr(float(v))])
            for metric, v in rep.summary().items():
                w.writerow(["ALL", metric, variant, repr(float(v))])
