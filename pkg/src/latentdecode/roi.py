"""ROI-level analyses of trained decoders.

Two procedures:

* ROI maximization. Feed a binary "all voxels of this ROI on" pattern to
  the three decoders, rescale the decoded instance features to unit norm and
  render through the dense path.
* Weight mapping. Compare, voxel by voxel, how much the instance-feature and
  dense-vector decoders rely on each voxel (L1 norm of its weight row),
  expressed as a difference of percentile ranks.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataio import RoiMask
from .errors import EmptyMask, IndexOutOfRange, ShapeMismatch, ZeroNormInstance
from .oracle import GeneratorOracle, split_noise
from .pipeline import DecoderSet, decode_latents

__all__ = [
    "VoxelWeightStats",
    "RoiSummary",
    "synth_pattern",
    "maximize_pattern",
    "roi_maximize",
    "weight_percentile_map",
    "percentile_stats",
    "roi_summary",
    "write_weight_csv",
    "write_roi_summary_csv",
    "zero_pattern_image",
]


@dataclass(frozen=True)
class VoxelWeightStats:
    l1_instance: np.ndarray
    l1_dense: np.ndarray
    pct_instance: np.ndarray
    pct_dense: np.ndarray

    @property
    def difference(self) -> np.ndarray:
        return self.pct_instance - self.pct_dense

    def __len__(self):
        return len(self.l1_instance)


@dataclass(frozen=True)
class RoiSummary:
    name: str
    n_voxels: int
    mean_difference: float
    standard_error: float  # across voxels


def synth_pattern(mask: RoiMask, n_voxels: int) -> np.ndarray:
    """1 on the ROI's voxels, 0 elsewhere."""
    idx = np.asarray(mask.voxel_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_voxels):
        raise IndexOutOfRange(f"ROI {mask.name} has voxels outside [0, {n_voxels})")
    pattern = np.zeros(n_voxels)
    pattern[idx] = 1.0
    return pattern


def maximize_pattern(decoders: DecoderSet, gen: GeneratorOracle, pattern) -> np.ndarray:
    """Decode one response pattern and render it with unit-norm instance features."""
    (t,) = decode_latents(decoders, np.asarray(pattern, dtype=np.float64)[None, :])
    norm = np.linalg.norm(t.h)
    if norm == 0.0:
        raise ZeroNormInstance("decoded instance features are exactly zero")
    _, tail = split_noise(t.z, gen.spec)
    return gen.generate_from_dense(t.h / norm, tail, t.d)


def roi_maximize(decoders: DecoderSet, gen: GeneratorOracle, mask: RoiMask) -> np.ndarray:
    return maximize_pattern(decoders, gen, synth_pattern(mask, decoders.n_voxels))


def percentile_stats(w_instance, w_dense) -> VoxelWeightStats:
    """Per-voxel L1 norms of two (n_voxels, n_targets) weight matrices, ranked.

    Percentiles use average ranks for ties, scaled so the smallest voxel
    sits at 0 and the largest at 100.
    """
    wh = np.asarray(w_instance, dtype=np.float64)
    wd = np.asarray(w_dense, dtype=np.float64)
    if wh.ndim != 2 or wd.ndim != 2 or wh.shape[0] != wd.shape[0]:
        raise ShapeMismatch(f"weight matrices must share the voxel axis: {wh.shape} vs {wd.shape}")
    a = np.abs(wh).sum(axis=1)
    b = np.abs(wd).sum(axis=1)
    return VoxelWeightStats(a, b, _percentile(a), _percentile(b))


def _percentile(v: np.ndarray) -> np.ndarray:
    n = len(v)
    if n == 1:
        return np.array([50.0])
    return 100.0 * (rankdata(v, method="average") - 1.0) / (n - 1)


def weight_percentile_map(decoders: DecoderSet) -> VoxelWeightStats:
    return percentile_stats(decoders.model_h.weights, decoders.model_d.weights)


def roi_summary(stats: VoxelWeightStats, masks: Sequence[RoiMask]) -> list[RoiSummary]:
    """Mean percentile difference per ROI, with its standard error across voxels."""
    diff = stats.difference
    out = []
    for mask in masks:
        idx = np.asarray(mask.voxel_indices, dtype=np.int64)
        if idx.size == 0:
            raise EmptyMask(f"ROI {mask.name} is empty")
        if idx.max() >= len(diff):
            raise IndexOutOfRange(f"ROI {mask.name} has voxels outside [0, {len(diff)})")
        vals = diff[idx]
        se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(RoiSummary(mask.name, len(vals), float(vals.mean()), se))
    return out


def write_weight_csv(path, stats: VoxelWeightStats) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["voxel", "l1_instance", "l1_dense", "pct_instance", "pct_dense", "diff"])
        for v in range(len(stats)):
            w.writerow([v] + [repr(float(x[v])) for x in (
                stats.l1_instance, stats.l1_dense, stats.pct_instance, stats.pct_dense, stats.difference)])


def write_roi_summary_csv(path, summaries: Sequence[RoiSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["roi", "n_voxels", "mean_diff", "se_across_voxels"])
        for s in summaries:
            w.writerow([s.name, s.n_voxels, repr(s.mean_difference), repr(s.standard_error)])


def zero_pattern_image(decoders: DecoderSet, gen: GeneratorOracle) -> np.ndarray:
    """Reference image for an all-zero response pattern."""
    return maximize_pattern(decoders, gen, np.zeros(decoders.n_voxels))
