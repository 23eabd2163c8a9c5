"""Two-stage latent extraction.

For a target image, the instance features come straight from the feature
extractor. Stage 1 searches the noise vector with CMA-ES under the
mid-level feature loss alone. Stage 2 overrides the generator's dense
activation, starting from ``dense_layer(z_head)``, and refines it with
RMSProp under a weighted sum of mid-feature, perceptual and downsampled
pixel losses while ``h`` and the noise tail stay fixed.

Each loss has a ``*_and_grad`` twin returning the gradient with respect to
the first (candidate) image, built from the extractor's vector-Jacobian
products.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cmaes
from .dataio import read_matrix, write_matrix
from .errors import (
    GradientUnavailable,
    MissingFile,
    ShapeMismatch,
    Unsupported,
)
from .gradopt import GradOptTrace, RmspropConfig, finite_diff_grad, minimize_grad
from .oracle import FeatureExtractorOracle, GeneratorOracle, split_noise

__all__ = [
    "InversionConfig",
    "LatentTriple",
    "mid_feature_loss",
    "perceptual_distance",
    "pixel_mse_down",
    "stage1_optimize_noise",
    "stage2_optimize_dense",
    "extract_latents",
    "save_latents",
    "load_latents",
]

# dense vectors up to this size may fall back to finite differences
FD_FALLBACK_MAX_DIM = 512
_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class InversionConfig:
    """Budgets and loss weights for both stages.

    Stage 1 runs CMA-ES from the prior centre (mean 0, ``sigma0`` 1). The
    pixel term compares images area-averaged to ``pixel_downsample`` pixels
    a side, capped at the image size.
    """

    sigma0: float = 1.0
    max_evals: int = 10_000
    population: Optional[int] = None
    f_tol: float = 1e-12
    seed: int = 0
    stage2: RmspropConfig = field(default_factory=lambda: RmspropConfig(learning_rate=1e-3, steps=200))
    w_mid: float = 1.0
    w_perc: float = 1.0
    w_pix: float = 1.0
    pixel_downsample: int = 64

    def __post_init__(self):
        if min(self.w_mid, self.w_perc, self.w_pix) < 0:
            raise ValueError("loss weights must be nonnegative")
        if max(self.w_mid, self.w_perc, self.w_pix) <= 0:
            raise ValueError("at least one loss weight must be positive")
        if self.pixel_downsample < 1:
            raise ValueError("pixel_downsample must be positive")

    def cmaes_config(self, z_dim: int) -> cmaes.CmaesConfig:
        return cmaes.CmaesConfig(
            dim=z_dim, sigma0=self.sigma0, mean0=np.zeros(z_dim), population=self.population,
            max_evals=self.max_evals, f_tol=self.f_tol, seed=self.seed,
        )

    def pixel_size(self, image_size: int) -> int:
        return min(self.pixel_downsample, image_size)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class LatentTriple:
    h: np.ndarray
    z: np.ndarray
    d: np.ndarray
    stage1_loss: float = 0.0
    stage2_loss: float = 0.0


# -- losses ------------------------------------------------------------------------

def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-3:] != b.shape[-3:]:
        raise ShapeMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mid_feature_loss(candidate, target, feat: FeatureExtractorOracle) -> float:
    """Mean squared difference of the extractor's mid-level feature maps."""
    a, b = _same_shape(candidate, target)
    diff = feat.mid_features(a) - feat.mid_features(b)
    return np.mean(diff**2, axis=(-3, -2, -1))


def mid_feature_loss_and_grad(candidate, target, feat: FeatureExtractorOracle):
    a, b = _same_shape(candidate, target)
    diff = feat.mid_features(a) - feat.mid_features(b)
    value = float(np.mean(diff**2))
    return value, feat.vjp_mid(a, 2.0 * diff / diff.size)


def _unit(x):
    norm = np.sqrt(np.sum(x * x, axis=-3, keepdims=True))
    norm = np.maximum(norm, _NORM_FLOOR)
    return x / norm, norm


def perceptual_from_features(feats_a: Sequence[np.ndarray], feats_b: Sequence[np.ndarray]) -> float:
    """LPIPS-style distance from two lists of channel-major feature maps."""
    if len(feats_a) != len(feats_b) or not feats_a:
        raise ShapeMismatch("feature lists must be non-empty and of equal length")
    total = 0.0
    for fa, fb in zip(feats_a, feats_b):
        ua, _ = _unit(np.asarray(fa, dtype=np.float64))
        ub, _ = _unit(np.asarray(fb, dtype=np.float64))
        per_loc = np.sum((ua - ub) ** 2, axis=-3)
        total = total + np.mean(per_loc, axis=(-2, -1))
    return total / len(feats_a)


def perceptual_distance(a, b, feat: FeatureExtractorOracle) -> float:
    """Unit-normalize channel vectors per location, average squared distance
    over locations, then average over the extractor's layers."""
    a, b = _same_shape(a, b)
    return perceptual_from_features(feat.multi_layer_features(a), feat.multi_layer_features(b))


def perceptual_distance_and_grad(a, b, feat: FeatureExtractorOracle):
    a, b = _same_shape(a, b)
    la, lb = feat.multi_layer_features(a), feat.multi_layer_features(b)
    n_layers = len(la)
    value = 0.0
    cogs = []
    for fa, fb in zip(la, lb):
        ua, na = _unit(fa)
        ub, _ = _unit(fb)
        diff = ua - ub
        n_loc = fa.shape[-2] * fa.shape[-1]
        value += float(np.sum(diff**2)) / n_loc
        gu = 2.0 * diff / (n_loc * n_layers)
        cogs.append((gu - ua * np.sum(ua * gu, axis=-3, keepdims=True)) / na)
    return value / n_layers, feat.vjp_multi_layer(a, cogs)


@lru_cache(maxsize=32)
def area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages the input interval [i, i+1) * n_in / n_out."""
    if n_out > n_in or n_out < 1:
        raise ShapeMismatch(f"cannot area-downsample {n_in} pixels to {n_out}")
    scale = n_in / n_out
    R = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            R[i, j] = (min(hi, j + 1) - max(lo, j)) / scale
    R.setflags(write=False)
    return R


def area_downsample(image, size: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    Rh = area_matrix(img.shape[-3], size)
    Rw = area_matrix(img.shape[-2], size)
    return np.einsum("ih,...hwc,jw->...ijc", Rh, img, Rw)


def pixel_mse_down(a, b, size: int) -> float:
    """MSE between both images after area-average downsampling to size x size."""
    a, b = _same_shape(a, b)
    return np.mean((area_downsample(a, size) - area_downsample(b, size)) ** 2, axis=(-3, -2, -1))


def pixel_mse_down_and_grad(a, b, size: int):
    a, b = _same_shape(a, b)
    diff = area_downsample(a, size) - area_downsample(b, size)
    Rh = area_matrix(a.shape[-3], size)
    Rw = area_matrix(a.shape[-2], size)
    g = np.einsum("ih,ijc,jw->hwc", Rh, 2.0 * diff / diff.size, Rw)
    return float(np.mean(diff**2)), g


def combined_loss(candidate, target, feat, config: InversionConfig) -> float:
    size = config.pixel_size(np.shape(target)[0])
    total = 0.0
    if config.w_mid:
        total += config.w_mid * float(mid_feature_loss(candidate, target, feat))
    if config.w_perc:
        total += config.w_perc * float(perceptual_distance(candidate, target, feat))
    if config.w_pix:
        total += config.w_pix * float(pixel_mse_down(candidate, target, size))
    return total


def combined_loss_and_grad(candidate, target, feat, config: InversionConfig):
    size = config.pixel_size(np.shape(target)[0])
    total = 0.0
    grad = np.zeros(np.shape(candidate))
    for w, fn in (
        (config.w_mid, lambda: mid_feature_loss_and_grad(candidate, target, feat)),
        (config.w_perc, lambda: perceptual_distance_and_grad(candidate, target, feat)),
        (config.w_pix, lambda: pixel_mse_down_and_grad(candidate, target, size)),
    ):
        if w:
            v, g = fn()
            total += w * v
            grad += w * g
    return total, grad


# -- stages --------------------------------------------------------------------------

def stage1_optimize_noise(target, h, gen: GeneratorOracle, feat: FeatureExtractorOracle,
                          config: InversionConfig):
    """CMA-ES over the noise vector under the mid-feature loss only.

    Returns ``(z_best, loss_best, history)``.
    """
    target = np.asarray(target, dtype=np.float64)
    target_feats = feat.mid_features(target)
    h = np.asarray(h, dtype=np.float64)

    def objective(zs):
        diff = feat.mid_features(gen.generate(h, zs)) - target_feats
        return np.mean(diff**2, axis=(-3, -2, -1))

    z, loss, history = cmaes.minimize(objective, config.cmaes_config(gen.spec.z_dim), vectorized=True)
    return z, float(loss), history


def stage2_optimize_dense(target, h, z, gen: GeneratorOracle, feat: FeatureExtractorOracle,
                          config: InversionConfig):
    """RMSProp over the dense vector with ``h`` and the noise tail fixed.

    Returns ``(d_final, trace)``; ``trace.losses[0]`` is the combined loss of
    the stage-1 reconstruction.
    """
    target = np.asarray(target, dtype=np.float64)
    head, tail = split_noise(z, gen.spec)
    d0 = gen.dense_layer(head)

    def loss_only(d):
        return combined_loss(gen.generate_from_dense(h, tail, d), target, feat, config)

    def analytic(d):
        img = gen.generate_from_dense(h, tail, d)
        value, g_img = combined_loss_and_grad(img, target, feat, config)
        return value, gen.vjp_dense(h, tail, d, g_img)

    def numeric(d):
        return loss_only(d), finite_diff_grad(loss_only, d, 1e-6)

    loss_and_grad = analytic
    try:
        analytic(d0)
    except Unsupported:
        if d0.size > FD_FALLBACK_MAX_DIM:
            raise GradientUnavailable(
                f"oracle declined VJP and dense dim {d0.size} > {FD_FALLBACK_MAX_DIM}; "
                "finite differences would be prohibitively slow"
            ) from None
        loss_and_grad = numeric

    if config.stage2.steps == 0:
        trace = GradOptTrace([float(loss_only(d0))], d0.copy())
        return d0, trace
    trace = minimize_grad(loss_and_grad, d0, config.stage2)
    return trace.params, trace


def _extract_one(image, gen, feat, config):
    image = np.asarray(image, dtype=np.float64)
    h = feat.instance_features(image)
    z, loss1, _ = stage1_optimize_noise(image, h, gen, feat, config)
    d, trace = stage2_optimize_dense(image, h, z, gen, feat, config)
    return LatentTriple(h=h, z=z, d=d, stage1_loss=loss1, stage2_loss=trace.losses[-1])


def extract_latents(images, gen: GeneratorOracle, feat: FeatureExtractorOracle,
                    config: InversionConfig, n_jobs: int = 1) -> list[LatentTriple]:
    """Instance features, stage-1 noise and stage-2 dense vector per image.

    Every image uses the same CMA-ES seed, so each result depends only on
    its own image; output order follows input order.
    """
    images = list(images)
    if not images:
        raise ValueError("need at least one image")
    if n_jobs <= 1:
        return [_extract_one(im, gen, feat, config) for im in images]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(lambda im: _extract_one(im, gen, feat, config), images))


# -- serialization -------------------------------------------------------------------

def save_latents(directory, triples: Sequence[LatentTriple], meta: dict | None = None) -> list[Path]:
    """Write H, Z, D (one row per image) and the stage losses as LDM1 files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "H.ldm": np.stack([t.h for t in triples]),
        "Z.ldm": np.stack([t.z for t in triples]),
        "D.ldm": np.stack([t.d for t in triples]),
        "losses.ldm": np.array([[t.stage1_loss, t.stage2_loss] for t in triples]),
    }
    written = []
    for name, arr in files.items():
        write_matrix(d / name, arr)
        written.append(d / name)
    lines = [f"{k} = {v}\n" for k, v in sorted((meta or {}).items())]
    (d / "meta.txt").write_text("".join(lines), encoding="utf-8")
    written.append(d / "meta.txt")
    return written


def load_latents(directory) -> list[LatentTriple]:
    d = Path(directory)
    if not (d / "H.ldm").is_file():
        raise MissingFile(f"no latent files in {d}")
    H = read_matrix(d / "H.ldm").astype(np.float64)
    Z = read_matrix(d / "Z.ldm").astype(np.float64)
    D = read_matrix(d / "D.ldm").astype(np.float64)
    losses = read_matrix(d / "losses.ldm").astype(np.float64)
    if not (len(H) == len(Z) == len(D) == len(losses)):
        raise ShapeMismatch(f"{d}: latent files have different row counts")
    return [LatentTriple(h, z, dd, float(l1), float(l2)) for h, z, dd, (l1, l2) in zip(H, Z, D, losses)]
