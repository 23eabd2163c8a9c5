"""Synthetic linear "brains" with known latents.

Responses are ``X = S(L) @ G.T + noise`` where ``L = [h | z | d]`` are sampled
latents (standardized per column before mixing) and ``G`` is a seeded random
mixing matrix. Everything downstream of the brain (ridge decoding,
reconstruction, metrics, ROI analyses) then has ground truth to compare to.

ROIs can be wired to a single latent family, or be "dead" (no signal and no
noise), which is what the ROI analyses are checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import DecodingDataset, RoiMask
from .errors import ConfigError
from .inversion import LatentTriple
from .oracle import GeneratorOracle, GeneratorSpec, split_noise

__all__ = ["RoiWiring", "SyntheticBrainConfig", "SyntheticData", "make_synthetic", "truth_images"]

FAMILIES = ("h", "z", "d")
_WIRINGS = FAMILIES + ("dead", "all")


@dataclass(frozen=True)
class RoiWiring:
    """``size`` consecutive voxels that load only on ``family``.

    ``family`` is one of ``h``, ``z``, ``d``, ``all`` or ``dead``.
    """

    name: str
    family: str
    size: int

    def __post_init__(self):
        if self.family not in _WIRINGS:
            raise ConfigError(f"ROI {self.name}: unknown family {self.family!r}")
        if self.size <= 0:
            raise ConfigError(f"ROI {self.name}: size must be positive")

    @classmethod
    def parse(cls, text: str) -> list["RoiWiring"]:
        """Parse ``"A:h:20, B:d:20"``."""
        out = []
        for part in filter(None, (p.strip() for p in text.split(","))):
            bits = part.split(":")
            if len(bits) != 3:
                raise ConfigError(f"bad ROI wiring {part!r}, expected NAME:FAMILY:SIZE")
            try:
                out.append(cls(bits[0].strip(), bits[1].strip(), int(bits[2])))
            except ValueError as exc:
                raise ConfigError(f"bad ROI size in {part!r}") from exc
        return out


@dataclass(frozen=True)
class SyntheticBrainConfig:
    n_train: int = 200
    n_test: int = 20
    n_voxels: int = 500
    snr: float = 10.0
    repetitions: int = 5
    seed: int = 0
    refinement: float = 0.3
    pure_noise: bool = False
    rois: tuple[RoiWiring, ...] = ()

    def __post_init__(self):
        if self.n_train < 2 or self.n_test < 1:
            raise ConfigError("need n_train >= 2 and n_test >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if not self.snr > 0:
            raise ConfigError("snr must be positive (use inf for noiseless)")
        if sum(r.size for r in self.rois) > self.n_voxels:
            raise ConfigError("ROIs need more voxels than the brain has")

    @property
    def noise_ratio(self) -> float:
        """Noise std as a multiple of signal std."""
        return 0.0 if math.isinf(self.snr) else 1.0 / math.sqrt(self.snr)


@dataclass
class SyntheticData:
    dataset: DecodingDataset
    train_latents: list[LatentTriple]
    test_latents: list[LatentTriple]
    test_ids: list[str]
    mixing: np.ndarray
    family_slices: dict[str, slice] = field(default_factory=dict)


def _sample_latents(rng, n, gen: GeneratorOracle, refinement: float) -> list[LatentTriple]:
    spec = gen.spec
    h = rng.standard_normal((n, spec.h_dim))
    z = rng.standard_normal((n, spec.z_dim))
    head, _ = split_noise(z, spec)
    d = gen.dense_layer(head) + refinement * rng.standard_normal((n, spec.dense_dim))
    return [LatentTriple(h=h[i], z=z[i], d=d[i]) for i in range(n)]


def _stack(latents) -> np.ndarray:
    return np.stack([np.concatenate([t.h, t.z, t.d]) for t in latents])


def make_synthetic(gen: GeneratorOracle, config: SyntheticBrainConfig) -> SyntheticData:
    """Sample latents, mix them into voxel responses and wrap as a dataset."""
    spec: GeneratorSpec = gen.spec
    cfg = config
    streams = [np.random.default_rng([cfg.seed, k]) for k in range(4)]
    train = _sample_latents(streams[0], cfg.n_train, gen, cfg.refinement)
    test = _sample_latents(streams[0], cfg.n_test, gen, cfg.refinement)

    slices = {
        "h": slice(0, spec.h_dim),
        "z": slice(spec.h_dim, spec.h_dim + spec.z_dim),
        "d": slice(spec.h_dim + spec.z_dim, spec.h_dim + spec.z_dim + spec.dense_dim),
    }
    n_lat = slices["d"].stop
    G = streams[1].standard_normal((cfg.n_voxels, n_lat)) / np.sqrt(n_lat)

    masks = []
    start = 0
    for roi in cfg.rois:
        rows = slice(start, start + roi.size)
        if roi.family == "dead":
            G[rows] = 0.0
        elif roi.family != "all":
            keep = slices[roi.family]
            block = np.zeros_like(G[rows])
            block[:, keep] = G[rows, keep] * np.sqrt(n_lat / (keep.stop - keep.start))
            G[rows] = block
        masks.append(RoiMask(roi.name, list(range(rows.start, rows.stop))))
        start = rows.stop

    L_train, L_test = _stack(train), _stack(test)
    mu = L_train.mean(axis=0)
    sd = L_train.std(axis=0)
    sd[sd == 0] = 1.0
    S_train = ((L_train - mu) / sd) @ G.T
    S_test = ((L_test - mu) / sd) @ G.T
    S_test = np.repeat(S_test, cfg.repetitions, axis=0)

    if cfg.pure_noise:
        noise_sd = np.ones(cfg.n_voxels)
        S_train = np.zeros_like(S_train)
        S_test = np.zeros_like(S_test)
    else:
        noise_sd = S_train.std(axis=0) * cfg.noise_ratio
    X_train = S_train + streams[2].standard_normal(S_train.shape) * noise_sd
    X_test = S_test + streams[3].standard_normal(S_test.shape) * noise_sd

    train_ids = [f"tr{i:04d}" for i in range(cfg.n_train)]
    test_ids = [f"te{i:04d}" for i in range(cfg.n_test)]
    trial_ids = [tid for tid in test_ids for _ in range(cfg.repetitions)]
    ds = DecodingDataset(X_train, train_ids, X_test, trial_ids, masks)
    return SyntheticData(ds, train, test, test_ids, G, slices)


def truth_images(gen: GeneratorOracle, latents) -> np.ndarray:
    """Ground-truth images: the generator's output for the true (h, z, d)."""
    spec = gen.spec
    H = np.stack([t.h for t in latents])
    Z = np.stack([t.z for t in latents])
    D = np.stack([t.d for t in latents])
    return gen.generate_from_dense(H, split_noise(Z, spec)[1], D)
