"""Generator and feature-extractor interfaces, plus small deterministic toys.

The generator follows the instance-conditioned layout: an instance feature
vector ``h`` is embedded, the noise vector ``z`` is split into ``levels``
chunks of ``level_dim`` entries, the first chunk ("head") goes through the
first dense layer, and every later chunk conditions one upsampling block
together with the embedding. The dense activation can be overridden, which
is what the second inversion stage optimizes.

Flat dense vectors are laid out channel-major, ``(channels, height, width)``.
Images are ``(H, W, 3)`` arrays in [0, 1]; feature maps are returned
channel-major, ``(C, h, w)``. All toy methods accept extra leading batch
dimensions.
"""
from __future__ import annotations

import abc
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import _layers as L
from .errors import NonFiniteValue, ShapeMismatch, Unsupported

__all__ = [
    "GeneratorSpec",
    "GeneratorOracle",
    "FeatureExtractorOracle",
    "ToyGenerator",
    "ToyFeatureExtractor",
    "split_noise",
    "join_noise",
]


@dataclass(frozen=True)
class GeneratorSpec:
    h_dim: int = 64
    z_dim: int = 35
    levels: int = 7
    level_dim: int = 5
    embed_dim: int = 16
    dense_channels: int = 24
    dense_h: int = 2
    dense_w: int = 2
    image_size: int = 32

    def __post_init__(self):
        if self.z_dim != self.levels * self.level_dim:
            raise ValueError(f"z_dim {self.z_dim} != levels {self.levels} x level_dim {self.level_dim}")
        for name in ("h_dim", "embed_dim", "dense_channels", "dense_h", "dense_w", "image_size", "levels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def paper_scale(cls) -> "GeneratorSpec":
        """Dimensions of the full-size 256 px instance-conditioned BigGAN."""
        return cls(h_dim=2048, z_dim=119, levels=7, level_dim=17, embed_dim=512,
                   dense_channels=1536, dense_h=4, dense_w=4, image_size=256)

    @classmethod
    def toy(cls) -> "GeneratorSpec":
        return cls()

    @property
    def dense_dim(self) -> int:
        return self.dense_channels * self.dense_h * self.dense_w

    @property
    def tail_dim(self) -> int:
        return self.z_dim - self.level_dim

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.image_size, self.image_size, 3)

    def as_dict(self) -> dict:
        return asdict(self)


def split_noise(z, spec: GeneratorSpec):
    """Return ``(head, tail)`` views of a noise vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != spec.z_dim:
        raise ShapeMismatch(f"noise vector has {z.shape[-1]} entries, expected {spec.z_dim}")
    return z[..., :spec.level_dim], z[..., spec.level_dim:]


def join_noise(head, tail) -> np.ndarray:
    return np.concatenate([np.asarray(head, float), np.asarray(tail, float)], axis=-1)


def _check_last(a, n, what):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0 or a.shape[-1] != n:
        raise ShapeMismatch(f"{what} must have {n} entries in its last axis, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{what} contains NaN or Inf")
    return a


class GeneratorOracle(abc.ABC):
    """Conditioned generator: ``(h, z) -> image``."""

    spec: GeneratorSpec

    @abc.abstractmethod
    def dense_layer(self, z_head) -> np.ndarray:
        """First dense layer applied to the noise head; flat dense vector."""

    @abc.abstractmethod
    def generate_from_dense(self, h, z_tail, d) -> np.ndarray:
        """Image with the first-layer activation overridden by ``d``."""

    def generate(self, h, z) -> np.ndarray:
        head, tail = split_noise(z, self.spec)
        return self.generate_from_dense(h, tail, self.dense_layer(head))

    def vjp_dense(self, h, z_tail, d, image_cogradient) -> np.ndarray:
        """Gradient of ``<generate_from_dense(h, z_tail, d), cogradient>`` over ``d``."""
        raise Unsupported(f"{type(self).__name__} does not provide vector-Jacobian products")

    def describe(self) -> dict:
        return {"kind": type(self).__name__, **self.spec.as_dict()}


class FeatureExtractorOracle(abc.ABC):
    """Image feature extractor with instance, mid-level and multi-layer outputs."""

    @abc.abstractmethod
    def instance_features(self, image) -> np.ndarray:
        ...

    @abc.abstractmethod
    def mid_features(self, image) -> np.ndarray:
        ...

    @abc.abstractmethod
    def multi_layer_features(self, image) -> list[np.ndarray]:
        ...

    def vjp_mid(self, image, cogradient) -> np.ndarray:
        raise Unsupported(f"{type(self).__name__} does not provide vector-Jacobian products")

    def vjp_multi_layer(self, image, cogradients: Sequence[np.ndarray]) -> np.ndarray:
        raise Unsupported(f"{type(self).__name__} does not provide vector-Jacobian products")

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


# -- toy generator ---------------------------------------------------------------

class ToyGenerator(GeneratorOracle):
    """Small seeded stand-in with the instance-conditioned wiring.

    ``embed = h @ E + e``; ``dense = tanh(head @ Wd + bd)``; then one block per
    remaining noise level, each ``tanh(x * (1 + c @ G) + c @ H)`` followed by
    an optional 2x nearest upsampling and a 3x3 convolution, where ``c`` is the
    embedding concatenated with that level's noise chunk. A 1x1 convolution
    and a sigmoid give the RGB image.

    Weights are drawn once from ``seed`` and never change.
    """

    ARCH_VERSION = 1

    def __init__(self, spec: GeneratorSpec | None = None, seed: int = 0, width: int = 12):
        self.spec = spec or GeneratorSpec.toy()
        self.seed = int(seed)
        self.width = int(width)
        s = self.spec
        n_blocks = s.levels - 1
        if s.dense_h != s.dense_w:
            raise ValueError("toy generator needs a square dense layer")
        ratio = s.image_size // s.dense_h
        if ratio * s.dense_h != s.image_size or ratio & (ratio - 1):
            raise ValueError("image_size / dense_h must be a power of two")
        n_up = int(np.log2(ratio))
        if n_up > n_blocks:
            raise ValueError(f"need {n_up} upsampling blocks but only {n_blocks} noise levels")
        # full-resolution work only in the last block
        self.upsample = [k >= n_blocks - n_up for k in range(n_blocks)]

        rng = np.random.default_rng([self.seed, self.ARCH_VERSION, 0x6E6E])
        cond_dim = s.embed_dim + s.level_dim
        self.E = rng.standard_normal((s.h_dim, s.embed_dim)) / np.sqrt(s.h_dim)
        self.e = 0.1 * rng.standard_normal(s.embed_dim)
        self.Wd = 1.2 * rng.standard_normal((s.level_dim, s.dense_dim)) / np.sqrt(s.level_dim)
        self.bd = 0.2 * rng.standard_normal(s.dense_dim)
        self.blocks = []
        c_in = s.dense_channels
        for k in range(n_blocks):
            G = 0.4 * rng.standard_normal((cond_dim, c_in)) / np.sqrt(cond_dim)
            H = 0.6 * rng.standard_normal((cond_dim, c_in)) / np.sqrt(cond_dim)
            W = 1.6 * rng.standard_normal((9 * c_in, self.width)) / np.sqrt(9 * c_in)
            b = 0.1 * rng.standard_normal(self.width)
            self.blocks.append((G, H, W, b, c_in))
            c_in = self.width
        self.Wout = 2.0 * rng.standard_normal((c_in, 3)) / np.sqrt(c_in)
        self.bout = 0.1 * rng.standard_normal(3)

    def describe(self) -> dict:
        return {"kind": "toy", "seed": self.seed, "width": self.width,
                "arch_version": self.ARCH_VERSION, **self.spec.as_dict()}

    # forward -----------------------------------------------------------------

    def dense_preactivation(self, z_head) -> np.ndarray:
        """Affine part of the dense layer (test hook)."""
        z_head = _check_last(z_head, self.spec.level_dim, "z_head")
        return z_head @ self.Wd + self.bd

    def dense_layer(self, z_head) -> np.ndarray:
        return np.tanh(self.dense_preactivation(z_head))

    def _dense_to_map(self, d):
        s = self.spec
        d = _check_last(d, s.dense_dim, "dense vector")
        m = d.reshape(d.shape[:-1] + (s.dense_channels, s.dense_h, s.dense_w))
        return np.moveaxis(m, -3, -1)

    def _conditions(self, h, z_tail):
        s = self.spec
        h = _check_last(h, s.h_dim, "instance features")
        z_tail = _check_last(z_tail, s.tail_dim, "z_tail")
        emb = h @ self.E + self.e
        levels = z_tail.reshape(z_tail.shape[:-1] + (s.levels - 1, s.level_dim))
        batch = np.broadcast_shapes(emb.shape[:-1], levels.shape[:-2])
        emb = np.broadcast_to(emb, batch + emb.shape[-1:])
        conds = []
        for k in range(s.levels - 1):
            lvl = np.broadcast_to(levels[..., k, :], batch + (s.level_dim,))
            conds.append(np.concatenate([emb, lvl], axis=-1))
        return conds

    def _forward(self, h, z_tail, d, keep=False):
        x = self._dense_to_map(d)
        conds = self._conditions(h, z_tail)
        cache = []
        for (G, H, W, b, c_in), up, c in zip(self.blocks, self.upsample, conds):
            gamma = 1.0 + c @ G
            beta = c @ H
            a = np.tanh(x * gamma[..., None, None, :] + beta[..., None, None, :])
            if keep:
                cache.append((gamma, a))
            if up:
                a = L.upsample2(a)
            x = L.conv3x3(a, W, b)
        t = np.tanh(x)
        img = L.sigmoid(t @ self.Wout + self.bout)
        if keep:
            cache.append(t)
            return img, cache
        return img

    def generate_from_dense(self, h, z_tail, d) -> np.ndarray:
        img = self._forward(h, z_tail, d)
        if not np.all(np.isfinite(img)):
            raise NonFiniteValue("generator produced non-finite pixels")
        return img

    # reverse mode ------------------------------------------------------------

    def vjp_dense(self, h, z_tail, d, image_cogradient) -> np.ndarray:
        img, cache = self._forward(h, z_tail, d, keep=True)
        g = np.asarray(image_cogradient, dtype=np.float64)
        if g.shape != img.shape:
            raise ShapeMismatch(f"cogradient shape {g.shape} != image shape {img.shape}")
        t = cache.pop()
        g = (g * img * (1.0 - img)) @ self.Wout.T
        g = g * (1.0 - t * t)
        for (G, H, W, b, c_in), up, (gamma, a) in zip(
            reversed(self.blocks), reversed(self.upsample), reversed(cache)
        ):
            g = L.conv3x3_backward(g, W, c_in)
            if up:
                g = L.upsample2_backward(g)
            g = g * (1.0 - a * a) * gamma[..., None, None, :]
        # back to the channel-major flat layout
        g = np.moveaxis(g, -1, -3)
        return g.reshape(g.shape[:-3] + (self.spec.dense_dim,))


# -- toy feature extractor -------------------------------------------------------

class ToyFeatureExtractor(FeatureExtractorOracle):
    """Three conv/tanh/avg-pool stages on ``image - 0.5``.

    Stage outputs are the multi-layer features (in network order); the
    second stage doubles as the mid-level map. Instance features are an
    affine map of the spatially pooled second and third stages.
    """

    ARCH_VERSION = 1
    CHANNELS = (8, 12, 16)
    MID_LAYER = 1

    def __init__(self, h_dim: int = 64, seed: int = 0, image_size: int = 32):
        if image_size % 8:
            raise ValueError("toy extractor needs image_size divisible by 8")
        self.h_dim = int(h_dim)
        self.seed = int(seed)
        self.image_size = int(image_size)
        rng = np.random.default_rng([self.seed, self.ARCH_VERSION, 0xFEA7])
        self.convs = []
        c_in = 3
        for c_out in self.CHANNELS:
            W = 1.5 * rng.standard_normal((9 * c_in, c_out)) / np.sqrt(9 * c_in)
            b = 0.1 * rng.standard_normal(c_out)
            self.convs.append((W, b, c_in))
            c_in = c_out
        pooled = self.CHANNELS[1] + self.CHANNELS[2]
        self.A = 3.0 * rng.standard_normal((pooled, self.h_dim)) / np.sqrt(pooled)
        self.a = 0.1 * rng.standard_normal(self.h_dim)

    def describe(self) -> dict:
        return {"kind": "toy", "seed": self.seed, "h_dim": self.h_dim,
                "image_size": self.image_size, "arch_version": self.ARCH_VERSION}

    def _check(self, image):
        img = np.asarray(image, dtype=np.float64)
        if img.ndim < 3 or img.shape[-3:] != (self.image_size, self.image_size, 3):
            raise ShapeMismatch(
                f"expected images of shape {(self.image_size, self.image_size, 3)}, got {img.shape}"
            )
        if not np.all(np.isfinite(img)):
            raise NonFiniteValue("image contains NaN or Inf")
        return img

    def _stages(self, image, upto=None):
        x = self._check(image) - 0.5
        outs = []
        for k, (W, b, _) in enumerate(self.convs):
            x = L.avgpool2(np.tanh(L.conv3x3(x, W, b)))
            outs.append(x)
            if upto is not None and k == upto:
                break
        return outs

    @staticmethod
    def _chw(x):
        return np.moveaxis(x, -1, -3)

    def instance_features(self, image) -> np.ndarray:
        outs = self._stages(image)
        pooled = np.concatenate([outs[1].mean(axis=(-3, -2)), outs[2].mean(axis=(-3, -2))], axis=-1)
        return pooled @ self.A + self.a

    def mid_features(self, image) -> np.ndarray:
        return self._chw(self._stages(image, upto=self.MID_LAYER)[self.MID_LAYER])

    def multi_layer_features(self, image) -> list[np.ndarray]:
        return [self._chw(x) for x in self._stages(image)]

    def _backward(self, image, cogradients: dict[int, np.ndarray]) -> np.ndarray:
        """Input gradient given channel-major cogradients for some stages."""
        deepest = max(cogradients)
        x = self._check(image) - 0.5
        acts, pooled = [], []
        for W, b, _ in self.convs[: deepest + 1]:
            t = np.tanh(L.conv3x3(x, W, b))
            x = L.avgpool2(t)
            acts.append(t)
            pooled.append(x)
        g = None
        for k in range(deepest, -1, -1):
            W, _, c_in = self.convs[k]
            if k in cogradients:
                ck = np.moveaxis(np.asarray(cogradients[k], dtype=np.float64), -3, -1)
                if ck.shape != pooled[k].shape:
                    raise ShapeMismatch(
                        f"cogradient for layer {k} has shape {np.moveaxis(ck, -1, -3).shape}"
                    )
                g = ck if g is None else g + ck
            t = acts[k]
            g = L.avgpool2_backward(g) * (1.0 - t * t)
            g = L.conv3x3_backward(g, W, c_in)
        return g

    def vjp_mid(self, image, cogradient) -> np.ndarray:
        return self._backward(image, {self.MID_LAYER: cogradient})

    def vjp_multi_layer(self, image, cogradients: Sequence[np.ndarray]) -> np.ndarray:
        if len(cogradients) != len(self.convs):
            raise ShapeMismatch(f"expected {len(self.convs)} cogradients, got {len(cogradients)}")
        return self._backward(image, dict(enumerate(cogradients)))
