"""Decode latents from brain responses and turn them back into images.

Three ridge models map (optionally z-scored) voxel responses to the instance
features ``h``, the noise vector ``z`` and the dense vector ``d``. Decoded
latents are rendered in one of three ways:

``RANDOM``
    decoded ``h`` with a seeded standard-normal ``z``.
``NOISE``
    decoded ``h`` and ``z``; the dense vector comes from ``z``'s head.
``DENSE``
    decoded ``h``, ``z`` tail and ``d``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import ridge
from .dataio import read_matrix, write_matrix
from .errors import MissingFile, ShapeMismatch, TooFewSamples, UnknownFormat
from .inversion import LatentTriple
from .oracle import GeneratorOracle, GeneratorSpec, split_noise

__all__ = [
    "DEFAULT_LAMBDAS",
    "DecoderSet",
    "Variant",
    "fit_decoders",
    "decode_latents",
    "reconstruct",
    "reconstruct_all",
    "family_correlation",
    "save_decoders",
    "load_decoders",
    "closed_loop",
    "run_experiment",
]

FAMILIES = ("h", "z", "d")
DEFAULT_LAMBDAS = tuple(float(10.0 ** (k / 4)) for k in range(-8, 25))
FORMAT_VERSION = 1


class Variant(enum.Enum):
    RANDOM = "random"
    NOISE = "noise"
    DENSE = "dense"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown variant {text!r}") from None


@dataclass
class DecoderSet:
    model_h: ridge.RidgeModel
    model_z: ridge.RidgeModel
    model_d: ridge.RidgeModel
    spec: GeneratorSpec
    x_shift: np.ndarray
    x_scale: np.ndarray
    config_hash: str = ""
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = {"h": self.spec.h_dim, "z": self.spec.z_dim, "d": self.spec.dense_dim}
        for fam, model in self.models().items():
            if model.n_targets != dims[fam]:
                raise ShapeMismatch(f"{fam} model has {model.n_targets} targets, spec says {dims[fam]}")
        n = {m.n_voxels for m in self.models().values()}
        if len(n) != 1 or self.x_shift.shape != (n.pop(),):
            raise ShapeMismatch("decoders disagree on the number of voxels")

    def models(self) -> dict[str, ridge.RidgeModel]:
        return {"h": self.model_h, "z": self.model_z, "d": self.model_d}

    @property
    def n_voxels(self) -> int:
        return self.model_h.n_voxels

    @property
    def lambdas(self) -> dict[str, float]:
        return {k: m.lam for k, m in self.models().items()}

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_voxels:
            raise ShapeMismatch(f"responses have {x.shape[-1]} voxels, decoders expect {self.n_voxels}")
        return (x - self.x_shift) / self.x_scale


def _latent_matrix(latents: Sequence[LatentTriple], fam: str) -> np.ndarray:
    return np.stack([np.asarray(getattr(t, fam), dtype=np.float64) for t in latents])


def fit_decoders(
    x_train,
    latents: Sequence[LatentTriple],
    spec: GeneratorSpec,
    lam: Optional[float] = None,
    candidates: Sequence[float] = DEFAULT_LAMBDAS,
    k_folds: int = 5,
    zscore: bool = True,
    config_hash: str = "",
) -> DecoderSet:
    """Fit the h, z and d ridge models on the same training rows.

    With ``lam=None`` each family picks its own penalty by contiguous-fold
    cross-validation over ``candidates``.
    """
    x = np.asarray(x_train, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"x_train must be 2-D, got {x.shape}")
    if len(latents) != len(x):
        raise ShapeMismatch(f"{len(x)} response rows but {len(latents)} latent triples")
    if len(x) < 2:
        raise TooFewSamples("need at least two training rows")
    if zscore:
        shift = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        shift = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xs = (x - shift) / scale

    models, cv = {}, {}
    for fam in FAMILIES:
        y = _latent_matrix(latents, fam)
        if lam is None:
            best, errors = ridge.select_lambda(xs, y, candidates, k_folds=k_folds)
            cv[fam] = [float(e) for e in errors]
        else:
            best = float(lam)
        models[fam] = ridge.fit(xs, y, best)
    return DecoderSet(
        models["h"], models["z"], models["d"], spec, shift, scale,
        config_hash=config_hash,
        provenance={"cv_errors": cv, "candidates": [float(c) for c in candidates]},
    )


def decode_latents(decoders: DecoderSet, x_test_avg) -> list[LatentTriple]:
    xs = decoders.transform(np.atleast_2d(x_test_avg))
    preds = {fam: ridge.predict(m, xs) for fam, m in decoders.models().items()}
    return [LatentTriple(h=preds["h"][i], z=preds["z"][i], d=preds["d"][i]) for i in range(len(xs))]


def reconstruct(gen: GeneratorOracle, triple: LatentTriple, variant: Variant, noise_seed=0) -> np.ndarray:
    """Render one decoded triple; ``noise_seed`` is used by RANDOM only."""
    spec = gen.spec
    if variant is Variant.RANDOM:
        z = np.random.default_rng(noise_seed).standard_normal(spec.z_dim)
        return gen.generate(triple.h, z)
    if variant is Variant.NOISE:
        return gen.generate(triple.h, triple.z)
    if variant is Variant.DENSE:
        _, tail = split_noise(triple.z, spec)
        return gen.generate_from_dense(triple.h, tail, triple.d)
    raise ValueError(f"unknown variant {variant!r}")


def reconstruct_all(gen: GeneratorOracle, triples: Sequence[LatentTriple], variant: Variant,
                    seed: int = 0) -> np.ndarray:
    """Render every triple; item ``i`` of RANDOM draws its noise from ``[seed, i]``."""
    return np.stack([reconstruct(gen, t, variant, noise_seed=[seed, i]) for i, t in enumerate(triples)])


def family_correlation(truth: Sequence[LatentTriple], decoded: Sequence[LatentTriple]) -> dict[str, float]:
    """Pearson r per family over all (item, coordinate) entries."""
    out = {}
    for fam in FAMILIES:
        a = _latent_matrix(truth, fam).ravel()
        b = _latent_matrix(decoded, fam).ravel()
        out[fam] = float(np.corrcoef(a, b)[0, 1])
    return out


# -- persistence -------------------------------------------------------------------

def save_decoders(directory, decoders: DecoderSet) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for fam, model in decoders.models().items():
        ridge.save_model(model, d / fam)
    write_matrix(d / "normalization.ldm", np.stack([decoders.x_shift, decoders.x_scale]))
    lines = [f"format_version = {FORMAT_VERSION}", f"config_hash = {decoders.config_hash}"]
    lines += [f"spec.{k} = {v}" for k, v in decoders.spec.as_dict().items()]
    lines += [f"lambda.{k} = {v!r}" for k, v in decoders.lambdas.items()]
    (d / "decoders.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_decoders(directory) -> DecoderSet:
    d = Path(directory)
    meta_path = d / "decoders.txt"
    if not meta_path.is_file():
        raise MissingFile(f"no decoders in {d}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    if meta.get("format_version") != str(FORMAT_VERSION):
        raise UnknownFormat(f"{meta_path}: unsupported format_version {meta.get('format_version')!r}")
    spec = GeneratorSpec(**{k[5:]: int(v) for k, v in meta.items() if k.startswith("spec.")})
    norm = read_matrix(d / "normalization.ldm").astype(np.float64)
    models = {fam: ridge.load_model(d / fam) for fam in FAMILIES}
    return DecoderSet(models["h"], models["z"], models["d"], spec, norm[0], norm[1],
                      config_hash=meta.get("config_hash", ""))


# -- closed loop -------------------------------------------------------------------

def closed_loop(gen: GeneratorOracle, brain, *, lam=None, candidates=DEFAULT_LAMBDAS,
                k_folds: int = 5, zscore: bool = True, random_seed: int = 0,
                variants: Sequence[Variant] = tuple(Variant), feat=None) -> dict:
    """Synthetic brain -> ridge decoders -> reconstructions -> metrics.

    ``brain`` is a :class:`~latentdecode.synthetic.SyntheticBrainConfig`.
    Decoders are trained on the true latents, so every stage has ground truth.
    """
    from .metrics import evaluate
    from .synthetic import make_synthetic, truth_images

    data = make_synthetic(gen, brain)
    ds = data.dataset
    decoders = fit_decoders(ds.x_train, data.train_latents, gen.spec, lam=lam,
                            candidates=candidates, k_folds=k_folds, zscore=zscore)
    x_avg, ids = ds.test_averaged()
    decoded = decode_latents(decoders, x_avg)
    truths = truth_images(gen, data.test_latents)
    reports = {}
    images = {}
    for v in variants:
        recons = reconstruct_all(gen, decoded, v, seed=random_seed)
        images[v] = recons
        reports[v] = evaluate(list(recons), list(truths), feat)
    return {
        "data": data,
        "decoders": decoders,
        "decoded": decoded,
        "truths": truths,
        "images": images,
        "reports": reports,
        "correlation": family_correlation(data.test_latents, decoded),
    }


def run_experiment(config, output_dir=None, threads: int = 1):
    """Run every stage for ``config`` and write all artifacts.

    Thin wrapper around :func:`latentdecode.experiment.run_all`.
    """
    from .experiment import run_all

    return run_all(config, output_dir=output_dir, threads=threads)
