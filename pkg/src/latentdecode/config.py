"""Experiment configuration files.

A config is a UTF-8 INI file with one key per line::

    [oracle]
    seed = 0

    [data.synthetic]
    n_train = 8
    n_test = 4
    seed = 1

    [inversion]
    seed = 0
    max_evals = 300

    [decode]
    random_seed = 0

    [output]
    dir = out

Exactly one of ``[data.synthetic]`` and ``[data.paths]`` must be present.
Every seed must be spelled out. Relative paths are resolved against the
config file's directory.
"""
from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .gradopt import RmspropConfig
from .inversion import InversionConfig
from .pipeline import DEFAULT_LAMBDAS, Variant
from .synthetic import RoiWiring, SyntheticBrainConfig

__all__ = ["OracleSection", "PathsSection", "SyntheticSection", "RidgeSection",
           "ExperimentConfig", "load_config", "parse_config"]

_KNOWN = {
    "oracle": {"seed", "preset", "width"},
    "data.synthetic": {"n_train", "n_test", "n_voxels", "snr", "repetitions", "seed",
                       "refinement", "pure_noise", "rois", "train_latents"},
    "data.paths": {"x_train", "train_ids", "x_test", "test_ids", "train_images",
                   "test_images", "rois"},
    "inversion": {"seed", "sigma0", "max_evals", "population", "f_tol", "stage2_steps",
                  "stage2_learning_rate", "stage2_decay", "w_mid", "w_perc", "w_pix",
                  "pixel_downsample"},
    "ridge": {"lambda", "candidates", "folds", "zscore"},
    "decode": {"random_seed", "variants"},
    "metrics": {"enabled", "feature_distance"},
    "roi": {"enabled"},
    "output": {"dir"},
}


@dataclass(frozen=True)
class OracleSection:
    seed: int
    preset: str = "toy"
    width: int = 12


@dataclass(frozen=True)
class SyntheticSection:
    brain: SyntheticBrainConfig
    train_latents: str = "extracted"  # or "true"


@dataclass(frozen=True)
class PathsSection:
    x_train: Path
    train_ids: Path
    x_test: Path
    test_ids: Path
    train_images: Path
    test_images: Optional[Path] = None
    rois: Optional[Path] = None


@dataclass(frozen=True)
class RidgeSection:
    lam: Optional[float] = None
    candidates: tuple[float, ...] = DEFAULT_LAMBDAS
    folds: int = 5
    zscore: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    oracle: OracleSection
    data: object  # SyntheticSection | PathsSection
    inversion: InversionConfig
    ridge: RidgeSection
    random_seed: int
    variants: tuple[Variant, ...]
    metrics_enabled: bool
    feature_distance: bool
    roi_enabled: bool
    output_dir: Path
    digest: str = field(default="", compare=False)

    @property
    def synthetic(self) -> bool:
        return isinstance(self.data, SyntheticSection)


class _Section:
    """Typed, error-reporting view of one config section."""

    def __init__(self, parser, name):
        self.name = name
        self.raw = parser[name] if parser.has_section(name) else {}

    def _get(self, key):
        return self.raw.get(key)

    def has(self, key):
        return self._get(key) is not None

    def _convert(self, key, fn, kind, default, required):
        text = self._get(key)
        if text is None:
            if required:
                raise ConfigError(f"[{self.name}] {key} is required")
            return default
        try:
            return fn(text.strip())
        except (TypeError, ValueError):
            raise ConfigError(f"[{self.name}] {key} = {text!r} is not a valid {kind}") from None

    def int(self, key, default=None, required=False):
        return self._convert(key, int, "integer", default, required)

    def float(self, key, default=None, required=False):
        return self._convert(key, float, "number", default, required)

    def bool(self, key, default=False):
        def conv(t):
            low = t.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(t)
        return self._convert(key, conv, "boolean", default, False)

    def str(self, key, default=None, required=False):
        return self._convert(key, str, "string", default, required)


def _path(base: Path, text: Optional[str]) -> Optional[Path]:
    if text is None:
        return None
    p = Path(text)
    return p if p.is_absolute() else (base / p)


def _canonical(parser) -> str:
    lines = []
    for sec in sorted(parser.sections()):
        lines.append(f"[{sec}]")
        for key in sorted(parser[sec]):
            lines.append(f"{key} = {parser[sec][key].strip()}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base_dir=".") -> ExperimentConfig:
    """Parse and validate config text; raise ConfigError on any problem."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}".splitlines()[0]) from None
    for sec in parser.sections():
        if sec not in _KNOWN:
            raise ConfigError(f"unknown section [{sec}]")
        unknown = set(parser[sec]) - _KNOWN[sec]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(sorted(unknown))}")
    base = Path(base_dir)

    osec = _Section(parser, "oracle")
    oracle = OracleSection(seed=osec.int("seed", required=True),
                           preset=osec.str("preset", "toy"), width=osec.int("width", 12))
    if oracle.preset != "toy":
        raise ConfigError(f"[oracle] preset {oracle.preset!r} is not available; only 'toy' ships")

    has_syn = parser.has_section("data.synthetic")
    has_paths = parser.has_section("data.paths")
    if has_syn == has_paths:
        raise ConfigError("exactly one of [data.synthetic] and [data.paths] must be present")
    if has_syn:
        s = _Section(parser, "data.synthetic")
        try:
            brain = SyntheticBrainConfig(
                n_train=s.int("n_train", 200), n_test=s.int("n_test", 20),
                n_voxels=s.int("n_voxels", 500), snr=s.float("snr", 10.0),
                repetitions=s.int("repetitions", 5), seed=s.int("seed", required=True),
                refinement=s.float("refinement", 0.3), pure_noise=s.bool("pure_noise", False),
                rois=tuple(RoiWiring.parse(s.str("rois", ""))),
            )
        except ValueError as exc:
            raise ConfigError(f"[data.synthetic] {exc}") from None
        mode = s.str("train_latents", "extracted")
        if mode not in ("extracted", "true"):
            raise ConfigError("[data.synthetic] train_latents must be 'extracted' or 'true'")
        data = SyntheticSection(brain, mode)
    else:
        p = _Section(parser, "data.paths")
        data = PathsSection(
            x_train=_path(base, p.str("x_train", required=True)),
            train_ids=_path(base, p.str("train_ids", required=True)),
            x_test=_path(base, p.str("x_test", required=True)),
            test_ids=_path(base, p.str("test_ids", required=True)),
            train_images=_path(base, p.str("train_images", required=True)),
            test_images=_path(base, p.str("test_images")),
            rois=_path(base, p.str("rois")),
        )

    inv = _Section(parser, "inversion")
    try:
        inversion = InversionConfig(
            sigma0=inv.float("sigma0", 1.0),
            max_evals=inv.int("max_evals", 10_000),
            population=inv.int("population"),
            f_tol=inv.float("f_tol", 1e-12),
            seed=inv.int("seed", required=True),
            stage2=RmspropConfig(
                learning_rate=inv.float("stage2_learning_rate", 1e-3),
                decay=inv.float("stage2_decay", 0.9),
                steps=inv.int("stage2_steps", 200),
            ),
            w_mid=inv.float("w_mid", 1.0),
            w_perc=inv.float("w_perc", 1.0),
            w_pix=inv.float("w_pix", 1.0),
            pixel_downsample=inv.int("pixel_downsample", 64),
        )
    except ValueError as exc:
        raise ConfigError(f"[inversion] {exc}") from None
    if inversion.sigma0 <= 0 or not math.isfinite(inversion.sigma0):
        raise ConfigError("[inversion] sigma0 must be a positive number")

    r = _Section(parser, "ridge")
    lam = r.float("lambda")
    cand_text = r.str("candidates")
    try:
        cands = tuple(float(c) for c in cand_text.split(",")) if cand_text else DEFAULT_LAMBDAS
    except ValueError:
        raise ConfigError(f"[ridge] candidates = {cand_text!r} is not a list of numbers") from None
    if lam is not None and lam < 0 or any(c < 0 for c in cands):
        raise ConfigError("[ridge] penalties must be nonnegative")
    ridge_sec = RidgeSection(lam=lam, candidates=cands, folds=r.int("folds", 5),
                             zscore=r.bool("zscore", True))

    dsec = _Section(parser, "decode")
    random_seed = dsec.int("random_seed", required=True)
    try:
        variants = tuple(Variant.parse(v) for v in dsec.str("variants", "random,noise,dense").split(","))
    except ValueError as exc:
        raise ConfigError(f"[decode] {exc}") from None

    msec = _Section(parser, "metrics")
    rsec = _Section(parser, "roi")
    roi_enabled = rsec.bool("enabled", False)
    if roi_enabled:
        if has_paths and data.rois is None:
            raise ConfigError("[roi] enabled but [data.paths] rois is not set")
        if has_paths and not data.rois.is_file():
            raise ConfigError(f"[roi] enabled but ROI file {data.rois} does not exist")
        if has_syn and not data.brain.rois:
            raise ConfigError("[roi] enabled but [data.synthetic] defines no rois")

    out = _Section(parser, "output").str("dir", required=True)
    canonical = _canonical(parser)
    return ExperimentConfig(
        oracle=oracle,
        data=data,
        inversion=inversion,
        ridge=ridge_sec,
        random_seed=random_seed,
        variants=variants,
        metrics_enabled=msec.bool("enabled", True),
        feature_distance=msec.bool("feature_distance", True),
        roi_enabled=roi_enabled,
        output_dir=_path(base, out),
        digest=hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
    )


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file {p} does not exist") from None
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    return parse_config(text, base_dir=p.parent)
