"""Command steps and the output directory they share.

Layout of an output directory::

    latents/train/   H.ldm Z.ldm D.ldm losses.ldm ids.txt meta.txt   (extract)
    decoders/        h/ z/ d/ normalization.ldm decoders.txt          (fit)
    decoded/         H.ldm Z.ldm D.ldm ids.txt                        (decode)
    recon/           <stimulus_id>_<variant>.ppm                      (decode)
    metrics.csv                                                       (evaluate)
    roi/             weights.csv summary.csv <roi>.ppm                (roi)
    manifest.txt     config digest + sha256 of every other file

Each step writes into a private staging directory first and moves its files
into place only once everything succeeded, so a failing step leaves no
partial output behind. Nothing in an output directory depends on the clock.
"""
from __future__ import annotations

import hashlib
import logging
import os
import shutil
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, PathsSection
from .dataio import (
    DecodingDataset,
    read_ids,
    read_matrix,
    read_ppm,
    read_roi_masks,
    write_ids,
    write_matrix,
    write_ppm,
)
from .errors import ConfigError, IoFailure, UpstreamMissing
from .inversion import LatentTriple, extract_latents, load_latents, save_latents
from .metrics import MetricReport, evaluate, write_metric_csv
from .oracle import GeneratorSpec, ToyFeatureExtractor, ToyGenerator
from .pipeline import (
    decode_latents,
    family_correlation,
    fit_decoders,
    load_decoders,
    reconstruct_all,
    save_decoders,
)
from .roi import roi_maximize, roi_summary, weight_percentile_map, write_roi_summary_csv, write_weight_csv
from .synthetic import make_synthetic, truth_images

__all__ = ["Workspace", "Inputs", "ExperimentReport", "load_inputs", "step_extract", "step_fit",
           "step_decode", "step_evaluate", "step_roi", "run_all", "COMMANDS"]

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
LOCK = ".lock"


# -- output directory ------------------------------------------------------------

class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @contextmanager
    def locked(self):
        self.root.mkdir(parents=True, exist_ok=True)
        lock = self.path(LOCK)
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IoFailure(f"{self.root} is in use by another command (remove {lock} if stale)") from None
        os.close(fd)
        try:
            yield self
        finally:
            lock.unlink(missing_ok=True)

    @contextmanager
    def stage(self, name: str):
        """Yield a scratch directory whose files replace their counterparts on success."""
        staging = self.path(f".staging-{name}")
        if staging.exists():
            shutil.rmtree(staging)
        staging.mkdir(parents=True)
        try:
            yield staging
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        for src in sorted(p for p in staging.rglob("*") if p.is_file()):
            dst = self.root / src.relative_to(staging)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
        shutil.rmtree(staging)

    def files(self) -> list[Path]:
        out = []
        for p in sorted(self.root.rglob("*")):
            rel = p.relative_to(self.root)
            if not p.is_file() or rel.parts[0].startswith(".") or rel.as_posix() == MANIFEST:
                continue
            out.append(rel)
        return out

    def write_manifest(self, config: ExperimentConfig) -> str:
        """Rewrite the manifest and return its own sha256."""
        lines = [
            "# latentdecode manifest v1",
            f"config_digest = {config.digest}",
            f"package_version = {__version__}",
        ]
        for rel in self.files():
            digest = hashlib.sha256(self.path(rel).read_bytes()).hexdigest()
            lines.append(f"{digest}  {rel.as_posix()}")
        blob = ("\n".join(lines) + "\n").encode("utf-8")
        self.path(MANIFEST).write_bytes(blob)
        return hashlib.sha256(blob).hexdigest()


# -- inputs ----------------------------------------------------------------------------

@dataclass
class Inputs:
    gen: ToyGenerator
    feat: ToyFeatureExtractor
    dataset: DecodingDataset
    train_ids: list[str]
    test_ids: list[str]
    train_images: object = None  # callable -> array, loaded lazily
    test_images: object = None
    true_train_latents: list[LatentTriple] | None = None
    true_test_latents: list[LatentTriple] | None = None


def _oracles(cfg: ExperimentConfig):
    spec = GeneratorSpec.toy()
    gen = ToyGenerator(spec, seed=cfg.oracle.seed, width=cfg.oracle.width)
    feat = ToyFeatureExtractor(h_dim=spec.h_dim, seed=cfg.oracle.seed, image_size=spec.image_size)
    return gen, feat


def _read_images(directory: Path, ids, spec: GeneratorSpec) -> np.ndarray:
    imgs = []
    for sid in ids:
        p = directory / f"{sid}.ppm"
        img = read_ppm(p)
        if img.shape != spec.image_shape:
            raise ConfigError(f"{p}: image shape {img.shape} does not match the oracle's {spec.image_shape}")
        imgs.append(img)
    return np.stack(imgs)


def load_inputs(cfg: ExperimentConfig) -> Inputs:
    gen, feat = _oracles(cfg)
    if cfg.synthetic:
        data = make_synthetic(gen, cfg.data.brain)
        ds = data.dataset
        return Inputs(
            gen, feat, ds, list(ds.train_stimulus_ids), data.test_ids,
            train_images=lambda: truth_images(gen, data.train_latents),
            test_images=lambda: truth_images(gen, data.test_latents),
            true_train_latents=data.train_latents,
            true_test_latents=data.test_latents,
        )
    p: PathsSection = cfg.data
    x_train = read_matrix(p.x_train).astype(np.float64)
    x_test = read_matrix(p.x_test).astype(np.float64)
    train_ids = read_ids(p.train_ids)
    trial_ids = read_ids(p.test_ids)
    masks = read_roi_masks(p.rois, x_train.shape[1]) if p.rois is not None else []
    ds = DecodingDataset(x_train, train_ids, x_test, trial_ids, masks)
    _, test_ids = ds.test_averaged()
    test_dir = p.test_images
    return Inputs(
        gen, feat, ds, train_ids, list(test_ids),
        train_images=lambda: _read_images(p.train_images, train_ids, gen.spec),
        test_images=(lambda: _read_images(test_dir, test_ids, gen.spec)) if test_dir else None,
    )


def _require(ws: Workspace, rel: str, producer: str) -> Path:
    p = ws.path(rel)
    if not p.exists():
        raise UpstreamMissing(f"{p} not found; run '{producer}' first")
    return p


def _stack_latents(triples):
    return {k: np.stack([getattr(t, k) for t in triples]) for k in ("h", "z", "d")}


def _f32(triples) -> list[LatentTriple]:
    """Round latents to the stored precision so later steps see identical values."""
    return [LatentTriple(*(np.asarray(getattr(t, k), np.float32).astype(np.float64) for k in ("h", "z", "d")))
            for t in triples]


# -- steps ------------------------------------------------------------------------------

def step_extract(cfg: ExperimentConfig, ws: Workspace, inputs: Inputs, threads: int = 1) -> dict:
    if cfg.synthetic and cfg.data.train_latents == "true":
        triples = inputs.true_train_latents
        source = "true"
    else:
        images = inputs.train_images()
        log.info("extracting latents for %d training images", len(images))
        triples = extract_latents(images, inputs.gen, inputs.feat, cfg.inversion, n_jobs=threads)
        source = "extracted"
    meta = {"source": source, "inversion": cfg.inversion.digest(), "oracle_seed": cfg.oracle.seed}
    with ws.stage("extract") as st:
        save_latents(st / "latents" / "train", triples, meta)
        write_ids(st / "latents" / "train" / "ids.txt", inputs.train_ids)
    return {"n_images": len(triples), "source": source}


def step_fit(cfg: ExperimentConfig, ws: Workspace, inputs: Inputs, threads: int = 1) -> dict:
    ldir = _require(ws, "latents/train", "extract")
    triples = load_latents(ldir)
    ids = read_ids(ldir / "ids.txt")
    if ids != inputs.train_ids:
        raise UpstreamMissing("stored latents belong to different training stimuli; rerun 'extract'")
    r = cfg.ridge
    decoders = fit_decoders(inputs.dataset.x_train, triples, inputs.gen.spec, lam=r.lam,
                            candidates=r.candidates, k_folds=r.folds, zscore=r.zscore,
                            config_hash=cfg.digest[:16])
    with ws.stage("fit") as st:
        save_decoders(st / "decoders", decoders)
    return {"lambdas": decoders.lambdas}


def step_decode(cfg: ExperimentConfig, ws: Workspace, inputs: Inputs, threads: int = 1) -> dict:
    decoders = load_decoders(_require(ws, "decoders", "fit"))
    x_avg, ids = inputs.dataset.test_averaged()
    decoded = _f32(decode_latents(decoders, x_avg))
    with ws.stage("decode") as st:
        out = st / "decoded"
        out.mkdir(parents=True)
        stacked = _stack_latents(decoded)
        for k, name in (("h", "H"), ("z", "Z"), ("d", "D")):
            write_matrix(out / f"{name}.ldm", stacked[k])
        write_ids(out / "ids.txt", ids)
        (st / "recon").mkdir()
        for v in cfg.variants:
            imgs = reconstruct_all(inputs.gen, decoded, v, seed=cfg.random_seed)
            for sid, img in zip(ids, imgs):
                write_ppm(st / "recon" / f"{sid}_{v.value}.ppm", img)
    summary = {"n_items": len(ids)}
    if inputs.true_test_latents is not None:
        summary["latent_correlation"] = family_correlation(inputs.true_test_latents, decoded)
    return summary


def _load_decoded(ws: Workspace):
    d = _require(ws, "decoded", "decode")
    mats = {k: read_matrix(d / f"{k}.ldm").astype(np.float64) for k in ("H", "Z", "D")}
    ids = read_ids(d / "ids.txt")
    triples = [LatentTriple(h, z, dd) for h, z, dd in zip(mats["H"], mats["Z"], mats["D"])]
    return triples, ids


def step_evaluate(cfg: ExperimentConfig, ws: Workspace, inputs: Inputs, threads: int = 1) -> dict:
    if not cfg.metrics_enabled:
        return {"skipped": True}
    if inputs.test_images is None:
        raise ConfigError("evaluate needs [data.paths] test_images")
    decoded, ids = _load_decoded(ws)
    if ids != inputs.test_ids:
        raise UpstreamMissing("decoded latents belong to different test stimuli; rerun 'decode'")
    truths = list(inputs.test_images())
    feat = inputs.feat if cfg.feature_distance else None
    reports: dict[str, MetricReport] = {}
    for v in cfg.variants:
        recons = list(reconstruct_all(inputs.gen, decoded, v, seed=cfg.random_seed))
        reports[v.value] = evaluate(recons, truths, feat)
    with ws.stage("evaluate") as st:
        write_metric_csv(st / "metrics.csv", reports, ids)
    return {v: rep.summary() for v, rep in reports.items()}


def step_roi(cfg: ExperimentConfig, ws: Workspace, inputs: Inputs, threads: int = 1) -> dict:
    if not cfg.roi_enabled:
        return {"skipped": True}
    decoders = load_decoders(_require(ws, "decoders", "fit"))
    masks = inputs.dataset.roi_masks
    stats = weight_percentile_map(decoders)
    summaries = roi_summary(stats, masks)
    with ws.stage("roi") as st:
        (st / "roi").mkdir()
        write_weight_csv(st / "roi" / "weights.csv", stats)
        write_roi_summary_csv(st / "roi" / "summary.csv", summaries)
        for mask in masks:
            write_ppm(st / "roi" / f"{mask.name}.ppm", roi_maximize(decoders, inputs.gen, mask))
    return {s.name: s.mean_difference for s in summaries}


COMMANDS = {
    "extract": [step_extract],
    "fit": [step_fit],
    "decode": [step_decode],
    "evaluate": [step_evaluate],
    "roi": [step_roi],
    "synthetic": [step_extract, step_fit, step_decode, step_evaluate, step_roi],
}


@dataclass
class ExperimentReport:
    output_dir: Path
    manifest_hash: str
    steps: dict = field(default_factory=dict)


def run_command(command: str, cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> ExperimentReport:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if command == "synthetic" and not cfg.synthetic:
        raise ConfigError("'synthetic' needs a [data.synthetic] section")
    ws = Workspace(output_dir or cfg.output_dir)
    with ws.locked():
        inputs = load_inputs(cfg)
        results = {}
        for step in COMMANDS[command]:
            name = step.__name__.removeprefix("step_")
            log.info("step %s", name)
            results[name] = step(cfg, ws, inputs, threads)
        manifest_hash = ws.write_manifest(cfg)
    return ExperimentReport(ws.root, manifest_hash, results)


def run_all(cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> ExperimentReport:
    """Every step in order (extract, fit, decode, evaluate, roi)."""
    ws = Workspace(output_dir or cfg.output_dir)
    with ws.locked():
        inputs = load_inputs(cfg)
        results = {}
        for step in COMMANDS["synthetic"]:
            results[step.__name__.removeprefix("step_")] = step(cfg, ws, inputs, threads)
        manifest_hash = ws.write_manifest(cfg)
    return ExperimentReport(ws.root, manifest_hash, results)
