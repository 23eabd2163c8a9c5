"""Closed-form multi-target ridge regression.

Both X and Y are centered before the penalized solve, so the bias is never
shrunk. The solve goes through one thin SVD of the centered design,
``W = V diag(s / (s**2 + lam)) U^T Y_c``, which is reused across all
penalties during cross-validation.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import read_matrix, write_matrix
from .errors import (
    MissingFile,
    NonFiniteValue,
    ShapeMismatch,
    SingularDesign,
    TooFewSamples,
    UnknownFormat,
)

FORMAT_VERSION = 1

__all__ = ["RidgeModel", "fit", "predict", "select_lambda", "save_model", "load_model"]


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray  # (n_voxels, n_targets)
    bias: np.ndarray  # (n_targets,)
    lam: float
    x_mean: np.ndarray
    y_mean: np.ndarray

    @property
    def n_voxels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_targets(self) -> int:
        return self.weights.shape[1]


def _as_2d(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return arr


class _SvdSolver:
    """Thin SVD of a centered design, reusable across penalties."""

    def __init__(self, xc: np.ndarray, yc: np.ndarray):
        self.u, self.s, vt = np.linalg.svd(xc, full_matrices=False)
        self.v = vt.T
        self.uty = self.u.T @ yc
        tol = self.s[0] * max(xc.shape) * np.finfo(float).eps if self.s.size else 0.0
        self.rank = int(np.sum(self.s > tol))
        self.full_column_rank = self.rank == xc.shape[1]
        self._tol = tol

    def weights(self, lam: float) -> np.ndarray:
        if lam == 0.0:
            if not self.full_column_rank:
                raise SingularDesign(
                    f"lambda=0 needs full column rank; centered design has rank "
                    f"{self.rank} < {self.v.shape[0]} columns"
                )
            factor = 1.0 / self.s
        else:
            factor = self.s / (self.s**2 + lam)
        # singular directions at round-off level carry no signal
        factor = np.where(self.s > self._tol, factor, 0.0)
        return self.v @ (factor[:, None] * self.uty)


def fit(X, Y, lam: float) -> RidgeModel:
    """Fit ``Y ~ X W + b`` with an L2 penalty ``lam * ||W||_F^2``."""
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatch(f"X has {X.shape[0]} rows, Y has {Y.shape[0]}")
    if X.shape[0] < 2:
        raise TooFewSamples("ridge needs at least two samples")
    lam = float(lam)
    if not lam >= 0.0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    W = _SvdSolver(X - x_mean, Y - y_mean).weights(lam)
    if not np.all(np.isfinite(W)):
        raise NonFiniteValue("ridge weights are not finite")
    return RidgeModel(W, y_mean - x_mean @ W, lam, x_mean, y_mean)


def predict(model: RidgeModel, X) -> np.ndarray:
    X = _as_2d(X, "X")
    if X.shape[1] != model.n_voxels:
        raise ShapeMismatch(f"model expects {model.n_voxels} columns, got {X.shape[1]}")
    return X @ model.weights + model.bias


def _fold_slices(n: int, k: int) -> list[slice]:
    edges = np.linspace(0, n, k + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def select_lambda(X, Y, candidates: Sequence[float], k_folds: int = 5):
    """Pick the penalty with the lowest held-out MSE over contiguous folds.

    Returns ``(best_lambda, cv_errors)`` where ``cv_errors[i]`` is the mean
    held-out MSE for ``candidates[i]``. Ties go to the earlier candidate.
    """
    X = _as_2d(X, "X")
    Y = _as_2d(Y, "Y")
    candidates = [float(c) for c in candidates]
    if not candidates:
        raise ValueError("need at least one lambda candidate")
    if any(not c >= 0 for c in candidates):
        raise ValueError("lambda candidates must be >= 0")
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    n = X.shape[0]
    if n < k_folds:
        raise TooFewSamples(f"{n} samples cannot fill {k_folds} folds")
    if len(candidates) == 1:
        return candidates[0], np.full(1, np.nan)

    errors = np.zeros(len(candidates))
    for held in _fold_slices(n, k_folds):
        train = np.ones(n, dtype=bool)
        train[held] = False
        xm, ym = X[train].mean(axis=0), Y[train].mean(axis=0)
        solver = _SvdSolver(X[train] - xm, Y[train] - ym)
        x_held, y_held = X[held] - xm, Y[held] - ym
        for i, lam in enumerate(candidates):
            try:
                W = solver.weights(lam)
            except SingularDesign:
                errors[i] += np.inf
                continue
            errors[i] += np.mean((x_held @ W - y_held) ** 2)
    errors /= k_folds
    best = int(np.argmin(errors))
    return candidates[best], errors


# -- serialization ---------------------------------------------------------------

def save_model(model: RidgeModel, directory) -> None:
    """Directory of LDM1 matrices plus ``meta.txt``.

    The bias is not stored; it is recomputed from the stored means and
    weights on load so the centering identity holds exactly afterwards.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / "weights.ldm", model.weights)
    write_matrix(d / "x_mean.ldm", model.x_mean[None, :])
    write_matrix(d / "y_mean.ldm", model.y_mean[None, :])
    meta = (
        f"format_version = {FORMAT_VERSION}\n"
        f"lambda = {model.lam!r}\n"
        f"n_voxels = {model.n_voxels}\n"
        f"n_targets = {model.n_targets}\n"
    )
    (d / "meta.txt").write_text(meta, encoding="utf-8")


def load_model(directory) -> RidgeModel:
    d = Path(directory)
    meta_path = d / "meta.txt"
    if not meta_path.is_file():
        raise MissingFile(f"no ridge model at {d}")
    meta = {}
    for line in meta_path.read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise UnknownFormat(f"{meta_path}: unsupported format version")
    W = read_matrix(d / "weights.ldm").astype(np.float64)
    x_mean = read_matrix(d / "x_mean.ldm").astype(np.float64)[0]
    y_mean = read_matrix(d / "y_mean.ldm").astype(np.float64)[0]
    if W.shape != (int(meta["n_voxels"]), int(meta["n_targets"])):
        raise ShapeMismatch(f"{d}: weights shape disagrees with meta.txt")
    return RidgeModel(W, y_mean - x_mean @ W, float(meta["lambda"]), x_mean, y_mean)
