"""Data model and on-disk formats.

Matrices are stored in LDM1, a tiny little-endian binary layout::

    bytes 0-3    b"LDM1"
    bytes 4-7    uint32 rows
    bytes 8-11   uint32 cols
    bytes 12-15  reserved, zero
    payload      rows * cols float32, row-major

Values are stored as float32 and handed back as float32 arrays; callers that
do arithmetic promote to float64 themselves.
"""
from __future__ import annotations

import csv
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    EmptyInput,
    EmptyMask,
    IndexOutOfRange,
    IoFailure,
    MissingFile,
    NonFiniteValue,
    ShapeMismatch,
    UnknownFormat,
)

MAGIC = b"LDM1"
HEADER = struct.Struct("<4sIII")

__all__ = [
    "DecodingDataset",
    "RoiMask",
    "average_repetitions",
    "check_image",
    "read_ids",
    "read_matrix",
    "read_matrix_csv",
    "read_ppm",
    "read_roi_masks",
    "write_ids",
    "write_matrix",
    "write_ppm",
    "write_roi_masks",
]


# -- matrices ------------------------------------------------------------------

def write_matrix(path, matrix) -> None:
    """Write a 2-D array to ``path`` in LDM1 format.

    Output is a pure function of the (float32-cast) values, so writing the
    same matrix twice yields byte-identical files.
    """
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    with np.errstate(over="ignore"):
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(arr32)):
        raise NonFiniteValue(f"refusing to write non-finite values to {path}")
    rows, cols = arr32.shape
    try:
        with open(path, "wb") as fh:
            fh.write(HEADER.pack(MAGIC, rows, cols, 0))
            fh.write(arr32.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_matrix(path) -> np.ndarray:
    """Read an LDM1 file and return a float32 array of the declared shape."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such matrix file: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise BadMagic(f"{path}: file shorter than the 16-byte header")
    magic, rows, cols, _reserved = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    payload = raw[HEADER.size:]
    expected = rows * cols * 4
    if len(payload) != expected:
        raise ShapeMismatch(
            f"{path}: header declares {rows}x{cols} ({expected} bytes), "
            f"payload has {len(payload)} bytes"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{path}: matrix contains NaN or Inf")
    return arr


def read_matrix_csv(path) -> np.ndarray:
    """Load a small comma-separated numeric matrix (fixtures only)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such CSV file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ShapeMismatch(f"{path}: ragged CSV rows")
    try:
        arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float32)
    except ValueError as exc:
        raise UnknownFormat(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{path}: matrix contains NaN or Inf")
    return arr


def read_ids(path) -> list[str]:
    """One identifier per line; blank lines and ``#`` comments skipped."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such id file: {path}")
    ids = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            ids.append(line)
    return ids


def write_ids(path, ids: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{i}\n" for i in ids), encoding="utf-8")


# -- repetition averaging ------------------------------------------------------

def average_repetitions(x_trials, trial_ids: Sequence[str]):
    """Average trial rows that share a stimulus id.

    Returns ``(means, unique_ids)`` with one row per id, ids in order of first
    appearance.
    """
    x = np.asarray(x_trials, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput("need at least one trial row")
    if len(trial_ids) != x.shape[0]:
        raise ShapeMismatch(f"{x.shape[0]} trial rows but {len(trial_ids)} ids")
    order: dict[str, int] = {}
    for tid in trial_ids:
        order.setdefault(tid, len(order))
    index = np.fromiter((order[t] for t in trial_ids), dtype=np.intp, count=len(trial_ids))
    sums = np.zeros((len(order), x.shape[1]))
    np.add.at(sums, index, x)
    counts = np.bincount(index, minlength=len(order)).astype(np.float64)
    return sums / counts[:, None], list(order)


# -- ROI masks -----------------------------------------------------------------

@dataclass(frozen=True)
class RoiMask:
    """Named set of voxel indices (sorted, unique)."""

    name: str
    voxel_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.voxel_indices)))
        if not idx:
            raise EmptyMask(f"ROI {self.name!r} has no voxels")
        if idx[0] < 0:
            raise IndexOutOfRange(f"ROI {self.name!r}: negative voxel index {idx[0]}")
        object.__setattr__(self, "voxel_indices", idx)

    def check(self, n_voxels: int) -> "RoiMask":
        if self.voxel_indices[-1] >= n_voxels:
            raise IndexOutOfRange(
                f"ROI {self.name!r}: voxel {self.voxel_indices[-1]} >= n_voxels={n_voxels}"
            )
        return self

    def __len__(self):
        return len(self.voxel_indices)


_ROI_LINE = re.compile(r"^\s*([^:\s][^:]*?)\s*:(.*)$")


def read_roi_masks(path, n_voxels: int) -> list[RoiMask]:
    """Parse a ``NAME: idx idx ...`` text file into masks.

    Overlapping ROIs are allowed. ``#`` starts a comment.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such ROI file: {path}")
    masks = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0]
        if not line.strip():
            continue
        m = _ROI_LINE.match(line)
        if m is None:
            raise UnknownFormat(f"{path}:{lineno}: expected 'NAME: idx idx ...'")
        try:
            idx = [int(tok) for tok in m.group(2).split()]
        except ValueError as exc:
            raise UnknownFormat(f"{path}:{lineno}: {exc}") from exc
        if not idx:
            raise UnknownFormat(f"{path}:{lineno}: ROI {m.group(1)!r} lists no voxels")
        masks.append(RoiMask(m.group(1), tuple(idx)).check(n_voxels))
    return masks


def write_roi_masks(path, masks: Sequence[RoiMask]) -> None:
    lines = [f"{m.name}: {' '.join(str(i) for i in m.voxel_indices)}\n" for m in masks]
    Path(path).write_text("".join(lines), encoding="utf-8")


# -- images ----------------------------------------------------------------------

def check_image(image) -> np.ndarray:
    """Validate an (H, W, 3) image with values in [0, 1]; returns float64."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeMismatch(f"expected an (H, W, 3) image, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise NonFiniteValue("image contains NaN or Inf")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def write_ppm(path, image) -> None:
    """Binary PPM (P6, maxval 255), values mapped by round(v * 255)."""
    img = check_image(image)
    h, w, _ = img.shape
    data = np.rint(img * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such image: {path}")
    raw = path.read_bytes()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnknownFormat(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise UnknownFormat(f"{path}: only P6 with maxval 255 is supported")
    w, h = int(tokens[1]), int(tokens[2])
    payload = raw[pos:pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise ShapeMismatch(f"{path}: PPM payload too short")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3) / 255.0


# -- dataset -------------------------------------------------------------------

@dataclass
class DecodingDataset:
    """Train/test brain responses for one subject.

    ``x_test_trials`` holds every test presentation; use :meth:`test_averaged`
    to collapse repetitions.
    """

    x_train: np.ndarray
    train_stimulus_ids: list[str]
    x_test_trials: np.ndarray
    test_trial_stimulus_ids: list[str]
    roi_masks: list[RoiMask] = field(default_factory=list)

    def __post_init__(self):
        self.x_train = np.asarray(self.x_train)
        self.x_test_trials = np.asarray(self.x_test_trials)
        for name in ("x_train", "x_test_trials"):
            arr = getattr(self, name)
            if arr.ndim != 2:
                raise ShapeMismatch(f"{name} must be 2-D, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValue(f"{name} contains NaN or Inf")
        if self.x_train.shape[1] != self.x_test_trials.shape[1]:
            raise ShapeMismatch("train and test voxel counts differ")
        if len(self.train_stimulus_ids) != self.x_train.shape[0]:
            raise ShapeMismatch("train ids do not match x_train rows")
        if len(self.test_trial_stimulus_ids) != self.x_test_trials.shape[0]:
            raise ShapeMismatch("test ids do not match x_test_trials rows")
        overlap = set(self.train_stimulus_ids) & set(self.test_trial_stimulus_ids)
        if overlap:
            raise ShapeMismatch(f"train/test stimulus ids overlap: {sorted(overlap)[:5]}")
        counts: dict[str, int] = {}
        for tid in self.test_trial_stimulus_ids:
            counts[tid] = counts.get(tid, 0) + 1
        if len(set(counts.values())) > 1:
            raise ShapeMismatch("test stimuli have unequal repetition counts")
        for mask in self.roi_masks:
            mask.check(self.n_voxels)

    @property
    def n_voxels(self) -> int:
        return self.x_train.shape[1]

    @property
    def repetitions(self) -> int:
        if not self.test_trial_stimulus_ids:
            return 0
        first = self.test_trial_stimulus_ids[0]
        return self.test_trial_stimulus_ids.count(first)

    def test_averaged(self):
        return average_repetitions(self.x_test_trials, self.test_trial_stimulus_ids)
