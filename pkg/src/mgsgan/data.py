"""Dataset ingestion, normalization, stratified splitting and synthetic spectra.

File formats
------------
CSV: header line "d=<int>,N=<int>", then one row per sample holding d floats
followed by an integer label in [0, N).

BIN: little-endian; magic "MGSD", version u32, M u32, d u32, N u32, a u8 flag
for the normalization record (followed, when set, by two f64 arrays of length
d: the per-band minima and maxima the normalization was fitted on), then the
sample matrix as f64 row-major and the labels as i64. Lossless for the
in-memory representation, so save -> load round-trips bit-identically.

Normalization maps each band to [-1, 1] via the min/max of the split it was
fitted on; applying it to other data clips into [-1, 1].
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .losses import ClassPriors

_BIN_MAGIC = b"MGSD"
_BIN_VERSION = 1


@dataclass
class Normalization:
    """Per-band min/max record used to map raw band values into [-1, 1]."""

    band_min: np.ndarray
    band_max: np.ndarray

    def apply(self, samples: np.ndarray) -> np.ndarray:
        span = np.where(self.band_max > self.band_min, self.band_max - self.band_min, 1.0)
        scaled = 2.0 * (samples - self.band_min) / span - 1.0
        return np.clip(scaled, -1.0, 1.0)

    def invert(self, samples: np.ndarray) -> np.ndarray:
        span = np.where(self.band_max > self.band_min, self.band_max - self.band_min, 1.0)
        return (samples + 1.0) / 2.0 * span + self.band_min


@dataclass
class SpectralDataset:
    """Labeled band vectors; samples is (M, d), labels is (M,) ints in [0, N)."""

    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    normalization: Normalization | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2 or self.labels.shape != (self.samples.shape[0],):
            raise DataError(
                f"SpectralDataset: samples {self.samples.shape} vs labels {self.labels.shape}"
            )
        if self.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"SpectralDataset: label out of range [0, {self.class_count})")

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def band_count(self) -> int:
        return self.samples.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def require_all_classes(self):
        sizes = self.class_sizes()
        missing = np.flatnonzero(sizes == 0)
        if missing.size:
            raise DataError(f"dataset is missing class {int(missing[0])}")


@dataclass
class SplitSpec:
    """Stratified train/test split request; tttr is the training fraction."""

    tttr: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.tttr < 1.0:
            raise ContractError(f"SplitSpec: tttr must lie in (0, 1), got {self.tttr}")


def split_tttr(ds: SpectralDataset, spec: SplitSpec) -> tuple[SpectralDataset, SpectralDataset]:
    """Disjoint, exhaustive, per-class stratified split, deterministic per seed."""
    ds.require_all_classes()
    rng = np.random.default_rng([spec.seed, 0x5011])
    train_idx, test_idx = [], []
    for j in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == j)
        k = max(1, int(math.floor(spec.tttr * idx.size + 0.5)))
        perm = rng.permutation(idx.size)
        train_idx.append(idx[perm[:k]])
        test_idx.append(idx[perm[k:]])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    train = SpectralDataset(ds.samples[tr], ds.labels[tr], ds.class_count)
    test = SpectralDataset(ds.samples[te], ds.labels[te], ds.class_count)
    return train, test


def fit_normalization(train: SpectralDataset) -> Normalization:
    return Normalization(train.samples.min(axis=0).copy(), train.samples.max(axis=0).copy())


def normalize_pair(train: SpectralDataset, test: SpectralDataset
                   ) -> tuple[SpectralDataset, SpectralDataset]:
    """Fit the band scaling on train only and apply it to both splits."""
    norm = fit_normalization(train)
    train_n = SpectralDataset(norm.apply(train.samples), train.labels.copy(),
                              train.class_count, normalization=norm)
    test_n = SpectralDataset(norm.apply(test.samples), test.labels.copy(),
                             test.class_count, normalization=norm)
    return train_n, test_n


def class_priors(train: SpectralDataset, mode: str = "empirical") -> ClassPriors:
    """Empirical class frequencies of the split (or the uniform ablation)."""
    if train.size == 0:
        raise ContractError("class_priors: empty training split")
    if mode == "uniform":
        return ClassPriors.uniform(train.class_count)
    if mode != "empirical":
        raise ContractError(f"class_priors: unknown mode {mode!r}")
    return ClassPriors.from_counts(train.class_sizes())


# ---------------------------------------------------------------------------
# file formats

def save_csv(path, ds: SpectralDataset):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"d={ds.band_count},N={ds.class_count}\n")
        for row, label in zip(ds.samples, ds.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def load_csv(path) -> SpectralDataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            d_part, n_part = header.split(",")
            d = int(d_part.removeprefix("d="))
            n = int(n_part.removeprefix("N="))
            if d_part[:2] != "d=" or n_part[:2] != "N=" or d < 1 or n < 1:
                raise ValueError
        except ValueError:
            raise DataError(f"{path}: line 1: expected header 'd=<int>,N=<int>', got {header!r}")
        samples, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise DataError(f"{path}: line {lineno}: expected {d + 1} fields, got {len(parts)}")
            try:
                samples.append([float(v) for v in parts[:d]])
                labels.append(int(parts[d]))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}")
            if not 0 <= labels[-1] < n:
                raise DataError(f"{path}: line {lineno}: label {labels[-1]} out of range [0, {n})")
    ds = SpectralDataset(np.asarray(samples, dtype=np.float64).reshape(len(samples), d),
                         np.asarray(labels, dtype=np.int64), n)
    ds.require_all_classes()
    return ds


def save_bin(path, ds: SpectralDataset):
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<IIII", _BIN_VERSION, ds.size, ds.band_count, ds.class_count))
        fh.write(struct.pack("<B", 1 if ds.normalization is not None else 0))
        if ds.normalization is not None:
            fh.write(np.ascontiguousarray(ds.normalization.band_min, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(ds.normalization.band_max, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.samples, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())


def load_bin(path) -> SpectralDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _BIN_MAGIC:
        raise DataError(f"{path}: bad magic, not a dataset file")
    version, m, d, n = struct.unpack_from("<IIII", blob, 4)
    if version != _BIN_VERSION:
        raise DataError(f"{path}: unsupported dataset format version {version}")
    off = 4 + 16
    (has_norm,) = struct.unpack_from("<B", blob, off)
    off += 1
    norm = None
    if has_norm:
        band_min = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        band_max = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        norm = Normalization(band_min, band_max)
    need = off + 8 * m * d + 8 * m
    if len(blob) != need:
        raise DataError(f"{path}: truncated dataset file ({len(blob)} bytes, expected {need})")
    samples = np.frombuffer(blob, dtype="<f8", count=m * d, offset=off).reshape(m, d).copy()
    off += 8 * m * d
    labels = np.frombuffer(blob, dtype="<i8", count=m, offset=off).copy()
    ds = SpectralDataset(samples, labels, n, normalization=norm)
    ds.require_all_classes()
    return ds


def load_dataset(path, fmt: str | None = None) -> SpectralDataset:
    if fmt is None:
        fmt = "bin" if str(path).endswith(".bin") else "csv"
    if fmt == "csv":
        return load_csv(path)
    if fmt == "bin":
        return load_bin(path)
    raise ContractError(f"load_dataset: unknown format {fmt!r}")


def save_dataset(path, ds: SpectralDataset, fmt: str | None = None):
    if fmt is None:
        fmt = "bin" if str(path).endswith(".bin") else "csv"
    if fmt == "csv":
        save_csv(path, ds)
    elif fmt == "bin":
        save_bin(path, ds)
    else:
        raise ContractError(f"save_dataset: unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# synthetic imbalanced spectra

NOISE_HALF_WIDTH = 0.1  # uniform band noise, so class boxes have crisp edges
NOISE_STD = NOISE_HALF_WIDTH / math.sqrt(3.0)


def _bump_template(rng: np.random.Generator, d: int) -> np.ndarray:
    bands = np.arange(d, dtype=np.float64)
    template = np.zeros(d)
    for _ in range(3):
        center = rng.uniform(0, d - 1)
        width = rng.uniform(d / 16.0, d / 8.0)
        amp = rng.uniform(0.5, 1.0)
        template += amp * np.exp(-0.5 * ((bands - center) / width) ** 2)
    return template


def make_synthetic(seed: int, n_classes: int, d: int, sizes,
                   overlap: float = 0.0) -> SpectralDataset:
    """Seeded imbalanced dataset of smooth per-class spectra plus band noise.

    Each class template is a sum of three Gaussian bumps. `overlap` in [0, 1]
    shrinks every template toward the shared mean template, so at high values
    the per-class value boxes of different classes intersect. At overlap 0 the
    templates are resampled (deterministically) until all pairwise distances
    are at least 5x the noise standard deviation.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) != n_classes:
        raise ContractError(f"make_synthetic: got {len(sizes)} sizes for {n_classes} classes")
    if any(s < 2 for s in sizes):
        raise ContractError("make_synthetic: every class needs at least 2 samples")
    if not 0.0 <= overlap <= 1.0:
        raise ContractError(f"make_synthetic: overlap must lie in [0, 1], got {overlap}")
    rng = np.random.default_rng([seed, 0x57E0])
    min_sep = 5.0 * NOISE_STD
    for _ in range(100):
        templates = np.stack([_bump_template(rng, d) for _ in range(n_classes)])
        gaps = [np.linalg.norm(templates[i] - templates[j])
                for i in range(n_classes) for j in range(i + 1, n_classes)]
        if not gaps or min(gaps) >= min_sep:
            break
    else:
        raise ContractError("make_synthetic: could not separate class templates")
    center = templates.mean(axis=0)
    templates = center + (1.0 - overlap) * (templates - center)
    rows, labels = [], []
    for j, size in enumerate(sizes):
        noise = rng.uniform(-NOISE_HALF_WIDTH, NOISE_HALF_WIDTH, size=(size, d))
        rows.append(templates[j] + noise)
        labels.append(np.full(size, j, dtype=np.int64))
    return SpectralDataset(np.concatenate(rows), np.concatenate(labels), n_classes)
