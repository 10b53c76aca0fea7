"""Datasets: synthetic generation, CSV ingestion, label-noise injection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, IngestionError


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled feature vectors with ids ``0..N-1`` given by row position.

    ``label_map`` maps each dense label back to the value it had in the
    source file (identity for generated data).
    """

    labels: np.ndarray
    features: np.ndarray
    num_classes: int
    label_map: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {features.shape}")
        if labels.shape != (features.shape[0],):
            raise ContractError(
                f"{labels.shape[0]} labels for {features.shape[0]} feature rows"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        sizes = np.bincount(labels, minlength=self.num_classes)
        small = np.flatnonzero(sizes < 2)
        if small.size:
            raise ContractError(
                f"class size < 2 for classes {small.tolist()} (sizes {sizes[small].tolist()})"
            )
        labels.setflags(write=False)
        features.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)
        if not self.label_map:
            object.__setattr__(self, "label_map", {c: c for c in range(self.num_classes)})

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def with_labels(self, labels) -> "Dataset":
        return Dataset(labels, self.features, self.num_classes, dict(self.label_map))

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int
    per_class: int
    dim: int
    separation: float = 4.0
    std: float = 1.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.per_class < 2:
            raise ConfigError(f"need at least 2 samples per class, got {self.per_class}")
        if self.dim < 1:
            raise ConfigError(f"dimension must be positive, got {self.dim}")
        if not self.separation > 0:
            raise ConfigError("separation must be > 0")
        if not self.std > 0:
            raise ConfigError("standard deviation must be > 0")


@dataclass(frozen=True, eq=False)
class NoiseMask:
    """Which samples had their label replaced, and what it was before."""

    flipped: np.ndarray
    original_labels: np.ndarray

    @property
    def flipped_ids(self) -> np.ndarray:
        return np.flatnonzero(self.flipped)

    def restore(self, noisy: Dataset) -> Dataset:
        labels = noisy.labels.copy()
        labels[self.flipped] = self.original_labels[self.flipped]
        return noisy.with_labels(labels)


def class_centers(spec: SyntheticSpec) -> np.ndarray:
    """Centers on a regular polygon in the first two axes, adjacent ones
    exactly ``spec.separation`` apart (on a line when ``dim == 1``)."""
    centers = np.zeros((spec.num_classes, spec.dim))
    if spec.dim == 1:
        centers[:, 0] = spec.separation * np.arange(spec.num_classes)
        return centers
    radius = spec.separation / (2.0 * math.sin(math.pi / spec.num_classes))
    angles = 2.0 * math.pi * np.arange(spec.num_classes) / spec.num_classes
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Isotropic Gaussian blobs, samples ordered by class."""
    rng = np.random.default_rng(seed)
    centers = class_centers(spec)
    labels = np.repeat(np.arange(spec.num_classes), spec.per_class)
    noise = rng.normal(0.0, spec.std, size=(labels.size, spec.dim))
    return Dataset(labels, centers[labels] + noise, spec.num_classes)


def split_by_class(ds: Dataset) -> list[np.ndarray]:
    """Per-class id arrays, each in increasing id order."""
    order = np.argsort(ds.labels, kind="stable")
    bounds = np.cumsum(ds.class_sizes())[:-1]
    return np.split(order, bounds)


def inject_label_noise(ds: Dataset, ratio: float, seed: int) -> tuple[Dataset, NoiseMask]:
    """Relabel ``floor(ratio * N^c)`` random samples of every class.

    Each chosen sample gets a label drawn uniformly from the other
    ``C - 1`` classes. Counts are taken on the pre-flip class sizes.
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    labels = ds.labels.copy()
    flipped = np.zeros(ds.n_samples, dtype=bool)
    for c, ids in enumerate(split_by_class(ds)):
        n_flip = math.floor(ratio * ids.size)
        if n_flip == 0:
            continue
        chosen = rng.choice(ids, size=n_flip, replace=False)
        # Uniform over the other classes: draw from C-1 slots and skip c.
        targets = rng.integers(0, ds.num_classes - 1, size=n_flip)
        targets[targets >= c] += 1
        labels[chosen] = targets
        flipped[chosen] = True
    mask = NoiseMask(flipped, ds.labels.copy())
    try:
        noisy = ds.with_labels(labels)
    except ContractError as exc:
        raise ContractError(f"noise injection emptied a class: {exc}") from exc
    return noisy, mask


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label"] + [f"f{j}" for j in range(ds.dim)])
        for i in range(ds.n_samples):
            label = ds.label_map.get(int(ds.labels[i]), int(ds.labels[i]))
            writer.writerow([i, label] + [repr(float(v)) for v in ds.features[i]])


def load_dataset(path) -> Dataset:
    """Read the ``id,label,f0,...`` CSV format.

    Ids are renumbered in file order and labels densified in ascending
    order of their original values.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        header = [h.strip() for h in header]
        dim = len(header) - 2
        if header[:2] != ["id", "label"] or dim < 1 or header[2:] != [f"f{j}" for j in range(dim)]:
            raise IngestionError(f"{path}:1: expected header id,label,f0,...,f{{M-1}}")
        raw_labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != dim + 2:
                raise IngestionError(
                    f"{path}:{lineno}: expected {dim + 2} fields, got {len(row)} (inconsistent dimension)"
                )
            try:
                int(row[0])
                raw_labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: malformed row: {exc}") from None
    if not rows:
        raise IngestionError(f"{path}: no samples")
    raw = np.asarray(raw_labels, dtype=np.int64)
    originals, dense = np.unique(raw, return_inverse=True)
    counts = np.bincount(dense)
    for c in np.flatnonzero(counts < 2):
        lineno = 2 + int(np.flatnonzero(dense == c)[0])
        raise IngestionError(f"{path}:{lineno}: class size < 2 for label {originals[c]}")
    return Dataset(
        dense,
        np.asarray(rows),
        len(originals),
        {int(i): int(v) for i, v in enumerate(originals)},
    )


def write_mask(mask: NoiseMask, noisy: Dataset, path) -> None:
    """Labels are written in the same (file) label space as ``write_dataset``."""
    to_file = noisy.label_map
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "original_label", "new_label"])
        for i in mask.flipped_ids:
            writer.writerow(
                [int(i), to_file[int(mask.original_labels[i])], to_file[int(noisy.labels[i])]]
            )


def load_mask(path, noisy: Dataset) -> NoiseMask:
    to_dense = {v: k for k, v in noisy.label_map.items()}
    flipped = np.zeros(noisy.n_samples, dtype=bool)
    original = noisy.labels.copy()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                i = int(row["id"])
                original[i] = to_dense[int(row["original_label"])]
                flipped[i] = True
            except (KeyError, ValueError, IndexError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: malformed mask row: {exc!r}") from None
    return NoiseMask(flipped, original)
