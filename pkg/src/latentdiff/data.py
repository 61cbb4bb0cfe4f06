"""Datasets, standardization, equal-width target binning and shot partitioning.

CSV layout is ``f0,...,f{m-1},target`` (UTF-8, '.' decimal point, one row
per sample). Synthetic dumps carry one extra trailing ``origin`` column.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nnet.rng import make_rng

MANY_SHOT_THRESHOLD = 70
FEW_SHOT_THRESHOLD = 30


class CsvFormatError(ValueError):
    """Malformed dataset file; message carries the row/column location."""


class TargetRangeError(ValueError):
    """A target value falls outside the declared [y_min, y_max] range."""


@dataclass
class LabeledFeatureSet:
    """Rows of (feature vector, continuous target).

    Ingested sets must be non-empty and finite; derived sets (e.g. a synthetic
    batch that gated down to nothing) may legitimately have zero rows.
    """

    features: np.ndarray
    targets: np.ndarray
    name: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.targets.ndim != 1 or self.targets.shape[0] != self.features.shape[0]:
            raise ValueError("targets must be 1-D and aligned with feature rows")
        if self.features.size and not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values")
        if self.targets.size and not np.all(np.isfinite(self.targets)):
            raise ValueError("non-finite target values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def validate_ingested(self, y_min: float | None = None, y_max: float | None = None) -> None:
        if self.n < 1 or self.m < 1:
            raise ValueError(f"ingested dataset must have n >= 1 and m >= 1, got {self.n}x{self.m}")
        if y_min is not None and np.any(self.targets < y_min):
            bad = int(np.argmax(self.targets < y_min))
            raise TargetRangeError(
                f"target {self.targets[bad]} at row {bad} below declared y_min={y_min}")
        if y_max is not None and np.any(self.targets > y_max):
            bad = int(np.argmax(self.targets > y_max))
            raise TargetRangeError(
                f"target {self.targets[bad]} at row {bad} above declared y_max={y_max}")


def load_csv(path: str | Path, y_min: float | None = None,
             y_max: float | None = None) -> LabeledFeatureSet:
    """Read a feature CSV; errors name the offending row/column.

    A trailing ``origin`` column (from synthetic dumps) is tolerated and
    dropped. Targets are validated against the declared range when given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_origin = bool(header) and header[-1] == "origin"
        cols = header[:-1] if has_origin else header
        if len(cols) < 2 or cols[-1] != "target":
            raise CsvFormatError(f"{path}: header must end with 'target', got {header}")
        m = len(cols) - 1
        expected = [f"f{i}" for i in range(m)] + ["target"]
        if cols != expected:
            raise CsvFormatError(f"{path}: header mismatch, expected {expected}, got {cols}")
        rows = []
        for r, line in enumerate(reader, start=1):
            vals = line[:-1] if has_origin else line
            if len(vals) != m + 1:
                raise CsvFormatError(
                    f"{path}: row {r} has {len(vals)} values, expected {m + 1}")
            parsed = []
            for c, cell in enumerate(vals):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: non-numeric value {cell!r} at row {r}, column {cols[c]}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    arr = np.array(rows, dtype=np.float64)
    ds = LabeledFeatureSet(arr[:, :m], arr[:, m], name=path.stem)
    ds.validate_ingested(y_min=y_min, y_max=y_max)
    return ds


def save_csv(ds: LabeledFeatureSet, path: str | Path, origin: str | None = None) -> None:
    """Write the standard CSV layout; `origin` adds the provenance column."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [f"f{i}" for i in range(ds.m)] + ["target"]
    if origin is not None:
        header.append("origin")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.features[i]] + [repr(float(ds.targets[i]))]
            if origin is not None:
                row.append(origin)
            writer.writerow(row)


@dataclass(frozen=True)
class BinSpec:
    """Equal-width partition of [y_min, y_max] into K bins."""

    y_min: float
    y_max: float
    count: int
    edges: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)

    @classmethod
    def from_range(cls, y_min: float, y_max: float, count: int) -> "BinSpec":
        if count < 2:
            raise ValueError(f"bin count must be >= 2, got {count}")
        if not y_max > y_min:
            raise ValueError(f"need y_max > y_min, got [{y_min}, {y_max}]")
        edges = y_min + np.arange(count + 1) * (y_max - y_min) / count
        centers = 0.5 * (edges[:-1] + edges[1:])
        return cls(float(y_min), float(y_max), int(count), edges, centers)


def bin_index(spec: BinSpec, y: float) -> int:
    """floor((y - y_min) / (y_max - y_min) * K), clamped to K-1 at y = y_max."""
    if y < spec.y_min or y > spec.y_max:
        raise TargetRangeError(f"target {y} outside [{spec.y_min}, {spec.y_max}]")
    k = int(np.floor((y - spec.y_min) / (spec.y_max - spec.y_min) * spec.count))
    return min(k, spec.count - 1)


def bin_indices(spec: BinSpec, targets: np.ndarray) -> np.ndarray:
    """Vectorized ``bin_index``."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.size and (targets.min() < spec.y_min or targets.max() > spec.y_max):
        bad = targets[(targets < spec.y_min) | (targets > spec.y_max)][0]
        raise TargetRangeError(f"target {bad} outside [{spec.y_min}, {spec.y_max}]")
    k = np.floor((targets - spec.y_min) / (spec.y_max - spec.y_min) * spec.count).astype(int)
    return np.minimum(k, spec.count - 1)


def bin_counts(spec: BinSpec, targets: np.ndarray) -> np.ndarray:
    return np.bincount(bin_indices(spec, targets), minlength=spec.count)


@dataclass(frozen=True)
class ShotPartition:
    """Per-bin many/median/few labels derived from training counts.

    many: count > 70; median: 30 <= count <= 70; few: count < 30 (bins with
    zero training samples therefore land in few).
    """

    labels: tuple[str, ...]
    counts: tuple[int, ...]
    many_threshold: int = MANY_SHOT_THRESHOLD
    few_threshold: int = FEW_SHOT_THRESHOLD


def shot_partition(counts: np.ndarray) -> ShotPartition:
    counts = np.asarray(counts, dtype=int)
    labels = []
    for c in counts:
        if c > MANY_SHOT_THRESHOLD:
            labels.append("many")
        elif c >= FEW_SHOT_THRESHOLD:
            labels.append("median")
        else:
            labels.append("few")
    return ShotPartition(labels=tuple(labels), counts=tuple(int(c) for c in counts))


@dataclass
class Standardizer:
    """Per-dimension zero-mean/unit-variance transform with exact inverse."""

    mean: np.ndarray
    std: np.ndarray
    constant_dims: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] < 2:
            raise ValueError("standardizer needs at least 2 rows")
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        constant = std == 0.0
        if np.any(constant):
            warnings.warn(
                f"{int(constant.sum())} constant feature dimension(s); std pinned to 1",
                stacklevel=2)
        std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std, constant_dims=constant)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) * self.std + self.mean

    @classmethod
    def identity(cls, m: int) -> "Standardizer":
        return cls(mean=np.zeros(m), std=np.ones(m), constant_dims=np.zeros(m, dtype=bool))


def standardize_fit_transform(ds: LabeledFeatureSet) -> tuple[Standardizer, LabeledFeatureSet]:
    sc = Standardizer.fit(ds.features)
    return sc, LabeledFeatureSet(sc.transform(ds.features), ds.targets, name=ds.name)


# Fixed smooth feature map for the synthetic benchmark. The first four
# components are y/100, sin(y/10), cos(y/15), (y/100)^2; component 4+j is
# the mixture sum_i sin((j+1)*(i+1)) * base_i(y). Keeping the map fixed
# (seed-independent) makes runs comparable across implementations.
def _benchmark_feature_map(y: np.ndarray, m: int) -> np.ndarray:
    base = np.stack([
        y / 100.0,
        np.sin(y / 10.0),
        np.cos(y / 15.0),
        (y / 100.0) ** 2,
    ], axis=1)
    if m <= 4:
        return base[:, :m]
    extras = []
    for j in range(m - 4):
        weights = np.sin((j + 1) * np.arange(1, 5, dtype=np.float64))
        extras.append(base @ weights)
    return np.concatenate([base, np.stack(extras, axis=1)], axis=1)


def make_imbalanced_synthetic(n: int, m: int, bins: int, decay: float,
                              noise: float, seed: int,
                              stream: str = "benchmark") -> LabeledFeatureSet:
    """Reproducible long-tailed benchmark over targets in [0, 100].

    Per-bin density decays geometrically (head bin ~ decay^0, tail bin ~
    decay^(K-1)); every bin receives at least one sample. decay=1 gives a
    uniform distribution up to multinomial noise.
    """
    if n < bins:
        raise ValueError(f"need n >= bins, got n={n}, bins={bins}")
    if not 0 < decay <= 1:
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    rng = make_rng(seed, stream)
    spec = BinSpec.from_range(0.0, 100.0, bins)
    weights = decay ** np.arange(bins, dtype=np.float64)
    weights /= weights.sum()
    counts = np.ones(bins, dtype=int)
    extra = rng.multinomial(n - bins, weights)
    counts += extra
    ys = []
    for k in range(bins):
        lo, hi = spec.edges[k], spec.edges[k + 1]
        ys.append(rng.uniform(lo, hi, size=counts[k]))
    y = np.concatenate(ys)
    order = rng.permutation(n)
    y = y[order]
    feats = _benchmark_feature_map(y, m)
    feats = feats + rng.normal(0.0, noise, size=feats.shape)
    return LabeledFeatureSet(feats, y, name=f"synthetic-{stream}")
