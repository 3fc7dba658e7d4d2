# datagen.py
"""
Synthetic imbalanced patch datasets, the augmentation family and pool splitting.

Dataset file layout (version 1), all integers little-endian:

    line 1   b"ACTIVECLR-PATCHES\\n"                       magic
    line 2   JSON header + b"\\n"                           {"version", "patch_side", "count",
                                                            "positives", "negatives", "seed"}
    body     `count` packed records, one per patch:
               id      int64
               label   uint8   (1 = TUM, 0 = NON-TUM)
               pixels  float64 x patch_side**2, row-major, values in [0, 1]
"""

import json
import math
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import gaussian_filter
from sklearn.model_selection import train_test_split

from config import NEGATIVE_SUBCLUSTERS, POSITIVE_FRACTION
from errors import DataValidationError

logger = logging.getLogger(__name__)

DATASET_MAGIC = b"ACTIVECLR-PATCHES\n"
DATASET_VERSION = 1


# === CONFIGURATION ===

class DatasetSpec(BaseModel):
    """Shape of a generated pool: size, class imbalance and how far apart the clusters sit."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    pool_size: int = Field(2000, ge=10)
    positive_fraction: float = Field(POSITIVE_FRACTION, gt=0.0, lt=1.0)
    negative_subclusters: int = Field(NEGATIVE_SUBCLUSTERS, ge=1)
    patch_side: int = Field(8, ge=2)
    cluster_separation: float = Field(1.0, gt=0.0)
    noise_scale: float = Field(0.1, ge=0.0)
    seed: int = 0

    @model_validator(mode='after')
    def _both_classes_present(self):
        positives = positive_count(self.pool_size, self.positive_fraction)
        if not 1 <= positives <= self.pool_size - 1:
            raise ValueError(
                f"pool_size={self.pool_size} with positive_fraction={self.positive_fraction} "
                f"gives {positives} positives; both classes need at least one patch"
            )
        return self


class SplitConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    labeled_size: int = Field(200, ge=1)
    test_size: int = Field(500, ge=1)
    stratify_labeled: bool = False


class AugmentationConfig(BaseModel):
    """The augmentation family; every magnitude at zero (and every flag off) is the identity."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    noise_sigma: float = Field(0.05, ge=0.0)
    max_shift: int = Field(1, ge=0)
    flip_horizontal: bool = True
    flip_vertical: bool = True
    rotate_90: bool = True
    intensity_jitter: float = Field(0.1, ge=0.0)
    blur_sigma: float = Field(0.8, ge=0.0)

    @classmethod
    def identity(cls) -> 'AugmentationConfig':
        return cls(noise_sigma=0.0, max_shift=0, flip_horizontal=False, flip_vertical=False,
                   rotate_90=False, intensity_jitter=0.0, blur_sigma=0.0)


def positive_count(pool_size: int, positive_fraction: float) -> int:
    """round(pool_size * positive_fraction), halves rounded up."""
    return int(math.floor(pool_size * positive_fraction + 0.5))


# === DATA STRUCTURES ===

@dataclass(frozen=True, eq=False)
class Patch:
    pixels: np.ndarray  # side x side
    id: int
    label: int

    def __post_init__(self):
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1]:
            raise DataValidationError(f"Patch pixels must be square, got {self.pixels.shape}")
        if np.any(self.pixels < 0.0) or np.any(self.pixels > 1.0):
            raise DataValidationError(f"Patch {self.id} has pixel values outside [0, 1]")
        if self.label not in (0, 1):
            raise DataValidationError(f"Patch {self.id} has non-binary label {self.label}")


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: np.ndarray      # int64, unique
    labels: np.ndarray   # uint8, 1 = TUM
    pixels: np.ndarray   # n x patch_side**2, row-major patches
    patch_side: int
    seed: int

    def __post_init__(self):
        n = len(self.ids)
        if len(np.unique(self.ids)) != n:
            raise DataValidationError("Dataset ids must be unique")
        if self.labels.shape != (n,) or self.pixels.shape != (n, self.patch_side ** 2):
            raise DataValidationError(
                f"Inconsistent dataset arrays: {n} ids, labels {self.labels.shape}, "
                f"pixels {self.pixels.shape} for side {self.patch_side}"
            )
        if n and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise DataValidationError("Dataset pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def positives(self) -> int:
        return int(self.labels.sum())

    def patch(self, index: int) -> Patch:
        side = self.patch_side
        return Patch(self.pixels[index].reshape(side, side), int(self.ids[index]), int(self.labels[index]))

    def positions(self, ids: np.ndarray) -> np.ndarray:
        """Row positions of the given ids."""
        order = np.argsort(self.ids)
        pos = np.searchsorted(self.ids, ids, sorter=order)
        pos = order[np.clip(pos, 0, len(order) - 1)]
        if len(ids) and not np.array_equal(self.ids[pos], ids):
            raise DataValidationError("Some ids are not part of this dataset")
        return pos


class UnlabeledPool:
    """Ids and pixels of the unlabeled pool U. Labels are not reachable from this type."""

    def __init__(self, dataset: Dataset, ids: np.ndarray):
        self._ids = np.sort(np.asarray(ids, dtype=np.int64))
        self._pixels = dataset.pixels[dataset.positions(self._ids)]
        self.patch_side = dataset.patch_side
        self._row = {int(i): r for r, i in enumerate(self._ids)}

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def ids(self) -> np.ndarray:
        return self._ids.copy()

    def pixels_for(self, ids) -> np.ndarray:
        rows = [self._row[int(i)] for i in ids]
        return self._pixels[rows]


@dataclass(frozen=True, eq=False)
class LabeledSet:
    ids: np.ndarray
    pixels: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0


class Pools(NamedTuple):
    unlabeled: UnlabeledPool
    labeled: LabeledSet
    test: LabeledSet


# === GENERATION ===

def _prototypes(rng: np.random.Generator, count: int, side: int, separation: float) -> np.ndarray:
    """
    One prototype per cluster: a base intensity plus an oriented sinusoid and a
    fixed per-pixel pattern. Cluster 0 (TUM) sits darker than every NON-TUM
    cluster; `separation` scales the gap between the base levels.
    """
    yy, xx = np.mgrid[0:side, 0:side]
    base = np.empty(count)
    base[0] = 0.5 - 0.25 * separation
    base[1:] = 0.5 + separation * rng.uniform(0.0, 0.3, size=count - 1)
    base = np.clip(base, 0.1, 0.9)

    protos = np.empty((count, side * side))
    for k in range(count):
        fx, fy = rng.integers(0, side // 2 + 1, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amplitude = rng.uniform(0.05, 0.15)
        wave = amplitude * np.sin(2 * np.pi * (fx * xx + fy * yy) / side + phase)
        pattern = 0.06 * rng.standard_normal((side, side))
        protos[k] = (base[k] + wave + pattern).ravel()
    return np.clip(protos, 0.05, 0.95)


def _orient(protos: np.ndarray, cluster: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    """Each patch shows its cluster prototype under a random quarter turn and flip."""
    turns = rng.integers(0, 4, size=len(cluster))
    flips = rng.random(len(cluster)) < 0.5
    out = np.empty((len(cluster), side * side))
    for r, k in enumerate(cluster):
        img = np.rot90(protos[k].reshape(side, side), k=int(turns[r]))
        if flips[r]:
            img = img[:, ::-1]
        out[r] = img.ravel()
    return out


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Draws a seeded pool with exactly round(pool_size * positive_fraction) TUM patches."""
    rng = np.random.default_rng(spec.seed)
    n, side = spec.pool_size, spec.patch_side
    n_pos = positive_count(n, spec.positive_fraction)

    # cluster 0 is TUM, clusters 1..K are the NON-TUM tissue types
    protos = _prototypes(rng, 1 + spec.negative_subclusters, side, spec.cluster_separation)
    cluster = np.concatenate([
        np.zeros(n_pos, dtype=np.int64),
        rng.integers(1, spec.negative_subclusters + 1, size=n - n_pos),
    ])
    cluster = cluster[rng.permutation(n)]

    stain = rng.normal(0.0, spec.noise_scale / 2, size=(n, 1))
    noise = rng.normal(0.0, spec.noise_scale, size=(n, side * side))
    pixels = np.clip(_orient(protos, cluster, side, rng) + stain + noise, 0.0, 1.0)

    dataset = Dataset(
        ids=np.arange(n, dtype=np.int64),
        labels=(cluster == 0).astype(np.uint8),
        pixels=pixels,
        patch_side=side,
        seed=spec.seed,
    )
    logger.info(f"Generated {n} patches ({n_pos} TUM / {n - n_pos} NON-TUM), side {side}, seed {spec.seed}")
    return dataset


# === AUGMENTATION ===

def _augment_once(img: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    side = img.shape[0]
    out = img
    if cfg.flip_horizontal and rng.random() < 0.5:
        out = out[:, ::-1]
    if cfg.flip_vertical and rng.random() < 0.5:
        out = out[::-1, :]
    if cfg.rotate_90:
        out = np.rot90(out, k=int(rng.choice([0, 1, 3])))
    if cfg.max_shift > 0:
        s = cfg.max_shift
        dy, dx = rng.integers(-s, s + 1, size=2)
        padded = np.pad(out, s, mode='edge')
        out = padded[s + dy:s + dy + side, s + dx:s + dx + side]
    if cfg.blur_sigma > 0 and rng.random() < 0.5:
        sigma = rng.uniform(min(0.1, cfg.blur_sigma), cfg.blur_sigma)
        out = gaussian_filter(out, sigma=sigma, mode='nearest')
    if cfg.intensity_jitter > 0:
        j = cfg.intensity_jitter
        contrast = 1.0 + rng.uniform(-j, j)
        brightness = rng.uniform(-j, j) / 2
        mean = out.mean()
        out = (out - mean) * contrast + mean + brightness
    if cfg.noise_sigma > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma, size=out.shape)
    return np.clip(np.array(out, dtype=np.float64), 0.0, 1.0)


def augment_pair(patch, config: AugmentationConfig,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Two independent draws t, t' from the augmentation family applied to the same patch."""
    pixels = patch.pixels if isinstance(patch, Patch) else np.asarray(patch, dtype=np.float64)
    if config.max_shift >= pixels.shape[0]:
        raise DataValidationError(f"max_shift={config.max_shift} must be below the patch side {pixels.shape[0]}")
    return _augment_once(pixels, config, rng), _augment_once(pixels, config, rng)


def augment_batch(flat_pixels: np.ndarray, side: int, config: AugmentationConfig,
                  rng: np.random.Generator) -> np.ndarray:
    """Stacks the 2N views of a minibatch as [view-i block; view-j block], flattened row-major."""
    n = flat_pixels.shape[0]
    views = np.empty((2 * n, side * side))
    for r in range(n):
        view_i, view_j = augment_pair(flat_pixels[r].reshape(side, side), config, rng)
        views[r] = view_i.ravel()
        views[r + n] = view_j.ravel()
    return views


# === SPLITTING ===

def _check_stratifiable(labels: np.ndarray, draw: int, what: str):
    """A stratified draw of `draw` rows needs every class twice and room for each class on both sides."""
    classes, counts = np.unique(labels, return_counts=True)
    if np.any(counts < 2):
        scarce = ', '.join(f"label {c}: {k}" for c, k in zip(classes, counts) if k < 2)
        raise DataValidationError(f"Cannot stratify the {what}: every class needs at least 2 patches ({scarce})")
    if draw < len(classes) or len(labels) - draw < len(classes):
        raise DataValidationError(
            f"Cannot stratify the {what}: drawing {draw} of {len(labels)} patches leaves a side "
            f"with fewer rows than the {len(classes)} classes"
        )


def split_pools(dataset: Dataset, labeled_size: int, test_size: int, seed: int,
                stratify_labeled: bool = False) -> Pools:
    """
    Partitions a dataset into the unlabeled pool U, the labeled proxy set S_L and S_test.

    The test draw is stratified on the label; the labeled draw is plain random
    unless `stratify_labeled` is set.
    """
    n = len(dataset)
    if labeled_size < 1 or test_size < 1:
        raise DataValidationError(f"labeled_size ({labeled_size}) and test_size ({test_size}) must be >= 1")
    if labeled_size + test_size >= n:
        raise DataValidationError(
            f"labeled_size + test_size = {labeled_size + test_size} leaves no unlabeled pool out of {n} patches"
        )

    positions = np.arange(n)
    _check_stratifiable(dataset.labels, test_size, 'test set')
    rest, test = train_test_split(positions, test_size=test_size, stratify=dataset.labels,
                                  random_state=seed)
    if stratify_labeled:
        _check_stratifiable(dataset.labels[rest], labeled_size, 'labeled set')
    rest, labeled = train_test_split(rest, test_size=labeled_size,
                                     stratify=dataset.labels[rest] if stratify_labeled else None,
                                     random_state=seed + 1)
    rest, labeled, test = np.sort(rest), np.sort(labeled), np.sort(test)

    pools = Pools(
        unlabeled=UnlabeledPool(dataset, dataset.ids[rest]),
        labeled=LabeledSet(dataset.ids[labeled], dataset.pixels[labeled], dataset.labels[labeled]),
        test=LabeledSet(dataset.ids[test], dataset.pixels[test], dataset.labels[test]),
    )
    logger.info(
        f"Split {n} patches: |U|={len(pools.unlabeled)}, |S_L|={len(pools.labeled)} "
        f"({pools.labeled.positive_fraction:.3f} TUM), |S_test|={len(pools.test)} "
        f"({pools.test.positive_fraction:.3f} TUM)"
    )
    return pools


# === SERIALIZATION ===

def _record_dtype(side: int) -> np.dtype:
    return np.dtype([('id', '<i8'), ('label', 'u1'), ('pixels', '<f8', (side * side,))])


def save_dataset(dataset: Dataset, path: str):
    header = {
        'version': DATASET_VERSION,
        'patch_side': dataset.patch_side,
        'count': len(dataset),
        'positives': dataset.positives,
        'negatives': len(dataset) - dataset.positives,
        'seed': dataset.seed,
    }
    records = np.empty(len(dataset), dtype=_record_dtype(dataset.patch_side))
    records['id'] = dataset.ids
    records['label'] = dataset.labels
    records['pixels'] = dataset.pixels
    with open(path, 'wb') as f:
        f.write(DATASET_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode('utf-8') + b"\n")
        f.write(records.tobytes())
    logger.info(f"Saved dataset ({len(dataset)} patches) to {path}")


def load_dataset(path: str) -> Dataset:
    with open(path, 'rb') as f:
        magic = f.readline()
        if magic != DATASET_MAGIC:
            raise DataValidationError(f"{path} is not a patch dataset file")
        header = json.loads(f.readline().decode('utf-8'))
        body = f.read()
    if header.get('version') != DATASET_VERSION:
        raise DataValidationError(f"Unsupported dataset version {header.get('version')}")
    dtype = _record_dtype(header['patch_side'])
    if len(body) != dtype.itemsize * header['count']:
        raise DataValidationError(f"{path} is truncated: expected {header['count']} records")
    records = np.frombuffer(body, dtype=dtype, count=header['count'])
    return Dataset(
        ids=records['id'].astype(np.int64),
        labels=records['label'].astype(np.uint8),
        pixels=records['pixels'].astype(np.float64),
        patch_side=header['patch_side'],
        seed=header['seed'],
    )


def export_csv(dataset: Dataset, path: str, float_format: Optional[str] = '%.6f'):
    """One row per patch: id, label, p0 ... p{side*side-1}."""
    frame = pd.DataFrame(dataset.pixels, columns=[f"p{i}" for i in range(dataset.pixels.shape[1])])
    frame.insert(0, 'label', dataset.labels)
    frame.insert(0, 'id', dataset.ids)
    frame.to_csv(path, index=False, float_format=float_format)
