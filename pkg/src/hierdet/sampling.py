"""Class-aware sampling, soft-sampling weights and instance statistics.

Class-aware sampling draws a batch in two stages: categories uniformly,
then one image per drawn category uniformly among the images that contain
it. Every category therefore has the same chance of being seen no matter
how many images or instances it has.

Random streams come from numpy's PCG64 bit generator seeded with the
configured 64-bit seed, so a given (index, seed) always yields the same
sequence of batches.
"""
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EmptyIndexError
from .geometry import BBox, GroundTruth, max_overlap


@dataclass(frozen=True)
class CategoryIndex:
    categories: Tuple[str, ...]
    images_of: Mapping[str, Tuple[str, ...]]
    instance_counts: Mapping[str, int]
    _sizes: np.ndarray = field(init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(init=False, repr=False, compare=False)
    _flat: Tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = np.array([len(self.images_of[c]) for c in self.categories], dtype=np.int64)
        offsets = np.zeros(len(sizes), dtype=np.int64)
        if len(sizes):
            offsets[1:] = np.cumsum(sizes)[:-1]
        flat = tuple(img for c in self.categories for img in self.images_of[c])
        object.__setattr__(self, "_sizes", sizes)
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_flat", flat)

    def __len__(self):
        return len(self.categories)


def build_index(gts: Iterable[GroundTruth]) -> CategoryIndex:
    images: Dict[str, set] = {}
    counts: Counter = Counter()
    for gt in gts:
        images.setdefault(gt.label, set()).add(gt.image)
        counts[gt.label] += 1
    categories = tuple(sorted(images))
    return CategoryIndex(
        categories=categories,
        images_of={c: tuple(sorted(images[c])) for c in categories},
        instance_counts=dict(counts),
    )


@dataclass(frozen=True)
class SamplerConfig:
    batch_size: int = 1
    seed: int = 0
    with_replacement_categories: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _draw(idx: CategoryIndex, cfg: SamplerConfig, rng: np.random.Generator):
    n = len(idx.categories)
    if n == 0:
        raise EmptyIndexError("cannot sample from an empty category index")
    if cfg.with_replacement_categories:
        cats = rng.integers(0, n, size=cfg.batch_size)
    else:
        if cfg.batch_size > n:
            raise ConfigError(f"batch_size {cfg.batch_size} exceeds {n} categories "
                              "for sampling without replacement")
        cats = rng.choice(n, size=cfg.batch_size, replace=False)
    picks = idx._offsets[cats] + rng.integers(0, idx._sizes[cats])
    return cats, picks


def sample_batch(idx: CategoryIndex, cfg: SamplerConfig, rng: np.random.Generator) -> List[str]:
    """Draw one class-aware batch of image ids, advancing ``rng``."""
    _, picks = _draw(idx, cfg, rng)
    return [idx._flat[i] for i in picks]


class ClassAwareSampler:
    """Stateful sampler owning its own random stream; not meant to be shared."""

    def __init__(self, idx: CategoryIndex, cfg: SamplerConfig = SamplerConfig()):
        if len(idx) == 0:
            raise EmptyIndexError("cannot sample from an empty category index")
        self.index = idx
        self.config = cfg
        self.rng = make_rng(cfg.seed)
        self.draws = 0

    def next_batch(self) -> List[str]:
        return self.next_batch_with_categories()[0]

    def next_batch_with_categories(self) -> Tuple[List[str], List[str]]:
        """Image ids of the next batch, plus the category each was drawn for."""
        cats, picks = _draw(self.index, self.config, self.rng)
        self.draws += 1
        flat, categories = self.index._flat, self.index.categories
        return [flat[i] for i in picks], [categories[c] for c in cats]

    def batches(self, n: int):
        for _ in range(n):
            yield self.next_batch()


def expected_category_frequency(idx: CategoryIndex) -> Dict[str, float]:
    if len(idx) == 0:
        raise EmptyIndexError("empty category index")
    p = 1.0 / len(idx)
    return dict.fromkeys(idx.categories, p)


@dataclass(frozen=True)
class SoftWeightConfig:
    w_min: float = 0.25
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.w_min <= 1.0:
            raise ConfigError(f"w_min must be in [0, 1], got {self.w_min}")
        if not self.gamma > 0.0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")


def soft_weight_from_overlap(overlap: float, cfg: SoftWeightConfig = SoftWeightConfig()) -> float:
    if overlap >= 1.0:
        return 1.0
    return cfg.w_min + (1.0 - cfg.w_min) * overlap ** cfg.gamma


def soft_weight(candidate: BBox, gts: Sequence[BBox], cfg: SoftWeightConfig = SoftWeightConfig()) -> float:
    """Loss weight for a negative region.

    Negatives that overlap no annotation may well be unannotated objects, so
    they get the floor weight ``w_min``; weight rises to 1 with the best IoU
    against the ground truth.
    """
    return soft_weight_from_overlap(max_overlap(candidate, gts), cfg)


def imbalance_stats(gts: Iterable[GroundTruth]) -> List[Tuple[str, int]]:
    """Per-label instance counts, most frequent first (ties by label id)."""
    counts = Counter(gt.label for gt in gts)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def imbalance_ratio(stats: Sequence[Tuple[str, int]]) -> float:
    if not stats:
        return float("nan")
    return stats[0][1] / stats[-1][1]
