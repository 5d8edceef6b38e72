"""Positive chip planning for multi-scale chip-based training.

At each training scale a ground-truth box is *valid* when its longer side,
measured in scaled pixels, falls inside a configured range. The planner
places fixed-size square chips (``chip_px`` scaled pixels on a side) so
that every valid box that can fit in a chip lies fully inside at least one
chip at that scale. Only coordinates are produced; no pixels are touched.

Candidate windows are anchored on ground truth: a window's left edge sits
on some box's ``xmin`` and its top edge on some box's ``ymin`` (shifted
back inside the image where needed). Any cover can be slid onto such
anchors without losing a box, so a minimum cover over the candidates is a
minimum cover overall.
"""
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .geometry import BBox, GroundTruth

EPS = 1e-9


@dataclass(frozen=True)
class Chip:
    scale: float
    window: BBox


@dataclass
class ChipPlan:
    image: str
    chips: List[Chip] = field(default_factory=list)
    # gt index -> indices into ``chips`` of same-scale chips containing it
    covered: Dict[int, List[int]] = field(default_factory=dict)


@dataclass(frozen=True)
class ChipConfig:
    scales: Tuple[float, ...] = (3.0, 1.667, 1.0)
    chip_px: int = 512
    valid_range_px: Tuple[float, float] = (32.0, 480.0)
    # instances with at most this many boxes to cover are solved exactly
    exact_limit: int = 8

    def __post_init__(self):
        if not self.scales:
            raise ConfigError("at least one scale is required")
        if any(not s > 0 for s in self.scales):
            raise ConfigError(f"scales must be positive, got {self.scales}")
        if self.chip_px < 1:
            raise ConfigError(f"chip_px must be >= 1, got {self.chip_px}")
        lo, hi = self.valid_range_px
        if not 0 <= lo < hi:
            raise ConfigError(f"valid range must satisfy 0 <= lo < hi, got {self.valid_range_px}")


def chip_extent(image_px, scale, chip_px):
    """Normalized (width, height) of a chip at ``scale``; capped at the full image."""
    w, h = image_px
    return min(1.0, chip_px / (scale * w)), min(1.0, chip_px / (scale * h))


def valid_at_scale(box: BBox, image_px, scale, valid_range_px) -> bool:
    w, h = image_px
    side = max((box.xmax - box.xmin) * w, (box.ymax - box.ymin) * h) * scale
    lo, hi = valid_range_px
    return lo <= side <= hi


def _fits(box: BBox, cw, ch) -> bool:
    return box.xmax - box.xmin <= cw + EPS and box.ymax - box.ymin <= ch + EPS


def anchored_windows(boxes: Sequence[BBox], cw: float, ch: float) -> List[BBox]:
    xs = sorted({min(b.xmin, 1.0 - cw) for b in boxes})
    ys = sorted({min(b.ymin, 1.0 - ch) for b in boxes})
    return [BBox(x, y, min(1.0, x + cw), min(1.0, y + ch)) for x in xs for y in ys]


def _containment(windows: Sequence[BBox], boxes: Sequence[BBox]) -> np.ndarray:
    w = np.asarray(windows, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes, dtype=float).reshape(-1, 4)
    return (
        (w[:, None, 0] <= b[None, :, 0] + EPS)
        & (w[:, None, 1] <= b[None, :, 1] + EPS)
        & (b[None, :, 2] <= w[:, None, 2] + EPS)
        & (b[None, :, 3] <= w[:, None, 3] + EPS)
    )


def _greedy_cover(windows, boxes, contain: np.ndarray) -> List[int]:
    centers = np.array([b.center for b in boxes])
    wcenters = np.array([w.center for w in windows])
    uncovered = np.ones(len(boxes), dtype=bool)
    picked = []
    while uncovered.any():
        gain = contain[:, uncovered].sum(axis=1)
        best = gain.max()
        tied = np.flatnonzero(gain == best)
        if len(tied) > 1:
            centroid = centers[uncovered].mean(axis=0)
            dist = np.hypot(*(wcenters[tied] - centroid).T)
            # argmin keeps the first (lowest-index) window among equal distances
            choice = tied[int(np.argmin(dist))]
        else:
            choice = int(tied[0])
        picked.append(int(choice))
        uncovered &= ~contain[choice]
    return picked


def _exact_cover(contain: np.ndarray, upper: int):
    """A cover using fewer than ``upper`` windows, or None if none exists."""
    n = contain.shape[1]
    full = (1 << n) - 1
    masks = {}
    for i, row in enumerate(contain):
        m = int(sum(1 << j for j in np.flatnonzero(row)))
        if m and m not in masks:
            masks[m] = i
    # windows whose coverage is a strict subset of another's never help
    maximal = [m for m in masks if not any(m != o and m & o == m for o in masks)]
    maximal.sort(key=lambda m: masks[m])
    for k in range(1, upper):
        for combo in itertools.combinations(maximal, k):
            acc = 0
            for m in combo:
                acc |= m
            if acc == full:
                return [masks[m] for m in combo]
    return None


def plan_scale(boxes: Sequence[BBox], cw: float, ch: float, exact_limit: int = 8) -> List[BBox]:
    """Windows of size ``cw`` x ``ch`` covering every box in ``boxes``.

    Greedy max-coverage; small instances are then tightened to a minimum cover.
    """
    if not boxes:
        return []
    windows = anchored_windows(boxes, cw, ch)
    contain = _containment(windows, boxes)
    picked = _greedy_cover(windows, boxes, contain)
    if len(boxes) <= exact_limit and len(picked) > 1:
        better = _exact_cover(contain, len(picked))
        if better is not None:
            picked = better
    return [windows[i] for i in picked]


def plan_chips(image: str, gts: Sequence[GroundTruth], image_px, scales=None, chip_px=None,
               valid_range_px=None, config: ChipConfig = None) -> ChipPlan:
    """Plan positive chips for one image across all scales.

    Explicit ``scales``/``chip_px``/``valid_range_px`` override ``config``.
    """
    base = config or ChipConfig()
    cfg = ChipConfig(
        scales=tuple(scales) if scales is not None else base.scales,
        chip_px=chip_px if chip_px is not None else base.chip_px,
        valid_range_px=tuple(valid_range_px) if valid_range_px is not None else base.valid_range_px,
        exact_limit=base.exact_limit,
    )
    if image_px[0] <= 0 or image_px[1] <= 0:
        raise ConfigError(f"image size must be positive, got {image_px}")

    plan = ChipPlan(image=image)
    boxes = [gt.box for gt in gts]
    for scale in cfg.scales:
        cw, ch = chip_extent(image_px, scale, cfg.chip_px)
        valid = [i for i, b in enumerate(boxes) if valid_at_scale(b, image_px, scale, cfg.valid_range_px)]
        targets = [i for i in valid if _fits(boxes[i], cw, ch)]
        windows = plan_scale([boxes[i] for i in targets], cw, ch, cfg.exact_limit)
        first = len(plan.chips)
        plan.chips.extend(Chip(scale, w) for w in windows)
        if not windows:
            continue
        contain = _containment(windows, [boxes[i] for i in valid])
        for col, gi in enumerate(valid):
            hits = np.flatnonzero(contain[:, col])
            if len(hits):
                plan.covered.setdefault(gi, []).extend(first + int(k) for k in hits)
    return plan
