"""Hierarchical NMS with score voting, and ensemble fusion built on it."""
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .errors import ConfigError, MixedImageError
from .geometry import Detection, iou
from .hierarchy import LabelHierarchy, expand_records


@dataclass(frozen=True)
class HnmsConfig:
    """Thresholds for per-class NMS with score voting.

    A box suppressed at ``iou >= nms_iou`` is dropped; if it also overlaps
    its suppressor at ``iou >= vote_iou`` it hands ``vote_fraction`` of its
    score to the suppressor.
    """
    nms_iou: float = 0.5
    vote_iou: float = 0.9
    vote_fraction: float = 0.3
    score_floor: float = 0.0
    clamp_scores: bool = True

    def __post_init__(self):
        if not 0.0 < self.nms_iou <= 1.0:
            raise ConfigError(f"nms_iou must be in (0, 1], got {self.nms_iou}")
        if not 0.0 < self.vote_iou <= 1.0:
            raise ConfigError(f"vote_iou must be in (0, 1], got {self.vote_iou}")
        if self.vote_iou < self.nms_iou:
            raise ConfigError("vote_iou must be >= nms_iou")
        if not 0.0 <= self.vote_fraction <= 1.0:
            raise ConfigError(f"vote_fraction must be in [0, 1], got {self.vote_fraction}")
        if not 0.0 <= self.score_floor < 1.0:
            raise ConfigError(f"score_floor must be in [0, 1), got {self.score_floor}")


def rank_key(det: Detection):
    """Greedy order: score, then larger area, then box coordinates."""
    b = det.box
    return (-det.score, -((b[2] - b[0]) * (b[3] - b[1])), b)


def output_key(det: Detection):
    return (det.label,) + rank_key(det)


def _nms_group(group: List[Detection], cfg: HnmsConfig) -> List[Detection]:
    order = sorted(group, key=rank_key)
    n = len(order)
    removed = [False] * n
    kept = []
    nms_iou, vote_iou = cfg.nms_iou, cfg.vote_iou
    for i in range(n):
        if removed[i]:
            continue
        keeper = order[i]
        kbox = keeper.box
        votes = []
        for j in range(i + 1, n):
            if removed[j]:
                continue
            o = iou(kbox, order[j].box)
            if o >= nms_iou:
                removed[j] = True
                if o >= vote_iou:
                    votes.append(order[j].score)
        score = keeper.score
        if votes:
            # the keeper's rank is fixed; votes only change its reported score
            score = score + cfg.vote_fraction * math.fsum(votes)
            if cfg.clamp_scores and score > 1.0:
                score = 1.0
            keeper = keeper._replace(score=score)
        if score >= cfg.score_floor:
            kept.append(keeper)
    return kept


def nms_per_class(dets: Sequence[Detection], cfg: HnmsConfig = HnmsConfig()) -> List[Detection]:
    """Greedy NMS with score voting, run independently per label.

    All detections must belong to one image. Output is sorted by label,
    then score descending.
    """
    if not dets:
        return []
    image = dets[0].image
    groups: Dict[str, List[Detection]] = defaultdict(list)
    for d in dets:
        if d.image != image:
            raise MixedImageError(f"detections span images {image!r} and {d.image!r}")
        groups[d.label].append(d)
    out = []
    for label in sorted(groups):
        out.extend(_nms_group(groups[label], cfg))
    out.sort(key=output_key)
    return out


def hnms(h: LabelHierarchy, dets: Sequence[Detection], cfg: HnmsConfig = HnmsConfig(),
         keep_labels: Optional[Iterable[str]] = None) -> List[Detection]:
    """Expand every detection to its ancestor labels, then run :func:`nms_per_class`."""
    return nms_per_class(expand_records(h, dets, keep_labels), cfg)


def group_by_image(dets: Iterable) -> Dict[str, list]:
    groups = defaultdict(list)
    for d in dets:
        groups[d.image].append(d)
    return groups


def hnms_all(h: LabelHierarchy, dets: Iterable[Detection], cfg: HnmsConfig = HnmsConfig(),
             keep_labels=None) -> List[Detection]:
    """:func:`hnms` applied image by image; output sorted by image id."""
    groups = group_by_image(dets)
    out = []
    for image in sorted(groups):
        out.extend(hnms(h, groups[image], cfg, keep_labels))
    return out


Runs = Union[Mapping[str, Sequence[Detection]], Sequence[Tuple[str, Sequence[Detection]]]]


def _normalize_runs(runs: Runs) -> List[Tuple[str, Sequence[Detection]]]:
    items = list(runs.items()) if isinstance(runs, Mapping) else list(runs)
    ids = [rid for rid, _ in items]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate run ids in {ids}")
    return items


def check_weights(run_ids: Sequence[str], run_weights: Optional[Mapping[str, float]]) -> Dict[str, float]:
    if run_weights is None:
        return dict.fromkeys(run_ids, 1.0)
    unknown = set(run_weights) - set(run_ids)
    if unknown:
        raise ConfigError(f"weights given for unknown runs: {sorted(unknown)}")
    missing = set(run_ids) - set(run_weights)
    if missing:
        raise ConfigError(f"no weight given for runs: {sorted(missing)}")
    for rid, w in run_weights.items():
        if not 0.0 < w <= 1.0:
            raise ConfigError(f"weight for run {rid!r} must be in (0, 1], got {w}")
    return dict(run_weights)


def fuse_image(h: LabelHierarchy, per_run: Sequence[Tuple[float, Sequence[Detection]]],
               cfg: HnmsConfig = HnmsConfig(), keep_labels=None) -> List[Detection]:
    """Fuse one image's detections from several runs.

    Each run is weighted and expanded on its own, so identical boxes from
    different runs stay separate records and vote for each other.
    """
    pooled = []
    for weight, dets in per_run:
        if weight != 1.0:
            dets = [d._replace(score=d.score * weight) for d in dets]
        pooled.extend(expand_records(h, dets, keep_labels))
    return nms_per_class(pooled, cfg)


def fuse_ensemble(h: LabelHierarchy, runs: Runs, cfg: HnmsConfig = HnmsConfig(),
                  run_weights: Optional[Mapping[str, float]] = None, keep_labels=None) -> List[Detection]:
    """Weighted concatenation of several runs followed by hierarchical NMS.

    With a single run of weight 1.0 this is exactly :func:`hnms_all`.
    """
    items = _normalize_runs(runs)
    weights = check_weights([rid for rid, _ in items], run_weights)
    by_run = [(weights[rid], group_by_image(dets)) for rid, dets in items]
    images = sorted(set().union(*(g.keys() for _, g in by_run))) if by_run else []
    out = []
    for image in images:
        per_run = [(w, g.get(image, ())) for w, g in by_run]
        out.extend(fuse_image(h, per_run, cfg, keep_labels))
    return out
