"""Hierarchy-aware detection evaluation (per-class AP at a fixed IoU, and mAP).

Ground truth is always expanded to ancestor labels: an instance of a
child class is also an instance of every ancestor class. Detections can
be expanded the same way, or scored as submitted to show what a detector
that only emits leaf labels loses on the ancestor classes.
"""
import decimal
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Detection, GroundTruth, iou
from .hierarchy import LabelHierarchy, expand_records


def expand_ground_truth(h: LabelHierarchy, gts: Iterable[GroundTruth], keep=None) -> List[GroundTruth]:
    return expand_records(h, gts, keep)


@dataclass
class MatchResult:
    # label -> [(score, is_true_positive), ...]
    scores: Dict[str, List[Tuple[float, bool]]] = field(default_factory=dict)
    gt_counts: Dict[str, int] = field(default_factory=dict)


def match_detections(dets: Iterable[Detection], gts: Iterable[GroundTruth],
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching per image and class.

    Detections are visited by descending score; each takes the unmatched
    ground truth it overlaps most, provided that IoU reaches the threshold.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    gt_groups = defaultdict(list)
    gt_counts: Dict[str, int] = defaultdict(int)
    for gt in gts:
        gt_groups[gt.image, gt.label].append(gt.box)
        gt_counts[gt.label] += 1
    det_groups = defaultdict(list)
    for d in dets:
        det_groups[d.image, d.label].append(d)

    result = MatchResult(gt_counts=dict(gt_counts))
    scores = defaultdict(list)
    for key in sorted(det_groups):
        label = key[1]
        group = sorted(det_groups[key], key=lambda d: (-d.score, d.box))
        boxes = sorted(gt_groups.get(key, ()))
        matched = [False] * len(boxes)
        for d in group:
            best, best_iou = -1, iou_threshold
            for j, gbox in enumerate(boxes):
                if matched[j]:
                    continue
                o = iou(d.box, gbox)
                if o >= best_iou and (best < 0 or o > best_iou):
                    best, best_iou = j, o
            if best >= 0:
                matched[best] = True
            scores[label].append((d.score, best >= 0))
    result.scores = dict(scores)
    return result


def average_precision(matches: Sequence[Tuple[float, bool]], gt_count: int,
                      method: str = "all_point") -> float:
    """Area under the interpolated precision/recall curve.

    ``method`` is ``"all_point"`` (every recall step, VOC 2010 onwards) or
    ``"11_point"``. Returns 0.0 when there is no ground truth.
    """
    if gt_count < 0:
        raise ValueError("gt_count must be >= 0")
    if gt_count == 0 or not matches:
        return 0.0
    ordered = sorted(matches, key=lambda m: (-m[0], not m[1]))
    if method == "all_point":
        return _all_point(ordered, gt_count)
    if method == "11_point":
        tp = np.array([bool(m[1]) for m in ordered], dtype=float)
        ctp = np.cumsum(tp)
        precision = ctp / np.arange(1, len(tp) + 1)
        recall = ctp / gt_count
        # interpolated precision: best precision at this recall or beyond
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            reached = recall >= t - 1e-12
            total += envelope[reached].max() if reached.any() else 0.0
        return total / 11.0
    raise ValueError(f"unknown AP method {method!r}")


def _all_point(ordered, gt_count: int) -> float:
    # Recall rises by 1/gt_count at each true positive, so AP is the mean of
    # the interpolated precision at those points. The envelope is kept as
    # integer ratios and summed at 60 digits, so the float result is the
    # correctly rounded value of the exact rational.
    flags = [bool(m[1]) for m in ordered]
    ctp = list(itertools.accumulate(flags))
    best_num, best_den = 0, 1
    env = [None] * len(flags)
    for k in range(len(flags) - 1, -1, -1):
        num, den = ctp[k], k + 1
        if num * best_den > best_num * den:
            best_num, best_den = num, den
        env[k] = (best_num, best_den)
    with decimal.localcontext() as ctx:
        ctx.prec = 60
        total = sum((decimal.Decimal(n) / d for (n, d), hit in zip(env, flags) if hit),
                    decimal.Decimal(0))
        return float(total / gt_count)


@dataclass
class EvalReport:
    per_class_ap: Dict[str, float]
    mean_ap: float
    evaluated_classes: FrozenSet[str]
    gt_counts: Dict[str, int] = field(default_factory=dict)
    det_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self, h: Optional[LabelHierarchy] = None) -> dict:
        rows = []
        for label in sorted(self.per_class_ap):
            row = {"label": label, "ap": self.per_class_ap[label],
                   "num_gt": self.gt_counts.get(label, 0), "num_det": self.det_counts.get(label, 0)}
            if h is not None and label in h:
                row["display_name"] = h.display_name(label)
            rows.append(row)
        return {"mean_ap": self.mean_ap, "num_classes": len(rows), "classes": rows}

    def summary(self, h: Optional[LabelHierarchy] = None) -> str:
        lines = [f"mAP {self.mean_ap:.6f} over {len(self.per_class_ap)} classes"]
        for label in sorted(self.per_class_ap, key=lambda k: (-self.per_class_ap[k], k)):
            name = h.display_name(label) if h is not None and label in h else label
            lines.append(f"  {self.per_class_ap[label]:.6f}  {name}")
        return "\n".join(lines)


def hierarchical_map(h: LabelHierarchy, dets: Iterable[Detection], gts: Iterable[GroundTruth],
                     iou_threshold: float = 0.5, evaluated: Optional[Iterable[str]] = None,
                     expand_detections: bool = True, method: str = "all_point") -> EvalReport:
    """Mean AP over classes that have ground truth, after hierarchy expansion.

    ``evaluated`` restricts scoring to a label subset; expansion then only
    emits ancestors inside it.
    """
    keep = None if evaluated is None else frozenset(evaluated)
    gts = expand_records(h, gts, keep)
    dets = expand_records(h, dets, keep) if expand_detections else list(dets)
    if keep is not None:
        gts = [g for g in gts if g.label in keep]
        dets = [d for d in dets if d.label in keep]

    matches = match_detections(dets, gts, iou_threshold)
    per_class = {
        label: average_precision(matches.scores.get(label, []), n, method)
        for label, n in matches.gt_counts.items() if n > 0
    }
    # exact rational mean, rounded once
    mean_ap = float(sum(map(Fraction, per_class.values())) / len(per_class)) if per_class else 0.0
    det_counts = {label: len(v) for label, v in matches.scores.items()}
    return EvalReport(per_class, mean_ap, frozenset(per_class), dict(matches.gt_counts), det_counts)
