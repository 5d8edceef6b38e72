"""Independent reference implementations used by the tests.

Nothing here imports the package's algorithms; only the record types.
"""
import itertools
import math
import random
from fractions import Fraction

import numpy as np

from hierdet.geometry import BBox, Detection, GroundTruth


# --- hierarchy ---------------------------------------------------------------

def reach_ancestors(parents, label):
    """All nodes reachable upward from ``label`` by plain DFS."""
    seen = set()
    stack = list(parents[label])
    while stack:
        p = stack.pop()
        if p not in seen:
            seen.add(p)
            stack.extend(parents[p])
    return seen


def random_dag(n, rng, max_parents=2, p_edge=0.5):
    """Random DAG on labels L0..L{n-1}; parents always have a smaller index."""
    parents = {}
    for i in range(n):
        label = f"L{i}"
        parents[label] = set()
        if i and rng.random() < p_edge + 0.3:
            k = rng.randint(1, min(max_parents, i))
            parents[label] = {f"L{j}" for j in rng.sample(range(i), k)}
    return parents


def expand_set(parents, records):
    out = set()
    for r in records:
        out.add(r)
        for a in reach_ancestors(parents, r.label):
            out.add(r._replace(label=a))
    return out


# --- geometry ------------------------------------------------------------------

def pixel_iou(a, b, n=1000):
    """IoU by counting pixel centres of an n x n raster inside each box."""
    c = (np.arange(n) + 0.5) / n

    def mask(box):
        mx = (c >= box[0]) & (c < box[2])
        my = (c >= box[1]) & (c < box[3])
        return my[:, None] & mx[None, :]

    ma, mb = mask(a), mask(b)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


def plain_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def random_box(rng, min_size=0.02):
    x0, x1 = sorted(rng.uniform(0, 1) for _ in range(2))
    y0, y1 = sorted(rng.uniform(0, 1) for _ in range(2))
    if x1 - x0 < min_size:
        x1 = min(1.0, x0 + min_size)
        x0 = x1 - min_size
    if y1 - y0 < min_size:
        y1 = min(1.0, y0 + min_size)
        y0 = y1 - min_size
    return BBox(x0, y0, x1, y1)


def jitter(box, rng, amount):
    def clip(v):
        return min(1.0, max(0.0, v))

    x0, y0, x1, y1 = (clip(v + rng.uniform(-amount, amount)) for v in box)
    return BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))


def clustered_boxes(rng, n, n_centres=3):
    """Boxes jittered around a few centres so that high overlaps (>= 0.9) are common."""
    centres = [random_box(rng, 0.1) for _ in range(n_centres)]
    out = []
    for _ in range(n):
        amount = rng.choice([0.0, 0.002, 0.01, 0.05, 0.15])
        out.append(jitter(rng.choice(centres), rng, amount))
    return out


SCORES = [0.1, 0.3, 0.5, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]


def random_instance(rng, max_boxes=10, max_labels=3, max_nodes=5, image="img"):
    n_nodes = rng.randint(1, max_nodes)
    parents = random_dag(n_nodes, rng)
    labels = rng.sample(sorted(parents), min(rng.randint(1, max_labels), n_nodes))
    boxes = clustered_boxes(rng, rng.randint(0, max_boxes))
    dets = [Detection(image, rng.choice(labels), rng.choice(SCORES + [round(rng.random(), 3)]), b)
            for b in boxes]
    return parents, dets


# --- NMS -------------------------------------------------------------------------

def rank(d):
    b = d.box
    return (-d.score, -(b[2] - b[0]) * (b[3] - b[1]), tuple(b))


def nms_keep_by_subsets(boxes_ranked, thr):
    """Indices kept by greedy NMS, found by enumerating subsets.

    The greedy result is the unique subset S such that no two members of S
    overlap at >= thr and every non-member overlaps an earlier-ranked member.
    """
    n = len(boxes_ranked)
    ov = [[plain_iou(boxes_ranked[i], boxes_ranked[j]) for j in range(n)] for i in range(n)]
    found = []
    for r in range(n + 1):
        for s in itertools.combinations(range(n), r):
            sset = set(s)
            if any(ov[i][j] >= thr for i, j in itertools.combinations(s, 2)):
                continue
            if all(any(i < j and ov[i][j] >= thr for i in s) for j in range(n) if j not in sset):
                found.append(s)
    assert len(found) == 1, found
    return list(found[0])


def nms_reference(dets, nms_iou=0.5, vote_iou=0.9, vote_fraction=0.3, score_floor=0.0, clamp=True):
    """Per-label NMS with voting, written as a keep predicate plus a suppressor lookup."""
    out = []
    for label in sorted({d.label for d in dets}):
        group = sorted([d for d in dets if d.label == label], key=rank)
        n = len(group)
        keep = []
        for j in range(n):
            if not any(plain_iou(group[i].box, group[j].box) >= nms_iou for i in keep):
                keep.append(j)
        votes = {i: [] for i in keep}
        for j in range(n):
            if j in votes:
                continue
            suppressor = next(i for i in keep if i < j and plain_iou(group[i].box, group[j].box) >= nms_iou)
            if plain_iou(group[suppressor].box, group[j].box) >= vote_iou:
                votes[suppressor].append(group[j].score)
        for i in keep:
            s = group[i].score
            if votes[i]:
                s = s + vote_fraction * math.fsum(votes[i])
                if clamp:
                    s = min(s, 1.0)
            if s >= score_floor:
                out.append(group[i]._replace(score=s))
    return sorted(out, key=lambda d: (d.label,) + rank(d))


def hnms_reference(parents, dets, **kw):
    return nms_reference(list(expand_set(parents, dets)), **kw)


# --- AP ------------------------------------------------------------------------

def ap_staircase(pairs, gt_count):
    """All-point AP computed exactly with fractions, one PR point at a time."""
    if gt_count == 0 or not pairs:
        return 0.0
    ordered = sorted(pairs, key=lambda m: (-m[0], not m[1]))
    points = []
    tp = fp = 0
    for _, is_tp in ordered:
        tp += is_tp
        fp += not is_tp
        points.append((Fraction(tp, gt_count), Fraction(tp, tp + fp)))
    total = Fraction(0)
    prev_recall = Fraction(0)
    for k, (r, _) in enumerate(points):
        if r > prev_recall:
            best = max(p for rr, p in points[k:])
            total += (r - prev_recall) * best
            prev_recall = r
    return float(total)


def match_reference(dets, gts, thr):
    """Same greedy matching rule as the evaluator, written per class over all images."""
    res = {}
    for label in {d.label for d in dets}:
        pairs = []
        for image in {d.image for d in dets if d.label == label}:
            ds = sorted((d for d in dets if d.label == label and d.image == image),
                        key=lambda d: (-d.score, tuple(d.box)))
            gs = sorted(tuple(g.box) for g in gts if g.label == label and g.image == image)
            used = set()
            for d in ds:
                cands = [(plain_iou(d.box, g), -j, j) for j, g in enumerate(gs) if j not in used]
                cands = [c for c in cands if c[0] >= thr]
                if cands:
                    used.add(max(cands)[2])
                    pairs.append((d.score, True))
                else:
                    pairs.append((d.score, False))
        res[label] = pairs
    return res


# --- chips -----------------------------------------------------------------------

def min_cover_size(boxes, cw, ch, eps=1e-9):
    """Smallest number of gt-anchored windows covering all boxes (exhaustive)."""
    if not boxes:
        return 0
    xs = {min(b[0], 1.0 - cw) for b in boxes}
    ys = {min(b[1], 1.0 - ch) for b in boxes}
    windows = [(x, y, min(1.0, x + cw), min(1.0, y + ch)) for x in xs for y in ys]
    sets = []
    for w in windows:
        sets.append(frozenset(i for i, b in enumerate(boxes)
                              if w[0] <= b[0] + eps and w[1] <= b[1] + eps
                              and b[2] <= w[2] + eps and b[3] <= w[3] + eps))
    everything = frozenset(range(len(boxes)))
    for k in range(1, len(boxes) + 1):
        for combo in itertools.combinations(sets, k):
            if frozenset().union(*combo) == everything:
                return k
    raise AssertionError("boxes cannot be covered")


def make_rng(seed):
    return random.Random(seed)
