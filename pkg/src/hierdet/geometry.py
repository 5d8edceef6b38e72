"""Boxes, detection records and overlap arithmetic.

Boxes live in normalized image coordinates (the Open Images submission
convention). Records are plain named tuples so they hash, compare and
unpack cheaply; millions of them flow through the CLI pipelines.
"""
from typing import Iterable, NamedTuple, Sequence


class BBox(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def center(self):
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def is_valid(self) -> bool:
        return 0.0 <= self.xmin <= self.xmax <= 1.0 and 0.0 <= self.ymin <= self.ymax <= 1.0


class Detection(NamedTuple):
    image: str
    label: str
    score: float
    box: BBox


class GroundTruth(NamedTuple):
    image: str
    label: str
    box: BBox


def make_box(xmin, ymin, xmax, ymax) -> BBox:
    """Build a box, raising ``ValueError`` if it is outside the unit square or inverted."""
    box = BBox(float(xmin), float(ymin), float(xmax), float(ymax))
    if not box.is_valid():
        raise ValueError(f"invalid normalized box {tuple(box)}")
    return box


def box_from_pixels(x1, y1, x2, y2, width, height) -> BBox:
    """Convert pixel corners to a normalized box, clipping to the image."""
    if width <= 0 or height <= 0:
        raise ValueError("image width and height must be positive")

    def clip(v):
        return min(max(v, 0.0), 1.0)

    return make_box(clip(x1 / width), clip(y1 / height), clip(x2 / width), clip(y2 / height))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0.0 when both boxes are degenerate."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0.0 or ih <= 0.0:
        inter = 0.0
    else:
        inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    # symmetric in a and b, so iou(a, b) == iou(b, a) bit for bit
    return min(inter / union, 1.0)


def max_overlap(box: BBox, gts: Iterable[BBox]) -> float:
    best = 0.0
    for gt in gts:
        v = iou(box, gt)
        if v > best:
            best = v
    return best


def contains(outer: BBox, inner: BBox, eps: float = 1e-9) -> bool:
    """True if ``inner`` lies inside ``outer`` up to ``eps`` of slack per edge."""
    return (
        outer[0] <= inner[0] + eps
        and outer[1] <= inner[1] + eps
        and inner[2] <= outer[2] + eps
        and inner[3] <= outer[3] + eps
    )


def same_image(records: Sequence) -> bool:
    return len({r.image for r in records}) <= 1
