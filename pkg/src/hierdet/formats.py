"""CSV readers and writers for predictions and ground truth, plus streaming helpers.

Predictions: ``ImageID,LabelName,Score,XMin,XMax,YMin,YMax``
Ground truth: ``ImageID,LabelName,XMin,XMax,YMin,YMax`` (extra Open Images
columns such as IsOccluded or IsGroupOf are tolerated and ignored).

Coordinates are normalized. Floats are written with 6 decimals.
"""
import csv
import heapq
import itertools
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

from .errors import ParseError
from .geometry import BBox, Detection, GroundTruth

log = logging.getLogger(__name__)

PRED_COLUMNS = ("ImageID", "LabelName", "Score", "XMin", "XMax", "YMin", "YMax")
GT_COLUMNS = ("ImageID", "LabelName", "XMin", "XMax", "YMin", "YMax")
CHUNK_ROWS = 250_000


@dataclass
class ReadStats:
    rows: int = 0
    clamped_scores: int = 0
    group_of_rows: int = 0
    ignored_columns: List[str] = field(default_factory=list)


def _column_positions(header, required, path):
    if header is None:
        raise ParseError("file is empty, a header row is required", source=path, line=1)
    header = [h.strip() for h in header]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"header is missing columns {missing}", source=path, line=1)
    extra = [h for h in header if h not in required]
    return [header.index(c) for c in required], extra


def _box(fields, path, lineno) -> BBox:
    try:
        xmin, xmax, ymin, ymax = (float(v) for v in fields)
    except ValueError:
        raise ParseError(f"non-numeric coordinate in {fields}", source=path, line=lineno) from None
    if not (0.0 <= xmin <= xmax <= 1.0 and 0.0 <= ymin <= ymax <= 1.0):
        raise ParseError(f"box ({xmin}, {ymin}, {xmax}, {ymax}) is not a valid normalized box",
                         source=path, line=lineno)
    return BBox(xmin, ymin, xmax, ymax)


def iter_predictions(path, stats: ReadStats = None) -> Iterator[Detection]:
    """Yield detections from a predictions CSV, validating every row.

    Scores outside [0, 1] are clamped and counted in ``stats``.
    """
    stats = stats if stats is not None else ReadStats()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        pos, extra = _column_positions(next(reader, None), PRED_COLUMNS, path)
        stats.ignored_columns = extra
        i_img, i_lab, i_score, i_x0, i_x1, i_y0, i_y1 = pos
        width = max(pos) + 1
        for row in reader:
            if not row:
                continue
            lineno = reader.line_num
            if len(row) < width:
                raise ParseError(f"expected {len(PRED_COLUMNS)} fields, got {len(row)}",
                                 source=path, line=lineno)
            try:
                score = float(row[i_score])
            except ValueError:
                raise ParseError(f"non-numeric score {row[i_score]!r}", source=path, line=lineno) from None
            if not 0.0 <= score <= 1.0:
                if score != score:
                    raise ParseError("score is NaN", source=path, line=lineno)
                score = min(max(score, 0.0), 1.0)
                stats.clamped_scores += 1
            box = _box((row[i_x0], row[i_x1], row[i_y0], row[i_y1]), path, lineno)
            image, label = row[i_img], row[i_lab]
            if not image or not label:
                raise ParseError("empty ImageID or LabelName", source=path, line=lineno)
            stats.rows += 1
            yield Detection(image, label, score, box)
    if stats.clamped_scores:
        log.warning("%s: clamped %d scores into [0, 1]", path, stats.clamped_scores)


def iter_ground_truth(path, stats: ReadStats = None) -> Iterator[GroundTruth]:
    """Yield ground-truth boxes. Group-of flags are not interpreted, only counted."""
    stats = stats if stats is not None else ReadStats()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        pos, extra = _column_positions(header, GT_COLUMNS, path)
        stats.ignored_columns = extra
        if extra:
            log.info("%s: ignoring columns %s", path, ", ".join(extra))
        i_img, i_lab, i_x0, i_x1, i_y0, i_y1 = pos
        width = max(pos) + 1
        names = [h.strip() for h in header]
        i_group = names.index("IsGroupOf") if "IsGroupOf" in names else None
        for row in reader:
            if not row:
                continue
            lineno = reader.line_num
            if len(row) < width:
                raise ParseError(f"expected at least {width} fields, got {len(row)}",
                                 source=path, line=lineno)
            box = _box((row[i_x0], row[i_x1], row[i_y0], row[i_y1]), path, lineno)
            if not row[i_img] or not row[i_lab]:
                raise ParseError("empty ImageID or LabelName", source=path, line=lineno)
            if i_group is not None and i_group < len(row) and row[i_group].strip() == "1":
                stats.group_of_rows += 1
            stats.rows += 1
            yield GroundTruth(row[i_img], row[i_lab], box)
    if stats.group_of_rows:
        log.info("%s: %d IsGroupOf rows treated as ordinary boxes", path, stats.group_of_rows)


def read_predictions(path, stats=None) -> List[Detection]:
    return list(iter_predictions(path, stats))


def read_ground_truth(path, stats=None) -> List[GroundTruth]:
    return list(iter_ground_truth(path, stats))


def _fmt(v: float) -> str:
    return f"{v:.6f}"


class PredictionWriter:
    """Writes predictions rows; use as a context manager or call close()."""

    def __init__(self, path_or_file):
        if hasattr(path_or_file, "write"):
            self._f, self._owned = path_or_file, False
        else:
            self._f, self._owned = open(path_or_file, "w", newline=""), True
        self._w = csv.writer(self._f, lineterminator="\n")
        self._w.writerow(PRED_COLUMNS)
        self.rows = 0

    def write(self, dets: Iterable[Detection]):
        for d in dets:
            b = d.box
            self._w.writerow((d.image, d.label, _fmt(d.score), _fmt(b.xmin), _fmt(b.xmax),
                              _fmt(b.ymin), _fmt(b.ymax)))
            self.rows += 1

    def close(self):
        if self._owned:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_predictions(path, dets: Iterable[Detection]) -> int:
    with PredictionWriter(path) as w:
        w.write(dets)
        return w.rows


def write_ground_truth(path, gts: Iterable[GroundTruth]) -> int:
    n = 0
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(GT_COLUMNS)
        for g in gts:
            b = g.box
            w.writerow((g.image, g.label, _fmt(b.xmin), _fmt(b.xmax), _fmt(b.ymin), _fmt(b.ymax)))
            n += 1
    return n


def is_sorted_by_image(path) -> bool:
    """Cheap scan of the ImageID column: True if ids never decrease."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return True
        col = [h.strip() for h in header].index("ImageID") if "ImageID" in header else 0
        prev = None
        for row in reader:
            if not row or len(row) <= col:
                continue
            img = row[col]
            if prev is not None and img < prev:
                return False
            prev = img
    return True


def _spill(chunk: List[Detection], tmpdir: str) -> str:
    chunk.sort(key=lambda d: d.image)
    fd, name = tempfile.mkstemp(suffix=".csv", dir=tmpdir)
    with os.fdopen(fd, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for d in chunk:
            # repr keeps floats exact across the spill
            w.writerow((d.image, d.label, repr(d.score)) + tuple(repr(v) for v in d.box))
    return name


def _read_spill(name) -> Iterator[Detection]:
    with open(name, newline="") as f:
        for image, label, score, x0, y0, x1, y1 in csv.reader(f):
            yield Detection(image, label, float(score), BBox(float(x0), float(y0), float(x1), float(y1)))


def external_sort_by_image(dets: Iterable[Detection], tmpdir: str,
                           chunk_rows: int = CHUNK_ROWS) -> Iterator[Detection]:
    """Sort a detection stream by image id using sorted spill files.

    Records of one image keep their input order. Memory holds one chunk.
    """
    names = []
    it = iter(dets)
    while True:
        chunk = list(itertools.islice(it, chunk_rows))
        if not chunk:
            break
        names.append(_spill(chunk, tmpdir))
    try:
        yield from heapq.merge(*(_read_spill(n) for n in names), key=lambda d: d.image)
    finally:
        for n in names:
            os.unlink(n)


def iter_image_groups(path, stats: ReadStats = None, chunk_rows: int = CHUNK_ROWS,
                      tmpdir: str = None) -> Iterator[Tuple[str, List[Detection]]]:
    """Yield ``(image_id, detections)`` in image-id order, one image at a time.

    Sorted inputs are streamed directly; others go through an external sort.
    """
    if is_sorted_by_image(path):
        stream = iter_predictions(path, stats)
        for image, group in itertools.groupby(stream, key=lambda d: d.image):
            yield image, list(group)
        return
    log.info("%s is not sorted by ImageID; sorting externally", path)
    with tempfile.TemporaryDirectory(dir=tmpdir) as tmp:
        merged = external_sort_by_image(iter_predictions(path, stats), tmp, chunk_rows)
        for image, group in itertools.groupby(merged, key=lambda d: d.image):
            yield image, list(group)


def merge_image_groups(streams: Sequence[Iterator[Tuple[str, List[Detection]]]]
                       ) -> Iterator[Tuple[str, List[List[Detection]]]]:
    """Align several image-ordered group streams on image id.

    Yields ``(image_id, [dets from stream 0, dets from stream 1, ...])``.
    """
    def tag(k, s):
        for image, dets in s:
            yield image, k, dets

    tagged = [tag(k, s) for k, s in enumerate(streams)]
    merged = heapq.merge(*tagged, key=lambda t: t[0])
    for image, items in itertools.groupby(merged, key=lambda t: t[0]):
        per_stream: List[List[Detection]] = [[] for _ in streams]
        for _, k, dets in items:
            per_stream[k].extend(dets)
        yield image, per_stream


def read_image_sizes(path) -> Dict[str, Tuple[float, float]]:
    """Read ``ImageID,Width,Height`` (pixels)."""
    sizes = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        pos, _ = _column_positions(next(reader, None), ("ImageID", "Width", "Height"), path)
        for row in reader:
            if not row:
                continue
            try:
                w, h = float(row[pos[1]]), float(row[pos[2]])
            except (ValueError, IndexError):
                raise ParseError("bad Width/Height", source=path, line=reader.line_num) from None
            if w <= 0 or h <= 0:
                raise ParseError("Width and Height must be positive", source=path, line=reader.line_num)
            sizes[row[pos[0]]] = (w, h)
    return sizes


def read_label_list(path) -> List[str]:
    """One label id per line (a first CSV column is also accepted)."""
    labels = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                labels.append(line.split(",")[0])
    return labels
