"""Command-line entry point: ``hierdet <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile
from collections import Counter, defaultdict
from contextlib import contextmanager

from . import formats
from .chips import plan_chips
from .config import PipelineConfig, load_config_file
from .errors import ConfigError, HierdetError, MixedImageError, ParseError, UnknownLabelError
from .evaluation import hierarchical_map
from .hierarchy import expand_records, load_hierarchy
from .postprocess import check_weights, nms_per_class
from .sampling import (ClassAwareSampler, build_index, imbalance_ratio, imbalance_stats,
                       soft_weight)

log = logging.getLogger("hierdet")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class DataError(HierdetError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool_flag(parser, name, dest, help):
    parser.add_argument(f"--{name}", dest=dest, action="store_true", default=None, help=help)
    parser.add_argument(f"--no-{name}", dest=dest, action="store_false", help=argparse.SUPPRESS)


def _hnms_args(p):
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--vote-iou", type=float)
    p.add_argument("--vote-fraction", type=float)
    p.add_argument("--score-floor", type=float)
    _bool_flag(p, "clamp-scores", "clamp_scores", "clamp voted scores at 1.0 (default; --no-clamp-scores disables)")
    p.add_argument("--permissive", action="store_true", default=None,
                   help="skip predictions with labels missing from the hierarchy")
    p.add_argument("--evaluated-labels", help="only expand to ancestors listed in this file")
    p.add_argument("--chunk-rows", type=int, help="rows per spill file when sorting unsorted input")


def build_parser():
    parser = _Parser(prog="hierdet", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat JSON file of option values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("hnms", help="hierarchical NMS with score voting over a predictions CSV")
    p.add_argument("--hierarchy")
    p.add_argument("--predictions", nargs=1)
    p.add_argument("--output")
    _hnms_args(p)

    p = sub.add_parser("ensemble", help="fuse several predictions CSVs with hierarchical NMS")
    p.add_argument("--hierarchy")
    p.add_argument("--predictions", nargs="+")
    p.add_argument("--weights", nargs="+", type=float, help="one weight in (0, 1] per predictions file")
    p.add_argument("--output")
    _hnms_args(p)

    p = sub.add_parser("expand", help="add ancestor-label copies of every prediction")
    p.add_argument("--hierarchy")
    p.add_argument("--predictions", nargs=1)
    p.add_argument("--output")
    p.add_argument("--permissive", action="store_true", default=None)
    p.add_argument("--evaluated-labels")
    p.add_argument("--chunk-rows", type=int)

    p = sub.add_parser("eval", help="hierarchy-aware mAP of predictions against ground truth")
    p.add_argument("--hierarchy")
    p.add_argument("--names", help="LabelName,DisplayName CSV for the report")
    p.add_argument("--predictions", nargs=1)
    p.add_argument("--ground-truth")
    p.add_argument("--output", help="JSON report path")
    p.add_argument("--iou-threshold", type=float)
    _bool_flag(p, "expand-detections", "expand_detections",
               "expand predictions to ancestor labels (default; --no-expand-detections scores them as given)")
    p.add_argument("--evaluated-labels")
    p.add_argument("--ap-method", choices=["all_point", "11_point"])

    p = sub.add_parser("sample", help="class-aware sampling plan (image ids, one per line)")
    p.add_argument("--ground-truth")
    p.add_argument("--output")
    p.add_argument("--num-batches", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    _bool_flag(p, "with-replacement-categories", "with_replacement_categories",
               "draw categories with replacement (default)")
    p.add_argument("--histogram", action="store_true", default=None,
                   help="print per-category draw counts and a chi-square statistic")

    p = sub.add_parser("chips", help="plan positive chips for every image")
    p.add_argument("--ground-truth")
    p.add_argument("--output")
    p.add_argument("--scales", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma-separated scales")
    p.add_argument("--chip-px", type=int)
    p.add_argument("--valid-min-px", type=float)
    p.add_argument("--valid-max-px", type=float)
    p.add_argument("--image-width", type=float)
    p.add_argument("--image-height", type=float)
    p.add_argument("--image-sizes", help="ImageID,Width,Height CSV")

    p = sub.add_parser("stats", help="per-label instance counts, most frequent first")
    p.add_argument("--ground-truth")
    p.add_argument("--hierarchy")
    p.add_argument("--names")
    p.add_argument("--output")

    p = sub.add_parser("softweight", help="soft-sampling weights for candidate boxes")
    p.add_argument("--candidates", help="ImageID,XMin,XMax,YMin,YMax CSV")
    p.add_argument("--ground-truth")
    p.add_argument("--output")
    p.add_argument("--w-min", type=float)
    p.add_argument("--gamma", type=float)
    return parser


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) in (None, [])]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


@contextmanager
def _atomic_output(path):
    """Write to a temp file next to ``path``; move into place only on success."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".hierdet-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_h(cfg):
    return load_hierarchy(cfg.hierarchy, cfg.names)


def _keep_labels(cfg):
    return None if cfg.evaluated_labels is None else frozenset(formats.read_label_list(cfg.evaluated_labels))


class _LabelFilter:
    """Drops (permissive) or collects unknown labels while streaming."""

    def __init__(self, h, permissive):
        self.h, self.permissive = h, permissive
        self.skipped = 0
        self.unknown = Counter()

    def __call__(self, dets):
        known = [d for d in dets if d.label in self.h]
        if len(known) != len(dets):
            for d in dets:
                if d.label not in self.h:
                    self.unknown[d.label] += 1
            self.skipped += len(dets) - len(known)
        return known

    @property
    def failed(self):
        return bool(self.unknown) and not self.permissive

    def raise_if_failed(self):
        if self.failed:
            listed = ", ".join(sorted(self.unknown))
            raise DataError(f"{sum(self.unknown.values())} predictions have labels missing from the "
                            f"hierarchy: {listed} (use --permissive to skip them)")


def cmd_hnms(cfg: PipelineConfig) -> int:
    _require(cfg, "hierarchy", "predictions", "output")
    if len(cfg.predictions) != 1:
        raise ConfigError("hnms takes exactly one predictions file")
    return _run_fusion(cfg, "hnms")


def cmd_ensemble(cfg: PipelineConfig) -> int:
    _require(cfg, "hierarchy", "predictions", "output")
    return _run_fusion(cfg, "ensemble")


def _run_fusion(cfg, name):
    h = _load_h(cfg)
    hcfg = cfg.hnms_config()
    keep = _keep_labels(cfg)
    paths = cfg.predictions
    run_ids = [f"run{i}" for i in range(len(paths))]
    if cfg.weights is not None and len(cfg.weights) != len(paths):
        raise ConfigError(f"got {len(cfg.weights)} weights for {len(paths)} predictions files")
    weights = check_weights(run_ids, None if cfg.weights is None else dict(zip(run_ids, cfg.weights)))
    weight_list = [weights[r] for r in run_ids]

    stats = [formats.ReadStats() for _ in paths]
    streams = [formats.iter_image_groups(p, s, cfg.chunk_rows) for p, s in zip(paths, stats)]
    filt = _LabelFilter(h, cfg.permissive)
    expanded = kept = 0
    with _atomic_output(cfg.output) as f:
        writer = formats.PredictionWriter(f)
        for image, per_run in formats.merge_image_groups(streams):
            per_run = [filt(dets) for dets in per_run]
            if filt.failed:
                continue  # keep reading so every unknown label gets reported
            pooled = []
            for weight, dets in zip(weight_list, per_run):
                if weight != 1.0:
                    dets = [d._replace(score=d.score * weight) for d in dets]
                pooled.extend(expand_records(h, dets, keep))
            expanded += len(pooled)
            out = nms_per_class(pooled, hcfg)
            writer.write(out)
            kept += len(out)
        filt.raise_if_failed()
    n_in = sum(s.rows for s in stats)
    print(f"{name}: input records {n_in}, expanded records {expanded}, kept records {kept}"
          + (f", skipped unknown-label records {filt.skipped}" if filt.skipped else ""),
          file=sys.stderr)
    return EXIT_OK


def cmd_expand(cfg: PipelineConfig) -> int:
    _require(cfg, "hierarchy", "predictions", "output")
    h = _load_h(cfg)
    keep = _keep_labels(cfg)
    stats = formats.ReadStats()
    filt = _LabelFilter(h, cfg.permissive)
    written = 0
    with _atomic_output(cfg.output) as f:
        writer = formats.PredictionWriter(f)
        for _, dets in formats.iter_image_groups(cfg.predictions[0], stats, cfg.chunk_rows):
            dets = filt(dets)
            if filt.failed:
                continue
            out = expand_records(h, dets, keep)
            writer.write(out)
            written += len(out)
        filt.raise_if_failed()
    print(f"expand: input records {stats.rows}, output records {written}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig) -> int:
    _require(cfg, "hierarchy", "predictions", "ground_truth")
    h = _load_h(cfg)
    dets = formats.read_predictions(cfg.predictions[0])
    gts = formats.read_ground_truth(cfg.ground_truth)
    evaluated = None
    if cfg.evaluated_labels is not None:
        evaluated = formats.read_label_list(cfg.evaluated_labels)
    unknown = sorted({g.label for g in gts if g.label not in h})
    if unknown:
        raise DataError(f"ground truth uses labels missing from the hierarchy: {', '.join(unknown)}")
    if cfg.expand_detections:
        bad = sorted({d.label for d in dets if d.label not in h})
        if bad and not cfg.permissive:
            raise DataError(f"predictions use labels missing from the hierarchy: {', '.join(bad)}")
        dets = [d for d in dets if d.label in h]
    report = hierarchical_map(h, dets, gts, cfg.iou_threshold, evaluated,
                              cfg.expand_detections, cfg.ap_method)
    doc = report.to_dict(h)
    doc["settings"] = {"iou_threshold": cfg.iou_threshold, "expand_detections": cfg.expand_detections,
                       "ap_method": cfg.ap_method}
    if cfg.output:
        with _atomic_output(cfg.output) as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    print(report.summary(h))
    return EXIT_OK


def chi_square_uniform(counts):
    """Pearson statistic and p-value of ``counts`` against a uniform distribution."""
    from scipy.stats import chisquare
    res = chisquare(counts)
    return float(res.statistic), float(res.pvalue)


def cmd_sample(cfg: PipelineConfig) -> int:
    _require(cfg, "ground_truth", "output")
    idx = build_index(formats.iter_ground_truth(cfg.ground_truth))
    sampler = ClassAwareSampler(idx, cfg.sampler_config())
    hist = Counter()
    with _atomic_output(cfg.output) as f:
        for _ in range(cfg.num_batches):
            images, cats = sampler.next_batch_with_categories()
            hist.update(cats)
            f.write("\n".join(images))
            f.write("\n")
    print(f"sample: {len(idx)} categories, {cfg.num_batches} batches of {cfg.batch_size}, "
          f"seed {cfg.seed}", file=sys.stderr)
    if cfg.histogram:
        counts = [hist[c] for c in idx.categories]
        total = sum(counts)
        print("category,draws,frequency")
        for c, n in zip(idx.categories, counts):
            print(f"{c},{n},{n / total if total else 0.0:.6f}")
        if total and len(counts) > 1:
            stat, p = chi_square_uniform(counts)
            print(f"chi-square {stat:.4f} (df={len(counts) - 1}), p-value {p:.6g}, "
                  f"expected frequency {1.0 / len(counts):.6f}")
    return EXIT_OK


def cmd_chips(cfg: PipelineConfig) -> int:
    _require(cfg, "ground_truth", "output")
    chip_cfg = cfg.chip_config()
    sizes = formats.read_image_sizes(cfg.image_sizes) if cfg.image_sizes else {}
    default = None
    if cfg.image_width is not None and cfg.image_height is not None:
        default = (cfg.image_width, cfg.image_height)
    by_image = defaultdict(list)
    for gt in formats.iter_ground_truth(cfg.ground_truth):
        by_image[gt.image].append(gt)
    n_chips = 0
    with _atomic_output(cfg.output) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("ImageID", "Scale", "XMin", "XMax", "YMin", "YMax", "NumCovered"))
        for image in sorted(by_image):
            size = sizes.get(image, default)
            if size is None:
                raise DataError(f"no pixel size for image {image!r}; pass --image-sizes or "
                                "--image-width/--image-height")
            plan = plan_chips(image, by_image[image], size, config=chip_cfg)
            covered = Counter(k for ks in plan.covered.values() for k in ks)
            for k, chip in enumerate(plan.chips):
                b = chip.window
                w.writerow((image, f"{chip.scale:g}", f"{b.xmin:.6f}", f"{b.xmax:.6f}",
                            f"{b.ymin:.6f}", f"{b.ymax:.6f}", covered[k]))
            n_chips += len(plan.chips)
    print(f"chips: {len(by_image)} images, {n_chips} chips", file=sys.stderr)
    return EXIT_OK


def cmd_stats(cfg: PipelineConfig) -> int:
    _require(cfg, "ground_truth")
    names = {}
    if cfg.hierarchy:
        h = _load_h(cfg)
        names = {label: h.display_name(label) for label in h}
    elif cfg.names:
        from .hierarchy import load_display_names
        names = load_display_names(cfg.names)
    rows = imbalance_stats(formats.iter_ground_truth(cfg.ground_truth))

    def emit(f):
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("LabelName", "DisplayName", "Count", "Log10Count"))
        for label, n in rows:
            w.writerow((label, names.get(label, label), n, f"{math.log10(n):.6f}"))

    if cfg.output:
        with _atomic_output(cfg.output) as f:
            emit(f)
    else:
        emit(sys.stdout)
    if rows:
        print(f"stats: {len(rows)} labels, max {rows[0][1]} ({rows[0][0]}), min {rows[-1][1]} "
              f"({rows[-1][0]}), max/min ratio {imbalance_ratio(rows):g}", file=sys.stderr)
    else:
        print("stats: no ground truth records", file=sys.stderr)
    return EXIT_OK


def _iter_candidates(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        pos, _ = formats._column_positions(next(reader, None), ("ImageID", "XMin", "XMax", "YMin", "YMax"), path)
        for row in reader:
            if not row:
                continue
            if len(row) <= max(pos):
                raise ParseError("too few fields", source=path, line=reader.line_num)
            box = formats._box([row[i] for i in pos[1:]], path, reader.line_num)
            yield row[pos[0]], box


def cmd_softweight(cfg: PipelineConfig) -> int:
    _require(cfg, "candidates", "ground_truth", "output")
    sw = cfg.soft_weight_config()
    gt_boxes = defaultdict(list)
    for gt in formats.iter_ground_truth(cfg.ground_truth):
        gt_boxes[gt.image].append(gt.box)
    n = 0
    with _atomic_output(cfg.output) as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("ImageID", "XMin", "XMax", "YMin", "YMax", "Weight"))
        for image, box in _iter_candidates(cfg.candidates):
            weight = soft_weight(box, gt_boxes.get(image, ()), sw)
            w.writerow((image, f"{box.xmin:.6f}", f"{box.xmax:.6f}", f"{box.ymin:.6f}",
                        f"{box.ymax:.6f}", f"{weight:.6f}"))
            n += 1
    print(f"softweight: {n} candidates", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "hnms": cmd_hnms,
    "ensemble": cmd_ensemble,
    "expand": cmd_expand,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "chips": cmd_chips,
    "stats": cmd_stats,
    "softweight": cmd_softweight,
}

_NOT_CONFIG = {"command", "config", "verbose"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = load_config_file(args.config) if args.config else {}
        overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        cfg = PipelineConfig.from_sources(file_values, overrides)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"hierdet {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HierdetError, MixedImageError, UnknownLabelError) as exc:
        print(f"hierdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hierdet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
