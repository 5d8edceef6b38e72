import random

import pytest
from hypothesis import given, settings, strategies as st

from hierdet import (BBox, Detection, GroundTruth, LabelHierarchy, UnknownLabelError, iou,
                     average_precision, expand_ground_truth, hierarchical_map, match_detections,
                     parse_hierarchy)
from oracles import ap_staircase, expand_set, match_reference
from toydata import CHAIN_DOC, LEAF, chain_toy

X = BBox(0.1, 0.1, 0.5, 0.5)
Y = BBox(0.6, 0.6, 0.9, 0.9)


class TestExpandGroundTruth:
    def test_root(self, chain):
        g = GroundTruth("i", "A", X)
        assert expand_ground_truth(chain, [g]) == [g]

    def test_chain(self, chain):
        out = expand_ground_truth(chain, [GroundTruth("i", "C", X)])
        assert [g.label for g in out] == ["C", "B", "A"]
        assert all(g.box == X for g in out)

    def test_diamond_dedup(self, diamond):
        gts = [GroundTruth("i", "D", X), GroundTruth("i", "B", X)]
        out = expand_ground_truth(diamond, gts)
        assert len(out) == 4
        parents = {"A": set(), "B": {"A"}, "C": {"A"}, "D": {"B", "C"}}
        assert set(out) == expand_set(parents, gts)

    def test_unknown(self, chain):
        with pytest.raises(UnknownLabelError):
            expand_ground_truth(chain, [GroundTruth("i", "Q", X)])


class TestMatch:
    def test_perfect(self):
        gts = [GroundTruth("i", "A", X), GroundTruth("i", "A", Y), GroundTruth("j", "B", X)]
        dets = [Detection(g.image, g.label, 0.3 + 0.1 * k, g.box) for k, g in enumerate(gts)]
        m = match_detections(dets, gts)
        assert all(tp for pairs in m.scores.values() for _, tp in pairs)
        assert m.gt_counts == {"A": 2, "B": 1}

    def test_below_threshold(self):
        d = Detection("i", "A", 0.9, BBox(0.1, 0.1, 0.26, 0.5))  # iou 0.4
        m = match_detections([d], [GroundTruth("i", "A", X)], 0.5)
        assert m.scores["A"] == [(0.9, False)]

    def test_one_to_one(self):
        gts = [GroundTruth("i", "A", X)]
        dets = [Detection("i", "A", 0.8, X), Detection("i", "A", 0.9, BBox(0.1, 0.1, 0.5, 0.45))]
        m = match_detections(dets, gts)
        assert sorted(m.scores["A"], reverse=True) == [(0.9, True), (0.8, False)]

    def test_prefers_highest_iou_unmatched(self):
        gts = [GroundTruth("i", "A", X), GroundTruth("i", "A", BBox(0.1, 0.1, 0.5, 0.4))]
        dets = [Detection("i", "A", 0.9, BBox(0.1, 0.1, 0.5, 0.41)), Detection("i", "A", 0.8, X)]
        m = match_detections(dets, gts)
        assert m.scores["A"] == [(0.9, True), (0.8, True)]

    def test_labels_and_images_separate(self):
        gts = [GroundTruth("i", "A", X)]
        dets = [Detection("i", "B", 0.9, X), Detection("j", "A", 0.9, X)]
        m = match_detections(dets, gts)
        assert m.scores == {"A": [(0.9, False)], "B": [(0.9, False)]}

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_reference(self, seed):
        rng = random.Random(seed)
        boxes = [X, Y, BBox(0.1, 0.1, 0.45, 0.5), BBox(0.62, 0.6, 0.9, 0.92), BBox(0.3, 0.3, 0.7, 0.7)]
        gts = [GroundTruth(rng.choice("ij"), rng.choice("AB"), rng.choice(boxes)) for _ in range(4)]
        dets = [Detection(rng.choice("ij"), rng.choice("AB"), rng.choice([0.2, 0.5, 0.9]), rng.choice(boxes))
                for _ in range(8)]
        m = match_detections(dets, gts)
        ref = match_reference(dets, gts, 0.5)
        assert {k: sorted(v) for k, v in m.scores.items()} == {k: sorted(v) for k, v in ref.items()}


class TestAveragePrecision:
    def test_all_tp(self):
        assert average_precision([(0.9, True), (0.5, True), (0.1, True)], 3) == 1.0

    def test_no_tp(self):
        assert average_precision([(0.9, False)], 2) == 0.0
        assert average_precision([], 2) == 0.0

    def test_no_gt(self):
        assert average_precision([(0.9, False)], 0) == 0.0

    def test_staircase(self):
        ap = average_precision([(0.9, True), (0.8, False), (0.7, True)], 2)
        assert ap == pytest.approx(1.0 * 0.5 + (2 / 3) * 0.5, abs=1e-15)
        assert ap == pytest.approx(ap_staircase([(0.9, True), (0.8, False), (0.7, True)], 2), abs=1e-15)

    def test_partial_recall(self):
        assert average_precision([(0.9, True)], 4) == 0.25

    def test_ties_put_true_positives_first(self):
        assert average_precision([(0.5, False), (0.5, True)], 1) == 1.0

    def test_eleven_point(self):
        ap = average_precision([(0.9, True), (0.8, False), (0.7, True)], 2, method="11_point")
        assert ap == pytest.approx((6 * 1.0 + 5 * (2 / 3)) / 11)
        with pytest.raises(ValueError):
            average_precision([(0.9, True)], 1, method="coco")

    @settings(max_examples=300)
    @given(st.lists(st.tuples(st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]), st.booleans()), max_size=8),
           st.integers(0, 4))
    def test_matches_staircase_oracle(self, pairs, extra_gt):
        n_tp = sum(tp for _, tp in pairs)
        gt_count = n_tp + extra_gt
        ap = average_precision(pairs, gt_count)
        assert 0.0 <= ap <= 1.0
        assert ap == ap_staircase(pairs, gt_count)

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(0.01, 1.0), st.booleans()), min_size=1, max_size=8),
           st.integers(0, 3))
    def test_low_false_positive_never_helps(self, pairs, extra_gt):
        gt_count = sum(tp for _, tp in pairs) + extra_gt
        worse = pairs + [(min(s for s, _ in pairs) / 2, False)]
        assert average_precision(worse, gt_count) <= average_precision(pairs, gt_count) + 1e-12


class TestHierarchicalMap:
    def test_perfect_predictions(self, chain):
        gts = [GroundTruth("i", "C", X), GroundTruth("j", "B", Y)]
        dets = [Detection(g.image, g.label, 1.0, g.box) for g in expand_ground_truth(chain, gts)]
        report = hierarchical_map(chain, dets, gts)
        assert report.mean_ap == 1.0
        assert report.evaluated_classes == {"A", "B", "C"}

    def test_empty_detections(self, chain):
        assert hierarchical_map(chain, [], [GroundTruth("i", "C", X)]).mean_ap == 0.0

    def test_child_only_predictions(self):
        h = parse_hierarchy(CHAIN_DOC)
        gts, dets = chain_toy(40, seed=3)
        on = hierarchical_map(h, dets, gts, expand_detections=True)
        off = hierarchical_map(h, dets, gts, expand_detections=False)
        leaf_ap = on.per_class_ap[LEAF]
        assert set(on.per_class_ap.values()) == {leaf_ap}
        assert on.mean_ap == pytest.approx(leaf_ap, abs=1e-15)
        assert off.per_class_ap[LEAF] == leaf_ap
        assert off.per_class_ap["/toy/animal"] == 0.0
        assert off.mean_ap == pytest.approx(leaf_ap / 3)

    def test_evaluated_subset(self, chain):
        gts = [GroundTruth("i", "C", X)]
        dets = [Detection("i", "C", 0.9, X)]
        report = hierarchical_map(chain, dets, gts, evaluated={"A", "C"})
        assert set(report.per_class_ap) == {"A", "C"}

    def test_classes_without_gt_excluded(self, chain):
        gts = [GroundTruth("i", "A", X)]
        dets = [Detection("i", "A", 0.9, X), Detection("i", "C", 0.9, Y)]
        report = hierarchical_map(chain, dets, gts, expand_detections=False)
        assert set(report.per_class_ap) == {"A"}
        assert report.mean_ap == 1.0

    def test_report_dict_and_summary(self, chain):
        report = hierarchical_map(chain, [Detection("i", "C", 0.9, X)], [GroundTruth("i", "C", X)])
        doc = report.to_dict(chain)
        assert doc["mean_ap"] == 1.0 and doc["num_classes"] == 3
        assert report.summary().startswith("mAP 1.000000")

    @pytest.mark.parametrize("seed", range(10))
    def test_permutation_invariant(self, chain, seed):
        rng = random.Random(seed)
        gts, dets = chain_toy(15, seed=seed)
        gts = [g._replace(label=rng.choice("ABC")) for g in gts]
        dets = [d._replace(label=rng.choice("ABC"), score=rng.choice([0.5, 0.7])) for d in dets]
        base = hierarchical_map(chain, dets, gts)
        rng.shuffle(gts)
        rng.shuffle(dets)
        assert hierarchical_map(chain, dets, gts) == base

    def test_fixing_a_false_positive_never_hurts(self):
        h = LabelHierarchy({"A": []})
        checked = 0
        for seed in range(20):
            gts, dets = chain_toy(8, seed=seed)
            gts = [g._replace(label="A") for g in gts]
            dets = [d._replace(label="A") for d in dets]
            before = hierarchical_map(h, dets, gts).per_class_ap["A"]
            flags, matched = _greedy(dets, gts)
            for i, d in enumerate(dets):
                if flags[i]:
                    continue
                for g in gts:
                    if g.image != d.image or g in matched:
                        continue
                    trial = dets[:i] + [d._replace(box=g.box)] + dets[i + 1:]
                    assert hierarchical_map(h, trial, gts).per_class_ap["A"] >= before - 1e-12
                    checked += 1
        assert checked >= 10


def _greedy(dets, gts):
    """Per-detection TP flags and the set of matched gts, same rule as the evaluator."""
    flags, matched = {}, set()
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].box))
    for i in order:
        d = dets[i]
        cands = sorted((g for g in gts if g.image == d.image and g.label == d.label and g not in matched),
                       key=lambda g: g.box)
        best = None
        for g in cands:
            o = iou(d.box, g.box)
            if o >= 0.5 and (best is None or o > best[0]):
                best = (o, g)
        flags[i] = best is not None
        if best:
            matched.add(best[1])
    return flags, matched
