import numpy as np
import pytest

from ribeval.detect_eval import (
    MatchResult,
    ProposalRecord,
    confidence_report,
    froc,
    match_proposals,
    overlap_metrics,
    seg_metric_summary,
)
from ribeval.errors import EmptySummaryError, InputFaultError

from oracles import froc_bruteforce, match_bruteforce


def random_scene(rng, dims=(8, 8, 8), max_instances=4):
    """Random instance maps made of overwriting boxes, plus confidences."""

    def label_map():
        labels = np.zeros(dims, dtype=np.int32)
        for i in range(1, int(rng.integers(1, max_instances + 1)) + 1):
            lo = rng.integers(0, np.array(dims) - 1)
            hi = lo + rng.integers(1, 5, size=3)
            hi = np.minimum(hi, dims)
            labels[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = i
        return labels

    pred = label_map()
    gt = label_map()
    confidences = {int(v): float(rng.random()) for v in np.unique(pred) if v > 0}
    return pred, gt, confidences


def result_from_assignments(scan_id, gt_ids, proposals):
    """Hand-build a MatchResult from (pid, conf, matched_gt, iou) tuples."""
    records = []
    hit_map = {g: [] for g in gt_ids}
    for pid, conf, matched, iou in proposals:
        dice = 2 * iou / (1 + iou) if iou > 0 else 0.0
        records.append(ProposalRecord(pid, conf, 10, matched, iou, dice))
        if matched is not None:
            hit_map[matched].append(pid)
    return MatchResult(scan_id, records, list(gt_ids), hit_map, 0.2)


class TestOverlapMetrics:
    def test_identical_masks(self):
        mask = np.zeros((4, 4, 4), dtype=np.int32)
        mask[1:3, 1:3, 1:3] = 1
        assert overlap_metrics(mask, mask) == (1.0, 1.0)

    def test_disjoint_masks(self):
        a = np.zeros((4, 4, 4), dtype=np.int32)
        b = np.zeros((4, 4, 4), dtype=np.int32)
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert overlap_metrics(a, b) == (0.0, 0.0)

    def test_half_overlap(self):
        # |A| = |B| = 100, |A∩B| = 50 -> IoU 1/3, Dice 1/2
        a = np.zeros((10, 10, 10), dtype=np.int32)
        b = np.zeros((10, 10, 10), dtype=np.int32)
        a.ravel()[:100] = 1
        b.ravel()[50:150] = 1
        iou, dice = overlap_metrics(a, b)
        assert iou == pytest.approx(1 / 3, abs=1e-15)
        assert dice == pytest.approx(0.5, abs=1e-15)

    def test_both_empty(self):
        z = np.zeros((3, 3, 3), dtype=np.int32)
        assert overlap_metrics(z, z) == (0.0, 0.0)

    def test_dims_mismatch(self):
        with pytest.raises(InputFaultError, match="mismatch"):
            overlap_metrics(np.zeros((2, 2, 2), np.int32), np.zeros((3, 3, 3), np.int32))


class TestMatchProposals:
    def test_self_match(self):
        gt = np.zeros((8, 8, 8), dtype=np.int32)
        gt[0:3, 0:3, 0:3] = 1
        gt[5:8, 5:8, 5:8] = 2
        result = match_proposals(gt.copy(), gt, {1: 1.0, 2: 1.0}, scan_id="s")
        assert all(p.matched_gt_id == p.proposal_id for p in result.proposals)
        assert all(p.iou == 1.0 for p in result.proposals)
        assert result.fp_candidates == []

    def test_below_threshold_is_fp_candidate(self):
        # |pred| = 100, |gt| = 19 nested inside -> IoU 0.19 < 0.2
        pred = np.zeros((10, 10, 10), dtype=np.int32)
        gt = np.zeros((10, 10, 10), dtype=np.int32)
        pred.ravel()[:100] = 1
        gt.ravel()[:19] = 1
        result = match_proposals(pred, gt, {1: 0.8})
        (p,) = result.proposals
        assert p.matched_gt_id is None
        assert p.iou == pytest.approx(0.19, abs=1e-15)
        assert result.fp_candidates == [p]

    def test_exact_threshold_is_hit(self):
        # |pred| = 100, |gt| = 20 nested -> IoU exactly 0.2
        pred = np.zeros((10, 10, 10), dtype=np.int32)
        gt = np.zeros((10, 10, 10), dtype=np.int32)
        pred.ravel()[:100] = 1
        gt.ravel()[:20] = 1
        result = match_proposals(pred, gt, {1: 0.8})
        assert result.proposals[0].matched_gt_id == 1

    def test_missing_confidence(self):
        gt = np.zeros((4, 4, 4), dtype=np.int32)
        gt[0, 0, 0] = 1
        with pytest.raises(InputFaultError, match="confidence"):
            match_proposals(gt, gt, {})

    def test_dims_mismatch(self):
        with pytest.raises(InputFaultError, match="mismatch"):
            match_proposals(
                np.zeros((2, 2, 2), np.int32), np.zeros((3, 3, 3), np.int32), {}
            )

    def test_tie_breaks_to_smaller_gt_id(self):
        # one proposal overlapping two same-size GTs equally
        pred = np.zeros((6, 6, 6), dtype=np.int32)
        gt = np.zeros((6, 6, 6), dtype=np.int32)
        pred[0:2, 0:2, 0:2] = 1
        gt[0:1, 0:2, 0:2] = 1
        gt[1:2, 0:2, 0:2] = 2
        result = match_proposals(pred, gt, {1: 0.5})
        assert result.proposals[0].matched_gt_id == 1

    def test_matches_bruteforce_on_random_scenes(self):
        rng = np.random.default_rng(101)
        for _ in range(60):
            pred, gt, confidences = random_scene(rng)
            result = match_proposals(pred, gt, confidences)
            oracle = match_bruteforce(pred, gt, confidences, 0.2)
            got = {p.proposal_id: (p.matched_gt_id, p.iou) for p in result.proposals}
            assert set(got) == set(oracle)
            for pid, (gid, iou) in oracle.items():
                assert got[pid][0] == gid
                assert got[pid][1] == pytest.approx(iou, abs=1e-12)

    def test_dice_identity_on_random_scenes(self):
        rng = np.random.default_rng(55)
        for _ in range(20):
            pred, gt, confidences = random_scene(rng)
            result = match_proposals(pred, gt, confidences)
            for p in result.proposals:
                assert p.dice == pytest.approx(2 * p.iou / (1 + p.iou), abs=1e-12)

    def test_noncontiguous_ids(self):
        pred = np.zeros((6, 6, 6), dtype=np.int32)
        gt = np.zeros((6, 6, 6), dtype=np.int32)
        pred[0:2, 0:2, 0:2] = 7
        gt[0:2, 0:2, 0:2] = 40
        result = match_proposals(pred, gt, {7: 0.9})
        (p,) = result.proposals
        assert p.proposal_id == 7
        assert p.matched_gt_id == 40
        assert result.gt_ids == [40]


class TestFroc:
    def test_perfect_predictions(self):
        gt = np.zeros((8, 8, 8), dtype=np.int32)
        gt[0:3, 0:3, 0:3] = 1
        gt[5:8, 5:8, 5:8] = 2
        results = [
            match_proposals(gt.copy(), gt, {1: 0.9, 2: 0.4}, scan_id=s) for s in "ab"
        ]
        curve = froc(results)
        assert all(v == 1.0 for v in curve.level_sensitivities.values())
        assert curve.avg_sensitivity == 1.0
        assert curve.max_sensitivity == 1.0
        assert curve.avg_fp_total == 0.0

    def test_two_scan_hand_example(self):
        # 2 scans, 2 GT each; hits at 0.9/0.8/0.7 on three distinct GTs plus
        # a duplicate 0.7 hit on an already-hit GT; FPs at 0.85 and 0.6.
        # Best threshold for FP level 0.5 is 0.7: avg_fp = 0.5, 3 GTs hit.
        scan1 = result_from_assignments(
            "s1", [1, 2],
            [(1, 0.9, 1, 1.0), (2, 0.7, 2, 0.9), (3, 0.85, None, 0.0)],
        )
        scan2 = result_from_assignments(
            "s2", [1, 2],
            [(1, 0.8, 1, 1.0), (2, 0.7, 1, 0.5), (3, 0.6, None, 0.1)],
        )
        curve = froc([scan1, scan2])
        assert curve.level_sensitivities[0.5] == pytest.approx(0.75, abs=1e-15)
        assert curve.max_sensitivity == pytest.approx(0.75)
        assert curve.avg_fp_total == pytest.approx(1.0)
        expected_points = [
            (0.0, 0.0),   # +inf
            (0.0, 0.25),  # t=0.9
            (0.5, 0.25),  # t=0.85
            (0.5, 0.5),   # t=0.8
            (0.5, 0.75),  # t=0.7
            (1.0, 0.75),  # t=0.6
        ]
        assert curve.points == expected_points

    def test_matches_bruteforce_sweep(self):
        rng = np.random.default_rng(202)
        for _ in range(40):
            n_scans = int(rng.integers(1, 4))
            results = []
            scans = []
            total_gt = 0
            for s in range(n_scans):
                pred, gt, confidences = random_scene(rng)
                result = match_proposals(pred, gt, confidences, scan_id=f"s{s}")
                results.append(result)
                total_gt += len(result.gt_ids)
                scans.append(
                    {
                        "gt_ids": result.gt_ids,
                        "proposals": [
                            (p.proposal_id, p.confidence, p.matched_gt_id)
                            for p in result.proposals
                        ],
                    }
                )
            if total_gt == 0:
                continue
            curve = froc(results)
            oracle = froc_bruteforce(scans, [0.5, 1, 2, 4, 8])
            assert curve.points == oracle["points"]
            for level, sens in oracle["level_sensitivities"].items():
                assert curve.level_sensitivities[level] == pytest.approx(sens, abs=1e-12)
            assert curve.avg_sensitivity == pytest.approx(oracle["avg_sensitivity"], abs=1e-12)

    def test_monotone_step_function(self):
        rng = np.random.default_rng(77)
        pred, gt, confidences = random_scene(rng, dims=(10, 10, 10), max_instances=5)
        result = match_proposals(pred, gt, confidences)
        if not result.gt_ids:
            pytest.skip("degenerate scene")
        curve = froc([result])
        fps = [p[0] for p in curve.points]
        sens = [p[1] for p in curve.points]
        assert fps == sorted(fps)
        assert sens == sorted(sens)
        levels = sorted(curve.level_sensitivities)
        values = [curve.level_sensitivities[lv] for lv in levels]
        assert values == sorted(values)

    def test_rank_invariance(self):
        rng = np.random.default_rng(303)
        results = []
        for s in range(3):
            pred, gt, confidences = random_scene(rng)
            results.append(match_proposals(pred, gt, confidences, scan_id=f"s{s}"))
        curve = froc(results)

        def squash(c):  # strictly increasing [0,1] -> [0,1]
            return c / (1 + c) * 2 / 1.0

        mapped = []
        for r in results:
            records = [
                ProposalRecord(p.proposal_id, squash(p.confidence), p.voxel_count,
                               p.matched_gt_id, p.iou, p.dice)
                for p in r.proposals
            ]
            mapped.append(MatchResult(r.scan_id, records, r.gt_ids, r.hit_map,
                                      r.iou_threshold))
        curve2 = froc(mapped)
        assert curve.points == curve2.points
        assert curve.level_sensitivities == curve2.level_sensitivities
        assert curve.avg_sensitivity == curve2.avg_sensitivity

    def test_empty_scan_list_rejected(self):
        with pytest.raises(InputFaultError):
            froc([])

    def test_zero_total_gt_rejected(self):
        result = result_from_assignments("s", [], [(1, 0.5, None, 0.0)])
        with pytest.raises(InputFaultError, match="ground-truth"):
            froc([result])

    def test_zero_gt_scan_counts_in_fp_denominator(self):
        with_gt = result_from_assignments("a", [1], [(1, 0.9, 1, 1.0)])
        no_gt = result_from_assignments("b", [], [(1, 0.8, None, 0.0)])
        curve = froc([with_gt, no_gt])
        assert curve.avg_fp_total == pytest.approx(0.5)


class TestSegSummary:
    def test_all_matched_variants_equal(self):
        result = result_from_assignments("s", [1, 2], [(1, 0.9, 1, 0.8), (2, 0.8, 2, 0.6)])
        incl = seg_metric_summary([result], include_fp=True)
        excl = seg_metric_summary([result], include_fp=False)
        assert incl[:2] == excl[:2]

    def test_fp_pulls_mean_down(self):
        result = result_from_assignments("s", [1], [(1, 0.9, 1, 0.5), (2, 0.3, None, 0.0)])
        mean_iou_incl, _, _ = seg_metric_summary([result], include_fp=True)
        mean_iou_excl, _, _ = seg_metric_summary([result], include_fp=False)
        assert mean_iou_incl == pytest.approx(0.25)
        assert mean_iou_excl == pytest.approx(0.5)

    def test_self_eval_means_one(self):
        gt = np.zeros((8, 8, 8), dtype=np.int32)
        gt[0:4, 0:4, 0:4] = 1
        result = match_proposals(gt.copy(), gt, {1: 1.0})
        mean_iou, mean_dice, _ = seg_metric_summary([result])
        assert mean_iou == 1.0
        assert mean_dice == 1.0

    def test_empty_exclude_fp_signals(self):
        result = result_from_assignments("s", [1], [(1, 0.9, None, 0.1)])
        with pytest.raises(EmptySummaryError):
            seg_metric_summary([result], include_fp=False)

    def test_records_carry_gt_classes(self):
        result = result_from_assignments("s", [1], [(1, 0.9, 1, 0.7)])
        result.gt_classes = {1: "DP"}
        _, _, records = seg_metric_summary([result])
        assert records[0].class_code == "DP"


class TestConfidenceReport:
    def test_self_eval_all_tp(self):
        gt = np.zeros((8, 8, 8), dtype=np.int32)
        gt[0:3, 0:3, 0:3] = 1
        result = match_proposals(gt.copy(), gt, {1: 1.0})
        report = confidence_report([result])
        assert [p["category"] for p in report["proposals"]] == ["TP"]
        assert report["false_negatives"] == []
        assert report["counts"] == {"tp_gt": 1, "fn": 0, "fp": 0, "duplicate_hits": 0}

    def test_fp_entry_has_best_iou(self):
        pred = np.zeros((10, 10, 10), dtype=np.int32)
        gt = np.zeros((10, 10, 10), dtype=np.int32)
        pred.ravel()[:100] = 1
        gt.ravel()[:10] = 1  # IoU 0.1, below threshold
        result = match_proposals(pred, gt, {1: 0.3})
        report = confidence_report([result])
        (entry,) = report["proposals"]
        assert entry["category"] == "FP"
        assert entry["confidence"] == 0.3
        assert entry["iou"] == pytest.approx(0.1, abs=1e-15)
        (fn,) = report["false_negatives"]
        assert fn["near_miss_confidence"] == 0.3

    def test_fn_without_overlap_has_no_near_miss(self):
        pred = np.zeros((6, 6, 6), dtype=np.int32)
        gt = np.zeros((6, 6, 6), dtype=np.int32)
        pred[0, 0, 0] = 1
        gt[5, 5, 5] = 1
        result = match_proposals(pred, gt, {1: 0.4})
        (fn,) = confidence_report([result])["false_negatives"]
        assert fn["near_miss_confidence"] is None

    def test_counting_invariants_random(self):
        rng = np.random.default_rng(404)
        for _ in range(30):
            pred, gt, confidences = random_scene(rng)
            result = match_proposals(pred, gt, confidences)
            report = confidence_report([result])
            counts = report["counts"]
            assert counts["tp_gt"] + counts["fn"] == len(result.gt_ids)
            categories = [p["category"] for p in report["proposals"]]
            assert len(categories) == len(result.proposals)
            assert categories.count("FP") == counts["fp"]
            n_matched = sum(1 for p in result.proposals if p.matched_gt_id is not None)
            assert categories.count("TP") == n_matched
            assert counts["tp_gt"] + counts["duplicate_hits"] == n_matched
