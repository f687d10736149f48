import numpy as np
import pytest

from ribeval.cls_eval import (
    COL_LABELS,
    ConfusionMatrix,
    ROW_LABELS,
    build_confusion,
    f1_scores,
)
from ribeval.detect_eval import MatchResult, ProposalRecord
from ribeval.errors import InputFaultError

from oracles import f1_bruteforce


def make_result(gt_ids, proposals):
    """proposals: (pid, conf, matched_gt_or_None)."""
    records = []
    hit_map = {g: [] for g in gt_ids}
    for pid, conf, matched in proposals:
        records.append(ProposalRecord(pid, conf, 10, matched, 0.5 if matched else 0.0,
                                      2 * 0.5 / 1.5 if matched else 0.0))
        if matched is not None:
            hit_map[matched].append(pid)
    return MatchResult("s", records, list(gt_ids), hit_map, 0.2)


def cell(matrix, row, col):
    return int(matrix.counts[ROW_LABELS.index(row), COL_LABELS.index(col)])


class TestBuildConfusion:
    def test_perfect_predictions_are_diagonal(self):
        result = make_result([1, 2, 3, 4], [(1, 0.9, 1), (2, 0.9, 2), (3, 0.9, 3), (4, 0.9, 4)])
        gt_classes = {1: "BK", 2: "ND", 3: "DP", 4: "SG"}
        matrix = build_confusion(result, gt_classes, gt_classes)
        expected = np.zeros((5, 6), dtype=np.int64)
        np.fill_diagonal(expected[:4, :4], 1)
        assert np.array_equal(matrix.counts, expected)

    def test_highest_confidence_hit_supplies_class(self):
        # GT of class DP hit by (0.9 -> ND) and (0.8 -> DP): one count at (ND, DP)
        result = make_result([1], [(1, 0.9, 1), (2, 0.8, 1)])
        matrix = build_confusion(result, {1: "ND", 2: "DP"}, {1: "DP"})
        assert cell(matrix, "ND", "DP") == 1
        assert int(matrix.counts.sum()) == 1

    def test_confidence_tie_takes_smaller_proposal_id(self):
        result = make_result([1], [(2, 0.9, 1), (1, 0.9, 1)])
        matrix = build_confusion(result, {1: "BK", 2: "SG"}, {1: "ND"})
        assert cell(matrix, "BK", "ND") == 1

    def test_fp_proposal_lands_in_fp_column(self):
        result = make_result([], [(1, 0.7, None)])
        matrix = build_confusion(result, {1: "SG"}, {})
        assert cell(matrix, "SG", "FP") == 1
        assert int(matrix.counts.sum()) == 1

    def test_missed_gt_lands_in_fn_row(self):
        result = make_result([1], [])
        matrix = build_confusion(result, {}, {1: "DP"})
        assert cell(matrix, "FN", "DP") == 1

    def test_unclassified_gt_uses_un_column(self):
        result = make_result([1], [(1, 0.9, 1)])
        matrix = build_confusion(result, {1: "BK"}, {1: "UN"})
        assert cell(matrix, "BK", "UN") == 1

    def test_conf_threshold_drops_proposals_first(self):
        result = make_result([1], [(1, 0.3, 1), (2, 0.2, None)])
        matrix = build_confusion(result, {1: "BK", 2: "ND"}, {1: "BK"}, conf_threshold=0.5)
        assert cell(matrix, "FN", "BK") == 1
        assert int(matrix.counts.sum()) == 1

    def test_un_prediction_rejected(self):
        result = make_result([1], [(1, 0.9, 1)])
        with pytest.raises(InputFaultError, match="UN"):
            build_confusion(result, {1: "UN"}, {1: "BK"})

    def test_missing_classes_rejected(self):
        result = make_result([1], [(1, 0.9, 1)])
        with pytest.raises(InputFaultError, match="no class"):
            build_confusion(result, {}, {1: "BK"})
        with pytest.raises(InputFaultError, match="no class"):
            build_confusion(result, {1: "BK"}, {})

    def test_fn_row_never_in_fp_column(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            matrix = _random_matrix_from_scenario(rng)
            assert cell(matrix, "FN", "FP") == 0

    def test_matrices_sum_across_scans(self):
        r1 = make_result([1], [(1, 0.9, 1)])
        r2 = make_result([], [(1, 0.7, None)])
        m1 = build_confusion(r1, {1: "BK"}, {1: "BK"})
        m2 = build_confusion(r2, {1: "ND"}, {})
        total = m1 + m2
        assert cell(total, "BK", "BK") == 1
        assert cell(total, "ND", "FP") == 1

    def test_total_count_invariant(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            matrix, n_gt, n_fp = _random_matrix_from_scenario(rng, with_counts=True)
            assert int(matrix.counts.sum()) == n_gt + n_fp


def _random_matrix_from_scenario(rng, with_counts=False):
    classes = ("BK", "ND", "DP", "SG")
    n_gt = int(rng.integers(0, 6))
    gt_ids = list(range(1, n_gt + 1))
    gt_classes = {g: (classes + ("UN",))[int(rng.integers(0, 5))] for g in gt_ids}
    proposals = []
    pred_classes = {}
    pid = 0
    for g in gt_ids:
        for _ in range(int(rng.integers(0, 3))):
            pid += 1
            proposals.append((pid, float(rng.random()), g))
            pred_classes[pid] = classes[int(rng.integers(0, 4))]
    for _ in range(int(rng.integers(0, 4))):
        pid += 1
        proposals.append((pid, float(rng.random()), None))
        pred_classes[pid] = classes[int(rng.integers(0, 4))]
    result = make_result(gt_ids, proposals)
    threshold = float(rng.choice([0.0, 0.3, 0.6]))
    matrix = build_confusion(result, pred_classes, gt_classes, conf_threshold=threshold)
    if with_counts:
        n_fp = sum(1 for p, c, m in proposals if m is None and c >= threshold)
        return matrix, n_gt, n_fp
    return matrix


class TestF1Scores:
    def test_diagonal_matrix_scores_one(self):
        counts = np.zeros((5, 6), dtype=np.int64)
        np.fill_diagonal(counts[:4, :4], 3)
        scores = f1_scores(ConfusionMatrix(counts), "overall")
        assert scores == {"BK": 1.0, "ND": 1.0, "DP": 1.0, "SG": 1.0, "macro": 1.0}

    def test_absent_class_scores_zero_and_drags_macro(self):
        counts = np.zeros((5, 6), dtype=np.int64)
        counts[1, 1] = counts[2, 2] = counts[3, 3] = 2  # BK absent entirely
        scores = f1_scores(ConfusionMatrix(counts), "overall")
        assert scores["BK"] == 0.0
        assert scores["macro"] == pytest.approx(0.75)

    def test_un_column_always_ignored(self):
        counts = np.zeros((5, 6), dtype=np.int64)
        np.fill_diagonal(counts[:4, :4], 1)
        counts[0, 5] = 7  # BK predictions on UN targets
        for mode in ("overall", "target_aware", "prediction_aware"):
            assert f1_scores(ConfusionMatrix(counts), mode)["macro"] == 1.0

    def test_modes_drop_expected_cells(self):
        counts = np.zeros((5, 6), dtype=np.int64)
        np.fill_diagonal(counts[:4, :4], 2)
        counts[0, 4] = 2  # BK false positives hurt precision
        counts[4, 0] = 2  # missed BK targets hurt recall
        overall = f1_scores(ConfusionMatrix(counts), "overall")
        target = f1_scores(ConfusionMatrix(counts), "target_aware")
        pred = f1_scores(ConfusionMatrix(counts), "prediction_aware")
        assert overall["BK"] < target["BK"] < pred["BK"] == 1.0

    def test_matches_binary_count_oracle(self):
        rng = np.random.default_rng(88)
        for _ in range(200):
            counts = rng.integers(0, 7, size=(5, 6)).astype(np.int64)
            counts[4, 4] = 0  # FN row has no FP entries by construction
            matrix = ConfusionMatrix(counts)
            for mode in ("overall", "target_aware", "prediction_aware"):
                scores = f1_scores(matrix, mode)
                oracle = f1_bruteforce(counts, mode)
                for key, value in oracle.items():
                    assert scores[key] == pytest.approx(value, abs=1e-12), (mode, key)

    def test_dropping_fp_column_and_fn_row_never_hurts(self):
        # dropping the FP column cannot decrease any class precision;
        # dropping the FN row on top cannot decrease any class recall
        rng = np.random.default_rng(90)

        def precision_recall(effective):
            out = {}
            for i in range(4):
                tp = effective[i, i]
                row = effective[i, :].sum()
                col = effective[:, i].sum()
                out[i] = (tp / row if row else 0.0, tp / col if col else 0.0)
            return out

        for _ in range(100):
            counts = rng.integers(0, 7, size=(5, 6)).astype(np.float64)
            counts[4, 4] = 0
            overall = precision_recall(counts[:, :5])
            target = precision_recall(counts[:, :4])
            pred = precision_recall(counts[:4, :4])
            for i in range(4):
                assert target[i][0] >= overall[i][0] - 1e-12
                assert pred[i][1] >= target[i][1] - 1e-12

    def test_class_permutation_equivariance(self):
        rng = np.random.default_rng(92)
        counts = rng.integers(0, 9, size=(5, 6)).astype(np.int64)
        counts[4, 4] = 0
        perm = [2, 0, 3, 1]
        permuted = counts.copy()
        permuted[:4, :] = counts[perm, :]
        permuted[:, :4] = permuted[:, perm]
        base = f1_scores(ConfusionMatrix(counts), "overall")
        shuffled = f1_scores(ConfusionMatrix(permuted), "overall")
        classes = ("BK", "ND", "DP", "SG")
        for new_idx, old_idx in enumerate(perm):
            assert shuffled[classes[new_idx]] == pytest.approx(base[classes[old_idx]])
        assert shuffled["macro"] == pytest.approx(base["macro"])

    def test_bad_mode(self):
        with pytest.raises(InputFaultError, match="mode"):
            f1_scores(ConfusionMatrix.zeros(), "micro")

    def test_negative_counts_rejected(self):
        counts = np.zeros((5, 6), dtype=np.int64)
        counts[0, 0] = -1
        with pytest.raises(InputFaultError):
            ConfusionMatrix(counts)
