"""Metric oracles, fold protocol checks, and ablation harness tests."""

import csv

import numpy as np
import pytest

from langseg.evaluation import (
    AblationRow,
    ConfusionMatrix,
    FoldSpec,
    MetricError,
    ablation_depth,
    ablation_embed_dim,
    chance_confusion,
    fb_iou,
    format_ablation_table,
    format_fold_table,
    miou,
    per_class_iou,
    pixacc,
    write_ablation_csv,
    write_fold_report_csv,
    zero_shot_fold_eval,
)

IGNORE = 255


def cm_from(gt, pred, n, ignore=IGNORE):
    return ConfusionMatrix(n).add(np.asarray(gt), np.asarray(pred), ignore_index=ignore)


def brute_force_iou(gt, pred, n, ignore=IGNORE):
    """Set-based per-class IoU, written independently of the matrix path."""
    gt = np.asarray(gt).ravel()
    pred = np.asarray(pred).ravel()
    keep = gt != ignore
    out = np.full(n, np.nan)
    for k in range(n):
        gt_k = {i for i in np.flatnonzero(keep & (gt == k))}
        pred_k = {i for i in np.flatnonzero(keep & (pred == k))}
        union = gt_k | pred_k
        if union:
            out[k] = len(gt_k & pred_k) / len(union)
    return out


def random_maps(rng, n, shape=(16, 16), ignore_frac=0.1):
    gt = rng.integers(0, n, size=shape)
    pred = rng.integers(0, n, size=shape)
    mask = rng.random(shape) < ignore_frac
    gt = np.where(mask, IGNORE, gt)
    return gt, pred


class TestConfusionMatrix:
    def test_hand_counts(self):
        cm = cm_from([0, 0, 1, 1], [0, 1, 1, 1], n=2)
        assert cm.counts.tolist() == [[1, 1], [0, 2]]

    def test_ignore_pixels_drop_out(self):
        cm = cm_from([0, IGNORE, 1], [0, 1, 1], n=2)
        assert cm.total() == 2
        assert cm.counts.tolist() == [[1, 0], [0, 1]]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            cm_from([0, 5], [0, 0], n=2)
        with pytest.raises(ValueError):
            cm_from([0, 0], [0, -1], n=2, ignore=None)

    def test_prediction_cannot_hide_behind_ignore(self):
        # ignore applies to ground truth only; a 255 prediction is an error
        with pytest.raises(ValueError):
            cm_from([0, 0], [0, IGNORE], n=2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            cm_from([0, 0, 0], [0, 0], n=2)

    def test_add_matches_chunked_merge(self):
        rng = np.random.default_rng(7)
        gt, pred = random_maps(rng, n=4)
        whole = cm_from(gt, pred, n=4)
        parts = ConfusionMatrix(4)
        for i in range(4):
            parts = parts.merge(cm_from(gt.ravel()[i::4], pred.ravel()[i::4], n=4))
        assert whole == parts

    def test_merge_associative_and_commutative(self):
        rng = np.random.default_rng(8)
        cms = []
        for _ in range(3):
            gt, pred = random_maps(rng, n=3)
            cms.append(cm_from(gt, pred, n=3))
        a, b, c = cms
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        assert left == right
        assert a.merge(b) == b.merge(a)

    def test_merge_size_mismatch(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(2).merge(ConfusionMatrix(3))

    def test_counts_validation(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(2, np.array([[1, 0], [0, -1]]))
        with pytest.raises(ValueError):
            ConfusionMatrix(3, np.zeros((2, 2), dtype=np.int64))


class TestMiou:
    def test_hand_case(self):
        cm = cm_from([0, 0, 1, 1], [0, 1, 1, 1], n=2)
        mean, ious = miou(cm)
        assert ious[0] == 0.5
        assert ious[1] == 2.0 / 3.0
        assert mean == pytest.approx(7.0 / 12.0, abs=1e-12)

    def test_matches_brute_force_on_random_maps(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            gt, pred = random_maps(rng, n)
            cm = cm_from(gt, pred, n)
            expect = brute_force_iou(gt, pred, n)
            got = per_class_iou(cm)
            assert np.array_equal(np.isnan(expect), np.isnan(got))
            ok = ~np.isnan(expect)
            assert np.array_equal(expect[ok], got[ok])
            mean, _ = miou(cm)
            assert mean == np.mean(np.sort(expect[ok]))

    def test_empty_class_excluded_from_mean(self):
        # class 2 never appears in gt or pred: mean stays over {0, 1}
        cm = cm_from([0, 0, 1, 1], [0, 1, 1, 1], n=3)
        mean, ious = miou(cm)
        assert np.isnan(ious[2])
        assert mean == pytest.approx(7.0 / 12.0, abs=1e-12)

    def test_class_with_only_false_positives_counts_as_zero(self):
        cm = cm_from([0, 0], [0, 1], n=2)
        mean, ious = miou(cm)
        assert ious[1] == 0.0
        assert mean == (0.5 + 0.0) / 2

    def test_all_empty_is_an_error(self):
        with pytest.raises(MetricError):
            miou(ConfusionMatrix(3))

    def test_include_restricts_mean(self):
        cm = cm_from([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 0, 0], n=3)
        mean, ious = miou(cm, include=[0, 1])
        assert mean == np.mean([ious[0], ious[1]])
        with pytest.raises(MetricError):
            miou(cm_from([0, 0], [0, 0], n=3), include=[1, 2])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        gt, pred = random_maps(rng, n=5)
        perm = rng.permutation(5)
        relabel = np.full(256, IGNORE, dtype=np.int64)
        relabel[:5] = perm
        relabel[IGNORE] = IGNORE
        mean_a, _ = miou(cm_from(gt, pred, n=5))
        mean_b, _ = miou(cm_from(relabel[gt], relabel[pred], n=5))
        assert mean_a == mean_b


class TestFbIou:
    def test_all_background_perfect(self):
        cm = cm_from([0] * 8, [0] * 8, n=3)
        assert fb_iou(cm, foreground=[1, 2]) == 1.0

    def test_swapped_halves_zero(self):
        gt = [0, 0, 1, 1]
        pred = [1, 1, 0, 0]
        assert fb_iou(cm_from(gt, pred, n=2), foreground=[1]) == 0.0

    def test_matches_binarized_miou(self):
        rng = np.random.default_rng(99)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            fg = sorted(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
            gt, pred = random_maps(rng, n)
            keep = gt != IGNORE
            gt_b = np.isin(gt, fg).astype(np.int64)[keep]
            pred_b = np.isin(pred, fg).astype(np.int64)[keep]
            expect, _ = miou(cm_from(gt_b, pred_b, n=2, ignore=None))
            got = fb_iou(cm_from(gt, pred, n), foreground=fg)
            assert got == expect

    def test_class_distinctions_ignored(self):
        # foreground confused with other foreground still counts as a hit
        cm = cm_from([1, 2, 1, 2], [2, 1, 2, 1], n=3)
        assert fb_iou(cm, foreground=[1, 2]) == 1.0

    def test_everything_foreground_rejected(self):
        with pytest.raises(ValueError):
            fb_iou(ConfusionMatrix(2), foreground=[0, 1])


class TestPixacc:
    def test_loop_oracle(self):
        rng = np.random.default_rng(11)
        gt, pred = random_maps(rng, n=4)
        hits = 0
        seen = 0
        for g, p in zip(gt.ravel(), pred.ravel()):
            if g == IGNORE:
                continue
            seen += 1
            hits += int(g == p)
        assert pixacc(cm_from(gt, pred, n=4)) == hits / seen

    def test_monte_carlo_binary_agreement(self):
        rng = np.random.default_rng(21)
        gt = rng.integers(0, 2, size=40000)
        pred = rng.integers(0, 2, size=40000)
        acc = pixacc(cm_from(gt, pred, n=2, ignore=None))
        assert abs(acc - 0.5) < 0.02

    def test_empty_is_an_error(self):
        with pytest.raises(MetricError):
            pixacc(ConfusionMatrix(2))


class TestFoldSpec:
    CLASSES = tuple(f"c{i}" for i in range(12))

    def test_strided_assignment(self):
        fold = FoldSpec(classes=self.CLASSES, fold_count=4, index=1)
        assert fold.fold_classes() == ("c1", "c5", "c9")
        assert set(fold.seen_classes()) == set(self.CLASSES) - {"c1", "c5", "c9"}

    @pytest.mark.parametrize("count", [1, 2, 3, 4, 5])
    def test_folds_partition_with_balanced_sizes(self, count):
        folds = [FoldSpec(classes=self.CLASSES, fold_count=count, index=i)
                 for i in range(count)]
        chunks = [f.fold_classes() for f in folds]
        flat = [c for chunk in chunks for c in chunk]
        assert sorted(flat) == sorted(self.CLASSES)
        sizes = [len(c) for c in chunks]
        assert max(sizes) - min(sizes) <= 1

    def test_seen_plus_fold_covers_everything(self):
        fold = FoldSpec(classes=self.CLASSES, fold_count=4, index=2)
        combined = set(fold.fold_classes()) | set(fold.seen_classes())
        assert combined == set(self.CLASSES)
        assert not set(fold.fold_classes()) & set(fold.seen_classes())

    def test_validation(self):
        with pytest.raises(ValueError):
            FoldSpec(classes=("a", "b"), fold_count=0)
        with pytest.raises(ValueError):
            FoldSpec(classes=("a", "b"), fold_count=2, index=2)
        with pytest.raises(ValueError):
            FoldSpec(classes=("a", "a", "b"), fold_count=2)
        with pytest.raises(ValueError):
            FoldSpec(classes=("a",), fold_count=2)


class TestZeroShotFoldEval:
    LABELS = ("other", "a", "b", "c")

    def fixed_eval(self, counts):
        def eval_fn(model, held):
            return ConfusionMatrix(4, np.array(counts)), self.LABELS, 0
        return eval_fn

    def test_train_fn_sees_only_seen_classes(self):
        seen_calls = []

        def train_fn(seen):
            seen_calls.append(seen)
            return "model"

        counts = [[50, 10, 0, 0], [8, 32, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
        fold = FoldSpec(classes=("a", "b", "c"), fold_count=3, index=0)
        result = zero_shot_fold_eval(fold, train_fn, self.fixed_eval(counts))
        assert seen_calls == [("b", "c")]
        iou_other = 50 / 68
        iou_a = 32 / 50
        assert result.miou == np.mean([iou_other, iou_a])
        assert result.fb_iou == np.mean([iou_other, iou_a])
        assert result.per_class == {"other": iou_other, "a": iou_a}

    def test_chance_is_constant_other_on_same_ground_truth(self):
        counts = [[50, 10, 0, 0], [8, 32, 0, 0], [0, 0, 0, 0], [0, 0, 0, 0]]
        fold = FoldSpec(classes=("a", "b", "c"), fold_count=3, index=0)
        result = zero_shot_fold_eval(fold, lambda seen: None, self.fixed_eval(counts))
        # always answering "other": IoU(other) = 60/100, IoU(a) = 0
        assert result.chance_miou == np.mean([0.6, 0.0])

    def test_chance_confusion_preserves_row_sums(self):
        cm = ConfusionMatrix(3, np.array([[5, 1, 0], [2, 7, 1], [0, 0, 4]]))
        chance = chance_confusion(cm, other_index=0)
        assert np.array_equal(chance.counts.sum(axis=1), cm.counts.sum(axis=1))
        assert chance.counts[:, 1:].sum() == 0

    def test_degenerate_fold_rejected(self):
        fold = FoldSpec(classes=("a", "b"), fold_count=1, index=0)
        with pytest.raises(ValueError, match="degenerate"):
            zero_shot_fold_eval(fold, lambda seen: None, self.fixed_eval(np.zeros((4, 4))))

    def test_fold_class_missing_from_labels_rejected(self):
        fold = FoldSpec(classes=("a", "b", "zebra"), fold_count=3, index=2)
        counts = np.zeros((4, 4), dtype=np.int64)
        with pytest.raises(ValueError, match="zebra"):
            zero_shot_fold_eval(fold, lambda seen: None, self.fixed_eval(counts))


class TestAblationHarness:
    def test_depth_grid_runs_every_pair(self):
        calls = []

        def run_fn(kind, depth):
            calls.append((kind, depth))
            return 0.5, 0.25

        rows = ablation_depth(run_fn)
        assert len(rows) == 8
        assert calls == [(k, d) for k in ("depthwise", "bottleneck")
                         for d in (0, 1, 2, 4)]
        assert rows[0] == AblationRow("depthwise", 0, 0.5, 0.25)

    def test_embed_dim_sweep(self):
        rows = ablation_embed_dim(lambda d: (d / 200.0, d / 400.0))
        assert [r.dim for r in rows] == [16, 64, 128]
        assert rows[1].pixacc == 64 / 200.0

    def test_ablation_csv_round_trip(self, tmp_path):
        rows = [AblationRow("depthwise", 2, 0.9217381, 0.55511151231257827),
                AblationRow("bottleneck", 4, 0.93, 0.61)]
        path = tmp_path / "ablation.csv"
        write_ablation_csv(rows, path)
        with open(path, newline="") as fh:
            records = list(csv.DictReader(fh))
        assert len(records) == 2
        assert records[0]["kind"] == "depthwise"
        assert float(records[0]["pixacc"]) == rows[0].pixacc
        assert float(records[1]["miou"]) == rows[1].miou

    def test_ablation_table_mentions_every_cell(self):
        rows = [AblationRow(k, d, 0.5, 0.5)
                for k in ("depthwise", "bottleneck") for d in (0, 1, 2, 4)]
        table = format_ablation_table(rows)
        for d in (0, 1, 2, 4):
            assert str(d) in table
        assert "depthwise" in table and "bottleneck" in table


class TestFoldReports:
    def make_results(self):
        from langseg.evaluation import ZeroShotFoldResult
        return [ZeroShotFoldResult(i, 0.5 + 0.1 * i, 0.6 + 0.1 * i, 0.15, {})
                for i in range(4)]

    def test_csv_has_folds_and_mean(self, tmp_path):
        results = self.make_results()
        path = tmp_path / "folds.csv"
        write_fold_report_csv(results, path)
        with open(path, newline="") as fh:
            records = list(csv.reader(fh))
        assert records[0] == ["fold", "miou", "fb_iou", "chance_miou"]
        assert len(records) == 6
        assert records[-1][0] == "mean"
        assert float(records[-1][1]) == np.mean([r.miou for r in results])

    def test_table_lists_folds_mean_and_fb(self):
        table = format_fold_table(self.make_results())
        for i in range(4):
            assert f"fold {i}" in table
        assert "mean" in table
        assert "FB-IoU" in table
