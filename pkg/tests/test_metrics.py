from __future__ import annotations

import numpy as np
import pytest

from ctrlaug.dataset import DatasetIndex, LabelMask, SegSample, load_index
from ctrlaug.metrics import (
    MetricsError,
    balance_block,
    class_counts,
    confusion_matrix,
    entropy,
    format_iou_table,
    imbalance_ratio,
    iou_report,
    merge_datasets,
    miou,
    num_classes_for,
    stats_report,
)
from ctrlaug.planner import make_plan

from tests.conftest import TOY_SCHEMA, rect_mask
from tests.oracles import brute_force_confusion, brute_force_iou


@pytest.fixture
def toy3_index(toy3_root):
    return load_index(toy3_root, "train", TOY_SCHEMA)


def synthetic_copy(index, output_id, seed_id):
    seed = index.get(seed_id)
    return SegSample(
        sample_id=output_id,
        image=seed.image,
        mask=seed.mask,
        origin="synthetic",
        seed_id=seed_id,
    )


def replay_plan_index(origin, plan) -> DatasetIndex:
    """D_gen built by pairing each plan entry with its seed's mask."""
    samples = [synthetic_copy(origin, e.output_id, e.seed_id) for e in plan.entries]
    return DatasetIndex(schema=origin.schema, samples=samples, root=origin.root, split="gen")


class TestMergeDatasets:
    def test_concatenation_origin_first(self, toy3_index):
        gen = replay_plan_index(toy3_index, make_plan(toy3_index, 3))
        final = merge_datasets(toy3_index, gen)
        assert len(final) == len(toy3_index) + len(gen) == 7
        assert [s.sample_id for s in final.samples[:3]] == ["I1", "I2", "I3"]

    def test_empty_gen_is_identity(self, toy3_index):
        gen = DatasetIndex(schema=TOY_SCHEMA, samples=[], root=".", split="gen")
        final = merge_datasets(toy3_index, gen)
        assert [s.sample_id for s in final.samples] == [
            s.sample_id for s in toy3_index.samples
        ]

    def test_id_collision_rejected(self, toy3_index):
        gen = DatasetIndex(
            schema=TOY_SCHEMA,
            samples=[synthetic_copy(toy3_index, "I1", "I1")],
            root=".",
            split="gen",
        )
        with pytest.raises(MetricsError, match="collision"):
            merge_datasets(toy3_index, gen)

    def test_schema_mismatch_rejected(self, toy3_index):
        from ctrlaug.dataset import ClassId

        gen = DatasetIndex(
            schema=[ClassId(1, "cat")], samples=[], root=".", split="gen"
        )
        with pytest.raises(MetricsError, match="schemas"):
            merge_datasets(toy3_index, gen)

    def test_counts_add_elementwise(self, toy3_index):
        gen = replay_plan_index(toy3_index, make_plan(toy3_index, 3))
        final = merge_datasets(toy3_index, gen)
        a, b, c = class_counts(toy3_index), class_counts(gen), class_counts(final)
        assert all(c[k] == a[k] + b[k] for k in c)


class TestClassCounts:
    def test_toy_counts(self, toy3_index):
        assert class_counts(toy3_index) == {1: 2, 2: 2, 3: 1}

    def test_replayed_plan_counts_every_class_of_each_synthetic(self, toy3_index):
        # G1 seeds I1 {cat}, G2 seeds I2 {cat,dog}, G3+G4 seed I3 {dog,bird}
        gen = replay_plan_index(toy3_index, make_plan(toy3_index, 3))
        final = merge_datasets(toy3_index, gen)
        assert class_counts(final) == {1: 4, 2: 5, 3: 3}

    def test_empty_class_set_contributes_nothing(self):
        sample = SegSample(
            "E", np.zeros((4, 4, 3), dtype=np.uint8), LabelMask(np.zeros((4, 4), dtype=np.uint8))
        )
        index = DatasetIndex(schema=TOY_SCHEMA, samples=[sample], root=".", split="t")
        assert class_counts(index) == {1: 0, 2: 0, 3: 0}


class TestEntropy:
    def test_uniform_four_classes(self):
        assert entropy({1: 5, 2: 5, 3: 5, 4: 5}) == pytest.approx(2.0, abs=1e-12)

    def test_two_one_one(self):
        assert entropy({1: 2, 2: 1, 3: 1}) == pytest.approx(1.5, abs=1e-12)

    def test_single_class_degenerate(self):
        assert entropy({1: 9, 2: 0}) == pytest.approx(0.0, abs=1e-12)

    def test_all_zero_rejected(self):
        with pytest.raises(MetricsError):
            entropy({1: 0, 2: 0})

    def test_permutation_invariant_and_uniform_maximal(self):
        rng = np.random.default_rng(55)
        for _ in range(50):
            k = int(rng.integers(2, 8))
            counts = rng.integers(0, 20, size=k)
            if counts.sum() == 0:
                counts[0] = 1
            base = entropy(dict(enumerate(counts.tolist())))
            perm = rng.permutation(counts)
            assert entropy(dict(enumerate(perm.tolist()))) == pytest.approx(base, abs=1e-12)
            assert base <= np.log2(k) + 1e-12
        assert entropy({i: 3 for i in range(8)}) == pytest.approx(3.0, abs=1e-12)


class TestImbalanceRatio:
    def test_equal_counts_are_balanced(self):
        assert imbalance_ratio({1: 4, 2: 4, 3: 4}) == 0.0

    def test_two_one_one(self):
        assert imbalance_ratio({1: 2, 2: 1, 3: 1}) == pytest.approx(
            np.sqrt(2.0 / 9.0) / (4.0 / 3.0), abs=1e-9
        )
        assert imbalance_ratio({1: 2, 2: 1, 3: 1}) == pytest.approx(0.35355339, abs=1e-6)

    def test_scale_invariant(self):
        rng = np.random.default_rng(56)
        for _ in range(50):
            counts = rng.integers(1, 30, size=int(rng.integers(2, 8)))
            base = imbalance_ratio(dict(enumerate(counts.tolist())))
            for k in (2, 5, 11):
                scaled = imbalance_ratio(dict(enumerate((counts * k).tolist())))
                assert scaled == pytest.approx(base, abs=1e-12)

    def test_feeding_min_class_strictly_decreases(self):
        counts = {1: 8, 2: 3, 3: 1}
        before = imbalance_ratio(counts)
        counts[3] += 2
        assert imbalance_ratio(counts) < before

    def test_zero_counts_included(self):
        assert imbalance_ratio({1: 4, 2: 0}) == pytest.approx(1.0, abs=1e-12)


class TestConfusionMatrix:
    def test_perfect_single_class(self):
        gt = LabelMask(rect_mask(4, 4, [(1, 0, 4, 0, 4)]))
        cm = confusion_matrix(gt, gt, num_classes=4)
        assert cm[1, 1] == 16 and cm.sum() == 16

    def test_all_void_gt_gives_zero_matrix(self):
        gt = LabelMask(rect_mask(4, 4, [(255, 0, 4, 0, 4)]))
        pred = LabelMask(np.zeros((4, 4), dtype=np.uint8))
        assert confusion_matrix(pred, gt, num_classes=4).sum() == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(60)
        values = np.array([0, 1, 2, 3], dtype=np.uint8)
        for _ in range(40):
            gt = rng.choice(np.array([0, 1, 2, 3, 255], dtype=np.uint8), size=(8, 8))
            pred = rng.choice(values, size=(8, 8))
            got = confusion_matrix(LabelMask(pred), LabelMask(gt), 4)
            assert np.array_equal(got, brute_force_confusion(pred, gt, 4))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(MetricsError):
            confusion_matrix(
                LabelMask(np.zeros((2, 2), dtype=np.uint8)),
                LabelMask(np.zeros((3, 3), dtype=np.uint8)),
                4,
            )

    def test_out_of_range_prediction_rejected(self):
        gt = LabelMask(np.zeros((2, 2), dtype=np.uint8))
        pred = LabelMask(rect_mask(2, 2, [(9, 0, 2, 0, 2)]))
        with pytest.raises(MetricsError, match="predicted id"):
            confusion_matrix(pred, gt, num_classes=4)


class TestMiou:
    def test_perfect_prediction_scores_hundred(self):
        gt = rect_mask(8, 8, [(1, 0, 4, 0, 8), (2, 4, 8, 0, 8)])
        cm = confusion_matrix(LabelMask(gt), LabelMask(gt), 3)
        per_class, mean = miou(cm)
        assert per_class == [None, 100.0, 100.0]  # no background pixels
        assert mean == 100.0

    def test_half_class_predicted_all_background(self):
        gt = rect_mask(4, 4, [(1, 0, 2, 0, 4)])
        pred = np.zeros((4, 4), dtype=np.uint8)
        per_class, mean = miou(confusion_matrix(LabelMask(pred), LabelMask(gt), 2))
        assert per_class[1] == 0.0
        assert per_class[0] == pytest.approx(50.0)
        assert mean == pytest.approx(25.0)

    def test_matches_pixel_level_brute_force(self):
        rng = np.random.default_rng(61)
        for _ in range(40):
            gt = rng.choice(np.array([0, 1, 2, 255], dtype=np.uint8), size=(8, 8))
            pred = rng.choice(np.array([0, 1, 2], dtype=np.uint8), size=(8, 8))
            if (gt != 255).sum() == 0:
                continue
            cm = confusion_matrix(LabelMask(pred), LabelMask(gt), 3)
            got_per, got_mean = miou(cm)
            ref_per, ref_mean = brute_force_iou(pred, gt, 3)
            for g, r in zip(got_per, ref_per):
                if r is None:
                    assert g is None
                else:
                    assert g == pytest.approx(r, abs=1e-9)
            assert got_mean == pytest.approx(ref_mean, abs=1e-9)

    def test_all_excluded_rejected(self):
        with pytest.raises(MetricsError, match="undefined"):
            miou(np.zeros((3, 3), dtype=np.int64))


class TestReports:
    def test_stats_report_blocks(self, toy3_index):
        gen = replay_plan_index(toy3_index, make_plan(toy3_index, 3))
        report = stats_report(toy3_index, gen, merge_datasets(toy3_index, gen))
        assert set(report) == {"origin", "gen", "final"}
        assert report["origin"]["class_counts"] == {"cat": 2, "dog": 2, "bird": 1}
        assert report["final"]["size"] == 7

    def test_empty_gen_omitted(self, toy3_index):
        report = stats_report(
            toy3_index, DatasetIndex(schema=TOY_SCHEMA, samples=[], root=".", split="g")
        )
        assert set(report) == {"origin"}

    def test_balance_block_handles_empty_counts(self):
        index = DatasetIndex(schema=TOY_SCHEMA, samples=[], root=".", split="t")
        block = balance_block(index)
        assert block["entropy"] is None and block["imbalance_ratio"] is None

    def test_iou_table_formatting(self):
        gt = rect_mask(4, 4, [(1, 0, 2, 0, 4)])
        cm = confusion_matrix(LabelMask(gt), LabelMask(gt), num_classes_for(TOY_SCHEMA))
        report = iou_report(cm, TOY_SCHEMA)
        text = format_iou_table(report)
        assert "mIoU" in text and "100.00" in text
        assert report["miou"] == 100.0


class TestDirectionalMirror:
    def test_balancing_raises_entropy_and_lowers_imbalance(self, toy10_root):
        origin = load_index(toy10_root, "train", TOY_SCHEMA)
        plan = make_plan(origin, 7)
        gen = replay_plan_index(origin, plan)
        final = merge_datasets(origin, gen)
        assert entropy(class_counts(final)) > entropy(class_counts(origin))
        assert imbalance_ratio(class_counts(final)) < imbalance_ratio(class_counts(origin))
