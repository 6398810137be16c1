"""F1 variants, Hamming loss, task binarization, Fleiss' kappa, and reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from complaintnet.data_model import AspectLabelVector
from complaintnet.metrics import (
    REFERENCE_KAPPA_ASPECT,
    REFERENCE_KAPPA_COMPLAINT,
    ConfusionCounts,
    RatingTable,
    aspect_hamming,
    binarize_tasks,
    binary_task_f1,
    evaluate_pairs,
    f1_scores,
    fleiss_kappa,
    hamming_loss,
)

label = AspectLabelVector.from_sequence


def random_labels(rng, n):
    return [label(rng.integers(0, 3, size=5)) for _ in range(n)]


class TestBinarize:
    def test_gold_and_pred_complaint(self):
        g, p = label([2, 0, 0, 0, 0]), label([2, 0, 0, 0, 0])
        assert binarize_tasks(g, p, 0) == (True, True, (True, True))

    def test_gold_absent_no_ci(self):
        g, p = label([0, 0, 0, 0, 0]), label([1, 0, 0, 0, 0])
        assert binarize_tasks(g, p, 0) == (False, True, None)

    def test_pred_absent_counts_as_non_complaint(self):
        g, p = label([1, 0, 0, 0, 0]), label([0, 0, 0, 0, 0])
        assert binarize_tasks(g, p, 0) == (True, False, (False, False))

    def test_bad_aspect_rejected(self):
        with pytest.raises(ValueError, match="aspect index"):
            binarize_tasks(label([0] * 5), label([0] * 5), 5)


class TestF1:
    def test_perfect_predictions(self):
        counts = [ConfusionCounts(tp=4, tn=6), ConfusionCounts(tp=6, tn=4)]
        macro, micro = f1_scores(counts)
        assert macro == 1.0 and micro == 1.0

    def test_single_class_hand_counts(self):
        macro, micro = f1_scores([ConfusionCounts(tp=2, fp=1, fn=1)])
        assert macro == pytest.approx(4 / 6)
        assert micro == pytest.approx(4 / 6)

    def test_zero_over_zero_class_drops_macro_only(self):
        # 10-sample fixture: one active class predicted decently, one class
        # never present and never predicted.
        active = ConfusionCounts(tp=6, fp=2, fn=2, tn=0)
        silent = ConfusionCounts(tp=0, fp=0, fn=0, tn=10)
        macro_with, micro_with = f1_scores([active, silent])
        macro_solo, micro_solo = f1_scores([active])
        assert macro_with == pytest.approx(macro_solo / 2)  # 0/0 -> 0 halves the mean
        assert micro_with == pytest.approx(micro_solo)  # summed counts unchanged
        assert silent.f1() == 0.0

    def test_binary_micro_equals_accuracy(self):
        # Pooling the positive and negative class counts makes micro-F1 the
        # plain accuracy of the binary task.
        pairs = [(True, True), (True, False), (False, False), (False, False)]
        _, micro = binary_task_f1(pairs)
        assert micro == pytest.approx(3 / 4)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
    def test_binary_f1_matches_sklearn(self, pairs):
        from sklearn.metrics import f1_score

        golds = [int(g) for g, _ in pairs]
        preds = [int(p) for _, p in pairs]
        macro, micro = binary_task_f1(pairs)
        sk_macro = f1_score(golds, preds, labels=[1, 0], average="macro", zero_division=0)
        sk_micro = f1_score(golds, preds, labels=[1, 0], average="micro", zero_division=0)
        assert macro == pytest.approx(sk_macro, abs=1e-12)
        assert micro == pytest.approx(sk_micro, abs=1e-12)


class TestHamming:
    def test_identical_lists(self):
        rng = np.random.default_rng(0)
        golds = random_labels(rng, 8)
        assert hamming_loss(golds, golds) == 0.0

    def test_one_of_five(self):
        g = [label([2, 0, 1, 0, 0])]
        p = [label([2, 0, 0, 0, 0])]
        assert hamming_loss(g, p) == pytest.approx(0.2)

    def test_complement_of_exact_match(self):
        g = [label([0, 0, 0, 0, 0]), label([1, 1, 1, 1, 1])]
        p = [label([1, 1, 1, 1, 1]), label([2, 2, 2, 2, 2])]
        assert hamming_loss(g, p) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        a, b = random_labels(rng, 10), random_labels(rng, 10)
        assert hamming_loss(a, b) == hamming_loss(b, a)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            hamming_loss([label([0] * 5)], [])

    def test_per_aspect_rate(self):
        g = [label([2, 0, 0, 0, 0]), label([1, 0, 0, 0, 0])]
        p = [label([0, 0, 0, 0, 0]), label([1, 0, 0, 0, 0])]
        assert aspect_hamming(g, p, 0) == pytest.approx(0.5)
        assert aspect_hamming(g, p, 1) == 0.0


class TestFleissKappa:
    def test_perfect_agreement_across_categories(self):
        table = np.array([[3, 0], [0, 3]])
        assert fleiss_kappa(table) == 1.0

    def test_hand_derived_negative_third(self):
        table = np.array([[2, 1], [1, 2]])
        assert fleiss_kappa(table) == pytest.approx(-1 / 3, abs=1e-12)

    def test_degenerate_all_one_category(self):
        # Every rating in one category: observed and expected agreement both 1.
        assert fleiss_kappa(np.array([[3, 0], [3, 0]])) == 1.0

    def test_rejects_ragged_rater_counts(self):
        with pytest.raises(ValueError, match="same number of raters"):
            RatingTable(counts=np.array([[2, 1], [1, 1]]))

    def test_rejects_single_rater(self):
        with pytest.raises(ValueError, match="at least 2 raters"):
            RatingTable(counts=np.array([[1, 0], [0, 1]]))

    def test_reference_agreement_levels(self):
        # Documented agreement levels for the two annotation tasks.
        assert REFERENCE_KAPPA_ASPECT == 0.64
        assert REFERENCE_KAPPA_COMPLAINT == 0.81

    @settings(max_examples=50, deadline=None)
    @given(
        n_items=st.integers(min_value=2, max_value=12),
        n_cats=st.integers(min_value=2, max_value=5),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    def test_permutation_invariance(self, n_items, n_cats, seed):
        rng = np.random.default_rng(seed)
        raters = 4
        table = np.zeros((n_items, n_cats), dtype=np.int64)
        for i in range(n_items):
            votes = rng.integers(0, n_cats, size=raters)
            for vote in votes:
                table[i, vote] += 1
        base = fleiss_kappa(table)
        item_perm = rng.permutation(n_items)
        cat_perm = rng.permutation(n_cats)
        permuted = table[item_perm][:, cat_perm]
        assert fleiss_kappa(permuted) == pytest.approx(base, abs=1e-12)

    def test_matches_statsmodels(self):
        from statsmodels.stats.inter_rater import fleiss_kappa as sm_fleiss

        rng = np.random.default_rng(5)
        table = np.zeros((20, 3), dtype=np.int64)
        for i in range(20):
            for vote in rng.integers(0, 3, size=5):
                table[i, vote] += 1
        assert fleiss_kappa(table) == pytest.approx(float(sm_fleiss(table)), abs=1e-12)


class TestBounds:
    """Range invariants: F1 and hamming in [0, 1], kappa never above 1."""

    @settings(max_examples=150, deadline=None)
    @given(
        counts=st.lists(
            st.tuples(
                st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50)
            ),
            min_size=1,
            max_size=6,
        )
    )
    def test_f1_ranges(self, counts):
        macro, micro = f1_scores([ConfusionCounts(*c) for c in counts])
        assert 0.0 <= macro <= 1.0
        assert 0.0 <= micro <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), n_items=st.integers(1, 15), n_cats=st.integers(2, 4))
    def test_kappa_never_exceeds_one(self, seed, n_items, n_cats):
        rng = np.random.default_rng(seed)
        table = np.zeros((n_items, n_cats), dtype=np.int64)
        for i in range(n_items):
            for vote in rng.integers(0, n_cats, size=3):
                table[i, vote] += 1
        assert fleiss_kappa(table) <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
    def test_hamming_range(self, seed, n):
        rng = np.random.default_rng(seed)
        golds = random_labels(rng, n)
        preds = random_labels(rng, n)
        assert 0.0 <= hamming_loss(golds, preds) <= 1.0


class TestEvaluatePairs:
    def test_perfect_model(self):
        rng = np.random.default_rng(2)
        golds = random_labels(rng, 12)
        report = evaluate_pairs(golds, golds)
        for row in report.rows:
            if row.task in ("AC", "CI"):
                assert row.hamming == 0.0
        # every task with at least one pair scores 1.0
        assert report.row("Transaction", "AC").micro_f1 == 1.0
        assert report.aggregate_hamming() == 0.0

    def test_constant_absent_predictor(self):
        golds = [label([1, 0, 0, 0, 0]), label([2, 0, 0, 0, 0]), label([0, 0, 0, 0, 0])]
        preds = [label([0] * 5)] * 3
        report = evaluate_pairs(golds, preds)
        row = report.row("Transaction", "AC")
        # no positive-class credit: positive F1 is 0, so macro is half the
        # negative-class F1; pooled micro equals plain accuracy (1/3 here)
        assert row.micro_f1 == pytest.approx(1 / 3)
        assert row.macro_f1 == pytest.approx(0.5 * (2 * 1) / (2 * 1 + 2 + 0))
        # aspects never present score perfectly for this predictor
        assert report.row("CustomerService", "AC").micro_f1 == 1.0

    def test_report_matches_brute_force(self):
        rng = np.random.default_rng(3)
        golds = random_labels(rng, 40)
        preds = random_labels(rng, 40)
        report = evaluate_pairs(golds, preds)
        # independent recomputation with plain loops
        for j, name in enumerate(
            ("Transaction", "CustomerService", "ClaimedBenefit", "ServiceTypes", "Miscellaneous")
        ):
            n_correct = sum(
                (g.states[j] in (1, 2)) == (p.states[j] in (1, 2)) for g, p in zip(golds, preds)
            )
            row = report.row(name, "AC")
            assert row.micro_f1 == pytest.approx(n_correct / 40, abs=1e-12)
            mism = sum(g.states[j] != p.states[j] for g, p in zip(golds, preds))
            assert row.hamming == pytest.approx(mism / 40, abs=1e-12)

    def test_mean_ac_micro(self):
        rng = np.random.default_rng(4)
        golds = random_labels(rng, 10)
        report = evaluate_pairs(golds, golds)
        assert report.mean_ac_micro_f1() == 1.0

    def test_csv_roundtrip(self, tmp_path):
        import csv

        rng = np.random.default_rng(5)
        golds, preds = random_labels(rng, 6), random_labels(rng, 6)
        report = evaluate_pairs(golds, preds)
        out = tmp_path / "report.csv"
        report.to_csv(out)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert set(rows[0]) == {"aspect", "task", "macro_f1", "micro_f1", "hamming"}
        assert len(rows) == 11  # 5 aspects x 2 tasks + ALL row
        for parsed, row in zip(rows, report.rows):
            assert float(parsed["micro_f1"]) == pytest.approx(row.micro_f1, abs=1e-6)
