import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from absakit.errors import ContractError
from absakit.metrics import RunReport, SeedRun, ae_span_f1, aggregate_seeds, asc_scores
from oracles import span_f1_brute

RNG = np.random.default_rng(17)


def random_spans(rng, max_spans=50):
    n = int(rng.integers(0, max_spans + 1))
    return {
        (int(rng.integers(0, 20)), int(rng.integers(0, 10)), int(rng.integers(10, 20)))
        for _ in range(n)
    }


class TestSpanF1:
    def test_perfect(self):
        spans = {(0, 1, 2), (1, 0, 3)}
        assert ae_span_f1(spans, spans) == (1.0, 1.0, 1.0)

    def test_no_predictions_nonempty_gold(self):
        assert ae_span_f1(set(), {(0, 1, 2)}) == (0.0, 0.0, 0.0)

    def test_hand_counted_case(self):
        gold = {(0, 0, 1), (0, 2, 3), (1, 0, 2), (2, 4, 6)}
        pred = {(0, 0, 1), (0, 2, 3), (1, 5, 6)}  # 2 of 3 correct, 4 gold
        p, r, f1 = ae_span_f1(pred, gold)
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(1 / 2)
        assert f1 == pytest.approx(4 / 7)

    def test_matches_brute_force_on_random_sets(self):
        for trial in range(200):
            rng = np.random.default_rng(trial)
            pred, gold = random_spans(rng), random_spans(rng)
            assert ae_span_f1(pred, gold) == pytest.approx(span_f1_brute(pred, gold))

    def test_f1_bounds(self):
        for trial in range(100):
            rng = np.random.default_rng(1000 + trial)
            p, r, f1 = ae_span_f1(random_spans(rng), random_spans(rng))
            assert 0.0 <= f1 <= 1.0
            low = min(p, r)
            if low + 1 > 0:
                assert f1 <= 2 * low / (low + 1) + 1e-12


class TestAscScores:
    def test_all_correct(self):
        assert asc_scores([0, 1, 2], [0, 1, 2]) == (1.0, 1.0)

    def test_all_positive_predictions(self):
        acc, mf1 = asc_scores([0, 0, 0], [0, 1, 2])
        assert acc == pytest.approx(1 / 3)
        assert mf1 == pytest.approx((0.5 + 0.0 + 0.0) / 3)

    def test_order_invariance(self):
        preds, gold = [0, 1, 2, 0, 1], [0, 2, 2, 1, 1]
        base = asc_scores(preds, gold)
        perm = [3, 0, 4, 2, 1]
        assert asc_scores([preds[i] for i in perm], [gold[i] for i in perm]) == base

    @given(st.permutations([0, 1, 2]))
    @settings(max_examples=20, deadline=None)
    def test_macro_f1_invariant_under_relabeling(self, relabel):
        rng = np.random.default_rng(9)
        preds = list(rng.integers(0, 3, size=30))
        gold = list(rng.integers(0, 3, size=30))
        base = asc_scores(preds, gold)
        mapped = asc_scores([relabel[p] for p in preds], [relabel[g] for g in gold])
        assert mapped[1] == pytest.approx(base[1])
        assert mapped[0] == pytest.approx(base[0])

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            asc_scores([0], [0, 1])


class TestAggregation:
    def test_single_seed(self):
        assert aggregate_seeds([0.8]) == (0.8, 0.0)

    def test_nine_equal_values(self):
        mean, sd = aggregate_seeds([0.5] * 9)
        assert (mean, sd) == (0.5, 0.0)

    def test_one_through_nine(self):
        mean, sd = aggregate_seeds([float(i) for i in range(1, 10)])
        assert mean == 5.0
        assert sd == pytest.approx(np.std(range(1, 10), ddof=1))

    def test_report_aggregates_recompute_from_runs(self):
        report = RunReport(task="ae", dataset="synthetic")
        values = [0.71, 0.74, 0.69]
        for seed, f1 in enumerate(values, start=1):
            report.runs.append(SeedRun(seed, [1.0], [], {"f1": f1}))
        mean, sd = report.aggregates()["f1"]
        assert abs(mean - sum(values) / 3) < 1e-12
        assert report.seeds == [1, 2, 3]
