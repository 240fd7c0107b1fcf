import json

import numpy as np
import pytest

from models.evaluator import (
    KS,
    Evaluator,
    PopularityRanker,
    hit_ratio,
    ndcg,
    rank_candidates,
    rank_of_positive,
    sample_negatives,
    write_rank_dump,
    write_report,
)
from models.hin import NodeType
from tests.oracles import hit_ratio_oracle, ndcg_oracle, sort_rank


class TableScorer:
    """Scores items from a fixed table; unknown items score 0."""

    def __init__(self, table):
        self.table = table

    def scores(self, user, history, items):
        return np.array([self.table.get(item, 0.0) for item in items], dtype=np.float64)


class TestMetrics:
    def test_perfect_ranks(self):
        for k in KS:
            assert hit_ratio([1, 1, 1], k) == 1.0
            assert ndcg([1, 1, 1], k) == 1.0

    def test_rank_three_closed_form(self):
        assert ndcg([3], 10) == pytest.approx(0.5)
        assert ndcg([3], 2) == 0.0

    def test_empty_rank_list(self):
        assert hit_ratio([], 10) == 0.0
        assert ndcg([], 10) == 0.0

    def test_match_oracle_and_properties(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            ranks = rng.integers(1, 502, size=int(rng.integers(1, 20))).tolist()
            previous_hr = previous_ndcg = 0.0
            for k in KS:
                hr, gain = hit_ratio(ranks, k), ndcg(ranks, k)
                assert hr == pytest.approx(hit_ratio_oracle(ranks, k), abs=1e-12)
                assert gain == pytest.approx(ndcg_oracle(ranks, k), abs=1e-12)
                assert 0.0 <= gain <= hr <= 1.0
                assert hr >= previous_hr and gain >= previous_ndcg
                previous_hr, previous_ndcg = hr, gain


class TestRanking:
    def test_strictly_best_positive_ranks_first(self):
        assert rank_of_positive(0.9, [0.1, 0.5, 0.8]) == 1

    def test_ties_go_against_the_positive(self):
        assert rank_of_positive(0.5, [0.5] * 500) == 501

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            # coarse scores so ties are common
            scores = rng.integers(0, 5, size=21).astype(float)
            assert rank_of_positive(scores[0], scores[1:]) == sort_rank(scores[0], scores[1:])

    def test_rank_candidates_uses_scorer(self):
        scorer = TableScorer({1: 0.7, 2: 0.9, 3: 0.1})
        assert rank_candidates(scorer, 0, [5], 1, [2, 3]) == 2


class TestNegatives:
    def test_distinct_and_never_excluded(self):
        catalog = np.arange(100)
        excluded = set(range(0, 100, 3))
        picks = sample_negatives(np.random.default_rng(0), catalog, excluded, 20)
        assert len(picks) == len(set(picks)) == 20
        assert not set(picks) & excluded

    def test_small_pool_returns_everything(self, caplog):
        picks = sample_negatives(np.random.default_rng(0), np.arange(5), {0, 1}, 10)
        assert sorted(picks) == [2, 3, 4]
        assert "eligible negatives" in caplog.text

    def test_exhausted_pool_warns(self, caplog):
        assert sample_negatives(np.random.default_rng(0), np.arange(3), {0, 1, 2}, 4) == []
        assert "every catalog item" in caplog.text


class TestEvaluator:
    def test_negatives_exclude_interactions_and_are_stable(self, small_hin, small_sequences):
        evaluator = Evaluator(small_hin, n_negatives=2, seed=3)
        for instance in evaluator.test_instances(small_sequences):
            negatives = evaluator.negatives_for(instance)
            assert negatives == evaluator.negatives_for(instance)
            assert not set(negatives) & instance.excluded
            assert instance.item not in negatives

    def test_perfect_scorer_report(self, small_hin, small_sequences):
        evaluator = Evaluator(small_hin, n_negatives=2, seed=0)
        positives = {seq.test[0]: 1.0 for seq in small_sequences}
        report = evaluator.evaluate(small_sequences, TableScorer(positives), dataset="tiny",
                                    labels={"ablation": "full", "loss": "standard"})
        result = report.to_dict()
        assert result["metrics"]["all"]["1"]["HR"] == 1.0
        assert result["metrics"]["first"]["10"]["NDCG"] == 1.0
        assert result["dataset"] == "tiny"
        assert result["ablation"] == "full"
        assert result["n_negatives"] == 2
        assert "baseline" in result

    def test_worker_count_does_not_change_ranks(self, small_hin, small_sequences):
        scorer = TableScorer({item: float(item % 3) for item in small_hin.nodes_of_type(NodeType.ITEM)})
        serial = Evaluator(small_hin, n_negatives=2, seed=5, workers=1).evaluate(small_sequences, scorer)
        threaded = Evaluator(small_hin, n_negatives=2, seed=5, workers=3).evaluate(small_sequences, scorer)
        assert serial.records == threaded.records

    def test_validation_holds_out_last_train_item(self, small_hin, small_sequences):
        evaluator = Evaluator(small_hin, n_negatives=2)
        instances = evaluator.validation_instances(small_sequences)
        assert [inst.item for inst in instances] == [seq.train[-1] for seq in small_sequences]
        assert all(inst.history == seq.history[:-1] for inst, seq in zip(instances, small_sequences))

    def test_popularity_counts_distinct_buyers(self, small_hin):
        ranker = PopularityRanker(small_hin)
        items = [small_hin.node_id(NodeType.ITEM, key) for key in ("i0", "i2", "i5")]
        assert ranker.scores(0, [], items).tolist() == [1.0, 2.0, 1.0]

    def test_report_files(self, small_hin, small_sequences, tmp_path):
        evaluator = Evaluator(small_hin, n_negatives=2, seed=0)
        report = evaluator.evaluate(small_sequences, TableScorer({}), dataset="tiny")
        metrics_path = tmp_path / "metrics.json"
        ranks_path = tmp_path / "ranks.tsv"
        write_report(report, str(metrics_path))
        write_rank_dump(report, str(ranks_path), small_hin)
        text = metrics_path.read_text()
        assert json.loads(text) == json.loads(json.dumps(report.to_dict()))
        assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"
        lines = ranks_path.read_text().splitlines()
        assert lines[0].split("\t") == ["u0", "i3", "0", "3"]
        assert len(lines) == 2
