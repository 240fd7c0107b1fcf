import json

import numpy as np
import pytest

from models.evaluator import Evaluator
from models.explainer import (
    ABLATED,
    NO_EVIDENCE,
    ExplainedPath,
    ExplanationRecord,
    explain_pair,
    explain_topk,
    explain_users,
    format_record,
    recommend_topk,
    write_explanations,
)
from models.hin import NodeType
from models.metapath_sampler import MetaPathSchema, PairPathSet, PathInstance
from models.tmer_model import AblationMode, ModelParams, TMERModel
from tests.oracles import dense_attention

DIM = 8


class StubStore:
    """Serves fixed path sets; pairs without an entry have no instances."""

    def __init__(self, entries):
        self.entries = entries
        self.calls = []

    def encoded(self, start, end):
        self.calls.append((start, end))
        if (start, end) in self.entries:
            return self.entries[(start, end)]
        return PairPathSet(start, end), np.zeros((0, DIM))


class TableScorer:
    def __init__(self, table, model=None, store=None):
        self.table = table
        self.model = model
        self.store = store

    def scores(self, user, history, items):
        return np.array([self.table.get(item, 0.0) for item in items])


def ids(hin, node_type, *keys):
    return [hin.node_id(node_type, key) for key in keys]


@pytest.fixture
def model():
    return TMERModel(ModelParams.initialize(DIM, 2, seed=7))


@pytest.fixture
def pair_store(small_hin):
    """i0 -> i4 share brand b0 and category c0; i0 -> i2 share only b0."""
    i0, i2, i4 = ids(small_hin, NodeType.ITEM, "i0", "i2", "i4")
    b0 = small_hin.node_id(NodeType.BRAND, "b0")
    c0 = small_hin.node_id(NodeType.CATEGORY, "c0")
    ibi = MetaPathSchema.parse("IBI")
    ici = MetaPathSchema.parse("ICI")
    rng = np.random.default_rng(11)
    two = PairPathSet(i0, i4, [PathInstance(ibi, (i0, b0, i4), 0.6), PathInstance(ici, (i0, c0, i4), 0.4)])
    one = PairPathSet(i0, i2, [PathInstance(ibi, (i0, b0, i2), 0.9)])
    return StubStore({(i0, i4): (two, rng.normal(size=(2, DIM))), (i0, i2): (one, rng.normal(size=(1, DIM)))})


class TestExplainPair:
    def test_single_path_takes_all_weight(self, small_hin, model, pair_store):
        u0 = small_hin.node_id(NodeType.USER, "u0")
        i0, i2 = ids(small_hin, NodeType.ITEM, "i0", "i2")
        record = explain_pair(u0, i0, i2, model, pair_store, small_hin)
        assert record.marker is None
        assert len(record.paths) == 1
        assert record.paths[0].weight == pytest.approx(1.0)
        assert record.paths[0].node_keys == ["i0", "b0", "i2"]

    def test_weights_match_scoring_attention(self, small_hin, model, pair_store):
        u0 = small_hin.node_id(NodeType.USER, "u0")
        i0, i4 = ids(small_hin, NodeType.ITEM, "i0", "i4")
        path_set, matrix = pair_store.encoded(i0, i4)
        record = explain_pair(u0, i0, i4, model, pair_store, small_hin)

        weights = [p.weight for p in record.paths]
        assert weights == sorted(weights, reverse=True)
        assert record.total_weight == pytest.approx(1.0)

        attention = model.params.item_item_attention
        _, oracle = dense_attention(matrix, attention.wq, attention.wk, attention.wv, attention.wo)
        _, scored = model.score_candidate(np.ones(DIM), np.ones(DIM), np.ones(DIM), matrix)
        by_nodes = {tuple(inst.nodes): index for index, inst in enumerate(path_set.instances)}
        for explained in record.paths:
            index = by_nodes[tuple(small_hin.node_id(t, k) for t, k in
                                   zip(MetaPathSchema.parse(explained.schema).types, explained.node_keys))]
            assert explained.weight == pytest.approx(oracle[index], abs=1e-10)
            assert explained.weight == scored.weights[index]

    def test_pair_without_paths_is_marked(self, small_hin, model, pair_store):
        u0 = small_hin.node_id(NodeType.USER, "u0")
        i0, i1 = ids(small_hin, NodeType.ITEM, "i0", "i1")
        record = explain_pair(u0, i0, i1, model, pair_store, small_hin)
        assert record.paths == []
        assert record.marker == NO_EVIDENCE

    def test_item_attention_ablated(self, small_hin, pair_store):
        u0 = small_hin.node_id(NodeType.USER, "u0")
        i0, i4 = ids(small_hin, NodeType.ITEM, "i0", "i4")
        rii = TMERModel(ModelParams.initialize(DIM, 2, seed=7), AblationMode.RII)
        record = explain_pair(u0, i0, i4, rii, pair_store, small_hin)
        assert record.marker == ABLATED
        assert record.paths == []
        assert pair_store.calls == []

    def test_topk_equals_pairwise_calls(self, small_hin, model, pair_store):
        u0 = small_hin.node_id(NodeType.USER, "u0")
        i0, i2, i4, i1 = ids(small_hin, NodeType.ITEM, "i0", "i2", "i4", "i1")
        records = explain_topk(u0, [i4, i2, i1], model, pair_store, small_hin, last_item=i0)
        assert records == [explain_pair(u0, i0, item, model, pair_store, small_hin) for item in (i4, i2, i1)]


class TestRecommend:
    def test_descending_with_id_tiebreak(self):
        scorer = TableScorer({5: 0.2, 3: 0.9, 4: 0.2, 9: 0.5})
        assert recommend_topk(scorer, 0, [1], [5, 3, 4, 9], k=3) == [(3, 0.9), (9, 0.5), (4, 0.2)]

    def test_empty_pool(self):
        assert recommend_topk(TableScorer({}), 0, [1], [], k=5) == []

    def test_explain_users_covers_evaluated_pool(self, small_hin, small_sequences, model, pair_store):
        evaluator = Evaluator(small_hin, n_negatives=2, seed=0)
        scorer = TableScorer({seq.test[0]: 0.9 for seq in small_sequences}, model, pair_store)
        records = explain_users(small_sequences, scorer, evaluator, small_hin, top_k=2, n_users=1)
        assert len(records) == 2
        assert records[0].user_key == "u0"
        assert records[0].to_item_key == "i3"
        assert records[0].from_item_key == "i2"
        assert records[0].score == pytest.approx(0.9)


class TestFormat:
    def test_json_line(self, tmp_path):
        record = ExplanationRecord("u0", "i0", "i4", [ExplainedPath("IBI", ["i0", "b0", "i4"], 0.123456)],
                                   score=0.5)
        line = format_record(record)
        payload = json.loads(line)
        assert payload["paths"][0]["weight"] == 0.1235
        assert payload["user"] == "u0"
        assert "marker" not in payload
        path = tmp_path / "explanations.jsonl"
        write_explanations([record, ExplanationRecord("u1", "i1", "i2", marker=NO_EVIDENCE)], str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == line
        assert json.loads(lines[1])["marker"] == NO_EVIDENCE
