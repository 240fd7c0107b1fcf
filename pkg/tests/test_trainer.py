import math

import numpy as np
import pytest

from models.errors import ContractViolation
from models.hin import NodeType, UserSequence
from models.metapath_sampler import HopScorer, build_pair_corpus
from models.path_encoder import PathStore, path_token_config, train_path_tokens
from models.schema_catalog import SchemaCatalog
from models.tmer_model import AblationMode, LossKind, ModelParams
from models.trainer import (
    DEFAULT_LEARNING_RATE,
    AdamOptimizer,
    StoreCandidates,
    TrainConfig,
    Trainer,
    build_examples,
    learning_rate_for,
)


@pytest.fixture
def long_sequences(small_hin):
    item = lambda key: small_hin.node_id(NodeType.ITEM, key)  # noqa: E731
    return [
        UserSequence(0, [item("i0")], [item("i1"), item("i2"), item("i3")], []),
        UserSequence(1, [item("i2")], [item("i3"), item("i4"), item("i5")], []),
    ]


@pytest.fixture
def store(small_hin, small_vectors, long_sequences):
    schemas = SchemaCatalog().schemas_for("all")
    scorer = HopScorer(small_hin, small_vectors)
    corpus = build_pair_corpus(small_hin, scorer, long_sequences, schemas, k=5)
    tokens = train_path_tokens(corpus, 8, path_token_config(8, seed=2))
    return PathStore(small_hin, scorer, corpus, tokens, schemas, k=5)


class TestLearningRate:
    def test_dataset_defaults(self):
        assert learning_rate_for("musical_instruments") == 5e-6
        assert learning_rate_for("automotive") == 5e-5
        assert learning_rate_for("toys_and_games") == 1e-4
        assert learning_rate_for("something_else") == DEFAULT_LEARNING_RATE
        assert learning_rate_for(None) == DEFAULT_LEARNING_RATE

    def test_explicit_rate_wins(self):
        assert learning_rate_for("automotive", 0.01) == 0.01


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        params = ModelParams.initialize(8, 2, seed=0)
        before = params.copy()
        grads = params.zeros_like()
        grads.mlp.biases[-1][...] = 0.5
        grads.gates.b1[...] = -3.0
        AdamOptimizer(params, lr=0.01).step(params, grads)
        assert np.allclose(params.mlp.biases[-1] - before.mlp.biases[-1], -0.01, atol=1e-8)
        assert np.allclose(params.gates.b1 - before.gates.b1, 0.01, atol=1e-8)
        # untouched tensors stay put
        assert np.array_equal(params.gates.w_cur, before.gates.w_cur)

    def test_rejects_non_positive_rate(self):
        with pytest.raises(ContractViolation):
            AdamOptimizer(ModelParams.initialize(8, 2), lr=0.0)


class TestConfig:
    @pytest.mark.parametrize("field_name", ["epochs", "batch_size", "patience", "val_negatives"])
    def test_positive_fields(self, field_name):
        with pytest.raises(ContractViolation):
            TrainConfig(**{field_name: 0})

    def test_modes_parsed_from_strings(self):
        cfg = TrainConfig(mode="RII", loss_kind="paper-literal")
        assert cfg.mode == AblationMode.RII
        assert cfg.loss_kind == LossKind.NEGATIVE_ONLY
        assert TrainConfig(loss_kind="negative-only").loss_kind == LossKind.NEGATIVE_ONLY


class TestExamples:
    def test_bridge_items_are_context_only(self, small_hin, store, small_vectors, long_sequences):
        candidates = StoreCandidates(small_hin, store, small_vectors)
        examples = build_examples(long_sequences, candidates, hold_out_last=False)
        assert [e.position for e in examples] == [1, 2, 3, 1, 2, 3]
        first = examples[0]
        assert first.prev_item == long_sequences[0].bridge[0]
        assert first.prev_paths.shape[1] == 8
        held_out = build_examples(long_sequences, candidates, hold_out_last=True)
        assert [e.position for e in held_out] == [1, 2, 1, 2]

    def test_ablated_paths_are_not_served(self, small_hin, store, small_vectors, long_sequences):
        candidates = StoreCandidates(small_hin, store, small_vectors, AblationMode.RII)
        for example in build_examples(long_sequences, candidates, hold_out_last=False):
            assert example.target_paths is None
            if example.position == 1:
                assert example.prev_paths is not None

    def test_no_train_items_rejected(self, small_hin, store, small_vectors, small_sequences):
        trainer = Trainer(small_hin, small_sequences, store, small_vectors, TrainConfig(epochs=1))
        with pytest.raises(ContractViolation):
            trainer.fit(ModelParams.initialize(8, 2))


class TestTrainer:
    def test_fit_keeps_best_epoch(self, small_hin, store, small_vectors, long_sequences):
        cfg = TrainConfig(lr=1e-3, epochs=3, batch_size=2, n_neg=1, patience=2, val_negatives=2, seed=4)
        params = ModelParams.initialize(8, 2, seed=1)
        result = Trainer(small_hin, long_sequences, store, small_vectors, cfg).fit(params)
        assert 1 <= len(result.losses) <= 3
        assert all(math.isfinite(loss) for loss in result.losses)
        assert len(result.validation_hr) == len(result.losses)
        assert 1 <= result.best_epoch <= len(result.losses)
        assert result.params is not params
        summary = result.summary(cfg)
        assert summary["ablation"] == "full"
        assert summary["epochs_run"] == len(result.losses)

    def test_same_seed_same_run(self, small_hin, store, small_vectors, long_sequences):
        cfg = TrainConfig(lr=1e-3, epochs=2, batch_size=2, n_neg=1, val_negatives=2, seed=9)
        runs = [Trainer(small_hin, long_sequences, store, small_vectors, cfg).fit(ModelParams.initialize(8, 2, 3))
                for _ in range(2)]
        assert runs[0].losses == runs[1].losses
        for (_, a), (_, b) in zip(runs[0].params.named_tensors(), runs[1].params.named_tensors()):
            assert np.array_equal(a, b)

    def test_dimension_mismatch_rejected(self, small_hin, store, small_vectors, long_sequences):
        trainer = Trainer(small_hin, long_sequences, store, small_vectors, TrainConfig(epochs=1))
        with pytest.raises(ContractViolation):
            trainer.fit(ModelParams.initialize(4, 2))
