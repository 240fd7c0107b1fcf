import json
import logging
import os
from dataclasses import replace

import pytest

import services
from models.config import STAGES, PipelineConfig, stage_seed
from models.errors import ContractViolation, MissingArtifactError
from tests.synthetic import write_planted_dataset


def tiny_config(workdir, interactions, metadata, **overrides):
    values = dict(
        workdir=str(workdir), interactions=interactions, metadata=metadata, dataset="planted", seed=1,
        history_length=8, bridge_size=2, train_size=4,
        dim=8, heads=2, walks_per_node=2, walk_length=10, window=3, walk_epochs=1,
        k_paths=3, epochs=2, batch_size=32, patience=2, val_negatives=10, lr=1e-3,
        n_negatives=20, top_k=3, explain_users=2, workers=1,
    )
    values.update(overrides)
    return PipelineConfig(**values)


class TestArtifacts:
    def test_missing_artifact_names_stage(self, tmp_path):
        cfg = PipelineConfig(workdir=str(tmp_path))
        with pytest.raises(MissingArtifactError) as excinfo:
            services.artifact_path(cfg, "path_corpus", must_exist=True)
        assert "sample-paths" in str(excinfo.value)

    def test_stage_without_inputs(self, tmp_path):
        with pytest.raises(MissingArtifactError) as excinfo:
            services.evaluate(PipelineConfig(workdir=str(tmp_path)))
        assert "prepare" in str(excinfo.value)

    def test_prepare_requires_input_files(self, tmp_path):
        cfg = PipelineConfig(workdir=str(tmp_path), interactions=str(tmp_path / "none.tsv"),
                             metadata=str(tmp_path / "none.tsv"))
        with pytest.raises(ContractViolation):
            services.prepare(cfg)

    def test_custom_schema_file_loaded(self, tmp_path):
        path = tmp_path / "schemas.json"
        path.write_text(json.dumps({"user_item": ["UIBI"], "item_item": ["IBI"], "schema_sets": {"all": "UIB"}}))
        catalog = services.get_schema_catalog(PipelineConfig(schema_file=str(path)))
        assert [str(s) for s in catalog.schemas_for("all")] == ["UIBI", "IBI"]


class TestPrepare:
    def test_summary_counts(self, tmp_path, planted_files):
        cfg = tiny_config(tmp_path / "work", *planted_files)
        summary = services.prepare(cfg)
        assert summary["nodes"]["user"] == 40
        assert summary["nodes"]["brand"] <= 10 and summary["nodes"]["category"] <= 5
        assert summary["sequences"] == 40
        # test purchases stay out of the network
        assert summary["edges"]["buy"] == 40 * 6
        assert os.path.isfile(services.artifact_path(cfg, "hin"))


class TestRunAll:
    def test_writes_every_artifact(self, tmp_path, planted_files, caplog):
        caplog.set_level(logging.INFO, logger="services")
        cfg = tiny_config(tmp_path / "work", *planted_files)
        metrics = services.run_all(cfg)
        for stage in STAGES:
            assert f"Stage '{stage}' seed = {stage_seed(cfg.seed, stage)}" in caplog.text, stage
        for name in services.ARTIFACTS:
            assert os.path.isfile(services.artifact_path(cfg, name)), name
        assert metrics["instances"] == 40 * 2
        assert set(metrics["metrics"]["all"]) == {"1", "5", "10", "20"}
        with open(services.artifact_path(cfg, "explanations")) as f:
            lines = [json.loads(line) for line in f]
        assert len(lines) == 2 * 3

    def test_same_seed_same_report(self, tmp_path, planted_files):
        reports = []
        for name in ("first", "second"):
            cfg = tiny_config(tmp_path / name, *planted_files)
            services.run_all(cfg)
            with open(services.artifact_path(cfg, "metrics"), "rb") as f:
                reports.append(f.read())
            with open(services.artifact_path(cfg, "ranks"), "rb") as f:
                reports.append(f.read())
        assert reports[0] == reports[2]
        assert reports[1] == reports[3]


@pytest.mark.slow
class TestPlantedStructure:
    def test_full_model_beats_popularity_and_rii(self, tmp_path):
        interactions, metadata = write_planted_dataset(str(tmp_path))
        cfg = tiny_config(tmp_path / "work", interactions, metadata, dim=16, walks_per_node=5, walk_length=20,
                          window=5, walk_epochs=3, k_paths=5, epochs=10, patience=3, val_negatives=50,
                          n_negatives=100)
        full = services.run_all(cfg)
        rii_cfg = replace(cfg, ablation="RII")
        services.train(rii_cfg)
        rii = services.evaluate(rii_cfg)

        full_hr = full["metrics"]["all"]["10"]["HR"]
        assert full_hr >= 1.5 * full["baseline"]["all"]["10"]["HR"]
        assert full_hr >= rii["metrics"]["all"]["10"]["HR"]
