import os
import json
import logging
from typing import Any, Dict, List, Tuple

from models.config import PipelineConfig, stage_seed
from models.errors import ContractViolation, MissingArtifactError
from models.evaluator import Evaluator, SequenceScorer, write_rank_dump, write_report
from models.explainer import explain_users, write_explanations
from models.hin import HIN, IngestConfig, NodeType, RelationType, UserSequence, dump_sequences, ingest, load_sequences
from models.metapath_sampler import HopScorer, PathCorpus, build_pair_corpus
from models.path_encoder import PathStore, path_token_config, train_path_tokens
from models.schema_catalog import SchemaCatalog
from models.tmer_model import ModelParams, ablate, load_checkpoint, save_checkpoint
from models.trainer import TrainConfig, Trainer, learning_rate_for
from models.walk_embedder import (
    NodeEmbeddings,
    WalkConfig,
    dump_embeddings_binary,
    dump_embeddings_text,
    embed_nodes,
    load_embeddings_binary,
)

# Get logger for this module
logger = logging.getLogger(__name__)

# Initialize the schema catalog
_schema_catalog = SchemaCatalog()

# artifact name -> (file name, stage that writes it)
ARTIFACTS = {
    "hin": ("hin.txt", "prepare"),
    "sequences": ("sequences.tsv", "prepare"),
    "prepare_summary": ("prepare_summary.json", "prepare"),
    "node_embeddings_text": ("node_embeddings.txt", "init-embed"),
    "node_embeddings": ("node_embeddings.bin", "init-embed"),
    "embed_report": ("embed_report.json", "init-embed"),
    "path_corpus": ("path_corpus.tsv", "sample-paths"),
    "path_tokens_text": ("path_tokens.txt", "encode-paths"),
    "path_tokens": ("path_tokens.bin", "encode-paths"),
    "checkpoint": ("model.ckpt", "train"),
    "model_summary": ("model.json", "train"),
    "metrics": ("metrics.json", "evaluate"),
    "ranks": ("ranks.tsv", "evaluate"),
    "explanations": ("explanations.jsonl", "explain"),
}


# Artifact Functions
def artifact_path(cfg: PipelineConfig, name: str, must_exist: bool = False) -> str:
    """Path of a workdir artifact; with must_exist, a missing file names the stage to run."""
    file_name, stage = ARTIFACTS[name]
    path = os.path.join(cfg.workdir, file_name)
    if must_exist and not os.path.isfile(path):
        raise MissingArtifactError(path, stage)
    return path


def _write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_json(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def get_schema_catalog(cfg: PipelineConfig) -> SchemaCatalog:
    """Get the schema catalog for the configured schema file."""
    if cfg.schema_file == _schema_catalog.schema_file:
        return _schema_catalog
    return SchemaCatalog(cfg.schema_file)


def load_network(cfg: PipelineConfig) -> Tuple[HIN, List[UserSequence]]:
    """Load the prepared HIN and user sequences."""
    hin = HIN.load(artifact_path(cfg, "hin", must_exist=True))
    sequences = load_sequences(artifact_path(cfg, "sequences", must_exist=True), hin)
    return hin, sequences


def load_node_vectors(cfg: PipelineConfig) -> NodeEmbeddings:
    """Load the walk embeddings written by init-embed."""
    return load_embeddings_binary(artifact_path(cfg, "node_embeddings", must_exist=True))


def load_path_tokens(cfg: PipelineConfig) -> NodeEmbeddings:
    """Load the path-token vectors written by encode-paths."""
    return load_embeddings_binary(artifact_path(cfg, "path_tokens", must_exist=True))


def build_hop_scorer(cfg: PipelineConfig, hin: HIN, node_vectors: NodeEmbeddings) -> HopScorer:
    """Hop scorer; re-sampling runs also score brand/category hops with path tokens."""
    tokens = load_path_tokens(cfg) if cfg.resample_paths else None
    return HopScorer(hin, node_vectors, tokens)


def build_path_store(cfg: PipelineConfig, hin: HIN, sequences: List[UserSequence],
                     node_vectors: NodeEmbeddings) -> PathStore:
    """PathStore over the sampled corpus and trained path tokens."""
    schemas = get_schema_catalog(cfg).schemas_for(cfg.schema_set)
    corpus = PathCorpus.load(artifact_path(cfg, "path_corpus", must_exist=True), hin, sequences)
    tokens = load_path_tokens(cfg)
    if tokens.dim != node_vectors.dim:
        raise ContractViolation(f"path tokens have dimension {tokens.dim}, node vectors {node_vectors.dim}")
    return PathStore(hin, build_hop_scorer(cfg, hin, node_vectors), corpus, tokens, schemas, cfg.k_paths)


def resolve_stage_seed(cfg: PipelineConfig, stage: str) -> int:
    """Derived seed of a stage, logged once per stage run."""
    seed = stage_seed(cfg.seed, stage)
    logger.info(f"Stage '{stage}' seed = {seed} (run seed {cfg.seed})")
    return seed


# Stage Functions
def prepare(cfg: PipelineConfig) -> Dict[str, Any]:
    """Ingest the dataset files into the HIN and user sequences."""
    resolve_stage_seed(cfg, "prepare")
    for label, path in (("interactions", cfg.interactions), ("metadata", cfg.metadata)):
        if not path or not os.path.isfile(path):
            raise ContractViolation(f"{label} file not found: {path!r}")
    os.makedirs(cfg.workdir, exist_ok=True)
    ingest_config = IngestConfig(cfg.history_length, cfg.bridge_size, cfg.train_size, cfg.keep_short,
                                 cfg.include_test_buys)
    hin, sequences, report = ingest(cfg.interactions, cfg.metadata, ingest_config)
    hin.dump(artifact_path(cfg, "hin"))
    dump_sequences(artifact_path(cfg, "sequences"), hin, sequences)

    counts = hin.counts()
    relations = hin.relation_counts()
    summary = {
        "dataset": cfg.dataset,
        "nodes": {node_type.name.lower(): counts[node_type] for node_type in NodeType},
        "edges": {kind.value: relations[kind] for kind in RelationType},
        "sequences": len(sequences),
        "users_seen": report.users_seen,
        "users_dropped": report.users_dropped,
        "duplicates_removed": report.duplicates_removed,
        "metadata_rows": report.metadata_rows,
    }
    _write_json(artifact_path(cfg, "prepare_summary"), summary)
    logger.info(f"Prepared {summary['nodes']} with {summary['edges']}")
    return summary


def init_embed(cfg: PipelineConfig) -> NodeEmbeddings:
    """Random walks plus skip-gram over the HIN."""
    seed = resolve_stage_seed(cfg, "init-embed")
    hin, _ = load_network(cfg)
    walk_config = WalkConfig(dim=cfg.dim, walks_per_node=cfg.walks_per_node, walk_length=cfg.walk_length,
                             window=cfg.window, epochs=cfg.walk_epochs, seed=seed)
    embeddings = embed_nodes(hin, walk_config, workers=cfg.parallel_workers)
    dump_embeddings_text(artifact_path(cfg, "node_embeddings_text"), embeddings, hin.node_key)
    dump_embeddings_binary(artifact_path(cfg, "node_embeddings"), embeddings)
    _write_json(artifact_path(cfg, "embed_report"), {
        "dim": embeddings.dim,
        "nodes": len(embeddings),
        "epoch_losses": embeddings.epoch_losses,
        "uninitialized": [hin.node_key(node) for node in embeddings.uninitialized],
    })
    return embeddings


def sample_paths(cfg: PipelineConfig) -> PathCorpus:
    """Sample the top-k path instances of every history pair."""
    resolve_stage_seed(cfg, "sample-paths")
    hin, sequences = load_network(cfg)
    node_vectors = load_node_vectors(cfg)
    schemas = get_schema_catalog(cfg).schemas_for(cfg.schema_set)
    scorer = build_hop_scorer(cfg, hin, node_vectors)
    corpus = build_pair_corpus(hin, scorer, sequences, schemas, cfg.k_paths, workers=cfg.parallel_workers)
    corpus.dump(artifact_path(cfg, "path_corpus"), hin, sequences)
    return corpus


def encode_paths(cfg: PipelineConfig) -> NodeEmbeddings:
    """Train path-token vectors over the sampled corpus."""
    seed = resolve_stage_seed(cfg, "encode-paths")
    hin, sequences = load_network(cfg)
    corpus = PathCorpus.load(artifact_path(cfg, "path_corpus", must_exist=True), hin, sequences)
    tokens = train_path_tokens(corpus, cfg.dim, path_token_config(cfg.dim, seed))
    dump_embeddings_text(artifact_path(cfg, "path_tokens_text"), tokens, hin.node_key)
    dump_embeddings_binary(artifact_path(cfg, "path_tokens"), tokens)
    return tokens


def train(cfg: PipelineConfig) -> Dict[str, Any]:
    """Train the model and checkpoint the best parameters."""
    hin, sequences = load_network(cfg)
    node_vectors = load_node_vectors(cfg)
    store = build_path_store(cfg, hin, sequences, node_vectors)
    seed = resolve_stage_seed(cfg, "train")
    train_config = TrainConfig(
        lr=learning_rate_for(cfg.dataset, cfg.lr), epochs=cfg.epochs, batch_size=cfg.batch_size,
        n_neg=cfg.n_neg, patience=cfg.patience, val_negatives=cfg.val_negatives, seed=seed,
        mode=cfg.ablation, loss_kind=cfg.loss,
    )
    params = ModelParams.initialize(cfg.dim, cfg.heads, seed=seed)
    result = Trainer(hin, sequences, store, node_vectors, train_config).fit(params)
    save_checkpoint(artifact_path(cfg, "checkpoint"), result.params)
    summary = result.summary(train_config)
    _write_json(artifact_path(cfg, "model_summary"), summary)
    return summary


def _trained_model(cfg: PipelineConfig):
    params = load_checkpoint(artifact_path(cfg, "checkpoint", must_exist=True))
    summary = _read_json(artifact_path(cfg, "model_summary", must_exist=True))
    if summary["ablation"] != cfg.ablation:
        logger.warning(f"Checkpoint was trained with ablation {summary['ablation']}; "
                       f"ignoring configured {cfg.ablation}")
    return ablate(params, summary["ablation"]), summary


def evaluate(cfg: PipelineConfig) -> Dict[str, Any]:
    """Rank every test instance and write the metrics report."""
    seed = resolve_stage_seed(cfg, "evaluate")
    hin, sequences = load_network(cfg)
    node_vectors = load_node_vectors(cfg)
    model, summary = _trained_model(cfg)
    store = build_path_store(cfg, hin, sequences, node_vectors)
    evaluator = Evaluator(hin, n_negatives=cfg.n_negatives, seed=seed,
                          workers=cfg.parallel_workers)
    labels = {"ablation": summary["ablation"], "loss": summary["loss"], "schema_set": cfg.schema_set}
    report = evaluator.evaluate(sequences, SequenceScorer(model, store, node_vectors), cfg.dataset, labels)
    report.seed = cfg.seed
    write_report(report, artifact_path(cfg, "metrics"))
    write_rank_dump(report, artifact_path(cfg, "ranks"), hin)
    return report.to_dict()


def explain(cfg: PipelineConfig) -> int:
    """Recommend and explain for the first users; returns the number of records."""
    resolve_stage_seed(cfg, "explain")
    hin, sequences = load_network(cfg)
    node_vectors = load_node_vectors(cfg)
    model, _ = _trained_model(cfg)
    store = build_path_store(cfg, hin, sequences, node_vectors)
    # candidate pools match the ones evaluate ranked
    evaluator = Evaluator(hin, n_negatives=cfg.n_negatives, seed=stage_seed(cfg.seed, "evaluate"))
    records = explain_users(sequences, SequenceScorer(model, store, node_vectors), evaluator, hin,
                            top_k=cfg.top_k, n_users=cfg.explain_users)
    write_explanations(records, artifact_path(cfg, "explanations"))
    return len(records)


def run_all(cfg: PipelineConfig) -> Dict[str, Any]:
    """Chain every stage; re-sampling runs sample and encode a second time with path tokens."""
    prepare(cfg)
    init_embed(cfg)
    if cfg.resample_paths:
        first_pass = PipelineConfig(**{**cfg.to_dict(), "resample_paths": False})
        sample_paths(first_pass)
        encode_paths(first_pass)
    sample_paths(cfg)
    encode_paths(cfg)
    train(cfg)
    metrics = evaluate(cfg)
    explain(cfg)
    return metrics


STAGE_FUNCTIONS = {
    "prepare": prepare,
    "init-embed": init_embed,
    "sample-paths": sample_paths,
    "encode-paths": encode_paths,
    "train": train,
    "evaluate": evaluate,
    "explain": explain,
    "run-all": run_all,
}
