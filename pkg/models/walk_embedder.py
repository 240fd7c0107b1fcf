"""
Walk-based node embeddings for users and items.

Truncated random walks over the user-item bipartite subgraph (Buy edges only)
are fed to a gensim skip-gram model with negative sampling. The same
skip-gram wrapper embeds path tokens (see path_encoder).
"""

import logging
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
from gensim.models import Word2Vec
from gensim.models.callbacks import CallbackAny2Vec

from .errors import CheckpointFormatError, ContractViolation
from .hin import HIN, NodeType

# Get logger for this module
logger = logging.getLogger(__name__)

EMBEDDING_MAGIC = b"TMEREMB1"


@dataclass
class WalkConfig:
    """Random walk and skip-gram hyperparameters."""

    dim: int = 100
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    seed: int = 0
    start_alpha: float = 0.025
    end_alpha: float = 0.0001
    # 1.0 samples negatives from the plain unigram distribution
    ns_exponent: float = 1.0
    workers: int = 1

    def __post_init__(self):
        for name in ("dim", "walks_per_node", "walk_length", "window", "negatives", "epochs", "workers"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive, got {getattr(self, name)}")
        if self.window >= self.walk_length:
            raise ContractViolation(f"window ({self.window}) must be smaller than walk_length ({self.walk_length})")


@dataclass
class NodeEmbeddings:
    """
    Node id to vector table produced by skip-gram training.

    Attributes:
        vectors: NodeId -> float64 vector of length dim
        dim: Vector length
        epoch_losses: Skip-gram loss of every training epoch
        uninitialized: Nodes that were expected but absent from the corpus
    """

    vectors: Dict[int, np.ndarray]
    dim: int
    epoch_losses: List[float] = field(default_factory=list)
    uninitialized: List[int] = field(default_factory=list)

    def __getitem__(self, node: int) -> np.ndarray:
        return self.vectors[node]

    def __contains__(self, node: int) -> bool:
        return node in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, node: int) -> Optional[np.ndarray]:
        return self.vectors.get(node)

    def nodes(self) -> List[int]:
        return sorted(self.vectors)


class EpochLossRecorder(CallbackAny2Vec):
    """Turns gensim's cumulative running loss into per-epoch losses."""

    def __init__(self):
        self.losses: List[float] = []
        self._previous = 0.0

    def on_epoch_end(self, model):
        total = model.get_latest_training_loss()
        self.losses.append(float(total - self._previous))
        self._previous = total


def _stable_hash(text: str) -> int:
    # gensim seeds each initial vector from hashfxn(word + seed); builtin hash() is salted per process
    return zlib.crc32(text.encode("utf-8"))


def _walk_rng(seed: int, node: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0xFFFFFFFF, int(node)])


def _walks_from(hin: HIN, node: int, cfg: WalkConfig) -> List[List[int]]:
    rng = _walk_rng(cfg.seed, node)
    walks = []
    for _ in range(cfg.walks_per_node):
        walk = [node]
        while len(walk) < cfg.walk_length:
            candidates = hin.buy_neighbors(walk[-1])
            if not candidates:
                break
            walk.append(candidates[int(rng.integers(len(candidates)))])
        walks.append(walk)
    return walks


_worker_hin: Optional[HIN] = None


def _init_walk_worker(hin: HIN):
    global _worker_hin
    _worker_hin = hin


def _walks_for_chunk(args) -> List[List[int]]:
    nodes, cfg = args
    walks = []
    for node in nodes:
        walks.extend(_walks_from(_worker_hin, node, cfg))
    return walks


def generate_walks(hin: HIN, cfg: WalkConfig, workers: int = 1) -> List[List[int]]:
    """
    Generate truncated random walks over Buy edges.

    `walks_per_node` walks start from every User and Item node; each walk
    stops after `walk_length` nodes or at a node without Buy neighbors.
    Every start node owns an RNG derived from (seed, node), so the output is
    identical for any number of workers.

    Args:
        hin: The heterogeneous information network
        cfg: Walk configuration
        workers: Processes used for walk generation

    Returns:
        Walks grouped by start node, start nodes ascending
    """
    starts = hin.nodes_of_type(NodeType.USER) + hin.nodes_of_type(NodeType.ITEM)
    starts.sort()
    if not any(hin.relation_counts().values()):
        logger.warning("HIN has no edges; every walk is a single node")

    if workers <= 1 or len(starts) < 2 * workers:
        walks = []
        for node in starts:
            walks.extend(_walks_from(hin, node, cfg))
    else:
        chunk_size = max(1, len(starts) // (workers * 4))
        chunks = [starts[i: i + chunk_size] for i in range(0, len(starts), chunk_size)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_walk_worker, initargs=(hin,)) as executor:
            walks = []
            for chunk_walks in executor.map(_walks_for_chunk, [(chunk, cfg) for chunk in chunks]):
                walks.extend(chunk_walks)
    logger.info(f"Generated {len(walks)} walks from {len(starts)} start nodes")
    return walks


def train_skipgram(walks: Sequence[Sequence[int]], cfg: WalkConfig,
                   expected_nodes: Optional[Iterable[int]] = None) -> NodeEmbeddings:
    """
    Train skip-gram with negative sampling over a corpus of node sequences.

    The learning rate decays linearly from `start_alpha` to `end_alpha`.
    With `workers == 1` the result is bit-identical across runs.

    Args:
        walks: Node sequences (walks or path instances)
        cfg: Skip-gram configuration
        expected_nodes: Nodes that must receive a vector; those absent from the
            corpus are initialized uniformly in [-0.5/d, 0.5/d] and reported

    Returns:
        NodeEmbeddings with per-epoch losses and the uninitialized nodes
    """
    sentences = [[str(node) for node in walk] for walk in walks if len(walk) > 0]
    if not sentences:
        raise ContractViolation("skip-gram corpus is empty")
    if cfg.workers > 1:
        logger.warning("Skip-gram with several workers is not deterministic")

    recorder = EpochLossRecorder()
    model = Word2Vec(
        vector_size=cfg.dim,
        window=cfg.window,
        min_count=1,
        sg=1,
        hs=0,
        negative=cfg.negatives,
        ns_exponent=cfg.ns_exponent,
        alpha=cfg.start_alpha,
        min_alpha=cfg.end_alpha,
        sample=0,
        seed=cfg.seed & 0xFFFFFFFF,
        workers=cfg.workers,
        hashfxn=_stable_hash,
    )
    model.build_vocab(sentences)
    model.train(
        sentences,
        total_examples=model.corpus_count,
        epochs=cfg.epochs,
        compute_loss=True,
        callbacks=[recorder],
    )

    vectors = {int(token): np.asarray(model.wv[token], dtype=np.float64) for token in model.wv.index_to_key}
    uninitialized = []
    if expected_nodes is not None:
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFF, 0x5EED])
        bound = 0.5 / cfg.dim
        for node in sorted(set(int(n) for n in expected_nodes) - set(vectors)):
            vectors[node] = rng.uniform(-bound, bound, size=cfg.dim)
            uninitialized.append(node)
        if uninitialized:
            logger.warning(f"{len(uninitialized)} nodes absent from the corpus got random vectors")

    logger.info(
        f"Trained skip-gram on {len(sentences)} sequences, vocabulary {len(model.wv.index_to_key)}, "
        f"epoch losses {', '.join(f'{loss:.2f}' for loss in recorder.losses)}"
    )
    return NodeEmbeddings(vectors=vectors, dim=cfg.dim, epoch_losses=recorder.losses, uninitialized=uninitialized)


def embed_nodes(hin: HIN, cfg: WalkConfig, workers: int = 1) -> NodeEmbeddings:
    """Walk generation followed by skip-gram; every User and Item gets a vector."""
    walks = generate_walks(hin, cfg, workers=workers)
    expected = hin.nodes_of_type(NodeType.USER) + hin.nodes_of_type(NodeType.ITEM)
    return train_skipgram(walks, cfg, expected_nodes=expected)


def dump_embeddings_text(path: str, embeddings: NodeEmbeddings, key_of: Callable[[int], str]) -> None:
    """Text dump: `node_key<TAB>v1 v2 ... vd`, one node per line, ascending NodeId."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for node in embeddings.nodes():
            values = " ".join(repr(float(v)) for v in embeddings[node])
            f.write(f"{key_of(node)}\t{values}\n")


def dump_embeddings_binary(path: str, embeddings: NodeEmbeddings) -> None:
    """Binary dump: magic, d (u32), count (u32), then (node u64, d little-endian float64) records."""
    nodes = embeddings.nodes()
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<II", embeddings.dim, len(nodes)))
        for node in nodes:
            f.write(struct.pack("<Q", node))
            f.write(np.asarray(embeddings[node], dtype="<f8").tobytes())


def load_embeddings_binary(path: str) -> NodeEmbeddings:
    with open(path, "rb") as f:
        if f.read(len(EMBEDDING_MAGIC)) != EMBEDDING_MAGIC:
            raise CheckpointFormatError(f"{path} is not an embedding dump")
        dim, count = struct.unpack("<II", f.read(8))
        vectors = {}
        for _ in range(count):
            (node,) = struct.unpack("<Q", f.read(8))
            buffer = f.read(8 * dim)
            if len(buffer) != 8 * dim:
                raise CheckpointFormatError(f"{path} is truncated")
            vectors[int(node)] = np.frombuffer(buffer, dtype="<f8").astype(np.float64)
    return NodeEmbeddings(vectors=vectors, dim=dim)
