"""
Path embeddings.

Paths are treated as sentences and nodes as tokens: a skip-gram model is
trained over the sampled path corpus, and an instance is embedded as the
mean of its token vectors. PathStore serves encoded path sets for any pair,
sampling pairs outside the corpus on demand.
"""

import logging
import threading
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, MissingTokenError
from .hin import HIN, NodeType
from .metapath_sampler import (
    HopScorer,
    MetaPathSchema,
    PairPathSet,
    PathCorpus,
    PathInstance,
    sample_pair,
    split_schemas,
)
from .walk_embedder import NodeEmbeddings, WalkConfig, train_skipgram

# Get logger for this module
logger = logging.getLogger(__name__)

PATH_TOKEN_WINDOW = 2
PATH_TOKEN_EPOCHS = 20


def path_token_config(dim: int, seed: int) -> WalkConfig:
    """Skip-gram settings for path corpora (paths are only 3-6 tokens long)."""
    return WalkConfig(dim=dim, window=PATH_TOKEN_WINDOW, epochs=PATH_TOKEN_EPOCHS, seed=seed)


def train_path_tokens(corpus: PathCorpus, d: int, cfg: Optional[WalkConfig] = None) -> NodeEmbeddings:
    """
    Train token vectors of dimension d over every sampled path instance.

    Args:
        corpus: Path corpus from build_pair_corpus
        d: Token vector length
        cfg: Skip-gram settings; window 2 and 20 epochs when omitted

    Returns:
        NodeEmbeddings with one vector per node seen in any instance
    """
    cfg = replace(cfg, dim=d) if cfg is not None else path_token_config(d, seed=0)
    sentences = [list(instance.nodes) for instance in corpus.instances()]
    if not sentences:
        raise ContractViolation("path corpus holds no instance to train path tokens on")
    return train_skipgram(sentences, cfg)


def encode_instance(instance: PathInstance, tokens: NodeEmbeddings) -> np.ndarray:
    """
    Mean of the token vectors of the instance nodes.

    Raises:
        MissingTokenError: naming the first node without a token vector
    """
    rows = []
    for node in instance.nodes:
        vector = tokens.get(node)
        if vector is None:
            raise MissingTokenError(node)
        rows.append(vector)
    return np.mean(np.stack(rows), axis=0)


def encode_pair(path_set: PairPathSet, tokens: NodeEmbeddings) -> np.ndarray:
    """Stack instance encodings into an |instances| x d matrix (0 x d when empty)."""
    if not path_set.instances:
        return np.zeros((0, tokens.dim))
    return np.stack([encode_instance(instance, tokens) for instance in path_set.instances])


class PathStore:
    """
    Encoded path sets for user-item and item-item pairs.

    Pairs found in the corpus are served from it; any other pair is sampled
    with the same schemas and beam width and cached. Instances with a node
    outside the path-token vocabulary are dropped, so the rows of an encoded
    matrix always correspond one-to-one to the returned instances.
    """

    def __init__(self, hin: HIN, scorer: HopScorer, corpus: PathCorpus, tokens: NodeEmbeddings,
                 schemas: Sequence[MetaPathSchema], k: int):
        self.hin = hin
        self.scorer = scorer
        self.corpus = corpus
        self.tokens = tokens
        self.user_item_schemas, self.item_item_schemas = split_schemas(schemas)
        self.k = k
        self.dropped_instances = 0
        self._encoded: Dict[Tuple[int, int], Tuple[PairPathSet, np.ndarray]] = {}
        self._lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.tokens.dim

    def path_set(self, start: int, end: int) -> PairPathSet:
        """The raw (unfiltered) path set of a pair, sampled when not in the corpus."""
        cached = self.corpus.get((start, end))
        if cached is not None:
            return cached
        if self.hin.node_type(start) == NodeType.USER:
            schemas = self.user_item_schemas
        else:
            schemas = self.item_item_schemas
        return sample_pair(self.hin, self.scorer, schemas, start, end, self.k)

    def encoded(self, start: int, end: int) -> Tuple[PairPathSet, np.ndarray]:
        """
        Path set of a pair restricted to encodable instances, with its matrix.

        Returns:
            (PairPathSet, |instances| x d matrix) with matching row order
        """
        key = (start, end)
        with self._lock:
            hit = self._encoded.get(key)
        if hit is not None:
            return hit

        raw = self.path_set(start, end)
        kept: List[PathInstance] = []
        rows = []
        for instance in raw.instances:
            try:
                rows.append(encode_instance(instance, self.tokens))
            except MissingTokenError as e:
                logger.debug(f"Dropping path {instance.nodes}: {e}")
                continue
            kept.append(instance)
        path_set = PairPathSet(start, end, kept)
        matrix = np.stack(rows) if rows else np.zeros((0, self.dim))

        with self._lock:
            self.dropped_instances += len(raw.instances) - len(kept)
            self._encoded.setdefault(key, (path_set, matrix))
            return self._encoded[key]
