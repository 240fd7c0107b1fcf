"""
Meta-path schemas and similarity-guided sampling of path instances.

For every (user, first item) pair and every consecutive (item, item) pair a
handful of schema-conforming paths is kept. Paths are found with a beam
anchored at both ends: start sub-paths grow forward, end sub-paths grow
backward, and the two halves are joined on the middle hop.
"""

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, IngestError, NumericContractError
from .hin import HIN, KEY_SEPARATOR, NodeType, UserSequence, relation_for
from .walk_embedder import NodeEmbeddings

# Get logger for this module
logger = logging.getLogger(__name__)

USER_ITEM = "user_item"
ITEM_ITEM = "item_item"

_META_TYPES = (NodeType.BRAND, NodeType.CATEGORY)


@dataclass(frozen=True)
class MetaPathSchema:
    """A sequence of node types such as I-B-I-C-I."""

    types: Tuple[NodeType, ...]

    def __post_init__(self):
        if not 3 <= len(self.types) <= 6:
            raise ContractViolation(f"schema length must be 3-6, got {len(self.types)}")
        for a, b in zip(self.types, self.types[1:]):
            if relation_for(a, b) is None:
                raise ContractViolation(f"schema {self}: {a.name} and {b.name} are not connectable")
        if self.types[0] not in (NodeType.USER, NodeType.ITEM) or self.types[-1] != NodeType.ITEM:
            raise ContractViolation(f"schema {self} must run from a User or Item to an Item")

    @classmethod
    def parse(cls, text: str) -> "MetaPathSchema":
        return cls(tuple(NodeType.from_letter(letter) for letter in text.strip().upper()))

    @property
    def kind(self) -> str:
        return USER_ITEM if self.types[0] == NodeType.USER else ITEM_ITEM

    @property
    def hops(self) -> int:
        return len(self.types) - 1

    def __str__(self) -> str:
        return "".join(t.value for t in self.types)


@dataclass(frozen=True)
class PathInstance:
    schema: MetaPathSchema
    nodes: Tuple[int, ...]
    score: float

    @property
    def per_hop_score(self) -> float:
        """Geometric mean of the hop scores; comparable across schema lengths."""
        if self.score <= 0.0:
            return 0.0
        return self.score ** (1.0 / self.schema.hops)


@dataclass
class PairPathSet:
    start: int
    end: int
    instances: List[PathInstance] = field(default_factory=list)

    @property
    def endpoint_pair(self) -> Tuple[int, int]:
        return self.start, self.end

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[PathInstance]:
        return iter(self.instances)


def hop_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """
    Cosine similarity of two vectors, 0.0 when either has zero norm.

    Raises:
        ContractViolation: on dimension mismatch
        NumericContractError: on non-finite entries
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractViolation(f"hop_similarity needs equal 1-d vectors, got {a.shape} and {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericContractError("hop_similarity received non-finite values")
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(a, b) / norm, -1.0, 1.0))


class HopScorer:
    """
    Priority of a single hop, in [0, 1].

    Hops between embedded users/items use (1 + cos) / 2 on walk vectors.
    Hops touching a brand or category use path-token vectors when both ends
    have one, otherwise the degree of the brand/category node relative to the
    largest degree of its type. The two vector spaces never meet in one hop.
    """

    def __init__(self, hin: HIN, node_vectors: NodeEmbeddings,
                 token_vectors: Optional[NodeEmbeddings] = None):
        self.hin = hin
        self.node_vectors = node_vectors
        self.token_vectors = token_vectors
        self._cache: Dict[Tuple[int, int], float] = {}
        self._max_degree: Dict[NodeType, int] = {}

    def _degree_priority(self, node: int) -> float:
        node_type = self.hin.node_type(node)
        if node_type not in self._max_degree:
            degrees = [self.hin.degree(n) for n in self.hin.nodes_of_type(node_type)]
            self._max_degree[node_type] = max(degrees) if degrees else 0
        top = self._max_degree[node_type]
        return self.hin.degree(node) / top if top else 0.0

    def hop_score(self, a: int, b: int) -> float:
        key = (a, b) if a < b else (b, a)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        type_a = self.hin.node_type(a)
        type_b = self.hin.node_type(b)
        if type_a in _META_TYPES or type_b in _META_TYPES:
            tokens = self.token_vectors
            if tokens is not None and a in tokens and b in tokens:
                score = (1.0 + hop_similarity(tokens[a], tokens[b])) / 2.0
            else:
                score = self._degree_priority(a if type_a in _META_TYPES else b)
        else:
            va = self.node_vectors.get(a)
            vb = self.node_vectors.get(b)
            score = 0.5 if va is None or vb is None else (1.0 + hop_similarity(va, vb)) / 2.0
        self._cache[key] = score
        return score

    def path_score(self, nodes: Sequence[int]) -> float:
        """Product of hop scores along the path, multiplied in path order."""
        return math.prod(self.hop_score(a, b) for a, b in zip(nodes, nodes[1:]))


def _rank_key(entry: Tuple[Tuple[int, ...], float]):
    nodes, score = entry
    return -score, nodes


def _top_k(entries: List[Tuple[Tuple[int, ...], float]], k: int) -> List[Tuple[Tuple[int, ...], float]]:
    return heapq.nsmallest(k, entries, key=_rank_key)


def is_simple_path(nodes: Sequence[int]) -> bool:
    """Interior nodes are distinct and differ from both endpoints (which may coincide)."""
    interior = nodes[1:-1]
    return len(set(interior)) == len(interior) and nodes[0] not in interior and nodes[-1] not in interior


def sample_instances(hin: HIN, scorer: HopScorer, schema: MetaPathSchema,
                     start: int, end: int, k: int) -> PairPathSet:
    """
    Sample up to k instances of one schema between two nodes.

    Start sub-paths are expanded forward up to the middle position and end
    sub-paths backward down to the position after it, each kept to the top k
    by accumulated hop score; the halves are joined on the middle hop and
    the best k joined paths are returned. The beam can miss the globally
    best path when more than k partial paths compete at some position.

    Args:
        hin: The network
        scorer: Hop priority function
        schema: Meta-path schema whose endpoint types match start/end
        start: First node of every instance
        end: Last node of every instance
        k: Beam width and maximum number of instances

    Returns:
        PairPathSet ranked by score (ties by node sequence); possibly empty
    """
    types = schema.types
    if k < 1:
        raise ContractViolation(f"k must be at least 1, got {k}")
    if hin.node_type(start) != types[0] or hin.node_type(end) != types[-1]:
        raise ContractViolation(f"endpoints ({start}, {end}) do not match schema {schema}")

    last = len(types) - 1
    mid = last // 2
    result = PairPathSet(start, end)

    forward = [((start,), 1.0)]
    for position in range(1, mid + 1):
        candidates = []
        for nodes, score in forward:
            for nxt in hin.neighbors(nodes[-1], types[position]):
                if nxt in nodes or nxt == end:
                    continue
                candidates.append((nodes + (nxt,), score * scorer.hop_score(nodes[-1], nxt)))
        forward = _top_k(candidates, k)
        if not forward:
            return result

    backward = [((end,), 1.0)]
    for position in range(last - 1, mid, -1):
        candidates = []
        for nodes, score in backward:
            for nxt in hin.neighbors(nodes[-1], types[position]):
                if nxt in nodes or nxt == start:
                    continue
                candidates.append((nodes + (nxt,), score * scorer.hop_score(nodes[-1], nxt)))
        backward = _top_k(candidates, k)
        if not backward:
            return result

    joined = {}
    for f_nodes, _ in forward:
        links = set(hin.neighbors(f_nodes[-1], types[mid + 1]))
        for b_nodes, _ in backward:
            if b_nodes[-1] not in links:
                continue
            full = f_nodes + tuple(reversed(b_nodes))
            if full in joined or not is_simple_path(full):
                continue
            joined[full] = scorer.path_score(full)

    for nodes, score in _top_k(list(joined.items()), k):
        result.instances.append(PathInstance(schema, nodes, score))
    return result


def sample_pair(hin: HIN, scorer: HopScorer, schemas: Sequence[MetaPathSchema],
                start: int, end: int, k: int) -> PairPathSet:
    """
    Pool instances of several schemas for one pair and keep the top k.

    Pooled instances are ranked by their per-hop geometric mean so that
    schemas of different lengths compete fairly.
    """
    start_type = hin.node_type(start)
    end_type = hin.node_type(end)
    pooled: Dict[Tuple[int, ...], PathInstance] = {}
    for schema in schemas:
        if schema.types[0] != start_type or schema.types[-1] != end_type:
            continue
        for instance in sample_instances(hin, scorer, schema, start, end, k):
            pooled.setdefault(instance.nodes, instance)
    ranked = sorted(pooled.values(), key=lambda inst: (-inst.per_hop_score, str(inst.schema), inst.nodes))
    return PairPathSet(start, end, ranked[:k])


def validate_instance(hin: HIN, instance: PathInstance) -> List[str]:
    """Return every way the instance breaks the schema or the graph (empty when valid)."""
    problems = []
    types = instance.schema.types
    if len(instance.nodes) != len(types):
        return [f"{instance.nodes}: length {len(instance.nodes)} does not match schema {instance.schema}"]
    for position, (node, node_type) in enumerate(zip(instance.nodes, types)):
        if hin.node_type(node) != node_type:
            problems.append(f"{instance.nodes}: position {position} is not a {node_type.name}")
    for a, b in zip(instance.nodes, instance.nodes[1:]):
        expected = relation_for(hin.node_type(a), hin.node_type(b))
        if expected is None or expected not in hin.relations_between(a, b):
            problems.append(f"{instance.nodes}: no {expected} edge between {a} and {b}")
    if not is_simple_path(instance.nodes):
        problems.append(f"{instance.nodes}: repeated interior node")
    return problems


class PathCorpus:
    """Sampled PairPathSets keyed by (start, end)."""

    def __init__(self, pairs: Optional[Dict[Tuple[int, int], PairPathSet]] = None):
        self.pairs: Dict[Tuple[int, int], PairPathSet] = dict(pairs or {})

    def __getitem__(self, pair: Tuple[int, int]) -> PairPathSet:
        return self.pairs[pair]

    def __contains__(self, pair: Tuple[int, int]) -> bool:
        return pair in self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def get(self, pair: Tuple[int, int]) -> Optional[PairPathSet]:
        return self.pairs.get(pair)

    def instances(self) -> Iterator[PathInstance]:
        for pair in sorted(self.pairs):
            yield from self.pairs[pair].instances

    def dump(self, path: str, hin: HIN, sequences: Sequence[UserSequence]) -> None:
        """`user_key<TAB>schema<TAB>node_key,...<TAB>score`, grouped by user in sequence order."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for seq in sequences:
                user_key = hin.node_key(seq.user)
                for pair in seq.pairs():
                    path_set = self.pairs.get(pair)
                    if path_set is None:
                        continue
                    for instance in path_set:
                        keys = KEY_SEPARATOR.join(hin.node_key(n) for n in instance.nodes)
                        f.write(f"{user_key}\t{instance.schema}\t{keys}\t{instance.score!r}\n")

    @classmethod
    def load(cls, path: str, hin: HIN, sequences: Sequence[UserSequence]) -> "PathCorpus":
        """Read a dump; pairs of the sequences without any line become empty sets."""
        pairs: Dict[Tuple[int, int], PairPathSet] = {}
        seen = set()
        with open(path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise IngestError("expected 4 fields", line_number, path)
                _, schema_text, keys, score = parts
                schema = MetaPathSchema.parse(schema_text)
                key_list = keys.split(KEY_SEPARATOR)
                if len(key_list) != len(schema.types):
                    raise IngestError("node count does not match schema", line_number, path)
                nodes = tuple(hin.node_id(t, key) for t, key in zip(schema.types, key_list))
                pair = (nodes[0], nodes[-1])
                path_set = pairs.setdefault(pair, PairPathSet(*pair))
                if (pair, nodes) in seen:
                    continue
                seen.add((pair, nodes))
                path_set.instances.append(PathInstance(schema, nodes, float(score)))
        for seq in sequences:
            for pair in seq.pairs():
                pairs.setdefault(pair, PairPathSet(*pair))
        return cls(pairs)


def split_schemas(schemas: Sequence[MetaPathSchema]) -> Tuple[List[MetaPathSchema], List[MetaPathSchema]]:
    user_item = [s for s in schemas if s.kind == USER_ITEM]
    item_item = [s for s in schemas if s.kind == ITEM_ITEM]
    return user_item, item_item


_worker_state = None


def _init_sampling_worker(hin, scorer, user_item, item_item, k):
    global _worker_state
    _worker_state = (hin, scorer, user_item, item_item, k)


def _sample_chunk(chunk):
    hin, scorer, user_item, item_item, k = _worker_state
    return [sample_pair(hin, scorer, user_item if kind == USER_ITEM else item_item, a, b, k)
            for (a, b), kind in chunk]


def build_pair_corpus(hin: HIN, scorer: HopScorer, sequences: Sequence[UserSequence],
                      schemas: Sequence[MetaPathSchema], k: int, workers: int = 1) -> PathCorpus:
    """
    Sample the path corpus of every user's history.

    Each user contributes (user, first item) over user-item schemas and every
    consecutive item pair of bridge+train over item-item schemas. Item pairs
    shared by several users are sampled once.

    Args:
        hin: The network
        scorer: Hop priority function
        sequences: User sequences from ingestion
        schemas: Mixed user-item and item-item schemas
        k: Instances kept per pair
        workers: Processes used for sampling

    Returns:
        PathCorpus holding one (possibly empty) PairPathSet per pair
    """
    user_item, item_item = split_schemas(schemas)
    jobs: Dict[Tuple[int, int], str] = {}
    for seq in sequences:
        for index, pair in enumerate(seq.pairs()):
            jobs.setdefault(pair, USER_ITEM if index == 0 else ITEM_ITEM)
    ordered = list(jobs.items())
    logger.info(f"Sampling paths for {len(ordered)} pairs ({len(user_item)} user-item, "
                f"{len(item_item)} item-item schemas, k={k})")

    if workers <= 1 or len(ordered) < 2 * workers:
        results = []
        for index, ((a, b), kind) in enumerate(ordered, start=1):
            results.append(sample_pair(hin, scorer, user_item if kind == USER_ITEM else item_item, a, b, k))
            if index % 5000 == 0:
                logger.info(f"Sampled {index}/{len(ordered)} pairs")
    else:
        chunk_size = max(1, len(ordered) // (workers * 4))
        chunks = [ordered[i: i + chunk_size] for i in range(0, len(ordered), chunk_size)]
        results = []
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_sampling_worker,
                                 initargs=(hin, scorer, user_item, item_item, k)) as executor:
            for chunk_result in executor.map(_sample_chunk, chunks):
                results.extend(chunk_result)

    corpus = PathCorpus({path_set.endpoint_pair: path_set for path_set in results})
    empty = sum(1 for path_set in results if not path_set.instances)
    if empty:
        logger.warning(f"{empty} of {len(results)} pairs have no path instance")
    return corpus
