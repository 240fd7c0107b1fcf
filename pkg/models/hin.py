"""
Heterogeneous information network (HIN) for the recommendation pipeline.
Handles the typed graph model, dataset ingestion and the bridge/train/test split.

Node ids are dense integers in [0, |V|). Users come first, then items, brands
and categories, each block ordered by the original dataset key, so two
ingestions of the same files assign identical ids.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Iterator, List, Optional, Set, Tuple

import networkx as nx
import numpy as np
import pandas as pd

from .errors import ContractViolation, IngestError, UnknownNodeError

# Get logger for this module
logger = logging.getLogger(__name__)

HIN_FORMAT_HEADER = "# tmer-hin v1"
KEY_SEPARATOR = ","


class NodeType(str, Enum):
    """Entity types of the network; the value is the schema letter."""

    USER = "U"
    ITEM = "I"
    BRAND = "B"
    CATEGORY = "C"

    @classmethod
    def from_letter(cls, letter: str) -> "NodeType":
        for node_type in cls:
            if node_type.value == letter:
                return node_type
        raise ContractViolation(f"unknown node type letter: {letter!r}")


class RelationType(str, Enum):
    BUY = "buy"
    IS_BRAND_OF = "is_brand_of"
    IN_CATEGORY = "in_category"


# Endpoint types permitted for each relation (unordered)
RELATION_ENDPOINTS = {
    RelationType.BUY: frozenset({NodeType.USER, NodeType.ITEM}),
    RelationType.IS_BRAND_OF: frozenset({NodeType.BRAND, NodeType.ITEM}),
    RelationType.IN_CATEGORY: frozenset({NodeType.CATEGORY, NodeType.ITEM}),
}


@dataclass(frozen=True)
class Relation:
    """A typed edge label. Only Buy edges carry a timestamp."""

    kind: RelationType
    timestamp: Optional[int] = None

    def __post_init__(self):
        if self.kind == RelationType.BUY and self.timestamp is None:
            raise ContractViolation("Buy relation requires a timestamp")
        if self.kind != RelationType.BUY and self.timestamp is not None:
            raise ContractViolation(f"{self.kind.value} relation takes no timestamp")


def relation_for(type_a: NodeType, type_b: NodeType) -> Optional[RelationType]:
    """Return the relation that connects two node types, or None."""
    pair = frozenset({type_a, type_b})
    for kind, endpoints in RELATION_ENDPOINTS.items():
        if pair == endpoints:
            return kind
    return None


class HIN:
    """
    Typed, undirected multigraph of users, items, brands and categories.

    Backed by a networkx MultiGraph so that repeated purchases of one item by
    one user stay distinct edges. Read-only once frozen; concurrent readers
    need no locking after that point.
    """

    def __init__(self):
        self.graph = nx.MultiGraph()
        self._types: List[NodeType] = []
        self._keys: List[str] = []
        self._index: Dict[Tuple[NodeType, str], int] = {}
        self._neighbor_cache: Dict[Tuple[int, NodeType], List[int]] = {}
        self._frozen = False

    # Construction

    def add_node(self, node_type: NodeType, key: str) -> int:
        """
        Add a node, or return the id of the existing node with this type and key.

        Args:
            node_type: Entity type of the node
            key: Opaque dataset key

        Returns:
            The dense NodeId of the node
        """
        existing = self._index.get((node_type, key))
        if existing is not None:
            return existing
        self._check_mutable()
        node_id = len(self._types)
        self._types.append(node_type)
        self._keys.append(key)
        self._index[(node_type, key)] = node_id
        self.graph.add_node(node_id, ntype=node_type)
        return node_id

    def add_edge(self, u: int, v: int, relation: Relation) -> bool:
        """
        Add an undirected typed edge.

        Non-Buy relations are deduplicated; Buy edges with distinct timestamps
        are kept as parallel edges.

        Returns:
            True if a new edge was stored, False if it already existed
        """
        self._check_mutable()
        self._require(u)
        self._require(v)
        if u == v:
            raise ContractViolation(f"self-loop on node {u} is not allowed")
        endpoints = frozenset({self._types[u], self._types[v]})
        if endpoints != RELATION_ENDPOINTS[relation.kind]:
            raise ContractViolation(
                f"{relation.kind.value} cannot connect {self._types[u].name} and {self._types[v].name}"
            )
        if self.graph.has_edge(u, v):
            for data in self.graph.get_edge_data(u, v).values():
                if data["relation"] == relation:
                    return False
        self.graph.add_edge(u, v, relation=relation)
        self._neighbor_cache.clear()
        return True

    def freeze(self) -> "HIN":
        """Mark the network immutable."""
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _check_mutable(self):
        if self._frozen:
            raise ContractViolation("HIN is immutable after ingestion")

    # Lookup

    def __len__(self) -> int:
        return len(self._types)

    def __contains__(self, node: int) -> bool:
        return isinstance(node, (int, np.integer)) and 0 <= node < len(self._types)

    def _require(self, node: int):
        if node not in self:
            raise UnknownNodeError(f"unknown NodeId: {node}")

    def node_type(self, node: int) -> NodeType:
        self._require(node)
        return self._types[node]

    def node_key(self, node: int) -> str:
        self._require(node)
        return self._keys[node]

    def node_id(self, node_type: NodeType, key: str) -> int:
        try:
            return self._index[(node_type, key)]
        except KeyError:
            raise UnknownNodeError(f"unknown {node_type.name} key: {key!r}") from None

    def nodes_of_type(self, node_type: NodeType) -> List[int]:
        return [node for node, t in enumerate(self._types) if t == node_type]

    def counts(self) -> Dict[NodeType, int]:
        result = {node_type: 0 for node_type in NodeType}
        for node_type in self._types:
            result[node_type] += 1
        return result

    def relation_counts(self) -> Dict[RelationType, int]:
        result = {kind: 0 for kind in RelationType}
        for _, _, data in self.graph.edges(data=True):
            result[data["relation"].kind] += 1
        return result

    def neighbors(self, node: int, type_filter: NodeType) -> List[int]:
        """
        All distinct neighbors of a node with the given type, ascending by NodeId.

        Raises:
            UnknownNodeError: if the node does not exist
        """
        self._require(node)
        cache_key = (int(node), type_filter)
        cached = self._neighbor_cache.get(cache_key)
        if cached is None:
            cached = sorted(int(n) for n in self.graph.adj[node] if self._types[n] == type_filter)
            self._neighbor_cache[cache_key] = cached
        return cached

    def buy_neighbors(self, node: int) -> List[int]:
        """Neighbors reached over Buy edges (users of an item, items of a user)."""
        node_type = self.node_type(node)
        if node_type == NodeType.USER:
            return self.neighbors(node, NodeType.ITEM)
        if node_type == NodeType.ITEM:
            return self.neighbors(node, NodeType.USER)
        return []

    def has_edge(self, u: int, v: int) -> bool:
        return self.graph.has_edge(u, v)

    def relations_between(self, u: int, v: int) -> Set[RelationType]:
        if not self.graph.has_edge(u, v):
            return set()
        return {data["relation"].kind for data in self.graph.get_edge_data(u, v).values()}

    def degree(self, node: int) -> int:
        """Number of distinct neighbors."""
        self._require(node)
        return len(self.graph.adj[node])

    def edges(self) -> Iterator[Tuple[int, int, Relation]]:
        """Edges with u < v in deterministic order."""
        rows = []
        for u, v, data in self.graph.edges(data=True):
            a, b = (u, v) if u < v else (v, u)
            relation = data["relation"]
            rows.append((a, b, relation.kind.value, -1 if relation.timestamp is None else relation.timestamp, relation))
        rows.sort(key=lambda row: row[:4])
        for a, b, _, _, relation in rows:
            yield a, b, relation

    def check_invariants(self) -> List[str]:
        """
        Verify type discipline, adjacency symmetry and the |T|>1, |R|>1 conditions.

        Returns:
            A list of human-readable problems; empty when the network is valid
        """
        problems = []
        for u, v, relation in self.edges():
            if frozenset({self._types[u], self._types[v]}) != RELATION_ENDPOINTS[relation.kind]:
                problems.append(f"edge {u}-{v} violates {relation.kind.value} endpoint types")
            if u == v:
                problems.append(f"self-loop on {u}")
            if u not in self.graph.adj[v]:
                problems.append(f"edge {u}-{v} is not symmetric")
        present_types = {t for t in self._types}
        present_relations = {kind for kind, n in self.relation_counts().items() if n > 0}
        if len(present_types) <= 1:
            problems.append("network has fewer than two node types")
        if len(present_relations) <= 1:
            problems.append("network has fewer than two relation types")
        return problems

    # Serialization

    def dump(self, path: str) -> None:
        """Write the line-based node table + edge table dump."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(HIN_FORMAT_HEADER + "\n")
            f.write(f"nodes {len(self._types)}\n")
            for node, (node_type, key) in enumerate(zip(self._types, self._keys)):
                f.write(f"{node}\t{node_type.value}\t{key}\n")
            edges = list(self.edges())
            f.write(f"edges {len(edges)}\n")
            for u, v, relation in edges:
                stamp = "-" if relation.timestamp is None else str(relation.timestamp)
                f.write(f"{u}\t{v}\t{relation.kind.value}\t{stamp}\n")
        logger.info(f"Wrote HIN with {len(self._types)} nodes and {len(edges)} edges to {path}")

    @classmethod
    def load(cls, path: str) -> "HIN":
        """Read a dump written by `dump`; the result is frozen."""
        hin = cls()
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if header != HIN_FORMAT_HEADER:
                raise IngestError(f"unsupported HIN dump header {header!r}", 1, path)
            line_number = 1

            def read_count(tag: str) -> int:
                nonlocal line_number
                line_number += 1
                parts = f.readline().rstrip("\n").split(" ")
                if len(parts) != 2 or parts[0] != tag:
                    raise IngestError(f"expected '{tag} <count>'", line_number, path)
                return int(parts[1])

            for expected in range(read_count("nodes")):
                line_number += 1
                node_str, letter, key = f.readline().rstrip("\n").split("\t", 2)
                if int(node_str) != expected:
                    raise IngestError("node ids must be dense and ordered", line_number, path)
                hin.add_node(NodeType.from_letter(letter), key)
            for _ in range(read_count("edges")):
                line_number += 1
                u, v, kind, stamp = f.readline().rstrip("\n").split("\t")
                relation = Relation(RelationType(kind), None if stamp == "-" else int(stamp))
                hin.add_edge(int(u), int(v), relation)
        return hin.freeze()


@dataclass
class UserSequence:
    """A user's chronologically ordered history split into bridge/train/test."""

    user: int
    bridge: List[int]
    train: List[int]
    test: List[int]
    timestamps: List[int] = field(default_factory=list)

    @property
    def history(self) -> List[int]:
        """Items the model consumes as context: bridge followed by train."""
        return self.bridge + self.train

    @property
    def items(self) -> List[int]:
        return self.bridge + self.train + self.test

    @property
    def last_consumed(self) -> int:
        return self.history[-1]

    def pairs(self) -> List[Tuple[int, int]]:
        """(user, first item) followed by every consecutive item pair of the history."""
        history = self.history
        if not history:
            return []
        result = [(self.user, history[0])]
        result.extend(zip(history[:-1], history[1:]))
        return result


@dataclass
class IngestConfig:
    history_length: int = 12
    bridge_size: int = 2
    train_size: int = 4
    keep_short: bool = False
    include_test_buys: bool = False

    @property
    def min_interactions(self) -> int:
        # keep_short retains users with at least one test item
        if self.keep_short:
            return self.bridge_size + self.train_size + 1
        return self.history_length


@dataclass
class IngestReport:
    users_seen: int = 0
    users_dropped: int = 0
    duplicates_removed: int = 0
    metadata_rows: int = 0


def _undecodable_line(path: str) -> Optional[int]:
    """1-based number of the first line that is not valid UTF-8."""
    with open(path, "rb") as f:
        for number, raw in enumerate(f, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return number
    return None


def _read_tsv(path: str, columns: List[str]) -> pd.DataFrame:
    """
    Read a header-less TSV as strings with a 1-based `line` column.

    Blank lines are dropped after line numbers are assigned; rows with more
    fields than `columns` raise an IngestError naming the line.
    """
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=columns + ["line"])
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise IngestError(f"malformed row ({e})", int(match.group(1)) if match else None, path) from e
    except UnicodeDecodeError as e:
        raise IngestError(f"invalid UTF-8 ({e.reason})", _undecodable_line(path), path) from e

    frame = frame.fillna("")
    frame["line"] = np.arange(1, len(frame) + 1)
    data_columns = [c for c in frame.columns if c != "line"]
    for extra in range(len(data_columns), len(columns)):
        frame[f"_pad{extra}"] = ""
        data_columns.append(f"_pad{extra}")

    blank = (frame[data_columns] == "").all(axis=1)
    frame = frame[~blank]
    if len(data_columns) > len(columns):
        extra_fields = (frame[data_columns[len(columns):]] != "").any(axis=1)
        if extra_fields.any():
            line = int(frame.loc[extra_fields, "line"].iloc[0])
            raise IngestError(f"expected {len(columns)} fields", line, path)

    frame = frame[data_columns[: len(columns)] + ["line"]]
    frame.columns = columns + ["line"]
    return frame.reset_index(drop=True)


def _first_bad_line(frame: pd.DataFrame, mask: pd.Series) -> int:
    return int(frame.loc[mask, "line"].iloc[0])


def _reject_key_separator(frame: pd.DataFrame, columns: List[str], path: str) -> None:
    # sequences.tsv and path_corpus.tsv comma-join node keys
    for column in columns:
        bad = frame[column].str.contains(KEY_SEPARATOR, regex=False)
        if bad.any():
            raise IngestError(f"{column} contains {KEY_SEPARATOR!r}", _first_bad_line(frame, bad), path)


def read_interactions(path: str) -> pd.DataFrame:
    """Parse the interactions file into (user_key, item_key, timestamp, line)."""
    frame = _read_tsv(path, ["user_key", "item_key", "timestamp"])
    missing = (frame["user_key"] == "") | (frame["item_key"] == "") | (frame["timestamp"] == "")
    if missing.any():
        raise IngestError("empty user, item or timestamp field", _first_bad_line(frame, missing), path)
    _reject_key_separator(frame, ["user_key", "item_key"], path)
    stamps = pd.to_numeric(frame["timestamp"], errors="coerce")
    bad = stamps.isna() | (stamps % 1 != 0)
    if bad.any():
        raise IngestError("timestamp is not an integer", _first_bad_line(frame, bad), path)
    frame["timestamp"] = stamps.astype(np.int64)
    return frame


def read_metadata(path: str) -> pd.DataFrame:
    """Parse the metadata file into (item_key, brand_key, category_key, line)."""
    frame = _read_tsv(path, ["item_key", "brand_key", "category_key"])
    missing = frame["item_key"] == ""
    if missing.any():
        raise IngestError("empty item key", _first_bad_line(frame, missing), path)
    _reject_key_separator(frame, ["item_key", "brand_key", "category_key"], path)
    return frame


def ingest(interactions_file: str, metadata_file: str,
           config: Optional[IngestConfig] = None) -> Tuple[HIN, List[UserSequence], IngestReport]:
    """
    Build the HIN and the per-user sequences from the two dataset files.

    Keeps each user's latest `history_length` interactions (ascending by
    timestamp, ties in file order) and splits them into bridge, train and
    test segments. Users with too short a history are dropped.

    Args:
        interactions_file: TSV of user_key, item_key, unix_timestamp
        metadata_file: TSV of item_key, brand_key, category_key (empty = missing)
        config: Split and filtering options

    Returns:
        The frozen HIN, the user sequences (ascending by user NodeId) and an ingestion report
    """
    config = config or IngestConfig()
    report = IngestReport()

    interactions = read_interactions(interactions_file)
    if interactions.empty:
        raise IngestError("interactions file holds no rows", None, interactions_file)
    before = len(interactions)
    interactions = interactions.drop_duplicates(subset=["user_key", "item_key", "timestamp"], keep="first")
    report.duplicates_removed = before - len(interactions)
    if report.duplicates_removed:
        logger.info(f"Removed {report.duplicates_removed} duplicate interactions")

    interactions = interactions.sort_values(["user_key", "timestamp", "line"], kind="mergesort")
    window = interactions.groupby("user_key", sort=False).tail(config.history_length)
    sizes = window.groupby("user_key").size()
    retained = sorted(sizes[sizes >= config.min_interactions].index)
    report.users_seen = len(sizes)
    report.users_dropped = len(sizes) - len(retained)
    if report.users_dropped:
        logger.info(f"Dropped {report.users_dropped} users with fewer than {config.min_interactions} interactions")
    if not retained:
        raise IngestError("no user has enough interactions for the bridge/train/test split", None, interactions_file)

    retained_set = set(retained)
    interactions = interactions[interactions["user_key"].isin(retained_set)]
    window = window[window["user_key"].isin(retained_set)].copy()
    window["position"] = window.groupby("user_key").cumcount()

    metadata = read_metadata(metadata_file)
    report.metadata_rows = len(metadata)
    item_keys = sorted(interactions["item_key"].unique())
    metadata = metadata[metadata["item_key"].isin(set(item_keys))]
    brand_keys = sorted(k for k in metadata["brand_key"].unique() if k)
    category_keys = sorted(k for k in metadata["category_key"].unique() if k)

    hin = HIN()
    for key in retained:
        hin.add_node(NodeType.USER, key)
    for key in item_keys:
        hin.add_node(NodeType.ITEM, key)
    for key in brand_keys:
        hin.add_node(NodeType.BRAND, key)
    for key in category_keys:
        hin.add_node(NodeType.CATEGORY, key)

    # Test purchases stay out of the graph unless explicitly requested
    history_size = config.bridge_size + config.train_size
    held_out = set()
    if not config.include_test_buys:
        held_out = set(window.index[window["position"] >= history_size])
    for row in interactions.itertuples():
        if row.Index in held_out:
            continue
        user = hin.node_id(NodeType.USER, row.user_key)
        item = hin.node_id(NodeType.ITEM, row.item_key)
        hin.add_edge(user, item, Relation(RelationType.BUY, int(row.timestamp)))

    for row in metadata.itertuples():
        item = hin.node_id(NodeType.ITEM, row.item_key)
        if row.brand_key:
            hin.add_edge(hin.node_id(NodeType.BRAND, row.brand_key), item, Relation(RelationType.IS_BRAND_OF))
        if row.category_key:
            hin.add_edge(hin.node_id(NodeType.CATEGORY, row.category_key), item, Relation(RelationType.IN_CATEGORY))

    sequences = []
    for user_key, group in window.groupby("user_key", sort=True):
        items = [hin.node_id(NodeType.ITEM, key) for key in group["item_key"]]
        sequences.append(UserSequence(
            user=hin.node_id(NodeType.USER, user_key),
            bridge=items[: config.bridge_size],
            train=items[config.bridge_size: history_size],
            test=items[history_size:],
            timestamps=[int(t) for t in group["timestamp"]],
        ))
    sequences.sort(key=lambda seq: seq.user)

    hin.freeze()
    for problem in hin.check_invariants():
        logger.warning(f"HIN invariant: {problem}")
    counts = hin.counts()
    logger.info(
        "Ingested HIN: "
        + ", ".join(f"{t.name.lower()}s={counts[t]}" for t in NodeType)
        + f"; {len(sequences)} user sequences"
    )
    return hin, sequences, report


def check_sequence(seq: UserSequence, config: Optional[IngestConfig] = None) -> List[str]:
    """Return split-integrity problems of one sequence (empty when valid)."""
    config = config or IngestConfig()
    problems = []
    if len(seq.bridge) != config.bridge_size:
        problems.append(f"user {seq.user}: bridge has {len(seq.bridge)} items")
    if len(seq.train) != config.train_size:
        problems.append(f"user {seq.user}: train has {len(seq.train)} items")
    if len(seq.items) > config.history_length:
        problems.append(f"user {seq.user}: sequence longer than {config.history_length}")
    if any(a > b for a, b in zip(seq.timestamps, seq.timestamps[1:])):
        problems.append(f"user {seq.user}: timestamps decrease")
    return problems


def dump_sequences(path: str, hin: HIN, sequences: Iterable[UserSequence]) -> None:
    """One line per user: user_key, bridge, train, test (comma-joined item keys), timestamps."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for seq in sequences:
            segments = [KEY_SEPARATOR.join(hin.node_key(i) for i in part)
                        for part in (seq.bridge, seq.train, seq.test)]
            stamps = KEY_SEPARATOR.join(str(t) for t in seq.timestamps)
            f.write("\t".join([hin.node_key(seq.user)] + segments + [stamps]) + "\n")


def load_sequences(path: str, hin: HIN) -> List[UserSequence]:
    sequences = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise IngestError("expected 5 fields", line_number, path)
            user_key, bridge, train, test, stamps = parts

            def items(text: str) -> List[int]:
                return [hin.node_id(NodeType.ITEM, key) for key in text.split(KEY_SEPARATOR) if key]

            sequences.append(UserSequence(
                user=hin.node_id(NodeType.USER, user_key),
                bridge=items(bridge),
                train=items(train),
                test=items(test),
                timestamps=[int(t) for t in stamps.split(",") if t],
            ))
    return sequences
