import numpy as np
import pytest

from models.hin import HIN, IngestConfig, NodeType, Relation, RelationType, UserSequence, ingest
from models.walk_embedder import NodeEmbeddings
from tests.synthetic import planted_frames, random_hin_frames


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write("\t".join(str(value) for value in row) + "\n")
    return str(path)


@pytest.fixture
def small_hin():
    """
    Two users, six items, two brands, two categories.

    u0 bought i0..i3, u1 bought i2..i5; i0-i2-i4 are brand b0, i1-i3-i5 brand b1;
    i0, i1, i4 are in c0, the others in c1.
    """
    hin = HIN()
    users = [hin.add_node(NodeType.USER, f"u{n}") for n in range(2)]
    items = [hin.add_node(NodeType.ITEM, f"i{n}") for n in range(6)]
    brands = [hin.add_node(NodeType.BRAND, f"b{n}") for n in range(2)]
    categories = [hin.add_node(NodeType.CATEGORY, f"c{n}") for n in range(2)]
    for step, item in enumerate(items[:4]):
        hin.add_edge(users[0], item, Relation(RelationType.BUY, 100 + step))
    for step, item in enumerate(items[2:]):
        hin.add_edge(users[1], item, Relation(RelationType.BUY, 200 + step))
    for index, item in enumerate(items):
        hin.add_edge(brands[index % 2], item, Relation(RelationType.IS_BRAND_OF))
        category = categories[0] if index in (0, 1, 4) else categories[1]
        hin.add_edge(category, item, Relation(RelationType.IN_CATEGORY))
    return hin.freeze()


@pytest.fixture
def small_sequences(small_hin):
    item = lambda key: small_hin.node_id(NodeType.ITEM, key)  # noqa: E731
    user = lambda key: small_hin.node_id(NodeType.USER, key)  # noqa: E731
    return [
        UserSequence(user("u0"), [item("i0"), item("i1")], [item("i2")], [item("i3")], [100, 101, 102, 103]),
        UserSequence(user("u1"), [item("i2"), item("i3")], [item("i4")], [item("i5")], [200, 201, 202, 203]),
    ]


def random_embeddings(nodes, dim, seed=0) -> NodeEmbeddings:
    rng = np.random.default_rng(seed)
    return NodeEmbeddings({int(node): rng.normal(size=dim) for node in nodes}, dim)


@pytest.fixture
def small_vectors(small_hin):
    users_items = small_hin.nodes_of_type(NodeType.USER) + small_hin.nodes_of_type(NodeType.ITEM)
    return random_embeddings(users_items, 8, seed=3)


@pytest.fixture
def planted_files(tmp_path):
    """Small planted dataset: 40 users, 100 items, 10 brands, 5 categories, 8 purchases each."""
    interactions, metadata = planted_frames(n_users=40, n_items=100, n_brands=10, n_categories=5, seed=1)
    interactions_path = tmp_path / "interactions.tsv"
    metadata_path = tmp_path / "metadata.tsv"
    interactions.to_csv(interactions_path, sep="\t", header=False, index=False)
    metadata.to_csv(metadata_path, sep="\t", header=False, index=False)
    return str(interactions_path), str(metadata_path)


@pytest.fixture
def random_network(tmp_path):
    """Unstructured ~500-node HIN built through ingestion (short histories kept)."""
    interactions, metadata = random_hin_frames()
    interactions_path = tmp_path / "random_interactions.tsv"
    metadata_path = tmp_path / "random_metadata.tsv"
    interactions.to_csv(interactions_path, sep="\t", header=False, index=False)
    metadata.to_csv(metadata_path, sep="\t", header=False, index=False)
    config = IngestConfig(history_length=4, bridge_size=1, train_size=2, include_test_buys=True)
    hin, sequences, _ = ingest(str(interactions_path), str(metadata_path), config)
    return hin, sequences
