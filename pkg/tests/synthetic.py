"""
Synthetic datasets with planted brand structure.

Every user buys half of their history from one brand and then switches to
a second brand. With the default split the graph links each user to more
items of the first brand than of the second, while every test purchase
shares its brand with the last consumed item. User-level evidence points
the wrong way; only the item-to-item brand link predicts the next buy.
"""

import os
from typing import Optional, Tuple

import numpy as np
import pandas as pd


def planted_frames(n_users: int = 200, n_items: int = 500, n_brands: int = 20, n_categories: int = 10,
                   history_length: int = 8, switch_at: Optional[int] = None,
                   seed: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Interactions (user_key, item_key, timestamp) and metadata (item_key, brand_key, category_key)."""
    if switch_at is None:
        switch_at = history_length // 2
    rng = np.random.default_rng(seed)
    categories = rng.integers(n_categories, size=n_items)
    by_brand = {b: [i for i in range(n_items) if i % n_brands == b] for b in range(n_brands)}

    rows = []
    for user in range(n_users):
        first, second = rng.choice(n_brands, size=2, replace=False)
        picks = list(rng.choice(by_brand[first], size=switch_at, replace=False))
        picks += list(rng.choice(by_brand[second], size=history_length - switch_at, replace=False))
        for step, item in enumerate(picks):
            rows.append((f"u{user:04d}", f"i{item:04d}", 1_500_000_000 + 86_400 * step + user))
    interactions = pd.DataFrame(rows, columns=["user_key", "item_key", "timestamp"])

    metadata = pd.DataFrame({
        "item_key": [f"i{i:04d}" for i in range(n_items)],
        "brand_key": [f"b{i % n_brands:02d}" for i in range(n_items)],
        "category_key": [f"c{c:02d}" for c in categories],
    })
    return interactions, metadata


def write_planted_dataset(directory: str, **kwargs) -> Tuple[str, str]:
    """Write both TSV files (no header) and return their paths."""
    interactions, metadata = planted_frames(**kwargs)
    interactions_path = os.path.join(directory, "interactions.tsv")
    metadata_path = os.path.join(directory, "metadata.tsv")
    interactions.to_csv(interactions_path, sep="\t", header=False, index=False)
    metadata.to_csv(metadata_path, sep="\t", header=False, index=False)
    return interactions_path, metadata_path


def random_hin_frames(n_users: int = 100, n_items: int = 300, n_brands: int = 60, n_categories: int = 40,
                      buys_per_user: int = 4, seed: int = 0) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Unstructured interactions over a ~500-node network, every user with exactly buys_per_user items."""
    rng = np.random.default_rng(seed)
    rows = []
    for user in range(n_users):
        for step, item in enumerate(rng.choice(n_items, size=buys_per_user, replace=False)):
            rows.append((f"u{user:03d}", f"i{item:03d}", 1_000 + step))
    interactions = pd.DataFrame(rows, columns=["user_key", "item_key", "timestamp"])
    metadata = pd.DataFrame({
        "item_key": [f"i{i:03d}" for i in range(n_items)],
        "brand_key": [f"b{b:02d}" for b in rng.integers(n_brands, size=n_items)],
        "category_key": [f"c{c:02d}" for c in rng.integers(n_categories, size=n_items)],
    })
    return interactions, metadata
