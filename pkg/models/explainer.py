"""
Attention-weighted path explanations.
Handles top-k recommendation for a user and attaches to every recommended
item the item-item paths that led to it, weighted by the attention they
received in the scoring forward pass.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .evaluator import Evaluator, SequenceScorer
from .hin import HIN, UserSequence
from .path_encoder import PathStore
from .tmer_model import TMERModel

# Get logger for this module
logger = logging.getLogger(__name__)

NO_EVIDENCE = "no-evidence"
ABLATED = "ablated"


@dataclass
class ExplainedPath:
    schema: str
    node_keys: List[str]
    weight: float


@dataclass
class ExplanationRecord:
    user_key: str
    from_item_key: str
    to_item_key: str
    paths: List[ExplainedPath] = field(default_factory=list)
    score: Optional[float] = None
    marker: Optional[str] = None

    @property
    def total_weight(self) -> float:
        return float(sum(p.weight for p in self.paths))


def explain_pair(user: int, from_item: int, to_item: int, model: TMERModel, store: PathStore,
                 hin: HIN) -> ExplanationRecord:
    """
    Explain the transition from_item -> to_item for a user.

    The pair's encoded instances go through the same self-attention call the
    scorer uses, so the reported weights are the ones behind the score.

    Args:
        user: User NodeId
        from_item: Last consumed item
        to_item: Recommended item
        model: Trained model (ablation mode included)
        store: PathStore serving the pair's encoded instances
        hin: HIN for key resolution

    Returns:
        ExplanationRecord with paths sorted by weight, descending; the
        no-evidence marker when the pair has no path, the ablated marker when
        item-item attention is switched off
    """
    record = ExplanationRecord(hin.node_key(user), hin.node_key(from_item), hin.node_key(to_item))
    if not model.uses_item_item_paths:
        record.marker = ABLATED
        return record

    path_set, matrix = store.encoded(from_item, to_item)
    if not path_set.instances:
        record.marker = NO_EVIDENCE
        return record

    weights = model.pair_context(matrix).weights
    # stable sort keeps sampler order among equal weights
    order = np.argsort(-weights, kind="stable")
    for index in order:
        instance = path_set.instances[index]
        record.paths.append(ExplainedPath(
            str(instance.schema), [hin.node_key(node) for node in instance.nodes], float(weights[index])
        ))
    return record


def explain_topk(user: int, recommendations: Sequence[int], model: TMERModel, store: PathStore,
                 hin: HIN, last_item: int) -> List[ExplanationRecord]:
    """One record per recommendation, explaining (last consumed item -> recommendation)."""
    return [explain_pair(user, last_item, item, model, store, hin) for item in recommendations]


def recommend_topk(scorer: SequenceScorer, user: int, history: Sequence[int], candidates: Sequence[int],
                   k: int) -> List[Tuple[int, float]]:
    """Best k candidates by score, ties broken by ascending item id."""
    if not candidates:
        return []
    scores = scorer.scores(user, history, list(candidates))
    ranked = sorted(zip(candidates, scores), key=lambda pair: (-pair[1], pair[0]))
    return [(int(item), float(value)) for item, value in ranked[:k]]


def format_record(record: ExplanationRecord) -> str:
    """One JSON line; weights carry 4 decimal places."""
    payload = {
        "user": record.user_key,
        "from_item": record.from_item_key,
        "to_item": record.to_item_key,
        "paths": [
            {"schema": p.schema, "nodes": p.node_keys, "weight": float(f"{p.weight:.4f}")}
            for p in record.paths
        ],
    }
    if record.score is not None:
        payload["score"] = float(f"{record.score:.6f}")
    if record.marker:
        payload["marker"] = record.marker
    return json.dumps(payload, sort_keys=True)


def explain_users(sequences: Sequence[UserSequence], scorer: SequenceScorer, evaluator: Evaluator,
                  hin: HIN, top_k: int = 10, n_users: int = 10) -> List[ExplanationRecord]:
    """
    Recommend and explain for the first n_users users that have a test item.

    The candidate pool of a user is the first test item plus the negatives
    the evaluator draws for it, so explanations cover exactly what was ranked.
    """
    records = []
    explained = 0
    for seq in sequences:
        if explained >= n_users:
            break
        if not seq.test:
            continue
        instance = evaluator.test_instances([seq])[0]
        pool = [instance.item] + evaluator.negatives_for(instance)
        recommendations = recommend_topk(scorer, seq.user, seq.history, pool, top_k)
        for (item, value), record in zip(recommendations,
                                         explain_topk(seq.user, [item for item, _ in recommendations],
                                                      scorer.model, scorer.store, hin, seq.history[-1])):
            record.score = value
            records.append(record)
        explained += 1
    logger.info(f"Explained {len(records)} recommendations for {explained} users")
    return records


def write_explanations(records: Sequence[ExplanationRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(format_record(record) + "\n")
