"""
Ranking evaluation under the sampled-negative protocol.

Every test item of a user is one test instance: the item is mixed with N
items the user never interacted with, all N+1 candidates are scored, and the
1-based rank of the positive feeds HR@K and NDCG@K. Ties are broken
pessimistically (the positive goes last among equal scores).
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np

from .hin import HIN, NodeType, UserSequence
from .path_encoder import PathStore
from .tmer_model import TMERModel
from .walk_embedder import NodeEmbeddings

# Get logger for this module
logger = logging.getLogger(__name__)

KS = (1, 5, 10, 20)


def hit_ratio(ranks: Sequence[int], k: int) -> float:
    """Fraction of ranks within the top k."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        return 0.0
    return float(np.mean(ranks <= k))


def ndcg(ranks: Sequence[int], k: int) -> float:
    """Mean of 1/log2(rank + 1) over ranks within the top k (0 otherwise); ideal DCG is 1."""
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        return 0.0
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def rank_of_positive(positive_score: float, negative_scores: Sequence[float]) -> int:
    """1-based rank of the positive; every negative scoring at least as high ranks ahead."""
    return 1 + int(np.sum(np.asarray(negative_scores) >= positive_score))


def sample_negatives(rng: np.random.Generator, catalog: np.ndarray, excluded: Iterable[int], n: int) -> List[int]:
    """
    Draw n distinct items uniformly from the catalog minus the excluded items.

    Returns fewer than n items (possibly none, with a warning) when the
    eligible pool is too small.
    """
    eligible = catalog[~np.isin(catalog, np.fromiter(excluded, dtype=np.int64))]
    if eligible.size == 0:
        logger.warning("User has interacted with every catalog item; no negative drawn")
        return []
    if eligible.size < n:
        logger.warning(f"Only {eligible.size} eligible negatives for {n} requested")
        return [int(i) for i in eligible]
    return [int(i) for i in rng.choice(eligible, size=n, replace=False)]


def interacted_items(hin: HIN, seq: UserSequence) -> FrozenSet[int]:
    """Items of the user's sequence plus every item reached over the user's Buy edges."""
    return frozenset(seq.items) | frozenset(hin.buy_neighbors(seq.user))


class SequenceScorer:
    """Scores next-item candidates for a user history with a trained model."""

    def __init__(self, model: TMERModel, store: PathStore, node_vectors: NodeEmbeddings):
        self.model = model
        self.store = store
        self.node_vectors = node_vectors

    def _paths(self, start: int, end: int, user_item: bool) -> np.ndarray:
        used = self.model.uses_user_item_paths if user_item else self.model.uses_item_item_paths
        if not used:
            return np.zeros((0, self.model.dim))
        return self.store.encoded(start, end)[1]

    def history_state(self, user: int, history: Sequence[int]) -> np.ndarray:
        """h_prev after consuming the history (state of its last item)."""
        last = history[-1]
        if len(history) == 1:
            return self.model.first_state(self.node_vectors[last], self._paths(user, last, True))
        return self.model.item_state(self.node_vectors[last], self._paths(history[-2], last, False))

    def scores(self, user: int, history: Sequence[int], items: Sequence[int]) -> np.ndarray:
        h_prev = self.history_state(user, history)
        user_vec = self.node_vectors[user]
        anchor = history[-1]
        result = np.empty(len(items))
        for index, item in enumerate(items):
            result[index], _ = self.model.score_candidate(
                user_vec, h_prev, self.node_vectors[item], self._paths(anchor, item, False)
            )
        return result


class PopularityRanker:
    """Baseline: an item scores the number of distinct users who bought it in the HIN."""

    def __init__(self, hin: HIN):
        self.hin = hin

    def scores(self, user: int, history: Sequence[int], items: Sequence[int]) -> np.ndarray:
        return np.array([len(self.hin.buy_neighbors(item)) for item in items], dtype=np.float64)


def rank_candidates(scorer, user: int, history: Sequence[int], positive: int, negatives: Sequence[int]) -> int:
    """
    Rank of the positive among itself and the negatives.

    Args:
        scorer: SequenceScorer (or any object with the same `scores` method)
        user: User NodeId
        history: Items consumed before the candidate (bridge + train)
        positive: Ground-truth item
        negatives: Sampled negative items

    Returns:
        1-based rank after a descending sort, positive last among ties
    """
    scores = scorer.scores(user, history, [positive] + list(negatives))
    return rank_of_positive(scores[0], scores[1:])


@dataclass
class TestInstance:
    user: int
    item: int
    position: int
    history: List[int]
    excluded: FrozenSet[int]


@dataclass
class RankRecord:
    user: int
    item: int
    position: int
    rank: int
    baseline_rank: Optional[int] = None


def metric_table(ranks: Sequence[int], ks: Sequence[int] = KS) -> Dict[str, Dict[str, float]]:
    return {str(k): {"HR": hit_ratio(ranks, k), "NDCG": ndcg(ranks, k)} for k in ks}


@dataclass
class EvaluationReport:
    dataset: str
    seed: int
    n_negatives: int
    labels: Dict[str, str] = field(default_factory=dict)
    records: List[RankRecord] = field(default_factory=list)
    ks: Sequence[int] = KS

    def ranks(self, first_only: bool = False, baseline: bool = False) -> List[int]:
        chosen = [r for r in self.records if not first_only or r.position == 0]
        return [r.baseline_rank if baseline else r.rank for r in chosen]

    def to_dict(self) -> Dict:
        result = {
            "dataset": self.dataset,
            "seed": self.seed,
            "n_negatives": self.n_negatives,
            "instances": len(self.records),
            "metrics": {
                "all": metric_table(self.ranks(), self.ks),
                "first": metric_table(self.ranks(first_only=True), self.ks),
            },
        }
        result.update(self.labels)
        if self.records and all(r.baseline_rank is not None for r in self.records):
            result["baseline"] = {
                "name": "popularity",
                "all": metric_table(self.ranks(baseline=True), self.ks),
                "first": metric_table(self.ranks(first_only=True, baseline=True), self.ks),
            }
        return result


class Evaluator:
    """
    Runs the N-negative ranking protocol.

    The negatives of a test instance come from an RNG derived from
    (seed, user, position), so they do not depend on evaluation order or on
    the number of workers, and the baseline sees exactly the same candidates.
    """

    def __init__(self, hin: HIN, n_negatives: int = 500, seed: int = 0, ks: Sequence[int] = KS,
                 workers: int = 1):
        self.hin = hin
        self.n_negatives = n_negatives
        self.seed = seed
        self.ks = tuple(ks)
        self.workers = max(1, workers)
        self.catalog = np.asarray(hin.nodes_of_type(NodeType.ITEM), dtype=np.int64)

    def test_instances(self, sequences: Sequence[UserSequence]) -> List[TestInstance]:
        instances = []
        for seq in sequences:
            excluded = interacted_items(self.hin, seq)
            for position, item in enumerate(seq.test):
                instances.append(TestInstance(seq.user, item, position, seq.history, excluded))
        return instances

    def validation_instances(self, sequences: Sequence[UserSequence]) -> List[TestInstance]:
        """Last train item held out, predicted from bridge + the other train items."""
        instances = []
        for seq in sequences:
            history = seq.history
            if len(history) < 2:
                continue
            instances.append(TestInstance(seq.user, history[-1], -1, history[:-1], interacted_items(self.hin, seq)))
        return instances

    def negatives_for(self, instance: TestInstance) -> List[int]:
        rng = np.random.default_rng([self.seed & 0xFFFFFFFF, instance.user, instance.position + 1])
        return sample_negatives(rng, self.catalog, instance.excluded, self.n_negatives)

    def _rank(self, instance: TestInstance, scorer, baseline) -> RankRecord:
        negatives = self.negatives_for(instance)
        rank = rank_candidates(scorer, instance.user, instance.history, instance.item, negatives)
        baseline_rank = None
        if baseline is not None:
            baseline_rank = rank_candidates(baseline, instance.user, instance.history, instance.item, negatives)
        return RankRecord(instance.user, instance.item, instance.position, rank, baseline_rank)

    def rank_all(self, instances: Sequence[TestInstance], scorer, baseline=None) -> List[RankRecord]:
        if self.workers == 1:
            records = []
            for index, instance in enumerate(instances, start=1):
                records.append(self._rank(instance, scorer, baseline))
                if index % 1000 == 0:
                    logger.info(f"Ranked {index}/{len(instances)} test instances")
            return records
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            return list(executor.map(lambda inst: self._rank(inst, scorer, baseline), instances))

    def evaluate(self, sequences: Sequence[UserSequence], scorer, dataset: str = "",
                 labels: Optional[Dict[str, str]] = None, with_baseline: bool = True) -> EvaluationReport:
        """
        Rank every test instance and collect the report.

        Args:
            sequences: User sequences with test segments
            scorer: SequenceScorer of the trained model
            dataset: Dataset label written to the report
            labels: Extra report fields (ablation mode, loss kind, ...)
            with_baseline: Also rank the same candidates by popularity

        Returns:
            EvaluationReport with one RankRecord per test instance
        """
        instances = self.test_instances(sequences)
        logger.info(f"Evaluating {len(instances)} test instances with {self.n_negatives} negatives each")
        baseline = PopularityRanker(self.hin) if with_baseline else None
        report = EvaluationReport(dataset, self.seed, self.n_negatives, dict(labels or {}),
                                  self.rank_all(instances, scorer, baseline), self.ks)
        for k in self.ks:
            ranks = report.ranks()
            logger.info(f"HR@{k}={hit_ratio(ranks, k):.4f} NDCG@{k}={ndcg(ranks, k):.4f}")
        return report

    def validation_hit_ratio(self, sequences: Sequence[UserSequence], scorer, k: int = 10) -> float:
        records = self.rank_all(self.validation_instances(sequences), scorer)
        return hit_ratio([r.rank for r in records], k)


def write_report(report: EvaluationReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def write_rank_dump(report: EvaluationReport, path: str, hin: HIN) -> None:
    """`user_key<TAB>item_key<TAB>position<TAB>rank` per test instance."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in report.records:
            f.write(f"{hin.node_key(record.user)}\t{hin.node_key(record.item)}\t{record.position}\t{record.rank}\n")
