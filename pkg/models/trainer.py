"""
Minibatch training of the path-attention model.
Handles training-example assembly, negative candidates, Adam updates and
early stopping on validation HR@10.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation
from .evaluator import Evaluator, SequenceScorer, interacted_items, sample_negatives
from .hin import HIN, NodeType, UserSequence
from .path_encoder import PathStore
from .tmer_model import (
    AblationMode,
    LossKind,
    ModelParams,
    TMERModel,
    TrainingExample,
    loss_and_grads,
)
from .walk_embedder import NodeEmbeddings

# Get logger for this module
logger = logging.getLogger(__name__)

DATASET_LEARNING_RATES = {
    "musical_instruments": 5e-6,
    "automotive": 5e-5,
    "toys_and_games": 1e-4,
}
DEFAULT_LEARNING_RATE = 1e-4


def learning_rate_for(dataset: Optional[str], lr: Optional[float] = None) -> float:
    """Explicit rate if given, else the dataset default, else DEFAULT_LEARNING_RATE."""
    if lr is not None:
        return lr
    return DATASET_LEARNING_RATES.get(dataset or "", DEFAULT_LEARNING_RATE)


class AdamOptimizer:
    """Adaptive moment estimation over every tensor of a ModelParams, updated in place."""

    def __init__(self, params: ModelParams, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ContractViolation(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = params.zeros_like()
        self._v = params.zeros_like()

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for (_, p), (_, g), (_, m), (_, v) in zip(params.named_tensors(), grads.named_tensors(),
                                                  self._m.named_tensors(), self._v.named_tensors()):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


class StoreCandidates:
    """Uniform negatives from the item catalog, with vectors and paths served by a PathStore."""

    def __init__(self, hin: HIN, store: PathStore, node_vectors: NodeEmbeddings,
                 mode: AblationMode = AblationMode.FULL):
        self.hin = hin
        self.store = store
        self.node_vectors = node_vectors
        self.mode = AblationMode(mode)
        self.catalog = np.asarray(hin.nodes_of_type(NodeType.ITEM), dtype=np.int64)

    def draw(self, rng: np.random.Generator, excluded: FrozenSet[int], n: int) -> List[int]:
        return sample_negatives(rng, self.catalog, excluded, n)

    def paths(self, anchor: int, item: int) -> Optional[np.ndarray]:
        """Encoded paths anchor -> item, or None when the ablation ignores them."""
        if self.hin.node_type(anchor) == NodeType.USER:
            if self.mode == AblationMode.RUI:
                return None
        elif self.mode == AblationMode.RII:
            return None
        return self.store.encoded(anchor, item)[1]

    def candidate(self, anchor: int, item: int) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        return self.node_vectors[item], self.paths(anchor, item)


def build_examples(sequences: Sequence[UserSequence], candidates: StoreCandidates,
                   hold_out_last: bool = True) -> List[TrainingExample]:
    """
    One example per train item of every sequence.

    Bridge items are context only. With hold_out_last the last train item is
    left for validation.

    Args:
        sequences: User sequences from ingestion
        candidates: Source of vectors and encoded paths
        hold_out_last: Skip each user's last train item

    Returns:
        Training examples in sequence order
    """
    vectors = candidates.node_vectors
    examples = []
    for seq in sequences:
        history = seq.history
        excluded = interacted_items(candidates.hin, seq)
        start = len(seq.bridge)
        stop = len(history) - 1 if hold_out_last else len(history)
        for position in range(start, stop):
            target = history[position]
            if position == 0:
                examples.append(TrainingExample(
                    seq.user, 0, target, vectors[seq.user], vectors[target],
                    candidates.paths(seq.user, target), excluded=excluded,
                ))
                continue
            prev_item = history[position - 1]
            prev_anchor = seq.user if position == 1 else history[position - 2]
            examples.append(TrainingExample(
                seq.user, position, target, vectors[seq.user], vectors[target],
                candidates.paths(prev_item, target),
                prev_item=prev_item, prev_vec=vectors[prev_item],
                prev_paths=candidates.paths(prev_anchor, prev_item), excluded=excluded,
            ))
    return examples


@dataclass
class TrainConfig:
    lr: float = DEFAULT_LEARNING_RATE
    epochs: int = 30
    batch_size: int = 32
    n_neg: int = 4
    patience: int = 5
    val_negatives: int = 100
    seed: int = 0
    mode: AblationMode = AblationMode.FULL
    loss_kind: LossKind = LossKind.STANDARD
    validate: bool = True

    def __post_init__(self):
        self.mode = AblationMode(self.mode)
        self.loss_kind = LossKind(self.loss_kind)
        for name in ("epochs", "batch_size", "patience", "val_negatives"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_neg < 0:
            raise ContractViolation(f"n_neg must be non-negative, got {self.n_neg}")


@dataclass
class TrainResult:
    params: ModelParams
    best_epoch: int
    losses: List[float] = field(default_factory=list)
    validation_hr: List[float] = field(default_factory=list)

    def summary(self, cfg: TrainConfig) -> Dict:
        return {
            "ablation": cfg.mode.value,
            "loss": cfg.loss_kind.value,
            "best_epoch": self.best_epoch,
            "epochs_run": len(self.losses),
            "loss_history": self.losses,
            "validation_hr10": self.validation_hr,
            "lr": cfg.lr,
            "n_neg": cfg.n_neg,
            "batch_size": cfg.batch_size,
            "dim": self.params.dim,
            "heads": self.params.heads,
        }


class Trainer:
    """
    Runs the epoch loop.

    Examples are shuffled every epoch by one RNG seeded from the training
    seed; the same RNG draws the negatives, so a run is fully determined by
    the seed. After each epoch the held-out last train items are ranked
    against val_negatives negatives; the parameters with the best HR@10 are
    kept and training stops after `patience` epochs without improvement.
    """

    def __init__(self, hin: HIN, sequences: Sequence[UserSequence], store: PathStore,
                 node_vectors: NodeEmbeddings, cfg: TrainConfig):
        self.hin = hin
        self.sequences = list(sequences)
        self.store = store
        self.node_vectors = node_vectors
        self.cfg = cfg
        self.candidates = StoreCandidates(hin, store, node_vectors, cfg.mode)

    def _validation_hr(self, params: ModelParams, evaluator: Evaluator) -> float:
        scorer = SequenceScorer(TMERModel(params, self.cfg.mode), self.store, self.node_vectors)
        return evaluator.validation_hit_ratio(self.sequences, scorer, k=10)

    def fit(self, params: ModelParams) -> TrainResult:
        """
        Train params in place and return the best copy.

        Args:
            params: Initial parameters (dimension must match the node vectors)

        Returns:
            TrainResult with the best parameters and per-epoch history
        """
        cfg = self.cfg
        if params.dim != self.node_vectors.dim:
            raise ContractViolation(f"model dimension {params.dim} != node vector dimension {self.node_vectors.dim}")
        examples = build_examples(self.sequences, self.candidates, hold_out_last=cfg.validate)
        if not examples:
            raise ContractViolation("no training example: every sequence lacks train items")
        logger.info(f"Training on {len(examples)} examples, mode={cfg.mode.value}, loss={cfg.loss_kind.value}, "
                    f"lr={cfg.lr}, batch={cfg.batch_size}, n_neg={cfg.n_neg}")

        rng = np.random.default_rng(cfg.seed)
        optimizer = AdamOptimizer(params, cfg.lr)
        evaluator = Evaluator(self.hin, n_negatives=cfg.val_negatives, seed=cfg.seed)
        result = TrainResult(params.copy(), 0)
        best_hr = -1.0
        stale = 0

        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(examples))
            epoch_loss = 0.0
            for start in range(0, len(examples), cfg.batch_size):
                batch = [examples[i] for i in order[start: start + cfg.batch_size]]
                loss, grads = loss_and_grads(batch, params, cfg.n_neg, rng, self.candidates,
                                             cfg.mode, cfg.loss_kind)
                optimizer.step(params, grads)
                epoch_loss += loss * len(batch)
            epoch_loss /= len(examples)
            result.losses.append(epoch_loss)

            if not cfg.validate:
                logger.info(f"Epoch {epoch}: loss={epoch_loss:.6f}")
                result.params, result.best_epoch = params.copy(), epoch
                continue

            hr = self._validation_hr(params, evaluator)
            result.validation_hr.append(hr)
            logger.info(f"Epoch {epoch}: loss={epoch_loss:.6f} validation HR@10={hr:.4f}")
            if hr > best_hr:
                best_hr, stale = hr, 0
                result.params, result.best_epoch = params.copy(), epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    logger.info(f"Early stop after epoch {epoch}; best epoch {result.best_epoch}")
                    break

        if self.store.dropped_instances:
            logger.warning(f"{self.store.dropped_instances} path instances dropped for missing path tokens")
        return result
