"""
Path-attention scoring model.

Multi-head self-attention pools the encoded paths of a pair into one
context vector; two gates fold the previous item state and the current item
together with that context; an MLP tower rates the concatenation. All
gradients are derived by hand and accumulated in reverse mode.

Vectors are 1-d float64 arrays of length d. Weight matrices act on column
vectors (W @ h) except the attention projections, which act on path rows
(X @ W_q).
"""

import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, List, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np

from .errors import CheckpointFormatError, ContractViolation, NumericContractError

# Get logger for this module
logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TMERCKPT"
CHECKPOINT_VERSION = 1


class AblationMode(str, Enum):
    FULL = "full"
    RUI = "RUI"  # no user-item path attention
    RII = "RII"  # no item-item path attention


class LossKind(str, Enum):
    STANDARD = "standard"
    NEGATIVE_ONLY = "paper-literal"  # negative-sample term only

    @classmethod
    def _missing_(cls, value):
        if value == "negative-only":
            return cls.NEGATIVE_ONLY
        return None


def _glorot(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AttentionParams:
    """Per-head projections wq/wk/wv of shape (m, d, d/m) and the output map wo (d, d)."""

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def heads(self) -> int:
        return self.wq.shape[0]

    @property
    def dim(self) -> int:
        return self.wq.shape[1]

    @property
    def head_dim(self) -> int:
        return self.wq.shape[2]

    def named_tensors(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        return [(f"{prefix}.wq", self.wq), (f"{prefix}.wk", self.wk),
                (f"{prefix}.wv", self.wv), (f"{prefix}.wo", self.wo)]

    @classmethod
    def zeros(cls, dim: int, heads: int) -> "AttentionParams":
        if heads < 1 or dim % heads:
            raise ContractViolation(f"dimension {dim} is not divisible by {heads} heads")
        head_dim = dim // heads
        return cls(*(np.zeros((heads, dim, head_dim)) for _ in range(3)), np.zeros((dim, dim)))

    @classmethod
    def initialize(cls, dim: int, heads: int, rng: np.random.Generator) -> "AttentionParams":
        params = cls.zeros(dim, heads)
        for tensor in (params.wq, params.wk, params.wv):
            tensor[...] = _glorot(rng, tensor.shape, dim, params.head_dim)
        params.wo[...] = _glorot(rng, params.wo.shape, dim, dim)
        return params


@dataclass
class GateParams:
    """Weights of the previous-item gate, current-item gate and first-item gate."""

    w_prev: np.ndarray
    w_path1: np.ndarray
    w_cur: np.ndarray
    w_path2: np.ndarray
    w_user_path: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b_user: np.ndarray

    FIELDS = ("w_prev", "w_path1", "w_cur", "w_path2", "w_user_path", "b1", "b2", "b_user")

    def named_tensors(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        return [(f"{prefix}.{name}", getattr(self, name)) for name in self.FIELDS]

    @classmethod
    def zeros(cls, dim: int) -> "GateParams":
        return cls(*(np.zeros((dim, dim)) for _ in range(5)), *(np.zeros(dim) for _ in range(3)))

    @classmethod
    def initialize(cls, dim: int, rng: np.random.Generator) -> "GateParams":
        params = cls.zeros(dim)
        for name in cls.FIELDS[:5]:
            getattr(params, name)[...] = _glorot(rng, (dim, dim), dim, dim)
        return params


@dataclass
class MlpParams:
    """Tower of dense layers; weights[i] has shape (sizes[i+1], sizes[i])."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @staticmethod
    def tower_sizes(dim: int) -> List[int]:
        # each hidden layer halves the previous one
        return [3 * dim, (3 * dim) // 2, (3 * dim) // 4, 1]

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def named_tensors(self, prefix: str) -> List[Tuple[str, np.ndarray]]:
        result = []
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            result.append((f"{prefix}.w{index}", weight))
            result.append((f"{prefix}.b{index}", bias))
        return result

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MlpParams":
        return cls([np.zeros((out, inp)) for inp, out in zip(sizes, sizes[1:])],
                   [np.zeros(out) for out in sizes[1:]])

    @classmethod
    def initialize(cls, sizes: Sequence[int], rng: np.random.Generator) -> "MlpParams":
        params = cls.zeros(sizes)
        for weight in params.weights:
            out, inp = weight.shape
            weight[...] = _glorot(rng, weight.shape, inp, out)
        return params


@dataclass
class ModelParams:
    user_item_attention: AttentionParams
    item_item_attention: AttentionParams
    gates: GateParams
    mlp: MlpParams

    @property
    def dim(self) -> int:
        return self.user_item_attention.dim

    @property
    def heads(self) -> int:
        return self.user_item_attention.heads

    def named_tensors(self) -> List[Tuple[str, np.ndarray]]:
        """Every trainable tensor in declared (checkpoint) order."""
        return (self.user_item_attention.named_tensors("user_item_attention")
                + self.item_item_attention.named_tensors("item_item_attention")
                + self.gates.named_tensors("gates")
                + self.mlp.named_tensors("mlp"))

    @classmethod
    def zeros(cls, dim: int, heads: int) -> "ModelParams":
        return cls(AttentionParams.zeros(dim, heads), AttentionParams.zeros(dim, heads),
                   GateParams.zeros(dim), MlpParams.zeros(MlpParams.tower_sizes(dim)))

    @classmethod
    def initialize(cls, dim: int, heads: int, seed: int = 0) -> "ModelParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        return cls(AttentionParams.initialize(dim, heads, rng), AttentionParams.initialize(dim, heads, rng),
                   GateParams.initialize(dim, rng), MlpParams.initialize(MlpParams.tower_sizes(dim), rng))

    def zeros_like(self) -> "ModelParams":
        result = ModelParams.zeros(self.dim, self.heads)
        if result.mlp.layer_sizes != self.mlp.layer_sizes:
            result.mlp = MlpParams.zeros(self.mlp.layer_sizes)
        return result

    def copy(self) -> "ModelParams":
        result = self.zeros_like()
        for (_, target), (_, source) in zip(result.named_tensors(), self.named_tensors()):
            target[...] = source
        return result


# Forward building blocks

class AttentionOutput(NamedTuple):
    context: np.ndarray
    weights: np.ndarray


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _require_finite(*arrays: np.ndarray):
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise NumericContractError("non-finite values reached the model")


def _require_dim(vector: np.ndarray, dim: int, name: str):
    if vector.shape != (dim,):
        raise ContractViolation(f"{name} must have shape ({dim},), got {vector.shape}")


def _attention_forward(paths: np.ndarray, p: AttentionParams):
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 2 or paths.shape[1] != p.dim:
        raise ContractViolation(f"path matrix must be n x {p.dim}, got {paths.shape}")
    n = paths.shape[0]
    if n == 0:
        return AttentionOutput(np.zeros(p.dim), np.zeros(0)), None
    _require_finite(paths)

    scale = 1.0 / np.sqrt(p.dim)
    q = np.einsum("nd,hdk->hnk", paths, p.wq)
    k = np.einsum("nd,hdk->hnk", paths, p.wk)
    v = np.einsum("nd,hdk->hnk", paths, p.wv)
    scores = q @ k.transpose(0, 2, 1) * scale
    scores -= scores.max(axis=2, keepdims=True)
    exp = np.exp(scores)
    attn = exp / exp.sum(axis=2, keepdims=True)
    heads = attn @ v
    concat = heads.transpose(1, 0, 2).reshape(n, p.dim)
    output = concat @ p.wo
    context = output.mean(axis=0)
    weights = attn.mean(axis=(0, 1))
    cache = (paths, q, k, v, attn, concat, scale)
    return AttentionOutput(context, weights), cache


def _attention_backward(g_context: np.ndarray, cache, p: AttentionParams, grads: AttentionParams):
    paths, q, k, v, attn, concat, scale = cache
    n = paths.shape[0]
    g_output = np.broadcast_to(g_context / n, (n, p.dim))
    grads.wo += concat.T @ g_output
    g_concat = g_output @ p.wo.T
    g_heads = g_concat.reshape(n, p.heads, p.head_dim).transpose(1, 0, 2)
    g_attn = g_heads @ v.transpose(0, 2, 1)
    g_v = attn.transpose(0, 2, 1) @ g_heads
    g_scores = attn * (g_attn - (g_attn * attn).sum(axis=2, keepdims=True)) * scale
    g_q = g_scores @ k
    g_k = g_scores.transpose(0, 2, 1) @ q
    grads.wq += np.einsum("nd,hnk->hdk", paths, g_q)
    grads.wk += np.einsum("nd,hnk->hdk", paths, g_k)
    grads.wv += np.einsum("nd,hnk->hdk", paths, g_v)


def self_attend(paths: np.ndarray, p: AttentionParams) -> AttentionOutput:
    """
    Scaled dot-product multi-head self-attention over the rows of a path matrix.

    Queries, keys and values are all the path rows, and every head scales its
    scores by 1/sqrt(d) with d the full model dimension. The attended rows are
    mapped through W^O and mean-pooled into one context vector. The weight
    of a path is the attention mass it receives, averaged over heads and
    query rows; the weights sum to 1.

    Args:
        paths: n x d matrix of encoded path instances (n may be 0)
        p: Attention parameters

    Returns:
        (context, weights); a zero context and no weights when n == 0
    """
    output, _ = _attention_forward(paths, p)
    return output


def _gate_forward(h: np.ndarray, ctx: np.ndarray, w_h: np.ndarray, w_ctx: np.ndarray, b: np.ndarray):
    pre = w_h @ h + w_ctx @ ctx + b
    return _relu(pre) * h, pre


def _gate_backward(g_out: np.ndarray, h: np.ndarray, ctx: np.ndarray, pre: np.ndarray,
                   gates: GateParams, grads: GateParams, names: Tuple[str, str, str]):
    w_name, ctx_name, b_name = names
    g_pre = g_out * h * (pre > 0)
    getattr(grads, w_name)[...] += np.outer(g_pre, h)
    getattr(grads, ctx_name)[...] += np.outer(g_pre, ctx)
    getattr(grads, b_name)[...] += g_pre
    g_h = getattr(gates, w_name).T @ g_pre + g_out * _relu(pre)
    g_ctx = getattr(gates, ctx_name).T @ g_pre
    return g_h, g_ctx


_PREV_GATE = ("w_prev", "w_path1", "b1")
_CUR_GATE = ("w_cur", "w_path2", "b2")
_FIRST_GATE = ("w_cur", "w_user_path", "b_user")


def update_item(h_prev: np.ndarray, h_cur: np.ndarray, h_path: np.ndarray,
                g: GateParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Fold the previous item state and the incoming path context into the current item.

    h1 = ReLU(W_prev h_prev + W_path1 h_path + b1) * h_prev
    h2 = ReLU(W_cur h_cur + W_path2 h_path + b2) * h_cur
    """
    dim = g.b1.shape[0]
    for vector, name in ((h_prev, "h_prev"), (h_cur, "h_cur"), (h_path, "h_path")):
        _require_dim(vector, dim, name)
    _require_finite(h_prev, h_cur, h_path)
    h1, _ = _gate_forward(h_prev, h_path, g.w_prev, g.w_path1, g.b1)
    h2, _ = _gate_forward(h_cur, h_path, g.w_cur, g.w_path2, g.b2)
    return h1, h2


def init_first_item(h_item: np.ndarray, h_user_path: np.ndarray, g: GateParams) -> np.ndarray:
    """State of a user's first item: ReLU(W_cur h_item + W_user_path h_user_path + b_user) * h_item."""
    dim = g.b_user.shape[0]
    _require_dim(h_item, dim, "h_item")
    _require_dim(h_user_path, dim, "h_user_path")
    _require_finite(h_item, h_user_path)
    state, _ = _gate_forward(h_item, h_user_path, g.w_cur, g.w_user_path, g.b_user)
    return state


def _mlp_forward(x: np.ndarray, mlp: MlpParams):
    if x.shape != (mlp.layer_sizes[0],):
        raise ContractViolation(f"MLP input must have length {mlp.layer_sizes[0]}, got {x.shape}")
    activations = [x]
    pre_activations = []
    a = x
    last = len(mlp.weights) - 1
    for index, (weight, bias) in enumerate(zip(mlp.weights, mlp.biases)):
        z = weight @ a + bias
        pre_activations.append(z)
        a = _relu(z) if index < last else z
        activations.append(a)
    return float(a[0]), (activations, pre_activations)


def _mlp_backward(g_logit: float, cache, mlp: MlpParams, grads: MlpParams) -> np.ndarray:
    activations, pre_activations = cache
    g = np.array([g_logit])
    last = len(mlp.weights) - 1
    for index in range(last, -1, -1):
        if index < last:
            g = g * (pre_activations[index] > 0)
        grads.weights[index] += np.outer(g, activations[index])
        grads.biases[index] += g
        g = mlp.weights[index].T @ g
    return g


_SCORE_EPS = 1e-15


def _rating(logit: float) -> float:
    # saturated logits would round to exactly 0 or 1
    return float(np.clip(_sigmoid(logit), _SCORE_EPS, 1.0 - _SCORE_EPS))


def score(h_u: np.ndarray, h1: np.ndarray, h2: np.ndarray, mlp: MlpParams) -> float:
    """Rating sigmoid(MLP([h_u; h1; h2])) in (0, 1)."""
    x = np.concatenate([h_u, h1, h2])
    _require_finite(x)
    logit, _ = _mlp_forward(x, mlp)
    return _rating(logit)


def score_first(h_u: np.ndarray, h_user_path: np.ndarray, h_first: np.ndarray, mlp: MlpParams) -> float:
    """Rating of a first item: sigmoid(MLP([h_u; h_user_path; h_first]))."""
    x = np.concatenate([h_u, h_user_path, h_first])
    _require_finite(x)
    logit, _ = _mlp_forward(x, mlp)
    return _rating(logit)


# Training objective

@dataclass
class TrainingExample:
    """
    One positive (user, position) with the upstream vectors it needs.

    `target_paths` encodes the pair leading into the target (user -> item at
    position 0, previous item -> item otherwise). `prev_paths` encodes the
    pair leading into the previous item.
    """

    user: int
    position: int
    target: int
    user_vec: np.ndarray
    target_vec: np.ndarray
    target_paths: np.ndarray
    prev_item: Optional[int] = None
    prev_vec: Optional[np.ndarray] = None
    prev_paths: Optional[np.ndarray] = None
    excluded: FrozenSet[int] = field(default_factory=frozenset)

    @property
    def anchor(self) -> int:
        """Start node of the candidate pair: the user at position 0, else the previous item."""
        return self.user if self.position == 0 else self.prev_item


class CandidateSource(Protocol):
    """Negative items and their upstream vectors."""

    def draw(self, rng: np.random.Generator, excluded: FrozenSet[int], n: int) -> List[int]:
        ...

    def candidate(self, anchor: int, item: int) -> Tuple[np.ndarray, np.ndarray]:
        """(item vector, encoded path matrix anchor -> item)."""
        ...


def _candidate_loss(logit: float, positive: bool, loss_kind: LossKind) -> Tuple[float, float]:
    """Loss of one rating and its derivative with respect to the logit."""
    if positive:
        if loss_kind == LossKind.NEGATIVE_ONLY:
            return 0.0, 0.0
        return float(np.logaddexp(0.0, -logit)), _sigmoid(logit) - 1.0
    return float(np.logaddexp(0.0, logit)), _sigmoid(logit)


class _Contexts:
    """Attention on/off switches of an ablation mode."""

    def __init__(self, params: ModelParams, mode: AblationMode):
        self.params = params
        self.user_item = mode != AblationMode.RUI
        self.item_item = mode != AblationMode.RII

    def user_path(self, paths: Optional[np.ndarray]):
        if not self.user_item or paths is None:
            return np.zeros(self.params.dim), None
        output, cache = _attention_forward(paths, self.params.user_item_attention)
        return output.context, cache

    def item_path(self, paths: Optional[np.ndarray]):
        if not self.item_item or paths is None:
            return np.zeros(self.params.dim), None
        output, cache = _attention_forward(paths, self.params.item_item_attention)
        return output.context, cache


def _example_loss(example: TrainingExample, negatives: Sequence[int], params: ModelParams,
                  candidates: CandidateSource, mode: AblationMode, loss_kind: LossKind,
                  grads: ModelParams) -> float:
    dim = params.dim
    contexts = _Contexts(params, mode)
    h_u = example.user_vec
    batch = [(example.target_vec, example.target_paths, True)]
    for item in negatives:
        vector, paths = candidates.candidate(example.anchor, item)
        batch.append((vector, paths, False))

    total = 0.0
    if example.position == 0:
        for vector, paths, positive in batch:
            ctx, ctx_cache = contexts.user_path(paths)
            h_first, pre = _gate_forward(vector, ctx, params.gates.w_cur, params.gates.w_user_path,
                                         params.gates.b_user)
            logit, mlp_cache = _mlp_forward(np.concatenate([h_u, ctx, h_first]), params.mlp)
            loss, g_logit = _candidate_loss(logit, positive, loss_kind)
            total += loss
            if g_logit == 0.0:
                continue
            g_x = _mlp_backward(g_logit, mlp_cache, params.mlp, grads.mlp)
            _, g_ctx = _gate_backward(g_x[2 * dim:], vector, ctx, pre, params.gates, grads.gates, _FIRST_GATE)
            g_ctx = g_ctx + g_x[dim: 2 * dim]
            if ctx_cache is not None:
                _attention_backward(g_ctx, ctx_cache, params.user_item_attention, grads.user_item_attention)
        return total

    # state of the previous item; it depends only on that item and its incoming paths
    if example.position == 1:
        prev_ctx, prev_cache = contexts.user_path(example.prev_paths)
        prev_names = _FIRST_GATE
        prev_w = (params.gates.w_cur, params.gates.w_user_path, params.gates.b_user)
    else:
        prev_ctx, prev_cache = contexts.item_path(example.prev_paths)
        prev_names = _CUR_GATE
        prev_w = (params.gates.w_cur, params.gates.w_path2, params.gates.b2)
    h_prev, prev_pre = _gate_forward(example.prev_vec, prev_ctx, *prev_w)

    g_h_prev = np.zeros(dim)
    for vector, paths, positive in batch:
        ctx, ctx_cache = contexts.item_path(paths)
        h1, pre1 = _gate_forward(h_prev, ctx, params.gates.w_prev, params.gates.w_path1, params.gates.b1)
        h2, pre2 = _gate_forward(vector, ctx, params.gates.w_cur, params.gates.w_path2, params.gates.b2)
        logit, mlp_cache = _mlp_forward(np.concatenate([h_u, h1, h2]), params.mlp)
        loss, g_logit = _candidate_loss(logit, positive, loss_kind)
        total += loss
        if g_logit == 0.0:
            continue
        g_x = _mlp_backward(g_logit, mlp_cache, params.mlp, grads.mlp)
        g_hp, g_ctx1 = _gate_backward(g_x[dim: 2 * dim], h_prev, ctx, pre1, params.gates, grads.gates, _PREV_GATE)
        _, g_ctx2 = _gate_backward(g_x[2 * dim:], vector, ctx, pre2, params.gates, grads.gates, _CUR_GATE)
        g_h_prev += g_hp
        if ctx_cache is not None:
            _attention_backward(g_ctx1 + g_ctx2, ctx_cache, params.item_item_attention, grads.item_item_attention)

    _, g_prev_ctx = _gate_backward(g_h_prev, example.prev_vec, prev_ctx, prev_pre, params.gates, grads.gates,
                                   prev_names)
    if prev_cache is not None:
        attention = params.user_item_attention if example.position == 1 else params.item_item_attention
        attention_grads = grads.user_item_attention if example.position == 1 else grads.item_item_attention
        _attention_backward(g_prev_ctx, prev_cache, attention, attention_grads)
    return total


def loss_and_grads(batch: Sequence[TrainingExample], params: ModelParams, n_neg: int,
                   rng: np.random.Generator, candidates: CandidateSource,
                   mode: AblationMode = AblationMode.FULL,
                   loss_kind: LossKind = LossKind.STANDARD) -> Tuple[float, ModelParams]:
    """
    Implicit-feedback loss with uniform negative sampling, and its exact gradient.

    Per positive: -log r(u, i+) - sum_j log(1 - r(u, j-)) over n_neg negatives
    drawn uniformly from items the user never interacted with. The
    negative-only loss drops the positive term. Loss and gradients are
    averaged over the batch.

    Args:
        batch: Training examples
        params: Current parameters (not modified)
        n_neg: Negatives per positive
        rng: Source of the negative draws
        candidates: Provides negatives and their vectors / path matrices
        mode: Ablation variant
        loss_kind: standard or paper-literal (negative term only)

    Returns:
        (mean loss, gradients shaped like params)
    """
    grads = params.zeros_like()
    if not batch:
        return 0.0, grads
    total = 0.0
    for example in batch:
        negatives = candidates.draw(rng, example.excluded, n_neg)
        total += _example_loss(example, negatives, params, candidates, mode, loss_kind, grads)
    scale = 1.0 / len(batch)
    for _, tensor in grads.named_tensors():
        tensor *= scale
    return total * scale, grads


# Inference

class TMERModel:
    """Parameters bound to an ablation mode, with the forward passes used for ranking."""

    def __init__(self, params: ModelParams, mode: AblationMode = AblationMode.FULL):
        self.params = params
        self.mode = AblationMode(mode)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def uses_user_item_paths(self) -> bool:
        return self.mode != AblationMode.RUI

    @property
    def uses_item_item_paths(self) -> bool:
        return self.mode != AblationMode.RII

    def user_context(self, paths: np.ndarray) -> AttentionOutput:
        if not self.uses_user_item_paths:
            return AttentionOutput(np.zeros(self.dim), np.zeros(0))
        return self_attend(paths, self.params.user_item_attention)

    def pair_context(self, paths: np.ndarray) -> AttentionOutput:
        if not self.uses_item_item_paths:
            return AttentionOutput(np.zeros(self.dim), np.zeros(0))
        return self_attend(paths, self.params.item_item_attention)

    def first_state(self, item_vec: np.ndarray, user_paths: np.ndarray) -> np.ndarray:
        return init_first_item(item_vec, self.user_context(user_paths).context, self.params.gates)

    def item_state(self, item_vec: np.ndarray, incoming_paths: np.ndarray) -> np.ndarray:
        """h2 of an item; passed on as h_prev to the next item."""
        context = self.pair_context(incoming_paths).context
        state, _ = _gate_forward(item_vec, context, self.params.gates.w_cur, self.params.gates.w_path2,
                                 self.params.gates.b2)
        return state

    def score_candidate(self, user_vec: np.ndarray, h_prev: np.ndarray, item_vec: np.ndarray,
                        paths: np.ndarray) -> Tuple[float, AttentionOutput]:
        """Rating of a next-item candidate and the attention that produced it."""
        attention = self.pair_context(paths)
        h1, h2 = update_item(h_prev, item_vec, attention.context, self.params.gates)
        return score(user_vec, h1, h2, self.params.mlp), attention

    def score_first_candidate(self, user_vec: np.ndarray, item_vec: np.ndarray,
                              user_paths: np.ndarray) -> Tuple[float, AttentionOutput]:
        attention = self.user_context(user_paths)
        h_first = init_first_item(item_vec, attention.context, self.params.gates)
        return score_first(user_vec, attention.context, h_first, self.params.mlp), attention


def ablate(params: ModelParams, mode) -> TMERModel:
    """Bind parameters to the full model or to the RUI / RII variant."""
    return TMERModel(params, AblationMode(mode))


# Checkpoints

def save_checkpoint(path: str, params: ModelParams) -> None:
    """Header (magic, version, d, m, layer sizes) then every tensor as little-endian float64."""
    sizes = params.mlp.layer_sizes
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HIII", CHECKPOINT_VERSION, params.dim, params.heads, len(sizes)))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for _, tensor in params.named_tensors():
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"{path} is not a model checkpoint")
        try:
            version, dim, heads, n_sizes = struct.unpack("<HIII", f.read(14))
            if version != CHECKPOINT_VERSION:
                raise CheckpointFormatError(f"unsupported checkpoint version {version}")
            sizes = list(struct.unpack(f"<{n_sizes}I", f.read(4 * n_sizes)))
        except struct.error as e:
            raise CheckpointFormatError(f"{path} has a truncated header: {e}") from e
        params = ModelParams.zeros(dim, heads)
        params.mlp = MlpParams.zeros(sizes)
        for name, tensor in params.named_tensors():
            buffer = f.read(8 * tensor.size)
            if len(buffer) != 8 * tensor.size:
                raise CheckpointFormatError(f"{path} is truncated at {name}")
            tensor[...] = np.frombuffer(buffer, dtype="<f8").reshape(tensor.shape)
        if f.read(1):
            raise CheckpointFormatError(f"{path} has trailing bytes")
    return params
