"""Multi-head text CNN: embedding -> conv1d -> ReLU -> global max pool ->
nine 3-way softmax heads, with hand-derived gradients.

All arithmetic is float64. Batched entry points (``forward_batch``,
``backward_batch``) carry the training loop; the single-layer functions
exist so each stage can be inspected and tested on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .schema import CLASSES_PER_HEAD, NUM_HEADS

CANONICAL_EMBED_DIMS = (100, 200, 300)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. ``vocab_size=0`` means "fill in from the
    vocabulary", which is what ``training.train`` does."""

    vocab_size: int
    embed_dim: int = 100
    num_filters: int = 256
    kernel_size: int = 3
    max_len: int = 100
    num_heads: int = NUM_HEADS
    classes_per_head: int = CLASSES_PER_HEAD

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            floor = 0 if f.name == "vocab_size" else 1
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < floor:
                raise ValueError(f"ModelConfig.{f.name} must be an integer >= {floor}, got {v!r}")
        if self.kernel_size > self.max_len:
            raise ValueError("kernel_size must not exceed max_len")

    @property
    def is_canonical(self) -> bool:
        return self.embed_dim in CANONICAL_EMBED_DIMS

    @property
    def num_positions(self) -> int:
        return self.max_len - self.kernel_size + 1


PARAM_NAMES = ("embedding", "conv_w", "conv_b", "head_w", "head_b")


@dataclass
class ModelParams:
    """Learnable weights; also used for gradients (same shapes)."""

    embedding: np.ndarray  # (vocab, d)
    conv_w: np.ndarray  # (filters, kernel, d)
    conv_b: np.ndarray  # (filters,)
    head_w: np.ndarray  # (heads, filters, classes)
    head_b: np.ndarray  # (heads, classes)

    def arrays(self):
        return [getattr(self, name) for name in PARAM_NAMES]

    def copy(self) -> "ModelParams":
        return ModelParams(*(a.copy() for a in self.arrays()))

    def zeros_like(self) -> "ModelParams":
        return ModelParams(*(np.zeros_like(a) for a in self.arrays()))

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def check_shapes(self, config: ModelConfig) -> None:
        expected = param_shapes(config)
        for name, shape in zip(PARAM_NAMES, expected):
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")


Gradients = ModelParams


def param_shapes(config: ModelConfig):
    c = config
    return (
        (c.vocab_size, c.embed_dim),
        (c.num_filters, c.kernel_size, c.embed_dim),
        (c.num_filters,),
        (c.num_heads, c.num_filters, c.classes_per_head),
        (c.num_heads, c.classes_per_head),
    )


def init_params(config: ModelConfig, seed=0) -> ModelParams:
    """Embeddings U(-0.05, 0.05); conv and head weights Glorot-uniform; zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = config
    embedding = rng.uniform(-0.05, 0.05, size=(c.vocab_size, c.embed_dim))
    fan_in, fan_out = c.kernel_size * c.embed_dim, c.kernel_size * c.num_filters
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    conv_w = rng.uniform(-lim, lim, size=(c.num_filters, c.kernel_size, c.embed_dim))
    lim = math.sqrt(6.0 / (c.num_filters + c.classes_per_head))
    head_w = rng.uniform(-lim, lim, size=(c.num_heads, c.num_filters, c.classes_per_head))
    return ModelParams(
        embedding,
        conv_w,
        np.zeros(c.num_filters),
        head_w,
        np.zeros((c.num_heads, c.classes_per_head)),
    )


# --------------------------------------------------------------------------
# single-sample layers


def embedding_forward(ids, params: ModelParams) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = params.embedding.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")
    return params.embedding[ids]


def conv1d_forward(x, filters, biases) -> np.ndarray:
    """Valid 1-D convolution: (T, d) input, (F, k, d) filters -> (T-k+1, F)."""
    x = np.asarray(x, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    nf, k, d = filters.shape
    if x.shape[0] < k:
        raise ValueError("sequence shorter than kernel")
    win = sliding_window_view(x, k, axis=0).transpose(0, 2, 1).reshape(-1, k * d)
    return win @ filters.reshape(nf, k * d).T + biases


def relu(x):
    return np.maximum(x, 0.0)


def global_max_pool(fmap):
    """Column maxima of a (P, F) map and the first row index reaching each."""
    fmap = np.asarray(fmap, dtype=np.float64)
    pos = fmap.argmax(axis=0)
    return fmap[pos, np.arange(fmap.shape[1])], pos


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def heads_forward(pooled, head_w, head_b) -> np.ndarray:
    """Per-head affine map of the pooled vector followed by softmax -> (H, C)."""
    logits = np.einsum("f,hfc->hc", pooled, head_w) + head_b
    return softmax(logits)


# --------------------------------------------------------------------------
# batched model


@dataclass
class ForwardTrace:
    ids: np.ndarray  # (B, T)
    pooled: np.ndarray  # (B, F) post-ReLU maxima
    argpos: np.ndarray  # (B, F) winning window start
    probs: np.ndarray  # (B, H, C)


def _as_batch(ids):
    ids = np.asarray(ids, dtype=np.int64)
    return (ids[None, :], True) if ids.ndim == 1 else (ids, False)


def forward_batch(params: ModelParams, ids) -> ForwardTrace:
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    vocab, d = params.embedding.shape
    nf, k, _ = params.conv_w.shape
    bsz, t = ids.shape
    if t < k:
        raise ValueError("sequence shorter than kernel")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"token id out of range for vocabulary of size {vocab}")
    kern = kernels.active()
    cols = kern.gather_windows(params.embedding, ids, k)
    p = cols.shape[1]
    z = cols.reshape(bsz * p, k * d) @ params.conv_w.reshape(nf, k * d).T
    z += params.conv_b
    pooled, argpos = kern.relu_maxpool(z.reshape(bsz, p, nf))
    nh, _, nc = params.head_w.shape
    logits = pooled @ params.head_w.transpose(1, 0, 2).reshape(nf, nh * nc)
    logits = logits.reshape(bsz, nh, nc) + params.head_b
    return ForwardTrace(ids, pooled, argpos, softmax(logits))


def forward(params: ModelParams, ids):
    """Single review: returns ((H, C) probabilities, trace)."""
    ids, _ = _as_batch(ids)
    trace = forward_batch(params, ids)
    return trace.probs[0], trace


def backward_batch(params: ModelParams, trace: ForwardTrace, gold, scale=1.0) -> Gradients:
    """Gradient of ``scale * sum_b multitask_loss(probs_b, gold_b)``.

    The probability clamp inside the loss is ignored here; it only matters
    once a gold probability has underflowed below 1e-12.
    """
    gold = np.asarray(gold, dtype=np.float64)
    if gold.ndim == 2:
        gold = gold[None]
    if gold.shape != trace.probs.shape:
        raise ValueError(f"gold shape {gold.shape} does not match trace {trace.probs.shape}")
    nf = params.conv_w.shape[0]
    nh, _, nc = params.head_w.shape
    d_logits = (trace.probs - gold) * scale  # (B, H, C)
    flat = d_logits.reshape(-1, nh * nc)
    d_head_w = (trace.pooled.T @ flat).reshape(nf, nh, nc).transpose(1, 0, 2)
    d_head_b = d_logits.sum(axis=0)
    d_pooled = flat @ params.head_w.transpose(1, 0, 2).reshape(nf, nh * nc).T
    d_pooled *= trace.pooled > 0.0
    d_conv_w, d_conv_b, d_embedding = kernels.active().conv_backward(
        trace.ids, params.embedding, params.conv_w, trace.argpos, d_pooled
    )
    return ModelParams(d_embedding, d_conv_w, d_conv_b, np.ascontiguousarray(d_head_w), d_head_b)


def backward(params: ModelParams, trace: ForwardTrace, ids, gold) -> Gradients:
    ids, _ = _as_batch(ids)
    if trace.ids.shape != ids.shape or not np.array_equal(trace.ids, ids):
        raise ValueError("trace was produced from a different input")
    return backward_batch(params, trace, gold)


def batch_loss(params: ModelParams, ids, gold) -> float:
    from .training import multitask_loss

    ids, _ = _as_batch(ids)
    gold = np.asarray(gold, dtype=np.float64)
    if gold.ndim == 2:
        gold = gold[None]
    return float(multitask_loss(forward_batch(params, ids).probs, gold).sum())


def grad_check(params: ModelParams, ids, gold, eps=1e-5, max_params=None, seed=0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter, or a seeded random subset of ``max_params``
    (at least 500) when the model is larger than that.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    ids, _ = _as_batch(ids)
    trace = forward_batch(params, ids)
    grads = backward(params, trace, ids, gold)
    work = params.copy()
    coords = [(i, j) for i, a in enumerate(work.arrays()) for j in range(a.size)]
    if max_params is not None and len(coords) > max(max_params, 500):
        rng = np.random.default_rng(seed)
        pick = rng.choice(len(coords), size=max(max_params, 500), replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    arrays, g_arrays = work.arrays(), grads.arrays()
    for i, j in coords:
        flat = arrays[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        up = batch_loss(work, ids, gold)
        flat[j] = orig - eps
        down = batch_loss(work, ids, gold)
        flat[j] = orig
        numeric = (up - down) / (2.0 * eps)
        analytic = g_arrays[i].reshape(-1)[j]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst


def with_vocab_size(config: ModelConfig, vocab_size: int) -> ModelConfig:
    return replace(config, vocab_size=vocab_size)

