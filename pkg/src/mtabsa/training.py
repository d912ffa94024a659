"""Multi-task loss, optimizers, the training loop, prediction decoding and
checkpoint persistence."""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .corpus import Dataset, Review, Vocabulary, build_vocabulary, encode, encode_dataset
from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    DataError,
    DivergenceError,
    ModelMismatchError,
)
from .io import atomic_write_bytes
from .metrics import EvalPair, decode_to_set, jaccard_index
from .schema import CLASSES_PER_HEAD, NUM_HEADS, POLARITY_INDEX

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def multitask_loss(probs, gold):
    """Sum over heads of -ln p[gold class]; works on (9,3) or batched (B,9,3)."""
    p = np.maximum((np.asarray(probs) * np.asarray(gold)).sum(axis=-1), PROB_FLOOR)
    return -np.log(p).sum(axis=-1)


# --------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("train.learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"train.optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("train.validation_fraction must lie in [0, 1)")


@dataclass
class OptimizerState:
    step: int = 0
    m: list | None = None
    v: list | None = None


def optimizer_step(params: nn.ModelParams, grads: nn.ModelParams, state: OptimizerState, config: TrainConfig):
    """Apply one Adam or SGD update in place; returns (params, state)."""
    g_arrays = grads.arrays()
    for g in g_arrays:
        if not np.isfinite(g).all():
            raise DivergenceError("divergence detected: non-finite gradient")
    lr = config.learning_rate
    if config.optimizer == "sgd":
        for p, g in zip(params.arrays(), g_arrays):
            p -= lr * g
        state.step += 1
        return params, state

    if state.m is None:
        state.m = [np.zeros_like(g) for g in g_arrays]
        state.v = [np.zeros_like(g) for g in g_arrays]
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params.arrays(), g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params, state


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"MTLABSA1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI7I")
_HASH_LEN = 32


@dataclass
class Checkpoint:
    config: nn.ModelConfig
    params: nn.ModelParams
    vocab_hash: bytes
    format_version: int = FORMAT_VERSION
    vocab: Vocabulary | None = field(default=None, compare=False, repr=False)

    def attach_vocab(self, vocab: Vocabulary) -> "Checkpoint":
        if vocab.content_hash != self.vocab_hash:
            raise ModelMismatchError("vocabulary does not match the checkpoint's vocabulary hash")
        if len(vocab) != self.config.vocab_size:
            raise ModelMismatchError("vocabulary size differs from the checkpoint config")
        self.vocab = vocab
        return self


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    c = ckpt.config
    ckpt.params.check_shapes(c)
    if len(ckpt.vocab_hash) != _HASH_LEN:
        raise ValueError("vocabulary hash must be 32 bytes")
    parts = [
        _HEADER.pack(
            MAGIC, ckpt.format_version, c.vocab_size, c.embed_dim, c.num_filters,
            c.kernel_size, c.max_len, c.num_heads, c.classes_per_head,
        ),
        bytes(ckpt.vocab_hash),
    ]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.params.arrays()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + _HASH_LEN:
        raise CheckpointTruncatedError("checkpoint truncated inside the header")
    magic, version, *dims = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    try:
        config = nn.ModelConfig(*dims)
    except ValueError as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from None
    shapes = nn.param_shapes(config)
    n_floats = sum(math.prod(s) for s in shapes)
    expected = _HEADER.size + _HASH_LEN + 8 * n_floats + _HASH_LEN
    if len(data) < expected:
        raise CheckpointTruncatedError(f"checkpoint has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise CheckpointError(f"checkpoint has {len(data) - expected} trailing bytes")
    body, digest = data[:-_HASH_LEN], data[-_HASH_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointChecksumError("checkpoint checksum mismatch (file corrupted)")
    offset = _HEADER.size
    vocab_hash = data[offset : offset + _HASH_LEN]
    offset += _HASH_LEN
    arrays = []
    for shape in shapes:
        count = math.prod(shape)
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64)
        arrays.append(arr.reshape(shape))
        offset += 8 * count
    params = nn.ModelParams(*arrays)
    if not params.is_finite():
        raise CheckpointError("checkpoint contains non-finite parameters")
    return Checkpoint(config, params, vocab_hash, version)


def load_checkpoint(path, vocab: Vocabulary | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint file not found: {path}")
    ckpt = checkpoint_from_bytes(path.read_bytes())
    if vocab is not None:
        ckpt.attach_vocab(vocab)
    return ckpt


# --------------------------------------------------------------------------
# training


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_jaccard: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss, "val_jaccard": self.val_jaccard}


def _seed_streams(seed: int):
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def stratified_holdout(reviews, fraction: float, rng) -> tuple[list[int], list[int]]:
    """Split indices, stratified on the Movie category's class."""
    if fraction <= 0.0:
        return list(range(len(reviews))), []
    strata: dict[int, list[int]] = {}
    movie = "Movie"
    for i, r in enumerate(reviews):
        pol = dict(r.annotations).get(movie, "neutral")
        strata.setdefault(POLARITY_INDEX[pol], []).append(i)
    held = []
    for key in sorted(strata):
        idx = np.array(strata[key])
        n_val = int(round(fraction * len(idx)))
        if n_val:
            held.extend(rng.permutation(idx)[:n_val].tolist())
    held_set = set(held)
    return [i for i in range(len(reviews)) if i not in held_set], sorted(held)


def predict_proba(params: nn.ModelParams, ids, chunk: int = 256) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((ids.shape[0], NUM_HEADS, CLASSES_PER_HEAD))
    for start in range(0, ids.shape[0], chunk):
        out[start : start + chunk] = nn.forward_batch(params, ids[start : start + chunk]).probs
    return out


def train(
    dataset: Dataset,
    model_config: nn.ModelConfig,
    train_config: TrainConfig,
    vocab: Vocabulary | None = None,
    min_count: int = 1,
) -> tuple[Checkpoint, TrainHistory]:
    """Train one model; returns the final-epoch checkpoint and per-epoch history.

    The vocabulary is built from ``dataset`` unless one is supplied, and the
    config's ``vocab_size`` is overridden to match it.
    """
    reviews = list(dataset)
    if not reviews:
        raise DataError("cannot train on an empty dataset")
    if vocab is None:
        vocab = build_vocabulary(reviews, min_count=min_count)
    config = replace(model_config, vocab_size=len(vocab))
    init_rng, split_rng, shuffle_rng = _seed_streams(train_config.seed)

    ids, gold = encode_dataset(reviews, vocab, config.max_len)
    train_idx, val_idx = stratified_holdout(reviews, train_config.validation_fraction, split_rng)
    if not train_idx:
        raise DataError("validation split left no training samples")
    train_idx = np.asarray(train_idx)
    val_ids, val_gold = ids[val_idx], gold[val_idx]

    params = nn.init_params(config, init_rng)
    state = OptimizerState()
    history = TrainHistory()
    bs = train_config.batch_size
    for epoch in range(1, train_config.epochs + 1):
        order = shuffle_rng.permutation(train_idx) if train_config.shuffle else train_idx
        total = 0.0
        for bno, start in enumerate(range(0, len(order), bs), start=1):
            batch = order[start : start + bs]
            with np.errstate(over="ignore", invalid="ignore"):
                trace = nn.forward_batch(params, ids[batch])
                batch_total = float(multitask_loss(trace.probs, gold[batch]).sum())
            if not math.isfinite(batch_total):
                raise DivergenceError(f"divergence detected at epoch {epoch}, batch {bno}: non-finite loss")
            total += batch_total
            grads = nn.backward_batch(params, trace, gold[batch], scale=1.0 / len(batch))
            try:
                optimizer_step(params, grads, state, train_config)
            except DivergenceError:
                raise DivergenceError(f"divergence detected at epoch {epoch}, batch {bno}: non-finite gradient") from None
        history.train_loss.append(total / len(order))
        if len(val_idx):
            with np.errstate(over="ignore", invalid="ignore"):
                probs = predict_proba(params, val_ids)
                val_loss = float(multitask_loss(probs, val_gold).mean())
            if not math.isfinite(val_loss):
                raise DivergenceError(f"divergence detected at epoch {epoch}: non-finite validation loss")
            history.val_loss.append(val_loss)
            pairs = EvalPair([decode_to_set(p) for p in probs], [decode_to_set(g) for g in val_gold])
            history.val_jaccard.append(jaccard_index(pairs))
        log.debug("epoch %d train_loss %.6f", epoch, history.train_loss[-1])

    ckpt = Checkpoint(config, params, vocab.content_hash, vocab=vocab)
    return ckpt, history


# --------------------------------------------------------------------------
# prediction


def _require_vocab(ckpt: Checkpoint) -> Vocabulary:
    if ckpt.vocab is None:
        raise ModelMismatchError("checkpoint has no vocabulary attached")
    return ckpt.vocab


def predict(ckpt: Checkpoint, review: Review | str):
    """Per-head argmax decoding -> (label set, 9x3 probabilities)."""
    vocab = _require_vocab(ckpt)
    tokens = review.tokens() if isinstance(review, Review) else Review("_", review).tokens()
    probs, _ = nn.forward(ckpt.params, encode(tokens, vocab, ckpt.config.max_len))
    return decode_to_set(probs), probs


def predict_dataset(ckpt: Checkpoint, reviews) -> np.ndarray:
    """Probabilities (n, 9, 3) for a sequence of reviews."""
    vocab = _require_vocab(ckpt)
    reviews = list(reviews)
    if not reviews:
        return np.zeros((0, NUM_HEADS, CLASSES_PER_HEAD))
    ids, _ = encode_dataset(reviews, vocab, ckpt.config.max_len)
    return predict_proba(ckpt.params, ids)

