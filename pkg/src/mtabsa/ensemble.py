"""Majority-voting ensemble of architecture-identical CNNs that differ only in
embedding width."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import neuralnet as nn
from .corpus import Dataset, Review, Vocabulary, build_vocabulary
from .errors import ConfigError, DataError, ModelMismatchError, MtabsaError
from .io import atomic_write_text
from .metrics import decode_to_set
from .schema import schema_fingerprint
from .training import Checkpoint, TrainConfig, TrainHistory, load_checkpoint, predict_dataset, save_checkpoint, train

MANIFEST_VERSION = 1
VOTING_MODES = ("hard", "soft")


@dataclass(frozen=True)
class EnsembleConfig:
    embed_dims: tuple = (100, 200, 300)
    voting: str = "hard"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed_offsets: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "embed_dims", tuple(int(d) for d in self.embed_dims))
        n = len(self.embed_dims)
        if n < 1 or n % 2 == 0:
            raise ConfigError(f"ensemble needs an odd number of members, got {n}")
        if self.voting not in VOTING_MODES:
            raise ConfigError(f"ensemble.voting must be one of {VOTING_MODES}, got {self.voting!r}")
        if self.seed_offsets is not None and len(self.seed_offsets) != n:
            raise ConfigError("ensemble seed_offsets must have one entry per member")

    def member_seed(self, index: int) -> int:
        offsets = self.seed_offsets if self.seed_offsets is not None else range(len(self.embed_dims))
        return self.train.seed + int(offsets[index])


@dataclass
class EnsembleModel:
    members: tuple
    config: EnsembleConfig
    histories: tuple = ()

    def __post_init__(self):
        self.members = tuple(self.members)
        if not self.members:
            raise ModelMismatchError("ensemble has no members")
        first = self.members[0]
        for i, m in enumerate(self.members[1:], start=1):
            if m.vocab_hash != first.vocab_hash:
                raise ModelMismatchError(f"member {i} was trained with a different vocabulary")
            if replace(m.config, embed_dim=first.config.embed_dim) != first.config:
                raise ModelMismatchError(f"member {i} differs from member 0 beyond embed_dim")

    @property
    def vocab(self) -> Vocabulary | None:
        return self.members[0].vocab

    @property
    def vocab_hash(self) -> bytes:
        return self.members[0].vocab_hash


# --------------------------------------------------------------------------
# voting


def soft_vote(probs) -> int:
    """Argmax of the mean member probability row; ties -> lower class."""
    return int(np.mean(np.asarray(probs, dtype=np.float64), axis=0).argmax())


def hard_vote(classes: Sequence[int], probs=None) -> int:
    """Class with strictly more votes than any other.

    Without a strict winner (1-1-1 among three voters) the head falls back
    to soft voting over ``probs``.
    """
    counts = np.bincount(np.asarray(classes, dtype=np.int64), minlength=3)
    top = counts.max()
    if (counts == top).sum() == 1:
        return int(counts.argmax())
    if probs is None:
        raise ValueError("hard vote is tied and no probabilities were given for the fallback")
    return soft_vote(probs)


def combine(member_probs: np.ndarray, voting: str = "hard") -> np.ndarray:
    """(M, H, C) member probabilities -> (H,) winning classes."""
    member_probs = np.asarray(member_probs)
    n_heads = member_probs.shape[1]
    if voting == "soft":
        return np.array([soft_vote(member_probs[:, h]) for h in range(n_heads)])
    classes = member_probs.argmax(axis=-1)  # (M, H)
    return np.array([hard_vote(classes[:, h], member_probs[:, h]) for h in range(n_heads)])


# --------------------------------------------------------------------------
# training and prediction


def train_ensemble(
    dataset: Dataset,
    ensemble_config: EnsembleConfig,
    model_config: nn.ModelConfig | None = None,
    vocab: Vocabulary | None = None,
    workers: int = 1,
    min_count: int = 1,
    on_member=None,
) -> EnsembleModel:
    """Train each member independently with seed = base seed + offset.

    One vocabulary is shared by all members. Member results do not depend on
    ``workers``. ``on_member(index, checkpoint, history)`` is called as each
    member finishes.
    """
    reviews = list(dataset)
    if not reviews:
        raise DataError("cannot train on an empty dataset")
    if vocab is None:
        vocab = build_vocabulary(reviews, min_count=min_count)
    base = model_config or nn.ModelConfig(0)

    def run(index):
        cfg = replace(base, embed_dim=ensemble_config.embed_dims[index])
        tcfg = replace(ensemble_config.train, seed=ensemble_config.member_seed(index))
        try:
            result = train(reviews, cfg, tcfg, vocab=vocab)
        except MtabsaError as exc:
            raise type(exc)(f"ensemble member {index}: {exc}") from exc
        if on_member is not None:
            on_member(index, *result)
        return result

    indices = range(len(ensemble_config.embed_dims))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, indices))
    else:
        results = [run(i) for i in indices]
    return EnsembleModel(
        tuple(ck for ck, _ in results), ensemble_config, tuple(h for _, h in results)
    )


def member_probabilities(model: EnsembleModel, reviews) -> np.ndarray:
    """(M, n, H, C) probabilities of every member on every review."""
    return np.stack([predict_dataset(m, reviews) for m in model.members])


def ensemble_predict(model: EnsembleModel, review: Review | str):
    """-> (label set, (M, 9, 3) per-member probabilities)."""
    if isinstance(review, str):
        review = Review("_", review)
    probs = member_probabilities(model, [review])[:, 0]
    return decode_to_set(combine(probs, model.config.voting)), probs


def ensemble_predict_dataset(model: EnsembleModel, reviews):
    """-> (list of label sets, (M, n, 9, 3) member probabilities)."""
    reviews = list(reviews)
    probs = member_probabilities(model, reviews)
    sets = [decode_to_set(combine(probs[:, i], model.config.voting)) for i in range(len(reviews))]
    return sets, probs


# --------------------------------------------------------------------------
# manifest


def member_filename(index: int, embed_dim: int) -> str:
    return f"member_{index}_d{embed_dim}.ckpt"


def manifest_dict(model: EnsembleModel, member_paths: Sequence[str], extra: dict | None = None) -> dict:
    doc = {
        "format_version": MANIFEST_VERSION,
        "voting": model.config.voting,
        "vocab_hash": model.vocab_hash.hex(),
        "schema": schema_fingerprint(),
        "members": [
            {"path": p, "embed_dim": m.config.embed_dim, "seed": model.config.member_seed(i)}
            for i, (p, m) in enumerate(zip(member_paths, model.members))
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def save_ensemble(model: EnsembleModel, out_dir, extra: dict | None = None) -> Path:
    """Write member checkpoints first and the manifest last."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(model.members):
        name = member_filename(i, m.config.embed_dim)
        save_checkpoint(m, out_dir / name)
        paths.append(name)
    manifest = out_dir / "manifest.json"
    atomic_write_text(manifest, json.dumps(manifest_dict(model, paths, extra), indent=2, sort_keys=True) + "\n")
    return manifest


def load_ensemble(manifest_path, vocab: Vocabulary | None = None) -> EnsembleModel:
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ModelMismatchError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ModelMismatchError(f"manifest is not valid JSON: {exc.msg}") from None
    if doc.get("format_version") != MANIFEST_VERSION:
        raise ModelMismatchError(f"unsupported manifest version {doc.get('format_version')!r}")
    if doc.get("schema") != schema_fingerprint():
        raise ModelMismatchError("manifest label schema differs from this build")
    expected_hash = bytes.fromhex(doc["vocab_hash"])
    members = []
    for i, entry in enumerate(doc["members"]):
        ck = load_checkpoint(manifest_path.parent / entry["path"])
        if ck.vocab_hash != expected_hash:
            raise ModelMismatchError(f"member {i} vocabulary hash differs from the manifest")
        if vocab is not None:
            ck.attach_vocab(vocab)
        members.append(ck)
    dims = tuple(m.config.embed_dim for m in members)
    seeds = [e.get("seed", 0) for e in doc["members"]]
    cfg = EnsembleConfig(
        embed_dims=dims,
        voting=doc["voting"],
        train=TrainConfig(seed=seeds[0]),
        seed_offsets=tuple(s - seeds[0] for s in seeds),
    )
    return EnsembleModel(tuple(members), cfg)


def histories_dict(histories: Sequence[TrainHistory]) -> list:
    return [h.as_dict() for h in histories]
