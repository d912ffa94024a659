"""Multi-label evaluation over (category, polarity) label sets.

The label universe holds the 18 polarity-qualified labels, so a correct
category with the wrong polarity counts as one missed and one spurious
label.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, DataError
from .schema import (
    CATEGORIES,
    CATEGORY_INDEX,
    LABEL_SPACE,
    NEUTRAL,
    NUM_LABELS,
    POLARITIES,
)


def decode_to_set(matrix_or_classes) -> frozenset:
    """Label matrix (9x3 one-hot or probabilities) or 9 class ids -> label set.

    A category contributes ``(category, polarity)`` iff its class is not
    neutral. Matrices are reduced with argmax, so ties go to the lower class.
    """
    arr = np.asarray(matrix_or_classes)
    classes = arr.argmax(axis=-1) if arr.ndim == 2 else arr
    if classes.shape != (len(CATEGORIES),):
        raise ValueError(f"expected {len(CATEGORIES)} heads, got shape {arr.shape}")
    return frozenset(
        (CATEGORIES[h], POLARITIES[int(c)]) for h, c in enumerate(classes) if int(c) != NEUTRAL
    )


@dataclass(frozen=True)
class EvalPair:
    predicted: tuple
    gold: tuple

    def __post_init__(self):
        object.__setattr__(self, "predicted", tuple(frozenset(s) for s in self.predicted))
        object.__setattr__(self, "gold", tuple(frozenset(s) for s in self.gold))
        if len(self.predicted) != len(self.gold):
            raise AlignmentError(
                f"{len(self.predicted)} predictions vs {len(self.gold)} gold samples"
            )

    @property
    def n(self) -> int:
        return len(self.gold)

    def _require_samples(self):
        if self.n == 0:
            raise ValueError("cannot evaluate zero samples")


def jaccard_index(pairs: EvalPair) -> float:
    """Mean per-sample |pred & gold| / |pred | gold|; empty vs empty scores 1."""
    pairs._require_samples()
    total = 0.0
    for h, y in zip(pairs.predicted, pairs.gold):
        union = len(h | y)
        total += 1.0 if union == 0 else len(h & y) / union
    return total / pairs.n


def hamming_loss(pairs: EvalPair) -> float:
    """Symmetric-difference size summed over samples, over n * 18 labels."""
    pairs._require_samples()
    wrong = sum(len(h ^ y) for h, y in zip(pairs.predicted, pairs.gold))
    return wrong / (pairs.n * NUM_LABELS)


@dataclass(frozen=True)
class LabelStats:
    category: str
    polarity: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    support: int
    precision_undefined: bool
    recall_undefined: bool
    f1_undefined: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _ratio(num, den):
    return (0.0, True) if den == 0 else (num / den, False)


def per_label_report(pairs: EvalPair) -> list[LabelStats]:
    """One-vs-rest counts per composite label; undefined ratios reported as 0 and flagged."""
    rows = []
    for label in LABEL_SPACE:
        tp = fp = fn = 0
        for h, y in zip(pairs.predicted, pairs.gold):
            in_h, in_y = label in h, label in y
            tp += in_h and in_y
            fp += in_h and not in_y
            fn += in_y and not in_h
        precision, p_undef = _ratio(tp, tp + fp)
        recall, r_undef = _ratio(tp, tp + fn)
        f1, f_undef = _ratio(2 * tp, 2 * tp + fp + fn)
        rows.append(
            LabelStats(
                label[0], label[1], tp, fp, fn, precision, recall, f1, tp + fn,
                p_undef, r_undef, f_undef,
            )
        )
    return rows


# --------------------------------------------------------------------------
# prediction files


def read_label_file(path) -> list[tuple[str, frozenset]]:
    """Read ``{"id", "labels"}`` JSONL records (dataset files qualify too)."""
    from .corpus import validate_annotations

    path = Path(path)
    if not path.is_file():
        raise DataError(f"label file not found: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid = obj["id"]
                pairs = [(lab["category"], lab["polarity"]) for lab in obj.get("labels", [])]
                out.append((rid, validate_annotations(pairs)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return out


def align(predicted: Sequence[tuple[str, frozenset]], gold: Sequence[tuple[str, frozenset]]) -> EvalPair:
    """Pair records by position, insisting ids agree."""
    for (pid, _), (gid, _) in zip(predicted, gold):
        if pid != gid:
            raise AlignmentError(f"id mismatch: prediction {pid!r} vs gold {gid!r}")
    if len(predicted) != len(gold):
        shorter, longer = (predicted, gold) if len(predicted) < len(gold) else (gold, predicted)
        raise AlignmentError(f"length mismatch; first unmatched id {longer[len(shorter)][0]!r}")
    return EvalPair([s for _, s in predicted], [s for _, s in gold])


def sort_labels(labels: Iterable[tuple[str, str]]):
    return sorted(labels, key=lambda cp: (CATEGORY_INDEX[cp[0]], cp[1]))
