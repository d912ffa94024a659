"""Dataset ingestion, Persian-script normalization, tokenization, vocabularies,
label transformation and the planted-keyword synthetic corpus."""

from __future__ import annotations

import hashlib
import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .io import atomic_write_text
from .schema import (
    ANNOTATION_POLARITIES,
    CATEGORIES,
    CATEGORY_INDEX,
    CLASSES_PER_HEAD,
    NUM_HEADS,
    POLARITY_INDEX,
)

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1

DEFAULT_MAX_LEN = 100
DEFAULT_MIN_COUNT = 1

# --------------------------------------------------------------------------
# normalization and tokenization

_CHAR_MAP = {
    "ي": "ی",  # Arabic Yeh -> Farsi Yeh
    "ك": "ک",  # Arabic Kaf -> Keheh
    "‌": " ",  # zero-width non-joiner
}
for _i in range(10):
    _CHAR_MAP[chr(0x06F0 + _i)] = str(_i)  # extended Arabic-Indic (Persian)
    _CHAR_MAP[chr(0x0660 + _i)] = str(_i)  # Arabic-Indic
_TRANSLATE = str.maketrans(_CHAR_MAP)
_WS_RE = re.compile(r"\s+")


def normalize_text(raw: str) -> str:
    text = raw.translate(_TRANSLATE)
    # whitespace controls (\t, \n, ...) survive as spaces, other controls vanish
    text = "".join(
        ch for ch in text if ch.isspace() or unicodedata.category(ch) != "Cc"
    )
    return _WS_RE.sub(" ", text).strip()


PUNCTUATION = ".!?,;:،؛؟\"'«»“”‘’()[]"
_TOKEN_RE = re.compile("[" + re.escape(PUNCTUATION) + "]|[^\\s" + re.escape(PUNCTUATION) + "]+")


def tokenize(normalized: str) -> list[str]:
    """Split on whitespace and detach punctuation marks as their own tokens."""
    return _TOKEN_RE.findall(normalized)


# --------------------------------------------------------------------------
# reviews and datasets


@dataclass(frozen=True)
class Review:
    id: str
    text: str
    annotations: frozenset = frozenset()

    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass(frozen=True)
class Dataset:
    split: str
    reviews: tuple[Review, ...] = ()

    def __post_init__(self):
        seen = set()
        for r in self.reviews:
            if r.id in seen:
                raise DataError(f"duplicate review id {r.id!r} in split {self.split!r}")
            seen.add(r.id)

    @property
    def n(self) -> int:
        return len(self.reviews)

    def __len__(self):
        return len(self.reviews)

    def __iter__(self):
        return iter(self.reviews)

    def class_counts(self) -> dict[tuple[str, str], int]:
        counts = Counter()
        for r in self.reviews:
            counts.update(r.annotations)
        return {(c, p): counts[(c, p)] for c in CATEGORIES for p in ANNOTATION_POLARITIES}


def validate_annotations(pairs: Iterable[tuple[str, str]]) -> frozenset:
    """Check category/polarity names and the one-polarity-per-category rule."""
    by_cat: dict[str, str] = {}
    for cat, pol in pairs:
        if cat not in CATEGORY_INDEX:
            raise ValueError(f"unknown category {cat!r}")
        if pol not in ANNOTATION_POLARITIES:
            raise ValueError(f"unknown polarity {pol!r} for category {cat!r}")
        if by_cat.get(cat, pol) != pol:
            raise ValueError(f"conflicting annotation for category {cat!r}")
        by_cat[cat] = pol
    return frozenset(by_cat.items())


def transform_labels(annotations: Iterable[tuple[str, str]]) -> np.ndarray:
    """Neutral-class label transform: 9x3 one-hot matrix.

    Annotated categories are hot at their polarity class, every other
    category is hot at neutral.
    """
    matrix = np.zeros((NUM_HEADS, CLASSES_PER_HEAD), dtype=np.float64)
    matrix[:, POLARITY_INDEX["neutral"]] = 1.0
    for cat, pol in validate_annotations(annotations):
        row = CATEGORY_INDEX[cat]
        matrix[row] = 0.0
        matrix[row, POLARITY_INDEX[pol]] = 1.0
    return matrix


def _parse_record(obj, lineno: int) -> Review:
    if not isinstance(obj, dict):
        raise DataError(f"line {lineno}: record must be a JSON object")
    rid = obj.get("id")
    text = obj.get("text")
    if not isinstance(rid, str) or not rid:
        raise DataError(f"line {lineno}: missing or non-string 'id'")
    if not isinstance(text, str):
        raise DataError(f"line {lineno}: record {rid!r} has no string 'text'")
    labels = obj.get("labels", [])
    if not isinstance(labels, list):
        raise DataError(f"line {lineno}: record {rid!r}: 'labels' must be a list")
    pairs = []
    for lab in labels:
        if not isinstance(lab, dict) or "category" not in lab or "polarity" not in lab:
            raise DataError(f"line {lineno}: record {rid!r}: malformed label {lab!r}")
        pairs.append((lab["category"], lab["polarity"]))
    try:
        annotations = validate_annotations(pairs)
    except ValueError as exc:
        raise DataError(f"line {lineno}: record {rid!r}: {exc}") from None
    norm = normalize_text(text)
    if not norm:
        raise DataError(f"line {lineno}: record {rid!r} has empty text after normalization")
    return Review(rid, norm, annotations)


def load_dataset(path, split: str | None = None) -> Dataset:
    """Read a JSONL dataset file. Records missing ``labels`` have no aspects."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    reviews = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            reviews.append(_parse_record(obj, lineno))
    return Dataset(split or path.stem, tuple(reviews))


def labels_payload(annotations: Iterable[tuple[str, str]]) -> list[dict]:
    ordered = sorted(annotations, key=lambda cp: CATEGORY_INDEX[cp[0]])
    return [{"category": c, "polarity": p} for c, p in ordered]


def dumps_dataset(dataset: Dataset) -> str:
    lines = [
        json.dumps(
            {"id": r.id, "text": r.text, "labels": labels_payload(r.annotations)},
            ensure_ascii=False,
        )
        for r in dataset.reviews
    ]
    return "".join(line + "\n" for line in lines)


def save_dataset(dataset: Dataset, path) -> None:
    atomic_write_text(path, dumps_dataset(dataset))


# --------------------------------------------------------------------------
# vocabulary


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    min_count: int = DEFAULT_MIN_COUNT
    index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.tokens[:2] != (PAD, UNK):
            raise ValueError("vocabulary must start with the reserved PAD and UNK tokens")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})
        if len(self.index) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def to_text(self) -> str:
        return "".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens))

    @property
    def content_hash(self) -> bytes:
        """SHA-256 of the serialized vocabulary file (32 bytes)."""
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        pairs = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            tok, sep, num = line.rpartition("\t")
            if not sep or not num.isdigit():
                raise DataError(f"vocabulary line {lineno}: expected 'token<TAB>id'")
            pairs.append((int(num), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise DataError("vocabulary ids must be contiguous from 0")
        try:
            return cls(tuple(t for _, t in pairs))
        except ValueError as exc:
            raise DataError(str(exc)) from None

    def save(self, path) -> None:
            atomic_write_text(path, self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"vocabulary file not found: {path}")
        return cls.from_text(path.read_text(encoding="utf-8"))


def build_vocabulary(corpus: Dataset | Iterable[Review], min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Ids by descending frequency, ties broken lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    reviews = list(corpus)
    if not reviews:
        raise DataError("empty corpus")
    freq = Counter()
    for r in reviews:
        freq.update(r.tokens())
    for reserved in (PAD, UNK):
        freq.pop(reserved, None)
    kept = sorted((t for t, c in freq.items() if c >= min_count), key=lambda t: (-freq[t], t))
    return Vocabulary((PAD, UNK, *kept), min_count=min_count)


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Map tokens to ids, keep the first ``max_len`` and right-pad with PAD."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for t, tok in enumerate(tokens[:max_len]):
        ids[t] = vocab.id(tok)
    return ids


def encode_dataset(dataset: Dataset | Sequence[Review], vocab: Vocabulary, max_len: int):
    """Return (ids [n, max_len] int64, gold [n, 9, 3] float64)."""
    reviews = list(dataset)
    ids = np.full((len(reviews), max_len), PAD_ID, dtype=np.int64)
    gold = np.zeros((len(reviews), NUM_HEADS, CLASSES_PER_HEAD))
    for i, r in enumerate(reviews):
        ids[i] = encode(r.tokens(), vocab, max_len)
        gold[i] = transform_labels(r.annotations)
    return ids, gold


# --------------------------------------------------------------------------
# synthetic planted-keyword corpus

# Class counts of the movie-review corpus (train 2000 / test 200 reviews).
TABLE2 = {
    "train": {
        "n_reviews": 2000,
        "positive": dict(zip(CATEGORIES, (152, 200, 61, 59, 907, 61, 38, 56, 77))),
        "negative": dict(zip(CATEGORIES, (67, 110, 72, 68, 831, 111, 109, 69, 62))),
    },
    "test": {
        "n_reviews": 200,
        "positive": dict(zip(CATEGORIES, (11, 17, 5, 16, 85, 7, 7, 9, 7))),
        "negative": dict(zip(CATEGORIES, (9, 7, 7, 3, 61, 8, 14, 6, 5))),
    },
}

CATEGORY_KEYWORDS = {
    "Actor": ("بازیگر", "بازیگران", "هنرپیشه", "ستاره"),
    "Acting": ("بازی", "نقش‌آفرینی", "ایفای", "اجرای"),
    "Story": ("داستان", "قصه", "روایت", "ماجرا"),
    "Style": ("سبک", "فضاسازی", "ژانر", "حال‌وهوا"),
    "Movie": ("فیلم", "اثر", "سینمایی", "این‌فیلم"),
    "Screenplay": ("فیلمنامه", "فیلم‌نامه", "سناریو", "دیالوگ"),
    "Content": ("محتوا", "پیام", "مفهوم", "درونمایه"),
    "Issue": ("موضوع", "سوژه", "مسئله", "دغدغه"),
    "Director": ("کارگردان", "کارگردانی", "دکوپاژ", "میزانسن"),
}
POLARITY_WORDS = {
    "positive": ("عالی", "خوب", "زیبا", "درخشان", "بی‌نظیر", "دلنشین", "قوی", "جذاب"),
    "negative": ("بد", "ضعیف", "افتضاح", "خسته‌کننده", "سطحی", "بی‌روح", "کسل‌کننده", "ناامیدکننده"),
}
NEGATION = "نبود"
_FILLERS = ("خیلی", "واقعا", "کاملا", "نسبتا")
_LETTERS = "ابپتثجچحخدذرزژسشصضطظعغفقکگلمنوهی"


@dataclass(frozen=True)
class SynthSpec:
    """Per-(category, polarity) counts plus generator knobs."""

    positive: Mapping[str, int]
    negative: Mapping[str, int]
    n_reviews: int | None = None
    split: str = "synthetic"
    noise_vocab_size: int = 300
    noise_tokens: tuple[int, int] = (2, 8)
    negation_rate: float = 0.15
    distractor_rate: float = 0.2
    arabic_variant_rate: float = 0.1

    @classmethod
    def table2(cls, split: str = "train", n_reviews: int | None = None, **knobs) -> "SynthSpec":
        """Preset class counts; ``n_reviews`` rescales them proportionally
        (every non-empty class keeps at least one review)."""
        if split not in TABLE2:
            raise ConfigError(f"table2 preset has no split {split!r}")
        row = TABLE2[split]
        if n_reviews is None:
            return cls(row["positive"], row["negative"], row["n_reviews"], split=split, **knobs)
        ratio = n_reviews / row["n_reviews"]
        pos, neg = (
            {c: max(1, round(v * ratio)) if v else 0 for c, v in row[pol].items()}
            for pol in ("positive", "negative")
        )
        return cls(pos, neg, n_reviews, split=split, **knobs)

    @classmethod
    def from_mapping(cls, obj: Mapping) -> "SynthSpec":
        """Build from a parsed JSON object, naming the offending field on error."""
        if not isinstance(obj, Mapping):
            raise ConfigError("synthetic spec must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        for key in obj:
            if key not in known:
                raise ConfigError(f"unknown synthetic spec field {key!r}")
        kwargs = dict(obj)
        for pol in ANNOTATION_POLARITIES:
            counts = kwargs.get(pol, {})
            if not isinstance(counts, Mapping):
                raise ConfigError(f"field {pol!r} must map category -> count")
            for cat, n in counts.items():
                if cat not in CATEGORY_INDEX:
                    raise ConfigError(f"field {pol}.{cat}: unknown category")
                if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                    raise ConfigError(f"field {pol}.{cat}: count must be a non-negative integer")
            kwargs[pol] = dict(counts)
        if "n_reviews" in kwargs and kwargs["n_reviews"] is not None:
            n = kwargs["n_reviews"]
            if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                raise ConfigError("field 'n_reviews' must be a non-negative integer")
        if "noise_tokens" in kwargs:
            kwargs["noise_tokens"] = tuple(kwargs["noise_tokens"])
        spec = cls(**kwargs)
        spec.resolved_n()
        return spec

    def count(self, category: str, polarity: str) -> int:
        return int((self.positive if polarity == "positive" else self.negative).get(category, 0))

    def resolved_n(self) -> int:
        need = max(self.count(c, "positive") + self.count(c, "negative") for c in CATEGORIES)
        if self.n_reviews is None:
            return need
        if need > self.n_reviews:
            raise ConfigError(
                f"field 'n_reviews': {self.n_reviews} reviews cannot hold {need} annotations of one category"
            )
        return self.n_reviews


def _noise_lexicon(size: int) -> list[str]:
    # fixed internal seed: the background lexicon is part of the generator, not the sample
    rng = np.random.default_rng(20220101)
    words: list[str] = []
    seen = set()
    reserved = {w for ws in CATEGORY_KEYWORDS.values() for w in ws}
    reserved |= {w for ws in POLARITY_WORDS.values() for w in ws} | {NEGATION, *_FILLERS}
    while len(words) < size:
        n = int(rng.integers(2, 6))
        w = "".join(_LETTERS[i] for i in rng.integers(0, len(_LETTERS), n))
        if w not in seen and w not in reserved:
            seen.add(w)
            words.append(w)
    return words


def _arabicize(word: str) -> str:
    return word.replace("ی", "ي").replace("ک", "ك")


def generate_synthetic(spec: SynthSpec, seed: int = 0) -> Dataset:
    """Planted-keyword corpus with exact per-(category, polarity) counts.

    Each annotation becomes a clause of a category keyword followed by a
    polarity word (optionally negated, which flips the planted polarity).
    Distractor clauses name a category without a sentiment word and carry
    no label. Noise tokens come from a background lexicon disjoint from the
    keyword and sentiment lexicons.
    """
    n = spec.resolved_n()
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    assigned: list[dict[str, str]] = [{} for _ in range(n)]
    for cat in CATEGORIES:
        n_pos, n_neg = spec.count(cat, "positive"), spec.count(cat, "negative")
        if n_pos + n_neg == 0:
            continue
        rows = rng.choice(n, size=n_pos + n_neg, replace=False)
        pols = np.array(["positive"] * n_pos + ["negative"] * n_neg)
        rng.shuffle(pols)
        for row, pol in zip(rows, pols):
            assigned[int(row)][cat] = str(pol)

    noise = _noise_lexicon(spec.noise_vocab_size)
    lo, hi = spec.noise_tokens
    reviews = []
    width = max(5, len(str(n)))
    for i in range(n):
        clauses = []
        for cat, pol in assigned[i].items():
            kw = CATEGORY_KEYWORDS[cat][rng.integers(len(CATEGORY_KEYWORDS[cat]))]
            if rng.random() < spec.negation_rate:
                other = "negative" if pol == "positive" else "positive"
                words = POLARITY_WORDS[other]
                clause = [kw, words[rng.integers(len(words))], NEGATION]
            else:
                words = POLARITY_WORDS[pol]
                clause = [kw]
                if rng.random() < 0.3:
                    clause.append(_FILLERS[rng.integers(len(_FILLERS))])
                clause.append(words[rng.integers(len(words))])
            clauses.append(clause)
        unused = [c for c in CATEGORIES if c not in assigned[i]]
        if unused and rng.random() < spec.distractor_rate:
            cat = unused[rng.integers(len(unused))]
            clauses.append([CATEGORY_KEYWORDS[cat][rng.integers(len(CATEGORY_KEYWORDS[cat]))]])
        order = rng.permutation(len(clauses))
        tokens: list[str] = []
        for j in order:
            k = int(rng.integers(lo, hi + 1))
            tokens.extend(noise[m] for m in rng.integers(0, len(noise), k))
            tokens.extend(clauses[j])
            tokens.append("." if rng.random() < 0.5 else "،")
        k = int(rng.integers(lo, hi + 1))
        tokens.extend(noise[m] for m in rng.integers(0, len(noise), max(k, 1)))
        tokens = [_arabicize(t) if rng.random() < spec.arabic_variant_rate else t for t in tokens]
        text = normalize_text(" ".join(tokens))
        reviews.append(Review(f"{spec.split}-{i:0{width}d}", text, frozenset(assigned[i].items())))
    return Dataset(spec.split, tuple(reviews))
