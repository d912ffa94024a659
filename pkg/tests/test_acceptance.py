"""Acceptance criteria, one test each. Run with ``pytest -v tests/test_acceptance.py``;
the terminal summary lists PASS/FAIL per criterion."""

import hashlib
import itertools
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from mtabsa import neuralnet as nn
from mtabsa.cli import main as cli_main
from mtabsa.corpus import SynthSpec, build_vocabulary, generate_synthetic, transform_labels
from mtabsa.ensemble import EnsembleConfig, combine, ensemble_predict_dataset, hard_vote, soft_vote, train_ensemble
from mtabsa.errors import CheckpointError, CheckpointTruncatedError
from mtabsa.metrics import EvalPair, align, decode_to_set, hamming_loss, jaccard_index, read_label_file
from mtabsa.schema import CATEGORIES, LABEL_SPACE
from mtabsa.training import (
    Checkpoint,
    TrainConfig,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    predict_dataset,
    save_checkpoint,
    train,
)

FIXTURES = Path(__file__).parent / "fixtures"


def criterion(name):
    return pytest.mark.criterion(name)


def random_annotations(rng):
    out = set()
    for cat in CATEGORIES:
        c = int(rng.integers(3))
        if c:
            out.add((cat, ("negative", "positive")[c - 1]))
    return frozenset(out)


# --------------------------------------------------------------------------
# gradient correctness

TINY = nn.ModelConfig(10, embed_dim=4, num_filters=3, kernel_size=3, max_len=5)


def loop_loss(params, ids, gold):
    """Direct loop evaluation of the summed multi-head cross-entropy."""
    total = 0.0
    k = params.conv_w.shape[1]
    for row, y in zip(ids, gold):
        x = params.embedding[row]
        pooled = np.full(params.conv_w.shape[0], -np.inf)
        for t in range(len(row) - k + 1):
            for f in range(params.conv_w.shape[0]):
                z = params.conv_b[f] + np.sum(params.conv_w[f] * x[t : t + k])
                pooled[f] = max(pooled[f], max(z, 0.0))
        for h in range(params.head_w.shape[0]):
            logits = pooled @ params.head_w[h] + params.head_b[h]
            m = logits.max()
            log_z = m + np.log(np.sum(np.exp(logits - m)))
            total -= logits[int(np.argmax(y[h]))] - log_z
    return total


@criterion("gradient correctness")
def test_gradient_correctness(record_property):
    eps = 1e-5
    start = time.perf_counter()
    worst = 0.0
    seeds = range(25)
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        params = nn.init_params(TINY, rng)
        params.conv_b[:] = rng.normal(0, 0.1, TINY.num_filters)
        params.head_b[:] = rng.normal(0, 0.1, (9, 3))
        ids = rng.integers(0, TINY.vocab_size, (2, TINY.max_len))
        gold = np.stack([transform_labels(random_annotations(rng)) for _ in range(2)])
        analytic = nn.backward_batch(params, nn.forward_batch(params, ids), gold)
        for arr, grad in zip(params.arrays(), analytic.arrays()):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = loop_loss(params, ids, gold)
                arr[idx] = old - eps
                down = loop_loss(params, ids, gold)
                arr[idx] = old
                numeric = (up - down) / (2 * eps)
                a = grad[idx]
                worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
    elapsed = time.perf_counter() - start
    record_property("detail", f"{len(seeds)} seeds, max rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 30


# --------------------------------------------------------------------------
# probability normalization


@criterion("probability normalization")
def test_probability_normalization(record_property):
    rng = np.random.default_rng(7)
    worst = 0.0
    passes = 0
    for m in range(100):
        cfg = nn.ModelConfig(int(rng.integers(5, 40)), embed_dim=int(rng.integers(2, 12)),
                             num_filters=int(rng.integers(1, 16)), max_len=int(rng.integers(3, 20)))
        params = nn.init_params(cfg, rng)
        scale = 10 ** rng.uniform(-2, 2.5)  # up to very peaked logits
        for arr in (params.conv_w, params.head_w, params.head_b):
            arr *= scale
        params.head_b += rng.normal(0, scale, params.head_b.shape)
        for _ in range(100):
            probs, _ = nn.forward(params, rng.integers(0, cfg.vocab_size, cfg.max_len))
            assert np.isfinite(probs).all() and (probs >= 0).all()
            worst = max(worst, float(np.abs(probs.sum(axis=1) - 1).max()))
            passes += 1
    record_property("detail", f"{passes} forward passes, max |row sum - 1| {worst:.1e}")
    assert passes == 10_000
    assert worst <= 1e-9


# --------------------------------------------------------------------------
# metric oracle equivalence

BIT = {lab: 1 << i for i, lab in enumerate(LABEL_SPACE)}


def mask(labels):
    return sum(BIT[lab] for lab in labels)


def bitmask_oracle(pred, gold):
    jac, wrong = Fraction(0), 0
    for h, y in zip(pred, gold):
        a, b = mask(h), mask(y)
        union = bin(a | b).count("1")
        jac += 1 if union == 0 else Fraction(bin(a & b).count("1"), union)
        wrong += bin(a ^ b).count("1")
    return float(jac / len(gold)), wrong / (len(gold) * len(LABEL_SPACE))


@criterion("metric oracle equivalence")
def test_metric_oracle(record_property):
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(1000):
        n = int(rng.integers(1, 30))
        if i % 2:
            draw = lambda: random_annotations(rng)  # noqa: E731
        else:
            density = rng.uniform(0, 1)
            draw = lambda: frozenset(lab for lab in LABEL_SPACE if rng.random() < density)  # noqa: E731
        pred = [draw() for _ in range(n)]
        gold = [draw() for _ in range(n)]
        jac, ham = bitmask_oracle(pred, gold)
        pairs = EvalPair(pred, gold)
        worst = max(worst, abs(jaccard_index(pairs) - jac), abs(hamming_loss(pairs) - ham))
    golden = align(read_label_file(FIXTURES / "golden_pred.jsonl"), read_label_file(FIXTURES / "golden_gold.jsonl"))
    gj, gh = jaccard_index(golden), hamming_loss(golden)
    record_property("detail", f"1000 pairs, max diff {worst:.1e}; golden J={gj!r} H={gh!r}")
    assert worst <= 1e-12
    assert gj == 0.5 and gh == 2 / 18


# --------------------------------------------------------------------------
# label round trip


@criterion("label round-trip")
def test_label_round_trip(record_property):
    rng = np.random.default_rng(3)
    sets = [random_annotations(rng) for _ in range(998)]
    sets += [frozenset(), frozenset((c, "positive") for c in CATEGORIES)]
    failures = sum(decode_to_set(transform_labels(s)) != s for s in sets)
    record_property("detail", f"{len(sets)} sets, {failures} failures")
    assert len(sets) == 1000 and failures == 0


# --------------------------------------------------------------------------
# voting


@criterion("voting correctness")
def test_voting(record_property):
    rng = np.random.default_rng(5)
    checked = fallback = 0
    for triple in itertools.product(range(3), repeat=3):
        probs = rng.dirichlet(np.ones(3), size=3)
        probs[np.arange(3), list(triple)] += 2
        probs /= probs.sum(axis=1, keepdims=True)
        counts = Counter(triple).most_common()
        strict = counts[0][0] if len(counts) == 1 or counts[0][1] > counts[1][1] else None
        outcomes = set()
        for perm in itertools.permutations(range(3)):
            outcomes.add(hard_vote([triple[i] for i in perm], probs[list(perm)]))
        assert len(outcomes) == 1
        (winner,) = outcomes
        if strict is None:
            assert winner == int(np.argmax(probs.mean(axis=0)))
            fallback += 1
        else:
            assert winner == strict
        checked += 1

    rows = np.array([[0.50, 0.30, 0.20], [0.40, 0.50, 0.10], [0.30, 0.25, 0.45]])
    np.testing.assert_allclose(rows.mean(axis=0), [0.40, 0.35, 0.25])
    assert hard_vote(rows.argmax(axis=1), rows) == 0
    assert soft_vote(np.eye(3)) == 0
    assert soft_vote([[0.5, 0.3, 0.2], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]]) == 1

    gold_set = frozenset({("Actor", "negative"), ("Story", "positive"), ("Movie", "positive"), ("Issue", "negative")})
    gold = transform_labels(gold_set).argmax(axis=1)
    members = []
    for m in range(3):
        classes = np.where(np.arange(9) % 3 == m, (gold + 1 + m % 2) % 3, gold)
        rows = np.full((9, 3), 0.1)
        rows[np.arange(9), classes] = 0.8
        members.append(rows)
    members = np.stack(members)
    member_sets = [decode_to_set(members[m]) for m in range(3)]
    assert all(s != gold_set for s in member_sets)
    assert decode_to_set(combine(members, "hard")) == gold_set
    record_property("detail", f"{checked} triples x 6 orderings, {fallback} soft fallbacks, disjoint-error case recovered")


# --------------------------------------------------------------------------
# memorization


@criterion("memorization")
def test_memorization(record_property):
    data = generate_synthetic(SynthSpec.table2("train", n_reviews=50), seed=0)
    start = time.perf_counter()
    ckpt, history = train(data, nn.ModelConfig(0, embed_dim=100), TrainConfig(epochs=200, validation_fraction=0.0))
    elapsed = time.perf_counter() - start
    pairs = EvalPair([decode_to_set(p) for p in predict_dataset(ckpt, data)], [r.annotations for r in data])
    jac = jaccard_index(pairs)
    loss = history.train_loss[-1]
    record_property("detail", f"final loss {loss:.4f}, train Jaccard {jac:.3f}, 200 epochs, {elapsed:.1f}s")
    assert loss < 0.05
    assert jac >= 0.95
    assert elapsed < 180


# --------------------------------------------------------------------------
# end to end


@pytest.mark.slow
@criterion("end-to-end synthetic experiment")
def test_end_to_end(record_property):
    start = time.perf_counter()
    wins, lines = 0, []
    for seed in range(5):
        train_set = generate_synthetic(SynthSpec.table2("train"), seed=seed)
        test_set = generate_synthetic(SynthSpec.table2("test"), seed=seed + 1000)
        assert (train_set.n, test_set.n) == (2000, 200)
        model = train_ensemble(train_set, EnsembleConfig(train=TrainConfig(seed=seed)))
        sets, probs = ensemble_predict_dataset(model, test_set)
        gold = [r.annotations for r in test_set]
        members = [jaccard_index(EvalPair([decode_to_set(p) for p in probs[m]], gold)) for m in range(3)]
        ens = jaccard_index(EvalPair(sets, gold))
        won = ens >= float(np.median(members))
        wins += won
        lines.append(f"seed {seed}: members {'/'.join(f'{j:.3f}' for j in members)} ensemble {ens:.3f}")
    elapsed = time.perf_counter() - start
    record_property("detail", f"{wins}/5 seeds ensemble >= median member, {elapsed / 60:.1f} min; " + "; ".join(lines))
    assert wins >= 4
    assert elapsed < 30 * 60


# --------------------------------------------------------------------------
# determinism

RUN_CONFIG = """\
train_path = train.jsonl
test_path = test.jsonl
out_dir = ens
seed = 42
train.epochs = 3
"""


def _pipeline(root: Path):
    root.mkdir()
    (root / "run.cfg").write_text(RUN_CONFIG)
    steps = [
        ["synth", "--preset", "table2", "--split", "train", "--seed", "42", "--out", root / "train.jsonl"],
        ["synth", "--preset", "table2", "--split", "test", "--seed", "1042", "--out", root / "test.jsonl"],
        ["ensemble-train", "--config", root / "run.cfg"],
        ["train", "--config", root / "run.cfg", "--out", root / "single"],
        ["predict", "--model", root / "ens/manifest.json", "--data", root / "test.jsonl",
         "--pred-out", root / "ens_pred.jsonl", "--audit"],
        ["predict", "--model", root / "single/model.ckpt", "--data", root / "test.jsonl",
         "--pred-out", root / "single_pred.jsonl"],
        ["evaluate", "--pred", root / "ens_pred.jsonl", "--gold", root / "test.jsonl",
         "--model", root / "ens/manifest.json", "--format", "json", "--report-out", root / "ens_report.json"],
        ["evaluate", "--pred", root / "single_pred.jsonl", "--gold", root / "test.jsonl",
         "--model", root / "single/model.ckpt", "--report-out", root / "single_report.txt"],
    ]
    for argv in steps:
        assert cli_main([str(a) for a in argv]) == 0, argv
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timing.json"
    }


@criterion("determinism")
def test_determinism(tmp_path, record_property, capsys):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    capsys.readouterr()
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    kinds = {k.rsplit(".", 1)[-1] for k in a}
    record_property("detail", f"{len(a)} files compared ({', '.join(sorted(kinds))}), {len(differing)} differ")
    assert {"ckpt", "jsonl", "json", "txt", "tsv"} <= kinds
    assert not differing, differing


# --------------------------------------------------------------------------
# checkpoint integrity


@criterion("checkpoint integrity")
def test_checkpoint_integrity(tmp_path, record_property):
    data = generate_synthetic(SynthSpec.table2("train", n_reviews=200), seed=1)
    vocab = build_vocabulary(data)
    big, _ = train(data, nn.ModelConfig(0, embed_dim=300), TrainConfig(epochs=1), vocab=vocab)
    save_checkpoint(big, tmp_path / "big.ckpt")
    back = load_checkpoint(tmp_path / "big.ckpt", vocab=vocab)
    assert back.config == big.config
    for x, y in zip(big.params.arrays(), back.params.arrays()):
        assert x.dtype == y.dtype and x.tobytes() == y.tobytes()

    # exhaustive on a tiny checkpoint: every bit flip and every truncation
    tiny = Checkpoint(TINY, nn.init_params(TINY, 0), hashlib.sha256(b"v").digest())
    blob = checkpoint_bytes(tiny)
    rejected = 0
    for pos in range(len(blob)):
        for bit in range(8):
            bad = bytearray(blob)
            bad[pos] ^= 1 << bit
            with pytest.raises(CheckpointError):
                checkpoint_from_bytes(bytes(bad))
            rejected += 1
    for cut in range(len(blob)):
        with pytest.raises(CheckpointTruncatedError):
            checkpoint_from_bytes(blob[:cut])
        rejected += 1
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(blob + b"\x00")

    # sampled corruption of the full-size file on disk
    raw = (tmp_path / "big.ckpt").read_bytes()
    rng = np.random.default_rng(0)
    for pos in rng.choice(len(raw), 300, replace=False):
        bad = bytearray(raw)
        bad[pos] ^= int(rng.integers(1, 256))
        (tmp_path / "bad.ckpt").write_bytes(bytes(bad))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.ckpt")
        rejected += 1

    # a NaN with a valid checksum is still refused
    poisoned = tiny.params.copy()
    poisoned.head_b[0, 0] = np.nan
    with pytest.raises(CheckpointError):
        checkpoint_from_bytes(checkpoint_bytes(Checkpoint(TINY, poisoned, tiny.vocab_hash)))
    record_property("detail", f"bit-exact round trip of a {len(raw)}-byte checkpoint; {rejected} corruptions rejected")
