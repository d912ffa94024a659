"""Time the numpy and numba kernel backends on a canonical-size training step.

    python3 benchmarks/bench_kernels.py [--batch 32] [--embed-dim 300] [--repeats 20]

Runs a batched forward + backward pass with each available backend and prints
median wall time per step and per kernel. Set MTABSA_DISABLE_NUMBA=1 to see
the pure-numpy path on its own.
"""

import argparse
import statistics
import time

import numpy as np

from mtabsa import kernels
from mtabsa import neuralnet as nn
from mtabsa.corpus import transform_labels


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def bench(backend, cfg, batch, repeats, seed=0):
    rng = np.random.default_rng(seed)
    params = nn.init_params(cfg, seed)
    ids = rng.integers(0, cfg.vocab_size, (batch, cfg.max_len))
    gold = np.stack([transform_labels(set()) for _ in range(batch)])
    k = kernels.set_backend(backend)
    try:
        ops = kernels.active()
        ops.gather_windows(params.embedding, ids, cfg.kernel_size)  # compile outside the timing
        trace = nn.forward_batch(params, ids)
        nn.backward_batch(params, trace, gold)
        z = rng.normal(size=(batch, cfg.num_positions, cfg.num_filters))
        pooled, argpos = ops.relu_maxpool(z)
        g = rng.normal(size=pooled.shape) * (pooled > 0)
        return {
            "gather_windows": _median_time(lambda: ops.gather_windows(params.embedding, ids, cfg.kernel_size), repeats),
            "relu_maxpool": _median_time(lambda: ops.relu_maxpool(z), repeats),
            "conv_backward": _median_time(
                lambda: ops.conv_backward(ids, params.embedding, params.conv_w, argpos, g), repeats
            ),
            "train_step": _median_time(
                lambda: nn.backward_batch(params, nn.forward_batch(params, ids), gold), repeats
            ),
        }
    finally:
        kernels.set_backend(k)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--embed-dim", type=int, default=300)
    ap.add_argument("--max-len", type=int, default=100)
    ap.add_argument("--vocab", type=int, default=2000)
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    cfg = nn.ModelConfig(args.vocab, embed_dim=args.embed_dim, max_len=args.max_len)
    results = {name: bench(name, cfg, args.batch, args.repeats) for name in kernels.available()}
    names = list(results)
    print(f"batch {args.batch}, d {args.embed_dim}, max_len {args.max_len}, median of {args.repeats}")
    print(f"{'kernel':<16}" + "".join(f"{n:>12}" for n in names) + ("  numba gain" if len(names) == 2 else ""))
    for kernel in results[names[0]]:
        row = [results[n][kernel] * 1e3 for n in names]
        line = f"{kernel:<16}" + "".join(f"{v:>10.3f}ms" for v in row)
        if len(names) == 2:
            line += f"{results['numpy'][kernel] / results['numba'][kernel]:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
