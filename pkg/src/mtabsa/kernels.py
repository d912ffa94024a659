"""Hot loops of the CNN: window gathering, fused ReLU + global max pooling,
and the sparse convolution backward pass.

Every kernel exists twice: an explicit-loop version compiled with numba and
a vectorized numpy version. Both compute the same quantities; they may
differ in the last ulp because summation order differs. The numba set is
active when numba is importable and not disabled through the environment.
"""

from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import HAVE_NUMBA, njit

# --------------------------------------------------------------------------
# numpy implementations


def gather_windows_np(table, ids, k):
    """(B, T) ids -> (B, T-k+1, k*d) stacked embedding windows."""
    x = table[ids]  # (B, T, d)
    b, t, d = x.shape
    win = sliding_window_view(x, k, axis=1)  # (B, P, d, k)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, t - k + 1, k * d)


def relu_maxpool_np(z):
    """ReLU then max over positions; ties go to the smallest position."""
    r = np.maximum(z, 0.0)
    pos = r.argmax(axis=1)
    pooled = np.take_along_axis(r, pos[:, None, :], axis=1)[:, 0, :]
    return pooled, pos.astype(np.int64)


def conv_backward_np(ids, table, weights, argpos, g):
    """Gradients of conv weights, biases and embedding table.

    ``g`` is the loss gradient at the pooled (post-ReLU) outputs, already
    masked to zero where the ReLU was inactive. Only the winning window of
    each filter receives gradient.
    """
    bsz, nf = g.shape
    k = weights.shape[1]
    rows = np.arange(bsz)[:, None, None]
    tok = ids[rows, argpos[:, :, None] + np.arange(k)]  # (B, F, k)
    d_w = np.einsum("bf,bfkd->fkd", g, table[tok])
    d_b = g.sum(axis=0)
    d_table = np.zeros_like(table)
    np.add.at(d_table, tok, g[:, :, None, None] * weights[None])
    return d_w, d_b, d_table


# --------------------------------------------------------------------------
# numba implementations


@njit(cache=True, nogil=True)
def gather_windows_nb(table, ids, k):
    bsz, t = ids.shape
    d = table.shape[1]
    p = t - k + 1
    out = np.empty((bsz, p, k * d))
    for b in range(bsz):
        for s in range(p):
            for j in range(k):
                tok = ids[b, s + j]
                for c in range(d):
                    out[b, s, j * d + c] = table[tok, c]
    return out


@njit(cache=True, nogil=True)
def relu_maxpool_nb(z):
    bsz, p, nf = z.shape
    pooled = np.empty((bsz, nf))
    pos = np.zeros((bsz, nf), dtype=np.int64)
    for b in range(bsz):
        for f in range(nf):
            best = z[b, 0, f]
            if best < 0.0:
                best = 0.0
            arg = 0
            for s in range(1, p):
                v = z[b, s, f]
                if v > best:
                    best = v
                    arg = s
            pooled[b, f] = best
            pos[b, f] = arg
    return pooled, pos


@njit(cache=True, nogil=True)
def conv_backward_nb(ids, table, weights, argpos, g):
    bsz, nf = g.shape
    k = weights.shape[1]
    d = weights.shape[2]
    d_w = np.zeros_like(weights)
    d_b = np.zeros(nf)
    d_table = np.zeros_like(table)
    for b in range(bsz):
        for f in range(nf):
            gv = g[b, f]
            if gv == 0.0:
                continue
            d_b[f] += gv
            start = argpos[b, f]
            for j in range(k):
                tok = ids[b, start + j]
                for c in range(d):
                    d_w[f, j, c] += gv * table[tok, c]
                    d_table[tok, c] += gv * weights[f, j, c]
    return d_w, d_b, d_table


NUMPY = SimpleNamespace(
    name="numpy",
    gather_windows=gather_windows_np,
    relu_maxpool=relu_maxpool_np,
    conv_backward=conv_backward_np,
)

NUMBA = (
    SimpleNamespace(
        name="numba",
        gather_windows=gather_windows_nb,
        relu_maxpool=relu_maxpool_nb,
        conv_backward=conv_backward_nb,
    )
    if HAVE_NUMBA
    else None
)

_active = NUMBA if NUMBA is not None else NUMPY


def active():
    return _active


def available():
    return [b.name for b in (NUMBA, NUMPY) if b is not None]


def set_backend(name):
    """Switch the process-wide kernel set; returns the previous name."""
    global _active
    previous = _active.name
    if name == "numpy":
        _active = NUMPY
    elif name == "numba":
        if NUMBA is None:
            raise RuntimeError("numba backend unavailable (not installed or disabled)")
        _active = NUMBA
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return previous
