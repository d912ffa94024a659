import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtabsa import kernels

needs_numba = pytest.mark.skipif(kernels.NUMBA is None, reason="numba backend unavailable")


def _case(seed, bsz=4, t=9, vocab=12, d=5, nf=7, k=3):
    rng = np.random.default_rng(seed)
    table = rng.normal(size=(vocab, d))
    ids = rng.integers(0, vocab, size=(bsz, t))
    weights = rng.normal(size=(nf, k, d))
    z = rng.normal(size=(bsz, t - k + 1, nf))
    return rng, table, ids, weights, z


def test_gather_windows_layout():
    table = np.arange(12.0).reshape(6, 2)
    ids = np.array([[0, 5, 2, 3]])
    out = kernels.NUMPY.gather_windows(table, ids, 3)
    assert out.shape == (1, 2, 6)
    assert out[0, 0].tolist() == [0, 1, 10, 11, 4, 5]
    assert out[0, 1].tolist() == [10, 11, 4, 5, 6, 7]


def test_relu_maxpool_ties_and_dead_columns():
    z = np.array([[[1.0, -3.0, 2.0], [1.0, -1.0, 5.0], [0.5, -2.0, 5.0]]])
    pooled, pos = kernels.NUMPY.relu_maxpool(z)
    assert pooled.tolist() == [[1.0, 0.0, 5.0]]
    assert pos.tolist() == [[0, 0, 1]]


@needs_numba
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(3, 12))
def test_backends_agree(seed, bsz, t):
    rng, table, ids, weights, z = _case(seed, bsz=bsz, t=t)
    a = kernels.NUMPY.gather_windows(table, ids, 3)
    b = kernels.NUMBA.gather_windows(table, ids, 3)
    assert np.array_equal(a, b)

    pa, qa = kernels.NUMPY.relu_maxpool(z)
    pb, qb = kernels.NUMBA.relu_maxpool(z)
    assert np.array_equal(pa, pb) and np.array_equal(qa, qb)

    g = rng.normal(size=pa.shape) * (pa > 0)
    ga = kernels.NUMPY.conv_backward(ids, table, weights, qa, g)
    gb = kernels.NUMBA.conv_backward(ids, table, weights, qa, g)
    for x, y in zip(ga, gb):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


@needs_numba
def test_relu_maxpool_tie_rule_numba():
    z = np.zeros((1, 4, 2))
    z[0, 1, 0] = z[0, 3, 0] = 2.0
    pooled, pos = kernels.NUMBA.relu_maxpool(z)
    assert pos.tolist() == [[1, 0]]


def test_set_backend_roundtrip():
    prev = kernels.set_backend("numpy")
    try:
        assert kernels.active().name == "numpy"
    finally:
        kernels.set_backend(prev)
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")


def test_env_flag_forces_numpy():
    env = dict(os.environ, MTABSA_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from mtabsa import kernels; print(kernels.active().name, kernels.available())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.split()[0] == "numpy"
    assert "numba" not in out.stdout
