import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydra_wm.core import kernels
from hydra_wm.core import _kernels_py as pyk

NATIVE = "native" in kernels.available_backends()
needs_native = pytest.mark.skipif(not NATIVE, reason="compiled extension not built")


def topk_oracle(row, k):
    """Full sort: descending score, ascending index among equals."""
    order = sorted(range(len(row)), key=lambda j: (-row[j], j))
    return sorted(order[:min(k, len(row))])


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()


def test_use_backend_round_trip():
    prev = kernels.use_backend("python")
    try:
        assert kernels.backend_name() == "python"
    finally:
        kernels.use_backend(prev)
    assert kernels.backend_name() == prev


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.use_backend("gpu")


@needs_native
@pytest.mark.parametrize("stride", [(1, 1, 1), (2, 4, 4), (1, 2, 3)])
def test_native_conv_matches_python(stride):
    from hydra_wm.core import _ext

    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 6, 8, 9))
    w = rng.standard_normal((4, 3, 2, 4, 3))
    out_n = _ext.conv3d_forward(x, w, stride)
    out_p = pyk.conv3d_forward(x, w, stride)
    assert np.allclose(out_n, out_p, rtol=0, atol=1e-12)
    g = rng.standard_normal(out_p.shape)
    for a, b in zip(_ext.conv3d_backward(x, w, g, stride), pyk.conv3d_backward(x, w, g, stride)):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


@needs_native
def test_native_topk_matches_python():
    from hydra_wm.core import _ext

    rng = np.random.default_rng(3)
    s = rng.integers(0, 4, size=(500, 9)).astype(np.float64)  # many ties
    for k in (1, 3, 9, 12):
        assert np.array_equal(_ext.topk_rows(s, k), pyk.topk_rows(s, k))


@pytest.mark.parametrize("backend", kernels.available_backends())
def test_topk_spec_example(backend):
    prev = kernels.use_backend(backend)
    try:
        s = np.array([[0.1, 0.9, 0.9, 0.2]])
        assert kernels.topk_rows(s, 2)[0].tolist() == [1, 2]
        assert kernels.topk_rows(s, 1)[0].tolist() == [1]
        assert kernels.topk_rows(s, 10)[0].tolist() == [0, 1, 2, 3]
    finally:
        kernels.use_backend(prev)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12), st.integers(1, 14))
def test_topk_matches_oracle(values, k):
    row = np.array(values, dtype=np.float64)
    for backend in kernels.available_backends():
        prev = kernels.use_backend(backend)
        try:
            got = kernels.topk_rows(row[None], k)[0].tolist()
        finally:
            kernels.use_backend(prev)
        assert got == topk_oracle(values, k)


def test_topk_scale_invariance(rng):
    s = rng.standard_normal((50, 8))
    assert np.array_equal(kernels.topk_rows(s, 3), kernels.topk_rows(s * 17.5, 3))
