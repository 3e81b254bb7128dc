"""Kernel backends: the compiled extension and the numpy fallback must agree."""

import numpy as np
import pytest

from c2vae.backend import _NumpyKernels, backend_name, kernels


def _maybe_cython():
    try:
        from c2vae._kernels import _core
    except ImportError:
        pytest.skip("compiled extension not built")
    return _core


def rng():
    return np.random.default_rng(42)


def test_active_backend_reported():
    assert backend_name() in ("cython", "numpy")
    assert kernels.all_finite(np.zeros(3))


def test_backends_agree_on_linear_algebra():
    core = _maybe_cython()
    g = rng()
    a, b = g.standard_normal((17, 9)), g.standard_normal((9, 13))
    bias = g.standard_normal(13)
    np.testing.assert_allclose(core.matmul(a, b), _NumpyKernels.matmul(a, b),
                               rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(core.linear(a, b, bias),
                               _NumpyKernels.linear(a, b, bias),
                               rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("fn", ["sigmoid", "tanh", "softplus", "relu",
                                "leaky_relu", "exp", "log"])
def test_backends_agree_elementwise(fn):
    core = _maybe_cython()
    g = rng()
    x = g.standard_normal((7, 11)) * 3.0
    if fn == "log":
        x = np.abs(x) + 0.1
    np.testing.assert_allclose(getattr(core, fn)(x),
                               getattr(_NumpyKernels, fn)(x),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("fn", ["sigmoid_bwd", "tanh_bwd", "softplus_bwd",
                                "relu_bwd", "leaky_relu_bwd"])
def test_backends_agree_elementwise_backward(fn):
    core = _maybe_cython()
    g = rng()
    x = g.standard_normal(64)
    grad = g.standard_normal(64)
    if fn in ("sigmoid_bwd", "tanh_bwd"):
        x = np.tanh(x)  # these take the activation output
    np.testing.assert_allclose(getattr(core, fn)(x, grad),
                               getattr(_NumpyKernels, fn)(x, grad),
                               rtol=1e-12, atol=1e-12)


def test_backends_agree_adam():
    core = _maybe_cython()
    g = rng()
    shapes = dict(p=g.standard_normal(33), g=g.standard_normal(33),
                  m=g.standard_normal(33) * 0.1, v=np.abs(g.standard_normal(33)))
    a = {k: v.copy() for k, v in shapes.items()}
    b = {k: v.copy() for k, v in shapes.items()}
    args = dict(lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, bc1=0.1, bc2=0.001)
    core.adam_update(a["p"], a["g"], a["m"], a["v"], **args)
    _NumpyKernels.adam_update(b["p"], b["g"], b["m"], b["v"], **args)
    for key in ("p", "m", "v"):
        np.testing.assert_allclose(a[key], b[key], rtol=1e-13, atol=1e-14)


def test_all_finite_cases():
    core = _maybe_cython()
    for impl in (core, _NumpyKernels):
        assert impl.all_finite(np.ones((3, 3)))
        assert not impl.all_finite(np.array([1.0, np.nan]))
        assert not impl.all_finite(np.array([np.inf]))
        assert impl.all_finite(np.zeros(0))
