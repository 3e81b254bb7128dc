"""Numeric kernel selection: compiled extension when available, numpy otherwise.

The tensor layer routes its hot inner loops (GEMM-backed linear maps, fused
activations and their backward passes, the Adam update, finiteness scans)
through this module.  Two interchangeable implementations exist:

* ``c2vae._kernels._core`` — Cython, single-pass fused loops, BLAS dgemm;
* the numpy expressions below — no build step required.

Selection happens once at import.  ``C2VAE_BACKEND=numpy`` forces the
fallback, ``C2VAE_BACKEND=cython`` demands the extension (ImportError if it
was never built), anything else (default ``auto``) prefers the extension.
Both backends are deterministic run-to-run; they are not required to agree
bit-for-bit with each other (libm vs numpy SIMD transcendentals may differ
in the last ulp).
"""

import os

import numpy as np

LEAKY_SLOPE = 0.2


class _NumpyKernels:
    """Reference implementation; every kernel is a plain numpy expression."""

    name = "numpy"

    @staticmethod
    def matmul(a, b):
        return a @ b

    @staticmethod
    def linear(x, w, b):
        # (n,k) @ (k,m) + (m,) row bias
        return x @ w + b[None, :]

    @staticmethod
    def sigmoid(x):
        out = np.empty_like(x)
        np.negative(x, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)
        return out

    @staticmethod
    def sigmoid_bwd(y, g):
        return g * y * (1.0 - y)

    @staticmethod
    def tanh(x):
        return np.tanh(x)

    @staticmethod
    def tanh_bwd(y, g):
        return g * (1.0 - y * y)

    @staticmethod
    def softplus(x):
        # log1p(exp(-|x|)) + max(x, 0): stable on both tails
        return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)

    @staticmethod
    def softplus_bwd(x, g):
        return g / (1.0 + np.exp(-x))

    @staticmethod
    def relu(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def relu_bwd(x, g):
        return np.where(x > 0.0, g, 0.0)

    @staticmethod
    def leaky_relu(x):
        return np.where(x > 0.0, x, LEAKY_SLOPE * x)

    @staticmethod
    def leaky_relu_bwd(x, g):
        return np.where(x > 0.0, g, LEAKY_SLOPE * g)

    @staticmethod
    def exp(x):
        return np.exp(x)

    @staticmethod
    def log(x):
        return np.log(x)

    @staticmethod
    def adam_update(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        # in-place on p, m, v; bc1/bc2 are the bias-correction denominators
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

    @staticmethod
    def all_finite(x):
        return bool(np.isfinite(x).all())


def _load(choice):
    if choice == "numpy":
        return _NumpyKernels
    try:
        from c2vae._kernels import _core
    except ImportError:
        if choice == "cython":
            raise ImportError(
                "C2VAE_BACKEND=cython but the compiled extension is missing; "
                "build it with `pip install -e .` or drop the override"
            )
        return _NumpyKernels
    return _core


kernels = _load(os.environ.get("C2VAE_BACKEND", "auto").lower())


def backend_name():
    """Name of the active kernel set: 'cython' or 'numpy'."""
    return "cython" if kernels.name == "cython" else "numpy"
