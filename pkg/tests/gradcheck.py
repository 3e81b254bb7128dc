"""Central finite-difference oracle for gradient verification.

The oracle is independent of the autodiff path: it re-evaluates the forward
function at perturbed inputs (step 1e-5, 64-bit) and compares the secant
slope against the backward pass.
"""

import numpy as np

from c2vae.tensor import Tensor

FD_STEP = 1e-5


def fd_gradients(build, arrays, h=FD_STEP):
    """Central-difference gradients of ``build(*tensors) -> scalar Tensor``
    with respect to every entry of every array in ``arrays``."""
    grads = []
    for arr in arrays:
        fd = np.zeros_like(arr)
        flat, fd_flat = arr.ravel(), fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = build(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig - h
            fm = build(*[Tensor(a) for a in arrays]).item()
            flat[i] = orig
            fd_flat[i] = (fp - fm) / (2.0 * h)
        grads.append(fd)
    return grads


def autodiff_gradients(build, arrays):
    tensors = [Tensor(a, grad_enabled=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()
    return [np.zeros_like(a) if t.grad is None else t.grad
            for t, a in zip(tensors, arrays)]


def max_relative_error(build, arrays, h=FD_STEP, floor=1e-6):
    """max over entries of |ad − fd| / max(|ad|, |fd|, floor)."""
    ad = autodiff_gradients(build, arrays)
    fd = fd_gradients(build, arrays, h=h)
    worst = 0.0
    for a, f in zip(ad, fd):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float((np.abs(a - f) / denom).max()))
    return worst


def assert_gradients_match(build, arrays, rtol=1e-4, h=FD_STEP, floor=1e-6):
    err = max_relative_error(build, arrays, h=h, floor=floor)
    assert err < rtol, f"autodiff/finite-difference mismatch: rel err {err:.3e}"
