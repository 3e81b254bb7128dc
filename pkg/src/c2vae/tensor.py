"""Dense float64 tensors with reverse-mode automatic differentiation.

Design:

* every tensor owns a C-contiguous ``float64`` numpy array;
* ops record a closure tape (``_parents`` + ``_bwd``) on their outputs, so
  each training step rebuilds a fresh graph and ``backward`` frees with it;
* broadcasting is restricted to identical shapes or tensor-with-python-scalar
  (callers reshape explicitly — this kills a whole class of silent bugs);
* every forward result is scanned for NaN/Inf and raises ``NonFiniteError``
  at the op boundary, so divergence is caught where it happens;
* scalars are 0-d tensors; ``backward`` seeds from a 0-d loss.

Kernels for the hot paths come from :mod:`c2vae.backend` (compiled extension
when built, numpy otherwise).
"""

import numpy as np

from .backend import LEAKY_SLOPE, kernels
from .errors import DomainError, NonFiniteError, ShapeError

# Every differentiable op exposed by this module. The gradient-check suite
# asserts it covers exactly this list, so additions here fail tests until a
# finite-difference case exists.
OP_NAMES = (
    "add", "sub", "mul", "div", "neg", "pow",
    "relu", "leaky_relu", "tanh", "sigmoid", "softplus", "exp", "log",
    "sqrt", "clamp",
    "matmul", "linear",
    "sum", "mean",
    "reshape", "slice_cols",
    "batched_outer", "diag_embed", "diagonal", "unit_diag",
    "batched_matvec", "cholesky",
)

_grad_enabled_mode = True


class no_grad:
    """Context manager that disables tape recording inside its block."""

    def __enter__(self):
        global _grad_enabled_mode
        self._prev = _grad_enabled_mode
        _grad_enabled_mode = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled_mode
        _grad_enabled_mode = self._prev
        return False


def _as_array(data):
    arr = np.ascontiguousarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A dense float64 array plus optional gradient tracking."""

    __slots__ = ("data", "grad", "grad_enabled", "_parents", "_bwd")

    def __init__(self, data, grad_enabled=False):
        self.data = _as_array(data)
        self.grad = None
        self.grad_enabled = bool(grad_enabled)
        self._parents = ()
        self._bwd = None

    # ---- introspection ----

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        """The underlying array. Treat as read-only unless you own the tensor."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad_enabled={self.grad_enabled})"

    # ---- gradient plumbing ----

    def detach(self):
        """Same data, no tape: gradient stops here."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.grad_enabled = False
        t._parents = ()
        t._bwd = None
        return t

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.grad_enabled:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep seeding d(self)/d(self) = 1. Scalar only."""
        if self.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.grad_enabled:
            raise ValueError("backward on a tensor with no gradient path")
        order = _toposort(self)
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)

    # ---- operator sugar ----

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_(self, p)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, op, parents, bwd):
    """Wrap an op result; records the tape only when a live parent exists."""
    if not kernels.all_finite(data):
        raise NonFiniteError(f"{op}: non-finite values in result")
    out = Tensor.__new__(Tensor)
    out.data = data if data.flags["C_CONTIGUOUS"] else np.ascontiguousarray(data)
    out.grad = None
    live = _grad_enabled_mode and any(p.grad_enabled for p in parents)
    out.grad_enabled = live
    out._parents = tuple(p for p in parents if p.grad_enabled) if live else ()
    out._bwd = bwd if live else None
    return out


def _check_same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ "
                         "(only identical shapes or tensor-scalar allowed)")


# ---- elementwise binary ----

def _binary(op, a, b, fwd_tt, bwd_a, bwd_b, fwd_ts=None, bwd_ts=None,
            fwd_st=None, bwd_st=None):
    """Dispatch tensor⊗tensor and tensor⊗scalar variants of a binary op."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_same_shape(op, a, b)
        data = fwd_tt(a.data, b.data)

        def bwd(g):
            a._accumulate(bwd_a(g, a.data, b.data))
            b._accumulate(bwd_b(g, a.data, b.data))

        return _make(data, op, (a, b), bwd)
    if isinstance(a, Tensor):
        c = float(b)
        data = fwd_ts(a.data, c)

        def bwd(g):
            a._accumulate(bwd_ts(g, a.data, c))

        return _make(data, op, (a,), bwd)
    if isinstance(b, Tensor):
        c = float(a)
        data = fwd_st(c, b.data)

        def bwd(g):
            b._accumulate(bwd_st(g, c, b.data))

        return _make(data, op, (b,), bwd)
    raise TypeError(f"{op}: at least one operand must be a Tensor")


def add(a, b):
    return _binary(
        "add", a, b,
        lambda x, y: x + y,
        lambda g, x, y: g, lambda g, x, y: g,
        fwd_ts=lambda x, c: x + c, bwd_ts=lambda g, x, c: g,
        fwd_st=lambda c, y: c + y, bwd_st=lambda g, c, y: g,
    )


def sub(a, b):
    return _binary(
        "sub", a, b,
        lambda x, y: x - y,
        lambda g, x, y: g, lambda g, x, y: -g,
        fwd_ts=lambda x, c: x - c, bwd_ts=lambda g, x, c: g,
        fwd_st=lambda c, y: c - y, bwd_st=lambda g, c, y: -g,
    )


def mul(a, b):
    return _binary(
        "mul", a, b,
        lambda x, y: x * y,
        lambda g, x, y: g * y, lambda g, x, y: g * x,
        fwd_ts=lambda x, c: x * c, bwd_ts=lambda g, x, c: g * c,
        fwd_st=lambda c, y: c * y, bwd_st=lambda g, c, y: g * c,
    )


def div(a, b):
    return _binary(
        "div", a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y),
        fwd_ts=lambda x, c: x / c, bwd_ts=lambda g, x, c: g / c,
        fwd_st=lambda c, y: c / y, bwd_st=lambda g, c, y: -g * c / (y * y),
    )


# ---- elementwise unary ----

def _unary(op, t, data, bwd_fn):
    def bwd(g):
        t._accumulate(bwd_fn(g))

    return _make(data, op, (t,), bwd)


def neg(t):
    return _unary("neg", t, -t.data, lambda g: -g)


def pow_(t, p):
    p = float(p)
    if p != int(p) and np.any(t.data < 0.0):
        raise DomainError("pow: negative base with non-integer exponent")
    x = t.data
    return _unary("pow", t, x ** p, lambda g: g * p * x ** (p - 1.0))


def relu(t):
    x = t.data
    return _unary("relu", t, kernels.relu(x), lambda g: kernels.relu_bwd(x, g))


def leaky_relu(t, slope=LEAKY_SLOPE):
    if slope != LEAKY_SLOPE:
        x = t.data
        return _unary("leaky_relu", t, np.where(x > 0, x, slope * x),
                      lambda g: np.where(x > 0, g, slope * g))
    x = t.data
    return _unary("leaky_relu", t, kernels.leaky_relu(x),
                  lambda g: kernels.leaky_relu_bwd(x, g))


def tanh(t):
    y = kernels.tanh(t.data)
    return _unary("tanh", t, y, lambda g: kernels.tanh_bwd(y, g))


def sigmoid(t):
    y = kernels.sigmoid(t.data)
    return _unary("sigmoid", t, y, lambda g: kernels.sigmoid_bwd(y, g))


def softplus(t):
    x = t.data
    return _unary("softplus", t, kernels.softplus(x),
                  lambda g: kernels.softplus_bwd(x, g))


def exp(t):
    y = kernels.exp(t.data)
    return _unary("exp", t, y, lambda g: g * y)


def log(t):
    if np.any(t.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    x = t.data
    return _unary("log", t, kernels.log(x), lambda g: g / x)


def sqrt(t):
    if np.any(t.data < 0.0):
        raise DomainError("sqrt: input must be nonnegative")
    y = np.sqrt(t.data)
    return _unary("sqrt", t, y, lambda g: g / (2.0 * y))


def clamp(t, lo, hi):
    """Hard clip; gradient passes only where the input lies inside [lo, hi]."""
    x = t.data
    inside = (x >= lo) & (x <= hi)
    return _unary("clamp", t, np.clip(x, lo, hi), lambda g: g * inside)


# ---- linear algebra ----

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    data = kernels.matmul(a.data, b.data)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if a.grad_enabled:
            a._accumulate(kernels.matmul(g, b.data.T.copy()))
        if b.grad_enabled:
            b._accumulate(kernels.matmul(a.data.T.copy(), g))

    return _make(data, "matmul", (a, b), bwd)


def linear(x, w, b):
    """Fused affine map: x @ w + row-broadcast bias. x: (n,k), w: (k,m), b: (m,)."""
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear: want (n,k),(k,m),(m,), got {x.shape},{w.shape},{b.shape}")
    if x.shape[1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ShapeError(f"linear: dims disagree, {x.shape} @ {w.shape} + {b.shape}")
    data = kernels.linear(x.data, w.data, b.data)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if x.grad_enabled:
            x._accumulate(kernels.matmul(g, w.data.T.copy()))
        if w.grad_enabled:
            w._accumulate(kernels.matmul(x.data.T.copy(), g))
        if b.grad_enabled:
            b._accumulate(g.sum(axis=0))

    return _make(data, "linear", (x, w, b), bwd)


# ---- reductions ----

def _reduce(op, t, axis, data, scale):
    shape = t.shape

    def bwd(g):
        if axis is None:
            t._accumulate(np.full(shape, float(g) * scale))
        else:
            t._accumulate(np.broadcast_to(np.expand_dims(g, axis) * scale, shape).copy())

    return _make(data, op, (t,), bwd)


def _check_axis(op, t, axis):
    if axis is not None and not (-t.ndim <= axis < t.ndim):
        raise ShapeError(f"{op}: axis {axis} invalid for shape {t.shape}")


def sum_(t, axis=None):
    _check_axis("sum", t, axis)
    return _reduce("sum", t, axis, t.data.sum(axis=axis), 1.0)


def mean(t, axis=None):
    _check_axis("mean", t, axis)
    n = t.size if axis is None else t.shape[axis]
    if n == 0:
        raise ShapeError("mean: empty reduction")
    return _reduce("mean", t, axis, t.data.mean(axis=axis), 1.0 / n)


# ---- shape ----

def reshape(t, shape):
    data = t.data.reshape(shape)
    orig = t.shape

    def bwd(g):
        t._accumulate(g.reshape(orig))

    return _make(np.ascontiguousarray(data), "reshape", (t,), bwd)


def slice_cols(t, start, stop):
    """Columns [start, stop) of a 2-D tensor."""
    if t.ndim != 2:
        raise ShapeError(f"slice_cols: expects 2-D, got {t.shape}")
    if not (0 <= start < stop <= t.shape[1]):
        raise ShapeError(f"slice_cols: bad range [{start},{stop}) for {t.shape}")
    data = np.ascontiguousarray(t.data[:, start:stop])
    shape = t.shape

    def bwd(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        t._accumulate(full)

    return _make(data, "slice_cols", (t,), bwd)


# ---- batched small-matrix ops (leading batch dims optional) ----

def batched_outer(v):
    """v ↦ v vᵀ per batch row: (..., d) → (..., d, d)."""
    data = v.data[..., :, None] * v.data[..., None, :]

    def bwd(g):
        v._accumulate(np.einsum("...ij,...j->...i", g, v.data)
                      + np.einsum("...ij,...i->...j", g, v.data))

    return _make(np.ascontiguousarray(data), "batched_outer", (v,), bwd)


def diag_embed(w):
    """(..., d) → (..., d, d) with w on the diagonal."""
    d = w.shape[-1]
    data = np.zeros(w.shape + (d,))
    idx = np.arange(d)
    data[..., idx, idx] = w.data

    def bwd(g):
        w._accumulate(g[..., idx, idx])

    return _make(data, "diag_embed", (w,), bwd)


def diagonal(m):
    """(..., d, d) → (..., d)."""
    _check_square("diagonal", m)
    d = m.shape[-1]
    idx = np.arange(d)
    data = np.ascontiguousarray(m.data[..., idx, idx])

    def bwd(g):
        full = np.zeros(m.shape)
        full[..., idx, idx] = g
        m._accumulate(full)

    return _make(data, "diagonal", (m,), bwd)


def unit_diag(m):
    """Copy with the diagonal forced to exactly 1 (its gradient is dropped)."""
    _check_square("unit_diag", m)
    d = m.shape[-1]
    idx = np.arange(d)
    data = m.data.copy()
    data[..., idx, idx] = 1.0

    def bwd(g):
        masked = np.array(g, copy=True)
        masked[..., idx, idx] = 0.0
        m._accumulate(masked)

    return _make(data, "unit_diag", (m,), bwd)


def batched_matvec(m, v):
    """(..., d, d) with (..., d) → (..., d)."""
    _check_square("batched_matvec", m)
    if m.shape[:-1] != v.shape:
        raise ShapeError(f"batched_matvec: {m.shape} with {v.shape}")
    data = np.einsum("...ij,...j->...i", m.data, v.data)

    def bwd(g):
        if m.grad_enabled:
            m._accumulate(np.einsum("...i,...j->...ij", g, v.data))
        if v.grad_enabled:
            v._accumulate(np.einsum("...ij,...i->...j", m.data, g))

    return _make(np.ascontiguousarray(data), "batched_matvec", (m, v), bwd)


def _check_square(op, m):
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ShapeError(f"{op}: expects square last two dims, got {m.shape}")


def cholesky(m):
    """Lower Cholesky factor of (batched) SPD matrices.

    Raises numpy's LinAlgError on failure; jitter policy lives in the caller.
    """
    _check_square("cholesky", m)
    L = np.linalg.cholesky(m.data)
    Lt = np.swapaxes(L, -1, -2)
    d = m.shape[-1]
    idx = np.arange(d)

    def bwd(g):
        # Murray (2016) reverse rule: Σ̄ = ½(S + Sᵀ),
        # S = L^{-T} Φ(Lᵀ Ḡ) L^{-1}, Φ = lower triangle with halved diagonal.
        P = np.tril(Lt @ g)
        P[..., idx, idx] *= 0.5
        X = np.linalg.solve(Lt, P)
        S = np.swapaxes(np.linalg.solve(Lt, np.swapaxes(X, -1, -2)), -1, -2)
        m._accumulate(0.5 * (S + np.swapaxes(S, -1, -2)))

    return _make(np.ascontiguousarray(L), "cholesky", (m,), bwd)
