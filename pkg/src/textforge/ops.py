"""Differentiable operations building the autodiff tape.

Forward arithmetic is delegated to kernels so the exported-graph interpreter
computes identical values. Backward closures return one gradient per parent
(None for inputs that do not need one).
"""

import numpy as np

from . import kernels
from .errors import IdOutOfRange, ShapeMismatch
from .tensor import TapeNode, Tensor

F32 = np.float32


def _tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch("matmul expects two rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul: inner dims %d vs %d" % (a.shape[1], b.shape[0]))
    out_data = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out_data, TapeNode((a, b), backward))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b over the last axis; x may carry leading batch dims."""
    out_data = kernels.linear(x.data, w.data, b.data)
    k = x.shape[-1]
    m = w.shape[1]

    def backward(g):
        g2 = g.reshape(-1, m)
        x2 = x.data.reshape(-1, k)
        return (g2 @ w.data.T).reshape(x.data.shape), x2.T @ g2, g2.sum(axis=0)

    return Tensor(out_data, TapeNode((x, w, b), backward))


def _binary(a, b, fwd, da, db):
    if a.shape != b.shape:
        raise ShapeMismatch("elementwise op on shapes %s vs %s" % (a.shape, b.shape))
    out_data = fwd(a.data, b.data)

    def backward(g):
        return da(g, a.data, b.data), db(g, a.data, b.data)

    return Tensor(out_data, TapeNode((a, b), backward))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y: g * y, lambda g, x, y: g * x)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out_data * out_data),)

    return Tensor(out_data, TapeNode((x,), backward))


def sigmoid(x: Tensor) -> Tensor:
    out_data = kernels.sigmoid(x.data)

    def backward(g):
        return (g * out_data * (1 - out_data),)

    return Tensor(out_data, TapeNode((x,), backward))


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, F32(0.0))

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor(out_data, TapeNode((x,), backward))


_ELEMENTWISE = {"add": add, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name over the supported pointwise ops."""
    if op not in _ELEMENTWISE:
        raise ValueError("unknown elementwise op %r (have %s)" % (op, sorted(_ELEMENTWISE)))
    return _ELEMENTWISE[op](*args)


def mul_scalar(x: Tensor, s: float) -> Tensor:
    s = F32(s)
    out_data = x.data * s

    def backward(g):
        return (g * s,)

    return Tensor(out_data, TapeNode((x,), backward))


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return Tensor(out_data, TapeNode((x,), backward))


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_data, TapeNode(tuple(tensors), backward))


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=F32)

    def backward(g):
        return (np.broadcast_to(g, x.data.shape).astype(F32),)

    return Tensor(out_data, TapeNode((x,), backward))


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of table by integer ids of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IdOutOfRange("id outside [0, %d)" % n_rows)
    out_data = table.data[ids]

    def backward(g):
        dtable = np.zeros_like(table.data)
        np.add.at(dtable, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (dtable,)

    return Tensor(out_data, TapeNode((table,), backward))


def conv1d_maxpool(x: Tensor, filters: Tensor, mask) -> Tensor:
    mask = np.asarray(mask, dtype=F32)
    out_data, cache = kernels.conv_maxpool(x.data, filters.data, mask, want_cache=True)

    def backward(g):
        return kernels.conv_maxpool_backward(cache, g)

    return Tensor(out_data, TapeNode((x, filters), backward))


def lstm_seq(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, mask, reverse=False) -> Tensor:
    mask = np.asarray(mask, dtype=F32)
    out_data, cache = kernels.lstm_seq(x.data, w_ih.data, w_hh.data, bias.data, mask,
                                       reverse=reverse, want_cache=True)

    def backward(g):
        return kernels.lstm_seq_backward(cache, g)

    return Tensor(out_data, TapeNode((x, w_ih, w_hh, bias), backward))


def self_attention(h: Tensor, w1: Tensor, w2: Tensor, mask) -> Tensor:
    mask = np.asarray(mask, dtype=F32)
    out_data, cache = kernels.self_attention(h.data, w1.data, w2.data, mask, want_cache=True)

    def backward(g):
        return kernels.self_attention_backward(cache, g)

    return Tensor(out_data, TapeNode((h, w1, w2), backward))


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    targets = np.asarray(targets, dtype=np.int64)
    mask = None if mask is None else np.asarray(mask, dtype=F32)
    loss, cache = kernels.softmax_cross_entropy(logits.data, targets, mask, want_cache=True)

    def backward(g):
        return (kernels.softmax_cross_entropy_backward(cache, g),)

    return Tensor(loss, TapeNode((logits,), backward))


def finite_diff_check(f, x: Tensor, eps: float = 1e-3) -> float:
    """Compare autodiff gradients of scalar f(x) against central differences.

    Returns max over components of |g_ad - g_fd| / max(1, |g_fd|). f is
    re-evaluated with perturbed x.data, so it must be a pure function of x.
    """
    x.grad = None
    out = f(x)
    out.backward()
    g_ad = x.grad if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    base = flat.copy()
    g_fd = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        flat[i] = base[i] + eps
        hi_x = float(flat[i])
        hi = float(f(x).data)
        flat[i] = base[i] - eps
        lo_x = float(flat[i])
        lo = float(f(x).data)
        flat[i] = base[i]
        g_fd[i] = (hi - lo) / (hi_x - lo_x)

    if flat.size == 0:
        return 0.0
    err = np.abs(g_ad.reshape(-1).astype(np.float64) - g_fd)
    denom = np.maximum(1.0, np.abs(g_fd))
    return float((err / denom).max())
