"""Small reverse-mode autodiff over dense float64 numpy arrays.

Enough to train the generator and critic MLPs: elementwise arithmetic with
row-vector broadcasting, matmul, the usual activations, softmax/sigmoid heads and
Gaussian reparameterization / negative log-likelihood.
"""
from __future__ import annotations

import math
import struct
import warnings
import zlib

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "parents", "_backward", "op", "requires_grad")

    def __init__(self, data, parents=(), op="", requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = None
        self.op = op
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def __pow__(self, p):
        return power(self, p)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def backward(self):
        backward(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _node(data, parents, op, backward_fn):
    out = Tensor(data, parents, op)
    out._backward = backward_fn
    return out


# -- primitives --------------------------------------------------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), "add", bw)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast(a.data, b.data, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), "mul", bw)


def neg(a):
    return _node(-a.data, (a,), "neg", lambda g: (-g,))


def power(a, p):
    if not isinstance(p, (int, float)):
        raise TypeError("only constant exponents are supported")

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _node(a.data**p, (a,), f"pow{p}", bw)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), "matmul", bw)


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, in)."""
    x = _lift(x)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"affine: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")

    def bw(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _node(x.data @ w.data + b.data, (x, w, b), "affine", bw)


def tanh(a):
    t = np.tanh(a.data)
    return _node(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def exp(a):
    e = np.exp(a.data)
    return _node(e, (a,), "exp", lambda g: (g * e,))


def log(a):
    return _node(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def sigmoid(a):
    s = np.empty_like(a.data)
    pos = a.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    s[~pos] = ez / (1.0 + ez)
    return _node(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def softmax(a):
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _node(s, (a,), "softmax", bw)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient is zero where clipping is active."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), "clamp", lambda g: (g * inside,))


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as e:
        raise ValueError(f"concat: {e}") from None
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(out, tensors, "concat", bw)


def take(a, idx):
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _node(out, (a,), "take", bw)


def tsum(a, axis=None):
    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _node(a.data.sum(axis=axis), (a,), "sum", bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


def gaussian_reparam(mu, log_std, eps):
    """``mu + exp(log_std) * eps`` with ``eps`` sampled outside the graph."""
    return add(mu, mul(exp(_lift(log_std)), np.asarray(eps, dtype=np.float64)))


def gaussian_nll(y, mu, log_std):
    """Elementwise ``0.5 * ((y - mu)^2 exp(-2 log_std) + 2 log_std + log 2pi)``."""
    y, mu, log_std = _lift(y), _lift(mu), _lift(log_std)
    _check_broadcast(y.data, mu.data, "gaussian_nll")
    _check_broadcast(mu.data, log_std.data, "gaussian_nll")
    r = y.data - mu.data
    inv_var = np.exp(-2.0 * log_std.data)
    out = 0.5 * (r * r * inv_var + 2.0 * log_std.data + _LOG_2PI)

    def bw(g):
        d_mu = -g * r * inv_var
        d_ls = g * (1.0 - r * r * inv_var)
        return (
            _unbroadcast(-d_mu, y.shape),
            _unbroadcast(d_mu, mu.shape),
            _unbroadcast(d_ls, log_std.shape),
        )

    return _node(out, (y, mu, log_std), "gaussian_nll", bw)


# -- backward ------------------------------------------------------------------


def _toposort(root):
    order = []
    state = {}  # id -> 1 visiting, 2 done
    stack = [(root, iter(root.parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        for p in it:
            s = state.get(id(p))
            if s is None:
                state[id(p)] = 1
                stack.append((p, iter(p.parents)))
                break
            if s == 1:
                raise ValueError("cycle detected in computation graph")
        else:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def backward(loss):
    """Reverse-mode sweep from a scalar ``loss``.

    Leaves (no parents) accumulate into ``.grad``; interior gradients are
    recomputed from scratch on every call.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node._accum(g)
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if pg is None:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg


# -- networks --------------------------------------------------------------------


class MLP:
    """Fully connected net with tanh hidden layers and a linear output."""

    def __init__(self, sizes, rng, out_scale=1.0):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.layers = []
        n_layers = len(self.sizes) - 1
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_in, n_out))
            if i == n_layers - 1:
                w *= out_scale
            self.layers.append(
                (Tensor(w, requires_grad=True), Tensor(np.zeros(n_out), requires_grad=True))
            )

    def parameters(self):
        return [p for wb in self.layers for p in wb]

    def __call__(self, x):
        h = _lift(x)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = affine(h, w, b)
            if i < last:
                h = tanh(h)
        return h

    def forward_numpy(self, x):
        h = np.asarray(x, dtype=np.float64)
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = h @ w.data + b.data
            if i < last:
                h = np.tanh(h)
        return h

    def get_flat(self):
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        i = 0
        for p in self.parameters():
            n = p.data.size
            p.data = flat[i : i + n].reshape(p.data.shape).copy()
            i += n
        if i != flat.size:
            raise ValueError(f"expected {i} weights, got {flat.size}")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.skipped = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        """Apply one bias-corrected update. Returns False if skipped."""
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            warnings.warn("Adam: non-finite gradient, update skipped", RuntimeWarning, stacklevel=2)
            return False
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


def adam_step(state, params, grads):
    """Functional form: ``state`` is an :class:`Adam` bound to ``params``."""
    if [id(p) for p in state.params] != [id(p) for p in params]:
        raise ValueError("Adam state is bound to a different parameter list")
    state.step(grads)
    return params


# -- checkpoints -------------------------------------------------------------------

NN_MAGIC = b"POPNN1"


class CheckpointError(ValueError):
    pass


def save_weights(path, sizes_list, weights_list, tail=None, meta=None):
    """Write a POPNN1 checkpoint.

    ``sizes_list`` holds the layer sizes of each network stored, ``weights_list``
    the matching flat weight vectors; ``tail`` is a free float vector (e.g. a
    learnable log std); ``meta`` is a ``str -> str`` dict.
    """
    meta = meta or {}
    meta_bytes = "\n".join(f"{k}={v}" for k, v in meta.items()).encode()
    tail = np.zeros(0) if tail is None else np.asarray(tail, dtype=np.float64).ravel()
    parts = [NN_MAGIC, struct.pack("<I", len(meta_bytes)), meta_bytes, struct.pack("<I", len(sizes_list))]
    for sizes, w in zip(sizes_list, weights_list):
        w = np.asarray(w, dtype="<f8").ravel()
        expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        if w.size != expected:
            raise ValueError(f"network {sizes} needs {expected} weights, got {w.size}")
        parts.append(struct.pack("<I", len(sizes)))
        parts.append(struct.pack(f"<{len(sizes)}I", *sizes))
        parts.append(w.tobytes())
    parts.append(struct.pack("<I", tail.size))
    parts.append(tail.astype("<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


def load_weights(path):
    """Inverse of :func:`save_weights`: returns (sizes_list, weights_list, tail, meta)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[: len(NN_MAGIC)] != NN_MAGIC:
        raise CheckpointError(f"{path}: not a POPNN1 checkpoint (magic {buf[:6]!r})")
    if len(buf) < len(NN_MAGIC) + 4 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise CheckpointError(f"{path}: checksum failure (truncated or corrupt)")
    off = len(NN_MAGIC)
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    text = buf[off : off + n].decode()
    off += n
    meta = dict(line.split("=", 1) for line in text.splitlines() if line)
    (n_nets,) = struct.unpack_from("<I", buf, off)
    off += 4
    sizes_list, weights_list = [], []
    for _ in range(n_nets):
        (k,) = struct.unpack_from("<I", buf, off)
        off += 4
        sizes = struct.unpack_from(f"<{k}I", buf, off)
        off += 4 * k
        count = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        weights_list.append(np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64))
        off += 8 * count
        sizes_list.append(tuple(sizes))
    (t,) = struct.unpack_from("<I", buf, off)
    off += 4
    tail = np.frombuffer(buf, dtype="<f8", count=t, offset=off).astype(np.float64)
    return sizes_list, weights_list, tail, meta
