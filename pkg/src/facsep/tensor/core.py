"""Minimal reverse-mode automatic differentiation over dense real arrays.

Eager, tape-based: every op computes its value immediately and records a
backward closure; ``backward`` replays the tape in reverse topological
order. The op set is exactly what the package's encoder/decoder and the
variational inner loop need; every op has a finite-difference test.

Storage defaults to float32; reductions accumulate in float64. Gradient
checks run the engine in float64 (pass float64 leaves).
"""

import numpy as np

from .. import _kernels

DEFAULT_DTYPE = np.float32

_LOG_2PI = float(np.log(2.0 * np.pi))


class Tensor:
    """A dense array plus an optional gradient and tape record."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None, op="leaf", parents=()):
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad=None):
        backward(self, grad)

    # Operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, dtype=DEFAULT_DTYPE):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, op, parents):
    track = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=track, op=op, parents=parents if track else ())


def _accumulate(t, grad):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad.astype(t.data.dtype, copy=False)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def topo_order(output):
    """Tape nodes in topological order (inputs before consumers)."""
    order, seen, stack = [], set(), [(output, False)]
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


def backward(output, grad=None):
    """Reverse-mode sweep from ``output``; accumulates into ``.grad``."""
    if not output.requires_grad:
        raise ValueError("backward: output does not require grad (no recorded graph)")
    if grad is None:
        if output.data.size != 1:
            raise ValueError(
                f"backward: output has shape {output.shape}; pass an explicit "
                "gradient for non-scalar outputs"
            )
        grad = np.ones_like(output.data)
    output.grad = np.asarray(grad, dtype=output.data.dtype).reshape(output.shape)
    for node in reversed(topo_order(output)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, "add", (a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward = _bw
    return out


def neg(a):
    a = _as_tensor(a)
    out = _make(-a.data, "neg", (a,))
    out._backward = lambda g: _accumulate(a, -g)
    return out


def sub(a, b):
    return add(a, neg(_as_tensor(b)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    out = _make(data, "mul", (a, b))

    def _bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward = _bw
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shapes {a.shape} x {b.shape} incompatible")
    out = _make(a.data @ b.data, "matmul", (a, b))

    def _bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = _bw
    return out


def relu(a):
    a = _as_tensor(a)
    out = _make(np.maximum(a.data, 0), "relu", (a,))
    out._backward = lambda g: _accumulate(a, g * (a.data > 0))
    return out


def exp(a):
    a = _as_tensor(a)
    out = _make(np.exp(a.data), "exp", (a,))
    out._backward = lambda g: _accumulate(a, g * out.data)
    return out


def log(a):
    a = _as_tensor(a)
    out = _make(np.log(a.data), "log", (a,))
    out._backward = lambda g: _accumulate(a, g / a.data)
    return out


def maximum_const(a, floor):
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = _as_tensor(a)
    out = _make(np.maximum(a.data, floor), "maximum_const", (a,))
    out._backward = lambda g: _accumulate(a, g * (a.data > floor))
    return out


def clamp(a, lo, hi):
    """Elementwise clip to [lo, hi]; gradient passes strictly inside."""
    a = _as_tensor(a)
    out = _make(np.clip(a.data, lo, hi), "clamp", (a,))
    out._backward = lambda g: _accumulate(a, g * ((a.data > lo) & (a.data < hi)))
    return out


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape):
    a = _as_tensor(a)
    out = _make(a.data.reshape(shape), "reshape", (a,))
    out._backward = lambda g: _accumulate(a, g.reshape(a.shape))
    return out


def transpose2d(a):
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose2d: expected 2-d, got shape {a.shape}")
    out = _make(np.ascontiguousarray(a.data.T), "transpose2d", (a,))
    out._backward = lambda g: _accumulate(a, g.T)
    return out


def concat(parts, axis=0):
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = _make(data, "concat", tuple(parts))
    sizes = [p.shape[axis] for p in parts]

    def _bw(g):
        offset = 0
        for p, size in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            _accumulate(p, g[tuple(sl)])
            offset += size

    out._backward = _bw
    return out


def crop(a, axis, start, stop):
    """Contiguous slice [start:stop) along one axis."""
    a = _as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    out = _make(a.data[tuple(sl)], "crop", (a,))

    def _bw(g):
        full = np.zeros_like(a.data)
        full[tuple(sl)] = g
        _accumulate(a, full)

    out._backward = _bw
    return out


def avg_pool_pairs(a, axis=0):
    """Mean over adjacent index pairs along ``axis``; an odd tail element
    passes through unchanged. Length n -> ceil(n / 2)."""
    a = _as_tensor(a)
    x = np.moveaxis(a.data, axis, 0)
    n = x.shape[0]
    half = n // 2
    pooled = 0.5 * (x[0 : 2 * half : 2] + x[1 : 2 * half : 2])
    if n % 2:
        pooled = np.concatenate([pooled, x[-1:]], axis=0)
    out = _make(np.moveaxis(pooled, 0, axis), "avg_pool_pairs", (a,))

    def _bw(g):
        gm = np.moveaxis(g, axis, 0)
        full = np.empty_like(x)
        full[0 : 2 * half : 2] = 0.5 * gm[:half]
        full[1 : 2 * half : 2] = 0.5 * gm[:half]
        if n % 2:
            full[-1] = gm[-1]
        _accumulate(a, np.moveaxis(full, 0, axis))

    out._backward = _bw
    return out


def repeat_pairs(a, length, axis=0):
    """Repeat each element twice along ``axis`` and crop to ``length``
    (inverse of the stride-2 time halving; length in [2n-1, 2n])."""
    a = _as_tensor(a)
    x = np.moveaxis(a.data, axis, 0)
    if not x.shape[0] * 2 - 1 <= length <= x.shape[0] * 2:
        raise ValueError(
            f"repeat_pairs: cannot produce length {length} from {x.shape[0]}"
        )
    rep = np.repeat(x, 2, axis=0)[:length]
    out = _make(np.moveaxis(rep, 0, axis), "repeat_pairs", (a,))

    def _bw(g):
        gm = np.moveaxis(g, axis, 0)
        pad = np.zeros((x.shape[0] * 2 - length,) + gm.shape[1:], dtype=gm.dtype)
        gm = np.concatenate([gm, pad], axis=0)
        _accumulate(a, np.moveaxis(gm[0::2] + gm[1::2], 0, axis))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    # Accumulate in float64 regardless of storage dtype.
    data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _make(data.astype(a.dtype), "reduce_sum", (a,))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    out._backward = _bw
    return out


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    data = np.mean(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _make(data.astype(a.dtype), "reduce_mean", (a,))

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape) / count)

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# 1-d convolutions (channels-first: x is (C, T))
# ---------------------------------------------------------------------------


def _conv_core(x, w, stride):
    """Correlation with 'same' padding: x (Ci, T), w (Co, Ci, K) -> (Co, T_out),
    T_out = floor((T + 2p - K) / stride) + 1, p = (K - 1) // 2."""
    ci, t = x.shape
    co, _, k = w.shape
    p = (k - 1) // 2
    xp = np.zeros((ci, t + 2 * p), dtype=x.dtype)
    xp[:, p : p + t] = x
    t_out = (t + 2 * p - k) // stride + 1
    s0, s1 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (ci, k, t_out), (s0, s1, s1 * stride)
    ).reshape(ci * k, t_out)
    return w.reshape(co, ci * k) @ cols


def _conv_adjoint_core(g, w, stride, t_in):
    """Adjoint of _conv_core in its x argument: g (Co, T_out) -> (Ci, T_in)."""
    co, t_out = g.shape
    _, ci, k = w.shape
    p = (k - 1) // 2
    xp = np.zeros((ci, t_in + 2 * p), dtype=g.dtype)
    for kk in range(k):
        xp[:, kk : kk + stride * (t_out - 1) + 1 : stride] += w[:, :, kk].T @ g
    return xp[:, p : p + t_in]


def _conv_weight_grad(g, x, k, stride):
    """dL/dw for _conv_core: g (Co, T_out), x (Ci, T) -> (Co, Ci, K)."""
    ci, t = x.shape
    co, t_out = g.shape
    p = (k - 1) // 2
    xp = np.zeros((ci, t + 2 * p), dtype=x.dtype)
    xp[:, p : p + t] = x
    dw = np.empty((co, ci, k), dtype=x.dtype)
    for kk in range(k):
        window = xp[:, kk : kk + stride * (t_out - 1) + 1 : stride]
        dw[:, :, kk] = g @ window.T
    return dw


def conv1d(x, w, bias=None, stride=1):
    """1-d convolution over time, 'same' padding.

    x: (C_in, T); w: (C_out, C_in, K), K odd; stride 1 or 2.
    Output length is T for stride 1 and ceil(T / 2) for stride 2.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ValueError(f"conv1d: shapes x{x.shape}, w{w.shape} incompatible")
    if stride not in (1, 2):
        raise ValueError(f"conv1d: stride {stride} unsupported")
    data = _conv_core(x.data, w.data, stride)
    parents = (x, w)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (w.shape[0],):
            raise ValueError(f"conv1d: bias shape {bias.shape} != ({w.shape[0]},)")
        data = data + bias.data[:, None]
        parents = (x, w, bias)
    out = _make(data, "conv1d", parents)
    t_in = x.shape[1]

    def _bw(g):
        _accumulate(x, _conv_adjoint_core(g, w.data, stride, t_in))
        _accumulate(w, _conv_weight_grad(g, x.data, w.shape[2], stride))
        if bias is not None:
            _accumulate(bias, g.sum(axis=1))

    out._backward = _bw
    return out


def transposed_conv1d(x, w, bias=None, stride=1):
    """Transposed 1-d convolution (adjoint of conv1d), 'same' padding.

    x: (C_in, T); w: (C_in, C_out, K); output (C_out, stride * T).
    For stride 2 the output length is exactly 2 * T, mirroring a stride-2
    conv1d applied to an even-length input.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[0] != w.shape[0]:
        raise ValueError(
            f"transposed_conv1d: shapes x{x.shape}, w{w.shape} incompatible"
        )
    if stride not in (1, 2):
        raise ValueError(f"transposed_conv1d: stride {stride} unsupported")
    t_out = stride * x.shape[1]
    data = _conv_adjoint_core(x.data, w.data, stride, t_out)
    parents = (x, w)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (w.shape[1],):
            raise ValueError(
                f"transposed_conv1d: bias shape {bias.shape} != ({w.shape[1]},)"
            )
        data = data + bias.data[:, None]
        parents = (x, w, bias)
    out = _make(data, "transposed_conv1d", parents)

    def _bw(g):
        _accumulate(x, _conv_core(g, w.data, stride))
        _accumulate(w, _conv_weight_grad(x.data, g, w.shape[2], stride))
        if bias is not None:
            _accumulate(bias, g.sum(axis=1))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Probabilistic ops
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, targets):
    """Row-wise cross entropy with integer targets, summed over rows.

    logits: (C,) or (B, C); targets: int or (B,) ints.
    """
    logits = _as_tensor(logits)
    lg = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    idx = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if idx.shape[0] != lg.shape[0] or idx.max() >= lg.shape[1] or idx.min() < 0:
        raise ValueError(
            f"softmax_cross_entropy: targets {idx} invalid for logits {lg.shape}"
        )
    shifted = lg - lg.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, dtype=np.float64)) + lg.max(axis=1)
    loss = np.sum(lse - lg[np.arange(lg.shape[0]), idx], dtype=np.float64)
    out = _make(np.asarray(loss, dtype=logits.dtype), "softmax_cross_entropy", (logits,))

    def _bw(g):
        soft = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        soft[np.arange(lg.shape[0]), idx] -= 1.0
        grad = (g * soft).astype(logits.dtype)
        _accumulate(logits, grad if logits.data.ndim == 2 else grad[0])

    out._backward = _bw
    return out


def gaussian_nll(x, mu, log_sigma):
    """Elementwise Gaussian negative log-likelihood of observations x.

    sigma denotes standard deviation; parameters enter as log sigma.
    """
    x, mu, log_sigma = _as_tensor(x), _as_tensor(mu), _as_tensor(log_sigma)
    inv_var = np.exp(-2.0 * log_sigma.data)
    diff = x.data - mu.data
    data = log_sigma.data + 0.5 * _LOG_2PI + 0.5 * diff * diff * inv_var
    out = _make(data, "gaussian_nll", (x, mu, log_sigma))

    def _bw(g):
        _accumulate(x, _unbroadcast(g * diff * inv_var, x.shape))
        _accumulate(mu, _unbroadcast(-g * diff * inv_var, mu.shape))
        _accumulate(
            log_sigma,
            _unbroadcast(g * (1.0 - diff * diff * inv_var), log_sigma.shape),
        )

    out._backward = _bw
    return out


def gaussian_logcdf(x, mu, log_sigma):
    """Elementwise log Phi((x - mu) / sigma), tail-stable.

    Gradient uses the stable inverse Mills ratio exp(log phi - log Phi).
    """
    x, mu, log_sigma = _as_tensor(x), _as_tensor(mu), _as_tensor(log_sigma)
    inv_sigma = np.exp(-log_sigma.data)
    a = (x.data - mu.data) * inv_sigma
    lcdf = _kernels.log_ndtr(np.asarray(a, dtype=np.float64))
    out = _make(lcdf.astype(x.dtype), "gaussian_logcdf", (x, mu, log_sigma))

    def _bw(g):
        log_pdf = -0.5 * a.astype(np.float64) ** 2 - 0.5 * _LOG_2PI
        ratio = np.exp(log_pdf - lcdf).astype(a.dtype)
        _accumulate(x, _unbroadcast(g * ratio * inv_sigma, x.shape))
        _accumulate(mu, _unbroadcast(-g * ratio * inv_sigma, mu.shape))
        _accumulate(log_sigma, _unbroadcast(-g * ratio * a, log_sigma.shape))

    out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment estimates plus step counter for a parameter list."""

    def __init__(self, shapes_like, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=10.0):
        self.m = [np.zeros_like(p) for p in shapes_like]
        self.v = [np.zeros_like(p) for p in shapes_like]
        self.step_count = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm


def adam_step(params, grads, state, maximize=False):
    """One Adam update, in place, with global gradient-norm clipping.

    params/grads: lists of ndarrays with matching shapes.
    """
    if state.clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
        if total > state.clip_norm:
            scale = state.clip_norm / total
            grads = [g * scale for g in grads]
    state.step_count += 1
    bc1 = 1.0 - state.beta1 ** state.step_count
    bc2 = 1.0 - state.beta2 ** state.step_count
    sign = 1.0 if maximize else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p += sign * state.lr * update
    return params, state


class Adam:
    """Adam over a dict of named parameter Tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=10.0):
        self.params = list(params.values()) if isinstance(params, dict) else list(params)
        self.state = AdamState(
            [p.data for p in self.params], lr, beta1, beta2, eps, clip_norm
        )

    def zero_grad(self):
        zero_grads(self.params)

    def step(self, maximize=False):
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        adam_step([p.data for p in self.params], grads, self.state, maximize=maximize)
