"""Small reverse-mode differentiation engine over numpy arrays.

Only the operations the parser needs are provided.  Recurrent layers are a
single fused op (whole-sequence forward, hand-written backprop through time)
so graphs stay a few dozen nodes per document.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        if self.requires_grad:
            self.parents = parents
            self.backward_fn = backward_fn
        else:
            self.parents = ()
            self.backward_fn = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.value.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return Tensor(a.value + b.value, (a, b), back)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.value.dtype)
        return Tensor(a.value * c, (a,), lambda g: _accumulate(a, _unbroadcast(g * c, a.shape)))

    def back(g):
        _accumulate(a, _unbroadcast(g * b.value, a.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.shape))

    return Tensor(a.value * b.value, (a, b), back)


def matmul(a, b) -> Tensor:
    """``a[..., D] @ b[D, M]`` or ``a[..., D] @ b[D]``."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.value @ b.value

    def back(g):
        av, bv = a.value, b.value
        if bv.ndim == 1:
            _accumulate(a, g[..., None] * bv)
            _accumulate(b, av.reshape(-1, av.shape[-1]).T @ g.reshape(-1))
        else:
            _accumulate(a, g @ bv.T)
            _accumulate(b, av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, bv.shape[-1]))

    return Tensor(out, (a, b), back)


def leaky_relu(x, slope=0.01) -> Tensor:
    x = as_tensor(x)
    pos = x.value > 0
    scale = np.where(pos, 1.0, slope).astype(x.value.dtype)
    return Tensor(x.value * scale, (x,), lambda g: _accumulate(x, g * scale))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return Tensor(y, (x,), lambda g: _accumulate(x, g * (1 - y * y)))


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    vals = [p.value for p in parts]
    out = np.concatenate(vals, axis=axis)
    edges = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        for p, gp in zip(parts, np.split(g, edges, axis=axis)):
            _accumulate(p, gp)

    return Tensor(out, tuple(parts), back)


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    def back(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        _accumulate(x, gx)

    return Tensor(x.value[idx], (x,), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.value.reshape(shape), (x,), lambda g: _accumulate(x, g.reshape(x.shape)))


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.value.T, (x,), lambda g: _accumulate(x, g.T))


def total(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.value.sum(), (x,), lambda g: _accumulate(x, np.broadcast_to(g, x.shape)))


def bilinear(left, weight, right) -> Tensor:
    """``out[n, l] = sum_ab left[n, a] weight[a, l, b] right[n, b]``."""
    left, weight, right = as_tensor(left), as_tensor(weight), as_tensor(right)
    A, L, Bd = weight.shape
    lv, rv, wv = left.value, right.value, weight.value
    N = lv.shape[0]
    lw = (lv @ wv.reshape(A, L * Bd)).reshape(N, L, Bd)
    out = (lw @ rv[:, :, None])[:, :, 0]

    def back(g):
        _accumulate(right, (g[:, None, :] @ lw)[:, 0, :])
        gr = (g[:, :, None] * rv[:, None, :]).reshape(N, L * Bd)
        _accumulate(left, gr @ wv.reshape(A, L * Bd).T)
        _accumulate(weight, (lv.T @ gr).reshape(A, L, Bd))

    return Tensor(out, (left, weight, right), back)


def log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, targets) -> Tensor:
    """Summed negative log-likelihood of ``targets`` under row-wise softmax."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    rows = np.arange(len(targets))
    logp = log_softmax(logits.value)
    loss = -logp[rows, targets].sum()

    def back(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        _accumulate(logits, g * d)

    return Tensor(loss, (logits,), back)


# -- recurrent layer -----------------------------------------------------------------

def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_cell(x, h, c, W, U, b):
    """One LSTM step; gates ordered (input, forget, cell, output)."""
    z = x @ W + h @ U + b
    H = h.shape[-1]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def lstm(X, W, U, b, h0=None, c0=None, mask=None) -> Tensor:
    """Run an LSTM over ``X[T, B, D]``; returns hidden states ``[T, B, H]``.

    Where ``mask[t, b] == 0`` the state is carried over unchanged, so the
    last row holds each sequence's final state.
    """
    X, W, U, b = as_tensor(X), as_tensor(W), as_tensor(U), as_tensor(b)
    T, B, _ = X.shape
    H = U.shape[0]
    dt = X.value.dtype
    h0t = None if h0 is None else as_tensor(h0)
    c0t = None if c0 is None else as_tensor(c0)
    m = None if mask is None else np.asarray(mask, dtype=dt)[..., None]

    XW = X.value @ W.value + b.value
    hs = np.empty((T + 1, B, H), dt)
    cs = np.empty((T + 1, B, H), dt)
    acts = np.empty((T, B, 4 * H), dt)
    hs[0] = 0 if h0t is None else h0t.value
    cs[0] = 0 if c0t is None else c0t.value
    Uv = U.value
    for t in range(T):
        z = XW[t] + hs[t] @ Uv
        a = sigmoid(z)
        a[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        cn = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 2 * H:3 * H]
        hn = a[:, 3 * H:] * np.tanh(cn)
        if m is not None:
            hn = m[t] * hn + (1 - m[t]) * hs[t]
            cn = m[t] * cn + (1 - m[t]) * cs[t]
        acts[t] = a
        hs[t + 1], cs[t + 1] = hn, cn

    parents = [X, W, U, b] + [t for t in (h0t, c0t) if t is not None]

    def back(gH):
        ig, fg = acts[..., :H], acts[..., H:2 * H]
        gg, og = acts[..., 2 * H:3 * H], acts[..., 3 * H:]
        # recompute tanh(c_new) from the pre-mask cell values
        cnew = fg * cs[:-1] + ig * gg
        tc = np.tanh(cnew)
        # dz = [dcn, dcn, dcn, dhn] * coef
        coef = np.concatenate([gg * ig * (1 - ig), cs[:-1] * fg * (1 - fg),
                               ig * (1 - gg * gg), tc * og * (1 - og)], axis=-1)
        dtanh = og * (1 - tc * tc)
        dZ = np.empty((T, B, 4 * H), dt)
        dh = np.zeros((B, H), dt)
        dc = np.zeros((B, H), dt)
        UT = Uv.T
        for t in range(T - 1, -1, -1):
            dh = dh + gH[t]
            if m is not None:
                dhn, dcn = m[t] * dh, m[t] * dc
                keep = 1 - m[t]
                dh, dc = keep * dh, keep * dc
                dcn = dcn + dhn * dtanh[t]
                dz = np.concatenate([dcn, dcn, dcn, dhn], axis=-1) * coef[t]
                dc = dc + dcn * fg[t]
                dh = dh + dz @ UT
            else:
                dcn = dc + dh * dtanh[t]
                dz = np.concatenate([dcn, dcn, dcn, dh], axis=-1) * coef[t]
                dc = dcn * fg[t]
                dh = dz @ UT
            dZ[t] = dz
        flatZ = dZ.reshape(T * B, 4 * H)
        _accumulate(X, dZ @ W.value.T)
        _accumulate(W, X.value.reshape(T * B, -1).T @ flatZ)
        _accumulate(U, hs[:-1].reshape(T * B, H).T @ flatZ)
        _accumulate(b, flatZ.sum(axis=0))
        if h0t is not None:
            _accumulate(h0t, dh)
        if c0t is not None:
            _accumulate(c0t, dc)

    return Tensor(hs[1:], tuple(parents), back)
