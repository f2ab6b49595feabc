"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the layout predictor and its losses need are provided.
A ``Tensor`` records its parents and a backward closure only when at least
one input requires gradients, so computations on detached inputs (e.g. the
teacher pass) leave nothing in the graph.
"""
from __future__ import annotations

import numpy as np


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @classmethod
    def _make(cls, data, parents, backward):
        out = cls(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad; nothing to differentiate")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def relu(x):
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x):
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),))


def absolute(x):
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x):
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def total(x):
    return Tensor._make(np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    n = x.data.size
    return Tensor._make(np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def dropout(x, p, rng):
    """Inverted dropout: zero with probability ``p`` and rescale survivors by 1/(1-p)."""
    if p <= 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return mul(x, keep)


# ---------------------------------------------------------------------------
# shape


def reshape(x, shape):
    old = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return Tensor._make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def segment(flat, offset, shape):
    """View ``flat[offset:offset+size]`` as ``shape``; gradients scatter back."""
    size = int(np.prod(shape))
    n = flat.shape[0]

    def back(g):
        full = np.zeros(n, dtype=g.dtype)
        full[offset:offset + size] = g.ravel()
        return (full,)

    return Tensor._make(flat.data[offset:offset + size].reshape(shape), (flat,), back)


# ---------------------------------------------------------------------------
# convolutions


def _pad_pano(x, ph, pw):
    # rows: zeros (poles); columns: wrap-around (360 degree seam)
    if ph:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (0, 0)))
    if pw:
        x = np.concatenate([x[..., -pw:], x, x[..., :pw]], axis=-1)
    return x


def _unpad_pano(g, ph, pw, W):
    if ph:
        g = g[:, :, ph:g.shape[2] - ph]
    if pw:
        core = g[..., pw:pw + W].copy()
        core[..., W - pw:] += g[..., :pw]
        core[..., :pw] += g[..., pw + W:]
        g = core
    return g


def conv2d(x, w, b, stride=(1, 1), pad=(0, 0)):
    """2D cross-correlation on ``(B, C, H, W)`` with zero row padding and circular column padding."""
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    xp = _pad_pano(x.data, ph, pw)
    Ho = (xp.shape[2] - kh) // sh + 1
    Wo = (xp.shape[3] - kw) // sw + 1
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=xp.dtype)
    for a in range(kh):
        for c in range(kw):
            cols[:, :, a, c] = xp[:, :, a:a + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw]
    cols = cols.reshape(B, C * kh * kw, Ho * Wo)
    w2 = w.data.reshape(O, -1)
    out = np.matmul(w2, cols) + b.data[:, None]

    def back(g):
        g2 = g.reshape(B, O, Ho * Wo)
        dw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        db = g2.sum(axis=(0, 2))
        dx = None
        if x.requires_grad:
            dcols = np.matmul(w2.T, g2).reshape(B, C, kh, kw, Ho, Wo)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for a in range(kh):
                for c in range(kw):
                    dxp[:, :, a:a + sh * (Ho - 1) + 1:sh, c:c + sw * (Wo - 1) + 1:sw] += dcols[:, :, a, c]
            dx = _unpad_pano(dxp, ph, pw, W)
        return dx, dw, db

    return Tensor._make(out.reshape(B, O, Ho, Wo), (x, w, b), back)


def conv1d_circular(x, w, b):
    """Circular 1D convolution over the last axis of ``(B, C, L)``; odd kernel, same length."""
    k = w.shape[-1]
    x4 = reshape(x, (x.shape[0], x.shape[1], 1, x.shape[2]))
    w4 = reshape(w, (w.shape[0], w.shape[1], 1, k))
    out = conv2d(x4, w4, b, stride=(1, 1), pad=(0, k // 2))
    return reshape(out, (out.shape[0], out.shape[1], out.shape[3]))


def column_linear(x, w, b):
    """Per-column affine map: ``(B, C, L) -> (B, O, L)`` with ``w`` of shape ``(O, C)``."""
    out = np.matmul(w.data, x.data) + b.data[:, None]

    def back(g):
        dw = np.tensordot(g, x.data, axes=([0, 2], [0, 2]))
        db = g.sum(axis=(0, 2))
        dx = np.matmul(w.data.T, g) if x.requires_grad else None
        return dx, dw, db

    return Tensor._make(out, (x, w, b), back)


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment estimates and step count for one flat parameter vector."""

    def __init__(self, size, dtype=np.float64):
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def copy(self):
        out = AdamState(0)
        out.m, out.v, out.t = self.m.copy(), self.v.copy(), self.t
        return out


def adam_step(theta, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update; returns the new parameters and moments."""
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient passed to Adam")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    new = state.copy()
    new.t += 1
    new.m = beta1 * state.m + (1.0 - beta1) * grad
    new.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = new.m / (1.0 - beta1 ** new.t)
    v_hat = new.v / (1.0 - beta2 ** new.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), new
