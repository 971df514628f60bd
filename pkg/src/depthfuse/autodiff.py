"""Minimal reverse-mode autodiff over NCHW float64 tensors.

Define-by-run: each op records a backward closure on its output; backward()
topologically sorts the graph and accumulates gradients. Only the op set
needed by the fusion network and its losses is provided.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import BackwardBeforeForward, ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make_output(data, parents, backward_fn):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(scalar: Tensor):
    """Populate grads of every reachable requires_grad tensor."""
    if scalar.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar, got shape {scalar.shape}")
    if not scalar.requires_grad:
        raise BackwardBeforeForward("backward on a graph with no grad-tracked inputs")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack = [(scalar, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    scalar.grad = np.ones_like(scalar.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Ops

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=1, pad=0) -> Tensor:
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d expects NCHW input and OIHW weights")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeMismatch(
            f"input channels {x.data.shape[1]} != kernel channels {w.data.shape[1]}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeMismatch("bias must be 1-D with one entry per output channel")
    out_data = kernels.conv2d_forward(x.data, w.data, b.data, stride, pad)

    def bwd(g):
        gx, gw, gb = kernels.conv2d_backward(
            np.ascontiguousarray(g), x.data, w.data, stride, pad)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
        if b.requires_grad:
            b._accumulate(gb)

    return _make_output(out_data, (x, w, b), bwd)


def _up2x_last(x):
    # even outputs: 0.25*left + 0.75*center; odd: 0.75*center + 0.25*right
    left = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    right = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    even = 0.25 * left + 0.75 * x
    odd = 0.75 * x + 0.25 * right
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def _up2x_last_t(g):
    # transpose of _up2x_last
    ge = g[..., 0::2]
    go = g[..., 1::2]
    gx = 0.75 * ge + 0.75 * go
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1] += 0.25 * go[..., -1]
    return gx


def upsample_bilinear2x(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeMismatch("upsample_bilinear2x expects NCHW")
    tmp = _up2x_last(x.data)
    out_data = _up2x_last(tmp.swapaxes(2, 3)).swapaxes(2, 3)

    def bwd(g):
        gt = _up2x_last_t(np.ascontiguousarray(g.swapaxes(2, 3))).swapaxes(2, 3)
        x._accumulate(_up2x_last_t(np.ascontiguousarray(gt)))

    return _make_output(out_data, (x,), bwd)


def avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"avgpool2x needs even dims, got {h}x{w}")
    out_data = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
        x._accumulate(gx)

    return _make_output(out_data, (x,), bwd)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ShapeMismatch(f"add shapes differ: {x.shape} vs {y.shape}")
    out_data = x.data + y.data

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g)
        if y.requires_grad:
            y._accumulate(g)

    return _make_output(out_data, (x, y), bwd)


def concat_channels(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape[0] != y.data.shape[0] or x.data.shape[2:] != y.data.shape[2:]:
        raise ShapeMismatch(
            f"concat_channels shapes incompatible: {x.shape} vs {y.shape}")
    out_data = np.concatenate([x.data, y.data], axis=1)
    cx = x.data.shape[1]

    def bwd(g):
        if x.requires_grad:
            x._accumulate(g[:, :cx])
        if y.requires_grad:
            y._accumulate(g[:, cx:])

    return _make_output(out_data, (x, y), bwd)


def leaky_relu(x: Tensor, slope=0.01) -> Tensor:
    mask = x.data > 0.0
    out_data = np.where(mask, x.data, slope * x.data)

    def bwd(g):
        x._accumulate(np.where(mask, g, slope * g))

    return _make_output(out_data, (x,), bwd)


def scalar_mul(x: Tensor, s: float) -> Tensor:
    out_data = x.data * s

    def bwd(g):
        x._accumulate(g * s)

    return _make_output(out_data, (x,), bwd)


def mean_all(x: Tensor) -> Tensor:
    out_data = np.full((1, 1, 1, 1), x.data.mean())
    inv_n = 1.0 / x.data.size

    def bwd(g):
        x._accumulate(np.full_like(x.data, float(g.ravel()[0]) * inv_n))

    return _make_output(out_data, (x,), bwd)


def custom_op(value, parents, grad_fns) -> Tensor:
    """Single-output op with hand-derived gradients.

    ``grad_fns[i]`` maps the upstream gradient to parent i's gradient; pass
    None for parents that take no gradient.
    """
    def bwd(g):
        for p, fn in zip(parents, grad_fns):
            if fn is not None and p.requires_grad:
                p._accumulate(fn(g))

    return _make_output(np.asarray(value, dtype=np.float64), tuple(parents), bwd)


# ---------------------------------------------------------------------------
# Finite-difference verification

def grad_check(f, inputs: list[Tensor], eps=1e-5) -> float:
    """Max relative error between backward grads and central differences.

    ``f`` rebuilds the graph from the inputs and returns a scalar Tensor.
    Coordinates whose difference interval straddles a kink (absolute values,
    leaky ReLU) or a stiff region give a spurious mismatch at the first step
    size, so each failing coordinate is retried with shrinking eps and the
    best agreement is kept.
    """
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    out = f(*inputs)
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
                for t in inputs]

    def rel_err_at(flat, k, ad, step):
        orig = flat[k]
        flat[k] = orig + step
        hi = float(f(*inputs).data.ravel()[0])
        flat[k] = orig - step
        lo = float(f(*inputs).data.ravel()[0])
        flat[k] = orig
        fd = (hi - lo) / (2.0 * step)
        # the absolute floor treats both-near-zero gradients (e.g. through a
        # shift-invariant loss, where FD picks up pure roundoff of order
        # ulp(f)/2eps ~ 1e-11) as agreement
        return abs(fd - ad) / max(abs(fd), abs(ad), 1e-5)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.ravel()
        for k in range(flat.size):
            ad = a.ravel()[k]
            err = rel_err_at(flat, k, ad, eps)
            step = eps
            while err > 1e-8 and step > eps / 1000.0:
                step /= 8.0
                err = min(err, rel_err_at(flat, k, ad, step))
            worst = max(worst, err)
    return worst
