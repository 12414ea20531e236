"""Dense float64 tensors with reverse-mode automatic differentiation.

The op surface is deliberately small so gradient checks can be exhaustive.
Results are recorded on an append-only tape (construction order equals
topological order); `Tensor.backward` walks the reachable subgraph once, in
reverse construction order. Broadcasting is restricted to scalar-with-tensor
and bias patterns (row bias for dense layers, channel bias for conv layers);
anything else must shape-match exactly.

Every forward result is checked for finiteness: NaN/Inf raises NumericError
instead of propagating.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_ids = itertools.count()


def _as_f64(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_id")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        if not np.all(np.isfinite(self.data)):
            raise NumericError("tensor holds non-finite values")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._grad_fn = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a scalar tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate .grad on every reachable requires_grad tensor.

        The root must be scalar. Each node is visited exactly once, in
        reverse construction order (a valid topological order because the
        tape is append-only).
        """
        if self.data.size != 1:
            raise ContractError("backward requires a scalar root")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._id, reverse=True)

        grads = {id(self): np.ones_like(self.data)}
        for t in nodes:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient encountered")
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            if t._grad_fn is None:
                continue
            for p, pg in zip(t._parents, t._grad_fn(g)):
                if pg is None:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # arithmetic sugar; non-tensors are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return mean(self)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def square(self):
        return square(self)

    def abs(self):
        return absolute(self)

    def l2norm(self):
        return l2norm(self)

    def softmax(self):
        return softmax(self)

    def log_softmax(self):
        return log_softmax(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(arr, parents, grad_fn, op):
    arr = _as_f64(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: non-finite forward value")
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.requires_grad = False
    out.grad = None
    if any(p.requires_grad or p._grad_fn is not None for p in parents):
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    out._id = next(_ids)
    return out


def _bcast_kind(sa, sb):
    """Classify shapes assuming b is the (possibly) smaller operand."""
    if sa == sb:
        return "equal"
    if int(np.prod(sb)) == 1:
        return "scalar"
    if len(sb) == 1 and len(sa) == 2 and sa[1] == sb[0]:
        return "row_bias"  # (N, M) op (M,)
    if len(sb) == 1 and len(sa) == 4 and sa[1] == sb[0]:
        return "channel_bias"  # (N, C, H, W) op (C,)
    return None


def _expand(b_data, kind):
    if kind == "channel_bias":
        return b_data[None, :, None, None]
    return b_data  # numpy handles scalar and trailing-axis row bias


def _reduce(g, kind, shape):
    """Sum a full-shape gradient back down to the broadcast operand."""
    if kind == "equal":
        return g
    if kind == "scalar":
        return np.sum(g).reshape(shape)
    if kind == "row_bias":
        return np.sum(g, axis=0)
    return np.sum(g, axis=(0, 2, 3))  # channel_bias


def _binary(a, b, fn, da, db, op):
    kind = _bcast_kind(a.shape, b.shape)
    swapped = False
    if kind is None:
        kind = _bcast_kind(b.shape, a.shape)
        swapped = True
    if kind is None:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")
    if not swapped:
        out = fn(a.data, _expand(b.data, kind))
    else:
        out = fn(_expand(a.data, kind), b.data)

    def grad_fn(g):
        if not swapped:
            ga = da(g, a.data, _expand(b.data, kind))
            gb = _reduce(db(g, a.data, _expand(b.data, kind)), kind, b.shape)
        else:
            ga = _reduce(da(g, _expand(a.data, kind), b.data), kind, a.shape)
            gb = db(g, _expand(a.data, kind), b.data)
        return ga, gb

    return _result(out, (a, b), grad_fn, op)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul operands must be 2-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(out, (a, b), grad_fn, "matmul")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def grad_fn(g):
        return ((x.data > 0.0) * g,)

    return _result(out, (x,), grad_fn, "relu")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return _result(out, (x,), grad_fn, "log")


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def grad_fn(g):
        return (2.0 * x.data * g,)

    return _result(out, (x,), grad_fn, "square")


def absolute(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def grad_fn(g):
        # subgradient at 0 taken as 0
        return (np.sign(x.data) * g,)

    return _result(out, (x,), grad_fn, "abs")


def tensor_sum(x: Tensor) -> Tensor:
    out = np.sum(x.data)

    def grad_fn(g):
        return (np.full(x.shape, float(g)),)

    return _result(out, (x,), grad_fn, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.sum(x.data) / n

    def grad_fn(g):
        return (np.full(x.shape, float(g) / n),)

    return _result(out, (x,), grad_fn, "mean")


def l2norm(x: Tensor) -> Tensor:
    out = np.sqrt(np.sum(x.data * x.data))

    def grad_fn(g):
        n = float(out)
        if n == 0.0:
            return (np.zeros(x.shape),)
        return (x.data * (float(g) / n),)

    return _result(out, (x,), grad_fn, "l2norm")


def _rows(data):
    if data.ndim == 1:
        return data[None, :]
    if data.ndim == 2:
        return data
    raise ShapeError("softmax expects a 1-D or 2-D tensor")


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, numerically stabilized."""
    rows = _rows(x.data)
    shifted = rows - rows.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    out = out.reshape(x.shape)

    def grad_fn(g):
        s = out.reshape(rows.shape)
        gr = g.reshape(rows.shape)
        gx = s * (gr - np.sum(gr * s, axis=1, keepdims=True))
        return (gx.reshape(x.shape),)

    return _result(out, (x,), grad_fn, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    rows = _rows(x.data)
    shifted = rows - rows.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = (shifted - lse).reshape(x.shape)

    def grad_fn(g):
        s = np.exp(out.reshape(rows.shape))
        gr = g.reshape(rows.shape)
        gx = gr - s * np.sum(gr, axis=1, keepdims=True)
        return (gx.reshape(x.shape),)

    return _result(out, (x,), grad_fn, "log_softmax")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), grad_fn, "reshape")


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Valid (no padding), stride-1 cross-correlation.

    x: (N, C, H, W); w: (F, C, kh, kw) -> (N, F, H-kh+1, W-kw+1).
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-D input and kernel")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d channel mismatch: input {c}, kernel {cw}")
    if kh > h or kw > wd:
        raise ShapeError("conv2d kernel larger than input")
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))
    out = np.einsum("ncyxuv,fcuv->nfyx", windows, w.data, optimize=True)

    def grad_fn(g):
        gw = np.einsum("ncyxuv,nfyx->fcuv", windows, g, optimize=True)
        pad = ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1))
        gpad = np.pad(g, pad)
        gwin = np.lib.stride_tricks.sliding_window_view(gpad, (kh, kw), axis=(2, 3))
        flipped = w.data[:, :, ::-1, ::-1]
        gx = np.einsum("nfyxuv,fcuv->ncyx", gwin, flipped, optimize=True)
        return gx, gw

    return _result(out, (x, w), grad_fn, "conv2d")


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling with a square window.

    Trailing rows/columns that do not fill a window are dropped.
    Ties resolve to the first element in row-major window order.
    """
    if x.data.ndim != 4:
        raise ShapeError("maxpool2d expects a 4-D input")
    if size < 1:
        raise ContractError("pool size must be >= 1")
    n, c, h, w = x.shape
    oh, ow = h // size, w // size
    if oh == 0 or ow == 0:
        raise ShapeError("maxpool2d window larger than input")
    crop = x.data[:, :, : oh * size, : ow * size]
    tiles = crop.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(n, c, oh, ow, size * size)
    idx = np.argmax(tiles, axis=-1)
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gc = gt.reshape(n, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5)
        gc = gc.reshape(n, c, oh * size, ow * size)
        gx = np.zeros(x.shape)
        gx[:, :, : oh * size, : ow * size] = gc
        return (gx,)

    return _result(out, (x,), grad_fn, "maxpool2d")


class Adam:
    """Adam optimizer with bias correction over a fixed parameter list."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ContractError("adam step with a missing gradient")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
