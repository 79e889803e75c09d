"""A small reverse-mode autodiff engine over float64 numpy arrays.

Only the operators the encoder, fusion heads and losses need are provided.
Element-wise binary operators require identical shapes; the only implicit
broadcast is the bias in ``linear`` and ``conv2d``. Channel rescaling has
its own operators (``scale_channels``, ``normalize_mean``).
"""

import contextlib
import hashlib
import struct
from pathlib import Path

import numpy as np

from . import _kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference and gradient caching)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_done")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scalar_mul(self, -1.0)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- element-wise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def scalar_mul(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def add_scalar(a, c):
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,), "add_scalar")


def elementwise_mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("elementwise_mul", a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "elementwise_mul")


def square(a):
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,), "square")


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a):
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,), "relu")


def sigmoid(a):
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------- reductions and shape


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = a.shape

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.sum(a.data, axis=axis), (a,), back, "sum")


def mean(a, axis=None):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scalar_mul(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a, start=0):
    """Collapse axes ``start..`` into one."""
    return reshape(a, a.shape[:start] + (-1,))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back, "concat")


def take(a, index, axis=0):
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (slice(None),) * (axis % len(shape)) + (index,), g)
        return (out,)

    return _make(np.take(a.data, index, axis=axis), (a,), back, "take")


def logsumexp(a, axis=-1, mask=None):
    """log(sum(exp(a))) along ``axis`` over entries where ``mask`` is True."""
    x = a.data
    m = np.ones_like(x, dtype=bool) if mask is None else np.broadcast_to(mask, x.shape)
    if not np.all(m.any(axis=axis)):
        raise ShapeError("logsumexp: empty reduction")
    xm = np.where(m, x, -np.inf)
    top = np.max(xm, axis=axis, keepdims=True)
    e = np.where(m, np.exp(xm - top), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + top).squeeze(axis)
    soft = e / s
    return _make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


# ---------------------------------------------------------------- layers


def linear(x, weight, bias=None):
    """x @ W.T + b for x of shape (D,) or (N, D) and W of shape (out, D)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gx = g @ weight.data
        g2 = g.reshape(-1, g.shape[-1])
        gw = g2.T @ x.data.reshape(-1, x.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, back, "linear")


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """2D cross-correlation; x is (C, H, W) or (N, C, H, W), weight (Co, C, k, k)."""
    single = x.data.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be 3D or 4D, got {x.shape}")
    co, ci, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    if xd.shape[1] != ci:
        raise ShapeError(f"conv2d: input channels {xd.shape[1]} != kernel in-channels {ci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias {bias.shape} != ({co},)")
    n, _, h, w = xd.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{w} too small for kernel {kh} with pad {pad}")
    xd = np.ascontiguousarray(xd)
    wmat = weight.data.reshape(co, -1)
    cols = _kernels.im2col(xd, kh, stride, pad)
    out = np.matmul(wmat, cols)
    del cols
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, co, ho, wo)
    if single:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g = g.reshape(n, co, ho * wo)
        cols = _kernels.im2col(xd, kh, stride, pad)
        gw = np.zeros_like(wmat)
        for b in range(n):
            gw += g[b] @ cols[b].T
        del cols
        gx = None
        if x.requires_grad:
            gx = _kernels.col2im(np.matmul(wmat.T, g), (n, ci, h, w), kh, stride, pad)
            if single:
                gx = gx[0]
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out, parents, back, "conv2d")


def max_pool(x):
    """2x2 max pool with stride 2 over the last two axes."""
    single = x.data.ndim == 3
    xd = np.ascontiguousarray(x.data[None] if single else x.data)
    if xd.shape[2] < 2 or xd.shape[3] < 2:
        raise ShapeError(f"max_pool: spatial size {xd.shape[2:]} smaller than 2x2")
    out, arg = _kernels.maxpool2_forward(xd)
    shape = xd.shape

    def back(g):
        gx = _kernels.maxpool2_backward(g[None] if single else g, arg, shape)
        return (gx[0] if single else gx,)

    return _make(out[0] if single else out, (x,), back, "max_pool")


def global_avg_pool(x):
    """Mean over the last two (spatial) axes."""
    if x.data.ndim < 3:
        raise ShapeError(f"global_avg_pool: need (..., C, H, W), got {x.shape}")
    return mean(x, axis=(-2, -1))


def scale_channels(x, w):
    """Multiply maps (..., C, H, W) by per-channel weights (..., C)."""
    if x.shape[:-2] != w.shape:
        raise ShapeError(f"scale_channels: weights {w.shape} do not match maps {x.shape}")
    wd = w.data[..., None, None]

    def back(g):
        return g * wd, np.sum(g * x.data, axis=(-2, -1))

    return _make(x.data * wd, (x, w), back, "scale_channels")


def normalize_mean(w, scale=1.0):
    """Rescale each row of w (..., C) so its mean is exactly ``scale``."""
    m = w.data.mean(axis=-1, keepdims=True)
    c = w.shape[-1]
    out = scale * w.data / m

    def back(g):
        # d out_i / d w_j = scale * (delta_ij / m - w_i / (c m^2))
        dot = np.sum(g * w.data, axis=-1, keepdims=True)
        return (scale * (g / m - dot / (c * m * m)),)

    return _make(out, (w,), back, "normalize_mean")


def euclidean_distance(a, b):
    """sqrt(sum((a - b)^2)) over the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("euclidean_distance", a, b)
    diff = a.data - b.data
    d = np.sqrt(np.sum(diff * diff, axis=-1))

    def back(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(d[..., None] > 0, diff / d[..., None], 0.0)
        ga = g[..., None] * unit
        return ga, -ga

    return _make(d, (a, b), back, "euclidean_distance")


def pairwise_distances(a, b):
    """Euclidean distances between rows: (N, D), (M, D) -> (N, M)."""
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"pairwise_distances: dims {a.shape[-1]} and {b.shape[-1]} differ")
    diff = a.data[:, None, :] - b.data[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=-1))

    def back(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            coef = np.where(d > 0, g / d, 0.0)
        ga = np.einsum("nm,nmd->nd", coef, diff)
        gb = -np.einsum("nm,nmd->md", coef, diff)
        return ga, gb

    return _make(d, (a, b), back, "pairwise_distances")


# ---------------------------------------------------------------- backward


def backward(loss):
    """Populate ``.grad`` on every leaf that requires grad.

    Raises if ``loss`` is not a scalar, if this graph was already
    differentiated, or if a leaf still holds a gradient from an earlier
    call (clear it with ``zero_grad`` first).
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._done:
        raise RuntimeError("backward called twice on the same graph")
    order = []
    seen = set()
    stack = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    leaves = [n for n in order if n._backward is None and n.requires_grad]
    busy = [n for n in leaves if n.grad is not None]
    if busy:
        raise RuntimeError("gradient already populated; call zero_grad() before another backward")
    grads = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    for leaf in leaves:
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape)
    loss._done = True


# ---------------------------------------------------------------- parameters


class ParamSet:
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, tensors=None):
        self._t = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name, value):
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._t[name] = t

    def __getitem__(self, name):
        return self._t[name]

    def __contains__(self, name):
        return name in self._t

    def __len__(self):
        return len(self._t)

    def names(self):
        return sorted(self._t)

    def items(self):
        return [(n, self._t[n]) for n in self.names()]

    def subset(self, prefix):
        return ParamSet({n: t for n, t in self._t.items() if n.startswith(prefix)})

    def zero_grad(self):
        for t in self._t.values():
            t.grad = None

    def grads(self):
        return {n: (t.grad if t.grad is not None else np.zeros(t.shape)) for n, t in self.items()}

    def copy(self):
        return ParamSet({n: Tensor(t.data.copy()) for n, t in self._t.items()})

    def update(self, other):
        for n, t in other.items():
            self[n] = Tensor(t.data.copy())

    def checksum(self):
        h = hashlib.sha256()
        for n, t in self.items():
            h.update(n.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()

    def n_values(self):
        return int(np.sum([t.size for t in self._t.values()]))


PSET_MAGIC = b"PSET"


def save_params(params, path):
    with Path(path).open("wb") as fh:
        fh.write(PSET_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_params(path):
    raw = Path(path).read_bytes()
    if raw[:4] != PSET_MAGIC:
        raise ValueError(f"{path}: not a PSET file")
    (count,) = struct.unpack_from("<I", raw, 4)
    off = 8
    out = ParamSet()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims).copy()
        off += 8 * n
        out[name] = Tensor(data)
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in PSET file")
    return out


# ---------------------------------------------------------------- checks and optimizer


def grad_check(f, params, eps=1e-6):
    """Max relative error between backward() and central differences.

    ``f`` maps the ParamSet to a scalar Tensor. The relative error of each
    coordinate uses max(1, |analytic|, |numeric|) as denominator.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    params.zero_grad()
    backward(f(params))
    analytic = {n: g.copy() for n, g in params.grads().items()}
    params.zero_grad()
    worst = 0.0
    with no_grad():
        for name, t in params.items():
            flat = t.data.reshape(-1)
            ga = analytic[name].reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                fp = f(params).item()
                flat[i] = old - eps
                fm = f(params).item()
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                err = abs(num - ga[i]) / max(1.0, abs(ga[i]), abs(num))
                worst = max(worst, err)
    return worst


def sgd_step(params, grads=None, lr=5e-4, momentum=0.9, weight_decay=5e-5, state=None):
    """SGD with momentum and L2 weight decay, updating ``params`` in place.

    g <- grad + weight_decay * p;  v <- momentum * v + g;  p <- p - lr * v.
    ``state`` maps parameter name to its velocity buffer and is updated too.
    """
    if state is None:
        state = {}
    if grads is None:
        grads = params.grads()
    for name, t in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != t.shape:
            raise ShapeError(f"sgd_step: grad for {name} has shape {g.shape}, expected {t.shape}")
        g = g + weight_decay * t.data
        v = state.get(name)
        if v is None:
            v = np.zeros_like(t.data)
        elif v.shape != t.shape:
            raise ShapeError(f"sgd_step: velocity for {name} has shape {v.shape}, expected {t.shape}")
        v = momentum * v + g
        state[name] = v
        t.data -= lr * v
    return state
