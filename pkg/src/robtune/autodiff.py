"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is carried by the tensors themselves: every
operation output keeps references to its operands together with a local
backward rule, so the set of reachable records is a topologically
ordered DAG. ``backward``/``grad`` visit each record exactly once in
reverse topological order.

Backward rules are written as tensor expressions over the original
operands, which means a backward pass can itself be differentiated.
``hvp`` uses this to compute Hessian-vector products with respect to
either inputs or parameters via double backward. All shipped primitives
support this second differentiation (piecewise ops like ``relu`` and
``max`` use their almost-everywhere second derivative, which is zero).

Broadcasting follows numpy's right-aligned rules, intended for
leading-axis batch semantics (e.g. bias rows added to a batch of
activations). Everything is float64; integer inputs are converted.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

ArrayLike = Union[float, int, Sequence, np.ndarray]


class AutodiffError(Exception):
    """Base class for graph construction / differentiation errors."""


class ShapeError(AutodiffError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {' and '.join(str(s) for s in shapes)}")


class GraphError(AutodiffError):
    pass


class Tensor:
    """N-dimensional float64 array, optionally tracked by the graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_op")

    def __init__(self, data: ArrayLike, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional["Tensor"] = None
        self._parents: tuple = ()
        self._grad_fn: Optional[Callable] = None
        self._op = ""

    # -- construction ----------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple, grad_fn: Callable, op: str) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._grad_fn = grad_fn
            out._op = op
        return out

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, threshold=8)}{flag})"

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- method sugar ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def max(self, axis):
        return amax(self, axis)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        """Populate ``.grad`` on every reachable leaf that requires grad.

        The output must be a scalar attached to a graph. Leaf gradients
        accumulate across calls; use ``zero_grad`` between passes.
        """
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward on a detached tensor: no graph to traverse")
        topo = _toposort(self)
        leaves = [t for t in topo if t._grad_fn is None and t.requires_grad]
        grads = _backprop(self, leaves, topo, create_graph=False)
        for leaf, g in zip(leaves, grads):
            if g is None:
                continue
            leaf.grad = g if leaf.grad is None else Tensor(leaf.grad.data + g.data)


def astensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _broadcastable(sa: tuple, sb: tuple) -> bool:
    for da, db in zip(sa[::-1], sb[::-1]):
        if da != db and da != 1 and db != 1:
            return False
    return True


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(op, a.shape, b.shape)


def _reduce_to(g: Tensor, shape: tuple) -> Tensor:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = tsum(g, axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = tsum(g, axis=axes, keepdims=True)
    if g.shape != tuple(shape):
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("add", a, b)

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("sub", a, b)

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(neg(g), b.shape)

    return Tensor._result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("mul", a, b)

    def grad_fn(g):
        return _reduce_to(mul(g, b), a.shape), _reduce_to(mul(g, a), b.shape)

    return Tensor._result(a.data * b.data, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    _check_broadcast("div", a, b)

    def grad_fn(g):
        ga = div(g, b)
        gb = neg(div(mul(g, a), mul(b, b)))
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return Tensor._result(a.data / b.data, (a, b), grad_fn, "div")


def neg(a) -> Tensor:
    a = astensor(a)

    def grad_fn(g):
        return (neg(g),)

    return Tensor._result(-a.data, (a,), grad_fn, "neg")


def power(a, exponent: float) -> Tensor:
    """Elementwise power with a constant (non-tensor) exponent."""
    a = astensor(a)
    c = float(exponent)

    def grad_fn(g):
        return (mul(g, mul(power(a, c - 1.0), c)),)

    return Tensor._result(a.data ** c, (a,), grad_fn, "power")


def exp(a) -> Tensor:
    a = astensor(a)
    out_data = np.exp(a.data)

    def grad_fn(g):
        return (mul(g, exp(a)),)

    return Tensor._result(out_data, (a,), grad_fn, "exp")


def log(a) -> Tensor:
    a = astensor(a)

    def grad_fn(g):
        return (div(g, a),)

    return Tensor._result(np.log(a.data), (a,), grad_fn, "log")


def relu(a) -> Tensor:
    a = astensor(a)
    mask = (a.data > 0.0).astype(np.float64)  # subgradient at 0 is 0

    def grad_fn(g):
        return (mul(g, Tensor(mask)),)

    return Tensor._result(a.data * mask, (a,), grad_fn, "relu")


def sqrt(a) -> Tensor:
    return power(a, 0.5)


# ---------------------------------------------------------------------------
# shape / reduction primitives
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError("reshape", a.shape, shape)
    old = a.shape

    def grad_fn(g):
        return (reshape(g, old),)

    return Tensor._result(a.data.reshape(shape), (a,), grad_fn, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = astensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(int(x) for x in axes)
    inverse = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))

    def grad_fn(g):
        return (transpose(g, inverse),)

    return Tensor._result(np.transpose(a.data, axes), (a,), grad_fn, "transpose")


def broadcast_to(a, shape) -> Tensor:
    a = astensor(a)
    shape = tuple(int(s) for s in shape)
    if not _broadcastable(a.shape, shape):
        raise ShapeError("broadcast_to", a.shape, shape)
    old = a.shape

    def grad_fn(g):
        return (_reduce_to(g, old),)

    return Tensor._result(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), grad_fn, "broadcast_to")


def _normalize_axes(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = astensor(a)
    axes = _normalize_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    old = a.shape

    def grad_fn(g):
        gk = g if keepdims or a.ndim == 0 else reshape(g, kept)
        return (broadcast_to(gk, old),)

    return Tensor._result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), grad_fn, "sum")


def tmean(a, axis=None) -> Tensor:
    a = astensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if a.ndim else 1
    return mul(tsum(a, axis=axis), 1.0 / count)


def amax(a, axis: int) -> Tensor:
    """Max over one axis; ties resolve to the lowest index, forward and backward."""
    a = astensor(a)
    axis = axis % a.ndim
    winners = np.argmax(a.data, axis=axis)  # first occurrence wins
    mask = np.zeros_like(a.data)
    np.put_along_axis(mask, np.expand_dims(winners, axis), 1.0, axis=axis)
    kept = tuple(1 if i == axis else s for i, s in enumerate(a.shape))
    old = a.shape

    def grad_fn(g):
        return (mul(broadcast_to(reshape(g, kept), old), Tensor(mask)),)

    return Tensor._result(np.max(a.data, axis=axis), (a,), grad_fn, "max")


# ---------------------------------------------------------------------------
# 2-D padding and patch extraction (building blocks for convolution)
# ---------------------------------------------------------------------------


def pad2d(a, ph: int, pw: int) -> Tensor:
    """Zero-pad the last two axes by (ph, pw) on each side."""
    a = astensor(a)
    if a.ndim < 2:
        raise ShapeError("pad2d", a.shape)
    widths = [(0, 0)] * (a.ndim - 2) + [(ph, ph), (pw, pw)]

    def grad_fn(g):
        return (crop2d(g, ph, pw),)

    return Tensor._result(np.pad(a.data, widths), (a,), grad_fn, "pad2d")


def crop2d(a, ph: int, pw: int) -> Tensor:
    """Remove (ph, pw) entries from each side of the last two axes."""
    a = astensor(a)
    h, w = a.shape[-2], a.shape[-1]
    if h <= 2 * ph or w <= 2 * pw:
        raise ShapeError("crop2d", a.shape)
    sl = (Ellipsis, slice(ph, h - ph), slice(pw, w - pw))

    def grad_fn(g):
        return (pad2d(g, ph, pw),)

    return Tensor._result(a.data[sl].copy(), (a,), grad_fn, "crop2d")


def _patch_index(c: int, h: int, w: int, kh: int, kw: int) -> np.ndarray:
    """Flat gather index of shape (oh*ow, c*kh*kw) into a (c*h*w,) image."""
    oh, ow = h - kh + 1, w - kw + 1
    base = (np.arange(oh)[:, None] * w + np.arange(ow)[None, :]).reshape(-1)  # (oh*ow,)
    within = (np.arange(c)[:, None, None] * h * w
              + np.arange(kh)[None, :, None] * w
              + np.arange(kw)[None, None, :]).reshape(-1)  # (c*kh*kw,)
    return base[:, None] + within[None, :]


def unfold(a, kh: int, kw: int) -> Tensor:
    """Extract all (kh, kw) patches: (B, C, H, W) -> (B, OH*OW, C*kh*kw)."""
    a = astensor(a)
    if a.ndim != 4:
        raise ShapeError("unfold", a.shape)
    b, c, h, w = a.shape
    if kh > h or kw > w:
        raise ShapeError("unfold", a.shape, (kh, kw))
    idx = _patch_index(c, h, w, kh, kw)

    def grad_fn(g):
        return (_fold(g, idx, (b, c, h, w), kh, kw),)

    return Tensor._result(a.data.reshape(b, c * h * w)[:, idx], (a,), grad_fn, "unfold")


def _fold(a, idx: np.ndarray, image_shape: tuple, kh: int, kw: int) -> Tensor:
    """Adjoint of ``unfold``: scatter-add patches back onto the image."""
    a = astensor(a)
    b, c, h, w = image_shape

    def forward(data):
        out = np.zeros((b, c * h * w))
        np.add.at(out, (np.arange(b)[:, None, None], idx[None, :, :]), data)
        return out.reshape(image_shape)

    def grad_fn(g):
        return (unfold(g, kh, kw),)

    return Tensor._result(forward(a.data), (a,), grad_fn, "fold")


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def grad_fn(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return Tensor._result(a.data @ b.data, (a, b), grad_fn, "matmul")


def dot(a, b) -> Tensor:
    """Inner product of two same-shape tensors (flattened)."""
    a, b = astensor(a), astensor(b)
    if a.data.size != b.data.size:
        raise ShapeError("dot", a.shape, b.shape)
    return tsum(mul(reshape(a, (a.data.size,)), reshape(b, (b.data.size,))))


def l2_norm(a) -> Tensor:
    a = astensor(a)
    return sqrt(tsum(mul(a, a)))


def conv2d(x, weight, bias=None, padding: str = "valid") -> Tensor:
    """2-D cross-correlation, stride 1.

    x: (B, C, H, W); weight: (OC, C, KH, KW); bias: (OC,) or None.
    padding 'valid' keeps only full windows; 'same' zero-pads so the
    output spatial size equals the input (odd kernels only).
    """
    x, weight = astensor(x), astensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", x.shape, weight.shape)
    oc, c, kh, kw = weight.shape
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("conv2d/same", weight.shape)
        x = pad2d(x, (kh - 1) // 2, (kw - 1) // 2)
    elif padding != "valid":
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    b, _, h, w = x.shape
    oh, ow = h - kh + 1, w - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d", x.shape, weight.shape)
    patches = reshape(unfold(x, kh, kw), (b * oh * ow, c * kh * kw))
    kernel = transpose(reshape(weight, (oc, c * kh * kw)))
    out = transpose(reshape(matmul(patches, kernel), (b, oh, ow, oc)), (0, 3, 1, 2))
    if bias is not None:
        out = add(out, reshape(astensor(bias), (oc, 1, 1)))
    return out


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer labels.

    logits: (B, c) or (c,); labels: int array (B,) or scalar, values in
    [0, c). Uses the log-sum-exp shift, so it is stable for logits up to
    at least +/-1e3.
    """
    z = astensor(logits)
    if z.ndim == 1:
        z = reshape(z, (1, z.shape[0]))
    if z.ndim != 2:
        raise ShapeError("softmax_cross_entropy", z.shape)
    n, c = z.shape
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (n,):
        raise ShapeError("softmax_cross_entropy", z.shape, y.shape)
    if np.any(y < 0) or np.any(y >= c):
        raise ValueError(f"softmax_cross_entropy: labels outside [0, {c})")
    shift = Tensor(np.max(z.data, axis=1, keepdims=True))  # constant: exact for any shift
    lse = add(log(tsum(exp(sub(z, shift)), axis=1, keepdims=True)), shift)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), y] = 1.0
    picked = tsum(mul(z, Tensor(onehot)), axis=1, keepdims=True)
    return mul(tsum(sub(lse, picked)), 1.0 / n)


def softmax(logits) -> np.ndarray:
    """Plain numpy softmax over the last axis (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# backward engine
# ---------------------------------------------------------------------------


def _toposort(root: Tensor) -> list:
    """Parents-before-children ordering of the graph reachable from root."""
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


def _backprop(out: Tensor, wrt: Sequence[Tensor], topo: list, create_graph: bool):
    ids = {id(t) for t in wrt}
    needed = {}
    for node in topo:  # parents appear first
        needed[id(node)] = id(node) in ids or any(needed.get(id(p), False) for p in node._parents)
    if not needed.get(id(out), False):
        return [None] * len(wrt)

    grads = {id(out): Tensor(np.ones_like(out.data))}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None or node._grad_fn is None:
            if g is not None and id(node) in ids:
                grads[id(node)] = g
            continue
        if id(node) in ids:
            grads[id(node)] = g  # wrt tensor that is itself an op output
        for parent, pg in zip(node._parents, node._grad_fn(g)):
            if pg is None or not needed.get(id(parent), False):
                continue
            if not create_graph:
                pg = pg.detach()
            held = grads.get(id(parent))
            grads[id(parent)] = pg if held is None else add(held, pg)
    return [grads.get(id(t)) for t in wrt]


def grad(out: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list:
    """Gradients of a scalar ``out`` with respect to each tensor in ``wrt``.

    Tensors that do not influence ``out`` get zero gradients. With
    ``create_graph`` the returned tensors stay attached to the graph so
    they can be differentiated again.
    """
    if out.data.size != 1:
        raise GraphError(f"grad requires a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        raise GraphError("grad on a detached tensor: no graph to traverse")
    for t in wrt:
        if not t.requires_grad:
            raise GraphError("grad target does not require grad")
    topo = _toposort(out)
    gs = _backprop(out, list(wrt), topo, create_graph)
    return [g if g is not None else Tensor(np.zeros_like(t.data)) for g, t in zip(gs, wrt)]


def hvp(loss_fn: Callable, point, vector):
    """Hessian-vector product of a scalar loss at ``point``.

    ``point`` is a Tensor or sequence of Tensors (all requiring grad);
    ``vector`` matches its structure with array-likes of the same
    shapes. ``loss_fn(point)`` must return a scalar Tensor. The product
    H @ v is obtained by differentiating the inner product <grad, v>.
    Returns detached Tensors in the same structure as ``point``.
    """
    single = isinstance(point, Tensor)
    pts = [point] if single else list(point)
    vecs = [vector] if single else list(vector)
    if len(pts) != len(vecs):
        raise ShapeError("hvp", len(pts), len(vecs))
    for p, v in zip(pts, vecs):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != p.shape:
            raise ShapeError("hvp", p.shape, v.shape)

    out = loss_fn(point)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise GraphError("hvp loss_fn must return a scalar Tensor")
    gs = grad(out, pts, create_graph=True)
    inner = None
    for g, v in zip(gs, vecs):
        term = dot(g, Tensor(np.asarray(v, dtype=np.float64)))
        inner = term if inner is None else add(inner, term)
    if not inner.requires_grad:
        # gradient is constant along the path: the Hessian block is zero
        hv = [Tensor(np.zeros_like(p.data)) for p in pts]
    else:
        hv = [h.detach() for h in grad(inner, pts)]
    return hv[0] if single else hv
