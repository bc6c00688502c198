"""Reverse-mode automatic differentiation over dense float64 arrays.

Every learned operation in this package is expressed through the small op
inventory below.  Graphs are built eagerly: creating a node computes its
value immediately, so ``evaluate`` is a constant-time lookup and each node
is evaluated exactly once.  Gradients are propagated over the reverse
creation order, which is always a valid topological order for an eagerly
built acyclic graph.

Shapes are explicit everywhere; the only broadcasts are matvec and the
row-wise bias add (``add_rowvec``).  All data is 64-bit, which keeps the
central-difference checks in :func:`finite_diff_check` tight.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np


class GraphError(Exception):
    """Malformed graph construction or use."""


class ShapeError(GraphError):
    """Operand dimensions incompatible with the requested op."""


class NonFiniteError(GraphError):
    """A tensor was constructed with NaN or Inf entries."""


class Tensor:
    """Dense float64 array with row-major storage.

    NaN/Inf values are rejected at construction; every intermediate of a
    graph therefore stays finite or the offending op raises immediately.
    """

    __slots__ = ("array",)

    def __init__(self, values, copy: bool = True):
        if isinstance(values, np.ndarray) and values.dtype == np.float64:
            arr = np.array(values, copy=True) if copy else values
        else:
            arr = np.array(values, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dims must be positive, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor of dims {arr.shape}")
        self.array = arr

    @property
    def dims(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Values in row-major order (flat view)."""
        return self.array.reshape(-1)

    def copy(self) -> "Tensor":
        return Tensor(self.array, copy=True)

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims})"


_SEQ = itertools.count()


class Node:
    """One op in the computation graph; value is computed at construction."""

    __slots__ = ("op", "parents", "value", "grad", "aux", "name", "seq")

    def __init__(self, op, parents, value, aux=None, name=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.aux = aux
        self.name = name
        self.seq = next(_SEQ)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node(op={self.op}{tag}, dims={self.value.dims})"


def _make(op, parents, arr, aux=None, name=None) -> Node:
    return Node(op, parents, Tensor(arr, copy=False), aux=aux, name=name)


def constant(values, name: str | None = None) -> Node:
    """Leaf node bound to `values`; `name` ties it to a ParamSet entry."""
    t = values if isinstance(values, Tensor) else Tensor(values)
    return Node("input", (), t, name=name)


def _arr(node: Node) -> np.ndarray:
    return node.value.array


# ---------------------------------------------------------------------------
# op constructors


def add(a: Node, b: Node) -> Node:
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise ShapeError(f"add: {a!r} has dims {x.shape}, {b!r} has dims {y.shape}")
    return _make("add", (a, b), x + y)


def sub(a: Node, b: Node) -> Node:
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise ShapeError(f"sub: {a!r} has dims {x.shape}, {b!r} has dims {y.shape}")
    return _make("sub", (a, b), x - y)


def mul(a: Node, b: Node) -> Node:
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise ShapeError(f"mul: {a!r} has dims {x.shape}, {b!r} has dims {y.shape}")
    return _make("mul", (a, b), x * y)


def scale(a: Node, k: float) -> Node:
    return _make("scale", (a,), _arr(a) * k, aux=float(k))


def add_rowvec(m: Node, v: Node) -> Node:
    """M + v with v broadcast over the rows of M (the bias-add case)."""
    x, y = _arr(m), _arr(v)
    if x.ndim != 2 or y.ndim != 1 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"add_rowvec: {m!r} dims {x.shape} vs {v!r} dims {y.shape}")
    return _make("add_rowvec", (m, v), x + y)


def matvec(a: Node, x: Node) -> Node:
    m, v = _arr(a), _arr(x)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: {a!r} dims {m.shape} vs {x!r} dims {v.shape}")
    return _make("matvec", (a, x), m @ v)


def matvec_t(a: Node, x: Node) -> Node:
    """A^T x for A of dims (m, n) and x of dims (m)."""
    m, v = _arr(a), _arr(x)
    if m.ndim != 2 or v.ndim != 1 or m.shape[0] != v.shape[0]:
        raise ShapeError(f"matvec_t: {a!r} dims {m.shape} vs {x!r} dims {v.shape}")
    return _make("matvec_t", (a, x), m.T @ v)


def matmul(a: Node, b: Node) -> Node:
    x, y = _arr(a), _arr(b)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
        raise ShapeError(f"matmul: {a!r} dims {x.shape} vs {b!r} dims {y.shape}")
    return _make("matmul", (a, b), x @ y)


def matmul_t(a: Node, b: Node) -> Node:
    """A B^T for A of dims (m, k) and B of dims (n, k)."""
    x, y = _arr(a), _arr(b)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"matmul_t: {a!r} dims {x.shape} vs {b!r} dims {y.shape}")
    return _make("matmul_t", (a, b), x @ y.T)


def concat(parts: Sequence[Node]) -> Node:
    if not parts:
        raise ShapeError("concat: no operands")
    arrs = [_arr(p) for p in parts]
    for p, a in zip(parts, arrs):
        if a.ndim != 1:
            raise ShapeError(f"concat: {p!r} is not a vector (dims {a.shape})")
    return _make("concat", tuple(parts), np.concatenate(arrs))


def vslice(x: Node, start: int, stop: int) -> Node:
    v = _arr(x)
    if v.ndim != 1 or not (0 <= start < stop <= v.shape[0]):
        raise ShapeError(f"slice: [{start}:{stop}] invalid for {x!r} dims {v.shape}")
    return _make("slice", (x,), v[start:stop].copy(), aux=(start, stop))


def row(m: Node, i: int) -> Node:
    x = _arr(m)
    if x.ndim != 2 or not (0 <= i < x.shape[0]):
        raise ShapeError(f"row: index {i} invalid for {m!r} dims {x.shape}")
    return _make("row", (m,), x[i].copy(), aux=i)


def stack_rows(rows: Sequence[Node]) -> Node:
    if not rows:
        raise ShapeError("stack_rows: no operands")
    arrs = [_arr(r) for r in rows]
    n = arrs[0].shape
    for r, a in zip(rows, arrs):
        if a.ndim != 1 or a.shape != n:
            raise ShapeError(f"stack_rows: {r!r} dims {a.shape}, expected {n}")
    return _make("stack_rows", tuple(rows), np.stack(arrs))


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    v = _arr(x)
    if int(np.prod(shape, dtype=np.int64)) != v.size:
        raise ShapeError(f"reshape: {x!r} of dims {v.shape} to {shape}")
    return _make("reshape", (x,), v.reshape(shape).copy(), aux=v.shape)


def sum_all(x: Node) -> Node:
    return _make("sum", (x,), np.asarray(_arr(x).sum()))


def squared_norm(x: Node) -> Node:
    v = _arr(x)
    return _make("squared_norm", (x,), np.asarray(np.dot(v.reshape(-1), v.reshape(-1))))


def tanh(x: Node) -> Node:
    return _make("tanh", (x,), np.tanh(_arr(x)))


def sigmoid(x: Node) -> Node:
    v = _arr(x)
    # numerically symmetric form; exp argument is always non-positive
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _make("sigmoid", (x,), out)


def softmax(x: Node) -> Node:
    """Max-subtracted softmax of a vector.

    Max subtraction bounds the denominator below by 1, so no additive guard
    is needed here and the output sums to 1 at machine precision; the
    guarded division lives in the alignment renormalization instead.
    """
    v = _arr(x)
    if v.ndim != 1:
        raise ShapeError(f"softmax: {x!r} is not a vector (dims {v.shape})")
    e = np.exp(v - v.max())
    y = e / e.sum()
    return _make("softmax", (x,), y)


def div_scalar(x: Node, s: Node) -> Node:
    v, d = _arr(x), _arr(s)
    if d.size != 1:
        raise ShapeError(f"div_scalar: divisor {s!r} has dims {d.shape}")
    return _make("div_scalar", (x, s), v / d.reshape(())[()])


def shift_forward(x: Node) -> Node:
    """[x_0 .. x_{n-1}] -> [0, x_0 .. x_{n-2}]; the n-1 -> n move of Eq-style recursions."""
    v = _arr(x)
    if v.ndim != 1:
        raise ShapeError(f"shift_forward: {x!r} is not a vector (dims {v.shape})")
    out = np.empty_like(v)
    out[0] = 0.0
    out[1:] = v[:-1]
    return _make("shift_forward", (x,), out)


def fill(s: Node, n: int) -> Node:
    """Broadcast a scalar node to a length-n vector."""
    d = _arr(s)
    if d.size != 1 or n < 1:
        raise ShapeError(f"fill: scalar {s!r} dims {d.shape}, n={n}")
    return _make("fill", (s,), np.full(n, d.reshape(())[()]), aux=n)


def conv1d(x: Node, k: Node) -> Node:
    """Same-padded 1-D convolution along axis 0.

    x has dims (T, Cin), k has dims (Cout, Cin, width) with odd width;
    zero padding of (width-1)/2 on both sides keeps T rows.
    """
    v, w = _arr(x), _arr(k)
    if v.ndim != 2 or w.ndim != 3 or w.shape[1] != v.shape[1] or w.shape[2] % 2 == 0:
        raise ShapeError(f"conv1d: {x!r} dims {v.shape} vs kernel {k!r} dims {w.shape}")
    t, cin = v.shape
    cout, _, width = w.shape
    pad = (width - 1) // 2
    vp = np.zeros((t + 2 * pad, cin))
    vp[pad : pad + t] = v
    out = np.zeros((t, cout))
    for j in range(width):
        out += vp[j : j + t] @ w[:, :, j].T
    return _make("conv1d", (x, k), out, aux=(pad, vp))


# ---------------------------------------------------------------------------
# backward


def _acc(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad += g


def _bwd_add(n, g):
    _acc(n.parents[0], g)
    _acc(n.parents[1], g)


def _bwd_sub(n, g):
    _acc(n.parents[0], g)
    _acc(n.parents[1], -g)


def _bwd_mul(n, g):
    a, b = n.parents
    _acc(a, g * _arr(b))
    _acc(b, g * _arr(a))


def _bwd_scale(n, g):
    _acc(n.parents[0], g * n.aux)


def _bwd_add_rowvec(n, g):
    _acc(n.parents[0], g)
    _acc(n.parents[1], g.sum(axis=0))


def _bwd_matvec(n, g):
    a, x = n.parents
    _acc(a, np.outer(g, _arr(x)))
    _acc(x, _arr(a).T @ g)


def _bwd_matvec_t(n, g):
    a, x = n.parents
    _acc(a, np.outer(_arr(x), g))
    _acc(x, _arr(a) @ g)


def _bwd_matmul(n, g):
    a, b = n.parents
    _acc(a, g @ _arr(b).T)
    _acc(b, _arr(a).T @ g)


def _bwd_matmul_t(n, g):
    a, b = n.parents
    _acc(a, g @ _arr(b))
    _acc(b, g.T @ _arr(a))


def _bwd_concat(n, g):
    o = 0
    for p in n.parents:
        d = _arr(p).shape[0]
        _acc(p, g[o : o + d])
        o += d


def _bwd_slice(n, g):
    p = n.parents[0]
    start, stop = n.aux
    if p.grad is None:
        p.grad = np.zeros_like(_arr(p))
    p.grad[start:stop] += g


def _bwd_row(n, g):
    p = n.parents[0]
    if p.grad is None:
        p.grad = np.zeros_like(_arr(p))
    p.grad[n.aux] += g


def _bwd_stack_rows(n, g):
    for i, p in enumerate(n.parents):
        _acc(p, g[i])


def _bwd_reshape(n, g):
    _acc(n.parents[0], g.reshape(n.aux))


def _bwd_sum(n, g):
    p = n.parents[0]
    if p.grad is None:
        p.grad = np.full_like(_arr(p), g.reshape(())[()])
    else:
        p.grad += g.reshape(())[()]


def _bwd_squared_norm(n, g):
    _acc(n.parents[0], (2.0 * g.reshape(())[()]) * _arr(n.parents[0]))


def _bwd_tanh(n, g):
    y = _arr(n)
    _acc(n.parents[0], g * (1.0 - y * y))


def _bwd_sigmoid(n, g):
    y = _arr(n)
    _acc(n.parents[0], g * y * (1.0 - y))


def _bwd_softmax(n, g):
    y = _arr(n)
    _acc(n.parents[0], y * (g - np.dot(g, y)))


def _bwd_div_scalar(n, g):
    x, s = n.parents
    d = _arr(s).reshape(())[()]
    _acc(x, g / d)
    _acc(s, np.asarray(-np.sum(g * _arr(x)) / (d * d)))


def _bwd_shift_forward(n, g):
    p = n.parents[0]
    if p.grad is None:
        p.grad = np.zeros_like(_arr(p))
    p.grad[:-1] += g[1:]


def _bwd_fill(n, g):
    _acc(n.parents[0], np.asarray(g.sum()))


def _bwd_conv1d(n, g):
    x, k = n.parents
    w = _arr(k)
    pad, vp = n.aux
    t = g.shape[0]
    width = w.shape[2]
    gk = np.empty_like(w)
    gp = np.zeros_like(vp)
    for j in range(width):
        gk[:, :, j] = g.T @ vp[j : j + t]
        gp[j : j + t] += g @ w[:, :, j]
    _acc(k, gk)
    _acc(x, gp[pad : pad + t])


_BACKWARD = {
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "add_rowvec": _bwd_add_rowvec,
    "matvec": _bwd_matvec,
    "matvec_t": _bwd_matvec_t,
    "matmul": _bwd_matmul,
    "matmul_t": _bwd_matmul_t,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "row": _bwd_row,
    "stack_rows": _bwd_stack_rows,
    "reshape": _bwd_reshape,
    "sum": _bwd_sum,
    "squared_norm": _bwd_squared_norm,
    "tanh": _bwd_tanh,
    "sigmoid": _bwd_sigmoid,
    "softmax": _bwd_softmax,
    "div_scalar": _bwd_div_scalar,
    "shift_forward": _bwd_shift_forward,
    "fill": _bwd_fill,
    "conv1d": _bwd_conv1d,
}


# ---------------------------------------------------------------------------
# parameters, evaluation, gradients


class ParamSet:
    """Named map from parameter name to Tensor; names are unique keys."""

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._items: dict[str, Tensor] = {}
        if items:
            for name, t in items.items():
                self[name] = t

    def __setitem__(self, name: str, value: Tensor) -> None:
        if not isinstance(value, Tensor):
            value = Tensor(value)
        self._items[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._items[name]

    def __contains__(self, name: str) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def names(self) -> list[str]:
        return list(self._items)

    def items(self):
        return self._items.items()

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, t in self._items.items():
            out._items[name] = t.copy()
        return out


def evaluate(root: Node) -> Tensor:
    """Value of `root`.

    Construction is eager, so every node was evaluated exactly once when it
    was built; this is a lookup and two calls return the identical tensor.
    """
    return root.value


def _reachable(root: Node) -> list[Node]:
    seen: set[int] = set()
    out: list[Node] = []
    stack = [root]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        out.append(n)
        stack.extend(n.parents)
    return out


def backward(loss: Node) -> list[Node]:
    """Accumulate d(loss)/d(node) into .grad over the graph below `loss`."""
    if loss.value.array.size != 1:
        raise GraphError(f"loss must be scalar, got dims {loss.value.dims}")
    nodes = _reachable(loss)
    for n in nodes:
        n.grad = None
    nodes.sort(key=lambda n: n.seq, reverse=True)
    loss.grad = np.ones_like(loss.value.array)
    for n in nodes:
        if n.grad is None or n.op == "input":
            continue
        _BACKWARD[n.op](n, n.grad)
    return nodes


def gradients(loss: Node, params: ParamSet) -> dict[str, Tensor]:
    """d(loss)/d(p) for every parameter; untouched parameters get zeros."""
    nodes = backward(loss)
    acc: dict[str, np.ndarray] = {}
    for n in nodes:
        if n.op == "input" and n.name is not None and n.name in params and n.grad is not None:
            if n.name in acc:
                acc[n.name] = acc[n.name] + n.grad
            else:
                acc[n.name] = n.grad
    out: dict[str, Tensor] = {}
    for name in params:
        g = acc.get(name)
        if g is None:
            g = np.zeros_like(params[name].array)
        out[name] = Tensor(g)
    return out


def finite_diff_check(
    build_loss: Callable[[ParamSet], Node],
    params: ParamSet,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss` must rebuild the scalar loss graph from the given ParamSet
    and be deterministic; it is invoked twice at the base point to verify
    that, then twice per parameter coordinate.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    if not 0.0 < eps <= 1e-2:
        raise GraphError(f"eps must be in (0, 1e-2], got {eps}")
    base1 = float(evaluate(build_loss(params)).array.reshape(-1)[0])
    base2 = float(evaluate(build_loss(params)).array.reshape(-1)[0])
    if base1 != base2:
        raise GraphError("loss builder is not deterministic "
                         f"({base1!r} vs {base2!r} on identical inputs)")
    analytic = gradients(build_loss(params), params)
    worst = 0.0
    work = params.copy()
    for name in params:
        flat = work[name].array.reshape(-1)
        aflat = analytic[name].array.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(evaluate(build_loss(work)).array.reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(evaluate(build_loss(work)).array.reshape(-1)[0])
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = aflat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
