"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Values are float64 numpy arrays of rank 0, 1 or 2. Each `Tensor` is at the
same time a node of the computation graph: it stores the operation kind that
produced it, references to its inputs, the cached forward value and the
gradient accumulated by `backward`. Graphs are built eagerly, so the forward
value of every node is available as soon as the expression is written down.

Broadcasting is restricted to scalars and row/column vectors against
matrices. Gradients accumulate across repeated `backward` calls; call
`reset_grads` between passes when accumulation is not wanted.
"""

import numpy as np

_ELEMENTWISE_BINOPS = ("add", "sub", "mul", "div")


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > 2:
        raise ValueError(f"tensors are limited to rank 2, got shape {arr.shape}")
    return arr


def _check_broadcast(op: str, a_shape, b_shape):
    """Allow equal shapes, scalars, and row/column vectors against a matrix."""
    try:
        out = np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a_shape} and {b_shape} are incompatible") from None
    if len(out) > 2:
        raise ValueError(f"{op}: shapes {a_shape} and {b_shape} exceed rank 2")
    for s in (a_shape, b_shape):
        if s != out and np.prod(s, dtype=int) != 1 and len(s) == 2 and s[0] != 1 and s[1] != 1:
            raise ValueError(
                f"{op}: broadcast of {a_shape} against {b_shape} is not a scalar, "
                "row or column broadcast"
            )
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce an upstream gradient back to the shape of a broadcast operand."""
    if grad.shape == tuple(shape):
        return grad
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A float64 array plus its place in the computation graph.

    Leaf tensors are created directly from data; every operation returns a
    new tensor whose `parents` reference its operands. `grad` is populated by
    `backward` and has the same shape as `data`.
    """

    __slots__ = ("data", "grad", "op", "parents", "_bwd", "requires_grad", "name")

    def __init__(self, data, *, requires_grad: bool = False, name: str | None = None,
                 _op: str = "leaf", _parents: tuple = (), _bwd=None):
        self.data = _as_array(data)
        if _op == "leaf" and not np.all(np.isfinite(self.data)):
            raise ValueError(f"leaf tensor{' ' + name if name else ''} contains non-finite entries")
        self.grad = None
        self.op = _op
        self.parents = _parents
        self._bwd = _bwd
        self.name = name
        if _op == "leaf":
            self.requires_grad = requires_grad
        else:
            self.requires_grad = any(p.requires_grad for p in _parents)

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    # Operator sugar; constants are wrapped on the fly.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, parents, value: np.ndarray, bwd) -> Tensor:
    return Tensor(value, _op=op, _parents=tuple(parents), _bwd=bwd)


# ---------------------------------------------------------------------------
# primitives


def _binop(op: str, a: Tensor, b: Tensor, fwd, da, db) -> Tensor:
    _check_broadcast(op, a.data.shape, b.data.shape)
    value = fwd(a.data, b.data)
    def bwd(g):
        return (_unbroadcast(da(g, a.data, b.data, value), a.data.shape),
                _unbroadcast(db(g, a.data, b.data, value), b.data.shape))
    return _node(op, (a, b), value, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binop("add", a, b, lambda x, y: x + y,
                  lambda g, x, y, v: g, lambda g, x, y, v: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binop("sub", a, b, lambda x, y: x - y,
                  lambda g, x, y, v: g, lambda g, x, y, v: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binop("mul", a, b, lambda x, y: x * y,
                  lambda g, x, y, v: g * y, lambda g, x, y, v: g * x)


def div(a: Tensor, b: Tensor) -> Tensor:
    return _binop("div", a, b, lambda x, y: x / y,
                  lambda g, x, y, v: g / y, lambda g, x, y, v: -g * x / (y * y))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: operands must be matrices, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: shapes {a.data.shape} and {b.data.shape} are incompatible")
    value = a.data @ b.data
    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)
    return _node("matmul", (a, b), value, bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.data.shape}")
    return _node("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def neg(a: Tensor) -> Tensor:
    return _node("neg", (a,), -a.data, lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)
    return _node("exp", (a,), value, lambda g: (g * value,))


def log(a: Tensor) -> Tensor:
    return _node("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def elu(a: Tensor) -> Tensor:
    pos = a.data > 0
    expm1 = np.expm1(np.where(pos, 0.0, a.data))
    value = np.where(pos, a.data, expm1)
    # d/dx elu = 1 for x > 0, exp(x) otherwise
    return _node("elu", (a,), value, lambda g: (g * np.where(pos, 1.0, expm1 + 1.0),))


def sigmoid(a: Tensor) -> Tensor:
    value = 1.0 / (1.0 + np.exp(-a.data))
    return _node("sigmoid", (a,), value, lambda g: (g * value * (1.0 - value),))


def row_sum(a: Tensor) -> Tensor:
    """Sum each row of a matrix, producing a column vector."""
    if a.data.ndim != 2:
        raise ValueError(f"row_sum: expected a matrix, got shape {a.data.shape}")
    value = a.data.sum(axis=1, keepdims=True)
    n, d = a.data.shape
    return _node("row_sum", (a,), value, lambda g: (np.broadcast_to(g, (n, d)).copy(),))


def sum_all(a: Tensor) -> Tensor:
    """Sum every entry, producing a scalar."""
    value = np.asarray(a.data.sum())
    return _node("sum_all", (a,), value, lambda g: (np.full_like(a.data, float(g)),))


def row_softmax(a: Tensor) -> Tensor:
    """Softmax along each row, stabilised by max subtraction."""
    if a.data.ndim != 2:
        raise ValueError(f"row_softmax: expected a matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=1, keepdims=True)
    def bwd(g):
        dot = (g * value).sum(axis=1, keepdims=True)
        return (value * (g - dot),)
    return _node("row_softmax", (a,), value, bwd)


def row_log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"row_log_softmax: expected a matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    value = shifted - lse
    soft = np.exp(value)
    def bwd(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)
    return _node("row_log_softmax", (a,), value, bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    if any(t.data.ndim != 2 for t in tensors):
        raise ValueError("concat: all operands must be matrices")
    value = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))
    return _node("concat", tensors, value, bwd)


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows by integer index; gradients scatter-add back."""
    if a.data.ndim != 2:
        raise ValueError(f"gather_rows: expected a matrix, got shape {a.data.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError(f"gather_rows: index must be one-dimensional, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {a.data.shape[0]} rows")
    value = a.data[idx]
    def bwd(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _node("gather_rows", (a,), value, bwd)


def index_sum(a: Tensor, index, num_rows: int) -> Tensor:
    """Scatter-add rows of `a` into `num_rows` buckets given by `index`."""
    if a.data.ndim != 2:
        raise ValueError(f"index_sum: expected a matrix, got shape {a.data.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (a.data.shape[0],):
        raise ValueError(f"index_sum: index shape {idx.shape} does not match {a.data.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise ValueError(f"index_sum: index out of range for {num_rows} rows")
    value = np.zeros((num_rows, a.data.shape[1]))
    np.add.at(value, idx, a.data)
    return _node("index_sum", (a,), value, lambda g: (g[idx],))


# ---------------------------------------------------------------------------
# graph traversal


def _topo_order(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def graph_tensors(root: Tensor):
    """Every tensor reachable from `root`, parents before children."""
    return _topo_order(root)


def forward(root: Tensor) -> np.ndarray:
    """Cached forward value at the root of an (eagerly evaluated) graph."""
    return root.data


def backward(root: Tensor) -> dict:
    """Reverse-mode sweep from a scalar root.

    Accumulates `grad` on every node that requires gradients and returns a
    map from each reachable gradient-bearing leaf to its gradient array
    (zeros for leaves the root does not depend on).
    """
    if root.data.size != 1:
        raise ValueError(f"backward: root must be scalar, got shape {root.data.shape}")
    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node.op == "leaf":
            if node.requires_grad:
                incoming = g if g is not None else np.zeros_like(node.data)
                node.grad = incoming if node.grad is None else node.grad + incoming
                leaves[node] = node.grad
            continue
        if g is None or not node.requires_grad:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, pg in zip(node.parents, node._bwd(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return leaves


def reset_grads(root: Tensor):
    """Clear accumulated gradients everywhere in the graph under `root`."""
    for node in _topo_order(root):
        node.grad = None
