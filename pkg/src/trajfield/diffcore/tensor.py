"""Reverse-mode autodiff over dense float64 numpy arrays.

Every value is a Tensor wrapping an ndarray. Operations on Tensors that
require gradients record parent links and a vector-Jacobian closure; a
backward() call from a scalar root walks the recorded graph in reverse
topological order and accumulates gradients additively into every
requires_grad Tensor it can reach. Operations whose inputs are all
constants record nothing, so constant subgraphs cost only the forward
arithmetic.

CPU only, float64 only. Each training step builds a fresh graph.
"""

import numpy as np

# Ops accepted by forward_op(). Internal helpers (linear, posenc, reshape)
# exist as Tensor methods but are not part of this public primitive set.
PRIMITIVE_OPS = frozenset([
    "add", "sub", "mul", "div", "matmul", "sum", "mean", "max_over_window",
    "exp", "log", "sin", "cos", "sqrt", "sigmoid", "softplus", "relu",
    "abs", "concat", "slice", "broadcast", "power",
])


class DiffcoreError(ValueError):
    """Shape or usage error in a diffcore operation."""


class DomainError(DiffcoreError):
    """Input outside an op's mathematical domain (log/sqrt of negatives)."""


def _as_array(x):
    a = np.asarray(x, dtype=np.float64)
    return a


def as_tensor(x):
    """Lift plain values to a constant Tensor; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(_as_array(x))


def _unbroadcast(grad, shape):
    """Reduce grad back to `shape` by summing the axes numpy broadcast."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array plus optional gradient and graph record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()       # Tensors this one was computed from
        self._vjp = None         # grad_out -> tuple of parent grads (or None)
        self._op = None          # op name, for error messages

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = self._op or ("param" if self.requires_grad else "const")
        return f"Tensor(shape={self.data.shape}, {tag})"

    def detach(self):
        """Constant view of this value, sharing the underlying array."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- graph bookkeeping -------------------------------------------------

    @staticmethod
    def _make(data, parents, vjp, op):
        """Record a node only when some parent participates in a gradient."""
        track = any(p.requires_grad or p._parents for p in parents)
        out = Tensor(data, requires_grad=track)
        if track:
            out._parents = tuple(parents)
            out._vjp = vjp
            out._op = op
        return out

    def backward(self):
        """Populate grads of every reachable requires_grad Tensor.

        Root must be scalar (size 1). Gradients accumulate: calling
        backward twice without zeroing doubles every grad.
        """
        if self.size != 1:
            raise DiffcoreError(
                f"backward requires a scalar root, got shape {self.shape}")
        if self._vjp is None and not self.requires_grad:
            raise DiffcoreError("backward on a detached Tensor (no recorded graph)")

        # Iterative topological order over the recorded subgraph.
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and (p._parents or p.requires_grad):
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                # Leaf: this is where gradients are reported.
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p.requires_grad or p._parents):
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg

    # -- elementwise binary ops ---------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tensor_slice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def _binary(op, a, b, fwd, vjp_builder):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as e:
        raise DiffcoreError(
            f"{op}: incompatible shapes {a.shape} and {b.shape}") from e
    return Tensor._make(data, (a, b), vjp_builder(a, b), op)


def add(a, b):
    return _binary(
        "add", a, b, np.add,
        lambda a, b: lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    return _binary(
        "sub", a, b, np.subtract,
        lambda a, b: lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    return _binary(
        "mul", a, b, np.multiply,
        lambda a, b: lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    def vjp(a, b):
        def run(g):
            inv = 1.0 / b.data
            return (_unbroadcast(g * inv, a.shape),
                    _unbroadcast(-g * a.data * inv * inv, b.shape))
        return run
    return _binary("div", a, b, np.divide, vjp)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DiffcoreError("matmul: inputs must be at least 1-D")
    try:
        data = a.data @ b.data
    except ValueError as e:
        raise DiffcoreError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}") from e

    def vjp(g):
        ad, bd = a.data, b.data
        ga = gb = None
        if a.ndim == 1 and b.ndim == 1:        # inner product -> scalar
            ga, gb = g * bd, g * ad
        elif a.ndim == 1:                      # (k,) @ (k,m) -> (m,)
            ga, gb = g @ bd.T, np.outer(ad, g)
        elif b.ndim == 1:                      # (n,k) @ (k,) -> (n,)
            ga, gb = np.outer(g, bd), ad.T @ g
        else:                                  # (n,k) @ (k,m) -> (n,m)
            ga, gb = g @ bd.T, ad.T @ g
        return ga, gb

    return Tensor._make(data, (a, b), vjp, "matmul")


def power(a, p):
    """a ** p for a real constant exponent p."""
    a = as_tensor(a)
    p = float(p)
    data = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return Tensor._make(data, (a,), vjp, "power")


# -- elementwise unary ops ---------------------------------------------------

def _unary(op, a, data, grad_local):
    """grad_local: ndarray d(out)/d(in), multiplied into upstream grad."""
    return Tensor._make(data, (a,), lambda g: (g * grad_local(),), op)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary("exp", a, out, lambda: out)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: input must be strictly positive")
    return _unary("log", a, np.log(a.data), lambda: 1.0 / a.data)


def sin(a):
    a = as_tensor(a)
    return _unary("sin", a, np.sin(a.data), lambda: np.cos(a.data))


def cos(a):
    a = as_tensor(a)
    return _unary("cos", a, np.cos(a.data), lambda: -np.sin(a.data))


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt: input must be nonnegative")
    out = np.sqrt(a.data)
    return _unary("sqrt", a, out, lambda: 0.5 / np.maximum(out, 1e-300))


def _sigmoid_np(x):
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid_np(a.data)
    return _unary("sigmoid", a, out, lambda: out * (1.0 - out))


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _unary("softplus", a, out, lambda: _sigmoid_np(a.data))


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _unary("relu", a, out, lambda: np.sign(out))


def tensor_abs(a):
    a = as_tensor(a)
    return _unary("abs", a, np.abs(a.data), lambda: np.sign(a.data))


# -- reductions ---------------------------------------------------------------

def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._make(np.asarray(data, dtype=np.float64), (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    s = tensor_sum(a, axis, keepdims)
    return mul(s, 1.0 / n)


def max_over_window(a, window):
    """Hard max over a length-`window` sliding window along the last axis.

    Output has last-axis length N - window + 1. The subgradient routes to
    the argmax sample of each window, first index winning ties. With
    window == N this is a plain max reduction (keepdims on the last axis).
    """
    a = as_tensor(a)
    n = a.shape[-1] if a.ndim else 0
    if a.ndim == 0 or window < 1 or window > n:
        raise DiffcoreError(
            f"max_over_window: window {window} invalid for last axis of shape {a.shape}")
    view = np.lib.stride_tricks.sliding_window_view(a.data, window, axis=-1)
    data = view.max(axis=-1)
    arg = view.argmax(axis=-1)  # first max within each window

    def vjp(g):
        out = np.zeros_like(a.data)
        starts = np.arange(data.shape[-1])
        idx = starts + arg  # absolute index into the last axis
        flat_out = out.reshape(-1, n)
        flat_idx = idx.reshape(-1, data.shape[-1])
        flat_g = np.asarray(g, dtype=np.float64).reshape(-1, data.shape[-1])
        rows = np.arange(flat_out.shape[0])[:, None]
        np.add.at(flat_out, (rows, flat_idx), flat_g)
        return (out,)

    return Tensor._make(data, (a,), vjp, "max_over_window")


# -- shape ops ----------------------------------------------------------------

def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DiffcoreError("concat: need at least one input")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DiffcoreError(
            f"concat: incompatible shapes {[t.shape for t in tensors]}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(data, tuple(tensors), vjp, "concat")


def tensor_slice(a, idx):
    """Basic indexing (ints, slices, tuples thereof)."""
    a = as_tensor(a)
    data = a.data[idx]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return Tensor._make(np.asarray(data, dtype=np.float64), (a,), vjp, "slice")


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        data = np.broadcast_to(a.data, shape)
    except ValueError as e:
        raise DiffcoreError(
            f"broadcast: cannot broadcast {a.shape} to {tuple(shape)}") from e

    def vjp(g):
        return (_unbroadcast(g, a.shape),)

    return Tensor._make(data.copy(), (a,), vjp, "broadcast")


def reshape(a, *shape):
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    data = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor._make(data, (a,), vjp, "reshape")


# -- fused ops (performance; not part of the public primitive set) -----------

def linear(x, w, b):
    """x @ w + b in one node. x: (B, in), w: (in, out), b: (out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DiffcoreError(f"linear: bad shapes x{x.shape} w{w.shape}")
    data = x.data @ w.data
    data += b.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor._make(data, (x, w, b), vjp, "linear")


def posenc(x, num_freqs, include_input=True):
    """Sinusoidal positional encoding with frequencies 2^k * pi, k < num_freqs.

    x: (B, D). Output (B, D * (2*num_freqs + include_input)), laid out as
    [x, sin(pi x), cos(pi x), sin(2 pi x), cos(2 pi x), ...]. One fused
    node; the backward pass reuses the forward sin/cos values.
    """
    x = as_tensor(x)
    if num_freqs < 1:
        raise DiffcoreError("posenc: num_freqs must be >= 1")
    if x.ndim != 2:
        raise DiffcoreError(f"posenc: expected 2-D input, got shape {x.shape}")
    b, d = x.shape
    freqs = np.pi * (2.0 ** np.arange(num_freqs))
    off = d if include_input else 0
    data = np.empty((b, off + num_freqs * 2 * d))
    if include_input:
        data[:, :d] = x.data
    sc = data[:, off:].reshape(b, num_freqs, 2, d)
    phase = x.data[:, None, :] * freqs[None, :, None]      # (B, F, D)
    s = np.sin(phase)
    c = np.cos(phase)
    sc[:, :, 0, :] = s
    sc[:, :, 1, :] = c

    def vjp(g):
        gsc = g[:, off:].reshape(b, num_freqs, 2, d)
        gx = np.einsum("bfd,bfd,f->bd", gsc[:, :, 0, :], c, freqs)
        gx -= np.einsum("bfd,bfd,f->bd", gsc[:, :, 1, :], s, freqs)
        if include_input:
            gx += g[:, :d]
        return (gx,)

    return Tensor._make(data, (x,), vjp, "posenc")


# -- generic dispatcher -------------------------------------------------------

_DISPATCH = {
    "add": add, "sub": sub, "mul": mul, "div": div, "matmul": matmul,
    "sum": tensor_sum, "mean": tensor_mean, "max_over_window": max_over_window,
    "exp": exp, "log": log, "sin": sin, "cos": cos, "sqrt": sqrt,
    "sigmoid": sigmoid, "softplus": softplus, "relu": relu, "abs": tensor_abs,
    "concat": concat, "slice": tensor_slice, "broadcast": broadcast_to,
    "power": power,
}


def forward_op(op_name, inputs, **kwargs):
    """Evaluate a named primitive on a list of inputs, recording the node.

    `inputs` is a list of Tensors (or values liftable to Tensors); ops with
    non-Tensor arguments (window size, axis, slice index, target shape,
    exponent) take them as keyword arguments.
    """
    if op_name not in PRIMITIVE_OPS:
        raise DiffcoreError(f"unknown primitive op '{op_name}'")
    fn = _DISPATCH[op_name]
    if op_name == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


def graph_nodes(root):
    """The recorded computation graph reaching `root`, in topological order.

    Returns a list of (op name, input Tensors, output Tensor) records;
    every node's inputs appear earlier in the list, and leaves come first
    with op name None. The same walk drives backward().
    """
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append((node._op, list(node._parents), node))
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order
