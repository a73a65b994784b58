"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` objects are recorded on the innermost active
:class:`Tape` (``with Tape() as tape: ...``). Outside a tape, operations run
forward only, which is how inference and finite-difference probes evaluate.

Gradients are zeroed at the start of every :func:`backward` call; callers that
want accumulation across steps must keep their own buffers.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_TAPE_STACK: list["Tape"] = []
_TAPE_SERIAL = itertools.count()


class ContractError(ValueError):
    """A caller violated an operation's precondition (shape, range, ...)."""


class CorruptTapeError(RuntimeError):
    """The tape references a node before it was defined."""


def _shape_str(shape) -> str:
    return "[" + " x ".join(str(s) for s in shape) + "]"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape_id", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.tape_id: tuple[int, int] | None = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {_shape_str(self.shape)}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class _Node:
    __slots__ = ("op", "inputs", "input_ids", "output", "output_id", "backward")

    def __init__(self, op, inputs, input_ids, output, output_id, backward):
        self.op = op
        self.inputs = inputs
        self.input_ids = input_ids
        self.output = output
        self.output_id = output_id
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Leaves (tensors not produced on this tape) are registered the first time
    they feed a recorded op; ids are assigned from one counter so a node's
    inputs always carry smaller ids than its output.
    """

    def __init__(self):
        self.serial = next(_TAPE_SERIAL)
        self.nodes: list[_Node] = []
        self.leaves: dict[int, Tensor] = {}
        self._next_id = 0

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def _id_of(self, t: Tensor) -> int:
        if t.tape_id is not None and t.tape_id[0] == self.serial:
            return t.tape_id[1]
        nid = self._next_id
        self._next_id += 1
        t.tape_id = (self.serial, nid)
        self.leaves[nid] = t
        return nid

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: Callable) -> None:
        ids = tuple(self._id_of(t) for t in inputs)
        oid = self._next_id
        self._next_id += 1
        output.tape_id = (self.serial, oid)
        self.nodes.append(_Node(op, tuple(inputs), ids, output, oid, backward))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def current_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class no_grad:
    """Suspend recording (forward-only evaluation) inside a tape context."""

    def __enter__(self):
        self._saved = list(_TAPE_STACK)
        _TAPE_STACK.clear()

    def __exit__(self, *exc):
        _TAPE_STACK.extend(self._saved)


def _make(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: Callable) -> Tensor:
    rg = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg, dtype=data.dtype)
    tape = current_tape()
    if tape is not None and rg:
        tape.record(op, inputs, out, backward)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad leaf recorded on ``tape``.

    Leaf grads are reset to zeros first, so leaves the loss does not depend on
    end up with an all-zero gradient.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {_shape_str(loss.shape)}")

    defined = set(tape.leaves)
    for node in tape.nodes:
        for iid in node.input_ids:
            if iid not in defined:
                raise CorruptTapeError(f"node {node.output_id} ({node.op}) references undefined node {iid}")
        defined.add(node.output_id)

    for leaf in tape.leaves.values():
        if leaf.requires_grad:
            leaf.grad = np.zeros_like(leaf.data)

    on_tape = loss.tape_id is not None and loss.tape_id[0] == tape.serial
    if not on_tape:
        return
    loss_id = loss.tape_id[1]
    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, iid, gi in zip(node.inputs, node.input_ids, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            prev = grads.get(iid)
            grads[iid] = gi if prev is None else prev + gi
    for lid, leaf in tape.leaves.items():
        if leaf.requires_grad and lid in grads:
            leaf.grad = np.asarray(grads[lid], dtype=leaf.data.dtype).reshape(leaf.shape).copy()


# ----------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------
def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(
            f"{op}: incompatible shapes {_shape_str(a.shape)} and {_shape_str(b.shape)}"
        ) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make("add", (a, b), a.data + b.data, bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make("sub", (a, b), a.data - b.data, bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", (a,), -a.data, lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make("mul", (a, b), a.data * b.data, bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make("div", (a, b), a.data / b.data, bw)


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands (``[m x k] @ [k x n]``)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {_shape_str(a.shape)} and {_shape_str(b.shape)}")

    def bw(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        if a.ndim == 2:  # matrix @ vector
            return np.outer(g, b.data), a.data.T @ g
        if b.ndim == 2:  # vector @ matrix
            return b.data @ g, np.outer(a.data, g)
        return g * b.data, g * a.data

    return _make("matmul", (a, b), a.data @ b.data, bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", (a,), out, lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", (a,), out, lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    return tuple(ax % ndim for ax in (axis if isinstance(axis, tuple) else (axis,)))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", (a,), np.asarray(a.data.sum(axis=axes)), bw)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = a.size if axes is None else int(np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        if axes is not None:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make("mean", (a,), np.asarray(a.data.mean(axis=axes)), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot view {_shape_str(a.shape)} as {shape}") from None
    return _make("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractError(f"transpose expects a matrix, got {_shape_str(a.shape)}")
    return _make("transpose", (a,), a.data.T, lambda g: (g.T,))


def take(a, idx) -> Tensor:
    """Gather rows: ``out = a[idx]`` along axis 0; gradient scatter-adds back."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        bad = int(idx.max() if idx.max() >= a.shape[0] else idx.min())
        raise ContractError(f"take: index {bad} out of range for {a.shape[0]} rows")

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make("take", (a,), a.data[idx], bw)


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _make("getitem", (a,), np.array(out), bw)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("stack needs at least one tensor")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ContractError(f"stack: mismatched shapes {sorted(shapes)}")

    def bw(g):
        return tuple(g[i] for i in range(len(ts)))

    return _make("stack", ts, np.stack([t.data for t in ts]), bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", (a,), y, bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)

    def bw(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", (a,), out, bw)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    h = x.shape[-1]
    if gamma.shape != (h,) or beta.shape != (h,):
        raise ContractError(
            f"layer_norm: gain {_shape_str(gamma.shape)} / bias {_shape_str(beta.shape)} "
            f"do not match width {h}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        dxhat = g * gamma.data
        dx = inv / h * (h * dxhat - dxhat.sum(-1, keepdims=True) - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        return dx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make("layer_norm", (x, gamma, beta), xhat * gamma.data + beta.data, bw)


def l2_norm(a) -> Tensor:
    """Euclidean norm of all entries; the subgradient at zero is zero."""
    a = as_tensor(a)
    n = float(np.sqrt((a.data * a.data).sum()))

    def bw(g):
        if n == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / n,)

    return _make("l2_norm", (a,), np.asarray(n, dtype=a.data.dtype), bw)


def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractError(f"mse: shape mismatch {_shape_str(a.shape)} vs {_shape_str(b.shape)}")
    d = a.data - b.data
    n = d.size

    def bw(g):
        ga = 2.0 * g * d / n
        return ga, -ga

    return _make("mse", (a, b), np.asarray((d * d).mean()), bw)


def cross_entropy(logits, label: int) -> Tensor:
    """Negative log-likelihood of ``label`` under softmax(``logits``) for a 1-D logit vector."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ContractError(f"cross_entropy expects 1-D logits, got {_shape_str(logits.shape)}")
    if not 0 <= label < logits.shape[0]:
        raise ContractError(f"cross_entropy: label {label} out of range for {logits.shape[0]} classes")
    return neg(take(log_softmax(logits), label))


def grad_reverse(x, scale: float) -> Tensor:
    """Identity forward; backward multiplies the incoming gradient by ``-scale``."""
    x = as_tensor(x)
    s = float(scale)
    return _make("grad_reverse", (x,), x.data.copy(), lambda g: (-s * g,))


def conv1d(x, w, b) -> Tensor:
    """Same-padded 1-D convolution over time.

    ``x`` is ``[T x C_in]``, ``w`` is ``[K x C_in x C_out]`` with odd ``K``,
    ``b`` is ``[C_out]``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 3 or w.shape[0] % 2 != 1:
        raise ContractError(f"conv1d: kernel must be [odd K x in x out], got {_shape_str(w.shape)}")
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ContractError(f"conv1d: input {_shape_str(x.shape)} does not match kernel {_shape_str(w.shape)}")
    if b.shape != (w.shape[2],):
        raise ContractError(f"conv1d: bias {_shape_str(b.shape)} does not match {w.shape[2]} outputs")
    k = w.shape[0]
    pad = k // 2
    t = x.shape[0]
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    out = b.data + sum(xp[i:i + t] @ w.data[i] for i in range(k))

    def bw(g):
        gw = np.stack([xp[i:i + t].T @ g for i in range(k)])
        gxp = np.zeros_like(xp)
        for i in range(k):
            gxp[i:i + t] += g @ w.data[i].T
        return gxp[pad:pad + t], gw, g.sum(axis=0)

    return _make("conv1d", (x, w, b), out, bw)
