"""A small reverse-mode tape over numpy arrays.

Each ``Tensor`` produced by an operation keeps references to the inputs that
require gradients together with a closure mapping the output cotangent to
input cotangents.  ``backward`` walks the graph in reverse topological order.
Operations whose derivative is supplied externally (the rasterizer) enter the
tape through :func:`custom`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    # -- convenience ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("non-finite value produced on the tape")
    out = Tensor(value)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.value**exponent,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1),),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def minimum(a, limit: float) -> Tensor:
    """Elementwise ``min(a, limit)`` against a constant."""
    a = as_tensor(a)
    mask = a.value < limit
    return _make(np.where(mask, a.value, limit), (a,), lambda g: (g * mask,))


def maximum(a, limit: float) -> Tensor:
    a = as_tensor(a)
    mask = a.value > limit
    return _make(np.where(mask, a.value, limit), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def moveaxis(a, source, destination) -> Tensor:
    a = as_tensor(a)
    return _make(
        np.moveaxis(a.value, source, destination),
        (a,),
        lambda g: (np.moveaxis(g, destination, source),),
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _make(
        np.stack([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def where(condition: np.ndarray, a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(condition, dtype=bool)
    return _make(
        np.where(cond, a.value, b.value),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(cond, g, 0.0), a.shape),
            _unbroadcast(np.where(cond, 0.0, g), b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def vjp(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.value @ b.value, (a, b), vjp)


def axis_matmul(a, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a constant ``(m, n)`` matrix along one axis of ``a``."""
    a = as_tensor(a)
    matrix = np.asarray(matrix, dtype=np.float64)

    def forward(x, mat):
        return np.moveaxis(np.moveaxis(x, axis, -1) @ mat.T, -1, axis)

    return _make(forward(a.value, matrix), (a,), lambda g: (forward(g, matrix.T),))


def custom(inputs: Sequence[Tensor], value: np.ndarray, vjp: Callable) -> Tensor:
    """Insert an externally differentiated operation into the tape.

    ``vjp`` receives the output cotangent and returns one cotangent per input.
    """
    return _make(value, [as_tensor(t) for t in inputs], vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate ``.grad`` on every tensor that requires grad and feeds ``loss``.

    Tensors listed in ``params`` that ``loss`` does not depend on get a zero
    gradient.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    for p in params:
        p.zero_grad()
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# multi-layer perceptron

_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softplus": softplus,
    "none": lambda t: t,
}


class Mlp:
    """Fully connected network: ``x @ W + b`` per layer, ``activation`` between
    layers and ``output_activation`` at the end."""

    def __init__(
        self,
        widths: Sequence[int],
        activation: str = "relu",
        output_activation: str = "none",
        rng: np.random.Generator | None = None,
        output_bias: float = 0.0,
        name: str = "mlp",
    ):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        for act in (activation, output_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = list(widths)
        self.activation = activation
        self.output_activation = output_activation
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            b = np.zeros(fan_out)
            if i == len(widths) - 2:
                b += output_bias
            self.weights.append(Tensor(w, True, f"{name}.w{i}"))
            self.biases.append(Tensor(b, True, f"{name}.b{i}"))

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.widths[0]:
            raise ValueError(
                f"{self.name}: input width {x.shape[-1]} does not match first layer width {self.widths[0]}"
            )
        hidden = _ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            x = _ACTIVATIONS[self.output_activation](x) if i == last else hidden(x)
        return x


# ---------------------------------------------------------------------------
# optimizer


def adam_step(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-15,
    name: str = "param",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam update; returns ``(param, m, v)``.

    ``t`` is the 1-based step count, either a scalar or an array that
    broadcasts against ``param`` (per-row counts for resizable parameters).
    """
    if np.any(np.asarray(t) < 1):
        raise ValueError("Adam step count must be >= 1")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    """Adam over named tensors with per-row step counts.

    Row-level bookkeeping lets callers drop or append rows of a parameter
    (pruned or grown anchors) without disturbing the moments of the others.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-15):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def _slot(self, name: str, value: np.ndarray) -> dict[str, np.ndarray]:
        slot = self.state.get(name)
        if slot is None or slot["m"].shape != value.shape:
            rows = value.shape[0] if value.ndim else 1
            slot = {
                "m": np.zeros_like(value),
                "v": np.zeros_like(value),
                "t": np.zeros(rows, dtype=np.int64),
            }
            self.state[name] = slot
        return slot

    def step(self, params: Iterable[Tensor], lr: float) -> None:
        for p in params:
            if p.grad is None:
                continue
            slot = self._slot(p.name, p.value)
            slot["t"] += 1
            t = slot["t"].reshape((-1,) + (1,) * (p.value.ndim - 1)) if p.value.ndim else slot["t"][0]
            p.value, slot["m"], slot["v"] = adam_step(
                p.value, p.grad, slot["m"], slot["v"], t, lr,
                self.beta1, self.beta2, self.eps, p.name,
            )

    def reindex(self, name: str, keep: np.ndarray, n_new: int = 0) -> None:
        """Keep rows ``keep`` of a parameter's state and append ``n_new`` fresh rows."""
        slot = self.state.get(name)
        if slot is None:
            return
        for key in ("m", "v", "t"):
            kept = slot[key][keep]
            fresh = np.zeros((n_new,) + kept.shape[1:], dtype=kept.dtype)
            slot[key] = np.concatenate([kept, fresh], axis=0)
