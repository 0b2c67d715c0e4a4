"""Dense tensors with reverse-mode autodiff, plus the Adam optimizer.

Every forward op records its parents and a vector-Jacobian callback on a
tape; ``Tensor.backward()`` walks the tape once in reverse topological
order and accumulates gradients into the leaves that asked for them.
All storage is plain numpy on the CPU.  float32 is the training default;
the gradient-check suites run everything in float64.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "masked_fill",
    "dropout",
    "AdamState",
    "adam_step",
]


class ShapeError(ValueError):
    """Operand shapes cannot be combined."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g


class Tensor:
    """A dense n-dimensional array with optional gradient tracking.

    ``requires_grad`` on a leaf marks it as a parameter; on interior nodes
    it means gradient flows through.  ``grad`` is populated for leaves by
    ``backward()`` and accumulates across calls until ``zero_grad()``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every requires_grad leaf.

        ``self`` must hold a single value.  Repeated calls (on fresh graphs)
        add into existing ``grad`` buffers.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- operators -----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, _ensure_tensor(other))

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return _node(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, axes: tuple[int, ...]) -> "Tensor":
        inverse = tuple(int(i) for i in np.argsort(axes))
        return _node(np.transpose(self.data, axes), (self,),
                     lambda g: (np.transpose(g, inverse),))

    # -- elementwise ops -----------------------------------------------------

    def relu(self) -> "Tensor":
        keep = self.data > 0
        return _node(np.maximum(self.data, 0), (self,), lambda g: (g * keep,))

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        return _node(np.abs(self.data), (self,), lambda g: (g * sign,))

    def log(self) -> "Tensor":
        x = self.data
        return _node(np.log(x), (self,), lambda g: (g / x,))

    def clip(self, lo: float, hi: float) -> "Tensor":
        inside = (self.data > lo) & (self.data < hi)
        return _node(np.clip(self.data, lo, hi), (self,), lambda g: (g * inside,))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return _node(out, (self,), vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape
        if axis is None:
            count = self.data.size
        else:
            count = np.prod([shape[a] for a in np.atleast_1d(axis)])
        out = self.data.mean(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / count, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg / count, shape).copy(),)

        return _node(out, (self,), vjp)


def _ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _binary(a, b, forward, make_vjp) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    ad, bd = a.data, b.data
    return _node(forward(ad, bd), (a, b), lambda g: make_vjp(g, ad, bd))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product on the last two axes, broadcasting the rest."""
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents disagree: {a.shape} @ {b.shape}") from exc
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _node(out, (a, b), vjp)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max subtraction."""
    x = _ensure_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _ensure_tensor(x), _ensure_tensor(gain), _ensure_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def vjp(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gd
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _node(out, (x, gain, bias), vjp)


def masked_fill(x: Tensor, mask: np.ndarray, fill: Tensor) -> Tensor:
    """Replace whole last-axis rows selected by ``mask`` with ``fill``.

    ``mask`` is a boolean array of shape ``x.shape[:-1]``; ``fill`` has shape
    ``(x.shape[-1],)``.  Unselected entries keep their exact bit pattern.
    """
    x, fill = _ensure_tensor(x), _ensure_tensor(fill)
    if mask.shape != x.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} does not match rows of {x.shape}")
    if fill.shape != (x.shape[-1],):
        raise ShapeError(f"fill shape {fill.shape} does not match channels of {x.shape}")
    expanded = mask[..., None]
    out = np.where(expanded, fill.data.astype(x.dtype), x.data)

    def vjp(g):
        dx = np.where(expanded, 0, g)
        dfill = g[mask].sum(axis=0) if mask.any() else np.zeros_like(fill.data)
        return dx, dfill

    return _node(out, (x, fill), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * Tensor(keep)


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moments plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray],
              state: AdamState) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
