"""float64 tensors on a reverse-mode gradient tape, plus the Adam optimizer.

Every trainable quantity in the toolkit (encoder activations, CRF scores,
losses) lives in a Tensor. Each op records a backward closure; calling
backward() on a scalar loss replays the closures in reverse topological
order. Sizes are desk-scale, so the implementation favors clarity: matmul
is strictly 2-D, reductions take a single axis or None, and nothing is
computed in place.
"""

import math

import numpy as np

from .errors import ContractError, LabelError, NumericError, ShapeError, VocabError

__all__ = [
    "Tensor",
    "matmul",
    "softmax",
    "logsumexp",
    "layer_norm",
    "gelu",
    "embedding_lookup",
    "cross_entropy",
    "concat",
    "dropout",
    "Adam",
]


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @staticmethod
    def _result(data, parents, backward_fn):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        return out

    @staticmethod
    def _coerce(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = Tensor._coerce(other)
        out_data = self.data + other.data

        def fn(out):
            self.grad += _unbroadcast(out.grad, self.data.shape)
            other.grad += _unbroadcast(out.grad, other.data.shape)

        return Tensor._result(out_data, (self, other), fn)

    __radd__ = __add__

    def __neg__(self):
        def fn(out):
            self.grad -= out.grad

        return Tensor._result(-self.data, (self,), fn)

    def __sub__(self, other):
        return self + (-Tensor._coerce(other))

    def __rsub__(self, other):
        return Tensor._coerce(other) + (-self)

    def __mul__(self, other):
        other = Tensor._coerce(other)
        out_data = self.data * other.data

        def fn(out):
            self.grad += _unbroadcast(other.data * out.grad, self.data.shape)
            other.grad += _unbroadcast(self.data * out.grad, other.data.shape)

        return Tensor._result(out_data, (self, other), fn)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if not isinstance(scalar, (int, float)):
            raise ContractError("tensor division is supported for scalars only")
        return self * (1.0 / scalar)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ContractError("tensor exponent must be a scalar")
        base = self.data
        out_data = base ** exponent

        def fn(out):
            self.grad += exponent * base ** (exponent - 1.0) * out.grad

        return Tensor._result(out_data, (self,), fn)

    def __matmul__(self, other):
        other = Tensor._coerce(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise ShapeError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        out_data = a @ b

        def fn(out):
            self.grad += out.grad @ b.T
            other.grad += a.T @ out.grad

        return Tensor._result(out_data, (self, other), fn)

    # -- shape and indexing -------------------------------------------------

    def __getitem__(self, idx):
        out_data = np.array(self.data[idx])

        def fn(out):
            np.add.at(self.grad, idx, out.grad)

        return Tensor._result(out_data, (self,), fn)

    def reshape(self, *shape):
        out_data = self.data.reshape(*shape)

        def fn(out):
            self.grad += out.grad.reshape(self.data.shape)

        return Tensor._result(out_data, (self,), fn)

    @property
    def T(self):
        def fn(out):
            self.grad += out.grad.T

        return Tensor._result(self.data.T, (self,), fn)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def fn(out):
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self.grad += np.broadcast_to(g, self.data.shape)

        return Tensor._result(out_data, (self,), fn)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- autodiff -------------------------------------------------------------

    def backward(self):
        """Populate .grad on every reachable requires_grad tensor.

        The loss must be a scalar (size 1). Uses an explicit stack so deep
        tapes (long CRF chains, many layers) never hit the recursion limit.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        for node in topo:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node)


# -- functional ops ------------------------------------------------------------


def matmul(a, b):
    """Matrix product of two 2-D tensors; gradient flows to both inputs."""
    return Tensor._coerce(a) @ b


def softmax(x, axis=-1):
    """Stabilized softmax along `axis`: rows are positive and sum to 1."""
    x = Tensor._coerce(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def fn(out):
        g = out.grad
        x.grad += (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return Tensor._result(y, (x,), fn)


def logsumexp(x, axis=None, keepdims=False):
    """log(sum(exp(x))) along `axis`, max-shifted so huge scores stay finite."""
    x = Tensor._coerce(x)
    xd = x.data
    if axis is None:
        m = xd.max()
        e = np.exp(xd - m)
        s = e.sum()
        out_data = np.asarray(m + np.log(s))

        def fn(out):
            x.grad += (e / s) * out.grad

        return Tensor._result(out_data, (x,), fn)

    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    s = e.sum(axis=axis, keepdims=True)
    res = m + np.log(s)
    out_data = res if keepdims else np.squeeze(res, axis=axis)

    def fn(out):
        g = out.grad if keepdims else np.expand_dims(out.grad, axis)
        x.grad += (e / s) * g

    return Tensor._result(out_data, (x,), fn)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x):
    """Gaussian error linear unit (tanh form), gelu(0) == 0."""
    x = Tensor._coerce(x)
    xd = x.data
    inner = _GELU_C * (xd + _GELU_A * xd ** 3)
    t = np.tanh(inner)
    out_data = 0.5 * xd * (1.0 + t)

    def fn(out):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * xd ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner
        x.grad += local * out.grad

    return Tensor._result(out_data, (x,), fn)


def layer_norm(x, gain, bias, eps=1e-12):
    """Normalize the last axis to zero mean / unit variance, then scale-shift.

    A constant row normalizes to zeros, so the output there is exactly `bias`.
    """
    x, gain, bias = Tensor._coerce(x), Tensor._coerce(gain), Tensor._coerce(bias)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    width = xd.shape[-1]

    def fn(out):
        g = out.grad
        gain.grad += (g * xhat).reshape(-1, width).sum(axis=0)
        bias.grad += g.reshape(-1, width).sum(axis=0)
        gx = g * gain.data
        x.grad += inv * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )

    return Tensor._result(out_data, (x, gain, bias), fn)


def embedding_lookup(table, ids):
    """Gather rows of `table` for integer `ids`; gradient scatter-adds back."""
    table = Tensor._coerce(table)
    ids_arr = np.asarray(ids, dtype=np.intp)
    n_rows = table.data.shape[0]
    if ids_arr.size and (ids_arr.min() < 0 or ids_arr.max() >= n_rows):
        bad = int(ids_arr.min() if ids_arr.min() < 0 else ids_arr.max())
        raise VocabError(f"id {bad} outside embedding table of size {n_rows}")
    out_data = table.data[ids_arr]

    def fn(out):
        np.add.at(table.grad, ids_arr, out.grad)

    return Tensor._result(out_data, (table,), fn)


def cross_entropy(logits, label):
    """-log softmax(logits)[label] for a 1-D logit vector."""
    logits = Tensor._coerce(logits)
    if logits.data.ndim != 1:
        raise ContractError(f"cross_entropy expects 1-D logits, got shape {logits.data.shape}")
    n = logits.data.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise LabelError(f"class {label} out of range for {n} logits")
    return logsumexp(logits) - logits[label]


def concat(tensors, axis=0):
    """Concatenate tensors along `axis`; gradient splits back to each input."""
    tensors = [Tensor._coerce(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def fn(out):
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(offset, offset + size)
            t.grad += out.grad[tuple(sl)]
            offset += size

    return Tensor._result(out_data, tuple(tensors), fn)


def dropout(x, rate, rng):
    """Inverted dropout; identity when rate <= 0."""
    if rate <= 0.0:
        return x
    x = Tensor._coerce(x)
    keep = (rng.random(size=x.data.shape) >= rate).astype(np.float64) / (1.0 - rate)
    out_data = x.data * keep

    def fn(out):
        x.grad += keep * out.grad

    return Tensor._result(out_data, (x,), fn)


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Defaults follow the optimizer's canonical constants; only the learning
    rate is task-specific. With fresh state and zero gradients a step leaves
    every parameter unchanged.
    """

    def __init__(self, params, lr=3e-5, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.first_moment = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.second_moment = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}"
                )
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
