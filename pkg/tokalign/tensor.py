"""
Dense tensors with reverse-mode differentiation.

A `Tensor` wraps a numpy array. Every operation on tensors that require
gradients records its parents and a backward rule; `Tensor.backward` walks the
recorded graph in reverse topological order and accumulates gradients into
``.grad`` of every tensor that asked for one.

Only what the encoders and the contrastive losses need is implemented:
elementwise arithmetic with numpy broadcasting, batched matrix products,
reductions, a numerically stable softmax/logsumexp, gathering, reshaping and
concatenation.
"""

import contextlib
import math
import threading

import numpy as np

from tokalign.common import DEFAULT_DTYPE
from tokalign.align_exception import DimensionError, NumericError


# per thread, so an evaluation thread under no_grad leaves training alone
_g_grad_state = threading.local()
_check_finite = True


@contextlib.contextmanager
def no_grad():
    """
    Context manager disabling graph recording, e.g. for evaluation or for the
    cascade scores which never receive gradients.
    """
    previous = is_grad_enabled()
    _g_grad_state.enabled = False
    try:
        yield
    finally:
        _g_grad_state.enabled = previous


def is_grad_enabled():
    return getattr(_g_grad_state, "enabled", True)


def _as_array(data, dtype=None):
    if isinstance(data, Tensor):
        data = data.data
    if dtype is None:
        if isinstance(data, np.ndarray) and np.issubdtype(
            data.dtype, np.floating
        ):
            dtype = data.dtype
        else:
            dtype = DEFAULT_DTYPE
    return np.ascontiguousarray(data, dtype=dtype)


def _unbroadcast(grad, shape):
    # Sum a broadcast gradient back down to the operand's shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand(grad, shape, axis, keepdims):
    # Inverse of a reduction over ``axis``: broadcast grad back to ``shape``.
    if axis is not None and not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(sorted(a % len(shape) for a in axes))
        for a in axes:
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


class Tensor:
    """
    A dense numeric array with an optional gradient accumulator.

    :param data: anything `numpy.asarray` accepts
    :param bool requires_grad: whether gradients should accumulate here
    :param dtype: numpy float type; defaults to the array's own float type or
        64-bit
    """

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = ""

    @classmethod
    def _node(cls, data, parents, op, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        if _check_finite and not np.all(np.isfinite(data)):
            raise NumericError("non-finite output from {!r}".format(op))
        return out

    def __repr__(self):
        return "Tensor(shape={}, dtype={}, requires_grad={})".format(
            self.shape, self.data.dtype.name, self.requires_grad
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        if self.size != 1:
            raise DimensionError(
                "item() needs a single element, got shape {}".format(
                    self.shape
                )
            )
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            grad = _unbroadcast(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, copy=True)
        else:
            self.grad += grad

    def backward(self, grad=None):
        """
        Accumulate d(self)/d(leaf) into every reachable tensor requiring
        gradients. ``grad`` defaults to 1 and may only be omitted for scalars.
        """
        if grad is None:
            if self.size != 1:
                raise DimensionError(
                    "backward() without a seed gradient needs a scalar"
                )
            grad = np.ones_like(self.data)
        # Iterative post-order DFS; graphs for a training step run deep.
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Arithmetic

    def _lift(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._node(a.data + b.data, (a, b), "add", backward)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._node(-a.data, (a,), "neg", backward)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))

        return Tensor._node(a.data * b.data, (a, b), "mul", backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                )

        return Tensor._node(a.data / b.data, (a, b), "div", backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self

        def backward(g):
            a._accumulate(g * exponent * a.data ** (exponent - 1))

        return Tensor._node(a.data**exponent, (a,), "pow", backward)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __getitem__(self, key):
        a = self

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accumulate(full)

        return Tensor._node(
            np.ascontiguousarray(a.data[key]), (a,), "getitem", backward
        )

    # Elementwise functions

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def backward(g):
            a._accumulate(g * out_data)

        return Tensor._node(out_data, (a,), "exp", backward)

    def log(self):
        a = self

        def backward(g):
            a._accumulate(g / a.data)

        with np.errstate(divide="ignore", invalid="ignore"):
            out_data = np.log(a.data)
        return Tensor._node(out_data, (a,), "log", backward)

    def gelu(self):
        """
        Gaussian error linear unit, tanh approximation. Smooth everywhere,
        which keeps finite-difference checks clean.
        """
        a = self
        x = a.data
        c = math.sqrt(2.0 / math.pi)
        inner = c * (x + 0.044715 * x**3)
        t = np.tanh(inner)
        out_data = 0.5 * x * (1.0 + t)

        def backward(g):
            dinner = c * (1.0 + 3 * 0.044715 * x**2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._accumulate(g * local)

        return Tensor._node(out_data, (a,), "gelu", backward)

    # Reductions

    def sum(self, axis=None, keepdims=False):
        a = self

        def backward(g):
            a._accumulate(_expand(g, a.shape, axis, keepdims))

        return Tensor._node(
            np.asarray(a.data.sum(axis=axis, keepdims=keepdims)),
            (a,),
            "sum",
            backward,
        )

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[x] for x in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def max(self, axis=-1):
        """
        Maximum along one axis. The gradient goes to the first maximal
        element only.
        """
        a = self
        axis = axis % a.ndim
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
        out_data = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

        def backward(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
            a._accumulate(full)

        return Tensor._node(out_data, (a,), "max", backward)

    def logsumexp(self, axis=-1, keepdims=False):
        a = self
        m = a.data.max(axis=axis, keepdims=True)
        shifted = np.exp(a.data - m)
        total = shifted.sum(axis=axis, keepdims=True)
        out_keep = m + np.log(total)
        out_data = out_keep if keepdims else np.squeeze(out_keep, axis=axis)

        def backward(g):
            weights = shifted / total
            a._accumulate(_expand(g, a.shape, axis, keepdims) * weights)

        return Tensor._node(out_data, (a,), "logsumexp", backward)

    def softmax(self, axis=-1):
        a = self
        shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
        out_data = shifted / shifted.sum(axis=axis, keepdims=True)

        def backward(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - inner))

        return Tensor._node(out_data, (a,), "softmax", backward)

    # Shape plumbing

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def backward(g):
            a._accumulate(g.reshape(a.shape))

        return Tensor._node(a.data.reshape(shape), (a,), "reshape", backward)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self
        inverse = tuple(np.argsort(axes))

        def backward(g):
            a._accumulate(np.transpose(g, inverse))

        return Tensor._node(
            np.ascontiguousarray(np.transpose(a.data, axes)),
            (a,),
            "transpose",
            backward,
        )

    def swapaxes(self, first, second):
        axes = list(range(self.ndim))
        axes[first], axes[second] = axes[second], axes[first]
        return self.transpose(*axes)

    @property
    def T(self):
        return self.transpose()


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def matmul(a, b):
    """
    Matrix product with numpy's batching rules over leading dimensions.

    :raises: `.DimensionError` -- if the inner dimensions disagree
    """
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            "matmul needs matrices, got shapes {} and {}".format(
                a.shape, b.shape
            )
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            "matmul inner dimensions differ: {} x {}".format(a.shape, b.shape)
        )

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return Tensor._node(np.matmul(a.data, b.data), (a, b), "matmul", backward)


def softmax_rows(a):
    """
    Row-wise softmax of a matrix, computed after subtracting each row's max.
    """
    if a.ndim != 2:
        raise DimensionError(
            "softmax_rows needs a matrix, got shape {}".format(a.shape)
        )
    return a.softmax(axis=-1)


def concat(tensors, axis=0):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        "concat",
        backward,
    )


def stack(tensors, axis=0):
    tensors = [
        t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors
    ]
    return concat(tensors, axis=axis)


def _scalar_value(out):
    if not isinstance(out, Tensor):
        out = Tensor(out)
    if out.size != 1:
        raise DimensionError(
            "grad_check needs a scalar function, got shape {}".format(
                out.shape
            )
        )
    value = float(out.data.reshape(-1)[0])
    if not math.isfinite(value):
        raise NumericError("grad_check function returned {}".format(value))
    return value


def grad_check(f, params, eps=1e-5, atol=0.0, samples=None, rng=None):
    """
    Compare reverse-mode gradients of ``f`` with central finite differences.

    For every checked coordinate ``k`` of every tensor in ``params`` the
    numeric derivative is ``(f(θ+eps) - f(θ-eps)) / (2·eps)`` and the error
    is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``, or 0 when
    ``|analytic - numeric| <= atol``. The default ``atol`` of 0 leaves the
    relative error as is; a small positive ``atol`` keeps round-off in
    near-zero gradients from reading as a logic failure.

    :param callable f: zero-argument callable returning a scalar `Tensor`
    :param params: iterable of tensors to differentiate with respect to
    :param float eps: finite-difference half-step, > 0
    :param float atol: absolute disagreement treated as exact, >= 0
    :param int samples:
        if given, check only this many randomly chosen coordinates per tensor
    :param rng: `.Rng` used to choose the sampled coordinates
    :return: the maximum relative error, as a `float`
    :raises: `.NumericError` -- if ``f`` is not finite at any evaluation
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if atol < 0:
        raise ValueError("atol must not be negative")
    params = list(params)
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.zero_grad()
    out = f()
    _scalar_value(out)
    out.backward()
    analytic = [
        np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        for p in params
    ]
    worst = 0.0
    with no_grad():
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            gflat = grad.reshape(-1)
            coords = range(flat.size)
            if samples is not None and samples < flat.size:
                chooser = rng.generator if rng is not None else np.random
                picked = chooser.choice(flat.size, samples, replace=False)
                coords = sorted(picked)
            for k in coords:
                orig = flat[k]
                flat[k] = orig + eps
                plus = _scalar_value(f())
                flat[k] = orig - eps
                minus = _scalar_value(f())
                flat[k] = orig
                numeric = (plus - minus) / (2.0 * eps)
                diff = abs(gflat[k] - numeric)
                if diff <= atol:
                    continue
                denom = max(abs(gflat[k]), abs(numeric), 1e-8)
                worst = max(worst, diff / denom)
    for p in params:
        p.zero_grad()
    return worst
