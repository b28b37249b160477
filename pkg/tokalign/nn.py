"""
Small neural network building blocks on top of `tokalign.tensor`.

Parameters are plain `.Tensor` objects with ``requires_grad=True``, held as
attributes of `Module` instances; `Module.named_parameters` discovers them in
attribute definition order, which keeps parameter naming and checkpoint
layout stable.
"""

import math

import numpy as np

from tokalign.align_exception import CheckpointError
from tokalign.common import MASK_VALUE
from tokalign.tensor import Tensor


def uniform_parameter(rng, shape, fan_in, dtype):
    """
    Parameter drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    """
    bound = 1.0 / math.sqrt(fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


class Module:
    """
    Parameter container. Subclasses set `.Tensor` parameters, child modules,
    or lists of child modules as public attributes.
    """

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = prefix + name
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(
                            "{}.{}.".format(full, i)
                        )

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        """
        Copy arrays from ``state`` into this module's parameters.

        :raises: `.CheckpointError` -- on missing, extra or misshapen entries
        """
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointError(
                "Parameter names differ; missing {}, unexpected {}".format(
                    missing, extra
                )
            )
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.data.shape:
                raise CheckpointError(
                    "Parameter {} has shape {}, model expects {}".format(
                        name, value.shape, p.data.shape
                    )
                )
            p.data = np.ascontiguousarray(value, dtype=p.data.dtype)
            p.zero_grad()


class Linear(Module):
    def __init__(self, d_in, d_out, rng, dtype):
        self.weight = uniform_parameter(rng, (d_in, d_out), d_in, dtype)
        self.bias = uniform_parameter(rng, (d_out,), d_in, dtype)

    def __call__(self, x):
        return x @ self.weight + self.bias


class Embedding(Module):
    def __init__(self, count, d, rng, dtype):
        self.weight = uniform_parameter(rng, (count, d), d, dtype)

    def __call__(self, ids):
        return self.weight[np.asarray(ids, dtype=np.intp)]


class LayerNorm(Module):
    def __init__(self, d, dtype, eps=1e-5):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self._eps = eps

    def __call__(self, x):
        centered = x - x.mean(axis=-1, keepdims=True)
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered * (var + self._eps) ** -0.5 * self.gain + self.bias


class SelfAttention(Module):
    """
    Multi-head scaled dot-product self-attention over ``(B, L, d)`` inputs.
    """

    def __init__(self, d, heads, rng, dtype):
        self.qkv = Linear(d, 3 * d, rng, dtype)
        self.proj = Linear(d, d, rng, dtype)
        self._heads = heads
        self._scale = 1.0 / math.sqrt(d // heads)

    def __call__(self, x, mask=None):
        batch, length, d = x.shape
        h = self._heads
        qkv = self.qkv(x).reshape(batch, length, 3, h, d // h)
        qkv = qkv.transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.swapaxes(-1, -2)) * self._scale
        if mask is not None:
            scores = scores + mask
        heads = scores.softmax(axis=-1) @ v
        return self.proj(heads.transpose(0, 2, 1, 3).reshape(batch, length, d))


class Block(Module):
    """
    Pre-layer-normalization transformer block: attention then a two-layer
    feed-forward, each wrapped in a residual connection.
    """

    def __init__(self, d, heads, d_ff, rng, dtype):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = SelfAttention(d, heads, rng, dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.ff1 = Linear(d, d_ff, rng, dtype)
        self.ff2 = Linear(d_ff, d, rng, dtype)

    def __call__(self, x, mask=None):
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ff2(self.ff1(self.ln2(x)).gelu())


def attention_mask(valid, dtype):
    """
    Additive key mask of shape ``(B, 1, 1, L)`` from a boolean ``(B, L)``
    validity array.
    """
    additive = np.where(valid, 0.0, MASK_VALUE).astype(dtype)
    return Tensor(additive[:, None, None, :])
