"""Parameter-owning wrappers around the functional ops.

Weights are Glorot-uniform from the supplied :class:`RngState`; biases
start at zero and layer-norm gains at one.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ctranatd.nn import ops
from ctranatd.nn.tensor import Parameter, RngState, Tensor3, glorot_uniform


class Layer:
    """Base class: a named bag of parameters with a ``__call__`` forward."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, Parameter] = {}

    def _add(self, key: str, value: np.ndarray) -> Parameter:
        p = Parameter(f"{self.name}.{key}", value)
        self.params[key] = p
        return p

    def parameters(self) -> Iterator[Parameter]:
        yield from self.params.values()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, x: Tensor3, training: bool = False) -> Tensor3:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, name: str, n_in: int, n_out: int, rng: RngState, bias: bool = True):
        super().__init__(name)
        self.weight = self._add("w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
        self.bias = self._add("b", np.zeros(n_out)) if bias else None

    def __call__(self, x, training=False):
        return ops.linear(x, self.weight, self.bias)


class Conv1D(Layer):
    def __init__(self, name: str, n_in: int, filters: int, kernel_size: int, rng: RngState):
        super().__init__(name)
        if kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        fan_in, fan_out = n_in * kernel_size, filters * kernel_size
        self.kernel_size = kernel_size
        self.filters = filters
        self.weight = self._add("w", glorot_uniform(rng, (filters, n_in, kernel_size), fan_in, fan_out))
        self.bias = self._add("b", np.zeros(filters))

    def __call__(self, x, training=False):
        return ops.conv1d(x, self.weight, self.bias, self.kernel_size, self.filters)


class MultiHeadAttention(Layer):
    def __init__(self, name: str, width: int, heads: int, head_size: int, rng: RngState):
        super().__init__(name)
        if heads < 1 or head_size < 1:
            raise ValueError("heads and head_size must be >= 1")
        self.heads = heads
        self.head_size = head_size
        for h in range(heads):
            for kind in ("q", "k", "v"):
                self._add(f"w{kind}{h}", glorot_uniform(rng, (width, head_size), width, head_size))
        cat = heads * head_size
        self._add("wo", glorot_uniform(rng, (cat, width), cat, width))
        self._add("bo", np.zeros(width))

    def __call__(self, x, training=False):
        return ops.multi_head_attention(x, self.params, self.heads, self.head_size)


class FeedForward(Layer):
    def __init__(self, name: str, width: int, hidden: int, rng: RngState):
        super().__init__(name)
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        self.hidden = hidden
        self._add("w1", glorot_uniform(rng, (width, hidden), width, hidden))
        self._add("b1", np.zeros(hidden))
        self._add("w2", glorot_uniform(rng, (hidden, width), hidden, width))
        self._add("b2", np.zeros(width))

    def __call__(self, x, training=False):
        return ops.feedforward(x, self.params, self.hidden)


class LayerNorm(Layer):
    def __init__(self, name: str, width: int, epsilon: float = 1e-5):
        super().__init__(name)
        self.epsilon = epsilon
        self.gain = self._add("gain", np.ones(width))
        self.bias = self._add("bias", np.zeros(width))

    def __call__(self, x, training=False):
        return ops.layer_norm(x, self.gain, self.bias, self.epsilon)


class MLPHead(Layer):
    def __init__(self, name: str, width: int, hidden: int, rng: RngState):
        super().__init__(name)
        self.hidden = hidden
        self._add("w1", glorot_uniform(rng, (width, hidden), width, hidden))
        self._add("b1", np.zeros(hidden))
        self._add("w2", glorot_uniform(rng, (hidden, 1), hidden, 1))
        self._add("b2", np.zeros(1))

    def __call__(self, x, training=False):
        return ops.mlp_head(x, self.params, self.hidden)


class LSTM(Layer):
    def __init__(self, name: str, n_in: int, hidden: int, rng: RngState):
        super().__init__(name)
        if hidden < 1:
            raise ValueError("hidden must be >= 1")
        self.hidden = hidden
        self._add("w_x", glorot_uniform(rng, (n_in, 4 * hidden), n_in, 4 * hidden))
        self._add("w_h", glorot_uniform(rng, (hidden, 4 * hidden), hidden, 4 * hidden))
        self._add("b", np.zeros(4 * hidden))

    def __call__(self, x, training=False):
        return ops.lstm_forward(x, self.params, self.hidden)


class TransformerBlock(Layer):
    """Post-norm encoder block.

    x -> MHA -> dropout -> add -> norm -> FFN -> dropout -> add -> norm
    """

    def __init__(
        self,
        name: str,
        width: int,
        heads: int,
        head_size: int,
        ff_dim: int,
        dropout_rate: float,
        rng: RngState,
    ):
        super().__init__(name)
        self.dropout_rate = dropout_rate
        self.attn = MultiHeadAttention(f"{name}.attn", width, heads, head_size, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", width)
        self.ffn = FeedForward(f"{name}.ffn", width, ff_dim, rng)
        self.norm2 = LayerNorm(f"{name}.norm2", width)
        self.children = [self.attn, self.norm1, self.ffn, self.norm2]
        self.dropout_rng: RngState | None = None

    def parameters(self):
        for child in self.children:
            yield from child.parameters()

    def parameter_count(self):
        return sum(c.parameter_count() for c in self.children)

    def __call__(self, x, training=False):
        a = ops.dropout(self.attn(x), self.dropout_rate, training, self.dropout_rng)
        x = self.norm1(ops.residual_add(x, a))
        f = ops.dropout(self.ffn(x), self.dropout_rate, training, self.dropout_rng)
        return self.norm2(ops.residual_add(x, f))
