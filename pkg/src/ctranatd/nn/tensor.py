"""Rank-3 tensors with a gradient buffer, learnable parameters and seeded RNG.

Every op in :mod:`ctranatd.nn.ops` takes and returns :class:`Tensor3` values
and records a closure that pushes the output gradient back into its inputs.
Calling :meth:`Tensor3.backward` on the final output replays those closures
in reverse topological order.
"""

from __future__ import annotations

import zlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ctranatd.errors import DimensionError

DTYPE = np.float64


class Tensor3:
    """Dense ``(batch, time, feature)`` array of float64 plus gradient."""

    __slots__ = ("data", "grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        parents: Sequence["Tensor3"] = (),
        backward: Callable[[], None] | None = None,
        name: str = "",
    ):
        arr = np.ascontiguousarray(data, dtype=DTYPE)
        if arr.ndim != 3:
            raise DimensionError(f"Tensor3 needs 3 axes, got shape {arr.shape}", axis="rank")
        self.data = arr
        self.grad = np.zeros_like(arr)
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def batch(self) -> int:
        return self.data.shape[0]

    @property
    def time(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self, grad=None) -> None:
        """Seed this tensor's gradient and propagate through the recorded graph."""
        if grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(grad, dtype=DTYPE)
            if seed.shape != self.data.shape:
                seed = seed.reshape(self.data.shape)
        self.grad += seed

        order: list[Tensor3] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor3, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def detach(self) -> "Tensor3":
        return Tensor3(self.data.copy())

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor3{label}(shape={self.shape})"


def as_tensor(x) -> Tensor3:
    return x if isinstance(x, Tensor3) else Tensor3(x)


class Parameter:
    """Learnable array with a same-shape gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


class RngState:
    """Seeded PCG64 generator.

    ``derive(label)`` yields an independent child stream keyed by a fixed
    CRC32 of the label, so sub-components can be reseeded without sharing
    state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def derive(self, label: str) -> "RngState":
        return RngState(derive_seed(self.seed, label))

    def random(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low, high, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self._gen.normal(loc, scale, shape)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, n):
        return self._gen.permutation(n)


def derive_seed(seed: int, label: str) -> int:
    """Deterministically mix ``seed`` with a text label into a new 64-bit seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(label.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def glorot_uniform(rng: RngState, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)
