"""Functional layers over :class:`Tensor3` with exact reverse-mode gradients.

Each op computes its forward result eagerly and attaches a closure that,
when the graph is replayed, reads ``out.grad`` and *accumulates* into the
gradients of its inputs and parameters.  Parameters are passed explicitly
so the same functions serve the layer classes, the models and the
gradient checker.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ctranatd.errors import (
    ConfigurationError,
    DimensionError,
    EmptyInputError,
    InvalidWindowError,
)
from ctranatd.nn.tensor import Parameter, RngState, Tensor3

BCE_CLAMP = 1e-12
# sigmoid(+-36) is still strictly inside (0, 1) in float64
SIGMOID_LOGIT_LIMIT = 36.0


def _check_param(p: Parameter, shape: tuple[int, ...], axis: str) -> None:
    if p.value.shape != shape:
        raise DimensionError(
            f"parameter {p.name!r} has shape {p.value.shape}, expected {shape}", axis=axis
        )


# ---------------------------------------------------------------------------
# elementwise and position-wise building blocks
# ---------------------------------------------------------------------------


def linear(x: Tensor3, weight: Parameter, bias: Parameter | None = None) -> Tensor3:
    """Position-wise affine map ``x @ W + b`` with ``W`` shaped (in, out)."""
    if weight.value.ndim != 2 or weight.value.shape[0] != x.features:
        raise DimensionError(
            f"linear {weight.name!r} expects {weight.value.shape[0] if weight.value.ndim == 2 else '?'} "
            f"input features, got {x.features}",
            axis="feature",
        )
    n_out = weight.value.shape[1]
    if bias is not None:
        _check_param(bias, (n_out,), "feature")
    B, T, F = x.shape
    x2 = x.data.reshape(B * T, F)
    y = x2 @ weight.value
    if bias is not None:
        y = y + bias.value
    out = Tensor3(y.reshape(B, T, n_out), parents=(x,))

    def backward():
        g = out.grad.reshape(B * T, n_out)
        weight.grad += x2.T @ g
        if bias is not None:
            bias.grad += g.sum(axis=0)
        x.grad += (g @ weight.value.T).reshape(B, T, F)

    out._backward = backward
    return out


def relu(x: Tensor3) -> Tensor3:
    mask = x.data > 0
    out = Tensor3(np.where(mask, x.data, 0.0), parents=(x,))

    def backward():
        x.grad += out.grad * mask

    out._backward = backward
    return out


def sigmoid(x: Tensor3) -> Tensor3:
    """Logistic function; logits are clipped to +-36 so outputs stay inside (0, 1)."""
    z = np.clip(x.data, -SIGMOID_LOGIT_LIMIT, SIGMOID_LOGIT_LIMIT)
    s = np.exp(-np.logaddexp(0.0, -z))
    inside = np.abs(x.data) <= SIGMOID_LOGIT_LIMIT
    out = Tensor3(s, parents=(x,))

    def backward():
        x.grad += out.grad * s * (1.0 - s) * inside

    out._backward = backward
    return out


def residual_add(x: Tensor3, sublayer_out: Tensor3) -> Tensor3:
    if x.shape != sublayer_out.shape:
        raise DimensionError(
            f"residual operands differ: {x.shape} vs {sublayer_out.shape}", axis="shape"
        )
    out = Tensor3(x.data + sublayer_out.data, parents=(x, sublayer_out))

    def backward():
        x.grad += out.grad
        sublayer_out.grad += out.grad

    out._backward = backward
    return out


def concat_features(parts: Sequence[Tensor3]) -> Tensor3:
    if not parts:
        raise EmptyInputError("nothing to concatenate")
    lead = parts[0].shape[:2]
    for p in parts:
        if p.shape[:2] != lead:
            raise DimensionError(f"cannot concatenate {p.shape} with leading {lead}", axis="time")
    widths = [p.features for p in parts]
    out = Tensor3(np.concatenate([p.data for p in parts], axis=2), parents=tuple(parts))

    def backward():
        start = 0
        for p, w in zip(parts, widths):
            p.grad += out.grad[:, :, start:start + w]
            start += w

    out._backward = backward
    return out


def last_step(x: Tensor3) -> Tensor3:
    """Keep only the final time step, shape (B, 1, F)."""
    if x.time < 1:
        raise EmptyInputError("time axis is empty")
    out = Tensor3(x.data[:, -1:, :], parents=(x,))

    def backward():
        x.grad[:, -1:, :] += out.grad

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# CNN front-end
# ---------------------------------------------------------------------------


def conv1d(
    x: Tensor3,
    weight: Parameter,
    bias: Parameter,
    kernel_size: int | None = None,
    filters: int | None = None,
) -> Tensor3:
    """Valid 1-D convolution over time followed by ReLU.

    ``weight`` is (filters, in_features, kernel_size).  Each output is
    ``relu(sum_c sum_i w[f, c, i] * x[t + i, c] + b[f])``.
    """
    if weight.value.ndim != 3:
        raise DimensionError(f"conv weight must be rank 3, got {weight.value.shape}", axis="rank")
    n_filt, n_in, k = weight.value.shape
    if kernel_size is not None and kernel_size != k:
        raise DimensionError(f"kernel_size {kernel_size} != weight taps {k}", axis="kernel")
    if filters is not None and filters != n_filt:
        raise DimensionError(f"filters {filters} != weight filters {n_filt}", axis="filter")
    if k < 1:
        raise InvalidWindowError("kernel_size must be >= 1", axis="kernel")
    if x.features != n_in:
        raise DimensionError(
            f"conv expects {n_in} input features, got {x.features}", axis="feature"
        )
    _check_param(bias, (n_filt,), "filter")
    B, T, C = x.shape
    if T < k:
        raise InvalidWindowError(f"kernel_size {k} exceeds time length {T}", axis="time")
    t_out = T - k + 1

    cols = sliding_window_view(x.data, k, axis=1)  # (B, t_out, C, k)
    cols2 = cols.reshape(B * t_out, C * k)
    w2 = weight.value.reshape(n_filt, C * k)
    z = (cols2 @ w2.T + bias.value).reshape(B, t_out, n_filt)
    mask = z > 0
    out = Tensor3(np.where(mask, z, 0.0), parents=(x,))

    def backward():
        dz = (out.grad * mask).reshape(B * t_out, n_filt)
        weight.grad += (dz.T @ cols2).reshape(n_filt, C, k)
        bias.grad += dz.sum(axis=0)
        dcols = (dz @ w2).reshape(B, t_out, C, k)
        for i in range(k):
            x.grad[:, i:i + t_out, :] += dcols[..., i]

    out._backward = backward
    return out


def maxpool1d(x: Tensor3, pool_size: int) -> Tensor3:
    """Non-overlapping max over time; trailing steps that do not fill a window are dropped."""
    if pool_size < 1:
        raise ValueError(f"pool_size must be >= 1, got {pool_size}")
    B, T, F = x.shape
    t_out = T // pool_size
    windows = x.data[:, :t_out * pool_size, :].reshape(B, t_out, pool_size, F)
    arg = windows.argmax(axis=2)  # first occurrence on ties
    out = Tensor3(np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0, :], parents=(x,))

    def backward():
        if t_out == 0:
            return
        g = np.zeros_like(windows)
        np.put_along_axis(g, arg[:, :, None, :], out.grad[:, :, None, :], axis=2)
        x.grad[:, :t_out * pool_size, :] += g.reshape(B, t_out * pool_size, F)

    out._backward = backward
    return out


def dropout(x: Tensor3, rate: float, training: bool, rng: RngState | None = None) -> Tensor3:
    """Inverted dropout: survivors are scaled by 1/(1-rate); inference is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        out = Tensor3(x.data, parents=(x,))

        def backward():
            x.grad += out.grad

        out._backward = backward
        return out
    if rng is None:
        raise ConfigurationError("training-mode dropout needs an RngState")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor3(x.data * mask, parents=(x,))

    def backward():
        x.grad += out.grad * mask

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def scaled_dot_attention(q: Tensor3, k: Tensor3, v: Tensor3, d_k: int) -> Tensor3:
    """``softmax(q k^T / sqrt(d_k)) v`` computed independently per batch element."""
    if q.batch != k.batch or q.batch != v.batch:
        raise DimensionError("q, k, v batch sizes differ", axis="batch")
    if q.features != d_k or k.features != d_k:
        raise DimensionError(
            f"q/k feature width ({q.features}, {k.features}) must equal d_k={d_k}", axis="feature"
        )
    if k.time != v.time:
        raise DimensionError(f"k has {k.time} steps but v has {v.time}", axis="time")
    scale = 1.0 / np.sqrt(d_k)
    weights = softmax_rows(np.matmul(q.data, k.data.transpose(0, 2, 1)) * scale)
    out = Tensor3(np.matmul(weights, v.data), parents=(q, k, v))
    out.name = "attention"

    def backward():
        g = out.grad
        v.grad += np.matmul(weights.transpose(0, 2, 1), g)
        dw = np.matmul(g, v.data.transpose(0, 2, 1))
        ds = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True)) * scale
        q.grad += np.matmul(ds, k.data)
        k.grad += np.matmul(ds.transpose(0, 2, 1), q.data)

    out._backward = backward
    return out


def attention_weights(q: np.ndarray, k: np.ndarray, d_k: int) -> np.ndarray:
    """Row-softmax weights alone, for inspection and tests."""
    return softmax_rows(np.matmul(q, np.swapaxes(k, -1, -2)) / np.sqrt(d_k))


def mha_param_names(heads: int) -> list[str]:
    names = []
    for h in range(heads):
        names += [f"wq{h}", f"wk{h}", f"wv{h}"]
    return names + ["wo"]


def multi_head_attention(
    x: Tensor3, params: Mapping[str, Parameter], heads: int, head_size: int
) -> Tensor3:
    """Self-attention with ``heads`` independent projections and an output map.

    ``params`` holds ``wq{h}``, ``wk{h}``, ``wv{h}`` of shape (F, head_size)
    for each head, ``wo`` of shape (heads*head_size, F) and optionally the
    output bias ``bo``.
    """
    if heads < 1 or head_size < 1:
        raise ValueError("heads and head_size must be >= 1")
    missing = [n for n in mha_param_names(heads) if n not in params]
    if missing:
        raise ConfigurationError(f"multi-head attention is missing projections {missing}")
    outs = []
    for h in range(heads):
        q = linear(x, params[f"wq{h}"])
        k = linear(x, params[f"wk{h}"])
        v = linear(x, params[f"wv{h}"])
        if q.features != head_size:
            raise DimensionError(
                f"head {h} projects to {q.features}, expected head_size {head_size}", axis="feature"
            )
        outs.append(scaled_dot_attention(q, k, v, head_size))
    joined = concat_features(outs) if heads > 1 else outs[0]
    return linear(joined, params["wo"], params.get("bo"))


# ---------------------------------------------------------------------------
# transformer block pieces and heads
# ---------------------------------------------------------------------------


def feedforward(x: Tensor3, params: Mapping[str, Parameter], hidden: int | None = None) -> Tensor3:
    """Position-wise ``Linear -> ReLU -> Linear`` returning to the input width."""
    w1, b1, w2, b2 = params["w1"], params["b1"], params["w2"], params["b2"]
    if hidden is not None and w1.value.shape[1] != hidden:
        raise DimensionError(f"ffn hidden width {w1.value.shape[1]} != {hidden}", axis="hidden")
    if w2.value.shape[1] != x.features:
        raise DimensionError("ffn output width must equal input width", axis="feature")
    return linear(relu(linear(x, w1, b1)), w2, b2)


def layer_norm(x: Tensor3, gain: Parameter, bias: Parameter, epsilon: float = 1e-5) -> Tensor3:
    """Normalise each (batch, time) row across features, then scale and shift."""
    F = x.features
    if F < 1:
        raise DimensionError("layer_norm needs at least one feature", axis="feature")
    _check_param(gain, (F,), "feature")
    _check_param(bias, (F,), "feature")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    out = Tensor3(xhat * gain.value + bias.value, parents=(x,))

    def backward():
        g = out.grad
        gain.grad += (g * xhat).sum(axis=(0, 1))
        bias.grad += g.sum(axis=(0, 1))
        dxhat = g * gain.value
        x.grad += inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )

    out._backward = backward
    return out


def global_avg_pool(x: Tensor3) -> Tensor3:
    if x.time == 0:
        raise EmptyInputError("cannot average over an empty time axis")
    T = x.time
    out = Tensor3(x.data.mean(axis=1, keepdims=True), parents=(x,))

    def backward():
        x.grad += out.grad / T

    out._backward = backward
    return out


def mlp_head(x: Tensor3, params: Mapping[str, Parameter], hidden: int | None = None) -> Tensor3:
    """Classifier head on a pooled (B, 1, F) tensor; returns (B, 1, 1) probabilities."""
    if x.time != 1:
        raise DimensionError(f"mlp_head expects time length 1, got {x.time}", axis="time")
    w1 = params["w1"]
    if hidden is not None and w1.value.shape[1] != hidden:
        raise DimensionError(f"mlp hidden width {w1.value.shape[1]} != {hidden}", axis="hidden")
    h = relu(linear(x, w1, params["b1"]))
    return sigmoid(linear(h, params["w2"], params["b2"]))


def bce_loss(scores, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient with respect to ``scores``.

    Scores are clamped to ``[1e-12, 1 - 1e-12]`` before the log; the returned
    gradient has the same shape as ``scores``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(s.shape)
    if s.size == 0:
        raise EmptyInputError("bce_loss on an empty batch")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    n = s.size
    sc = np.clip(s, BCE_CLAMP, 1.0 - BCE_CLAMP)
    loss = -(y * np.log(sc) + (1.0 - y) * np.log1p(-sc)).sum() / n
    grad = (-(y / sc) + (1.0 - y) / (1.0 - sc)) / n
    return float(loss), grad


# ---------------------------------------------------------------------------
# recurrent baseline
# ---------------------------------------------------------------------------


def _sig(z):
    return np.exp(-np.logaddexp(0.0, -z))


def lstm_forward(x: Tensor3, params: Mapping[str, Parameter], hidden: int | None = None) -> Tensor3:
    """Single-layer LSTM over time; returns every hidden state, shape (B, T, H).

    Gate blocks in ``w_x`` (C, 4H), ``w_h`` (H, 4H) and ``b`` (4H) are ordered
    input, forget, output, candidate.  Initial hidden and cell states are zero.
    """
    w_x, w_h, b = params["w_x"], params["w_h"], params["b"]
    H = w_h.value.shape[0]
    if hidden is not None and hidden != H:
        raise DimensionError(f"lstm hidden {H} != {hidden}", axis="hidden")
    if hidden is not None and hidden < 1:
        raise ValueError("hidden must be >= 1")
    B, T, C = x.shape
    if w_x.value.shape != (C, 4 * H):
        raise DimensionError(
            f"lstm w_x has shape {w_x.value.shape}, expected {(C, 4 * H)}", axis="feature"
        )
    _check_param(w_h, (H, 4 * H), "hidden")
    _check_param(b, (4 * H,), "hidden")

    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.zeros((T, B, 4 * H))
    tanh_c = np.zeros((T, B, H))
    xs = x.data.transpose(1, 0, 2)  # (T, B, C)
    for t in range(T):
        z = xs[t] @ w_x.value + hs[t] @ w_h.value + b.value
        a = np.empty_like(z)
        a[:, :3 * H] = _sig(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        cs[t + 1] = f * cs[t] + i * g
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tanh_c[t]
        gates[t] = a
    out = Tensor3(hs[1:].transpose(1, 0, 2), parents=(x,))

    def backward():
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dout = out.grad.transpose(1, 0, 2)
        dx = np.zeros((T, B, C))
        for t in reversed(range(T)):
            a = gates[t]
            i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            dh = dout[t] + dh_next
            dc = dh * o * (1.0 - tanh_c[t] ** 2) + dc_next
            dz = np.empty((B, 4 * H))
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tanh_c[t] * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            w_x.grad += xs[t].T @ dz
            w_h.grad += hs[t].T @ dz
            b.grad += dz.sum(axis=0)
            dx[t] = dz @ w_x.value.T
            dh_next = dz @ w_h.value.T
            dc_next = dc * f
        x.grad += dx.transpose(1, 0, 2)

    out._backward = backward
    return out
