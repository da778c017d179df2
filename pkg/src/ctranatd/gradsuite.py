"""Finite-difference checks of every layer and of the whole CTranATD network."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ctranatd.models import ModelConfig, build
from ctranatd.nn import layers as L
from ctranatd.nn import ops
from ctranatd.nn.gradcheck import GradCheckReport, grad_check
from ctranatd.nn.tensor import RngState

SHAPE = (2, 8, 6)


def _jitter(layer: L.Layer, gen: np.random.Generator, scale: float = 0.1) -> None:
    # zero biases and unit gains make some gradient paths degenerate
    for p in layer.parameters():
        p.value += gen.standard_normal(p.shape) * scale


def _small_ctranatd(seed: int):
    cfg = ModelConfig(
        architecture="ctranatd", cnn_filters=4, cnn_kernel=3, pool_size=2, head_size=4,
        head_number=2, ff_dim=8, mlp_hidden=8, window=SHAPE[1], in_features=SHAPE[2], seed=seed,
    )
    return build(cfg)


def gradient_suite(tolerance: float = 1e-4, seed: int = 0) -> dict[str, GradCheckReport]:
    gen = np.random.default_rng(seed)
    rng = RngState(seed)
    x = gen.standard_normal(SHAPE)
    B, T, F = SHAPE
    reports: dict[str, GradCheckReport] = {}

    def run(name: str, fn: Callable, layer: L.Layer | None = None, inp=None):
        params = list(layer.parameters()) if layer is not None else []
        reports[name] = grad_check(fn, [x if inp is None else inp], params, tolerance, seed=seed)

    conv = L.Conv1D("conv", F, 4, 3, rng)
    _jitter(conv, gen)
    run("conv1d", lambda a: conv(a), conv)
    run("maxpool1d", lambda a: ops.maxpool1d(a, 2))
    mha = L.MultiHeadAttention("mha", F, 2, 4, rng)
    _jitter(mha, gen)
    run("multi_head_attention", lambda a: mha(a), mha)
    ffn = L.FeedForward("ffn", F, 8, rng)
    _jitter(ffn, gen)
    run("feedforward", lambda a: ffn(a), ffn)
    ln = L.LayerNorm("ln", F)
    _jitter(ln, gen)
    run("layer_norm", lambda a: ln(a), ln)
    head = L.MLPHead("head", F, 8, rng)
    _jitter(head, gen)
    run("mlp_head", lambda a: head(a), head, inp=gen.standard_normal((B, 1, F)))
    lstm = L.LSTM("lstm", F, 5, rng)
    _jitter(lstm, gen)
    run("lstm_forward", lambda a: lstm(a), lstm)

    model = _small_ctranatd(seed)
    for layer in model.layers:
        _jitter(layer, gen, 0.05)
    reports["ctranatd"] = grad_check(
        lambda a: model.forward(a, training=False), [x], list(model.parameters()), tolerance, seed=seed
    )
    return reports
