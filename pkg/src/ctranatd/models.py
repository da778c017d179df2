"""CTranATD and its baselines (CNN-only, Transformer-only, LSTM).

All four share the pooled MLP classifier head with a sigmoid output; they
differ only in the feature extractor in front of it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from ctranatd import N_FEATURES, WINDOW
from ctranatd.errors import ConfigurationError, DimensionError
from ctranatd.nn import ops
from ctranatd.nn.checkpoint import load_checkpoint, save_checkpoint
from ctranatd.nn.layers import LSTM, Conv1D, Layer, MLPHead, TransformerBlock
from ctranatd.nn.tensor import Parameter, RngState, Tensor3

ARCHITECTURES = ("ctranatd", "cnn", "transformer", "lstm")

# per-attack presets; only the CNN kernel differs between attacks
PRESET_KERNELS = {"DoS": 5, "DDoS": 3, "PortScan": 3}
_PRESET_ALIASES = {"dos": "DoS", "ddos": "DDoS", "portscan": "PortScan"}


def canonical_preset(name: str) -> str:
    key = _PRESET_ALIASES.get(name.lower())
    if key is None:
        raise ConfigurationError(f"unknown attack preset {name!r}; choose dos, ddos or portscan")
    return key


@dataclass
class ModelConfig:
    architecture: str = "ctranatd"
    attack_preset: str = "DoS"
    cnn_filters: int = 64
    cnn_kernel: int = 5
    pool_size: int = 2
    head_size: int = 4
    head_number: int = 2
    ff_dim: int = 64
    transformer_blocks: int = 1
    mlp_hidden: int = 64
    dropout_rate: float = 0.1
    batch_size: int = 32
    lstm_hidden: int = 64
    seed: int = 0
    window: int = WINDOW
    in_features: int = N_FEATURES

    @classmethod
    def preset(cls, attack: str, architecture: str = "ctranatd", seed: int = 0, **overrides) -> "ModelConfig":
        name = canonical_preset(attack)
        cfg = cls(architecture=architecture, attack_preset=name, cnn_kernel=PRESET_KERNELS[name], seed=seed)
        return dataclasses.replace(cfg, **overrides) if overrides else cfg

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ConfigurationError(
                f"unknown architecture {self.architecture!r}; expected one of {', '.join(ARCHITECTURES)}"
            )
        for name in ("cnn_filters", "cnn_kernel", "pool_size", "head_size", "head_number",
                     "ff_dim", "mlp_hidden", "batch_size", "lstm_hidden", "window", "in_features"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.transformer_blocks < 0:
            raise ConfigurationError("transformer_blocks must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if self.architecture in ("ctranatd", "cnn") and self.conv_time < 1:
            raise ConfigurationError(f"kernel {self.cnn_kernel} leaves no time steps in a {self.window}-step window")
        if self.architecture in ("ctranatd", "cnn") and self.pooled_time < 1:
            raise ConfigurationError("pooling leaves an empty time axis")

    @property
    def conv_time(self) -> int:
        return self.window - self.cnn_kernel + 1

    @property
    def pooled_time(self) -> int:
        return self.conv_time // self.pool_size

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class Model:
    """A built network: ordered feature extractor stages plus the MLP head."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        root = RngState(config.seed)
        init = root.derive("init")
        self.rng = root.derive("dropout")
        c = config
        self.conv: Conv1D | None = None
        self.blocks: list[TransformerBlock] = []
        self.lstm: LSTM | None = None

        width = c.in_features
        if c.architecture in ("ctranatd", "cnn"):
            self.conv = Conv1D("conv", c.in_features, c.cnn_filters, c.cnn_kernel, init)
            width = c.cnn_filters
        if c.architecture in ("ctranatd", "transformer"):
            self.blocks = [
                TransformerBlock(f"block{i}", width, c.head_number, c.head_size, c.ff_dim, c.dropout_rate, init)
                for i in range(c.transformer_blocks)
            ]
            for b in self.blocks:
                b.dropout_rng = self.rng
        if c.architecture == "lstm":
            self.lstm = LSTM("lstm", c.in_features, c.lstm_hidden, init)
            width = c.lstm_hidden
        self.head = MLPHead("head", width, c.mlp_hidden, init)

    @property
    def layers(self) -> list[Layer]:
        out: list[Layer] = []
        if self.conv is not None:
            out.append(self.conv)
        if self.lstm is not None:
            out.append(self.lstm)
        out.extend(self.blocks)
        out.append(self.head)
        return out

    def parameters(self) -> Iterator[Parameter]:
        for layer in self.layers:
            yield from layer.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _check_input(self, x: Tensor3) -> None:
        if x.features != self.config.in_features:
            raise DimensionError(
                f"expected {self.config.in_features} features per step, got {x.features}", axis="feature"
            )

    def forward(self, x, training: bool = False) -> Tensor3:
        """Return (B, 1, 1) probabilities; keeps the graph for ``backward``."""
        x = x if isinstance(x, Tensor3) else Tensor3(x)
        self._check_input(x)
        c = self.config
        h = x
        if self.conv is not None:
            h = self.conv(h)
            h = ops.maxpool1d(h, c.pool_size)
            h = ops.dropout(h, c.dropout_rate, training, self.rng)
        for block in self.blocks:
            h = block(h, training)
        if self.lstm is not None:
            h = ops.last_step(self.lstm(h))
        else:
            h = ops.global_avg_pool(h)
        return self.head(h)

    def predict(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Inference-mode scores, shape (B,)."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 2:
            windows = windows[None]
        scores = [
            self.forward(Tensor3(windows[i:i + batch_size]), training=False).data.reshape(-1)
            for i in range(0, len(windows), batch_size)
        ]
        return np.concatenate(scores) if scores else np.zeros(0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters().items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ConfigurationError(f"checkpoint lacks parameters {missing}")
        for name, p in params.items():
            if arrays[name].shape != p.value.shape:
                raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {p.value.shape}", axis=name)
            p.value[...] = arrays[name]

    def save(self, path, extra: dict[str, Any] | None = None) -> None:
        meta = {"config": self.config.to_dict(), "seed": self.config.seed}
        if extra:
            meta.update(extra)
        save_checkpoint(path, self.state_arrays(), meta)


def build(config: ModelConfig) -> Model:
    return Model(config)


def load_model(path) -> tuple[Model, dict[str, Any]]:
    arrays, meta = load_checkpoint(path)
    model = build(ModelConfig.from_dict(meta["config"]))
    model.load_arrays(arrays)
    return model, meta


def parameter_count(config: ModelConfig) -> int:
    """Closed-form count of learnable scalars for ``config``."""
    config.validate()
    c = config
    total = 0
    width = c.in_features
    if c.architecture in ("ctranatd", "cnn"):
        total += c.cnn_filters * c.in_features * c.cnn_kernel + c.cnn_filters
        width = c.cnn_filters
    if c.architecture in ("ctranatd", "transformer"):
        cat = c.head_number * c.head_size
        block = 3 * c.head_number * width * c.head_size + cat * width + width
        block += 2 * 2 * width
        block += width * c.ff_dim + c.ff_dim + c.ff_dim * width + width
        total += c.transformer_blocks * block
    if c.architecture == "lstm":
        h = c.lstm_hidden
        total += 4 * (h * (c.in_features + h) + h)
        width = h
    total += width * c.mlp_hidden + c.mlp_hidden + c.mlp_hidden + 1
    return total
