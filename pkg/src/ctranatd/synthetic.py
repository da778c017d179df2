"""Desk-scale synthetic UAV flow records in the CICIDS2017 column layout.

Records arrive once per second.  Attacks are injected as whole-minute
episodes: a chosen fraction of minutes is attacked, and every record in such
a minute is abnormal.  Abnormal records shift a per-attack subset of the 53
flow statistics by ``shift_magnitude`` standard deviations and show the
attack's address/port pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ctranatd.errors import ConfigurationError
from ctranatd.preprocess import (
    ATTACK_KINDS,
    FLOW_FEATURES,
    EnvironmentConfig,
    FlowRecord,
    sample_environment,
)
from ctranatd.nn.tensor import RngState

START_TIME = 1_499_076_000  # a minute boundary
PROFILE_SEED = 20170703

# Features each attack pushes upward, most characteristic first.
ATTACK_FEATURES: dict[str, tuple[str, ...]] = {
    "DoS": (
        "Flow Duration", "Flow IAT Max", "Fwd IAT Total", "Bwd Packet Length Std",
        "Packet Length Variance", "Flow IAT Std", "Bwd Packet Length Max",
        "Max Packet Length", "Flow IAT Mean", "Fwd IAT Max",
    ),
    "DDoS": (
        "Flow Packets/s", "Fwd Packets/s", "Bwd Packet Length Mean", "Avg Bwd Segment Size",
        "Total Length of Bwd Packets", "Init_Win_bytes_forward", "ACK Flag Count",
        "Packet Length Mean", "Average Packet Size", "Subflow Bwd Bytes",
    ),
    "PortScan": (
        "SYN Flag Count", "RST Flag Count", "Fwd Packets/s", "Flow Packets/s",
        "Init_Win_bytes_backward", "Bwd Packets/s", "Down/Up Ratio",
        "Fwd Header Length", "PSH Flag Count", "Min Packet Length",
    ),
}

UAV_PREFIX = "10.0.0."
EDGE_PREFIX = "192.168.10."
ATTACKER = "172.16.0.1"
SERVICE_PORTS = (443, 8080, 1883, 5683)


def feature_profile() -> tuple[np.ndarray, np.ndarray]:
    """Fixed per-feature (mean, std) of normal traffic, shared by every dataset."""
    rng = np.random.default_rng(PROFILE_SEED)
    mean = rng.uniform(10.0, 1000.0, len(FLOW_FEATURES))
    std = mean * rng.uniform(0.05, 0.3, len(FLOW_FEATURES))
    return mean, std


@dataclass
class SynthConfig:
    records: int = 12_000
    attack: str = "DoS"
    attack_fraction: float = 0.3
    shift_magnitude: float = 3.0
    shift_features: int = 5
    uav_count: int = 4
    seed: int = 0
    env: EnvironmentConfig = field(default_factory=EnvironmentConfig)

    def validate(self) -> None:
        if self.attack not in ATTACK_KINDS:
            raise ConfigurationError(f"attack must be one of {ATTACK_KINDS}, got {self.attack!r}")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise ConfigurationError(f"attack fraction {self.attack_fraction} outside [0, 1]")
        if self.records < 0:
            raise ConfigurationError("record count must be non-negative")
        if not 0 <= self.shift_features <= len(ATTACK_FEATURES[self.attack]):
            raise ConfigurationError(
                f"shift_features must be within [0, {len(ATTACK_FEATURES[self.attack])}]"
            )
        if self.uav_count < 1:
            raise ConfigurationError("uav_count must be >= 1")
        self.env.validate()


def shifted_indices(attack: str, count: int) -> list[int]:
    return [FLOW_FEATURES.index(name) for name in ATTACK_FEATURES[attack][:count]]


def generate_minute(
    rng: RngState,
    start: float,
    n: int,
    attack: str | None,
    config: SynthConfig,
    uav_index: int | None = None,
) -> list[FlowRecord]:
    """``n`` one-per-second records starting at ``start``; abnormal iff ``attack``."""
    mean, std = feature_profile()
    gen = rng.generator
    feats = gen.normal(mean, std, size=(n, len(mean)))
    abnormal = attack is not None
    if abnormal:
        idx = shifted_indices(attack, config.shift_features)
        feats[:, idx] += config.shift_magnitude * std[idx]
    env = sample_environment(np.full(n, abnormal), config.env, rng)

    uavs = gen.integers(1, config.uav_count + 1, size=n) if uav_index is None else np.full(n, uav_index + 1)
    edges = gen.integers(1, 5, size=n)
    src_ports = gen.integers(32768, 61000, size=n)
    svc = gen.integers(0, len(SERVICE_PORTS), size=n)
    udp = gen.random(n) < 0.3
    scan_base = int(gen.integers(1, 60000))
    bots = gen.integers(0, 256, size=(n, 2))

    out = []
    for i in range(n):
        if attack is None:
            src, dst = f"{UAV_PREFIX}{uavs[i]}", f"{EDGE_PREFIX}{edges[i]}"
            dport, proto = SERVICE_PORTS[svc[i]], "UDP" if udp[i] else "TCP"
        elif attack == "DoS":
            src, dst, dport, proto = ATTACKER, f"{EDGE_PREFIX}1", 80, "TCP"
        elif attack == "DDoS":
            src = f"172.16.{bots[i, 0]}.{bots[i, 1]}"
            dst, dport, proto = f"{EDGE_PREFIX}1", 80, "TCP"
        else:
            src, dst, proto = ATTACKER, f"{EDGE_PREFIX}{edges[i]}", "TCP"
            dport = (scan_base + i) % 65536
        out.append(
            FlowRecord(
                timestamp=float(start + i),
                src_ip=src,
                dst_ip=dst,
                src_port=int(src_ports[i]),
                dst_port=int(dport),
                protocol=proto,
                features=tuple(feats[i].tolist()),
                environment=tuple(env[i].tolist()),
                abnormal=abnormal,
                attack=attack or "none",
            )
        )
    return out


def generate_records(config: SynthConfig) -> list[FlowRecord]:
    """Timestamp-ordered records; ``round(fraction * minutes)`` whole minutes are attacked."""
    config.validate()
    rng = RngState(config.seed).derive("synth")
    n_minutes = -(-config.records // 60)
    n_attacked = int(round(config.attack_fraction * n_minutes))
    attacked = set(rng.choice(n_minutes, size=n_attacked, replace=False).tolist()) if n_attacked else set()
    records: list[FlowRecord] = []
    for m in range(n_minutes):
        n = min(60, config.records - 60 * m)
        attack = config.attack if m in attacked else None
        records += generate_minute(rng, START_TIME + 60 * m, n, attack, config)
    return records
