"""Flow-record parsing, feature encoding and 60-step window assembly.

A record encodes to 71 values:

* 53 flow statistics, z-scored
* 13 environmental channels, z-scored
* source and destination IP, FNV-1a hashed into [0, 1]
* source and destination port, min-max scaled over [0, 65535]
* protocol, mapped to a small integer id (0 = unknown)

Standardisation statistics and the protocol table are fitted on training
windows only and frozen before anything else is encoded.
"""

from __future__ import annotations

import csv
import dataclasses
import ipaddress
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from ctranatd import N_FEATURES, WINDOW
from ctranatd.errors import (
    ConfigurationError,
    EmptyDatasetError,
    EncodingError,
    FitError,
    SchemaError,
)
from ctranatd.fileio import atomic_write, write_npz
from ctranatd.nn.tensor import RngState

log = logging.getLogger(__name__)

# 53 CICIDS2017 flow statistics.  Dropped from the published column set:
# Destination Port (encoded separately), the duplicated "Fwd Header Length.1",
# the constant-zero bulk-rate and URG/CWE columns, and the Active/Idle
# aggregates.
FLOW_FEATURES: tuple[str, ...] = (
    "Flow Duration", "Total Fwd Packets", "Total Backward Packets",
    "Total Length of Fwd Packets", "Total Length of Bwd Packets",
    "Fwd Packet Length Max", "Fwd Packet Length Min", "Fwd Packet Length Mean",
    "Fwd Packet Length Std", "Bwd Packet Length Max", "Bwd Packet Length Min",
    "Bwd Packet Length Mean", "Bwd Packet Length Std", "Flow Bytes/s",
    "Flow Packets/s", "Flow IAT Mean", "Flow IAT Std", "Flow IAT Max",
    "Flow IAT Min", "Fwd IAT Total", "Fwd IAT Mean", "Fwd IAT Std",
    "Fwd IAT Max", "Fwd IAT Min", "Bwd IAT Total", "Bwd IAT Mean",
    "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags",
    "Fwd Header Length", "Bwd Header Length", "Fwd Packets/s", "Bwd Packets/s",
    "Min Packet Length", "Max Packet Length", "Packet Length Mean",
    "Packet Length Std", "Packet Length Variance", "FIN Flag Count",
    "SYN Flag Count", "RST Flag Count", "PSH Flag Count", "ACK Flag Count",
    "Down/Up Ratio", "Average Packet Size", "Avg Fwd Segment Size",
    "Avg Bwd Segment Size", "Subflow Fwd Bytes", "Subflow Bwd Bytes",
    "Init_Win_bytes_forward", "Init_Win_bytes_backward", "act_data_pkt_fwd",
)

ENV_CHANNELS: tuple[str, ...] = (
    "atmosphere_pressure_hpa", "humidity_pct", "temperature_c", "wind_speed_ms",
    "rainfall_mm", "surface_acceleration_ms2", "surface_gravity_ms2", "altitude_m",
    "illuminance_klux", "co2_ppm", "pm25_ugm3", "signal_strength_dbm", "battery_v",
)

ATTACK_KINDS = ("DoS", "DDoS", "PortScan")
IP_BUCKETS = 65536
PORT_MAX = 65535
SCHEMA_MODES = ("cicids", "synthetic")

_CICIDS_META = {
    "timestamp": "Timestamp",
    "src_ip": "Source IP",
    "src_port": "Source Port",
    "dst_ip": "Destination IP",
    "dst_port": "Destination Port",
    "protocol": "Protocol",
    "label": "Label",
}
_SYNTH_META = {
    "timestamp": "timestamp",
    "src_ip": "src_ip",
    "src_port": "src_port",
    "dst_ip": "dst_ip",
    "dst_port": "dst_port",
    "protocol": "protocol",
    "label": "label",
}
SYNTH_HEADER: tuple[str, ...] = (
    tuple(_SYNTH_META[k] for k in ("timestamp", "src_ip", "src_port", "dst_ip", "dst_port", "protocol"))
    + FLOW_FEATURES
    + ENV_CHANNELS
    + ("label", "attack")
)

_TIME_FORMATS = ("%d/%m/%Y %H:%M:%S", "%d/%m/%Y %H:%M", "%Y-%m-%d %H:%M:%S", "%m/%d/%Y %I:%M:%S %p")


@dataclass(frozen=True)
class FlowRecord:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    features: tuple[float, ...]
    environment: tuple[float, ...] | None
    abnormal: bool
    attack: str = "none"

    @property
    def label(self) -> int:
        return int(self.abnormal)


@dataclass
class ParseResult:
    records: list[FlowRecord]
    skipped: int = 0
    path: str = ""

    def __len__(self) -> int:
        return len(self.records)


# ---------------------------------------------------------------------------
# CSV parsing
# ---------------------------------------------------------------------------


def _norm(name: str) -> str:
    return name.strip().lower()


def _parse_timestamp(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            continue
    raise ValueError(f"unrecognised timestamp {text!r}")


def _finite(text: str) -> float:
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def _port(text: str) -> int:
    v = float(text)
    if not v.is_integer() or not 0 <= v <= PORT_MAX:
        raise ValueError(f"bad port {text!r}")
    return int(v)


def cicids_label(text: str) -> tuple[bool, str]:
    t = text.strip()
    if t.upper() == "BENIGN":
        return False, "none"
    if t.upper() == "DDOS":
        return True, "DDoS"
    if t.upper().startswith("DOS"):
        return True, "DoS"
    if t.upper() == "PORTSCAN":
        return True, "PortScan"
    return True, "other"


def parse_csv(path, schema_mode: str = "synthetic") -> ParseResult:
    """Read a flow CSV into timestamp-sorted :class:`FlowRecord` objects.

    Column names are matched case-insensitively after trimming.  Rows with
    unparseable or non-finite cells are skipped and counted.  Environmental
    columns are optional in ``cicids`` mode and required in ``synthetic``.
    """
    if schema_mode not in SCHEMA_MODES:
        raise ConfigurationError(f"schema mode must be one of {SCHEMA_MODES}, got {schema_mode!r}")
    path = Path(path)
    meta = _CICIDS_META if schema_mode == "cicids" else _SYNTH_META
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} has no header row") from None
        except UnicodeDecodeError as exc:
            raise OSError(f"{path} is not UTF-8: {exc}") from exc
        index: dict[str, int] = {}
        for i, name in enumerate(header):
            index.setdefault(_norm(name), i)

        def col(name: str) -> int:
            try:
                return index[_norm(name)]
            except KeyError:
                raise SchemaError(f"{path}: missing mandatory column {name!r}", column=name) from None

        meta_idx = {k: col(v) for k, v in meta.items()}
        feat_idx = [col(n) for n in FLOW_FEATURES]
        if schema_mode == "synthetic" or all(_norm(n) in index for n in ENV_CHANNELS):
            env_idx: list[int] | None = [col(n) for n in ENV_CHANNELS]
        else:
            env_idx = None
        attack_idx = index.get("attack") if schema_mode == "synthetic" else None

        records: list[FlowRecord] = []
        skipped = 0
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    if schema_mode == "cicids":
                        abnormal, attack = cicids_label(row[meta_idx["label"]])
                    else:
                        lab = row[meta_idx["label"]].strip().lower()
                        if lab not in ("normal", "abnormal", "0", "1"):
                            raise ValueError(f"bad label {lab!r}")
                        abnormal = lab in ("abnormal", "1")
                        attack = row[attack_idx].strip() if attack_idx is not None else ("other" if abnormal else "none")
                    rec = FlowRecord(
                        timestamp=_parse_timestamp(row[meta_idx["timestamp"]]),
                        src_ip=row[meta_idx["src_ip"]].strip(),
                        dst_ip=row[meta_idx["dst_ip"]].strip(),
                        src_port=_port(row[meta_idx["src_port"]]),
                        dst_port=_port(row[meta_idx["dst_port"]]),
                        protocol=row[meta_idx["protocol"]].strip().upper(),
                        features=tuple(_finite(row[i]) for i in feat_idx),
                        environment=None if env_idx is None else tuple(_finite(row[i]) for i in env_idx),
                        abnormal=abnormal,
                        attack=attack,
                    )
                except (ValueError, IndexError) as exc:
                    skipped += 1
                    log.warning("%s:%d skipped: %s", path, lineno, exc)
                    continue
                records.append(rec)
        except (UnicodeDecodeError, csv.Error) as exc:
            raise OSError(f"cannot parse {path}: {exc}") from exc
    records.sort(key=lambda r: r.timestamp)
    return ParseResult(records=records, skipped=skipped, path=str(path))


def write_csv(records: Iterable[FlowRecord], path) -> None:
    """Write records in the synthetic schema (full float repr, so re-reads are exact)."""
    with atomic_write(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SYNTH_HEADER)
        for r in records:
            if r.environment is None:
                raise EncodingError("synthetic CSV rows need environment channels")
            ts = int(r.timestamp) if float(r.timestamp).is_integer() else repr(r.timestamp)
            w.writerow(
                [ts, r.src_ip, r.src_port, r.dst_ip, r.dst_port, r.protocol]
                + [repr(v) for v in r.features]
                + [repr(v) for v in r.environment]
                + ["abnormal" if r.abnormal else "normal", r.attack]
            )


# ---------------------------------------------------------------------------
# single-field encoders
# ---------------------------------------------------------------------------


def fnv1a_32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h


def encode_ip(address: str, buckets: int = IP_BUCKETS) -> float:
    """FNV-1a hash of the canonical dotted quad, bucketed and scaled to [0, 1]."""
    try:
        canon = str(ipaddress.IPv4Address(address.strip()))
    except (ipaddress.AddressValueError, ValueError, AttributeError) as exc:
        raise EncodingError(f"not an IPv4 address: {address!r}") from exc
    return (fnv1a_32(canon.encode("ascii")) % buckets) / (buckets - 1)


def normalize_port(port: int) -> float:
    if not 0 <= port <= PORT_MAX:
        raise ValueError(f"port {port} outside [0, {PORT_MAX}]")
    return port / PORT_MAX


class ProtocolTable:
    """Protocol tag -> integer id, assigned 1, 2, ... in first-seen order; 0 is unknown."""

    UNKNOWN = 0

    def __init__(self, ids: dict[str, int] | None = None):
        self.ids: dict[str, int] = dict(ids or {})
        self.frozen = False

    @staticmethod
    def canonical(tag: str) -> str:
        return tag.strip().upper()

    def fit(self, tags: Iterable[str]) -> "ProtocolTable":
        for t in tags:
            self.lookup(t, grow=True)
        return self

    def lookup(self, tag: str, grow: bool = False) -> int:
        key = self.canonical(tag)
        if key in self.ids:
            return self.ids[key]
        if grow and not self.frozen:
            self.ids[key] = len(self.ids) + 1
            return self.ids[key]
        log.warning("unknown protocol %r mapped to reserved id 0", tag)
        return self.UNKNOWN


def map_protocol(tag: str, table: ProtocolTable, fitting: bool = False) -> int:
    return table.lookup(tag, grow=fitting)


# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------


@dataclass
class FeatureSchema:
    mean: np.ndarray
    std: np.ndarray
    protocols: ProtocolTable
    buckets: int = IP_BUCKETS
    feature_names: tuple[str, ...] = FLOW_FEATURES
    env_names: tuple[str, ...] = ENV_CHANNELS

    @property
    def columns(self) -> list[tuple[str, str]]:
        cols = [(n, "zscore") for n in self.feature_names + self.env_names]
        cols += [("src_ip", "ip_hash"), ("dst_ip", "ip_hash")]
        cols += [("src_port", "minmax"), ("dst_port", "minmax"), ("protocol", "protocol_map")]
        return cols

    @property
    def width(self) -> int:
        return len(self.columns)

    def encode_many(self, records: Sequence[FlowRecord]) -> np.ndarray:
        """Encode records into an (n, 71) float64 matrix.  Never mutates the schema."""
        if not records:
            return np.zeros((0, self.width))
        missing_env = [r for r in records if r.environment is None]
        if missing_env:
            raise EncodingError("records lack environment channels; augment them first")
        n_z = len(self.feature_names) + len(self.env_names)
        raw = np.array([r.features + r.environment for r in records], dtype=np.float64)
        if raw.shape[1] != n_z:
            raise EncodingError(f"expected {n_z} numeric channels, got {raw.shape[1]}")
        out = np.empty((len(records), self.width))
        out[:, :n_z] = (raw - self.mean) / self.std
        out[:, n_z] = [encode_ip(r.src_ip, self.buckets) for r in records]
        out[:, n_z + 1] = [encode_ip(r.dst_ip, self.buckets) for r in records]
        out[:, n_z + 2] = [normalize_port(r.src_port) for r in records]
        out[:, n_z + 3] = [normalize_port(r.dst_port) for r in records]
        out[:, n_z + 4] = [self.protocols.lookup(r.protocol) for r in records]
        return out

    def encode(self, record: FlowRecord) -> np.ndarray:
        return self.encode_many([record])[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "columns": [list(c) for c in self.columns],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "protocols": self.protocols.ids,
            "buckets": self.buckets,
            "feature_names": list(self.feature_names),
            "env_names": list(self.env_names),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FeatureSchema":
        table = ProtocolTable({k: int(v) for k, v in d["protocols"].items()})
        table.frozen = True
        return cls(
            mean=np.array(d["mean"], dtype=np.float64),
            std=np.array(d["std"], dtype=np.float64),
            protocols=table,
            buckets=int(d["buckets"]),
            feature_names=tuple(d["feature_names"]),
            env_names=tuple(d["env_names"]),
        )


def fit_standardizer(records: Sequence[FlowRecord]) -> FeatureSchema:
    """Fit population mean/std per numeric channel and the protocol table.

    Zero-variance channels get std 1.0 so they encode to exactly zero.
    """
    if not records:
        raise FitError("cannot fit a schema on zero records")
    if any(r.environment is None for r in records):
        raise FitError("environment channels missing; run augment_environment first")
    raw = np.array([r.features + r.environment for r in records], dtype=np.float64)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std[std == 0.0] = 1.0
    table = ProtocolTable().fit(r.protocol for r in records)
    table.frozen = True
    schema = FeatureSchema(mean=mean, std=std, protocols=table)
    if schema.width != N_FEATURES:
        raise FitError(f"schema encodes {schema.width} columns, expected {N_FEATURES}")
    return schema


# ---------------------------------------------------------------------------
# environmental augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvChannel:
    name: str
    low: float
    high: float
    # abnormal excursions land this many band-widths beyond an edge
    excursion: tuple[float, float] = (0.1, 0.5)


@dataclass(frozen=True)
class EnvironmentConfig:
    channels: tuple[EnvChannel, ...] = (
        EnvChannel("atmosphere_pressure_hpa", 990.0, 1020.0),
        EnvChannel("humidity_pct", 30.0, 70.0),
        EnvChannel("temperature_c", 10.0, 30.0),
        EnvChannel("wind_speed_ms", 0.0, 12.0),
        EnvChannel("rainfall_mm", 0.0, 5.0),
        EnvChannel("surface_acceleration_ms2", -0.5, 0.5),
        EnvChannel("surface_gravity_ms2", 9.78, 9.83),
        EnvChannel("altitude_m", 80.0, 120.0),
        EnvChannel("illuminance_klux", 10.0, 80.0),
        EnvChannel("co2_ppm", 380.0, 450.0),
        EnvChannel("pm25_ugm3", 5.0, 35.0),
        EnvChannel("signal_strength_dbm", -90.0, -50.0),
        EnvChannel("battery_v", 14.8, 16.8),
    )
    excursion_probability: float = 0.5

    def validate(self) -> None:
        for ch in self.channels:
            if ch.low > ch.high:
                raise ConfigurationError(f"environment band {ch.name}: min {ch.low} > max {ch.high}")
            if ch.excursion[0] <= 0 or ch.excursion[0] > ch.excursion[1]:
                raise ConfigurationError(f"environment band {ch.name}: bad excursion {ch.excursion}")
        if not 0.0 <= self.excursion_probability <= 1.0:
            raise ConfigurationError("excursion_probability must be within [0, 1]")
        if tuple(ch.name for ch in self.channels) != ENV_CHANNELS:
            raise ConfigurationError("environment channels must match the encoder's channel list")


def sample_environment(abnormal: np.ndarray, config: EnvironmentConfig, rng: RngState) -> np.ndarray:
    """Draw an (n, channels) block: in-band for normal rows, possible excursions otherwise."""
    config.validate()
    n = len(abnormal)
    low = np.array([c.low for c in config.channels])
    high = np.array([c.high for c in config.channels])
    width = high - low
    lo_ex = np.array([c.excursion[0] for c in config.channels])
    hi_ex = np.array([c.excursion[1] for c in config.channels])
    shape = (n, len(config.channels))
    u = rng.random(shape)
    values = low + u * width
    exceed = rng.random(shape) < config.excursion_probability
    exceed &= np.asarray(abnormal, dtype=bool)[:, None]
    above = rng.random(shape) < 0.5
    # a zero-width band still needs a strictly positive push
    dist = (lo_ex + rng.random(shape) * (hi_ex - lo_ex)) * np.where(width > 0, width, 1.0)
    excursion = np.where(above, high + dist, low - dist)
    return np.where(exceed, excursion, values)


def augment_environment(
    records: Sequence[FlowRecord], config: EnvironmentConfig | None, rng: RngState
) -> list[FlowRecord]:
    """Return copies of ``records`` with their environment channels filled in."""
    config = config or EnvironmentConfig()
    config.validate()
    abnormal = np.array([r.abnormal for r in records], dtype=bool)
    env = sample_environment(abnormal, config, rng)
    return [dataclasses.replace(r, environment=tuple(row.tolist())) for r, row in zip(records, env)]


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def label_window(member_labels: Sequence[int], window: int = WINDOW) -> int:
    """1 when at least half the members are abnormal (ties count as abnormal)."""
    labels = np.asarray(member_labels)
    if labels.shape != (window,):
        raise ValueError(f"expected {window} member labels, got {labels.size}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("member labels must be binary")
    return int(2 * int(labels.sum()) >= window)


@dataclass
class WindowSelection:
    groups: list[list[FlowRecord]]
    dropped: int
    bins: int


def select_windows(
    records: Sequence[FlowRecord], rng: RngState, window: int = WINDOW, bin_seconds: int = 60
) -> WindowSelection:
    """Bucket by minute and sample ``window`` records from every bin that has enough.

    Records must already be sorted by timestamp; sampled members keep that
    order.  Bins with fewer than ``window`` records are dropped and counted.
    """
    bins: dict[int, list[FlowRecord]] = defaultdict(list)
    for r in records:
        bins[int(math.floor(r.timestamp / bin_seconds))].append(r)
    groups = []
    dropped = 0
    for key in sorted(bins):
        members = bins[key]
        if len(members) < window:
            dropped += 1
            continue
        if len(members) == window:
            idx = np.arange(window)
        else:
            idx = np.sort(rng.choice(len(members), size=window, replace=False))
        groups.append([members[i] for i in idx])
    return WindowSelection(groups=groups, dropped=dropped, bins=len(bins))


def stratified_split_indices(labels: np.ndarray, fraction: float, rng: RngState) -> tuple[np.ndarray, np.ndarray]:
    """Split indices into (keep, held_out) with ``fraction`` held out per class.

    Falls back to an unstratified split, with a warning, when only one class
    is present.  Both outputs are sorted.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    classes = np.unique(labels)
    held: list[np.ndarray] = []
    if len(classes) < 2:
        log.warning("single-class dataset; split is not stratified")
        perm = rng.permutation(n)
        held.append(perm[: max(1, int(round(fraction * n)))] if n > 1 else perm[:0])
    else:
        for c in classes:
            idx = np.nonzero(labels == c)[0]
            perm = idx[rng.permutation(len(idx))]
            held.append(perm[: int(round(fraction * len(idx)))])
    out = np.sort(np.concatenate(held)).astype(np.int64)
    keep = np.setdiff1d(np.arange(n), out)
    return keep, out


@dataclass
class WindowedDataset:
    windows: np.ndarray  # (n, window, 71)
    labels: np.ndarray  # (n,) int64
    schema: FeatureSchema
    is_test: np.ndarray | None = None
    # validation windows inside the training part, held out before fitting
    is_val: np.ndarray | None = None
    provenance: dict[str, Any] = field(default_factory=dict)
    stats: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 3 or self.windows.shape[2] != N_FEATURES:
            raise EncodingError(f"windows must be (n, T, {N_FEATURES}), got {self.windows.shape}")
        if len(self.labels) != len(self.windows):
            raise EncodingError("labels and windows differ in count")
        if self.is_test is None:
            self.is_test = np.zeros(len(self.labels), dtype=bool)
        self.is_test = np.asarray(self.is_test, dtype=bool)
        if self.is_val is None:
            self.is_val = np.zeros(len(self.labels), dtype=bool)
        self.is_val = np.asarray(self.is_val, dtype=bool)
        if self.is_test.shape != self.labels.shape or self.is_val.shape != self.labels.shape:
            raise EncodingError("split masks and labels differ in count")
        if np.any(self.is_test & self.is_val):
            raise EncodingError("a window cannot be both test and validation")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "WindowedDataset":
        index = np.asarray(index)
        if index.dtype != bool:
            index = index.astype(np.int64)
        return WindowedDataset(
            windows=self.windows[index],
            labels=self.labels[index],
            schema=self.schema,
            is_test=self.is_test[index],
            is_val=self.is_val[index],
            provenance=dict(self.provenance),
            stats=dict(self.stats),
        )

    def train_part(self) -> "WindowedDataset":
        return self.subset(np.nonzero(~self.is_test)[0])

    def test_part(self) -> "WindowedDataset":
        return self.subset(np.nonzero(self.is_test)[0])

    def save(self, path) -> None:
        """Write the dataset archive plus a ``<path>.stats.json`` sidecar."""
        path = Path(path)
        write_npz(
            path,
            {
                "windows": self.windows,
                "labels": self.labels,
                "is_test": self.is_test,
                "is_val": self.is_val,
                "schema": _json_bytes(self.schema.to_dict()),
                "provenance": _json_bytes(self.provenance),
            },
        )
        with atomic_write(stats_path(path), "w", encoding="utf-8") as fh:
            json.dump(self.stats, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "WindowedDataset":
        path = Path(path)
        if not path.exists():
            raise OSError(f"dataset {path} does not exist")
        with np.load(path, allow_pickle=False) as z:
            schema = FeatureSchema.from_dict(json.loads(z["schema"].tobytes()))
            ds = cls(
                windows=z["windows"],
                labels=z["labels"],
                schema=schema,
                is_test=z["is_test"],
                is_val=z["is_val"] if "is_val" in z.files else None,
                provenance=json.loads(z["provenance"].tobytes()),
            )
        sp = stats_path(path)
        if sp.exists():
            ds.stats = json.loads(sp.read_text(encoding="utf-8"))
        return ds


def stats_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".stats.json")


def _json_bytes(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8)


def assemble_windows(
    records: Sequence[FlowRecord],
    schema: FeatureSchema,
    rng: RngState,
    window: int = WINDOW,
    bin_seconds: int = 60,
) -> WindowedDataset:
    """Select, label and encode windows under an already-fitted schema."""
    sel = select_windows(records, rng, window, bin_seconds)
    if not sel.groups:
        raise EmptyDatasetError(f"no minute bin holds {window} records ({sel.dropped} bins dropped)")
    windows = np.stack([schema.encode_many(g) for g in sel.groups])
    labels = np.array([label_window([r.label for r in g], window) for g in sel.groups])
    return WindowedDataset(
        windows=windows,
        labels=labels,
        schema=schema,
        stats={"windows": len(sel.groups), "dropped_bins": sel.dropped, "bins": sel.bins},
    )


def build_dataset(
    records: Sequence[FlowRecord],
    seed: int,
    test_fraction: float = 0.2,
    val_fraction: float = 0.2,
    env_config: EnvironmentConfig | None = None,
    window: int = WINDOW,
    source: str = "",
    skipped: int = 0,
) -> WindowedDataset:
    """Full preprocessing with a leakage guard.

    Windows are selected and split into train/validation/test *before* the
    schema is fitted, and the schema sees only training-window members.
    ``val_fraction`` is taken from what remains after the test hold-out;
    0 leaves validation to the trainer.
    """
    root = RngState(seed)
    if any(r.environment is None for r in records):
        records = augment_environment(records, env_config, root.derive("preprocess.environment"))
    sel = select_windows(records, root.derive("preprocess.windows"), window)
    if not sel.groups:
        raise EmptyDatasetError(f"no minute bin holds {window} records ({sel.dropped} bins dropped)")
    labels = np.array([label_window([r.label for r in g], window) for g in sel.groups])
    train_idx, test_idx = stratified_split_indices(labels, test_fraction, root.derive("preprocess.split"))
    val_idx = np.zeros(0, dtype=np.int64)
    if val_fraction > 0:
        keep, held = stratified_split_indices(labels[train_idx], val_fraction, root.derive("preprocess.validation"))
        train_idx, val_idx = train_idx[keep], train_idx[held]
    schema = fit_standardizer([r for i in train_idx for r in sel.groups[i]])
    windows = np.stack([schema.encode_many(g) for g in sel.groups])
    is_test = np.zeros(len(labels), dtype=bool)
    is_test[test_idx] = True
    is_val = np.zeros(len(labels), dtype=bool)
    is_val[val_idx] = True
    attacks = sorted({r.attack for g in sel.groups for r in g if r.abnormal})
    return WindowedDataset(
        windows=windows,
        labels=labels,
        schema=schema,
        is_test=is_test,
        is_val=is_val,
        provenance={"source": source, "seed": int(seed), "attacks": attacks},
        stats={
            "parsed": len(records),
            "skipped": int(skipped),
            "bins": sel.bins,
            "dropped_bins": sel.dropped,
            "windows": len(labels),
            "positive_windows": int(labels.sum()),
            "train_windows": int(len(train_idx)),
            "val_windows": int(len(val_idx)),
            "test_windows": int(len(test_idx)),
        },
    )
