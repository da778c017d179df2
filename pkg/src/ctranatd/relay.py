"""Simulated SDN controller with smart-contract actions and a hash-chained ledger.

Flow per packet: the controller scores the window with a detector and
labels it; a contract turns the verdict into three log entries; normal
packets are relayed to the edge node serving their data kind, abnormal
ones are dropped; a single in-process miner packs pending entries into
SHA-256 linked blocks.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from ctranatd import N_FEATURES, WINDOW
from ctranatd.errors import ConfigurationError, ProtocolError
from ctranatd.fileio import atomic_write
from ctranatd.nn.tensor import RngState
from ctranatd.preprocess import ATTACK_KINDS, FeatureSchema, fit_standardizer

log = logging.getLogger(__name__)

NORMAL = "normal"
ABNORMAL = "abnormal"
CONTRACT_ACTIONS = {
    NORMAL: ("identity_update", "flight_log_update", "environment_record"),
    ABNORMAL: ("identity_update", "abnormal_flight_log_update", "transmission_prohibited"),
}
GENESIS_HASH = bytes(32)
QUARANTINE = "quarantine"
DATA_KINDS = ("pressure", "humidity", "acceleration", "gravity", "temperature")
DEFAULT_ROUTES = {kind: f"edge-{kind}" for kind in DATA_KINDS}


@dataclass(frozen=True)
class Packet:
    uav_id: str
    sequence: int
    window: np.ndarray
    declared_kind: str
    ground_truth: int | None = None
    attack: str = "none"

    def digest(self) -> str:
        w = np.ascontiguousarray(self.window, dtype=np.float64)
        h = hashlib.sha256()
        h.update(struct.pack(">II", *w.shape[:2]) if w.ndim == 2 else b"")
        h.update(w.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class Verdict:
    verdict_id: int
    uav_id: str
    sequence: int
    label: str
    score: float
    decided_at: int
    packet_digest: str


@dataclass(frozen=True)
class ContractLogEntry:
    uav_id: str
    action: str
    verdict_id: int
    sequence: int
    label: str
    # digest of the window payload; only the environment_record of a normal
    # verdict stores one
    payload_digest: str | None = None

    def canonical(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":")).encode("utf-8")


def block_hash(index: int, prev_hash: bytes, entries: Sequence[ContractLogEntry]) -> bytes:
    """SHA-256 over a length-prefixed serialisation of the block contents."""
    h = hashlib.sha256()
    h.update(b"CTRB")
    h.update(struct.pack(">Q", index))
    h.update(prev_hash)
    h.update(struct.pack(">I", len(entries)))
    for e in entries:
        body = e.canonical()
        h.update(struct.pack(">I", len(body)))
        h.update(body)
    return h.digest()


@dataclass(frozen=True)
class LedgerBlock:
    index: int
    prev_hash: bytes
    entries: tuple[ContractLogEntry, ...]
    block_hash: bytes

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, entries: Iterable[ContractLogEntry]) -> "LedgerBlock":
        entries = tuple(entries)
        return cls(index, prev_hash, entries, block_hash(index, prev_hash, entries))

    def to_record(self) -> str:
        """One canonical JSON line (sorted keys, no whitespace, hex digests)."""
        return json.dumps(
            {
                "block_hash": self.block_hash.hex(),
                "entries": [asdict(e) for e in self.entries],
                "index": self.index,
                "prev_hash": self.prev_hash.hex(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_record(cls, line: str | bytes) -> "LedgerBlock":
        """Parse a record, rejecting anything that is not byte-for-byte canonical."""
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.rstrip("\n")
        d = json.loads(line)
        block = cls(
            index=int(d["index"]),
            prev_hash=bytes.fromhex(d["prev_hash"]),
            entries=tuple(ContractLogEntry(**e) for e in d["entries"]),
            block_hash=bytes.fromhex(d["block_hash"]),
        )
        if block.to_record() != line:
            raise ValueError("record is not in canonical form")
        return block


@dataclass
class ChainReport:
    valid: bool
    length: int
    first_invalid: int | None = None
    reason: str = ""


def verify_chain(blocks: Sequence[LedgerBlock]) -> ChainReport:
    """Recompute every hash and link; report the first failing block index."""
    prev = GENESIS_HASH
    for pos, b in enumerate(blocks):
        problem = check_block(b, pos, prev)
        if problem:
            return ChainReport(False, len(blocks), pos, problem)
        prev = b.block_hash
    return ChainReport(True, len(blocks))


def check_block(block: LedgerBlock, position: int, prev_hash: bytes) -> str | None:
    """Describe why ``block`` cannot sit at ``position`` after ``prev_hash``, or None."""
    if block.index != position:
        return f"index {block.index} at position {position}"
    if block.prev_hash != prev_hash:
        return "prev_hash does not match previous block"
    if block_hash(block.index, block.prev_hash, block.entries) != block.block_hash:
        return "block_hash mismatch"
    return None


def verify_records(lines: Sequence[str | bytes]) -> ChainReport:
    """Verify an exported chain given as newline-free canonical records."""
    blocks = []
    for pos, line in enumerate(lines):
        try:
            blocks.append(LedgerBlock.from_record(line))
        except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
            return ChainReport(False, len(lines), pos, f"unparseable record: {exc}")
    return verify_chain(blocks)


class Ledger:
    """Append-only chain plus the queue of entries waiting to be mined."""

    def __init__(self):
        self.blocks: list[LedgerBlock] = []
        self.pending: deque[ContractLogEntry] = deque()

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_HASH

    def entries(self) -> list[ContractLogEntry]:
        return [e for b in self.blocks for e in b.entries]

    def export(self, path) -> None:
        with atomic_write(path, "w", encoding="utf-8", newline="\n") as fh:
            for b in self.blocks:
                fh.write(b.to_record() + "\n")

    @staticmethod
    def read_records(path) -> list[str]:
        return Path(path).read_text(encoding="utf-8").splitlines()


def mine_block(ledger: Ledger, max_per_block: int = 16) -> LedgerBlock | None:
    """Package up to ``max_per_block`` pending entries, in arrival order, into a new block.

    Returns None when nothing is pending.
    """
    if max_per_block < 1:
        raise ValueError("max_per_block must be >= 1")
    if not ledger.pending:
        return None
    take = [ledger.pending.popleft() for _ in range(min(max_per_block, len(ledger.pending)))]
    block = LedgerBlock.seal(len(ledger.blocks), ledger.head_hash, take)
    ledger.blocks.append(block)
    return block


# ---------------------------------------------------------------------------
# detectors
# ---------------------------------------------------------------------------


class Detector(Protocol):
    def score_packet(self, packet: Packet) -> float: ...


class ModelDetector:
    """Adapts anything with ``predict(windows) -> scores`` (e.g. a built Model)."""

    def __init__(self, model):
        self.model = model

    def score_packet(self, packet: Packet) -> float:
        return float(self.model.predict(packet.window[None])[0])


class ConstantDetector:
    def __init__(self, score: float):
        self.score = score

    def score_packet(self, packet: Packet) -> float:
        return self.score


class OracleDetector:
    """Stub that reads the simulation's ground truth; a perfect classifier."""

    def score_packet(self, packet: Packet) -> float:
        if packet.ground_truth is None:
            raise ConfigurationError("oracle detector needs packets with ground truth")
        return 1.0 if packet.ground_truth else 0.0


# ---------------------------------------------------------------------------
# controller
# ---------------------------------------------------------------------------


@dataclass
class Delivery:
    verdict_id: int
    outcome: str  # delivered | dropped | quarantined
    node: str | None = None


class Controller:
    def __init__(
        self,
        detector: Detector,
        threshold: float = 0.5,
        routes: dict[str, str] | None = None,
        window_shape: tuple[int, int] = (WINDOW, N_FEATURES),
        ledger: Ledger | None = None,
    ):
        self.detector = detector
        self.threshold = threshold
        self.routes = dict(DEFAULT_ROUTES if routes is None else routes)
        self.window_shape = tuple(window_shape)
        self.ledger = ledger or Ledger()
        self.edge_nodes: dict[str, list[Packet]] = {node: [] for node in self.routes.values()}
        self.edge_nodes.setdefault(QUARANTINE, [])
        self.counters: Counter[str] = Counter()
        self.clock = 0
        self._last_seq: dict[str, int] = {}
        self._packets: dict[int, Packet] = {}
        self._executed: set[int] = set()
        self._forwarded: set[int] = set()

    def submit(self, packet: Packet) -> Verdict:
        """Score and label a packet.  Protocol violations are counted and raised."""
        window = np.asarray(packet.window)
        if window.shape != self.window_shape:
            self.counters["rejected"] += 1
            raise ProtocolError(f"window shape {window.shape} != {self.window_shape}")
        last = self._last_seq.get(packet.uav_id)
        if last is not None and packet.sequence <= last:
            self.counters["rejected"] += 1
            raise ProtocolError(f"{packet.uav_id}: sequence {packet.sequence} not after {last}")
        self._last_seq[packet.uav_id] = packet.sequence
        score = float(self.detector.score_packet(packet))
        self.clock += 1
        verdict = Verdict(
            verdict_id=self.clock,
            uav_id=packet.uav_id,
            sequence=packet.sequence,
            label=ABNORMAL if score >= self.threshold else NORMAL,
            score=score,
            decided_at=self.clock,
            packet_digest=packet.digest(),
        )
        self._packets[verdict.verdict_id] = packet
        self.counters["submitted"] += 1
        return verdict

    def execute_contract(self, verdict: Verdict) -> list[ContractLogEntry]:
        """Emit the verdict's three contract entries and queue them for mining."""
        if verdict.verdict_id in self._executed:
            log.warning("contract for verdict %d already executed", verdict.verdict_id)
            return []
        self._executed.add(verdict.verdict_id)
        entries = [
            ContractLogEntry(
                uav_id=verdict.uav_id,
                action=action,
                verdict_id=verdict.verdict_id,
                sequence=verdict.sequence,
                label=verdict.label,
                payload_digest=verdict.packet_digest if action == "environment_record" else None,
            )
            for action in CONTRACT_ACTIONS[verdict.label]
        ]
        self.ledger.pending.extend(entries)
        return entries

    def forward(self, verdict: Verdict) -> Delivery:
        if verdict.verdict_id not in self._executed:
            raise ProtocolError(f"verdict {verdict.verdict_id} forwarded before its contract ran")
        if verdict.verdict_id in self._forwarded:
            raise ProtocolError(f"verdict {verdict.verdict_id} already forwarded")
        self._forwarded.add(verdict.verdict_id)
        packet = self._packets[verdict.verdict_id]
        if verdict.label == ABNORMAL:
            self.counters["dropped"] += 1
            return Delivery(verdict.verdict_id, "dropped")
        node = self.routes.get(packet.declared_kind)
        if node is None:
            log.warning("no edge node for kind %r; quarantining", packet.declared_kind)
            self.edge_nodes[QUARANTINE].append(packet)
            self.counters["quarantined"] += 1
            return Delivery(verdict.verdict_id, "quarantined", QUARANTINE)
        self.edge_nodes[node].append(packet)
        self.counters["delivered"] += 1
        return Delivery(verdict.verdict_id, "delivered", node)

    def handle(self, packet: Packet, block_capacity: int = 16) -> tuple[Verdict, Delivery]:
        verdict = self.submit(packet)
        self.execute_contract(verdict)
        delivery = self.forward(verdict)
        while len(self.ledger.pending) >= block_capacity:
            mine_block(self.ledger, block_capacity)
        return verdict, delivery

    def flush(self, block_capacity: int = 16) -> None:
        while self.ledger.pending:
            mine_block(self.ledger, block_capacity)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    uav_count: int = 10
    packets_per_uav: int = 100
    attack_mix: dict[str, float] = field(default_factory=lambda: {k: 1.0 for k in ATTACK_KINDS})
    attack_probability: float = 0.3
    block_capacity: int = 16
    threshold: float = 0.5
    seed: int = 0
    detector_checkpoint: str | None = None
    shift_magnitude: float = 3.0
    shift_features: int = 5

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown scenario fields {unknown}")
        return cls(**d)

    def validate(self) -> None:
        if self.uav_count < 1 or self.packets_per_uav < 0:
            raise ConfigurationError("uav_count must be >= 1 and packets_per_uav >= 0")
        if not 0.0 <= self.attack_probability <= 1.0:
            raise ConfigurationError("attack_probability must be within [0, 1]")
        bad = sorted(set(self.attack_mix) - set(ATTACK_KINDS))
        if bad or not self.attack_mix or any(w < 0 for w in self.attack_mix.values()):
            raise ConfigurationError(f"attack_mix must weight {ATTACK_KINDS}; got {self.attack_mix}")
        if sum(self.attack_mix.values()) <= 0:
            raise ConfigurationError("attack_mix weights sum to zero")
        if self.block_capacity < 1:
            raise ConfigurationError("block_capacity must be >= 1")


def calibration_schema(config: ScenarioConfig, rng: RngState) -> FeatureSchema:
    """Fit a schema on a few minutes of clean generator output (used with stub detectors)."""
    from ctranatd.synthetic import SynthConfig, START_TIME, generate_minute

    synth = SynthConfig(uav_count=config.uav_count, shift_magnitude=config.shift_magnitude,
                        shift_features=config.shift_features)
    records = []
    for m in range(5):
        records += generate_minute(rng, START_TIME + 60 * m, WINDOW, None, synth)
    return fit_standardizer(records)


def generate_packets(config: ScenarioConfig, schema: FeatureSchema, rng: RngState) -> list[Packet]:
    """Round-robin over UAVs; each packet is one encoded minute of that UAV's traffic."""
    from ctranatd.synthetic import SynthConfig, START_TIME, generate_minute

    synth = SynthConfig(uav_count=config.uav_count, shift_magnitude=config.shift_magnitude,
                        shift_features=config.shift_features)
    kinds = sorted(config.attack_mix)
    weights = np.array([config.attack_mix[k] for k in kinds], dtype=np.float64)
    weights /= weights.sum()
    packets = []
    for seq in range(config.packets_per_uav):
        for u in range(config.uav_count):
            attacked = rng.random(None) < config.attack_probability
            attack = kinds[int(rng.choice(len(kinds), p=weights))] if attacked else None
            start = START_TIME + 60 * (seq * config.uav_count + u)
            records = generate_minute(rng, start, WINDOW, attack, synth, uav_index=u)
            packets.append(
                Packet(
                    uav_id=f"uav-{u:03d}",
                    sequence=seq,
                    window=schema.encode_many(records),
                    declared_kind=DATA_KINDS[u % len(DATA_KINDS)],
                    ground_truth=int(attacked),
                    attack=attack or "none",
                )
            )
    return packets


@dataclass
class SimulationReport:
    packets: int
    verdicts: int
    delivered: int
    dropped: int
    quarantined: int
    rejected: int
    # deliveries whose verdict was abnormal (must stay 0)
    safety_violations: int
    # ground-truth abnormal packets that reached a non-quarantine node
    abnormal_delivered: int
    payload_mismatches: int
    per_attack: dict[str, dict[str, int]]
    chain_length: int
    chain_entries: int
    chain_valid: bool
    pending_after_flush: int
    delivered_per_node: dict[str, int]
    ledger: Ledger = field(repr=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d.pop("ledger")
        return d


def run_scenario(
    config: ScenarioConfig,
    detector: Detector | None = None,
    schema: FeatureSchema | None = None,
) -> SimulationReport:
    """Generate, classify, contract, forward and mine a whole scenario.

    ``detector`` overrides ``config.detector_checkpoint``; with neither, the
    run is a configuration error.
    """
    config.validate()
    if detector is None:
        if not config.detector_checkpoint:
            raise ConfigurationError("scenario needs a detector checkpoint")
        from ctranatd.models import load_model

        model, meta = load_model(config.detector_checkpoint)
        detector = ModelDetector(model)
        if schema is None and "schema" in meta:
            schema = FeatureSchema.from_dict(meta["schema"])
    root = RngState(config.seed)
    if schema is None:
        schema = calibration_schema(config, root.derive("simulate.calibration"))
    packets = generate_packets(config, schema, root.derive("simulate.packets"))

    ctrl = Controller(detector, threshold=config.threshold)
    confusion: dict[str, Counter[str]] = {k: Counter() for k in ("none", *ATTACK_KINDS)}
    violations = 0
    payload_mismatch = 0
    verdicts = 0
    for p in packets:
        try:
            verdict, delivery = ctrl.handle(p, config.block_capacity)
        except ProtocolError as exc:
            log.warning("rejected packet %s/%d: %s", p.uav_id, p.sequence, exc)
            continue
        verdicts += 1
        predicted = verdict.label == ABNORMAL
        actual = bool(p.ground_truth)
        key = ("tp" if predicted else "fn") if actual else ("fp" if predicted else "tn")
        confusion[p.attack][key] += 1
        if delivery.outcome == "delivered":
            if predicted:
                violations += 1
            delivered = ctrl.edge_nodes[delivery.node][-1]
            if delivered.window.tobytes() != p.window.tobytes():
                payload_mismatch += 1
    ctrl.flush(config.block_capacity)
    chain = verify_chain(ctrl.ledger.blocks)
    truth_violations = sum(
        1 for node, pkts in ctrl.edge_nodes.items() if node != QUARANTINE for q in pkts if q.ground_truth
    )
    return SimulationReport(
        packets=len(packets),
        verdicts=verdicts,
        delivered=ctrl.counters["delivered"],
        dropped=ctrl.counters["dropped"],
        quarantined=ctrl.counters["quarantined"],
        rejected=ctrl.counters["rejected"],
        safety_violations=violations,
        abnormal_delivered=truth_violations,
        payload_mismatches=payload_mismatch,
        per_attack={k: {m: int(v[m]) for m in ("tp", "fp", "tn", "fn")} for k, v in confusion.items()},
        chain_length=len(ctrl.ledger.blocks),
        chain_entries=len(ctrl.ledger.entries()),
        chain_valid=chain.valid,
        pending_after_flush=len(ctrl.ledger.pending),
        delivered_per_node={n: len(q) for n, q in sorted(ctrl.edge_nodes.items())},
        ledger=ctrl.ledger,
    )
