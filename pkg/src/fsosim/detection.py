"""TCP-based elephant-flow detection: ISN collection and ACK-sequence classification.

The collector learns each flow's initial sequence number from the low-frequency
handshake packets; the classifier subtracts it from every later cumulative ACK
and flags the flow as an elephant once the acknowledged byte count crosses a
threshold.  The same collector/classifier pair runs either in-network (at the
hypervisor, zero observation latency) or centralized (behind notification-
delayed, optionally sampled edge-switch captures).
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import TraceFormatError
from .flowclass import ELEPHANT, MICE

SEQ_MOD = 1 << 32

SYN = "SYN"
SYNACK = "SYNACK"
ACK = "ACK"
FIN = "FIN"
RST = "RST"
DATA = "DATA"
FLAGS = (SYN, SYNACK, ACK, FIN, RST, DATA)

# record states; transitions only move forward
PRESUMED_MICE = "presumed-mice"
CLASSIFIED_ELEPHANT = "classified-elephant"
PRE_CLASSIFIED = "pre-classified"
CLOSED = "closed"

# classify_ack outcomes
STILL_MICE = "still-mice"
NEWLY_ELEPHANT = "newly-elephant"
IGNORED = "ignored"

IN_NETWORK = "in-network"
CENTRALIZED = "centralized"

DEFAULT_THRESHOLD_BYTES = 1 << 20  # 1 MiB
DEFAULT_NOTIFICATION_DELAY_NS = 200_000  # 200 us per CU message
DEFAULT_PORT_CLASS_MAP = {20: ELEPHANT, 514: MICE, 123: MICE}

PACKET_CSV_FIELDS = ("ts_ns", "src", "sport", "dst", "dport", "flags", "seq", "ack", "len")
DETECTION_CSV_FIELDS = ("flow_id", "true_class", "detected_class", "detect_ts_ns", "notifications")


@dataclass(frozen=True)
class FlowKey:
    """Directed TCP 5-tuple; the key of the direction whose bytes are counted."""

    src: str
    sport: int
    dst: str
    dport: int
    protocol: str = "TCP"

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst, self.dport, self.src, self.sport, self.protocol)

    def flow_id(self) -> str:
        return f"{self.src}:{self.sport}>{self.dst}:{self.dport}"


@dataclass(slots=True)
class PacketEvent:
    """Timestamped TCP header abstraction as seen by an observer."""

    ts_ns: int
    src: str
    sport: int
    dst: str
    dport: int
    flags: str
    seq: int = 0
    ack: int = 0
    payload_len: int = 0
    observer: str = ""

    def __post_init__(self):
        if self.flags not in FLAGS:
            raise ValueError(f"unknown flags {self.flags!r}")
        if self.flags != DATA and self.payload_len:
            raise ValueError(f"{self.flags} packets carry no payload")

    def key(self) -> FlowKey:
        return FlowKey(self.src, self.sport, self.dst, self.dport)


@dataclass
class FlowRecord:
    """Per-direction flow state: ISN baseline, highest acknowledged byte count.

    ``detected_class`` survives the transition to closed so a finished flow
    still reports what the classifier decided while it was live.
    """

    key: FlowKey
    isn: int
    created_ts_ns: int
    latest_ack: int = 0
    bytes_acked: int = 0
    state: str = PRESUMED_MICE
    classified_ts_ns: Optional[int] = None
    detected_class: Optional[str] = None
    preclass: Optional[str] = None
    notifications: int = 0
    duplicates: int = 0

    @property
    def result_class(self) -> str:
        return self.detected_class if self.detected_class is not None else MICE


def default_subnet_of(address: str) -> str:
    """Shard key: the /24 prefix of a dotted address, else the whole string."""
    head, sep, _ = address.rpartition(".")
    return head if sep else address


class FlowTable:
    """Live flow records sharded by the subnet of the data sender."""

    def __init__(self, subnet_of=default_subnet_of):
        self.subnet_of = subnet_of
        self.shards: dict = {}
        self.lookups: dict = {}
        self.inserts: dict = {}
        self.orphans = 0
        self.misses = 0

    def _shard(self, key: FlowKey) -> dict:
        shard_id = self.subnet_of(key.src)
        self.lookups[shard_id] = self.lookups.get(shard_id, 0) + 1
        return self.shards.setdefault(shard_id, {})

    def get(self, key: FlowKey) -> Optional[FlowRecord]:
        return self._shard(key).get(key)

    def insert(self, record: FlowRecord) -> None:
        shard_id = self.subnet_of(record.key.src)
        self.shards.setdefault(shard_id, {})[record.key] = record
        self.inserts[shard_id] = self.inserts.get(shard_id, 0) + 1

    def evict(self, key: FlowKey) -> None:
        self._shard(key).pop(key, None)

    def live_count(self) -> int:
        return sum(len(shard) for shard in self.shards.values())


@dataclass
class DetectorConfig:
    """Threshold, placement, and overhead-minimization settings."""

    threshold_bytes: int = DEFAULT_THRESHOLD_BYTES
    mode: str = IN_NETWORK
    notification_delay_ns: int = DEFAULT_NOTIFICATION_DELAY_NS
    ack_sample_rate: int = 100
    stop_useless_notifications: bool = True
    preclassify_enabled: bool = True
    port_class_map: dict = field(default_factory=lambda: dict(DEFAULT_PORT_CLASS_MAP))

    def __post_init__(self):
        if self.threshold_bytes <= 0:
            raise ValueError(f"threshold_bytes must be > 0, got {self.threshold_bytes!r}")
        if self.ack_sample_rate < 1:
            raise ValueError(f"ack_sample_rate must be >= 1, got {self.ack_sample_rate!r}")
        if self.mode not in (IN_NETWORK, CENTRALIZED):
            raise ValueError(f"mode must be {IN_NETWORK!r} or {CENTRALIZED!r}")

    @property
    def effective_delay_ns(self) -> int:
        return self.notification_delay_ns if self.mode == CENTRALIZED else 0


def preclassify(key: FlowKey, config: DetectorConfig) -> Optional[str]:
    """Class mapped from well-known ports, or None when the ports are unmapped."""
    if not config.preclassify_enabled:
        return None
    mapped = config.port_class_map.get(key.dport)
    if mapped is None:
        mapped = config.port_class_map.get(key.sport)
    return mapped


def collector_ingest(table: FlowTable, event: PacketEvent,
                     config: Optional[DetectorConfig] = None) -> Optional[FlowRecord]:
    """Feed one low-frequency (handshake or teardown) packet to the collector.

    A SYN+ACK creates records for both flow directions: the data sender's ISN
    comes from the packet's ack field and the reverse direction's ISN from its
    seq field, so piggybacked two-way traffic is handled as two independent
    records.  FIN/RST closes and evicts the sender's own direction.  Returns
    the data-direction record a SYN+ACK created (or refreshed), else None.
    """
    if event.flags == SYNACK:
        data_key = event.key().reversed()
        existing = table.get(data_key)
        if existing is not None and existing.state != CLOSED:
            existing.duplicates += 1
            return existing
        record = FlowRecord(key=data_key, isn=event.ack, created_ts_ns=event.ts_ns)
        reverse = FlowRecord(key=event.key(), isn=event.seq, created_ts_ns=event.ts_ns)
        if config is not None:
            for entry in (record, reverse):
                mapped = preclassify(entry.key, config)
                if mapped is not None:
                    entry.state = PRE_CLASSIFIED
                    entry.preclass = mapped
                    entry.detected_class = mapped
                    entry.classified_ts_ns = event.ts_ns + config.effective_delay_ns
        table.insert(record)
        if table.get(event.key()) is None:
            table.insert(reverse)
        return record
    if event.flags in (FIN, RST):
        record = table.get(event.key())
        if record is None:
            table.orphans += 1
            return None
        record.state = CLOSED
        table.evict(event.key())
        return record
    return None


def classify_ack(table: FlowTable, event: PacketEvent, config: DetectorConfig) -> str:
    """Compare one cumulative ACK against the flow's ISN and the threshold.

    The acknowledged flow is the reverse of the ACK packet's own direction.
    Byte counts use modulo-2^32 arithmetic and only ever increase; an ACK for
    an unknown flow is ignored and counted as a table miss.
    """
    record = table.get(event.key().reversed())
    if record is None:
        table.misses += 1
        return IGNORED
    bytes_acked = (event.ack - record.isn) % SEQ_MOD
    if bytes_acked > record.bytes_acked:
        record.bytes_acked = bytes_acked
        record.latest_ack = event.ack
    if record.state != PRESUMED_MICE:
        return IGNORED
    if record.bytes_acked > config.threshold_bytes:
        record.state = CLASSIFIED_ELEPHANT
        record.detected_class = ELEPHANT
        record.classified_ts_ns = event.ts_ns + config.effective_delay_ns
        return NEWLY_ELEPHANT
    return STILL_MICE


class EdgeFilter:
    """Edge-switch capture rules for the centralized scheme.

    Handshake and teardown packets are always forwarded; ACKs are steered to a
    separate virtual interface and sampled one-in-S with a per-observer
    counter; data packets are never forwarded.  Suppression rules installed by
    the central unit take effect per flow after their reconfiguration instant.
    """

    def __init__(self, config: DetectorConfig):
        self.config = config
        self.ack_counters: dict = {}
        self.suppress_after: dict = {}  # data-direction FlowKey -> active-after ts_ns

    def suppress(self, data_key: FlowKey, active_after_ns: int) -> None:
        current = self.suppress_after.get(data_key)
        if current is None or active_after_ns < current:
            self.suppress_after[data_key] = active_after_ns

    def offer(self, event: PacketEvent) -> bool:
        """True when the edge switch forwards this packet to the central unit."""
        if event.flags == DATA:
            return False
        if event.flags in (SYN, SYNACK, FIN, RST):
            return True
        data_key = event.key().reversed()
        active_after = self.suppress_after.get(data_key)
        if active_after is not None and event.ts_ns > active_after:
            return False
        counter = self.ack_counters.get(event.observer, 0) + 1
        self.ack_counters[event.observer] = counter
        return counter % self.config.ack_sample_rate == 0


def edge_filter(events: Iterable[PacketEvent], table: FlowTable,
                config: DetectorConfig):
    """Generator over the notification stream an edge switch would emit.

    Runs the full centralized loop so that classification feeds suppression:
    forwarded packets are ingested/classified against ``table`` and newly
    classified or pre-classified flows stop producing ACK notifications after
    the delayed reconfiguration instant.
    """
    filt = EdgeFilter(config)
    delay = config.effective_delay_ns
    for event in events:
        if not filt.offer(event):
            continue
        yield event
        if event.flags == SYNACK:
            record = collector_ingest(table, event, config)
            if record is not None and record.state == PRE_CLASSIFIED:
                filt.suppress(record.key, record.classified_ts_ns + delay)
        elif event.flags in (FIN, RST):
            collector_ingest(table, event, config)
        elif event.flags == ACK:
            outcome = classify_ack(table, event, config)
            if outcome == NEWLY_ELEPHANT and config.stop_useless_notifications:
                record = table.get(event.key().reversed())
                filt.suppress(record.key, record.classified_ts_ns + delay)


class FlowDetector:
    """Collector + classifier pipeline in either placement.

    In-network placement reads every non-data packet with zero latency;
    centralized placement sees only what the edge filter forwards, with the
    configured notification delay folded into classification timestamps.
    """

    def __init__(self, config: DetectorConfig, subnet_of=default_subnet_of):
        self.config = config
        self.table = FlowTable(subnet_of)
        self.records: dict = {}  # every record ever created, keyed by FlowKey
        self.filter = EdgeFilter(config) if config.mode == CENTRALIZED else None
        self.events_seen = 0
        self.packets_captured = 0
        self.notifications_sent = 0

    def observe(self, event: PacketEvent) -> Optional[str]:
        self.events_seen += 1
        if self.filter is not None and not self.filter.offer(event):
            return None
        if event.flags == DATA:
            return None
        self.packets_captured += 1
        if self.filter is not None:
            self.notifications_sent += 1
        outcome = None
        if event.flags == SYNACK:
            record = collector_ingest(self.table, event, self.config)
            if record is not None:
                self._remember(record)
                self._remember_reverse(event)
                record.notifications += 1
                if record.state == PRE_CLASSIFIED and self.filter is not None:
                    self.filter.suppress(record.key,
                                         record.classified_ts_ns + self.config.effective_delay_ns)
        elif event.flags in (FIN, RST):
            record = collector_ingest(self.table, event, self.config)
            if record is not None:
                record.notifications += 1
        elif event.flags == ACK:
            outcome = classify_ack(self.table, event, self.config)
            record = self.records.get(event.key().reversed())
            if record is not None:
                record.notifications += 1
            if outcome == NEWLY_ELEPHANT:
                if self.filter is None:
                    self.notifications_sent += 1  # detection report to the central unit
                elif self.config.stop_useless_notifications:
                    self.filter.suppress(record.key,
                                         record.classified_ts_ns + self.config.effective_delay_ns)
        return outcome

    def observe_all(self, events: Iterable[PacketEvent]) -> "FlowDetector":
        for event in events:
            self.observe(event)
        return self

    def _remember(self, record: FlowRecord) -> None:
        self.records.setdefault(record.key, record)

    def _remember_reverse(self, event: PacketEvent) -> None:
        reverse = self.table.get(event.key())
        if reverse is not None:
            self.records.setdefault(reverse.key, reverse)

    def record_for(self, key: FlowKey) -> Optional[FlowRecord]:
        return self.records.get(key)


@dataclass
class DetectionMetrics:
    """Accuracy, speed, and overhead summary against ground-truth classes."""

    flow_count: int
    true_elephants: int
    true_mice: int
    true_negatives: int
    false_positives: int
    true_negative_rate: float
    false_positive_rate: float
    latencies_ns: dict
    notifications_sent: int
    packets_captured: int
    events_seen: int


def detection_metrics(detector: FlowDetector, truth: Mapping[FlowKey, str]) -> DetectionMetrics:
    """Score a finished detector run against per-flow ground-truth classes.

    Detection latency is classification timestamp minus the flow's first
    observed handshake packet.
    """
    true_elephants = sum(1 for cls in truth.values() if cls == ELEPHANT)
    true_mice = len(truth) - true_elephants
    true_negatives = 0
    false_positives = 0
    latencies = {}
    for key, true_class in truth.items():
        record = detector.records.get(key)
        detected = record.result_class if record is not None else MICE
        if true_class == ELEPHANT and detected == MICE:
            true_negatives += 1
        elif true_class == MICE and detected == ELEPHANT:
            false_positives += 1
        if record is not None and record.classified_ts_ns is not None:
            latencies[key] = record.classified_ts_ns - record.created_ts_ns
    return DetectionMetrics(
        flow_count=len(truth),
        true_elephants=true_elephants,
        true_mice=true_mice,
        true_negatives=true_negatives,
        false_positives=false_positives,
        true_negative_rate=true_negatives / true_elephants if true_elephants else 0.0,
        false_positive_rate=false_positives / true_mice if true_mice else 0.0,
        latencies_ns=latencies,
        notifications_sent=detector.notifications_sent,
        packets_captured=detector.packets_captured,
        events_seen=detector.events_seen,
    )


def sampling_baseline_classify(events: Iterable[PacketEvent], sample_rate: int,
                               threshold_bytes: int, seed: int = 0):
    """Random one-in-S packet sampling with size estimation, as a comparison baseline.

    Samples uniformly over all packets (data included), estimates each flow's
    size as sample_rate times the summed sampled payload bytes, and labels the
    flow an elephant when the estimate exceeds the threshold.  Returns
    (estimated sizes, classes, samples taken) keyed by the data direction.
    """
    if sample_rate < 1:
        raise ValueError(f"sample_rate must be >= 1, got {sample_rate!r}")
    rng = random.Random(seed)
    estimates: dict = {}
    samples = 0
    for event in events:
        if sample_rate > 1 and rng.randrange(sample_rate) != 0:
            continue
        samples += 1
        if event.payload_len:
            key = event.key()
            estimates[key] = estimates.get(key, 0) + event.payload_len
    sizes = {key: total * sample_rate for key, total in estimates.items()}
    classes = {key: (ELEPHANT if size > threshold_bytes else MICE) for key, size in sizes.items()}
    return sizes, classes, samples


# -- CSV wire formats --------------------------------------------------------


def write_packet_csv(path, events: Iterable[PacketEvent]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(PACKET_CSV_FIELDS)
        for event in events:
            writer.writerow([event.ts_ns, event.src, event.sport, event.dst, event.dport,
                             event.flags, event.seq, event.ack, event.payload_len])


def read_packet_csv(path) -> list:
    """Parse a packet trace, deriving each packet's observer from its source subnet."""
    events = []
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [cell.strip() for cell in header] != list(PACKET_CSV_FIELDS):
            raise TraceFormatError(
                f"expected header {','.join(PACKET_CSV_FIELDS)}", row_number=1)
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PACKET_CSV_FIELDS):
                raise TraceFormatError(
                    f"row {row_number}: expected {len(PACKET_CSV_FIELDS)} fields, got {len(row)}",
                    row_number=row_number)
            try:
                event = PacketEvent(
                    ts_ns=int(row[0]),
                    src=row[1],
                    sport=int(row[2]),
                    dst=row[3],
                    dport=int(row[4]),
                    flags=row[5],
                    seq=int(row[6]),
                    ack=int(row[7]),
                    payload_len=int(row[8]),
                    observer=default_subnet_of(row[1]),
                )
            except ValueError as exc:
                raise TraceFormatError(f"row {row_number}: {exc}", row_number=row_number) from exc
            events.append(event)
    return events


def write_detection_csv(path, rows: Iterable[dict]) -> None:
    """Rows need flow_id, true_class, detected_class, detect_ts_ns, notifications."""
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=DETECTION_CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
