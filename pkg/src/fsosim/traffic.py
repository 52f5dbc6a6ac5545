"""Synthetic workloads: Poisson flow arrivals, shuffle patterns, and packet streams.

Generators draw everything from the scenario seed so a run can be reproduced
byte for byte.  Flow-to-packet expansion emits the TCP handshake, data
segments, cumulative ACKs, and teardown that the detectors consume; data
segment size is configurable so large flows can be modeled with aggregated
(offload-style) segments.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, asdict
from typing import Iterable, Optional

from .detection import (ACK, DATA, FIN, SEQ_MOD, SYN, SYNACK, DetectorConfig,
                        FlowKey, PacketEvent)
from .errors import ConfigurationError
from .flowclass import ELEPHANT, MICE
from .grooming import FlowDescriptor
from .optics import ChannelGain

SCENARIO_KINDS = ("pure-mice", "pure-elephant", "mix", "shuffle")
_KIND_ALIASES = {
    "pure-mf": "pure-mice",
    "pure-ef": "pure-elephant",
    "pure-mice": "pure-mice",
    "pure-elephant": "pure-elephant",
    "mix": "mix",
    "shuffle": "shuffle",
}


def _size_range(value) -> tuple:
    if isinstance(value, (list, tuple)):
        lo, hi = int(value[0]), int(value[1])
    else:
        lo = hi = int(value)
    if lo <= 0 or hi < lo:
        raise ConfigurationError(f"bad size range {value!r}")
    return lo, hi


@dataclass
class ScenarioConfig:
    """One complete run description: fabric, workload, detector, and seed."""

    # fabric
    leaf_count: int = 8
    spine_leaf_ratio: float = 0.5
    wavelengths_per_link: int = 4
    hosts_per_rack: int = 40
    bandwidth_hz: float = 2.5e9
    intensity_budget: float = 400.0
    channel_gain: float = 1.0
    fso_link_rate_bps: float = 10e9
    wired_link_rate_bps: float = 1e9
    # workload
    kind: str = "mix"
    flow_count: int = 1000
    mice_fraction: float = 0.9
    shuffle_fanout: int = 20
    elephant_fraction: float = 0.1
    shuffle_group_size: Optional[int] = None
    mice_size_bytes: object = 100_000
    elephant_size_bytes: object = 128_000_000
    arrival_rate_fps: float = 1000.0
    uniform_rate_fps: Optional[float] = None  # same demand on every pair, bypassing grooming
    # classification and forwarding
    threshold_bytes: int = 1 << 20
    mice_deadline_s: float = 1e-3
    elephant_deadline_s: float = 1.0
    k_paths: int = 4
    detector: dict = field(default_factory=dict)
    # packetization
    mss_bytes: int = 1460
    ack_every: int = 2
    ack_quantum_bytes: int = 65536
    reroute_penalty_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.kind = _KIND_ALIASES.get(str(self.kind).lower(), self.kind)
        self.validate()

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ConfigurationError(f"unknown scenario kind {self.kind!r}")
        if self.seed is None:
            raise ConfigurationError("a seed is mandatory for reproducibility")
        if not 0.0 <= self.mice_fraction <= 1.0:
            raise ConfigurationError(f"mice_fraction must be in [0, 1], got {self.mice_fraction!r}")
        if not 0.0 <= self.elephant_fraction <= 1.0:
            raise ConfigurationError(
                f"elephant_fraction must be in [0, 1], got {self.elephant_fraction!r}")
        mice_lo, mice_hi = _size_range(self.mice_size_bytes)
        elephant_lo, elephant_hi = _size_range(self.elephant_size_bytes)
        if mice_hi > self.threshold_bytes:
            raise ConfigurationError(
                f"mice sizes up to {mice_hi} cross the detection threshold "
                f"{self.threshold_bytes}; ground-truth labels would be wrong")
        if elephant_lo <= self.threshold_bytes:
            raise ConfigurationError(
                f"elephant sizes from {elephant_lo} do not exceed the detection "
                f"threshold {self.threshold_bytes}")
        if self.kind == "shuffle" and 2 * self.shuffle_fanout > self.hosts_per_rack:
            raise ConfigurationError(
                f"shuffle fanout {self.shuffle_fanout} needs two disjoint server sets; "
                f"racks only have {self.hosts_per_rack} hosts")
        if self.mss_bytes <= 0:
            raise ConfigurationError(f"mss_bytes must be > 0, got {self.mss_bytes!r}")
        if self.ack_every < 1:
            raise ConfigurationError(f"ack_every must be >= 1, got {self.ack_every!r}")

    # -- derived views -------------------------------------------------------

    def mice_sizes(self) -> tuple:
        return _size_range(self.mice_size_bytes)

    def elephant_sizes(self) -> tuple:
        return _size_range(self.elephant_size_bytes)

    def nominal_size_bits(self, flow_class: str) -> float:
        lo, hi = self.mice_sizes() if flow_class == MICE else self.elephant_sizes()
        return (lo + hi) / 2 * 8

    def deadline_s(self, flow_class: str) -> float:
        return self.mice_deadline_s if flow_class == MICE else self.elephant_deadline_s

    def gain(self) -> ChannelGain:
        return ChannelGain(detector_response=self.channel_gain)

    def rack_of(self, server: int) -> int:
        return server // self.hosts_per_rack

    def detector_config(self) -> DetectorConfig:
        options = dict(self.detector)
        options.setdefault("threshold_bytes", self.threshold_bytes)
        return DetectorConfig(**options)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls(**json.loads(text))

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(path) as handle:
            return cls.from_json(handle.read())

    def build_flows(self, seed: Optional[int] = None):
        if self.kind == "shuffle":
            return shuffle_pattern(self, seed)
        return generate_flows(self, seed)


def _draw_size(rng: random.Random, sizes: tuple) -> int:
    lo, hi = sizes
    return lo if lo == hi else rng.randint(lo, hi)


def generate_flows(config: ScenarioConfig, seed: Optional[int] = None) -> list:
    """Poisson arrivals with class mix, sizes, and inter-rack endpoints from the seed.

    Ground-truth class always matches size > threshold because mice and
    elephant size ranges sit on opposite sides of it (validated).
    """
    rng = random.Random(config.seed if seed is None else seed)
    n = config.flow_count
    if config.kind == "pure-mice":
        labels = [MICE] * n
    elif config.kind == "pure-elephant":
        labels = [ELEPHANT] * n
    else:
        mice = round(config.mice_fraction * n)
        labels = [MICE] * mice + [ELEPHANT] * (n - mice)
        rng.shuffle(labels)
    flows = []
    clock = 0.0
    per_flow_rate = config.arrival_rate_fps / n if n else 0.0
    for flow_id, label in enumerate(labels):
        clock += rng.expovariate(config.arrival_rate_fps)
        src_rack = rng.randrange(config.leaf_count)
        dst_rack = rng.randrange(config.leaf_count)
        while dst_rack == src_rack:  # clients and servers sit in different racks
            dst_rack = rng.randrange(config.leaf_count)
        src = src_rack * config.hosts_per_rack + rng.randrange(config.hosts_per_rack)
        dst = dst_rack * config.hosts_per_rack + rng.randrange(config.hosts_per_rack)
        sizes = config.mice_sizes() if label == MICE else config.elephant_sizes()
        flows.append(FlowDescriptor(
            flow_id=flow_id,
            flow_class=label,
            src_server=src,
            dst_server=dst,
            size_bytes=_draw_size(rng, sizes),
            arrival_s=clock,
            rate_fps=per_flow_rate,
        ))
    return flows


def shuffle_pattern(config: ScenarioConfig, seed: Optional[int] = None) -> list:
    """Map-reduce shuffle: k senders per rack each open one flow to a peer rack.

    Racks communicate in a ring (rack i sends to rack i+1).  Senders are the
    first k hosts of each rack and receivers the next k hosts of the peer, so
    the two k-sets of a rack never overlap.  Elephant counts per group follow
    the configured fraction, rounded half up.
    """
    rng = random.Random(config.seed if seed is None else seed)
    k = config.shuffle_fanout
    hosts = config.hosts_per_rack
    group = config.shuffle_group_size or k
    flows = []
    flow_id = 0
    for rack in range(config.leaf_count):
        peer = (rack + 1) % config.leaf_count
        labels = []
        for start in range(0, k, group):
            members = min(group, k - start)
            elephants = int(config.elephant_fraction * members + 0.5)
            group_labels = [MICE] * members
            for idx in rng.sample(range(members), elephants):
                group_labels[idx] = ELEPHANT
            labels.extend(group_labels)
        for m, label in enumerate(labels):
            sizes = config.mice_sizes() if label == MICE else config.elephant_sizes()
            flows.append(FlowDescriptor(
                flow_id=flow_id,
                flow_class=label,
                src_server=rack * hosts + m,
                dst_server=peer * hosts + k + m,
                size_bytes=_draw_size(rng, sizes),
                arrival_s=0.0,
                rate_fps=1.0,
            ))
            flow_id += 1
    return flows


# -- packet stream synthesis --------------------------------------------------


def server_address(server: int, hosts_per_rack: int) -> str:
    rack, idx = divmod(server, hosts_per_rack)
    return f"10.{rack}.{idx // 256}.{idx % 256}"


def assign_flow_keys(flows: Iterable[FlowDescriptor], hosts_per_rack: int,
                     seed: int = 0) -> dict:
    """Give every flow a unique seeded 5-tuple (ephemeral source port, port 5001)."""
    rng = random.Random(seed)
    keys = {}
    used = set()
    for flow in flows:
        src = server_address(flow.src_server, hosts_per_rack)
        dst = server_address(flow.dst_server, hosts_per_rack)
        while True:
            sport = rng.randrange(20000, 60000)
            if (src, sport, dst) not in used:
                used.add((src, sport, dst))
                break
        keys[flow.flow_id] = FlowKey(src=src, sport=sport, dst=dst, dport=5001)
    return keys


def truth_map(flows: Iterable[FlowDescriptor], keys: dict) -> dict:
    return {keys[flow.flow_id]: flow.flow_class for flow in flows}


def flows_to_packet_events(flows: Iterable[FlowDescriptor], keys: dict,
                           hosts_per_rack: int, mss_bytes: int, ack_every: int,
                           line_rate_bps: float = 10e9, seed: int = 0,
                           handshake_step_ns: int = 1000) -> list:
    """Expand flows into a time-ordered TCP packet-event stream.

    Per flow: SYN / SYN+ACK / ACK handshake, data segments of at most
    ``mss_bytes`` paced at ``line_rate_bps``, one cumulative ACK every
    ``ack_every`` segments plus a final ACK covering the whole flow, and a
    closing FIN.  The final ACK number minus the data sender's ISN always
    equals the flow size.
    """
    if mss_bytes <= 0:
        raise ValueError(f"mss_bytes must be > 0, got {mss_bytes!r}")
    if ack_every < 1:
        raise ValueError(f"ack_every must be >= 1, got {ack_every!r}")
    rng = random.Random(seed)
    events = []
    for flow in flows:
        key = keys[flow.flow_id]
        observer_src = f"es{flow.src_server // hosts_per_rack}"
        observer_dst = f"es{flow.dst_server // hosts_per_rack}"
        isn_c = rng.randrange(SEQ_MOD)
        isn_s = rng.randrange(SEQ_MOD)
        order = 0

        def emit(ts_ns, src_key, flags, seq=0, ack=0, payload=0, observer=""):
            nonlocal order
            events.append((ts_ns, flow.flow_id, order, PacketEvent(
                ts_ns=ts_ns, src=src_key.src, sport=src_key.sport,
                dst=src_key.dst, dport=src_key.dport, flags=flags,
                seq=seq % SEQ_MOD, ack=ack % SEQ_MOD, payload_len=payload,
                observer=observer)))
            order += 1

        t = round(flow.arrival_s * 1e9)
        reverse = key.reversed()
        emit(t, key, SYN, seq=isn_c, observer=observer_src)
        emit(t + handshake_step_ns, reverse, SYNACK, seq=isn_s, ack=isn_c, observer=observer_dst)
        emit(t + 2 * handshake_step_ns, key, ACK, seq=isn_c, ack=isn_s, observer=observer_src)
        t += 2 * handshake_step_ns
        sent = 0
        segments = 0
        size = flow.size_bytes
        while sent < size:
            payload = min(mss_bytes, size - sent)
            t += round(payload * 8 / line_rate_bps * 1e9)
            emit(t, key, DATA, seq=isn_c + sent, payload=payload, observer=observer_src)
            sent += payload
            segments += 1
            if segments % ack_every == 0 or sent == size:
                emit(t + handshake_step_ns, reverse, ACK, seq=isn_s, ack=isn_c + sent,
                     observer=observer_dst)
        emit(t + 2 * handshake_step_ns, key, FIN, seq=isn_c + sent, observer=observer_src)
    events.sort(key=lambda item: (item[0], item[1], item[2]))
    return [event for _, _, _, event in events]
