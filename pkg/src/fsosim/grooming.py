"""Three-step optical grooming: server-to-server, server-to-rack, rack-to-rack.

Grooming is pure bookkeeping over flow descriptors: flows of one class are
aggregated by destination server, then destination rack, then rack pair, with
composite Poisson rates summed at each level.  The engine uses the resulting
flow-to-aggregate mapping to place member flows on the aggregate's lightpath.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .errors import ContractError
from .flowclass import FLOW_CLASSES
from .provisioning import DemandMatrix

S2S = "s2s"
S2R = "s2r"
R2R = "r2r"


@dataclass(frozen=True)
class FlowDescriptor:
    """One synthetic or trace-derived TCP flow between two servers.

    ``rate_fps`` is the flow's share of the composite Poisson arrival rate;
    one-shot workloads use 1.0 per flow so composite rates count flows.
    """

    flow_id: int
    flow_class: str
    src_server: int
    dst_server: int
    size_bytes: int
    arrival_s: float
    rate_fps: float = 1.0

    def __post_init__(self):
        if self.size_bytes < 0:
            raise ValueError(f"size_bytes must be >= 0, got {self.size_bytes!r}")
        if self.rate_fps < 0:
            raise ValueError(f"rate_fps must be >= 0, got {self.rate_fps!r}")


@dataclass(frozen=True)
class GroomedAggregate:
    """One aggregation node: endpoints at its level, composite rate, member ids."""

    level: str
    flow_class: str
    endpoints: tuple
    rate_fps: float
    member_ids: tuple


@dataclass
class GroomingResult:
    """All three partitions plus intra-rack flows, which bypass the fabric."""

    s2s: dict = field(default_factory=dict)  # (class, src_server, dst_server) -> aggregate
    s2r: dict = field(default_factory=dict)  # (class, src_server, dst_rack) -> aggregate
    r2r: dict = field(default_factory=dict)  # (class, src_rack, dst_rack) -> aggregate
    intra_rack: tuple = ()


def compose_rate(rates: Iterable[float]) -> float:
    """Composite rate of superposed independent Poisson processes: the plain sum."""
    total = 0.0
    for rate in rates:
        if rate < 0:
            raise ValueError(f"rates must be >= 0, got {rate!r}")
        total += rate
    return total


def groom_three_step(flows: Iterable[FlowDescriptor], rack_of: Mapping[int, int]) -> GroomingResult:
    """Partition classified flows into S2S, S2R, and R2R aggregates per class.

    Every flow must already carry a mice/elephant label (grooming follows
    detection); an unknown class raises :class:`ContractError` naming the
    flow.  Intra-rack flows are excluded from all levels and reported in
    ``intra_rack``.
    """
    buckets = {S2S: {}, S2R: {}, R2R: {}}
    intra = []
    for flow in flows:
        if flow.flow_class not in FLOW_CLASSES:
            raise ContractError(
                f"flow {flow.flow_id} has class {flow.flow_class!r}; grooming requires "
                f"one of {FLOW_CLASSES}"
            )
        src_rack = rack_of[flow.src_server]
        dst_rack = rack_of[flow.dst_server]
        if src_rack == dst_rack:
            intra.append(flow)
            continue
        keys = {
            S2S: (flow.flow_class, flow.src_server, flow.dst_server),
            S2R: (flow.flow_class, flow.src_server, dst_rack),
            R2R: (flow.flow_class, src_rack, dst_rack),
        }
        for level, key in keys.items():
            members = buckets[level].setdefault(key, [])
            members.append(flow)
    result = GroomingResult(intra_rack=tuple(intra))
    for level, table in ((S2S, result.s2s), (S2R, result.s2r), (R2R, result.r2r)):
        for key, members in buckets[level].items():
            flow_class = key[0]
            table[key] = GroomedAggregate(
                level=level,
                flow_class=flow_class,
                endpoints=key[1:],
                rate_fps=compose_rate(flow.rate_fps for flow in members),
                member_ids=tuple(flow.flow_id for flow in members),
            )
    return result


def demand_matrix_from_aggregates(r2r: Mapping[tuple, GroomedAggregate], rack_count: int,
                                  mice_size_bits: float, mice_deadline_s: float,
                                  elephant_size_bits: float, elephant_deadline_s: float) -> DemandMatrix:
    """Fill a demand matrix from R2R aggregates; absent pairs keep zero rate."""
    matrix = DemandMatrix(
        rack_count=rack_count,
        mice_size_bits=mice_size_bits,
        mice_deadline_s=mice_deadline_s,
        elephant_size_bits=elephant_size_bits,
        elephant_deadline_s=elephant_deadline_s,
    )
    for (flow_class, src_rack, dst_rack), aggregate in r2r.items():
        matrix.set_rate(src_rack, dst_rack, flow_class, aggregate.rate_fps)
    return matrix
