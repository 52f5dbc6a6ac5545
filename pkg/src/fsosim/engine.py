"""Deterministic flow-level discrete-event simulator.

One run executes a scenario under a single forwarding policy:

* ``ecmp``      -- hash-per-flow over the wired mesh, max-min shared links
* ``ecmp-fso``  -- hash-per-flow with one fixed-rate wavelength per flow, FIFO queue
* ``fg-fso``    -- per-class lightpaths with a-priori (oracle) flow classes
* ``lightfdg``  -- every flow starts on its pair's mice lightpath and moves to the
                   elephant lightpath when the in-loop detector classifies it

Lightpath service is fluid: members share the provisioned capacity max-min,
each additionally shaped to the lightpath class's flow profile rate (the
capacity was provisioned as arrival-rate times that profile, so a groomed
member never exceeds its profile share).  Time is continuous; every quantity
derives from the scenario seed, so identical inputs reproduce identical
reports byte for byte.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .detection import (ACK, FIN, NEWLY_ELEPHANT, PRESUMED_MICE, SEQ_MOD, SYNACK,
                        DetectionMetrics, FlowDetector, FlowKey, PacketEvent,
                        detection_metrics)
from .errors import ContractError
from .flowclass import ELEPHANT, MICE
from .grooming import demand_matrix_from_aggregates, groom_three_step
from .provisioning import DemandMatrix, ProvisioningResult, provision_all
from .topology import build_spine_leaf
from .traffic import ScenarioConfig, assign_flow_keys, truth_map

POLICIES = ("ecmp", "ecmp-fso", "fg-fso", "lightfdg")

PER_FLOW_CSV_FIELDS = ("flow_id", "class_true", "class_detected", "policy",
                       "start_ns", "fct_ns", "deadline_met", "detect_ns")
SUMMARY_CSV_FIELDS = ("policy", "seed", "flow_class", "flow_count", "total_bytes",
                      "makespan_ns", "throughput_bps", "deadline_fraction", "mean_fct_ns")

_DEADLINE_SLACK = 1e-9  # relative guard against float rounding at the boundary


def ecmp_route(key: FlowKey, path_count: int) -> int:
    """Stable hash of the 5-tuple modulo the candidate path count."""
    if path_count < 1:
        raise ValueError(f"path_count must be >= 1, got {path_count!r}")
    token = f"{key.src}:{key.sport}:{key.dst}:{key.dport}:{key.protocol}".encode()
    return zlib.crc32(token) % path_count


@dataclass
class _FlowState:
    flow: object
    key: FlowKey
    isn: int
    size_bits: int
    delivered_bits: float = 0.0
    rate_bps: float = 0.0
    start_s: float = 0.0
    finish_s: Optional[float] = None
    lightpath_key: Optional[tuple] = None
    links: tuple = ()
    waiting: bool = False
    paused_until: Optional[float] = None
    reroute_at: Optional[float] = None
    next_ack_bits: Optional[int] = None
    detect_s: Optional[float] = None

    @property
    def remaining_bits(self) -> float:
        return self.size_bits - self.delivered_bits

    @property
    def running(self) -> bool:
        return (self.finish_s is None and not self.waiting
                and self.paused_until is None)


@dataclass
class MetricsReport:
    """Per-flow rows plus per-class aggregates for one (scenario, policy, seed) run."""

    policy: str
    seed: int
    scenario_kind: str
    per_flow: list
    summaries: list
    detection: Optional[DetectionMetrics] = None
    provisioned_bps: dict = field(default_factory=dict)


def demand_matrix_for(scenario: ScenarioConfig, flows, policy: str = "fg-fso") -> DemandMatrix:
    """Build the provisioning demand matrix a policy's control plane would use.

    ``fg-fso`` (and plain provisioning) uses true per-class composite rates.
    ``lightfdg`` sizes the mice topology for the total arrival rate, because
    every flow starts there presumed-mice, while the elephant topology is
    still sized from the elephant rate statistics.  A configured
    ``uniform_rate_fps`` overrides grooming with the same rate on every
    ordered pair and class.
    """
    mice_bits = scenario.nominal_size_bits(MICE)
    elephant_bits = scenario.nominal_size_bits(ELEPHANT)
    if scenario.uniform_rate_fps is not None:
        matrix = DemandMatrix(
            rack_count=scenario.leaf_count,
            mice_size_bits=mice_bits,
            mice_deadline_s=scenario.mice_deadline_s,
            elephant_size_bits=elephant_bits,
            elephant_deadline_s=scenario.elephant_deadline_s,
        )
        for src in range(scenario.leaf_count):
            for dst in range(scenario.leaf_count):
                if src != dst:
                    matrix.set_rate(src, dst, MICE, scenario.uniform_rate_fps)
                    matrix.set_rate(src, dst, ELEPHANT, scenario.uniform_rate_fps)
        return matrix
    groomed = groom_three_step(flows, {f.src_server: scenario.rack_of(f.src_server) for f in flows}
                               | {f.dst_server: scenario.rack_of(f.dst_server) for f in flows})
    matrix = demand_matrix_from_aggregates(
        groomed.r2r, scenario.leaf_count,
        mice_bits, scenario.mice_deadline_s,
        elephant_bits, scenario.elephant_deadline_s,
    )
    if policy == "lightfdg":
        pair_totals: dict = {}
        for (flow_class, src, dst), aggregate in groomed.r2r.items():
            pair_totals[(src, dst)] = pair_totals.get((src, dst), 0.0) + aggregate.rate_fps
        for (src, dst), total in pair_totals.items():
            matrix.set_rate(src, dst, MICE, total)
    return matrix


def provision_for(scenario: ScenarioConfig, flows, policy: str, seed: int) -> ProvisioningResult:
    topology = build_spine_leaf(
        scenario.leaf_count, scenario.spine_leaf_ratio, scenario.wavelengths_per_link,
        gain=scenario.gain(), intensity_budget=scenario.intensity_budget,
    )
    demands = demand_matrix_for(scenario, flows, policy)
    return provision_all(topology, demands, scenario.bandwidth_hz,
                         k=scenario.k_paths, seed=seed)


class _Engine:
    """Single-threaded event loop for one run."""

    def __init__(self, scenario: ScenarioConfig, policy: str, seed: int):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; valid: {', '.join(POLICIES)}")
        self.scenario = scenario
        self.policy = policy
        self.seed = seed
        self.flows = scenario.build_flows(seed)
        self.keys = assign_flow_keys(self.flows, scenario.hosts_per_rack, seed)
        self.truth = truth_map(self.flows, self.keys)
        self.states: dict = {}
        self.now = 0.0
        self.quantum_bits = scenario.ack_quantum_bytes * 8
        self.detector: Optional[FlowDetector] = None
        self.provisioning: Optional[ProvisioningResult] = None
        self.lp_members: dict = {}
        self.profile_caps = {
            MICE: scenario.nominal_size_bits(MICE) / scenario.mice_deadline_s,
            ELEPHANT: scenario.nominal_size_bits(ELEPHANT) / scenario.elephant_deadline_s,
        }
        self.spine_count = round(scenario.spine_leaf_ratio * scenario.leaf_count)
        if policy in ("fg-fso", "lightfdg"):
            self.provisioning = provision_for(scenario, self.flows, policy, seed)
            self.lp_members = {key: set() for key in self.provisioning.lightpaths}
        if policy == "lightfdg":
            self.detector = FlowDetector(scenario.detector_config())
        # ecmp state
        self.link_members: dict = {}
        # ecmp-fso state
        self.channel_rate = scenario.fso_link_rate_bps / scenario.wavelengths_per_link
        self.free_channels: dict = {}
        self.wait_queue: list = []

    # -- helpers -------------------------------------------------------------

    def _rack(self, server: int) -> int:
        return self.scenario.rack_of(server)

    def _route_links(self, flow) -> tuple:
        src_rack = self._rack(flow.src_server)
        dst_rack = self._rack(flow.dst_server)
        spine = self.scenario.leaf_count + ecmp_route(self.keys[flow.flow_id], self.spine_count)
        return ((src_rack, spine), (spine, dst_rack))

    def _lightpath_for(self, flow, flow_class: str):
        key = (self._rack(flow.src_server), self._rack(flow.dst_server), flow_class)
        if key not in self.provisioning.lightpaths:
            raise ContractError(
                f"rack pair {key[0]}->{key[1]} has no provisioned {flow_class} lightpath")
        return key

    def _emit(self, state: _FlowState, flags: str, ack_bytes: int = 0) -> Optional[str]:
        """Feed one synthesized control packet to the in-loop detector."""
        if self.detector is None:
            return None
        ts_ns = round(self.now * 1e9)
        key = state.key
        if flags == SYNACK:
            event = PacketEvent(ts_ns=ts_ns, src=key.dst, sport=key.dport,
                                dst=key.src, dport=key.sport, flags=SYNACK,
                                seq=0, ack=state.isn,
                                observer=f"es{self._rack(state.flow.dst_server)}")
        elif flags == ACK:
            event = PacketEvent(ts_ns=ts_ns, src=key.dst, sport=key.dport,
                                dst=key.src, dport=key.sport, flags=ACK,
                                ack=(state.isn + ack_bytes) % SEQ_MOD,
                                observer=f"es{self._rack(state.flow.dst_server)}")
        else:
            event = PacketEvent(ts_ns=ts_ns, src=key.src, sport=key.sport,
                                dst=key.dst, dport=key.dport, flags=flags,
                                seq=(state.isn + ack_bytes) % SEQ_MOD,
                                observer=f"es{self._rack(state.flow.src_server)}")
        return self.detector.observe(event)

    # -- event processing ----------------------------------------------------

    def run(self) -> MetricsReport:
        arrivals = sorted(self.flows, key=lambda f: (f.arrival_s, f.flow_id))
        arrival_idx = 0
        while True:
            candidates = []
            if arrival_idx < len(arrivals):
                candidates.append((arrivals[arrival_idx].arrival_s, 4, -1, "arrival"))
            for fid, state in self.states.items():
                if state.finish_s is not None:
                    continue
                if state.paused_until is not None:
                    candidates.append((state.paused_until, 1, fid, "unpause"))
                if state.reroute_at is not None:
                    candidates.append((state.reroute_at, 3, fid, "reroute"))
                if state.running and state.rate_bps > 0:
                    candidates.append(
                        (self.now + state.remaining_bits / state.rate_bps, 0, fid, "complete"))
                    if state.next_ack_bits is not None and state.next_ack_bits < state.size_bits:
                        candidates.append(
                            (self.now + (state.next_ack_bits - state.delivered_bits) / state.rate_bps,
                             2, fid, "quantum"))
            if not candidates:
                break
            candidates.sort()
            t = candidates[0][0]
            batch = [c for c in candidates if c[0] == t]
            self._advance(t)
            for _, _, fid, kind in batch:
                if kind == "complete":
                    self._complete(self.states[fid])
                elif kind == "quantum":
                    self._quantum(self.states[fid])
                elif kind == "unpause":
                    self.states[fid].paused_until = None
                elif kind == "reroute":
                    self._apply_reroute(self.states[fid])
                elif kind == "arrival":
                    self._admit(arrivals[arrival_idx])
                    arrival_idx += 1
            self._recompute_rates()
        return self._report()

    def _advance(self, t: float) -> None:
        dt = t - self.now
        if dt > 0:
            for state in self.states.values():
                if state.finish_s is None and state.running and state.rate_bps > 0:
                    state.delivered_bits += state.rate_bps * dt
        self.now = t

    def _admit(self, flow) -> None:
        state = _FlowState(
            flow=flow,
            key=self.keys[flow.flow_id],
            isn=zlib.crc32(f"isn:{self.seed}:{flow.flow_id}".encode()) % SEQ_MOD,
            size_bits=flow.size_bytes * 8,
            start_s=flow.arrival_s,
        )
        self.states[flow.flow_id] = state
        if self.detector is not None:
            state.next_ack_bits = self.quantum_bits
        self._emit(state, SYNACK)
        src_rack, dst_rack = self._rack(flow.src_server), self._rack(flow.dst_server)
        if src_rack == dst_rack:
            # intra-rack traffic bypasses the optical fabric
            state.rate_bps = self.scenario.fso_link_rate_bps
            return
        if self.policy in ("fg-fso", "lightfdg"):
            flow_class = flow.flow_class if self.policy == "fg-fso" else MICE
            state.lightpath_key = self._lightpath_for(flow, flow_class)
            self.lp_members[state.lightpath_key].add(flow.flow_id)
        elif self.policy == "ecmp":
            state.links = self._route_links(flow)
            for link in state.links:
                self.link_members.setdefault(link, set()).add(flow.flow_id)
        elif self.policy == "ecmp-fso":
            state.links = self._route_links(flow)
            if not self._try_start_fso(state):
                state.waiting = True
                self.wait_queue.append(flow.flow_id)

    def _try_start_fso(self, state: _FlowState) -> bool:
        if all(self.free_channels.get(link, self.scenario.wavelengths_per_link) > 0
               for link in state.links):
            for link in state.links:
                self.free_channels[link] = (
                    self.free_channels.get(link, self.scenario.wavelengths_per_link) - 1)
            state.waiting = False
            return True
        return False

    def _complete(self, state: _FlowState) -> None:
        if state.finish_s is not None:
            return
        state.delivered_bits = state.size_bits
        state.finish_s = self.now
        if state.next_ack_bits is not None:
            self._emit(state, ACK, ack_bytes=state.size_bits // 8)
            state.next_ack_bits = None
        self._emit(state, FIN, ack_bytes=state.size_bits // 8)
        if state.lightpath_key is not None:
            self.lp_members[state.lightpath_key].discard(state.flow.flow_id)
            state.lightpath_key = None
        if self.policy == "ecmp":
            for link in state.links:
                self.link_members[link].discard(state.flow.flow_id)
        elif self.policy == "ecmp-fso" and not state.waiting:
            for link in state.links:
                self.free_channels[link] = self.free_channels.get(link, 0) + 1
            self._drain_wait_queue()

    def _drain_wait_queue(self) -> None:
        still_waiting = []
        for fid in self.wait_queue:
            state = self.states[fid]
            if state.finish_s is None and not self._try_start_fso(state):
                still_waiting.append(fid)
        self.wait_queue = still_waiting

    def _quantum(self, state: _FlowState) -> None:
        if state.next_ack_bits is None or state.finish_s is not None:
            return
        boundary = state.next_ack_bits
        state.delivered_bits = max(state.delivered_bits, float(boundary))
        outcome = self._emit(state, ACK, ack_bytes=boundary // 8)
        state.next_ack_bits = boundary + self.quantum_bits
        record = self.detector.record_for(state.key) if self.detector else None
        if record is not None and record.state != PRESUMED_MICE:
            state.next_ack_bits = None  # no further classification work for this flow
        if outcome == NEWLY_ELEPHANT:
            state.detect_s = record.classified_ts_ns / 1e9
            delay_s = self.detector.config.effective_delay_ns / 1e9
            state.reroute_at = self.now + delay_s

    def _apply_reroute(self, state: _FlowState) -> None:
        state.reroute_at = None
        if state.finish_s is not None or state.lightpath_key is None:
            return
        # the source stops feeding the mice topology; remainder rides the elephant lightpath
        self.lp_members[state.lightpath_key].discard(state.flow.flow_id)
        state.lightpath_key = self._lightpath_for(state.flow, ELEPHANT)
        self.lp_members[state.lightpath_key].add(state.flow.flow_id)
        if self.scenario.reroute_penalty_s > 0:
            state.paused_until = self.now + self.scenario.reroute_penalty_s

    def _recompute_rates(self) -> None:
        if self.policy in ("fg-fso", "lightfdg"):
            for key, members in self.lp_members.items():
                active = [fid for fid in members if self.states[fid].running]
                if not active:
                    continue
                share = self.provisioning.achieved_bps[key] / len(active)
                rate = min(self.profile_caps[key[2]], share)
                for fid in active:
                    self.states[fid].rate_bps = rate
        elif self.policy == "ecmp":
            self._recompute_ecmp()
        elif self.policy == "ecmp-fso":
            for state in self.states.values():
                if state.finish_s is None and state.links:
                    state.rate_bps = 0.0 if state.waiting else self.channel_rate

    def _recompute_ecmp(self) -> None:
        active = {fid: state for fid, state in self.states.items()
                  if state.finish_s is None and state.running and state.links}
        residual = {}
        counts = {}
        for fid, state in active.items():
            for link in state.links:
                residual.setdefault(link, self.scenario.wired_link_rate_bps)
                counts[link] = counts.get(link, 0) + 1
        unfrozen = set(active)
        while unfrozen:
            shares = [(residual[link] / counts[link], link)
                      for link in sorted(residual) if counts.get(link, 0) > 0]
            if not shares:
                break
            fair, bottleneck = min(shares)
            frozen_now = [fid for fid in sorted(unfrozen)
                          if bottleneck in active[fid].links]
            if not frozen_now:
                break
            for fid in frozen_now:
                active[fid].rate_bps = fair
                unfrozen.discard(fid)
                for link in active[fid].links:
                    residual[link] -= fair
                    counts[link] -= 1

    # -- reporting -----------------------------------------------------------

    def _report(self) -> MetricsReport:
        scenario = self.scenario
        per_flow = []
        for flow in self.flows:
            state = self.states[flow.flow_id]
            fct_s = state.finish_s - state.start_s
            deadline = scenario.deadline_s(flow.flow_class)
            record = self.detector.record_for(state.key) if self.detector else None
            if self.detector is not None:
                detected = record.result_class if record is not None else MICE
                detect_ns = record.classified_ts_ns if record and record.classified_ts_ns else ""
            elif self.policy == "fg-fso":
                detected = flow.flow_class
                detect_ns = ""
            else:
                detected = ""
                detect_ns = ""
            per_flow.append({
                "flow_id": flow.flow_id,
                "class_true": flow.flow_class,
                "class_detected": detected,
                "policy": self.policy,
                "start_ns": round(state.start_s * 1e9),
                "fct_ns": round(fct_s * 1e9),
                "deadline_met": int(fct_s <= deadline * (1 + _DEADLINE_SLACK)),
                "detect_ns": detect_ns,
            })
        summaries = []
        for flow_class in (MICE, ELEPHANT):
            rows = [state for state in self.states.values()
                    if state.flow.flow_class == flow_class]
            if not rows:
                continue
            total_bytes = sum(state.flow.size_bytes for state in rows)
            start = min(state.start_s for state in rows)
            finish = max(state.finish_s for state in rows)
            makespan = finish - start
            deadline = scenario.deadline_s(flow_class)
            met = sum(1 for state in rows
                      if state.finish_s - state.start_s <= deadline * (1 + _DEADLINE_SLACK))
            summaries.append({
                "policy": self.policy,
                "seed": self.seed,
                "flow_class": flow_class,
                "flow_count": len(rows),
                "total_bytes": total_bytes,
                "makespan_ns": round(makespan * 1e9),
                "throughput_bps": total_bytes * 8 / makespan if makespan > 0 else 0.0,
                "deadline_fraction": met / len(rows),
                "mean_fct_ns": round(sum(state.finish_s - state.start_s for state in rows)
                                     / len(rows) * 1e9),
            })
        detection = None
        if self.detector is not None:
            detection = detection_metrics(self.detector, self.truth)
        provisioned = {}
        if self.provisioning is not None:
            for (src, dst, flow_class), bps in self.provisioning.achieved_bps.items():
                provisioned[flow_class] = provisioned.get(flow_class, 0.0) + bps
        return MetricsReport(
            policy=self.policy,
            seed=self.seed,
            scenario_kind=scenario.kind,
            per_flow=per_flow,
            summaries=summaries,
            detection=detection,
            provisioned_bps=provisioned,
        )


def run(scenario: ScenarioConfig, policy: str = "lightfdg",
        seed: Optional[int] = None) -> MetricsReport:
    """Simulate one scenario under one policy; see module docstring for the model."""
    return _Engine(scenario, policy, scenario.seed if seed is None else seed).run()


def write_per_flow_csv(path, report: MetricsReport) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=PER_FLOW_CSV_FIELDS)
        writer.writeheader()
        for row in report.per_flow:
            writer.writerow(row)


def write_summary_csv(path, reports) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=SUMMARY_CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            for row in report.summaries:
                writer.writerow(row)
