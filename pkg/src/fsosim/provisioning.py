"""Lightpath provisioning: intensity sizing, k-path routing, wavelength assignment.

For each ordered rack pair and flow class the procedure sizes the per-hop
light intensity from the demanded capacity, prunes infeasible edges, ranks k
loop-less candidate paths by bottleneck residual intensity, weights each
candidate by the number of wavelengths free on every hop, and reserves a
randomly drawn continuity-feasible wavelength along the winning path.  Mice
lightpaths are provisioned before elephant lightpaths.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field

from .errors import FeasibilityError, InfeasibleDemandError
from .flowclass import ELEPHANT, FLOW_CLASSES, MICE
from .optics import intensity_for_capacity, wavelength_capacity
from .topology import Lightpath, PhysicalTopology, VirtualTopology, min_wavelengths, residual_view


def required_capacity(arrival_rate_fps: float, flow_size_bits: float, deadline_s: float) -> float:
    """Capacity needed to complete ``arrival_rate_fps`` flows of the given size per deadline.

    Evaluates rate * size / deadline verbatim.
    """
    if deadline_s == 0:
        raise ValueError("deadline_s must be > 0")
    for name, value in (("arrival_rate_fps", arrival_rate_fps),
                        ("flow_size_bits", flow_size_bits),
                        ("deadline_s", deadline_s)):
        if not (math.isfinite(value) and value >= 0):
            raise ValueError(f"{name} must be finite and >= 0, got {value!r}")
    return arrival_rate_fps * flow_size_bits / deadline_s


@dataclass
class DemandMatrix:
    """Per ordered rack pair and class: composite arrival rate plus class flow profiles.

    ``rates`` maps (src, dst, flow_class) to a composite arrival rate in
    flows/s; ``overrides_bps`` lets a pair's demand be stated directly in
    bit/s, bypassing the rate * size / deadline formula.
    """

    rack_count: int
    mice_size_bits: float
    mice_deadline_s: float
    elephant_size_bits: float
    elephant_deadline_s: float
    rates: dict = field(default_factory=dict)
    overrides_bps: dict = field(default_factory=dict)

    def set_rate(self, src: int, dst: int, flow_class: str, rate_fps: float) -> None:
        if src == dst:
            raise ValueError("diagonal demand entries must stay zero")
        if rate_fps < 0:
            raise ValueError(f"rate must be >= 0, got {rate_fps!r}")
        if flow_class not in FLOW_CLASSES:
            raise ValueError(f"unknown flow class {flow_class!r}")
        self.rates[(src, dst, flow_class)] = rate_fps

    def rate(self, src: int, dst: int, flow_class: str) -> float:
        return self.rates.get((src, dst, flow_class), 0.0)

    def profile(self, flow_class: str) -> tuple:
        """(flow size bits, deadline s) for the class."""
        if flow_class == MICE:
            return self.mice_size_bits, self.mice_deadline_s
        return self.elephant_size_bits, self.elephant_deadline_s

    def demand_bps(self, src: int, dst: int, flow_class: str) -> float:
        if (src, dst, flow_class) in self.overrides_bps:
            return self.overrides_bps[(src, dst, flow_class)]
        size_bits, deadline_s = self.profile(flow_class)
        return required_capacity(self.rate(src, dst, flow_class), size_bits, deadline_s)


@dataclass
class ProvisioningResult:
    """Lightpath tables plus the post-pass availability views and capacities."""

    lightpaths: dict  # (src, dst, flow_class) -> Lightpath
    mice_view: VirtualTopology
    elephant_view: VirtualTopology
    demanded_bps: dict
    achieved_bps: dict
    seed: int
    k: int

    def lightpath(self, src: int, dst: int, flow_class: str) -> Lightpath:
        return self.lightpaths[(src, dst, flow_class)]

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "k": self.k,
            "lightpaths": [
                {
                    "lightpath_id": lp.lightpath_id,
                    "flow_class": lp.flow_class,
                    "src": lp.src,
                    "dst": lp.dst,
                    "path": list(lp.path),
                    "wavelength": lp.wavelength,
                    "hop_intensities": list(lp.hop_intensities),
                    "capacity_bps": lp.capacity_bps,
                    "demand_bps": self.demanded_bps[key],
                }
                for key, lp in sorted(self.lightpaths.items(),
                                      key=lambda item: item[1].lightpath_id)
            ],
        }
        return json.dumps(doc, indent=2)


def _adjacency(view: VirtualTopology) -> dict:
    adj = {}
    for (src, dst) in view.edges:
        adj.setdefault(src, []).append(dst)
    for node in adj:
        adj[node].sort()
    return adj


def _max_bottleneck(view: VirtualTopology, adj: dict, src: int, dst: int,
                    banned_nodes, banned_edges):
    """Width of the maximum-bottleneck src->dst path, or None when disconnected."""
    best = {src: math.inf}
    heap = [(-math.inf, src)]
    visited = set(banned_nodes)
    visited.discard(src)
    while heap:
        neg_width, node = heapq.heappop(heap)
        if node in visited:
            continue
        visited.add(node)
        if node == dst:
            return -neg_width
        for neighbor in adj.get(node, ()):
            if neighbor in visited or (node, neighbor) in banned_edges:
                continue
            width = min(-neg_width, view.edges[(node, neighbor)].residual_intensity)
            if width > best.get(neighbor, -math.inf):
                best[neighbor] = width
                heapq.heappush(heap, (-width, neighbor))
    return None


def _shortlex_at_width(view: VirtualTopology, adj: dict, src: int, dst: int,
                       min_width: float, banned_nodes, banned_edges):
    """Shortest, then lexicographically smallest, simple src->dst path using
    only edges of at least ``min_width``.

    Best-first search keyed by (hop count, node sequence); both components
    grow monotonically along extensions, so the first label popped per node
    is that node's optimum and may be finalized.
    """
    heap = [(1, (src,))]
    visited = set(banned_nodes)
    visited.discard(src)
    while heap:
        _, path = heapq.heappop(heap)
        node = path[-1]
        if node in visited:
            continue
        visited.add(node)
        if node == dst:
            return path
        for neighbor in adj.get(node, ()):
            if (neighbor in visited or (node, neighbor) in banned_edges
                    or view.edges[(node, neighbor)].residual_intensity < min_width):
                continue
            heapq.heappush(heap, (len(path) + 1, path + (neighbor,)))
    return None


def _widest_path(view: VirtualTopology, adj: dict, src: int, dst: int,
                 banned_nodes=frozenset(), banned_edges=frozenset(),
                 width_cap: float = math.inf):
    """Best src->dst completion under (total width desc, hops asc, nodes asc).

    ``width_cap`` is the bottleneck of the root prefix this completion will be
    appended to: the achievable total width is min(cap, best spur width), so
    the shortlex search only insists on edges at least that wide -- insisting
    on the full spur optimum would skip better-ranked paths of equal total
    width.
    """
    width = _max_bottleneck(view, adj, src, dst, banned_nodes, banned_edges)
    if width is None:
        return None
    target = min(width_cap, width)
    path = _shortlex_at_width(view, adj, src, dst, target, banned_nodes, banned_edges)
    if path is None:
        return None
    return target, path


def _path_width(view: VirtualTopology, path: tuple) -> float:
    return min(view.edges[hop].residual_intensity for hop in zip(path[:-1], path[1:]))


def k_widest_paths(view: VirtualTopology, src: int, dst: int, k: int) -> list:
    """Up to ``k`` loop-less paths ordered by non-increasing bottleneck intensity.

    Yen's deviation scheme over the widest-path search above.  Equal-width
    paths are ordered shortest first, then lexicographically by node ids, so
    width ties never prefer a hop-wasting detour.  Returns a list of
    (path, bottleneck_intensity) pairs; no path at all gives an empty list.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    if src == dst:
        raise ValueError("src and dst must differ")
    adj = _adjacency(view)
    first = _widest_path(view, adj, src, dst)
    if first is None:
        return []
    results = [(first[1], first[0])]
    candidates = []  # heap of (-width, hops, path)
    seen = {first[1]}
    while len(results) < k:
        prev_path = results[-1][0]
        for i in range(len(prev_path) - 1):
            spur_node = prev_path[i]
            root = prev_path[: i + 1]
            root_width = _path_width(view, root) if i > 0 else math.inf
            banned_edges = {
                (path[i], path[i + 1])
                for path, _ in results
                if len(path) > i + 1 and path[: i + 1] == root
            }
            banned_nodes = frozenset(root[:-1])
            spur = _widest_path(view, adj, spur_node, dst, banned_nodes, banned_edges,
                                width_cap=root_width)
            if spur is None:
                continue
            total = root[:-1] + spur[1]
            if total in seen:
                continue
            seen.add(total)
            heapq.heappush(candidates, (-_path_width(view, total), len(total), total))
        if not candidates:
            break
        neg_width, _, path = heapq.heappop(candidates)
        results.append((path, -neg_width))
    return results


def k_candidate_paths(view: VirtualTopology, src: int, dst: int, k: int) -> list:
    """The k shortest loop-less paths, ordered by non-increasing bottleneck intensity.

    Candidate enumeration is hop-count-first (Yen over a shortest-path
    search), then the k candidates are ranked by their residual-intensity
    bottleneck.  Provisioning draws its route candidates from here: ranking
    the whole path space by width instead would favor hop-wasting detours
    over untouched links and strand wavelengths on symmetric meshes.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k!r}")
    if src == dst:
        raise ValueError("src and dst must differ")
    adj = _adjacency(view)
    first = _shortlex_at_width(view, adj, src, dst, -math.inf, frozenset(), frozenset())
    if first is None:
        return []
    results = [first]
    candidates = []  # heap of (hops, path)
    seen = {first}
    while len(results) < k:
        prev_path = results[-1]
        for i in range(len(prev_path) - 1):
            spur_node = prev_path[i]
            root = prev_path[: i + 1]
            banned_edges = {
                (path[i], path[i + 1])
                for path in results
                if len(path) > i + 1 and path[: i + 1] == root
            }
            banned_nodes = frozenset(root[:-1])
            spur = _shortlex_at_width(view, adj, spur_node, dst, -math.inf,
                                      banned_nodes, banned_edges)
            if spur is None:
                continue
            total = root[:-1] + spur
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (len(total), total))
        if not candidates:
            break
        _, path = heapq.heappop(candidates)
        results.append(path)
    ranked = [(path, _path_width(view, path)) for path in results]
    ranked.sort(key=lambda item: (-item[1], len(item[0]), item[0]))
    return ranked


def _pruned_view(view: VirtualTopology, required_intensity: dict) -> VirtualTopology:
    """Drop edges that cannot host the demand: too little intensity or no free slot."""
    edges = {
        link_id: edge
        for link_id, edge in view.edges.items()
        if edge.free_wavelengths and edge.residual_intensity >= required_intensity[link_id]
    }
    return VirtualTopology(flow_class=view.flow_class, nodes=view.nodes, edges=edges)


def provision_lightpath(topology: PhysicalTopology, view: VirtualTopology,
                        src: int, dst: int, flow_class: str, demand_bps: float,
                        bandwidth_hz: float, k: int, rng: random.Random,
                        lightpath_id: int) -> Lightpath:
    """Provision one rack-to-rack lightpath against the current availability view.

    Candidate paths are scored as bottleneck intensity times the count of
    wavelengths simultaneously free on every hop; the winning path gets a
    wavelength drawn uniformly at random from that common free set.
    Reservations are applied to all hops atomically: on any failure the
    topology is left untouched and :class:`InfeasibleDemandError` is raised.
    """
    if demand_bps <= 0:
        raise ValueError(f"demand_bps must be > 0, got {demand_bps!r}")
    required = {
        link_id: intensity_for_capacity(topology.links[link_id].gain, demand_bps, bandwidth_hz)
        for link_id in view.edges
    }
    pruned = _pruned_view(view, required)
    candidates = k_candidate_paths(pruned, src, dst, k) if pruned.edges else []

    best = None  # (score, path, common_free)
    for path, width in candidates:
        common = frozenset.intersection(
            *(pruned.edges[hop].free_wavelengths for hop in zip(path[:-1], path[1:]))
        )
        if not common:
            continue
        score = width * len(common)
        if (best is None or score > best[0]
                or (score == best[0] and (len(path), path) < (len(best[1]), best[1]))):
            best = (score, path, common)
    if best is None:
        raise InfeasibleDemandError(
            f"no feasible path for {flow_class} demand {demand_bps:g} bit/s "
            f"between racks {src} and {dst}",
            src=src, dst=dst, flow_class=flow_class,
            diagnostics={
                "demand_bps": demand_bps,
                "candidates": len(candidates),
                "pruned_edges": len(pruned.edges),
            },
        )
    _, path, common = best
    wavelength = rng.choice(sorted(common))
    hops = tuple(zip(path[:-1], path[1:]))
    hop_intensities = tuple(required[hop] for hop in hops)
    reserved = []
    try:
        for hop, intensity in zip(hops, hop_intensities):
            topology.reserve(hop, wavelength, intensity, lightpath_id)
            reserved.append(hop)
    except Exception:
        for hop in reserved:
            topology.release(hop, wavelength)
        raise
    capacity = min(
        wavelength_capacity(topology.links[hop].gain, intensity, bandwidth_hz)
        for hop, intensity in zip(hops, hop_intensities)
    )
    return Lightpath(
        lightpath_id=lightpath_id,
        flow_class=flow_class,
        src=src,
        dst=dst,
        path=path,
        wavelength=wavelength,
        hop_intensities=hop_intensities,
        capacity_bps=capacity,
    )


def provision_all(topology: PhysicalTopology, demands: DemandMatrix,
                  bandwidth_hz: float, k: int = 4, seed: int = 0) -> ProvisioningResult:
    """Provision every demanded rack pair: all mice lightpaths first, then elephants.

    Pairs iterate in row-major order.  Raises :class:`FeasibilityError` up
    front when the per-link wavelength count is below the two-lightpaths-per-
    pair bound (wavelength sharing is out of scope), and propagates
    :class:`InfeasibleDemandError` identifying the failing pair mid-run.
    """
    leaf_count = topology.leaf_count
    ratio = topology.spine_count / leaf_count
    needed = min_wavelengths(leaf_count, ratio)
    if topology.wavelengths_per_link < needed:
        raise FeasibilityError(
            f"{topology.wavelengths_per_link} wavelengths per link cannot give every rack "
            f"pair separate mice and elephant lightpaths; at least {needed} are required"
        )
    rng = random.Random(seed)
    lightpaths: dict = {}
    demanded: dict = {}
    achieved: dict = {}
    next_id = 0
    views = {}
    for flow_class in (MICE, ELEPHANT):
        for src in range(leaf_count):
            for dst in range(leaf_count):
                if src == dst:
                    continue
                demand = demands.demand_bps(src, dst, flow_class)
                if demand <= 0:
                    continue
                view = residual_view(topology, flow_class)
                lightpath = provision_lightpath(
                    topology, view, src, dst, flow_class, demand,
                    bandwidth_hz, k, rng, next_id,
                )
                next_id += 1
                key = (src, dst, flow_class)
                lightpaths[key] = lightpath
                demanded[key] = demand
                achieved[key] = lightpath.capacity_bps
        views[flow_class] = residual_view(topology, flow_class)
    return ProvisioningResult(
        lightpaths=lightpaths,
        mice_view=views[MICE],
        elephant_view=views[ELEPHANT],
        demanded_bps=demanded,
        achieved_bps=achieved,
        seed=seed,
        k=k,
    )
