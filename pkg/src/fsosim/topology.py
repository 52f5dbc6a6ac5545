"""Spine-leaf physical topology with per-link wavelength occupancy and intensity state.

Leaves are edge switches atop racks (node ids ``0..N-1``), spines are core
switches (node ids ``N..N+S-1``), and every leaf-spine pair is joined by two
directed links.  All mutation happens on the owning simulation thread;
snapshots taken via :func:`residual_view` are safe to share.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import ConfigurationError, IntensityBudgetError, WavelengthCollisionError
from .optics import ChannelGain


@dataclass
class Link:
    """One directed FSO link with W wavelength slots and an intensity budget."""

    src: int
    dst: int
    gain: ChannelGain
    intensity_budget: float
    residual_intensity: float
    slot_owner: list  # per wavelength: lightpath id or None
    slot_intensity: list  # per wavelength: reserved intensity

    def free_wavelengths(self) -> frozenset:
        return frozenset(w for w, owner in enumerate(self.slot_owner) if owner is None)


@dataclass(frozen=True)
class Lightpath:
    """An end-to-end optical channel: route, single wavelength, allocated intensity.

    ``hop_intensities`` holds the per-link intensity along ``path`` (one entry
    per hop); the same wavelength index is reserved on every hop.
    """

    lightpath_id: int
    flow_class: str
    src: int
    dst: int
    path: tuple
    wavelength: int
    hop_intensities: tuple
    capacity_bps: float

    def hops(self):
        return tuple(zip(self.path[:-1], self.path[1:]))


@dataclass(frozen=True)
class EdgeView:
    """Read-only availability of one link inside a topology snapshot."""

    residual_intensity: float
    free_wavelengths: frozenset


@dataclass(frozen=True)
class VirtualTopology:
    """Per-class snapshot of claimable resources over the physical topology."""

    flow_class: str
    nodes: tuple
    edges: dict  # (src, dst) -> EdgeView

    def neighbors(self, node: int) -> tuple:
        return tuple(sorted(dst for (src, dst) in self.edges if src == node))


class PhysicalTopology:
    """Full-mesh spine-leaf fabric with per-link wavelength and intensity state."""

    def __init__(self, leaf_count: int, spine_count: int, wavelengths_per_link: int,
                 gain: ChannelGain, intensity_budget: float):
        self.leaf_count = leaf_count
        self.spine_count = spine_count
        self.wavelengths_per_link = wavelengths_per_link
        self.links: dict = {}
        for leaf in range(leaf_count):
            for spine in range(leaf_count, leaf_count + spine_count):
                for src, dst in ((leaf, spine), (spine, leaf)):
                    self.links[(src, dst)] = Link(
                        src=src,
                        dst=dst,
                        gain=gain,
                        intensity_budget=intensity_budget,
                        residual_intensity=intensity_budget,
                        slot_owner=[None] * wavelengths_per_link,
                        slot_intensity=[0.0] * wavelengths_per_link,
                    )

    # -- structure ---------------------------------------------------------

    @property
    def nodes(self) -> tuple:
        return tuple(range(self.leaf_count + self.spine_count))

    def leaves(self) -> tuple:
        return tuple(range(self.leaf_count))

    def spines(self) -> tuple:
        return tuple(range(self.leaf_count, self.leaf_count + self.spine_count))

    def is_leaf(self, node: int) -> bool:
        return 0 <= node < self.leaf_count

    # -- resource mutation (single-writer) ---------------------------------

    def reserve(self, link_id: tuple, wavelength: int, intensity: float, owner: int) -> None:
        """Grant ``owner`` the wavelength slot and deduct the intensity, atomically."""
        link = self.links[link_id]
        if link.slot_owner[wavelength] is not None:
            raise WavelengthCollisionError(
                f"wavelength {wavelength} on link {link_id} already owned by "
                f"lightpath {link.slot_owner[wavelength]}"
            )
        if intensity > link.residual_intensity:
            raise IntensityBudgetError(
                f"link {link_id} has residual intensity {link.residual_intensity:g}, "
                f"cannot reserve {intensity:g}"
            )
        link.slot_owner[wavelength] = owner
        link.slot_intensity[wavelength] = intensity
        self._recompute_residual(link)

    def release(self, link_id: tuple, wavelength: int) -> None:
        """Return a reserved slot and its intensity to the link."""
        link = self.links[link_id]
        if link.slot_owner[wavelength] is None:
            raise WavelengthCollisionError(f"wavelength {wavelength} on link {link_id} is not reserved")
        link.slot_owner[wavelength] = None
        link.slot_intensity[wavelength] = 0.0
        self._recompute_residual(link)

    @staticmethod
    def _recompute_residual(link: Link) -> None:
        # derive from slot state so a reserve/release pair restores it exactly
        reserved = math.fsum(
            value for owner, value in zip(link.slot_owner, link.slot_intensity) if owner is not None
        )
        link.residual_intensity = link.intensity_budget - reserved

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "leaf_count": self.leaf_count,
            "spine_count": self.spine_count,
            "wavelengths_per_link": self.wavelengths_per_link,
            "links": [
                {
                    "src": link.src,
                    "dst": link.dst,
                    "gain": {
                        "detector_response": link.gain.detector_response,
                        "path_loss": link.gain.path_loss,
                        "turbulence": link.gain.turbulence,
                        "pointing": link.gain.pointing,
                    },
                    "intensity_budget": link.intensity_budget,
                    "residual_intensity": link.residual_intensity,
                    "slot_owner": link.slot_owner,
                    "slot_intensity": link.slot_intensity,
                }
                for link in (self.links[key] for key in sorted(self.links))
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhysicalTopology":
        doc = json.loads(text)
        topo = cls.__new__(cls)
        topo.leaf_count = doc["leaf_count"]
        topo.spine_count = doc["spine_count"]
        topo.wavelengths_per_link = doc["wavelengths_per_link"]
        topo.links = {}
        for entry in doc["links"]:
            gain = ChannelGain(**entry["gain"])
            topo.links[(entry["src"], entry["dst"])] = Link(
                src=entry["src"],
                dst=entry["dst"],
                gain=gain,
                intensity_budget=entry["intensity_budget"],
                residual_intensity=entry["residual_intensity"],
                slot_owner=[owner for owner in entry["slot_owner"]],
                slot_intensity=[value for value in entry["slot_intensity"]],
            )
        return topo


def build_spine_leaf(leaf_count: int, spine_leaf_ratio: float, wavelengths_per_link: int,
                     gain: ChannelGain = ChannelGain(),
                     intensity_budget: float = 100.0) -> PhysicalTopology:
    """Build the full-mesh fabric: N leaves, ratio*N spines, both link directions.

    Raises :class:`ConfigurationError` when the spine count is not a positive
    integer or fewer than two leaves are requested.
    """
    if leaf_count < 2:
        raise ConfigurationError(f"need at least 2 leaves, got {leaf_count}")
    if wavelengths_per_link < 1:
        raise ConfigurationError(f"need at least 1 wavelength per link, got {wavelengths_per_link}")
    spine_count = _spine_count(leaf_count, spine_leaf_ratio)
    return PhysicalTopology(leaf_count, spine_count, wavelengths_per_link, gain, intensity_budget)


def _spine_count(leaf_count: int, spine_leaf_ratio: float) -> int:
    exact = spine_leaf_ratio * leaf_count
    count = round(exact)
    if count < 1 or abs(exact - count) > 1e-9:
        raise ConfigurationError(
            f"spine/leaf ratio {spine_leaf_ratio!r} with {leaf_count} leaves "
            f"gives a non-integer spine count {exact!r}"
        )
    return count


def min_wavelengths(leaf_count: int, spine_leaf_ratio: float) -> int:
    """Least W so every rack pair can get separate mice and elephant lightpaths.

    This is ceil(2*(N-1) / (ratio*N)), evaluated in integer arithmetic.
    """
    spine_count = _spine_count(leaf_count, spine_leaf_ratio)
    return -(-2 * (leaf_count - 1) // spine_count)


def residual_view(topology: PhysicalTopology, flow_class: str) -> VirtualTopology:
    """Snapshot the resources the given class can still claim.

    Links with an exhausted intensity budget or no free wavelength cannot
    serve any positive demand and are excluded from the edge set.
    """
    edges = {}
    for link_id in sorted(topology.links):
        link = topology.links[link_id]
        free = link.free_wavelengths()
        if link.residual_intensity > 0 and free:
            edges[link_id] = EdgeView(
                residual_intensity=link.residual_intensity,
                free_wavelengths=free,
            )
    return VirtualTopology(flow_class=flow_class, nodes=topology.nodes, edges=edges)
