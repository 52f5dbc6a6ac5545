"""IM-DD channel capacity model and light-intensity accounting for WDM-FSO links.

Each wavelength is an intensity-modulation direct-detection channel whose
capacity grows with the light intensity allocated to it; a transmitter may
spread at most a fixed intensity budget over its wavelengths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class ChannelGain:
    """Composite optical gain between one transmitter/receiver pair.

    The gain folds the detector response and the (block-constant) path-loss,
    turbulence, and pointing factors into a single multiplier.  All factors
    must be finite and strictly positive.
    """

    detector_response: float = 1.0
    path_loss: float = 1.0
    turbulence: float = 1.0
    pointing: float = 1.0

    def __post_init__(self):
        for name in ("detector_response", "path_loss", "turbulence", "pointing"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")

    @property
    def composite(self) -> float:
        """Product of all gain factors."""
        return self.detector_response * self.path_loss * self.turbulence * self.pointing


@dataclass(frozen=True)
class OpticalParams:
    """Per-wavelength bandwidth, per-transmitter intensity budget, and channel count."""

    bandwidth_hz: float
    intensity_budget: float
    wavelengths_per_link: int

    def __post_init__(self):
        if not (math.isfinite(self.bandwidth_hz) and self.bandwidth_hz > 0):
            raise ValueError(f"bandwidth_hz must be finite and > 0, got {self.bandwidth_hz!r}")
        if not (math.isfinite(self.intensity_budget) and self.intensity_budget > 0):
            raise ValueError(f"intensity_budget must be finite and > 0, got {self.intensity_budget!r}")
        if self.wavelengths_per_link < 1:
            raise ValueError(f"wavelengths_per_link must be >= 1, got {self.wavelengths_per_link!r}")


def wavelength_capacity(gain: ChannelGain, intensity: float, bandwidth_hz: float) -> float:
    """Capacity in bit/s of a single wavelength driven at the given intensity.

    Uses the IM-DD lower-bound form B/2 * log2(1 + e*h^2*E^2 / (2*pi)) with the
    logarithm taken base 2 so the result is in bits per second.
    """
    if not (math.isfinite(intensity) and intensity >= 0):
        raise ValueError(f"intensity must be finite and >= 0, got {intensity!r}")
    if not (math.isfinite(bandwidth_hz) and bandwidth_hz > 0):
        raise ValueError(f"bandwidth_hz must be finite and > 0, got {bandwidth_hz!r}")
    h = gain.composite
    argument = math.e * h * h * intensity * intensity / math.tau
    return bandwidth_hz * 0.5 * math.log1p(argument) / _LN2


def intensity_for_capacity(gain: ChannelGain, target_bps: float, bandwidth_hz: float) -> float:
    """Light intensity required for one wavelength to carry ``target_bps``.

    Exact inverse of :func:`wavelength_capacity`; the round trip reproduces the
    target to within 1e-9 relative error.
    """
    if not (math.isfinite(target_bps) and target_bps >= 0):
        raise ValueError(f"target_bps must be finite and >= 0, got {target_bps!r}")
    if not (math.isfinite(bandwidth_hz) and bandwidth_hz > 0):
        raise ValueError(f"bandwidth_hz must be finite and > 0, got {bandwidth_hz!r}")
    h = gain.composite
    # expm1 keeps precision for targets far below the wavelength bandwidth
    growth = math.expm1(2.0 * target_bps / bandwidth_hz * _LN2)
    return math.sqrt(growth * math.tau / (math.e * h * h))


def intensity_budget_ok(allocations: Iterable[float], budget: float) -> bool:
    """True iff the summed per-wavelength intensities fit the budget (inclusive)."""
    values = list(allocations)
    for value in values:
        if not (math.isfinite(value) and value >= 0):
            raise ValueError(f"allocations must be finite and >= 0, got {value!r}")
    return math.fsum(values) <= budget
