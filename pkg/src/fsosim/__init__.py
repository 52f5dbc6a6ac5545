"""Flow-level simulator for WDM-FSO leaf-spine data center fabrics.

Subsystems: IM-DD optics (capacity/intensity), spine-leaf topology state,
per-class lightpath provisioning, three-step flow grooming, TCP-ACK based
elephant-flow detection, synthetic traffic generation, and the fluid
discrete-event engine tying them together behind the ``fsosim`` CLI.
"""

__version__ = "0.1.0"

from .flowclass import ELEPHANT, MICE, UNKNOWN  # noqa: F401
