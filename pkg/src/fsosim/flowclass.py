"""Flow class labels shared by grooming, detection, traffic, and the engine."""

MICE = "mice"
ELEPHANT = "elephant"
UNKNOWN = "unknown"

FLOW_CLASSES = (MICE, ELEPHANT)
