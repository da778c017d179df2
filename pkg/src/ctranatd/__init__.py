"""CNN + Transformer anomaly-traffic detection for UAV flow-record windows."""

__version__ = "0.1.0"

WINDOW = 60
N_FEATURES = 71
