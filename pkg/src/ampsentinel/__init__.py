"""Detect UDP amplification attacks in sampled flow records and analyse them."""

__version__ = "0.1.0"

from .model import REGISTRY, AmplificationProtocol, DetectionConfig, FlowRecord, load_config  # noqa: E402
from .ingest import FlowTable, parse_flows, read_flows  # noqa: E402
from .detector import AttackEvent, detect  # noqa: E402

__all__ = [
    "REGISTRY", "AmplificationProtocol", "DetectionConfig", "FlowRecord", "load_config",
    "FlowTable", "parse_flows", "read_flows", "AttackEvent", "detect", "__version__",
]
