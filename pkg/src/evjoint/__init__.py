"""Joint optical flow and log-intensity estimation from event camera data."""
from .events import EventSlice, FixedCount, FixedDuration, read_events, slice_events, write_events
from .losses import LossConfig, PairState, total_loss
from .metrics import flow_metrics, fwl, image_metrics, normalize_robust
from .simulator import SyntheticScene, intensity_at, render_pattern, simulate_events, translating_scene
from .solver import PairEstimate, SolverConfig, estimate_pair, estimate_sequence
from .warp import FlowField

__all__ = [
    "EventSlice",
    "FixedCount",
    "FixedDuration",
    "FlowField",
    "LossConfig",
    "PairEstimate",
    "PairState",
    "SolverConfig",
    "SyntheticScene",
    "estimate_pair",
    "estimate_sequence",
    "flow_metrics",
    "fwl",
    "image_metrics",
    "intensity_at",
    "normalize_robust",
    "read_events",
    "render_pattern",
    "simulate_events",
    "slice_events",
    "total_loss",
    "translating_scene",
    "write_events",
]
