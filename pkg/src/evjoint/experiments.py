"""Synthetic two-window benchmark shared by the experiment scripts and tests.

A pattern translates by ``2 * flow`` over two consecutive windows of
``window`` seconds each, so the per-window ground-truth flow is ``flow``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import EventSlice, FixedDuration, slice_events
from .losses import LossConfig
from .metrics import flow_metrics, pearson
from .simulator import SyntheticScene, intensity_at, render_pattern, simulate_events, translating_scene
from .solver import PairEstimate, SolverConfig, estimate_pair
from .warp import FlowField


@dataclass(frozen=True, eq=False)
class ScenePair:
    scene: SyntheticScene
    slice_i: EventSlice
    slice_ip1: EventSlice
    flow_gt: FlowField  # per-window displacement
    L_i: np.ndarray  # ground-truth log intensity at the end of window i
    L_ip1: np.ndarray

    @property
    def contrast(self) -> float:
        return self.scene.contrast


def two_window_scene(pattern: str = "checker:8", contrast: float = 0.2, flow=(3.0, 1.0), size=(64, 64),
                     window: float = 0.1, seed: int = 0) -> ScenePair:
    """Simulate two consecutive windows of a translating pattern."""
    H, W = size
    L0 = render_pattern(pattern, H, W, seed=seed)
    scene = translating_scene(L0, (2 * flow[0], 2 * flow[1]), 2 * window, contrast, seed=seed)
    events = simulate_events(scene)
    s_i, s_ip1 = slice_events(events, FixedDuration(window))
    return ScenePair(scene, s_i, s_ip1, FlowField.constant(flow[0], flow[1], H, W),
                     intensity_at(scene, window), intensity_at(scene, 2 * window))


def evaluate_pair(pair: ScenePair, est: PairEstimate) -> dict:
    """Flow errors over all pixels and intensity correlation on pixels with events,
    each averaged over the two windows."""
    out = {"epe": [], "ae": [], "corr": []}
    for F, L, slc, L_gt in ((est.F_i, est.L_i, pair.slice_i, pair.L_i),
                            (est.F_ip1, est.L_ip1, pair.slice_ip1, pair.L_ip1)):
        fm = flow_metrics(F, pair.flow_gt)
        out["epe"].append(fm.epe)
        out["ae"].append(fm.ae)
        out["corr"].append(pearson(L, L_gt, slc.event_count_image() > 0))
    return {k: float(np.mean(v)) for k, v in out.items()} | {f"{k}_windows": v for k, v in out.items()}


def run_pair(pair: ScenePair, weights=None, solver_config: SolverConfig | None = None) -> tuple[PairEstimate, dict]:
    """Solve a scene pair with matched contrast and return the estimate and its metrics."""
    loss_config = LossConfig(contrast=pair.contrast) if weights is None else \
        LossConfig(weights=weights, contrast=pair.contrast)
    est = estimate_pair(pair.slice_i, pair.slice_ip1, loss_config, solver_config or SolverConfig())
    return est, evaluate_pair(pair, est)
