"""Direct optimization of flow and log-intensity for pairs of event slices."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .events import EventSlice
from .losses import LossConfig, NonFiniteGradientError, PairState, total_loss, tv_loss
from .warp import FlowField, upsample_coarse_flow, warp_image_backward

__all__ = [
    "AdamState",
    "InsufficientDataError",
    "PairEstimate",
    "SolverConfig",
    "adam_step",
    "estimate_pair",
    "estimate_sequence",
    "upsample_coarse_flow",
]

log = logging.getLogger(__name__)


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 800
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_at: float = 0.75  # fraction of the budget
    decay_factor: float = 0.1
    flow_lr_scale: float = 2.0
    # continuation: extra intensity-TV weight, itv_boost * contrast, fading
    # linearly to 0 at boost_until * iterations; keeps L from overfitting an
    # early, wrong flow
    itv_boost: float = 10.0
    boost_until: float = 0.75
    seed: int = 0
    warm_start: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("step size must be positive")

    def boost_at(self, it: int, contrast: float = 1.0) -> float:
        end = self.boost_until * self.iterations
        return self.itv_boost * contrast * max(0.0, 1.0 - it / end) if end > 0 else 0.0

    def lr_at(self, it: int) -> float:
        return self.lr * (self.decay_factor if it >= self.decay_at * self.iterations else 1.0)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999,
              eps=1e-8, lr_scale=None):
    """One bias-corrected Adam update (no weight decay).

    ``params`` and ``grads`` are dicts of equally shaped arrays; returns new
    dicts and a new state, leaving the inputs untouched.
    """
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {k!r}")
    step = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1 - beta1) * g
        v = beta2 * state.v[k] + (1 - beta2) * g * g
        mhat = m / (1 - beta1**step)
        vhat = v / (1 - beta2**step)
        rate = lr * (lr_scale.get(k, 1.0) if lr_scale else 1.0)
        new_p[k] = p - rate * mhat / (np.sqrt(vhat) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, step)


# ---------------------------------------------------------------------------
# Pair estimation


@dataclass
class PairEstimate:
    F_i: FlowField
    F_ip1: FlowField
    L_i: np.ndarray
    L_ip1: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.trace[-1]["total"]


def _initial_state(slc: EventSlice, stride: int) -> PairState:
    H, W = slc.shape
    return PairState(FlowField.zeros(H, W, stride), np.zeros((H, W)),
                     FlowField.zeros(H, W, stride), np.zeros((H, W)))


def estimate_pair(slice_i: EventSlice, slice_ip1: EventSlice, loss_config: LossConfig | None = None,
                  solver_config: SolverConfig | None = None, init: PairState | None = None) -> PairEstimate:
    """Minimize the total loss over (F_i, L_i, F_ip1, L_ip1) with Adam.

    Starts from zero flow and constant intensity unless ``init`` is given.
    The returned intensities are shifted to zero mean.
    """
    loss_config = loss_config or LossConfig()
    solver_config = solver_config or SolverConfig()
    if slice_i.shape != slice_ip1.shape:
        raise ValueError("slices have different sensor sizes")
    if len(slice_i) == 0 and len(slice_ip1) == 0:
        raise InsufficientDataError("insufficient data: both slices are empty")

    state = init or _initial_state(slice_i, loss_config.stride)
    rng = np.random.default_rng(solver_config.seed)
    params = {
        "F_i": state.F_i.coarse.copy(), "L_i": np.array(state.L_i, dtype=np.float64),
        "F_ip1": state.F_ip1.coarse.copy(), "L_ip1": np.array(state.L_ip1, dtype=np.float64),
    }
    adam = AdamState.zeros_like(params)
    scale = {"F_i": solver_config.flow_lr_scale, "F_ip1": solver_config.flow_lr_scale}
    F_i, F_ip1 = state.F_i, state.F_ip1
    slices = (slice_i, slice_ip1)
    trace = []
    for it in range(solver_config.iterations):
        cur = PairState(F_i, params["L_i"], F_ip1, params["L_ip1"])
        rep = total_loss(cur, slices, loss_config, rng)
        trace.append(rep.summary())
        grads = {"F_i": rep.dF_i, "L_i": rep.dL_i, "F_ip1": rep.dF_ip1, "L_ip1": rep.dL_ip1}
        boost = solver_config.boost_at(it, loss_config.contrast)
        if boost > 0:
            grads["L_i"] = grads["L_i"] + boost * tv_loss(params["L_i"])[1]
            grads["L_ip1"] = grads["L_ip1"] + boost * tv_loss(params["L_ip1"])[1]
        params, adam = adam_step(params, grads, adam, solver_config.lr_at(it), solver_config.beta1,
                                 solver_config.beta2, solver_config.eps, scale)
        F_i = F_i.with_coarse(params["F_i"])
        F_ip1 = F_ip1.with_coarse(params["F_ip1"])

    L_i = params["L_i"] - params["L_i"].mean()
    L_ip1 = params["L_ip1"] - params["L_ip1"].mean()
    return PairEstimate(F_i, F_ip1, L_i, L_ip1, trace)


def _warm_state(prev: PairEstimate) -> PairState:
    # carry the later sample forward: the new first sample is the old second
    # one, the new second sample starts from its intensity advected by the flow
    L_adv, mask = warp_image_backward(prev.L_ip1, prev.F_ip1)
    L_next = np.where(mask, L_adv, prev.L_ip1)
    return PairState(prev.F_ip1, prev.L_ip1.copy(), prev.F_ip1, L_next)


def estimate_sequence(slices, loss_config: LossConfig | None = None,
                      solver_config: SolverConfig | None = None) -> list[PairEstimate]:
    """Estimate consecutive pairs (0, 1), (1, 2), ... of a slice sequence."""
    slices = list(slices)
    if len(slices) < 2:
        raise ValueError("need at least two slices")
    solver_config = solver_config or SolverConfig()
    out = []
    for k in range(len(slices) - 1):
        init = _warm_state(out[-1]) if solver_config.warm_start and out else None
        try:
            out.append(estimate_pair(slices[k], slices[k + 1], loss_config, solver_config, init))
        except ValueError as exc:
            raise type(exc)(f"pair ({k}, {k + 1}): {exc}") from exc
    return out
