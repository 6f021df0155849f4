"""Loss terms for joint flow / log-intensity estimation, with analytic gradients.

Every term returns its value together with gradients w.r.t. the log-intensity
fields (dense, ``(H, W)``) and the flow parameters (coarse grid of the
:class:`~evjoint.warp.FlowField`). L1 terms use the sub-gradient sign(0) = 0.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .events import EventSlice
from .warp import (
    FlowField,
    backward_positions,
    bilinear_stencil,
    scatter,
    splat_iwe,
    time_factor,
    warp_events,
    warp_pair_positions,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (30.0, 1.0, 10.0, 0.001, 1.0)
TERMS = ("phe", "cmax", "tv_flow", "tv_intensity", "tc")
CMAX_MIN_MEAN_GRADIENT = 1e-9

LogIntensity = np.ndarray


class DegenerateIWEError(ValueError):
    """Image of warped events with (near) zero gradient magnitude."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossConfig:
    weights: tuple = DEFAULT_WEIGHTS
    contrast: float = 0.2
    iwe_kernel: str = "bilinear"
    stride: int = 16
    cmax_t_ref: str = "midpoint"  # midpoint | random | end

    def __post_init__(self):
        if len(self.weights) != 5 or any(w < 0 for w in self.weights):
            raise ValueError("need five non-negative weights")
        if not self.contrast > 0:
            raise ValueError("contrast threshold must be positive")
        if self.cmax_t_ref not in ("random", "midpoint", "end"):
            raise ValueError(f"unknown CMax reference policy {self.cmax_t_ref!r}")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))


# ---------------------------------------------------------------------------
# Finite-difference image gradient (forward differences, replicate boundary)


def forward_diff(img: np.ndarray):
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[..., :, :-1] = img[..., :, 1:] - img[..., :, :-1]
    gy[..., :-1, :] = img[..., 1:, :] - img[..., :-1, :]
    return gx, gy


def forward_diff_adjoint(sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    out = np.zeros_like(sx)
    out[..., :, 1:] += sx[..., :, :-1]
    out[..., :, :-1] -= sx[..., :, :-1]
    out[..., 1:, :] += sy[..., :-1, :]
    out[..., :-1, :] -= sy[..., :-1, :]
    return out


def _scatter_flow(slc: EventSlice, index, g: np.ndarray) -> np.ndarray:
    """Accumulate per-event ``(N, 2)`` flow gradients onto the events' pixels."""
    H, W = slc.shape
    pix = slc.y[index] * W + slc.x[index]
    return np.stack(
        [np.bincount(pix, weights=g[:, c], minlength=H * W).reshape(H, W) for c in range(2)]
    )


# ---------------------------------------------------------------------------
# Photometric error


class PhE(NamedTuple):
    value: float
    dL: np.ndarray
    dF: np.ndarray
    n_valid: int


def phe_loss(L, flow: FlowField, slc: EventSlice, pairs=None, contrast=0.2, t_ref=None) -> PhE:
    """Mean absolute event photometric error at ``t_ref`` (default: slice end).

    For each event paired with its predecessor at the same pixel, both are
    warped with the flow at that pixel and ``L`` is bilinearly sampled at the
    two positions; the residual is ``L(x'_k) - L(x'_{k-1}) - p_k C``. Pairs
    with either position outside the image are dropped from the mean.
    """
    L = np.asarray(L, dtype=np.float64)
    H, W = L.shape
    pairs = slc.pairs if pairs is None else pairs
    t_ref = slc.t_end if t_ref is None else t_ref
    zero = PhE(0.0, np.zeros_like(L), np.zeros_like(flow.coarse), 0)
    if len(pairs) == 0:
        return zero
    pos_k, pos_km1 = warp_pair_positions(pairs, slc, flow, t_ref)
    st_k = bilinear_stencil(pos_k, H, W)
    st_m = bilinear_stencil(pos_km1, H, W)
    valid = st_k.valid & st_m.valid
    n = int(valid.sum())
    if n == 0:
        return zero
    Lf = L.ravel()
    vk, vm = Lf[st_k.index], Lf[st_m.index]
    eps = np.sum(st_k.weight * vk, 1) - np.sum(st_m.weight * vm, 1) - slc.p[pairs.index] * contrast
    value = float(np.sum(np.abs(eps[valid])) / n)

    s = np.where(valid, np.sign(eps), 0.0) / n
    dL = (scatter(st_k, s, H * W) - scatter(st_m, s, H * W)).reshape(H, W)

    grad_k = np.stack([np.sum(st_k.dwdx * vk, 1), np.sum(st_k.dwdy * vk, 1)], axis=1)
    grad_m = np.stack([np.sum(st_m.dwdx * vm, 1), np.sum(st_m.dwdy * vm, 1)], axis=1)
    a = time_factor(slc, slc.t[pairs.index], t_ref)
    b = a + pairs.dt / slc.duration
    g = s[:, None] * (a[:, None] * grad_k - b[:, None] * grad_m)
    dF = flow.pull_back(_scatter_flow(slc, pairs.index, g))
    return PhE(value, dL, dF, n)


# ---------------------------------------------------------------------------
# Contrast maximization


class CMax(NamedTuple):
    value: float
    dF: np.ndarray
    iwe: np.ndarray


def cmax_loss(flow: FlowField, slc: EventSlice, t_ref: float, kernel="bilinear", grad=True) -> CMax:
    """Inverse mean L1 magnitude of the IWE gradient.

    Raises :class:`DegenerateIWEError` when the IWE is (nearly) flat, e.g. for
    an empty slice. Gradients need the bilinear kernel.
    """
    if grad and kernel != "bilinear":
        raise ValueError("CMax gradients require the bilinear IWE kernel")
    H, W = slc.shape
    warped = warp_events(slc, flow, t_ref)
    iwe = splat_iwe(warped, kernel).data
    gx, gy = forward_diff(iwe)
    m = (np.abs(gx).sum() + np.abs(gy).sum()) / (H * W)
    if not m > CMAX_MIN_MEAN_GRADIENT:
        raise DegenerateIWEError(f"degenerate IWE (mean gradient magnitude {m:.3g})")
    value = 1.0 / m
    if not grad:
        return CMax(float(value), np.zeros_like(flow.coarse), iwe)

    G = -(value**2) / (H * W) * forward_diff_adjoint(np.sign(gx), np.sign(gy))
    st = bilinear_stencil(warped.positions, H, W, clip_corners=True)
    Gc = G.ravel()[st.index]
    dpos = np.stack([np.sum(Gc * st.dwdx, 1), np.sum(Gc * st.dwdy, 1)], axis=1)
    a = time_factor(slc, slc.t, t_ref)
    dF = flow.pull_back(_scatter_flow(slc, slice(None), a[:, None] * dpos))
    return CMax(float(value), dF, iwe)


# ---------------------------------------------------------------------------
# Total variation


def tv_loss(field_: np.ndarray):
    """Anisotropic TV, ``sum |grad|_1 / (H W)``, for ``(H, W)`` or ``(C, H, W)`` arrays."""
    f = np.asarray(field_, dtype=np.float64)
    H, W = f.shape[-2:]
    if H < 2 or W < 2:
        raise ValueError("TV needs at least a 2x2 field")
    gx, gy = forward_diff(f)
    value = (np.abs(gx).sum() + np.abs(gy).sum()) / (H * W)
    grad = forward_diff_adjoint(np.sign(gx), np.sign(gy)) / (H * W)
    return float(value), grad


# ---------------------------------------------------------------------------
# Temporal consistency


class TC(NamedTuple):
    value: float
    dL_i: np.ndarray
    dL_ip1: np.ndarray
    dF: np.ndarray
    n_valid: int


def tc_loss(L_i, L_ip1, flow: FlowField) -> TC:
    """Mean ``|L_{i+1}(x) - L_i(x - F(x))|`` over pixels whose source lies in the image."""
    L_i = np.asarray(L_i, dtype=np.float64)
    L_ip1 = np.asarray(L_ip1, dtype=np.float64)
    if L_i.shape != L_ip1.shape or L_i.shape != flow.shape:
        raise ValueError("intensity and flow shapes differ")
    H, W = L_i.shape
    st = bilinear_stencil(backward_positions(flow), H, W)
    n = int(st.valid.sum())
    if n == 0:
        z = np.zeros_like(L_i)
        return TC(0.0, z, z.copy(), np.zeros_like(flow.coarse), 0)
    vals = L_i.ravel()[st.index]
    warped = np.sum(st.weight * vals, 1)
    r = L_ip1.ravel() - warped
    value = float(np.sum(np.abs(r[st.valid])) / n)
    s = np.where(st.valid, np.sign(r), 0.0) / n
    dL_ip1 = s.reshape(H, W)
    dL_i = -scatter(st, s, H * W).reshape(H, W)
    dF = np.stack(
        [(s * np.sum(st.dwdx * vals, 1)).reshape(H, W), (s * np.sum(st.dwdy * vals, 1)).reshape(H, W)]
    )
    return TC(value, dL_i, dL_ip1, flow.pull_back(dF), n)


# ---------------------------------------------------------------------------
# Total


@dataclass
class PairState:
    F_i: FlowField
    L_i: np.ndarray
    F_ip1: FlowField
    L_ip1: np.ndarray


@dataclass
class LossReport:
    terms: dict
    total: float
    dF_i: np.ndarray = field(repr=False)
    dF_ip1: np.ndarray = field(repr=False)
    dL_i: np.ndarray = field(repr=False)
    dL_ip1: np.ndarray = field(repr=False)
    per_sample: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    # weighted flow gradient of each term, one dict per sample
    dF_terms: list = field(default_factory=lambda: [{}, {}], repr=False)

    def summary(self) -> dict:
        return {"total": self.total, **self.terms, "flags": list(self.flags)}


def cmax_reference_time(slc: EventSlice, policy: str, rng) -> float:
    if policy == "random":
        return float(slc.t_start + rng.uniform() * slc.duration)
    if policy == "midpoint":
        return 0.5 * (slc.t_start + slc.t_end)
    return slc.t_end


def _finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteGradientError(f"non-finite gradient from {name} term")


def total_loss(state: PairState, slices, config: LossConfig, rng=None) -> LossReport:
    """Weighted sum of all terms over a pair of consecutive slices.

    PhE, CMax and both TVs are evaluated per sample and summed; TC links the
    two samples through the second sample's flow. ``rng`` draws the random
    CMax reference time (one per sample per call).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lam = dict(zip(TERMS, config.weights))
    terms = dict.fromkeys(TERMS, 0.0)
    flags = []
    per_sample = []
    dF = [np.zeros_like(state.F_i.coarse), np.zeros_like(state.F_ip1.coarse)]
    dL = [np.zeros_like(state.L_i, dtype=np.float64), np.zeros_like(state.L_ip1, dtype=np.float64)]
    dF_terms = [{}, {}]

    for j, (slc, F, L) in enumerate(zip(slices, (state.F_i, state.F_ip1), (state.L_i, state.L_ip1))):
        sample = {}
        t_cmax = cmax_reference_time(slc, config.cmax_t_ref, rng)
        if lam["phe"] > 0:
            phe = phe_loss(L, F, slc, contrast=config.contrast)
            _finite("phe", phe.dL, phe.dF)
            if phe.n_valid == 0:
                flags.append(f"phe[{j}]: no valid pairs")
            sample["phe"] = phe.value
            dL[j] += lam["phe"] * phe.dL
            dF[j] += lam["phe"] * phe.dF
            dF_terms[j]["phe"] = lam["phe"] * phe.dF
        if lam["cmax"] > 0:
            try:
                cm = cmax_loss(F, slc, t_cmax, config.iwe_kernel)
            except DegenerateIWEError as exc:
                flags.append(f"cmax[{j}]: {exc}")
                log.debug("cmax[%d] skipped: %s", j, exc)
            else:
                _finite("cmax", cm.dF)
                sample["cmax"] = cm.value
                dF[j] += lam["cmax"] * cm.dF
                dF_terms[j]["cmax"] = lam["cmax"] * cm.dF
        if lam["tv_flow"] > 0:
            v, g = tv_loss(F.dense)
            sample["tv_flow"] = v
            dF_terms[j]["tv_flow"] = lam["tv_flow"] * F.pull_back(g)
            dF[j] += dF_terms[j]["tv_flow"]
        if lam["tv_intensity"] > 0:
            v, g = tv_loss(L)
            sample["tv_intensity"] = v
            dL[j] += lam["tv_intensity"] * g
        for k, v in sample.items():
            terms[k] += v
        per_sample.append(sample)

    if lam["tc"] > 0:
        tc = tc_loss(state.L_i, state.L_ip1, state.F_ip1)
        _finite("tc", tc.dL_i, tc.dL_ip1, tc.dF)
        if tc.n_valid == 0:
            flags.append("tc: empty validity mask")
        terms["tc"] = tc.value
        dL[0] += lam["tc"] * tc.dL_i
        dL[1] += lam["tc"] * tc.dL_ip1
        dF[1] += lam["tc"] * tc.dF
        dF_terms[1]["tc"] = lam["tc"] * tc.dF

    total = float(sum(lam[k] * terms[k] for k in TERMS))
    return LossReport(terms, total, dF[0], dF[1], dL[0], dL[1], per_sample, flags, dF_terms)
