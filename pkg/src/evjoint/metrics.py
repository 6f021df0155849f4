"""Flow and intensity evaluation metrics and output normalization."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from skimage.metrics import structural_similarity

from .events import EventSlice
from .warp import FlowField, splat_iwe, warp_events

OUTLIER_PX = 3.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class FlowMetrics:
    epe: float
    ae: float
    pct_out: float
    n_valid: int
    fwl: float | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ImageMetrics:
    mse: float
    ssim: float

    def as_dict(self) -> dict:
        return asdict(self)


def _dense(flow) -> np.ndarray:
    arr = flow.dense if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ValueError(f"flow must have shape (2, H, W), got {arr.shape}")
    return arr


def angular_error_deg(est: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-pixel angle between the space-time vectors (u, v, 1), in degrees."""
    a = np.concatenate([est, np.ones_like(est[:1])])
    b = np.concatenate([gt, np.ones_like(gt[:1])])
    cross = np.linalg.norm(np.cross(a, b, axis=0), axis=0)
    dot = (a * b).sum(axis=0)
    # atan2 stays exact at zero angle where arccos of a rounded cosine does not
    return np.degrees(np.arctan2(cross, dot))


def flow_metrics(F_est, F_gt, mask=None) -> FlowMetrics:
    """EPE, AE and outlier percentage over ``mask`` (all pixels if omitted)."""
    est, gt = _dense(F_est), _dense(F_gt)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch: estimate {est.shape[1:]} vs ground truth {gt.shape[1:]}")
    mask = np.ones(est.shape[1:], bool) if mask is None else np.asarray(mask, bool)
    if mask.shape != est.shape[1:]:
        raise ValueError("mask shape does not match the flow")
    if not mask.any():
        raise ValueError("empty evaluation mask")
    epe = np.hypot(*(est - gt))[mask]
    ae = angular_error_deg(est, gt)[mask]
    return FlowMetrics(float(epe.mean()), float(ae.mean()), float(100.0 * np.mean(epe > OUTLIER_PX)),
                       int(mask.sum()))


def fwl(slc: EventSlice, flow: FlowField, t_ref: float | None = None) -> float:
    """Variance of the motion-compensated IWE over that of the zero-flow IWE."""
    if len(slc) == 0:
        raise ValueError("flow warp loss needs a non-empty slice")
    t_ref = 0.5 * (slc.t_start + slc.t_end) if t_ref is None else t_ref
    H, W = slc.shape
    base = splat_iwe(warp_events(slc, FlowField.zeros(H, W, flow.stride), t_ref)).data
    var0 = float(base.var())
    if var0 <= 0:
        raise ValueError("zero-variance baseline image of events")
    if not np.any(flow.coarse):
        return 1.0
    return float(splat_iwe(warp_events(slc, flow, t_ref)).data.var()) / var0


def normalize_robust(L: np.ndarray, lo: float = 1.0, hi: float = 99.0) -> np.ndarray:
    """Map log intensity to [0, 1] through exp and 1%/99% percentile clamping."""
    L = np.asarray(L, dtype=np.float64)
    if not np.all(np.isfinite(L)):
        raise ValueError("log intensity must be finite")
    I = np.exp(L)
    m, M = np.percentile(I, [lo, hi])
    if M - m < 1e-9:
        return np.full(L.shape, 0.5)
    return np.clip((I - m) / (M - m), 0.0, 1.0)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Gaussian-window SSIM on unit dynamic range, averaged over the valid region."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    return float(structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=SSIM_SIGMA,
                                       use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2))


def image_metrics(I_est: np.ndarray, I_ref: np.ndarray) -> ImageMetrics:
    I_est = np.asarray(I_est, dtype=np.float64)
    I_ref = np.asarray(I_ref, dtype=np.float64)
    if I_est.shape != I_ref.shape:
        raise ValueError(f"shape mismatch: {I_est.shape} vs {I_ref.shape}")
    return ImageMetrics(float(np.mean((I_est - I_ref) ** 2)), ssim(I_est, I_ref))


def pearson(a: np.ndarray, b: np.ndarray, mask=None) -> float:
    """Pearson correlation of two fields over ``mask``; the gauge constant drops out."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if mask is not None:
        a, b = a[mask], b[mask]
    if a.size < 2:
        raise ValueError("need at least two samples for a correlation")
    return float(np.corrcoef(a.ravel(), b.ravel())[0, 1])
