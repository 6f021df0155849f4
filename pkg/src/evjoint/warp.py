"""Flow fields, event warping, bilinear sampling/splatting and image warping.

Conventions: images are ``(H, W)`` arrays indexed ``[y, x]``; positions are
``(N, 2)`` arrays of ``(x, y)``; dense flow is ``(2, H, W)`` with channel 0
the horizontal displacement. Flow is displacement over the owning slice's
duration, so an event at time ``t`` moves by ``(t_ref - t) / duration * F``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .events import EventSlice


# ---------------------------------------------------------------------------
# Flow parameterization


@lru_cache(maxsize=64)
def interp_matrix(n_dense: int, n_coarse: int, stride: int) -> np.ndarray:
    """Linear interpolation weights from coarse cell centers to dense pixels.

    Coarse cell ``j`` is centered on dense coordinate ``(j + 0.5) * s - 0.5``;
    dense pixels outside the outermost centers take the edge value.
    """
    pos = (np.arange(n_dense) + 0.5) / stride - 0.5
    pos = np.clip(pos, 0.0, n_coarse - 1)
    j0 = np.minimum(np.floor(pos).astype(np.int64), max(n_coarse - 2, 0))
    f = pos - j0
    M = np.zeros((n_dense, n_coarse))
    rows = np.arange(n_dense)
    if n_coarse == 1:
        M[:, 0] = 1.0
    else:
        M[rows, j0] = 1.0 - f
        M[rows, j0 + 1] += f
    M.setflags(write=False)
    return M


def coarse_shape(height: int, width: int, stride: int) -> tuple[int, int]:
    return -(-height // stride), -(-width // stride)


def upsample_coarse_flow(coarse: np.ndarray, stride: int, height: int, width: int) -> np.ndarray:
    """Bilinearly upsample a ``(C, h, w)`` coarse grid to ``(C, H, W)``."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    coarse = np.asarray(coarse, dtype=np.float64)
    h, w = coarse.shape[-2:]
    Ry = interp_matrix(height, h, stride)
    Rx = interp_matrix(width, w, stride)
    return Ry @ coarse @ Rx.T


def coarse_gradient(dense_grad: np.ndarray, stride: int, coarse_hw: tuple[int, int]) -> np.ndarray:
    """Pull a dense ``(C, H, W)`` gradient back onto the coarse grid (adjoint of upsampling)."""
    H, W = dense_grad.shape[-2:]
    Ry = interp_matrix(H, coarse_hw[0], stride)
    Rx = interp_matrix(W, coarse_hw[1], stride)
    return Ry.T @ dense_grad @ Rx


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense flow defined as the bilinear upsampling of a coarse parameter grid."""

    coarse: np.ndarray
    stride: int
    height: int
    width: int

    def __post_init__(self):
        coarse = np.array(self.coarse, dtype=np.float64)
        if coarse.shape != (2, *coarse_shape(self.height, self.width, self.stride)):
            raise ValueError(
                f"coarse grid {coarse.shape} does not match {self.height}x{self.width} "
                f"at stride {self.stride}"
            )
        if not np.all(np.isfinite(coarse)):
            raise ValueError("flow parameters must be finite")
        coarse.setflags(write=False)
        dense = upsample_coarse_flow(coarse, self.stride, self.height, self.width)
        dense.setflags(write=False)
        object.__setattr__(self, "coarse", coarse)
        object.__setattr__(self, "dense", dense)

    @classmethod
    def zeros(cls, height, width, stride=16):
        return cls(np.zeros((2, *coarse_shape(height, width, stride))), stride, height, width)

    @classmethod
    def constant(cls, u, v, height, width, stride=16):
        h, w = coarse_shape(height, width, stride)
        coarse = np.stack([np.full((h, w), float(u)), np.full((h, w), float(v))])
        return cls(coarse, stride, height, width)

    @classmethod
    def from_dense(cls, dense):
        """Wrap an arbitrary dense ``(2, H, W)`` field (stride 1, identity upsampling)."""
        dense = np.asarray(dense, dtype=np.float64)
        return cls(dense, 1, dense.shape[1], dense.shape[2])

    @property
    def u(self) -> np.ndarray:
        return self.dense[0]

    @property
    def v(self) -> np.ndarray:
        return self.dense[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    def with_coarse(self, coarse) -> "FlowField":
        return FlowField(coarse, self.stride, self.height, self.width)

    def scaled(self, factor: float) -> "FlowField":
        return self.with_coarse(self.coarse * factor)

    def pull_back(self, dense_grad: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. ``coarse`` given a gradient w.r.t. ``dense``."""
        return coarse_gradient(dense_grad, self.stride, self.coarse.shape[1:])


# ---------------------------------------------------------------------------
# Bilinear stencil


@dataclass(frozen=True)
class Stencil:
    """Four-neighbour bilinear stencil for a batch of positions.

    ``index`` holds flat pixel indices ``(N, 4)``, ``weight`` the blend
    weights, ``dwdx``/``dwdy`` their derivatives w.r.t. the sample position.
    Rows with ``valid == False`` have zero weights.
    """

    index: np.ndarray
    weight: np.ndarray
    dwdx: np.ndarray
    dwdy: np.ndarray
    valid: np.ndarray


def in_bounds(pos: np.ndarray, height: int, width: int) -> np.ndarray:
    return (
        (pos[:, 0] >= 0) & (pos[:, 0] <= width - 1) & (pos[:, 1] >= 0) & (pos[:, 1] <= height - 1)
    )


def bilinear_stencil(pos: np.ndarray, height: int, width: int, clip_corners: bool = False) -> Stencil:
    """Stencil of ``pos`` on an ``height`` x ``width`` grid.

    By default a position is valid only if all four neighbours exist. With
    ``clip_corners`` every position is kept and neighbours falling outside
    the grid are dropped individually (used for splatting).
    """
    if not clip_corners and (width < 2 or height < 2):
        raise ValueError("bilinear sampling needs at least a 2x2 grid")
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 2)
    x, y = pos[:, 0], pos[:, 1]
    finite = np.isfinite(x) & np.isfinite(y)
    xs = np.where(finite, x, -10.0)
    ys = np.where(finite, y, -10.0)
    if clip_corners:
        x0 = np.floor(xs)
        y0 = np.floor(ys)
    else:
        x0 = np.clip(np.floor(xs), 0, max(width - 2, 0))
        y0 = np.clip(np.floor(ys), 0, max(height - 2, 0))
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    cx = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    cy = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    wx = np.stack([1 - fx, fx, 1 - fx, fx], axis=1)
    wy = np.stack([1 - fy, 1 - fy, fy, fy], axis=1)
    sx = np.array([-1.0, 1.0, -1.0, 1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    weight = wx * wy
    dwdx = sx * wy
    dwdy = sy * wx

    if clip_corners:
        corner_ok = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height) & finite[:, None]
        valid = corner_ok.any(axis=1)
    else:
        valid = finite & in_bounds(np.stack([xs, ys], axis=1), height, width)
        corner_ok = np.repeat(valid[:, None], 4, axis=1)
    index = np.where(corner_ok, np.clip(cy, 0, height - 1) * width + np.clip(cx, 0, width - 1), 0)
    weight = np.where(corner_ok, weight, 0.0)
    dwdx = np.where(corner_ok, dwdx, 0.0)
    dwdy = np.where(corner_ok, dwdy, 0.0)
    return Stencil(index, weight, dwdx, dwdy, valid)


def scatter(stencil: Stencil, values: np.ndarray, size: int, weights=None) -> np.ndarray:
    """Accumulate ``values[n] * weights[n, c]`` into a flat image (deterministic order)."""
    w = stencil.weight if weights is None else weights
    return np.bincount(
        stencil.index.ravel(), weights=(w * values[:, None]).ravel(), minlength=size
    )


def sample_bilinear(field: np.ndarray, pos):
    """Bilinear sample of ``field`` at ``pos``.

    Returns ``(value, grad, valid)``. ``grad`` is the analytic ``(d/dx, d/dy)``
    of the blend; both are 0 and ``valid`` is False for positions outside
    ``[0, W-1] x [0, H-1]``. A single ``(x, y)`` position returns scalars.
    """
    field = np.asarray(field, dtype=np.float64)
    single = np.ndim(pos) == 1
    pos = np.atleast_2d(np.asarray(pos, dtype=np.float64))
    H, W = field.shape
    st = bilinear_stencil(pos, H, W)
    f = field.ravel()[st.index]
    value = np.sum(st.weight * f, axis=1)
    grad = np.stack([np.sum(st.dwdx * f, axis=1), np.sum(st.dwdy * f, axis=1)], axis=1)
    if single:
        return float(value[0]), grad[0], bool(st.valid[0])
    return value, grad, st.valid


def sample_clamped(field: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """Bilinear sample with replicate padding (positions clamped onto the grid)."""
    H, W = field.shape
    pos = np.asarray(pos, dtype=np.float64)
    p = np.stack([np.clip(pos[:, 0], 0, W - 1), np.clip(pos[:, 1], 0, H - 1)], axis=1)
    value, _, _ = sample_bilinear(field, p)
    return value


# ---------------------------------------------------------------------------
# Event warping


@dataclass(frozen=True, eq=False)
class WarpedEvents:
    positions: np.ndarray
    polarities: np.ndarray
    t_ref: float
    height: int
    width: int

    def __len__(self):
        return len(self.positions)


def time_factor(slc: EventSlice, t, t_ref: float) -> np.ndarray:
    """``(t_ref - t) / duration``: the fraction of the flow an event travels."""
    return (t_ref - np.asarray(t, dtype=np.float64)) / slc.duration


def flow_at_events(flow: FlowField, slc: EventSlice, index=None) -> np.ndarray:
    """Flow sampled at the events' own integer pixels, shape ``(N, 2)``."""
    x, y = slc.x, slc.y
    if index is not None:
        x, y = x[index], y[index]
    return np.stack([flow.dense[0][y, x], flow.dense[1][y, x]], axis=1)


def _check(slc: EventSlice, flow: FlowField, t_ref: float):
    if flow.shape != slc.shape:
        raise ValueError(f"flow {flow.shape} does not match slice {slc.shape}")
    if not slc.t_start <= t_ref <= slc.t_end:
        raise ValueError(f"t_ref {t_ref} outside [{slc.t_start}, {slc.t_end}]")


def warp_events(slc: EventSlice, flow: FlowField, t_ref: float) -> WarpedEvents:
    """Transport every event along the flow at its pixel to ``t_ref``."""
    _check(slc, flow, t_ref)
    a = time_factor(slc, slc.t, t_ref)
    xy = np.stack([slc.x, slc.y], axis=1).astype(np.float64)
    pos = xy + a[:, None] * flow_at_events(flow, slc)
    return WarpedEvents(pos, slc.p.copy(), float(t_ref), slc.height, slc.width)


def warp_pair_positions(pairs, slc: EventSlice, flow: FlowField, t_ref: float):
    """Warped positions of paired events and of their predecessors.

    Both use the flow at the event's pixel, so
    ``pos_prev - pos_k == dt / duration * F(x_k)``. ``pairs`` may be a single
    :class:`PredecessorPair` or the column form returned by
    :func:`predecessor_pairs`.
    """
    _check(slc, flow, t_ref)
    single = np.ndim(pairs.dt) == 0
    index = np.atleast_1d(np.asarray(pairs[0], dtype=np.int64))
    dt = np.atleast_1d(np.asarray(pairs.dt, dtype=np.float64))
    Fk = flow_at_events(flow, slc, index)
    xk = np.stack([slc.x[index], slc.y[index]], axis=1).astype(np.float64)
    a = time_factor(slc, slc.t[index], t_ref)
    pos_k = xk + a[:, None] * Fk
    pos_km1 = pos_k + (dt / slc.duration)[:, None] * Fk
    if single:
        return pos_k[0], pos_km1[0]
    return pos_k, pos_km1


# ---------------------------------------------------------------------------
# Image of warped events


@dataclass(frozen=True, eq=False)
class IWE:
    data: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.data.sum())


GAUSS_SIGMA = 1.0
GAUSS_RADIUS = 3


def _splat_gaussian(pos: np.ndarray, H: int, W: int) -> np.ndarray:
    out = np.zeros(H * W)
    keep = in_bounds(pos, H, W)
    pos = pos[keep]
    if not len(pos):
        return out.reshape(H, W)
    base = np.rint(pos).astype(np.int64)
    offs = np.arange(-GAUSS_RADIUS, GAUSS_RADIUS + 1)
    ox, oy = np.meshgrid(offs, offs)
    cx = base[:, 0:1] + ox.ravel()[None, :]
    cy = base[:, 1:2] + oy.ravel()[None, :]
    d2 = (cx - pos[:, 0:1]) ** 2 + (cy - pos[:, 1:2]) ** 2
    w = np.exp(-0.5 * d2 / GAUSS_SIGMA**2)
    ok = (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H) & (d2 <= GAUSS_RADIUS**2)
    w = np.where(ok, w, 0.0)
    w /= w.sum(axis=1, keepdims=True)
    idx = np.where(ok, cy * W + cx, 0)
    out += np.bincount(idx.ravel(), weights=w.ravel(), minlength=H * W)
    return out.reshape(H, W)


def splat_iwe(warped: WarpedEvents, kernel: str = "bilinear") -> IWE:
    """Count warped events per pixel (polarity ignored).

    ``bilinear`` votes into the four neighbours, dropping neighbours outside
    the image; ``gaussian`` uses a sigma=1 px kernel truncated at radius 3
    and renormalized over the pixels it reaches, for events inside the image.
    """
    H, W = warped.height, warped.width
    if kernel == "bilinear":
        st = bilinear_stencil(warped.positions, H, W, clip_corners=True)
        data = scatter(st, np.ones(len(warped.positions)), H * W).reshape(H, W)
    elif kernel == "gaussian":
        data = _splat_gaussian(np.asarray(warped.positions, dtype=np.float64).reshape(-1, 2), H, W)
    else:
        raise ValueError(f"unknown IWE kernel {kernel!r}")
    return IWE(data)


# ---------------------------------------------------------------------------
# Backward image warping


def backward_positions(flow: FlowField) -> np.ndarray:
    H, W = flow.shape
    yy, xx = np.mgrid[0:H, 0:W]
    return np.stack([(xx - flow.u).ravel(), (yy - flow.v).ravel()], axis=1)


def warp_image_backward(image: np.ndarray, flow: FlowField):
    """``out(x) = image(x - F(x))`` by bilinear sampling, plus the validity mask."""
    image = np.asarray(image, dtype=np.float64)
    if image.shape != flow.shape:
        raise ValueError(f"image {image.shape} does not match flow {flow.shape}")
    value, _, valid = sample_bilinear(image, backward_positions(flow))
    return value.reshape(image.shape), valid.reshape(image.shape)
