"""Blur factors, the normalized blur-index map, and spatial gates.

The blur factor of a kernel is the RMS radius of its energy about the
energy centroid, in pixels. Per-region factors are min-max normalized,
arranged on the field grid, and bilinearly upsampled (cell-center
aligned, edge-clamped) to the target plane. Gates modulate base logistic
levels with the blur index and clip to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateKernelError, DimensionError, ParameterError
from .optics import PsfGrid, PsfKernel


@dataclass(frozen=True)
class BlurIndexMap:
    """Normalized blur index k(h, w) in [0, 1] on the target plane."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise DimensionError(f"blur map must be 2D, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ParameterError("blur index values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class GateParams:
    """Raw gate logits, modulation strengths, and the residual scale."""

    theta_s: float = -3.0
    theta_l: float = -2.0
    theta_lap: float = -4.0
    alpha_s: float = 0.0
    alpha_l: float = 0.0
    alpha_lap: float = 0.0
    eta: float = 0.2

    def __post_init__(self):
        if min(self.alpha_s, self.alpha_l, self.alpha_lap) < 0:
            raise ParameterError("modulation strengths must be >= 0")
        if not 0 <= self.eta < 1:
            raise ParameterError(f"eta must be in [0, 1), got {self.eta}")


@dataclass(frozen=True)
class GateMaps:
    """Spatially varying gates for the small/large/Laplacian branches."""

    g_s: np.ndarray
    g_l: np.ndarray
    g_lap: np.ndarray

    def __post_init__(self):
        shapes = {self.g_s.shape, self.g_l.shape, self.g_lap.shape}
        if len(shapes) != 1:
            raise DimensionError("gate maps must share one shape")
        for g in (self.g_s, self.g_l, self.g_lap):
            if np.any(g < 0) or np.any(g > 1):
                raise ParameterError("gate values must lie in [0, 1]")


def psf_blur_factor(psf: PsfKernel | np.ndarray) -> float:
    """RMS radius of kernel energy about its centroid, in pixels."""
    k = psf.samples if isinstance(psf, PsfKernel) else np.asarray(
        psf, dtype=np.float64)
    total = k.sum()
    if total <= 0:
        raise DegenerateKernelError("kernel has no energy")
    p = k / total
    ys, xs = np.mgrid[0:k.shape[0], 0:k.shape[1]]
    cy = float((p * ys).sum())
    cx = float((p * xs).sum())
    return float(np.sqrt((p * ((ys - cy) ** 2 + (xs - cx) ** 2)).sum()))


def bilinear_upsample(grid: np.ndarray, height: int,
                      width: int) -> np.ndarray:
    """Cell-center-aligned bilinear upsampling with edge clamping.

    Output pixel centers are mapped into grid-cell coordinates so the
    pixel at each region center reproduces that region's value.
    """
    grid = np.asarray(grid, dtype=np.float64)
    rows, cols = grid.shape
    gy = (np.arange(height) + 0.5) * rows / height - 0.5
    gx = (np.arange(width) + 0.5) * cols / width - 0.5
    gy = np.clip(gy, 0.0, rows - 1.0)
    gx = np.clip(gx, 0.0, cols - 1.0)
    y0 = np.clip(np.floor(gy).astype(int), 0, rows - 1)
    x0 = np.clip(np.floor(gx).astype(int), 0, cols - 1)
    y1 = np.minimum(y0 + 1, rows - 1)
    x1 = np.minimum(x0 + 1, cols - 1)
    fy = (gy - y0)[:, None]
    fx = (gx - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def build_blur_index_map(grid: PsfGrid, height: int,
                         width: int) -> BlurIndexMap:
    """Normalized, upsampled blur-index map for a PSF grid.

    If all regions share one blur factor the map is 0.5 everywhere
    (min = max leaves the normalization undefined).
    """
    if height < 1 or width < 1:
        raise ParameterError("target dimensions must be >= 1")
    factors = np.array(
        [psf_blur_factor(k) for k in grid.kernels],
        dtype=np.float64).reshape(grid.rows, grid.cols)
    lo, hi = factors.min(), factors.max()
    if hi - lo <= 0:
        return BlurIndexMap(np.full((height, width), 0.5))
    norm = (factors - lo) / (hi - lo)
    up = np.clip(bilinear_upsample(norm, height, width), 0.0, 1.0)
    return BlurIndexMap(up)


def _sigmoid(x: float) -> float:
    return float(1.0 / (1.0 + np.exp(-x)))


def compute_gate_maps(k: BlurIndexMap | np.ndarray,
                      params: GateParams) -> GateMaps:
    """Blur-modulated gates, clipped to [0, 1].

    g_s and g_lap favor sharp regions (weight on 1 - k); g_l favors
    blurred regions (weight on k).
    """
    kv = k.values if isinstance(k, BlurIndexMap) else np.asarray(
        k, dtype=np.float64)
    g_s = np.clip(_sigmoid(params.theta_s) + params.alpha_s * (1 - kv), 0, 1)
    g_l = np.clip(_sigmoid(params.theta_l) + params.alpha_l * kv, 0, 1)
    g_lap = np.clip(
        _sigmoid(params.theta_lap) + params.alpha_lap * (1 - kv), 0, 1)
    return GateMaps(g_s=g_s, g_l=g_l, g_lap=g_lap)
