"""Spatially varying PSF degradation and the sensor noise model.

Images are 2D float64 arrays in [0, 1]. Degradation tiles the image into
p x p patches, convolves each with its field kernel, and recombines with
raised-cosine blend weights that form an exact partition of unity. The
noise model quantizes with a floor lattice, adds Gaussian noise in
lattice units, and clamps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DimensionError, ParameterError
from .optics import PsfGrid

CLAMP_LO = 1e-20
CLAMP_HI = 1.0
DEFAULT_FULL_SCALE = 2 ** 14


@dataclass(frozen=True)
class DegradationConfig:
    """Patch layout, quantization scale, and noise parameters.

    `q` follows the published convention of a lattice scale against a
    full-scale count (14-bit by default): q_step = q / q_full_scale.
    Set q_literal=True to use q directly as the normalized step.
    """

    patch_size: int = 80
    overlap: int = 16
    q: float = 90.0
    sigma: float = 0.0003
    q_full_scale: float = DEFAULT_FULL_SCALE
    q_literal: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.patch_size < 1:
            raise ParameterError("patch_size must be >= 1")
        if not 0 <= self.overlap < self.patch_size:
            raise ParameterError(
                f"overlap must be in [0, patch_size), got {self.overlap}")
        if self.q < 0:
            raise ParameterError("q must be >= 0")
        if self.sigma < 0:
            raise ParameterError("sigma must be >= 0")
        if self.q_full_scale <= 0:
            raise ParameterError("q_full_scale must be > 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError("seed must fit in 64 bits")

    @property
    def q_step(self) -> float:
        """Quantization step in normalized [0, 1] units."""
        return float(self.q) if self.q_literal else float(
            self.q) / float(self.q_full_scale)


def _tile_profile(n_tiles: int, p: int, overlap: int,
                  k: int) -> tuple[int, int, np.ndarray]:
    """1D blend weights for tile k: (start, stop, weights).

    Each interior tile boundary owns a transition zone of `overlap`
    pixels just after it, where the left tile's raised-cosine ramp-down
    and the right tile's ramp-up sum to exactly one.
    """
    start = k * p
    stop = (k + 1) * p + (overlap if k < n_tiles - 1 else 0)
    w = np.ones(stop - start, dtype=np.float64)
    if overlap > 0:
        t = np.arange(overlap) + 0.5
        ramp_up = np.sin(np.pi * t / (2.0 * overlap)) ** 2
        if k > 0:
            w[:overlap] = ramp_up
        if k < n_tiles - 1:
            w[-overlap:] = 1.0 - ramp_up
    return start, stop, w


@dataclass(frozen=True)
class BlendWeights:
    """Per-patch separable blend weights over an M x N plane."""

    height: int
    width: int
    patch_size: int
    overlap: int
    row_profiles: tuple[tuple[int, int, np.ndarray], ...]
    col_profiles: tuple[tuple[int, int, np.ndarray], ...]

    @property
    def rows(self) -> int:
        return len(self.row_profiles)

    @property
    def cols(self) -> int:
        return len(self.col_profiles)

    def patch_weight(self, m: int, n: int) -> np.ndarray:
        """Dense weight raster over patch (m, n)'s support."""
        _, _, wr = self.row_profiles[m]
        _, _, wc = self.col_profiles[n]
        return np.outer(wr, wc)

    def weight_sum(self) -> np.ndarray:
        """Pointwise sum of all patch weights (partition-of-unity check)."""
        total = np.zeros((self.height, self.width))
        for r0, r1, wr in self.row_profiles:
            for c0, c1, wc in self.col_profiles:
                total[r0:r1, c0:c1] += np.outer(wr, wc)
        return total


def make_blend_weights(height: int, width: int, patch_size: int,
                       overlap: int) -> BlendWeights:
    """Raised-cosine blend weights for a patch lattice of stride p."""
    p = patch_size
    if p < 1:
        raise ParameterError("patch_size must be >= 1")
    if not 0 <= overlap < p:
        raise ParameterError(f"overlap must be in [0, p), got {overlap}")
    if height % p != 0 or width % p != 0:
        raise DimensionError(
            f"image {height}x{width} is not a multiple of patch size {p}")
    n_rows, n_cols = height // p, width // p
    return BlendWeights(
        height=height, width=width, patch_size=p, overlap=overlap,
        row_profiles=tuple(
            _tile_profile(n_rows, p, overlap, m) for m in range(n_rows)),
        col_profiles=tuple(
            _tile_profile(n_cols, p, overlap, n) for n in range(n_cols)))


def _extract_padded(img: np.ndarray, r0: int, r1: int, c0: int, c1: int,
                    pad: int) -> np.ndarray:
    """Image region [r0:r1, c0:c1] extended by `pad`, edge-replicated."""
    h, w = img.shape
    rr0, rr1 = r0 - pad, r1 + pad
    cc0, cc1 = c0 - pad, c1 + pad
    core = img[max(rr0, 0):min(rr1, h), max(cc0, 0):min(cc1, w)]
    pads = ((max(-rr0, 0), max(rr1 - h, 0)), (max(-cc0, 0), max(cc1 - w, 0)))
    if any(p for pair in pads for p in pair):
        core = np.pad(core, pads, mode="edge")
    return core


def degrade_image(img: np.ndarray, grid: PsfGrid, cfg: DegradationConfig,
                  threads: int = 1) -> np.ndarray:
    """Patchwise spatially varying convolution with blended recombination.

    Each patch support is extended by the kernel radius with edge
    replication, convolved with its region kernel, cropped, weighted,
    and accumulated. Accumulation order is fixed (row-major patches)
    regardless of thread count.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"image must be 2D, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError("image contains non-finite samples")
    h, w = img.shape
    p = cfg.patch_size
    weights = make_blend_weights(h, w, p, cfg.overlap)
    if grid.rows != weights.rows or grid.cols != weights.cols:
        raise DimensionError(
            f"PSF grid {grid.rows}x{grid.cols} does not match patch "
            f"lattice {weights.rows}x{weights.cols}")
    pad = grid.kernel_size // 2

    def one(mn: tuple[int, int]) -> np.ndarray:
        m, n = mn
        r0, r1, _ = weights.row_profiles[m]
        c0, c1, _ = weights.col_profiles[n]
        region = _extract_padded(img, r0, r1, c0, c1, pad)
        conv = fftconvolve(region, grid.kernel(m, n).samples, mode="same")
        return conv[pad:pad + (r1 - r0), pad:pad + (c1 - c0)]

    order = [(m, n) for m in range(grid.rows) for n in range(grid.cols)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            convs = list(pool.map(one, order))
    else:
        convs = [one(mn) for mn in order]

    out = np.zeros_like(img)
    for (m, n), conv in zip(order, convs):
        r0, r1, _ = weights.row_profiles[m]
        c0, c1, _ = weights.col_profiles[n]
        out[r0:r1, c0:c1] += weights.patch_weight(m, n) * conv
    return out


def apply_noise(img: np.ndarray, cfg: DegradationConfig) -> np.ndarray:
    """Quantize, add Gaussian noise on the lattice, and clamp.

    out = clamp((floor(img / q_step) + eps) * q_step, 1e-20, 1.0) with
    eps ~ N(0, sigma^2) from a counter-based Philox stream keyed by the
    seed, so results are bitwise reproducible. q_step = 0 skips the
    lattice and adds eps directly.
    """
    img = np.asarray(img, dtype=np.float64)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    eps = rng.standard_normal(img.shape) * cfg.sigma if cfg.sigma > 0 \
        else np.zeros(img.shape)
    q = cfg.q_step
    if q > 0:
        noisy = (np.floor(img / q) + eps) * q
    else:
        noisy = img + eps
    return np.clip(noisy, CLAMP_LO, CLAMP_HI)
