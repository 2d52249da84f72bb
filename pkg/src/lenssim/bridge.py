"""Deterministic reference forward pass of the blur-gated bridge block.

Three branches process a B x C x H x W feature tensor: a grouped 3x3
conv (+ norm + SiLU), a depthwise 15x15 + pointwise 1x1 path, and a
fixed Laplacian high-pass. Branch outputs are blended by the spatial
gates, added as a scaled residual, channel-reweighted by a
squeeze-and-excitation bottleneck, and normalized.

All convolutions are direct correlations with replicate padding, and
all norms run in inference form, so outputs are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .blurmap import BlurIndexMap, GateParams, compute_gate_maps
from .errors import DimensionError, ParameterError

NORM_EPS = 1e-5
LAPLACIAN_4 = np.array([[0.0, 1.0, 0.0],
                        [1.0, -4.0, 1.0],
                        [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class NormParams:
    """Per-channel affine normalization with loaded statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        shapes = {a.shape for a in (self.gamma, self.beta, self.mean,
                                    self.var)}
        if len(shapes) != 1:
            raise DimensionError("norm parameter shapes must match")
        if np.any(self.var <= 0):
            raise ParameterError("norm variances must be > 0")

    def apply(self, x: np.ndarray) -> np.ndarray:
        inv = self.gamma / np.sqrt(self.var + NORM_EPS)
        return (x - self.mean[:, None, None]) * inv[:, None, None] \
            + self.beta[:, None, None]


def identity_norm(channels: int) -> NormParams:
    """Norm params whose inference transform is the exact identity."""
    return NormParams(gamma=np.ones(channels), beta=np.zeros(channels),
                      mean=np.zeros(channels),
                      var=np.full(channels, 1.0 - NORM_EPS))


@dataclass(frozen=True)
class BridgeWeights:
    """All learned parameters of the bridge reference forward pass."""

    small_conv: np.ndarray          # (C, C/groups, 3, 3)
    groups: int
    norm_s: NormParams
    dw_conv: np.ndarray             # (C, 15, 15) depthwise
    pw_conv: np.ndarray             # (C, C) pointwise channel mix
    norm_l: NormParams
    norm_lap: NormParams
    norm_out: NormParams
    se_w1: np.ndarray               # (C_red, C)
    se_b1: np.ndarray               # (C_red,)
    se_w2: np.ndarray               # (C, C_red)
    se_b2: np.ndarray               # (C,)
    lap_kernel: np.ndarray = LAPLACIAN_4

    def __post_init__(self):
        c = self.channels
        if self.groups < 1 or c % self.groups != 0:
            raise DimensionError(
                f"group count {self.groups} must divide {c} channels")
        if self.small_conv.shape != (c, c // self.groups, 3, 3):
            raise DimensionError(
                f"small_conv shape {self.small_conv.shape} invalid")
        if self.dw_conv.ndim != 3 or self.dw_conv.shape[0] != c:
            raise DimensionError("dw_conv must be (C, k, k)")
        if self.pw_conv.shape != (c, c):
            raise DimensionError("pw_conv must be (C, C)")
        if abs(self.lap_kernel.sum()) > 1e-9:
            raise ParameterError("Laplacian kernel entries must sum to 0")
        if self.se_w1.shape[1] != c or self.se_w2.shape[0] != c:
            raise DimensionError("SE weight shapes inconsistent with C")
        if self.se_w1.shape[0] != self.se_w2.shape[1] or \
                self.se_b1.shape != (self.se_w1.shape[0],) or \
                self.se_b2.shape != (c,):
            raise DimensionError("SE bottleneck shapes inconsistent")

    @property
    def channels(self) -> int:
        return self.small_conv.shape[0]


def _check_feature(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"feature tensor must be 4D, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("feature tensor contains non-finite samples")
    return x


def _correlate2d(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Direct 2D correlation with replicate (edge) same-padding."""
    kh, kw = kernel.shape
    padded = np.pad(plane, ((kh // 2, kh // 2), (kw // 2, kw // 2)),
                    mode="edge")
    windows = sliding_window_view(padded, (kh, kw))
    return np.einsum("hwij,ij->hw", windows, kernel)


def grouped_conv3x3(x: np.ndarray, weight: np.ndarray,
                    groups: int) -> np.ndarray:
    """Grouped 3x3 correlation over (B, C, H, W)."""
    b, c, h, w = x.shape
    cg = c // groups
    out = np.zeros_like(x)
    for bi in range(b):
        for co in range(c):
            g = co // (c // groups)
            for ci in range(cg):
                out[bi, co] += _correlate2d(x[bi, g * cg + ci],
                                            weight[co, ci])
    return out


def depthwise_conv(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Per-channel correlation with one kernel per channel."""
    out = np.zeros_like(x)
    for bi in range(x.shape[0]):
        for ci in range(x.shape[1]):
            out[bi, ci] = _correlate2d(x[bi, ci], weight[ci])
    return out


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def pals_branches(x: np.ndarray, w: BridgeWeights
                  ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Small, large, and Laplacian branch outputs, all same shape as x."""
    x = _check_feature(x)
    if x.shape[1] != w.channels:
        raise DimensionError(
            f"tensor has {x.shape[1]} channels, weights expect "
            f"{w.channels}")
    s = np.stack([w.norm_s.apply(p)
                  for p in grouped_conv3x3(x, w.small_conv, w.groups)])
    s = _silu(s)
    dw = depthwise_conv(x, w.dw_conv)
    pw = np.einsum("oc,bchw->bohw", w.pw_conv, dw)
    l = np.stack([w.norm_l.apply(p) for p in pw])
    lap = np.stack([
        np.stack([_correlate2d(x[bi, ci], w.lap_kernel)
                  for ci in range(x.shape[1])])
        for bi in range(x.shape[0])])
    lam = np.stack([w.norm_lap.apply(p) for p in lap])
    return s, l, lam


def se_reweight(x: np.ndarray, w: BridgeWeights) -> np.ndarray:
    """Squeeze-and-excitation channel scaling with logistic scales."""
    x = _check_feature(x)
    pooled = x.mean(axis=(2, 3))                      # (B, C)
    hidden = np.maximum(pooled @ w.se_w1.T + w.se_b1, 0.0)
    logits = hidden @ w.se_w2.T + w.se_b2
    scales = 1.0 / (1.0 + np.exp(-logits))            # (B, C) in (0, 1)
    return x * scales[:, :, None, None]


def bridge_forward(x: np.ndarray, k: BlurIndexMap, params: GateParams,
                   w: BridgeWeights) -> np.ndarray:
    """Full bridge pass: gated branch fusion, residual, SE, output norm."""
    x = _check_feature(x)
    if (k.height, k.width) != x.shape[2:]:
        raise DimensionError(
            f"blur map {k.height}x{k.width} does not match feature "
            f"plane {x.shape[2]}x{x.shape[3]}")
    s, l, lam = pals_branches(x, w)
    gates = compute_gate_maps(k, params)
    fused = x + params.eta * (gates.g_s * s + gates.g_l * l
                              + gates.g_lap * lam)
    y = se_reweight(fused, w)
    return np.stack([w.norm_out.apply(p) for p in y])


def identity_weights(channels: int, groups: int = 4,
                     se_ratio: int = 4) -> BridgeWeights:
    """Weights whose large path is the identity and SE saturates to 1.

    Center-tap depthwise kernels, identity channel mix, identity norms,
    and a large SE output bias push every scale to ~1.
    """
    cg = channels // groups
    small = np.zeros((channels, cg, 3, 3))
    for co in range(channels):
        ci = co % cg
        small[co, ci, 1, 1] = 1.0
    dw = np.zeros((channels, 15, 15))
    dw[:, 7, 7] = 1.0
    c_red = max(channels // se_ratio, 1)
    return BridgeWeights(
        small_conv=small, groups=groups, norm_s=identity_norm(channels),
        dw_conv=dw, pw_conv=np.eye(channels),
        norm_l=identity_norm(channels), norm_lap=identity_norm(channels),
        norm_out=identity_norm(channels),
        se_w1=np.zeros((c_red, channels)), se_b1=np.zeros(c_red),
        se_w2=np.zeros((channels, c_red)), se_b2=np.full(channels, 40.0))


def random_weights(channels: int, groups: int = 4, se_ratio: int = 4,
                   seed: int = 0, dw_size: int = 15) -> BridgeWeights:
    """Seeded random weights for numerical verification runs."""
    rng = np.random.default_rng(seed)
    cg = channels // groups
    c_red = max(channels // se_ratio, 1)

    def norm() -> NormParams:
        return NormParams(gamma=rng.uniform(0.5, 1.5, channels),
                          beta=rng.normal(0, 0.1, channels),
                          mean=rng.normal(0, 0.1, channels),
                          var=rng.uniform(0.5, 1.5, channels))

    return BridgeWeights(
        small_conv=rng.normal(0, 0.2, (channels, cg, 3, 3)),
        groups=groups, norm_s=norm(),
        dw_conv=rng.normal(0, 0.1, (channels, dw_size, dw_size)),
        pw_conv=rng.normal(0, 0.2, (channels, channels)),
        norm_l=norm(), norm_lap=norm(), norm_out=norm(),
        se_w1=rng.normal(0, 0.3, (c_red, channels)),
        se_b1=rng.normal(0, 0.1, c_red),
        se_w2=rng.normal(0, 0.3, (channels, c_red)),
        se_b2=rng.normal(0, 0.1, channels))
