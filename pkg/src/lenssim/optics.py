"""Scalar-diffraction PSF synthesis from pupil apertures and wavefronts.

The pipeline is: wavefront raster (waves) -> complex pupil
U = A * exp(i 2 pi W) -> |FFT|^2 -> crop/normalize -> rebin to detector
pitch. Broadband kernels are uniform spectral averages over a wavelength
list, and a field grid of kernels forms a PsfGrid.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePupilError,
    DimensionError,
    ParameterError,
    ResolutionError,
)
from .zernike import zernike_noll

KERNEL_SUM_TOL = 1e-9
DEFAULT_PAD_FACTOR = 4
DEFAULT_PSF_SIZE = 31
DEFAULT_DETECTOR_PITCH = 12e-6


@dataclass(frozen=True)
class PupilSpec:
    """Square pupil sampling grid plus lens geometry."""

    grid_size: int = 256
    aperture_diameter: float = 0.070
    focal_length: float = 0.070
    obstruction_ratio: float = 0.0

    def __post_init__(self):
        if self.grid_size < 32 or self.grid_size % 2 != 0:
            raise ParameterError(
                f"grid_size must be even and >= 32, got {self.grid_size}")
        if self.aperture_diameter <= 0:
            raise ParameterError("aperture_diameter must be > 0")
        if self.focal_length <= 0:
            raise ParameterError("focal_length must be > 0")
        if not 0 <= self.obstruction_ratio < 1:
            raise ParameterError("obstruction_ratio must be in [0, 1)")

    @property
    def pupil_pitch(self) -> float:
        """Sample spacing across the aperture diameter (m)."""
        return self.aperture_diameter / self.grid_size


@dataclass(frozen=True)
class WavefrontField:
    """Wavefront aberration for one field position, in waves.

    Either a list of (Noll index, coefficient) pairs or a raw raster
    matching the pupil grid.
    """

    mode: str = "zernike"
    zernike_coeffs: tuple[tuple[int, float], ...] = ()
    raster: np.ndarray | None = None
    field_position: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.mode not in ("zernike", "raster"):
            raise ParameterError(f"unknown wavefront mode {self.mode!r}")
        object.__setattr__(
            self, "zernike_coeffs",
            tuple((int(j), float(c)) for j, c in self.zernike_coeffs))
        for j, c in self.zernike_coeffs:
            if not np.isfinite(c):
                raise ParameterError(f"non-finite coefficient for Z{j}")
        if self.mode == "raster" and self.raster is None:
            raise ParameterError("raster mode requires a raster")
        fx, fy = self.field_position
        if not (-1 <= fx <= 1 and -1 <= fy <= 1):
            raise ParameterError("field_position must lie in [-1, 1]^2")


@dataclass(frozen=True)
class PsfKernel:
    """Discrete nonnegative unit-sum PSF kernel on a square pixel grid."""

    samples: np.ndarray
    pixel_pitch: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", s)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise DimensionError(f"kernel must be square 2D, got {s.shape}")
        if s.shape[0] % 2 != 1:
            raise DimensionError(f"kernel side must be odd, got {s.shape[0]}")
        if np.any(s < 0):
            raise ParameterError("kernel samples must be nonnegative")
        if abs(s.sum() - 1.0) > KERNEL_SUM_TOL:
            raise ParameterError(f"kernel sum {s.sum()} not 1 within 1e-9")
        if self.pixel_pitch <= 0:
            raise ParameterError("pixel_pitch must be > 0")

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @staticmethod
    def from_samples(samples: np.ndarray, pixel_pitch: float) -> "PsfKernel":
        """Normalize raw nonnegative samples to unit sum and wrap."""
        s = np.asarray(samples, dtype=np.float64)
        total = s.sum()
        if total <= 0:
            raise DegeneratePupilError("kernel has no energy")
        return PsfKernel(s / total, pixel_pitch)


@dataclass(frozen=True)
class PsfGrid:
    """Row-major field grid of PSF kernels sharing size and pitch."""

    rows: int
    cols: int
    kernels: tuple[PsfKernel, ...]
    field_coords: tuple[tuple[float, float], ...] = ()
    wavelengths: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DimensionError("grid must have at least one region")
        if len(self.kernels) != self.rows * self.cols:
            raise DimensionError(
                f"expected {self.rows * self.cols} kernels, "
                f"got {len(self.kernels)}")
        sizes = {k.size for k in self.kernels}
        pitches = {k.pixel_pitch for k in self.kernels}
        if len(sizes) != 1 or len(pitches) != 1:
            raise DimensionError("kernels must share size and pixel pitch")
        if self.field_coords and len(self.field_coords) != len(self.kernels):
            raise DimensionError("field_coords length mismatch")

    @property
    def kernel_size(self) -> int:
        return self.kernels[0].size

    @property
    def pixel_pitch(self) -> float:
        return self.kernels[0].pixel_pitch

    def kernel(self, m: int, n: int) -> PsfKernel:
        return self.kernels[m * self.cols + n]


def pupil_coordinates(grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized pupil coordinates; radius 1 is the aperture edge.

    The grid is symmetric about its geometric center (no sample sits
    exactly at radius 0 for even sizes), which keeps the aperture mask
    exactly invariant under flips and transposition.
    """
    n = grid_size
    axis = (2.0 * np.arange(n) - (n - 1)) / n
    return np.meshgrid(axis, axis, indexing="xy")


def aperture_mask(spec: PupilSpec) -> np.ndarray:
    """Annular aperture indicator A(x, y) on the pupil grid."""
    xx, yy = pupil_coordinates(spec.grid_size)
    r = np.hypot(xx, yy)
    return ((r <= 1.0) & (r >= spec.obstruction_ratio)).astype(np.float64)


def zernike_wavefront(spec: PupilSpec, fld: WavefrontField) -> np.ndarray:
    """Evaluate the wavefront raster (waves) on the pupil grid.

    Raster-mode fields pass through unchanged after a shape check;
    zernike-mode fields are summed pointwise and zeroed outside the
    aperture.
    """
    n = spec.grid_size
    if fld.mode == "raster":
        raster = np.asarray(fld.raster, dtype=np.float64)
        if raster.shape != (n, n):
            raise DimensionError(
                f"raster shape {raster.shape} does not match "
                f"pupil grid {(n, n)}")
        return raster.copy()
    xx, yy = pupil_coordinates(n)
    rho = np.hypot(xx, yy)
    theta = np.arctan2(yy, xx)
    w = np.zeros((n, n), dtype=np.float64)
    for j, c in fld.zernike_coeffs:
        if c != 0.0:
            w += c * zernike_noll(j, rho, theta)
    w[aperture_mask(spec) == 0.0] = 0.0
    return w


def build_pupil(spec: PupilSpec, wavefront: np.ndarray,
                wavelength: float) -> np.ndarray:
    """Complex pupil U = A * exp(i 2 pi W) with W in waves at wavelength."""
    if wavelength <= 0:
        raise ParameterError(f"wavelength must be > 0, got {wavelength}")
    w = np.asarray(wavefront, dtype=np.float64)
    n = spec.grid_size
    if w.shape != (n, n):
        raise DimensionError(
            f"wavefront shape {w.shape} does not match pupil grid {(n, n)}")
    a = aperture_mask(spec)
    return a * np.exp(2j * np.pi * w)


def psf_pixel_pitch(spec: PupilSpec, wavelength: float,
                    pad_factor: int = DEFAULT_PAD_FACTOR) -> float:
    """PSF-plane sample spacing of psf_from_pupil output (m)."""
    return wavelength * spec.focal_length / (
        pad_factor * spec.aperture_diameter)


def _crop_or_pad_center(arr: np.ndarray, size: int) -> np.ndarray:
    """Center-crop or zero-pad a square array to an odd target size."""
    n = arr.shape[0]
    if size == n:
        return arr
    if size < n:
        lo = (n - size) // 2
        return arr[lo:lo + size, lo:lo + size]
    out = np.zeros((size, size), dtype=arr.dtype)
    lo = (size - n) // 2
    out[lo:lo + n, lo:lo + n] = arr
    return out


def psf_from_pupil(pupil: np.ndarray, size: int | None = None,
                   pad_factor: int = DEFAULT_PAD_FACTOR,
                   pixel_pitch: float = 1.0) -> PsfKernel:
    """Squared-magnitude Fourier transform of the pupil, centered.

    The pupil is zero-padded by pad_factor to oversample the PSF plane,
    the intensity is fftshift-centered, cropped to an odd window, and
    normalized to unit sum. `pixel_pitch` labels the resulting sample
    spacing; use psf_pixel_pitch for physical values.
    """
    p = np.asarray(pupil)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise DimensionError(f"pupil must be square, got {p.shape}")
    n = p.shape[0]
    if n < 32:
        raise DimensionError(f"pupil side must be >= 32, got {n}")
    if pad_factor < 1:
        raise ParameterError("pad_factor must be >= 1")
    if not np.any(p):
        raise DegeneratePupilError("pupil has no transmitting samples")
    n_fft = pad_factor * n
    intensity = np.abs(np.fft.fftshift(np.fft.fft2(p, s=(n_fft, n_fft)))) ** 2
    if size is None:
        size = n_fft - 1
    if size < 1 or size % 2 != 1:
        raise ParameterError(f"PSF size must be odd and >= 1, got {size}")
    # odd window centered on the DC bin at n_fft // 2
    c = n_fft // 2
    half = size // 2
    if size > n_fft - 1:
        raise ParameterError(
            f"PSF size {size} exceeds transform extent {n_fft - 1}")
    cropped = intensity[c - half:c + half + 1, c - half:c + half + 1]
    return PsfKernel.from_samples(cropped, pixel_pitch)


def _rebin_matrix(n_in: int, pitch_in: float, n_out: int,
                  pitch_out: float) -> np.ndarray:
    """1D area-overlap matrix mapping n_in source pixels to n_out targets.

    Both grids are centered on the same point; entry (j, i) is the
    fraction of source pixel i covered by target pixel j.
    """
    src_lo = (np.arange(n_in) - n_in / 2.0) * pitch_in
    src_hi = src_lo + pitch_in
    dst_lo = (np.arange(n_out) - n_out / 2.0) * pitch_out
    dst_hi = dst_lo + pitch_out
    lo = np.maximum(dst_lo[:, None], src_lo[None, :])
    hi = np.minimum(dst_hi[:, None], src_hi[None, :])
    return np.clip(hi - lo, 0.0, None) / pitch_in


def resample_psf_to_detector(
        psf: PsfKernel, source_pitch: float,
        detector_pitch: float = DEFAULT_DETECTOR_PITCH) -> PsfKernel:
    """Area-weighted rebinning of a kernel onto the detector pixel grid.

    The output side is the smallest odd pixel count covering the source
    extent, so energy is conserved before the final renormalization.
    """
    if source_pitch <= 0 or detector_pitch <= 0:
        raise ParameterError("pitches must be > 0")
    out = rebin_samples(psf.samples, source_pitch, detector_pitch)
    return PsfKernel.from_samples(out, detector_pitch)


def rebin_samples(samples: np.ndarray, source_pitch: float,
                  detector_pitch: float) -> np.ndarray:
    """Energy-conserving rebin of a square array; output side is odd.

    The target grid shares the source grid's center and is the smallest
    grid covering the source extent, so integer pitch ratios aggregate
    exact pixel blocks. An even target side is padded with one trailing
    zero row/column to keep the output odd.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    n_out = int(np.ceil(n * source_pitch / detector_pitch - 1e-9))
    if n_out < 1:
        raise ResolutionError("resampled kernel would be smaller than 1x1")
    r = _rebin_matrix(n, source_pitch, n_out, detector_pitch)
    out = np.clip(r @ samples @ r.T, 0.0, None)
    if n_out % 2 == 0:
        out = np.pad(out, ((0, 1), (0, 1)))
    return out


def broadband_psf(spec: PupilSpec, fld: WavefrontField,
                  wavelengths: list[float],
                  detector_pitch: float = DEFAULT_DETECTOR_PITCH,
                  size: int = DEFAULT_PSF_SIZE,
                  pad_factor: int = DEFAULT_PAD_FACTOR,
                  spectral_weights: list[float] | None = None) -> PsfKernel:
    """Spectrally averaged detector-pitch kernel for one field position.

    Wavelengths are sorted ascending before accumulation so permuted
    inputs produce bitwise-identical results.
    """
    if not wavelengths:
        raise ParameterError("wavelength list must be nonempty")
    order = np.argsort(np.asarray(wavelengths, dtype=np.float64))
    lams = [float(wavelengths[i]) for i in order]
    if spectral_weights is None:
        weights = [1.0 / len(lams)] * len(lams)
    else:
        if len(spectral_weights) != len(wavelengths):
            raise DimensionError("one spectral weight per wavelength")
        total = float(np.sum(spectral_weights))
        if total <= 0:
            raise ParameterError("spectral weights must sum to > 0")
        weights = [float(spectral_weights[i]) / total for i in order]
    raster = zernike_wavefront(spec, fld)
    acc = np.zeros((size, size), dtype=np.float64)
    for lam, wt in zip(lams, weights):
        pupil = build_pupil(spec, raster, lam)
        native_pitch = psf_pixel_pitch(spec, lam, pad_factor)
        # keep enough native support to fill the detector-pitch window
        native_size = int(np.ceil(size * detector_pitch / native_pitch))
        native_size = min(native_size | 1, pad_factor * spec.grid_size - 1)
        mono = psf_from_pupil(pupil, size=native_size, pad_factor=pad_factor,
                              pixel_pitch=native_pitch)
        det = resample_psf_to_detector(mono, native_pitch, detector_pitch)
        acc += wt * _crop_or_pad_center(det.samples, size)
    return PsfKernel.from_samples(acc, detector_pitch)


def build_psf_grid(spec: PupilSpec, fields: list[WavefrontField],
                   wavelengths: list[float],
                   detector_pitch: float = DEFAULT_DETECTOR_PITCH,
                   rows: int | None = None, cols: int | None = None,
                   size: int = DEFAULT_PSF_SIZE,
                   pad_factor: int = DEFAULT_PAD_FACTOR,
                   spectral_weights: list[float] | None = None,
                   threads: int = 1) -> PsfGrid:
    """Broadband kernels for a row-major M x N field layout.

    rows/cols default to a single row of all fields. Per-field synthesis
    is independent; `threads` > 1 computes fields in a thread pool with
    results stitched back in field order.
    """
    if not fields:
        raise DimensionError("field list must be nonempty")
    if rows is None and cols is None:
        rows, cols = 1, len(fields)
    if rows is None or cols is None or rows * cols != len(fields):
        raise DimensionError(
            f"rows*cols must equal field count {len(fields)}")

    def one(fld: WavefrontField) -> PsfKernel:
        return broadband_psf(spec, fld, wavelengths, detector_pitch,
                             size, pad_factor, spectral_weights)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            kernels = tuple(pool.map(one, fields))
    else:
        kernels = tuple(one(f) for f in fields)
    return PsfGrid(
        rows=rows, cols=cols, kernels=kernels,
        field_coords=tuple(f.field_position for f in fields),
        wavelengths=tuple(sorted(float(l) for l in wavelengths)))


def field_lattice(rows: int, cols: int) -> list[tuple[float, float]]:
    """Region-center field coordinates in [-1, 1]^2, row-major."""
    coords = []
    for m in range(rows):
        fy = (2 * m + 1) / rows - 1.0
        for n in range(cols):
            fx = (2 * n + 1) / cols - 1.0
            coords.append((fx, fy))
    return coords
