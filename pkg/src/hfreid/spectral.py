"""Frequency-domain mixed augmentation on single-channel images.

Pipeline: image -> centered 2-D spectrum -> Gaussian high-pass -> random
square spectral mix with the unfiltered spectrum -> inverse transform.

Conventions used throughout:
  * unnormalized forward transform, 1/(HW) on the inverse;
  * spectra are stored in centered layout, DC at (H//2, W//2);
  * the high-pass gain and the mix mask live in the same centered frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError, StructuralError

DEFAULT_CUTOFF_FRACTION = 0.05


@dataclass(frozen=True)
class Spectrum:
    """Complex H x W frequency grid in centered (DC-at-middle) layout."""

    coeffs: np.ndarray

    @property
    def height(self) -> int:
        return self.coeffs.shape[0]

    @property
    def width(self) -> int:
        return self.coeffs.shape[1]


@dataclass(frozen=True)
class HighPassFilter:
    """Gaussian high-pass gain grid.

    gain(u, v) = 1 - exp(-d^2 / (2 sigma^2)) where d is the Euclidean
    distance from the centered DC bin and sigma = cutoff_fraction * min(H, W).
    The gain is exactly 0 at DC and strictly below 1 everywhere.
    """

    cutoff_fraction: float
    gain: np.ndarray


@dataclass(frozen=True)
class MixMask:
    """Binary grid whose ones form one s x s square, s = round(sqrt(alpha*H*W))."""

    alpha: float
    side: int
    row: int
    col: int
    grid: np.ndarray


def forward_transform(img: np.ndarray) -> Spectrum:
    """2-D DFT of a single-channel image, re-laid-out with DC at the center."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise StructuralError(f"expected a 2-D grayscale array, got ndim={img.ndim}")
    if not np.all(np.isfinite(img)):
        raise InputError("image contains non-finite pixels")
    return Spectrum(np.fft.fftshift(np.fft.fft2(img)))


def inverse_transform(spec: Spectrum, return_residue: bool = False):
    """Inverse DFT with 1/(HW) normalization; returns the real part.

    The imaginary residue (max abs of the discarded imaginary part) is
    returned alongside the grid when ``return_residue`` is set.
    """
    back = np.fft.ifft2(np.fft.ifftshift(spec.coeffs))
    grid = np.ascontiguousarray(back.real)
    if return_residue:
        return grid, float(np.max(np.abs(back.imag)))
    return grid


def gaussian_high_pass(
    height: int, width: int, cutoff_fraction: float = DEFAULT_CUTOFF_FRACTION
) -> HighPassFilter:
    if not 0.0 < cutoff_fraction < 1.0:
        raise ParameterError(f"cutoff_fraction must be in (0, 1), got {cutoff_fraction}")
    rows = np.arange(height, dtype=np.float64) - height // 2
    cols = np.arange(width, dtype=np.float64) - width // 2
    d2 = rows[:, None] ** 2 + cols[None, :] ** 2
    sigma = cutoff_fraction * min(height, width)
    gain = 1.0 - np.exp(-d2 / (2.0 * sigma * sigma))
    # the Gaussian tail underflows to a literal 1.0 far from DC; keep the
    # realized grid strictly below 1
    gain = np.minimum(gain, np.nextafter(1.0, 0.0))
    return HighPassFilter(cutoff_fraction=cutoff_fraction, gain=gain)


def apply_high_pass(spec: Spectrum, filt: HighPassFilter) -> Spectrum:
    """Elementwise product with the gain grid; the DC bin maps to exactly 0."""
    if filt.gain.shape != spec.coeffs.shape:
        raise StructuralError(
            f"filter shape {filt.gain.shape} does not match spectrum {spec.coeffs.shape}"
        )
    return Spectrum(spec.coeffs * filt.gain)


def sample_mask(alpha: float, height: int, width: int, rng: np.random.Generator) -> MixMask:
    """Draw the square mix region: side round(sqrt(alpha*H*W)), anchor uniform in-bounds."""
    if not 0.0 <= alpha <= 0.5:
        raise ParameterError(f"alpha must be in [0, 0.5], got {alpha}")
    side = int(np.rint(np.sqrt(alpha * height * width)))
    if side > min(height, width):
        raise ParameterError(
            f"alpha={alpha} needs a {side}px square, larger than min(H, W)={min(height, width)}"
        )
    grid = np.zeros((height, width), dtype=np.float64)
    row = col = 0
    if side > 0:
        row = int(rng.integers(0, height - side + 1))
        col = int(rng.integers(0, width - side + 1))
        grid[row : row + side, col : col + side] = 1.0
    return MixMask(alpha=alpha, side=side, row=row, col=col, grid=grid)


def mix_spectra(high: Spectrum, orig: Spectrum, mask: MixMask) -> Spectrum:
    """(1 - M) * high + M * orig, elementwise; M is the binary mask grid."""
    if high.coeffs.shape != orig.coeffs.shape or mask.grid.shape != high.coeffs.shape:
        raise StructuralError(
            f"shape mismatch: high {high.coeffs.shape}, orig {orig.coeffs.shape}, "
            f"mask {mask.grid.shape}"
        )
    m = mask.grid
    return Spectrum((1.0 - m) * high.coeffs + m * orig.coeffs)


def rescale_unit(grid: np.ndarray) -> np.ndarray:
    """Affine min-max rescale to [0, 1]; a constant grid maps to all zeros."""
    lo = float(grid.min())
    hi = float(grid.max())
    if hi - lo < 1e-12:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def fma_augment(
    img: np.ndarray,
    cutoff_fraction: float,
    rng: np.random.Generator,
    alpha: float | None = None,
) -> np.ndarray:
    """Full spectral-mix augmentation of a grayscale image.

    Draws alpha ~ Uniform(0, 0.5) unless one is forced, high-passes the
    spectrum, splices the original spectrum back in over a random square,
    inverts, and min-max rescales to [0, 1]. Deterministic given the rng
    state; alpha=0 degenerates to the pure high-pass pipeline.
    """
    if alpha is None:
        alpha = float(rng.uniform(0.0, 0.5))
    spec = forward_transform(img)
    filt = gaussian_high_pass(spec.height, spec.width, cutoff_fraction)
    high = apply_high_pass(spec, filt)
    mask = sample_mask(alpha, spec.height, spec.width, rng)
    mixed = mix_spectra(high, spec, mask)
    return rescale_unit(inverse_transform(mixed))


def log_magnitude(spec: Spectrum) -> np.ndarray:
    """log(1 + |F|), for spectrum previews."""
    return np.log1p(np.abs(spec.coeffs))


def spectral_energy(spec: Spectrum) -> float:
    return float(np.sum(np.abs(spec.coeffs) ** 2))
