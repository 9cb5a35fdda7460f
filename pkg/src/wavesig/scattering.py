"""2D wavelet scattering transform (orders 0-2).

Filters are complex Morlet band-passes plus a Gaussian low-pass, built
directly in the frequency domain at full input resolution and periodized
over the sampling lattice. Filtering runs through the FFT with periodic
boundary handling; each path is downsampled by 2**J once, at the final
low-pass, via spectral folding (exactly equivalent to spatial decimation
of the full-resolution result).

The band-pass family follows the standard dyadic Morlet construction:
scale j has envelope width sigma0 * 2**j and center frequency xi0 / 2**j,
with L equally spaced orientations over [0, pi). The whole band-pass set
is rescaled once so the Littlewood-Paley sum never exceeds 1, which makes
the transform non-expansive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as _fft

__all__ = [
    "ScatteringConfig",
    "FilterBank",
    "ScatteringOutput",
    "build_filter_bank",
    "scatter",
    "output_layout",
    "scattering_paths",
]

SIGMA0 = 0.8
XI0 = 3.0 * np.pi / 4.0
_ALIASES = (-1, 0, 1)


@dataclass(frozen=True)
class ScatteringConfig:
    """Scattering geometry: dyadic depth J, orientations L, input extents."""

    J: int = 2
    L: int = 8
    input_height: int = 180
    input_width: int = 300

    def __post_init__(self):
        if self.J < 1 or self.L < 1:
            raise ValueError(f"J and L must be >= 1, got J={self.J}, L={self.L}")
        div = 1 << self.J
        if self.input_height % div or self.input_width % div:
            raise ValueError(
                f"input extents {self.input_height}x{self.input_width} must be "
                f"divisible by 2**J = {div}"
            )


@dataclass(frozen=True)
class FilterBank:
    """Frequency-domain filters shared by every scatter call.

    psi maps (scale j, orientation l) to a full-resolution real frequency
    response; phi is the Gaussian low-pass with unit DC gain. All arrays
    are immutable float32. lp_max / coverage document the measured
    Littlewood-Paley profile of the normalized bank.
    """

    config: ScatteringConfig
    psi: dict[tuple[int, int], np.ndarray]
    phi: np.ndarray
    centers: dict[tuple[int, int], tuple[float, float]]  # radial freq, orientation
    bandwidths: dict[tuple[int, int], float]
    phi_bandwidth: float
    lp_max: float
    coverage_radius: float
    lp_min_in_band: float


@dataclass(frozen=True)
class ScatteringOutput:
    """Stacked scattering coefficients plus the path behind each channel."""

    coefficients: np.ndarray  # (C, H / 2**J, W / 2**J) float32
    path_index: tuple[tuple[int, ...], ...]


def scattering_paths(config: ScatteringConfig, max_order: int = 2) -> list[tuple[int, ...]]:
    """Deterministic channel ordering: order 0, then (j1,l1), then (j1,l1,j2,l2)."""
    paths: list[tuple[int, ...]] = [()]
    if max_order >= 1:
        for j1 in range(config.J):
            for l1 in range(config.L):
                paths.append((j1, l1))
    if max_order >= 2:
        for j1 in range(config.J):
            for l1 in range(config.L):
                for j2 in range(j1 + 1, config.J):
                    for l2 in range(config.L):
                        paths.append((j1, l1, j2, l2))
    return paths


def output_layout(config: ScatteringConfig, max_order: int = 2) -> tuple[int, int, int]:
    """(channels, height, width) of the scattering output."""
    channels = len(scattering_paths(config, max_order))
    div = 1 << config.J
    return channels, config.input_height // div, config.input_width // div


def _gauss_hat(wy, wx, sigma: float, theta: float, slant: float):
    """Frequency response of a rotated anisotropic Gaussian, unit peak at 0."""
    c, s = np.cos(theta), np.sin(theta)
    w_par = c * wx + s * wy
    w_perp = -s * wx + c * wy
    return np.exp(-0.5 * sigma * sigma * (w_par * w_par + (w_perp * w_perp) / (slant * slant)))


def _periodized(fn, h: int, w: int):
    """Sample fn on the FFT frequency grid, folding in neighboring periods."""
    wy = 2.0 * np.pi * np.fft.fftfreq(h)[:, None]
    wx = 2.0 * np.pi * np.fft.fftfreq(w)[None, :]
    total = np.zeros((h, w), dtype=np.float64)
    for my in _ALIASES:
        for mx in _ALIASES:
            total += fn(wy + 2.0 * np.pi * my, wx + 2.0 * np.pi * mx)
    return total


def _negated_frequencies(a: np.ndarray) -> np.ndarray:
    """Response at -omega on the same FFT grid."""
    return np.roll(a[::-1, ::-1], 1, axis=(0, 1))


def build_filter_bank(config: ScatteringConfig) -> FilterBank:
    h, w = config.input_height, config.input_width
    slant = 4.0 / config.L

    psi64: dict[tuple[int, int], np.ndarray] = {}
    centers: dict[tuple[int, int], tuple[float, float]] = {}
    bandwidths: dict[tuple[int, int], float] = {}
    for j in range(config.J):
        sigma = SIGMA0 * (2.0**j)
        xi = XI0 / (2.0**j)
        for l in range(config.L):
            theta = np.pi * l / config.L
            xy, xx = xi * np.sin(theta), xi * np.cos(theta)
            carrier = _periodized(
                lambda wy, wx: _gauss_hat(wy - xy, wx - xx, sigma, theta, slant), h, w
            )
            envelope = _periodized(lambda wy, wx: _gauss_hat(wy, wx, sigma, theta, slant), h, w)
            beta = carrier[0, 0] / envelope[0, 0]
            psi64[(j, l)] = carrier - beta * envelope
            centers[(j, l)] = (xi, theta)
            bandwidths[(j, l)] = 1.0 / sigma

    sigma_phi = SIGMA0 * (2.0 ** (config.J - 1))
    phi64 = _periodized(lambda wy, wx: _gauss_hat(wy, wx, sigma_phi, 0.0, 1.0), h, w)
    phi64 /= phi64[0, 0]  # unit DC gain

    # Littlewood-Paley normalization: scale the band-pass set so the frame
    # sum tops out at exactly 1 (the low-pass already contributes 1 at DC).
    lp_psi = np.zeros((h, w), dtype=np.float64)
    for a in psi64.values():
        lp_psi += 0.5 * (a * a + _negated_frequencies(a) ** 2)
    headroom = 1.0 - phi64 * phi64
    active = lp_psi > 1e-9 * lp_psi.max()
    scale2 = np.min(headroom[active] / lp_psi[active])
    scale = np.sqrt(scale2)
    for key in psi64:
        psi64[key] = psi64[key] * scale

    lp = phi64 * phi64 + lp_psi * scale2
    wy = 2.0 * np.pi * np.fft.fftfreq(h)[:, None]
    wx = 2.0 * np.pi * np.fft.fftfreq(w)[None, :]
    radius = np.sqrt(wy * wy + wx * wx)
    # Covered band: grow the radius while the frame lower bound holds.
    coverage = 0.0
    for r in np.linspace(0.25 * np.pi, np.pi, 61):
        if lp[radius <= r].min() >= 0.5:
            coverage = float(r)
        else:
            break
    in_band = radius <= coverage if coverage > 0 else radius <= 0
    lp_min = float(lp[in_band].min()) if in_band.any() else 0.0

    return FilterBank(
        config=config,
        psi={k: v.astype(np.float32) for k, v in psi64.items()},
        phi=phi64.astype(np.float32),
        centers=centers,
        bandwidths=bandwidths,
        phi_bandwidth=1.0 / sigma_phi,
        lp_max=float(lp.max()),
        coverage_radius=coverage,
        lp_min_in_band=lp_min,
    )


def _lowpass_downsample(spectrum: np.ndarray, phi: np.ndarray, factor: int) -> np.ndarray:
    """Low-pass in frequency, then decimate by `factor` via spectral folding."""
    filtered = spectrum * phi
    h, w = filtered.shape
    folded = filtered.reshape(factor, h // factor, factor, w // factor).sum(axis=(0, 2))
    return _fft.ifft2(folded).real / (factor * factor)


def scatter(image: np.ndarray, bank: FilterBank, max_order: int = 2) -> ScatteringOutput:
    """Scattering coefficients of one real image.

    Order 0 is the low-passed input; order 1 low-passes the modulus of each
    band-pass response; order 2 cascades a second, strictly finer-frequency
    band-pass (j2 > j1) before the final low-pass. Every channel is
    decimated by 2**J.
    """
    cfg = bank.config
    image = np.asarray(image)
    if image.ndim != 2 or image.shape != (cfg.input_height, cfg.input_width):
        raise ValueError(
            f"image extents {image.shape} do not match bank extents "
            f"{(cfg.input_height, cfg.input_width)}"
        )
    if not np.isrealobj(image):
        raise ValueError("image must be real-valued")
    if max_order not in (0, 1, 2):
        raise ValueError(f"max_order must be 0, 1 or 2, got {max_order}")

    factor = 1 << cfg.J
    x = image.astype(np.complex64, copy=False)
    spectrum = _fft.fft2(x)

    channels = [_lowpass_downsample(spectrum, bank.phi, factor)]
    if max_order >= 1:
        order1_spectra: dict[tuple[int, int], np.ndarray] = {}
        for j1 in range(cfg.J):
            for l1 in range(cfg.L):
                u1 = np.abs(_fft.ifft2(spectrum * bank.psi[(j1, l1)]))
                v1 = _fft.fft2(u1.astype(np.complex64))
                order1_spectra[(j1, l1)] = v1
                channels.append(_lowpass_downsample(v1, bank.phi, factor))
        if max_order >= 2:
            for j1 in range(cfg.J):
                for l1 in range(cfg.L):
                    v1 = order1_spectra[(j1, l1)]
                    for j2 in range(j1 + 1, cfg.J):
                        for l2 in range(cfg.L):
                            u2 = np.abs(_fft.ifft2(v1 * bank.psi[(j2, l2)]))
                            v2 = _fft.fft2(u2.astype(np.complex64))
                            channels.append(_lowpass_downsample(v2, bank.phi, factor))

    coeffs = np.stack(channels).astype(np.float32)
    # Order >= 1 channels are moduli smoothed by a positive kernel, hence
    # non-negative; strip the single-precision FFT roundoff that can leave
    # values a hair below zero.
    if max_order >= 1:
        np.maximum(coeffs[1:], 0.0, out=coeffs[1:])
    return ScatteringOutput(
        coefficients=coeffs,
        path_index=tuple(scattering_paths(cfg, max_order)),
    )
