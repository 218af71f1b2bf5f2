"""2D Fourier analysis for the spectral input channels.

The forward transform is computed by row-column decomposition with an
iterative radix-2 FFT for power-of-two lengths and Bluestein's chirp-z
algorithm otherwise (the target image sides, 192 and 224, are composite).
All spectral arithmetic runs in double precision regardless of the input
tensor's storage type.

The magnitude and phase maps are treated as constants with respect to
autodiff: attention consumes them as inputs and augmentation happens
before extraction, so no gradient path into the pixels is needed.
"""

import functools

import numpy as np
from dataclasses import dataclass

from .engine import Tensor


@dataclass
class Spectrum:
    """Complex H x W frequency grid stored as separate real/imag planes."""

    height: int
    width: int
    re: np.ndarray
    im: np.ndarray

    def to_complex(self):
        return self.re + 1j * self.im

    @classmethod
    def from_complex(cls, z):
        z = np.ascontiguousarray(z)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite spectrum")
        return cls(z.shape[0], z.shape[1], z.real.copy(), z.imag.copy())

    def magnitude(self):
        return np.hypot(self.re, self.im)


@functools.lru_cache(maxsize=64)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@functools.lru_cache(maxsize=64)
def _stage_twiddles(n):
    tw = []
    span = 1
    while span < n:
        tw.append(np.exp((-1j * np.pi / span) * np.arange(span)))
        span *= 2
    return tw


def _fft_pow2(a):
    """Iterative radix-2 Cooley-Tukey over the last axis of (B, N)."""
    b, n = a.shape
    if n == 1:
        return a.copy()
    y = a[:, _bit_reversal(n)]
    for tw in _stage_twiddles(n):
        span = tw.shape[0]
        y = y.reshape(b, -1, 2 * span)
        even = y[..., :span]
        odd = y[..., span:] * tw
        y = np.concatenate((even + odd, even - odd), axis=-1)
    return y.reshape(b, n)


def _ifft_pow2(a):
    return np.conj(_fft_pow2(np.conj(a))) / a.shape[1]


@functools.lru_cache(maxsize=64)
def _bluestein_tables(n):
    k = np.arange(n)
    # quadratic chirp; exponent reduced mod 2n keeps the angle small and exact
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:])[::-1]
    return chirp, _fft_pow2(b[None])[0], m


def _fft_bluestein(a):
    b, n = a.shape
    chirp, fb, m = _bluestein_tables(n)
    buf = np.zeros((b, m), dtype=np.complex128)
    buf[:, :n] = a * chirp
    conv = _ifft_pow2(_fft_pow2(buf) * fb)
    return conv[:, :n] * chirp


def _fft1d(a):
    """Forward DFT along the last axis of a (B, N) complex array."""
    n = a.shape[1]
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return _fft_bluestein(a)


def dft2d(gray):
    """Unnormalized forward 2D DFT of an H x W grayscale image.

    S[u,v] = sum_{x,y} g[x,y] * exp(-2*pi*i*(u*x/H + v*y/W)).
    """
    g = gray.data if isinstance(gray, Tensor) else np.asarray(gray)
    if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"dft2d expects an HxW image with H,W >= 2, got {g.shape}")
    g = g.astype(np.complex128)
    rows = _fft1d(g)            # transform along y for each row x
    full = _fft1d(rows.T).T     # then along x for each column v
    return Spectrum.from_complex(full)


def fftshift(s):
    """Cyclic shift putting the zero-frequency bin at (H//2, W//2)."""
    shifted = np.roll(s.to_complex(), (s.height // 2, s.width // 2), axis=(0, 1))
    return Spectrum.from_complex(shifted)


def log_magnitude(s):
    """log(1+|S|) of a centered spectrum, min-max normalized into [0,1].

    A constant raw map (e.g. from an all-zero image) normalizes to zeros.
    """
    m = np.log1p(s.magnitude())
    if not np.all(np.isfinite(m)):
        raise FloatingPointError("non-finite magnitude")
    lo, hi = m.min(), m.max()
    return Tensor((m - lo) / (hi - lo + 1e-8))


def phase_map(s):
    """Phase angle of a centered spectrum mapped affinely from (-pi, pi] to [0,1].

    Bins with magnitude below 1e-12 carry no meaningful angle and are
    assigned phase 0, i.e. output 0.5.
    """
    phi = np.arctan2(s.im, s.re)
    phi = np.where(s.magnitude() < 1e-12, 0.0, phi)
    return Tensor((phi + np.pi) / (2.0 * np.pi))
