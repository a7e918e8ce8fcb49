"""2D discrete Fourier transform and log-magnitude spectrum features.

The transform is the unnormalised DFT

    F[h, k] = sum_l sum_j f[l, j] * exp(-2*pi*i*(h*l/A + k*j/B))

computed either by an explicit double sum (any size) or by a vectorised
radix-2 Cooley-Tukey FFT (power-of-two sizes). All spectral arithmetic is
float64; callers cast the final features to the network dtype.
"""

import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class ComplexGrid:
    """Real and imaginary parts of a DFT, each shaped ``(..., A, B)``."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ShapeError(f"re {self.re.shape} and im {self.im.shape} differ")

    @property
    def shape(self):
        return self.re.shape

    def to_complex(self):
        return self.re + 1j * self.im


@dataclass(frozen=True)
class SpectrumBlock:
    """Log-magnitude grid ``ln(M + epsilon)``."""

    values: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @property
    def shape(self):
        return self.values.shape


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def _check_block(block):
    block = np.asarray(block, dtype=np.float64)
    if block.ndim < 2:
        raise ShapeError(f"DFT input must have at least 2 dims, got shape {block.shape}")
    if block.shape[-1] < 1 or block.shape[-2] < 1:
        raise ShapeError(f"empty DFT input {block.shape}")
    if not np.all(np.isfinite(block)):
        raise NumericError("DFT input contains non-finite values")
    return block


def _twiddle_table(n):
    """exp(-2*pi*i*m/n) for m in [0, n), with table[n-m] == conj(table[m]) exactly."""
    m = np.arange(n)
    table = np.exp(-2j * np.pi * m / n)
    half = n // 2
    # mirror the lower half so conjugate-pair entries are bitwise conjugates
    table[n - np.arange(1, half + 1)] = np.conj(table[np.arange(1, half + 1)])
    if n % 2 == 0:
        table[half] = -1.0
    return table


def dft2d_direct(block):
    """Double-sum DFT of a single ``A x B`` block.

    Every output entry is reduced with the same summation order, and the
    twiddle table is exactly conjugate-symmetric, so for real input the
    magnitudes satisfy ``M[h, k] == M[-h, -k]`` bit for bit.
    """
    block = _check_block(block)
    if block.ndim != 2:
        raise ShapeError(f"direct DFT takes a single 2D block, got shape {block.shape}")
    a, b = block.shape
    ta, tb = _twiddle_table(a), _twiddle_table(b)
    l_idx = np.arange(a)
    j_idx = np.arange(b)
    out = np.empty((a, b), dtype=np.complex128)
    for h in range(a):
        row_tw = ta[(h * l_idx) % a]
        for k in range(b):
            col_tw = tb[(k * j_idx) % b]
            out[h, k] = np.sum(block * (row_tw[:, None] * col_tw[None, :]))
    return ComplexGrid(out.real.copy(), out.imag.copy())


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft_last_axis(x):
    """Iterative radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ShapeError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    x = x[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        x = x.reshape(*lead, n // size, size)
        even = x[..., :half]
        odd = x[..., half:] * tw
        x = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return x.reshape(*lead, n)


def fft2d(block):
    """Radix-2 2D FFT over the last two axes; leading axes are batched."""
    block = _check_block(block)
    rows = fft_last_axis(block)
    out = np.swapaxes(fft_last_axis(np.swapaxes(rows, -1, -2)), -1, -2)
    return ComplexGrid(np.ascontiguousarray(out.real), np.ascontiguousarray(out.imag))


def dft2d_matrix(block):
    """Separable DFT as two matrix products; any size, O(A*B*(A+B))."""
    block = _check_block(block)
    a, b = block.shape[-2:]
    ta, tb = _twiddle_table(a), _twiddle_table(b)
    wa = ta[np.outer(np.arange(a), np.arange(a)) % a]
    wb = tb[np.outer(np.arange(b), np.arange(b)) % b]
    out = wa @ block.astype(np.complex128) @ wb
    return ComplexGrid(np.ascontiguousarray(out.real), np.ascontiguousarray(out.imag))


def dft2d(block, method="auto"):
    """DFT of ``block`` over its last two axes.

    ``method`` is ``"fft"``, ``"direct"`` (double sum), ``"matrix"`` or
    ``"auto"`` (FFT when both extents are powers of two, else matrix).
    """
    block = _check_block(block)
    a, b = block.shape[-2:]
    if method == "auto":
        method = "fft" if is_power_of_two(a) and is_power_of_two(b) else "matrix"
    if method == "fft":
        return fft2d(block)
    if method == "matrix":
        return dft2d_matrix(block)
    if method != "direct":
        raise ValueError(f"unknown DFT method {method!r}")
    if block.ndim == 2:
        return dft2d_direct(block)
    flat = block.reshape(-1, a, b)
    grids = [dft2d_direct(f) for f in flat]
    re = np.stack([g.re for g in grids]).reshape(block.shape)
    im = np.stack([g.im for g in grids]).reshape(block.shape)
    return ComplexGrid(re, im)


def magnitude(grid):
    return np.sqrt(grid.re * grid.re + grid.im * grid.im)


def log_magnitude(m, epsilon=DEFAULT_EPSILON):
    if not epsilon > 0:
        raise ConfigError(f"log stabiliser epsilon must be > 0, got {epsilon}")
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("magnitudes must be non-negative")
    return SpectrumBlock(np.log(m + epsilon), float(epsilon))


def log_spectrum(x, epsilon=DEFAULT_EPSILON, method="auto"):
    """``ln(|DFT(x)| + epsilon)`` over the last two axes of ``x``, as float64."""
    return log_magnitude(magnitude(dft2d(x, method=method)), epsilon).values


def fftshift(block):
    """Swap quadrants so the zero-frequency entry sits at index (A//2, B//2).

    Accepts a :class:`SpectrumBlock` or a plain array; returns the same kind.
    Display only: the training path never shifts.
    """
    if isinstance(block, SpectrumBlock):
        return SpectrumBlock(fftshift(block.values), block.epsilon)
    v = np.asarray(block)
    a, b = v.shape[-2:]
    return np.roll(v, (a // 2, b // 2), axis=(-2, -1))


def to_grayscale(image):
    """Luma of a ``[3, H, W]`` RGB image (ITU-R BT.601 weights)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"expected [3, H, W] RGB image, got {image.shape}")
    return 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]


def to_graymap(values):
    """Min-max scale a 2D grid to uint8; a constant grid maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)


def spectrum_image(image, epsilon=DEFAULT_EPSILON):
    """Centred, 8-bit log-magnitude spectrum of the grayscale version of ``image``."""
    gray = to_grayscale(image)
    spec = log_magnitude(magnitude(dft2d(gray)), epsilon)
    return to_graymap(fftshift(spec).values)


def write_pgm(path, gray):
    """Write a uint8 2D array as a binary portable graymap (P5)."""
    gray = np.asarray(gray)
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise ShapeError(f"PGM needs a 2D uint8 array, got {gray.dtype} {gray.shape}")
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(gray).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w).copy()
