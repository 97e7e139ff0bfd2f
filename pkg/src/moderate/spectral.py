"""Periodic pseudo-spectral engine.

Fields live on a uniform grid over the periodic box ``[0, L)^d`` (``L = 1``
is the unit torus).  Fourier coefficients are normalised so that
``hat[k] = (1/M^d) * sum_x f(x) exp(-i 2 pi k.x / L)``, i.e. they are the
Fourier-series coefficients of the periodic function.  The physical
wavevector of lattice index ``k`` is ``xi = 2 pi k / L``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GridField",
    "SpectralMultiplier",
    "wavenumbers",
    "wavevector_norm",
    "hermitian_residue",
    "heat_symbol",
    "heat_semigroup",
    "bessel_symbol",
    "bessel_potential",
    "gradient",
    "divergence",
    "laplacian",
    "convolve",
    "dealias_mask",
    "dealiased_product",
    "resample",
    "random_field",
    "smoothing_exponent_probe",
]


@dataclass(frozen=True, eq=False)
class GridField:
    """Scalar or vector field sampled on a uniform periodic grid.

    Parameters
    ----------
    values : ndarray
        Shape ``(M,)*dim`` for a scalar field or ``(ncomp, M, ..., M)`` for a
        vector field.
    dim : int
        Spatial dimension, 1 to 3.
    length : float
        Side length of the periodic box.
    """

    values: np.ndarray
    dim: int
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (self.dim, self.dim + 1):
            raise ValueError(f"values of shape {v.shape} do not match dim={self.dim}")
        grid_shape = v.shape[-self.dim:]
        if len(set(grid_shape)) != 1:
            raise ValueError(f"grid must be cubic, got {grid_shape}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("field contains NaN or Inf")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, func: Callable, resolution: int, dim: int = 1, length: float = 1.0) -> "GridField":
        """Sample ``func(*coords)`` on the grid."""
        return cls(np.asarray(func(*grid_coords(resolution, dim, length)), dtype=float), dim, length)

    @classmethod
    def from_hat(cls, hat: np.ndarray, dim: int, length: float = 1.0, check_real: bool = False) -> "GridField":
        axes = tuple(range(-dim, 0))
        M = hat.shape[-1]
        raw = np.fft.ifftn(hat, axes=axes) * M**dim
        if check_real:
            scale = max(float(np.abs(hat).sum(axis=tuple(range(-dim, 0))).max()), 1e-300)
            resid = np.abs(raw.imag).max() / scale
            if resid > 1e-8:
                raise ValueError(f"multiplier output is not real (relative imaginary residue {resid:.2e})")
        return cls(raw.real, dim, length)

    @property
    def resolution(self) -> int:
        return self.values.shape[-1]

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == self.dim + 1

    @property
    def ncomp(self) -> int:
        return self.values.shape[0] if self.is_vector else 1

    @property
    def spacing(self) -> float:
        return self.length / self.resolution

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @cached_property
    def hat(self) -> np.ndarray:
        axes = tuple(range(-self.dim, 0))
        return np.fft.fftn(self.values, axes=axes) / self.resolution**self.dim

    def coords(self) -> list[np.ndarray]:
        return grid_coords(self.resolution, self.dim, self.length)

    def component(self, a: int) -> "GridField":
        if not self.is_vector:
            raise ValueError("scalar field has no components")
        return GridField(self.values[a], self.dim, self.length)

    def integral(self):
        """Grid-quadrature integral (per component for vector fields)."""
        total = self.values.sum(axis=tuple(range(-self.dim, 0))) * self.cell_volume
        return float(total) if not self.is_vector else total

    def mean(self) -> float:
        return self.integral() / self.length**self.dim

    def like(self, values: np.ndarray) -> "GridField":
        return GridField(values, self.dim, self.length)

    def __add__(self, other):
        return self.like(self.values + _values(other))

    def __sub__(self, other):
        return self.like(self.values - _values(other))

    def __mul__(self, other):
        return self.like(self.values * _values(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)


def _values(x):
    return x.values if isinstance(x, GridField) else x


def grid_coords(resolution: int, dim: int, length: float = 1.0) -> list[np.ndarray]:
    x = np.arange(resolution) * (length / resolution)
    return list(np.meshgrid(*([x] * dim), indexing="ij"))


def wavenumbers(resolution: int, dim: int, length: float = 1.0) -> list[np.ndarray]:
    """Physical wavevector components ``2 pi k_a / L`` broadcast to the grid shape."""
    k = np.fft.fftfreq(resolution, d=1.0 / resolution) * (2 * np.pi / length)
    return list(np.meshgrid(*([k] * dim), indexing="ij"))


def lattice_indices(resolution: int, dim: int) -> list[np.ndarray]:
    k = np.fft.fftfreq(resolution, d=1.0 / resolution)
    return list(np.meshgrid(*([k] * dim), indexing="ij"))


def wavevector_norm(resolution: int, dim: int, length: float = 1.0) -> np.ndarray:
    return np.sqrt(sum(xi**2 for xi in wavenumbers(resolution, dim, length)))


def nyquist_mask(resolution: int, dim: int, axis: int) -> np.ndarray:
    """Boolean mask that is False on the Nyquist plane of ``axis``."""
    idx = lattice_indices(resolution, dim)[axis]
    if resolution % 2:
        return np.ones_like(idx, dtype=bool)
    return idx != -resolution // 2


@dataclass(frozen=True)
class SpectralMultiplier:
    """Fourier multiplier acting on grid fields.

    ``symbol(resolution, dim, length)`` returns the symbol on the FFT lattice,
    either with the grid shape (scalar symbol) or with a leading component
    axis (vector symbol, mapping a scalar field to a vector field).
    """

    symbol: Callable[[int, int, float], np.ndarray]
    description: str = ""

    def __call__(self, f: GridField) -> GridField:
        return self.apply(f)

    def apply(self, f: GridField) -> GridField:
        s = self.symbol(f.resolution, f.dim, f.length)
        if s.ndim == f.dim + 1 and f.is_vector:
            raise ValueError("vector symbol applied to a vector field")
        return GridField.from_hat(s * f.hat, f.dim, f.length)

    def then(self, other: "SpectralMultiplier") -> "SpectralMultiplier":
        """Composition ``other o self`` (both scalar symbols or one vector)."""
        a, b = self.symbol, other.symbol
        return SpectralMultiplier(lambda M, d, L: a(M, d, L) * b(M, d, L), f"{other.description}*{self.description}")


def hermitian_residue(symbol: np.ndarray, dim: int) -> float:
    """Relative deviation of a lattice symbol from ``s(-k) = conj(s(k))``."""
    axes = tuple(range(-dim, 0))
    flipped = np.roll(np.flip(symbol, axis=axes), 1, axis=axes)
    scale = max(float(np.abs(symbol).max()), 1e-300)
    return float(np.abs(flipped - np.conj(symbol)).max() / scale)


def heat_symbol(t: float, diffusivity: float = 1.0) -> Callable:
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")

    def sym(M, d, L):
        return np.exp(-diffusivity * t * wavevector_norm(M, d, L) ** 2)

    return sym


def heat_semigroup(f: GridField, t: float, diffusivity: float = 1.0) -> GridField:
    """``exp(t nu Laplacian) f``; symbol ``exp(-nu t |xi|^2)``."""
    if t < 0:
        raise ValueError(f"heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return GridField.from_hat(heat_symbol(t, diffusivity)(f.resolution, f.dim, f.length) * f.hat, f.dim, f.length)


def bessel_symbol(lam: float) -> Callable:
    def sym(M, d, L):
        return (1.0 + wavevector_norm(M, d, L) ** 2) ** (lam / 2)

    return sym


def bessel_potential(f: GridField, lam: float) -> GridField:
    """``(I - Laplacian)^(lam/2) f``."""
    if lam == 0:
        return f
    return GridField.from_hat(bessel_symbol(lam)(f.resolution, f.dim, f.length) * f.hat, f.dim, f.length)


def gradient_symbol(M: int, d: int, L: float) -> np.ndarray:
    xis = wavenumbers(M, d, L)
    return np.stack([1j * xi * nyquist_mask(M, d, a) for a, xi in enumerate(xis)])


def gradient(f: GridField) -> GridField:
    """Spectral gradient of a scalar field (Nyquist modes dropped)."""
    if f.is_vector:
        raise ValueError("gradient expects a scalar field")
    return GridField.from_hat(gradient_symbol(f.resolution, f.dim, f.length) * f.hat, f.dim, f.length)


def divergence(F: GridField) -> GridField:
    if not F.is_vector or F.ncomp != F.dim:
        raise ValueError("divergence expects a vector field with dim components")
    hat = (gradient_symbol(F.resolution, F.dim, F.length) * F.hat).sum(axis=0)
    return GridField.from_hat(hat, F.dim, F.length)


def laplacian(f: GridField) -> GridField:
    return GridField.from_hat(-wavevector_norm(f.resolution, f.dim, f.length) ** 2 * f.hat, f.dim, f.length)


def convolve(f: GridField, g: GridField) -> GridField:
    """Periodic convolution ``(f*g)(x) = int f(x-y) g(y) dy`` via the spectral product.

    With our coefficient normalisation the convolution has coefficients
    ``L^d * fhat * ghat``.  At most one of the two fields may be vector valued.
    """
    if f.dim != g.dim or f.resolution != g.resolution or f.length != g.length:
        raise ValueError("convolve: fields must share dim, resolution and length")
    if f.is_vector and g.is_vector:
        raise ValueError("convolve: at most one vector-valued factor")
    a, b = f.hat, g.hat
    # explicit real arithmetic keeps f*g == g*f bitwise (complex SIMD products need not)
    re = a.real * b.real - a.imag * b.imag
    im = a.real * b.imag + a.imag * b.real
    return GridField.from_hat((re + 1j * im) * f.length**f.dim, f.dim, f.length)


def dealias_mask(resolution: int, dim: int) -> np.ndarray:
    """True on modes kept by the 2/3 rule (``|k_a| < M/3`` on every axis)."""
    cut = resolution / 3.0
    return np.all([np.abs(k) < cut for k in lattice_indices(resolution, dim)], axis=0)


def dealiased_product(a: GridField, b: GridField) -> GridField:
    """Pointwise product with 2/3-rule truncation of both factors and the result."""
    mask = dealias_mask(a.resolution, a.dim)
    axes = tuple(range(-a.dim, 0))
    M = a.resolution
    av = np.fft.ifftn(a.hat * mask, axes=axes).real * M**a.dim
    bv = np.fft.ifftn(b.hat * mask, axes=axes).real * M**a.dim
    prod = av * bv
    hat = np.fft.fftn(prod, axes=axes) / M**a.dim * mask
    return GridField.from_hat(hat, a.dim, a.length)


def resample(f: GridField, resolution: int) -> GridField:
    """Trigonometric interpolation of ``f`` onto a grid of ``resolution`` points per axis.

    Refining pads with zero modes; coarsening drops modes beyond the new
    Nyquist frequency.  The Nyquist mode of the source is split evenly so the
    result stays real.
    """
    M, d = f.resolution, f.dim
    if resolution == M:
        return f
    lead = f.values.shape[:-d]
    out = np.zeros(lead + (resolution,) * d, dtype=complex)
    src = lattice_indices(M, d)
    if resolution < M:
        # coarsening: the +-resolution/2 pair folds onto one Nyquist mode
        keep = np.all([np.abs(k) <= resolution / 2 for k in src], axis=0)
        dest = tuple(k[keep].astype(int) % resolution for k in src)
        vals = np.moveaxis(f.hat[(...,) + tuple(np.nonzero(keep))], -1, 0)
        flat = np.ravel_multi_index(dest, (resolution,) * d)
        acc = np.zeros((resolution**d,) + lead, dtype=complex)
        np.add.at(acc, flat, vals)
        out = np.moveaxis(acc, 0, -1).reshape(lead + (resolution,) * d)
        return GridField.from_hat(out, d, f.length)
    keep = np.all([np.abs(k) < M / 2 for k in src], axis=0)
    dest = tuple(k[keep].astype(int) % resolution for k in src)
    out[(...,) + dest] = f.hat[(...,) + tuple(np.nonzero(keep))]
    if M % 2 == 0:
        # split the source Nyquist coefficient between +M/2 and -M/2
        for a in range(d):
            sel = src[a] == -M // 2
            for b, k in enumerate(src):
                if b != a:
                    sel = sel & (np.abs(k) < M / 2)
            for sign in (1, -1):
                dst = []
                for b, k in enumerate(src):
                    kk = k[sel].astype(int)
                    dst.append((np.full_like(kk, sign * (M // 2)) if b == a else kk) % resolution)
                out[(...,) + tuple(dst)] += 0.5 * f.hat[(...,) + tuple(np.nonzero(sel))]
    return GridField.from_hat(out, d, f.length)


def random_field(resolution: int, dim: int, rng: np.random.Generator, spectrum: str = "rough",
                 kmax: int | None = None, length: float = 1.0) -> GridField:
    """Random real trigonometric polynomial with random phases.

    ``spectrum``:
      * ``"white"``  -- unit amplitude on every mode ``0 < |k| <= kmax``;
      * ``"rough"``  -- amplitude ``|k|^(-d/2)``, i.e. equal energy in every
        dyadic shell (scale-invariant, the borderline-L^2 case);
      * ``"smooth"`` -- amplitude ``exp(-|k|/4)``.

    The zero mode is set to 0 and the result is scaled to unit L^2 norm.
    """
    if kmax is None:
        kmax = resolution // 2 - 1
    ks = lattice_indices(resolution, dim)
    kn = np.sqrt(sum(k**2 for k in ks))
    keep = (kn > 0) & np.all([np.abs(k) <= kmax for k in ks], axis=0)
    amp = np.zeros_like(kn)
    if spectrum == "white":
        amp[keep] = 1.0
    elif spectrum == "rough":
        amp[keep] = kn[keep] ** (-dim / 2)
    elif spectrum == "smooth":
        amp[keep] = np.exp(-kn[keep] / 4)
    else:
        raise ValueError(f"unknown spectrum {spectrum!r}")
    # antisymmetrised phases give exact Hermitian symmetry, so |hat| = amp
    theta = 2 * np.pi * rng.random(kn.shape)
    flipped = np.roll(np.flip(theta, axis=tuple(range(dim))), 1, axis=tuple(range(dim)))
    axes = tuple(range(dim))
    vals = np.fft.ifftn(amp * np.exp(1j * (theta - flipped)), axes=axes).real
    vals /= np.sqrt(np.mean(vals**2))
    return GridField(vals, dim, length)


def smoothing_exponent_probe(f: GridField, q: float, lam: float, t_grid: Sequence[float]) -> float:
    """Least-squares slope of ``log ||(I-Lap)^(lam/2) grad e^{t Lap} f||_{L^q}`` against ``log t``."""
    from .function_spaces import lq_norm

    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t_grid must be positive")
    if len(t) < 3 or np.log10(t.max() / t.min()) < 2:
        raise ValueError("t_grid must hold at least 3 times spanning 2 decades")
    base = gradient_symbol(f.resolution, f.dim, f.length) * bessel_symbol(lam)(f.resolution, f.dim, f.length) * f.hat
    norms = []
    for ti in t:
        g = GridField.from_hat(base * heat_symbol(ti)(f.resolution, f.dim, f.length), f.dim, f.length)
        norms.append(lq_norm(g, q))
    slope, _ = np.polyfit(np.log(t), np.log(norms), 1)
    return float(slope)
