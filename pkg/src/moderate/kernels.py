"""Interaction kernels, the mollifier and its moderate rescaling."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, special

from .function_spaces import DyadicPartition, NormSpec, evaluate_norm, lq_norm
from .spectral import GridField, grid_coords, lattice_indices, random_field, wavenumbers

__all__ = [
    "Kernel",
    "Mollifier",
    "mollifier_scale",
    "kernel_apply",
    "effective_pair_force",
    "verify_kernel_assumption",
    "KernelAssumptionReport",
]


@dataclass(frozen=True)
class Kernel:
    """Convolution kernel represented by the Fourier multiplier of ``f -> K * f``.

    ``multiplier(M, d, L)`` returns either a vector symbol of shape
    ``(d, M, ..., M)`` or a scalar symbol with the grid shape.
    """

    form: str
    multiplier: Callable[[int, int, float], np.ndarray]
    singular: bool = False
    dim: int | None = None
    params: Mapping = field(default_factory=dict)

    @classmethod
    def zero(cls, dim: int) -> "Kernel":
        return cls("Zero", lambda M, d, L: np.zeros((d,) + (M,) * d), dim=dim)

    @classmethod
    def smooth_trig(cls, modes: Mapping, dim: int) -> "Kernel":
        """Finite Fourier series ``K(x) = sum_k c_k exp(i xi_k . x)``.

        ``modes`` maps integer lattice vectors (int for d=1) to complex
        coefficient vectors of length ``dim``; the conjugate partner at
        ``-k`` is added automatically when absent so ``K`` is real.
        """
        coeffs: dict[tuple, np.ndarray] = {}
        for k, c in modes.items():
            k = (k,) if np.isscalar(k) else tuple(int(x) for x in k)
            c = np.atleast_1d(np.asarray(c, dtype=complex))
            if len(k) != dim or c.shape != (dim,):
                raise ValueError(f"mode {k} with coefficient shape {c.shape} does not match dim={dim}")
            coeffs[k] = c
        for k, c in list(coeffs.items()):
            mk = tuple(-x for x in k)
            if mk not in coeffs:
                coeffs[mk] = np.conj(c)
            elif not np.allclose(coeffs[mk], np.conj(c)):
                raise ValueError(f"coefficients at {k} and {mk} are not conjugate")

        def mult(M, d, L):
            out = np.zeros((d,) + (M,) * d, dtype=complex)
            for k, c in coeffs.items():
                if max(abs(x) for x in k) >= M // 2:
                    raise ValueError(f"mode {k} not resolvable at resolution {M}")
                idx = tuple(x % M for x in k)
                for a in range(d):
                    out[(a,) + idx] = L**d * c[a]
            return out

        return cls("SmoothTrig", mult, dim=dim, params={"modes": {str(k): [complex(x) for x in c] for k, c in coeffs.items()}})

    @classmethod
    def sine_series(cls, amplitudes: Mapping[int, float]) -> "Kernel":
        """1-d odd kernel ``K(x) = sum_m a_m sin(2 pi m x)`` on the unit torus."""
        modes = {m: [a / 2j] for m, a in amplitudes.items()}
        k = cls.smooth_trig(modes, dim=1)
        return Kernel("SmoothTrig", k.multiplier, dim=1, params={"sine_amplitudes": dict(amplitudes)})

    @classmethod
    def biot_savart(cls) -> "Kernel":
        """2-d Biot-Savart law, multiplier ``i xi_perp / |xi|^2`` with ``xi_perp = (-xi_2, xi_1)``."""
        def mult(M, d, L):
            if d != 2:
                raise ValueError("Biot-Savart kernel requires d = 2")
            x1, x2 = wavenumbers(M, 2, L)
            n2 = x1**2 + x2**2
            n2[0, 0] = 1.0
            out = np.stack([-1j * x2 / n2, 1j * x1 / n2])
            out[:, 0, 0] = 0.0
            # odd symbol: drop Nyquist planes to keep the map real
            ks = lattice_indices(M, 2)
            nyq = (ks[0] == -M // 2) | (ks[1] == -M // 2)
            out[:, nyq] = 0.0
            return out

        return cls("BiotSavart2d", mult, singular=True, dim=2)

    @classmethod
    def bessel_singular(cls, a: float) -> "Kernel":
        """Vector multiplier ``(1+|xi|^2)^(-a/2) i xi/|xi|`` (zero at ``xi = 0``)."""
        def mult(M, d, L):
            xis = wavenumbers(M, d, L)
            n = np.sqrt(sum(x**2 for x in xis))
            safe = np.where(n > 0, n, 1.0)
            ks = lattice_indices(M, d)
            out = []
            for b, x in enumerate(xis):
                c = (1 + n**2) ** (-a / 2) * 1j * x / safe
                c[n == 0] = 0.0
                c[ks[b] == -M // 2] = 0.0
                out.append(c)
            return np.stack(out)

        return cls("BesselSingular", mult, singular=a < 1, params={"a": a})

    @classmethod
    def custom(cls, multiplier: Callable, label: str = "CustomSymbol", singular: bool = False) -> "Kernel":
        return cls("CustomSymbol", multiplier, singular=singular, params={"label": label})

    def is_zero(self) -> bool:
        return self.form == "Zero"


def kernel_apply(K: Kernel, f: GridField) -> GridField:
    """``K * f`` through the spectral product."""
    if f.is_vector:
        raise ValueError("kernel_apply expects a scalar field")
    if K.dim is not None and K.dim != f.dim:
        raise ValueError(f"{K.form} kernel has dim {K.dim}, field has dim {f.dim}")
    s = K.multiplier(f.resolution, f.dim, f.length)
    return GridField.from_hat(s * f.hat, f.dim, f.length)


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Smooth compactly supported probability density ``V`` on R^d.

    The profile is the normalised bump ``c_d exp(-1/(1-|y|^2))`` on the unit
    ball; ``beta`` is the moderate scaling exponent in
    ``V^N(x) = N^beta V(N^(beta/d) x)``.
    """

    beta: float
    support_radius: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    @staticmethod
    def normalisation(dim: int) -> float:
        area = 2 * math.pi ** (dim / 2) / special.gamma(dim / 2)
        radial, _ = integrate.quad(lambda r: r ** (dim - 1) * math.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                                   epsabs=1e-15, epsrel=1e-13)
        return 1.0 / (area * radial)

    def width(self, N: int, dim: int) -> float:
        """Support radius of ``V^N``."""
        return self.support_radius * N ** (-self.beta / dim)

    def required_resolution(self, N: int, dim: int, length: float = 1.0) -> int:
        """Smallest grid size meeting ``dx <= width/4`` (and ``M >= 4 N^(beta/d)`` on the unit torus)."""
        return int(math.ceil(4.0 * length / self.width(N, dim) - 1e-9))

    def value(self, x: np.ndarray, N: int, dim: int) -> np.ndarray:
        """``V^N`` at displacements ``x`` of shape ``(..., dim)`` (no periodisation)."""
        s = N ** (self.beta / dim) / self.support_radius
        r2 = np.sum((np.asarray(x) * s) ** 2, axis=-1)
        return N**self.beta * self.normalisation(dim) * _bump(r2) / self.support_radius**dim

    def gradient(self, x: np.ndarray, N: int, dim: int) -> np.ndarray:
        """``grad V^N`` at displacements ``x`` of shape ``(..., dim)``."""
        s = N ** (self.beta / dim) / self.support_radius
        y = np.asarray(x) * s
        r2 = np.sum(y**2, axis=-1)
        b = _bump(r2)
        inside = r2 < 1.0
        fac = np.zeros_like(r2)
        fac[inside] = -2.0 / (1.0 - r2[inside]) ** 2
        amp = N**self.beta * self.normalisation(dim) / self.support_radius**dim
        return amp * (b * fac)[..., None] * y * s


def _periodised_samples(func: Callable, resolution: int, dim: int, length: float, radius: float) -> np.ndarray:
    coords = np.stack(grid_coords(resolution, dim, length), axis=-1)
    coords = np.where(coords > length / 2, coords - length, coords)
    n_img = int(math.ceil(radius / length))
    out = np.zeros((resolution,) * dim)
    for shift in itertools.product(range(-n_img, n_img + 1), repeat=dim):
        out += func(coords + length * np.asarray(shift, dtype=float))
    return out


def mollifier_scale(m: Mollifier, N: int, dim: int, resolution: int, length: float = 1.0,
                    normalise: bool = True) -> GridField:
    """Periodised grid samples of ``V^N`` centred at the origin.

    Refuses grids that do not resolve the mollifier (``dx > width/4``).  With
    ``normalise`` the discrete mass is rescaled to exactly 1.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    need = m.required_resolution(N, dim, length)
    if resolution < need:
        raise ValueError(
            f"resolution {resolution} under-resolves V^N (N={N}, beta={m.beta}, d={dim}); "
            f"need at least {need} points per axis")
    vals = _periodised_samples(lambda x: m.value(x, N, dim), resolution, dim, length, m.width(N, dim))
    if normalise:
        vals = vals / (vals.sum() * (length / resolution) ** dim)
    return GridField(vals, dim, length)


def effective_pair_force(K: Kernel, m: Mollifier, N: int, dim: int, resolution: int, length: float = 1.0) -> GridField:
    """Grid field ``K * V^N`` (smooth even for singular ``K``)."""
    return kernel_apply(K, mollifier_scale(m, N, dim, resolution, length))


@dataclass
class KernelAssumptionReport:
    C_K: float
    ratios: np.ndarray
    C_K_refined: float
    growth: float
    violated: bool

    @property
    def spread(self) -> float:
        return float(self.ratios.max() / self.ratios.min())


def verify_kernel_assumption(K: Kernel, q: float, lam: float, r: float, trials: int = 20, dim: int = 1,
                             resolution: int = 128, space: str = "Besov", seed: int = 0,
                             growth_tol: float = 1.25, P: DyadicPartition | None = None) -> KernelAssumptionReport:
    """Empirical constant in ``||K * f||_{E^lam_{q,r}} <= C_K ||f||_{L^q}``.

    Ratios are taken over ``trials`` rough random fields at ``resolution`` and
    again at twice the resolution; the hypothesis is flagged as violated when
    the estimate grows by more than ``growth_tol`` under refinement.
    """
    if lam <= dim / q:
        raise ValueError(f"need lam > d/q, got lam={lam}, d/q={dim / q}")
    spec = NormSpec(space if space != "Triebel" else "TriebelLizorkin", s=lam, q=q, r=r)

    def estimate(M):
        rng = np.random.default_rng(seed)
        ratios = []
        for _ in range(trials):
            f = random_field(M, dim, rng, "rough")
            g = kernel_apply(K, f)
            comps = [g.component(a) for a in range(g.ncomp)] if g.is_vector else [g]
            val = math.sqrt(sum(evaluate_norm(c, spec, P) ** 2 for c in comps))
            ratios.append(val / lq_norm(f, q))
        return np.array(ratios)

    ratios = estimate(resolution)
    fine = estimate(2 * resolution)
    C, Cf = float(ratios.max()), float(fine.max())
    growth = Cf / C if C > 0 else 1.0
    return KernelAssumptionReport(C, ratios, Cf, growth, bool(growth > growth_tol))
