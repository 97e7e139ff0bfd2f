"""Computable norms on periodic grid fields.

L^q, Bessel potential H^lam_q, Besov B^s_{q,r}, Triebel-Lizorkin F^s_{q,r}
and a dyadic Hoelder estimator, plus negative-smoothness norms of
``S^N - p`` where ``S^N`` is an empirical measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .spectral import GridField, bessel_symbol, lattice_indices, wavevector_norm

__all__ = [
    "DyadicPartition",
    "NormSpec",
    "EmpiricalSpectrum",
    "conj",
    "lq_norm",
    "bessel_norm",
    "dyadic_block",
    "dyadic_blocks",
    "besov_norm",
    "triebel_norm",
    "holder_seminorm",
    "evaluate_norm",
    "empirical_spectrum",
    "measure_minus_field_norm",
    "block_profile",
    "ResolutionError",
]


class ResolutionError(ValueError):
    """A norm or operator cannot be evaluated reliably at the requested resolution."""


def conj(q):
    """Conjugate exponent; exact for ints/Fractions, ``inf`` <-> 1."""
    if q == 1:
        return math.inf
    if q == math.inf:
        return 1
    if isinstance(q, (int, Fraction)):
        return Fraction(q) / (Fraction(q) - 1)
    return q / (q - 1.0)


def _magnitude(f: GridField) -> np.ndarray:
    return np.sqrt((f.values**2).sum(axis=0)) if f.is_vector else np.abs(f.values)


def lq_norm(f: GridField, q: float) -> float:
    """``(int |f|^q dx)^(1/q)`` by the uniform rule; ``q = inf`` gives ``max |f|``.

    Vector fields use the pointwise Euclidean magnitude.
    """
    q = float(q)
    if q < 1:
        raise ValueError(f"L^q norm needs q >= 1, got {q}")
    a = _magnitude(f)
    if math.isinf(q):
        return float(a.max())
    return float((np.sum(a**q) * f.cell_volume) ** (1.0 / q))


def bessel_norm(f: GridField, lam: float, q: float) -> float:
    """``||(I - Laplacian)^(lam/2) f||_{L^q}``."""
    if lam == 0:
        return lq_norm(f, q)
    s = bessel_symbol(lam)(f.resolution, f.dim, f.length)
    return lq_norm(GridField.from_hat(s * f.hat, f.dim, f.length), q)


def _smooth_step(x):
    """C^inf step: 0 for x <= 0, 1 for x >= 1."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class DyadicPartition:
    """Smooth dyadic partition of unity on frequency space.

    ``chi`` equals 1 on ``|xi| <= 1/Lambda`` and vanishes for ``|xi| >= Lambda``;
    ``phi(xi) = chi(xi/2) - chi(xi)`` is supported in the annulus
    ``1/Lambda <= |xi| <= 2 Lambda`` and ``phi_j = phi(2^-j .)``.  For
    ``Lambda < sqrt 2`` the blocks ``phi_i, phi_j`` have disjoint supports as
    soon as ``|i - j| > 1``, and ``chi + sum_j phi_j`` telescopes to 1.

    ``scale`` multiplies the frequency unit (``xi`` is compared against
    ``scale * Lambda``).
    """

    Lambda: float = 1.35
    scale: float = 1.0

    def __post_init__(self):
        if not (1.0 < self.Lambda < math.sqrt(2.0)):
            raise ValueError(f"Lambda must lie in (1, sqrt 2), got {self.Lambda}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    def chi(self, r):
        r = np.asarray(r, dtype=float) / self.scale
        lo, hi = 1.0 / self.Lambda, self.Lambda
        return _smooth_step((hi - r) / (hi - lo))

    def phi(self, r, j: int):
        if j < -1:
            return np.zeros_like(np.asarray(r, dtype=float))
        if j == -1:
            return self.chi(r)
        r = np.asarray(r, dtype=float)
        return self.chi(r / 2.0 ** (j + 1)) - self.chi(r / 2.0**j)

    def j_max(self, resolution: int, dim: int, length: float = 1.0) -> int:
        """Largest block index whose support meets the lattice."""
        rmax = float(wavevector_norm(resolution, dim, length).max())
        j = -1
        # smallest j with chi(2^{-j-1} xi) == 1 on the whole lattice
        while 2.0 ** (j + 1) / self.Lambda * self.scale < rmax:
            j += 1
        return j

    def symbols(self, resolution: int, dim: int, length: float = 1.0) -> list[np.ndarray]:
        """Block symbols ``[phi_-1, phi_0, ..., phi_jmax]`` on the FFT lattice."""
        r = wavevector_norm(resolution, dim, length)
        return [self.phi(r, j) for j in range(-1, self.j_max(resolution, dim, length) + 1)]


def dyadic_blocks(f: GridField, P: DyadicPartition) -> list[GridField]:
    """All Littlewood-Paley blocks ``phi_j(D) f`` for ``j = -1 .. j_max``."""
    return [GridField.from_hat(s * f.hat, f.dim, f.length) for s in P.symbols(f.resolution, f.dim, f.length)]


def dyadic_block(f: GridField, j: int, P: DyadicPartition) -> GridField:
    jm = P.j_max(f.resolution, f.dim, f.length)
    if not (-1 <= j <= jm):
        raise ValueError(f"block index {j} outside [-1, {jm}]")
    s = P.phi(wavevector_norm(f.resolution, f.dim, f.length), j)
    return GridField.from_hat(s * f.hat, f.dim, f.length)


def _check_qr(q, r):
    if not (1 < float(q) < math.inf) or not (1 < float(r) < math.inf):
        raise ValueError(f"Besov/Triebel-Lizorkin indices need 1 < q, r < inf, got q={q}, r={r}")


def _lr(a: np.ndarray, r: float, axis=0) -> np.ndarray:
    return np.sum(np.abs(a) ** r, axis=axis) ** (1.0 / r)


def besov_norm(f: GridField, s: float, q: float, r: float, P: DyadicPartition | None = None) -> float:
    """``|| (2^{js} ||phi_j(D) f||_{L^q})_j ||_{l^r}``, truncated at ``j_max``."""
    _check_qr(q, r)
    P = P or DyadicPartition()
    terms = np.array([2.0 ** (j * s) * lq_norm(b, q) for j, b in enumerate(dyadic_blocks(f, P), start=-1)])
    return float(_lr(terms, float(r)))


def block_profile(f: GridField, s: float, q: float, P: DyadicPartition | None = None) -> list[tuple[int, float]]:
    """Per-block weighted norms ``(j, 2^{js} ||phi_j(D) f||_q)``."""
    P = P or DyadicPartition()
    return [(j, 2.0 ** (j * s) * lq_norm(b, q)) for j, b in enumerate(dyadic_blocks(f, P), start=-1)]


def triebel_norm(f: GridField, s: float, q: float, r: float, P: DyadicPartition | None = None) -> float:
    """``|| (sum_j |2^{js} phi_j(D) f|^r)^(1/r) ||_{L^q}``."""
    _check_qr(q, r)
    P = P or DyadicPartition()
    mags = np.stack([2.0 ** (j * s) * _magnitude(b) for j, b in enumerate(dyadic_blocks(f, P), start=-1)])
    agg = _lr(mags, float(r))
    return lq_norm(GridField(agg, f.dim, f.length), q)


def holder_seminorm(f: GridField, gamma: float, with_sup: bool = True) -> float:
    """Dyadic-separation Hoelder estimator.

    ``max_{a, h} max_x |f(x + h e_a) - f(x)| / h^gamma`` over separations
    ``h = 2^m dx <= L/2``, plus ``||f||_inf`` when ``with_sup``.
    """
    if not (0 < gamma <= 1):
        raise ValueError(f"Hoelder exponent must lie in (0, 1], got {gamma}")
    v = f.values if f.is_vector else f.values[None]
    dx = f.spacing
    semi = 0.0
    m = 1
    while m <= f.resolution // 2:
        h = m * dx
        for a in range(f.dim):
            diff = np.roll(v, -m, axis=1 + a) - v
            semi = max(semi, float(np.sqrt((diff**2).sum(axis=0)).max()) / h**gamma)
        m *= 2
    return semi + (float(_magnitude(f).max()) if with_sup else 0.0)


@dataclass(frozen=True)
class NormSpec:
    """Which norm to evaluate.

    ``kind`` is one of ``"Lq"``, ``"Bessel"``, ``"Besov"``, ``"TriebelLizorkin"``,
    ``"Holder"``; ``s`` doubles as the Bessel order ``lam``.
    """

    kind: str
    s: float = 0.0
    q: float = 2.0
    r: float = 2.0
    gamma: float = 1.0

    KINDS = ("Lq", "Bessel", "Besov", "TriebelLizorkin", "Holder")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; expected one of {self.KINDS}")

    @classmethod
    def lq(cls, q):
        return cls("Lq", q=q)

    @classmethod
    def bessel(cls, lam, q):
        return cls("Bessel", s=lam, q=q)

    @classmethod
    def besov(cls, s, q, r):
        return cls("Besov", s=s, q=q, r=r)

    @classmethod
    def triebel(cls, s, q, r):
        return cls("TriebelLizorkin", s=s, q=q, r=r)

    @classmethod
    def holder(cls, gamma):
        return cls("Holder", gamma=gamma)

    @property
    def smoothness(self) -> float:
        return {"Lq": 0.0, "Holder": self.gamma}.get(self.kind, self.s)

    def label(self) -> str:
        if self.kind == "Lq":
            return f"L^{self.q:g}"
        if self.kind == "Bessel":
            return f"H^{self.s:g}_{self.q:g}"
        if self.kind == "Holder":
            return f"C^{self.gamma:g}"
        letter = "B" if self.kind == "Besov" else "F"
        return f"{letter}^{self.s:g}_{self.q:g},{self.r:g}"

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "Holder":
            d["gamma"] = self.gamma
        else:
            d["q"] = self.q
            if self.kind != "Lq":
                d["s"] = self.s
            if self.kind in ("Besov", "TriebelLizorkin"):
                d["r"] = self.r
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormSpec":
        d = dict(d)
        kind = d.pop("kind")
        if "lam" in d:
            d["s"] = d.pop("lam")
        unknown = set(d) - {"s", "q", "r", "gamma"}
        if unknown:
            raise ValueError(f"unknown norm parameters {sorted(unknown)}")
        return cls(kind, **{k: float(v) for k, v in d.items()})


def evaluate_norm(f: GridField, spec: NormSpec, P: DyadicPartition | None = None) -> float:
    if spec.kind == "Lq":
        return lq_norm(f, spec.q)
    if spec.kind == "Bessel":
        return bessel_norm(f, spec.s, spec.q)
    if spec.kind == "Besov":
        return besov_norm(f, spec.s, spec.q, spec.r, P)
    if spec.kind == "TriebelLizorkin":
        return triebel_norm(f, spec.s, spec.q, spec.r, P)
    return holder_seminorm(f, spec.gamma)


@dataclass(frozen=True, eq=False)
class EmpiricalSpectrum:
    """Fourier coefficients ``(1/N) sum_i exp(-i xi.X^i)`` of an empirical measure.

    ``coefficients`` is centred: index ``k + kmax`` along each axis holds
    lattice frequency ``k``, ``|k|_inf <= kmax``.
    """

    coefficients: np.ndarray
    N: int
    kmax: int
    dim: int
    length: float = 1.0

    def at(self, k) -> complex:
        k = np.atleast_1d(k)
        return complex(self.coefficients[tuple(int(ki) + self.kmax for ki in k)])

    def truncated(self, kmax: int) -> "EmpiricalSpectrum":
        if kmax > self.kmax:
            raise ValueError("cannot extend a spectrum")
        sl = tuple([slice(self.kmax - kmax, self.kmax + kmax + 1)] * self.dim)
        return EmpiricalSpectrum(self.coefficients[sl], self.N, kmax, self.dim, self.length)


def empirical_spectrum(positions: np.ndarray, kmax: int, length: float = 1.0, chunk: int = 8192) -> EmpiricalSpectrum:
    """Exact empirical characteristic function on ``|k|_inf <= kmax``.

    ``positions`` may be an ``(N, d)`` array or any object with ``positions``
    and ``length`` attributes (a particle ensemble).
    """
    if hasattr(positions, "positions"):
        length = positions.length
        positions = positions.positions
    X = np.asarray(positions, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, d = X.shape
    if N == 0:
        raise ValueError("empirical spectrum of an empty ensemble")
    ks = np.arange(-kmax, kmax + 1)
    out = np.zeros((2 * kmax + 1,) * d, dtype=complex)
    for start in range(0, N, chunk):
        Xc = X[start:start + chunk]
        E = [np.exp(-2j * np.pi / length * np.outer(Xc[:, a], ks)) for a in range(d)]
        if d == 1:
            out += E[0].sum(axis=0)
        elif d == 2:
            out += E[0].T @ E[1]
        else:
            out += np.einsum("ia,ib,ic->abc", E[0], E[1], E[2])
    out /= N
    out[(kmax,) * d] = 1.0
    return EmpiricalSpectrum(out, N, kmax, d, length)


def _pow2_at_least(n: int) -> int:
    return 1 << max(0, int(math.ceil(math.log2(max(n, 1)))))


def _difference_field(spec: EmpiricalSpectrum, p: GridField | None, kmax: int) -> GridField:
    """Band-limited grid field of ``S^N - p`` (modes ``|k|_inf <= kmax``)."""
    d, L = spec.dim, spec.length
    M = _pow2_at_least(2 * kmax + 2)
    if p is not None:
        M = max(M, p.resolution)
    hat = np.zeros((M,) * d, dtype=complex)
    ks = lattice_indices(M, d)
    inside = np.all([np.abs(k) <= kmax for k in ks], axis=0)
    idx = tuple((k[inside].astype(int) + spec.kmax) for k in ks)
    hat[inside] = spec.coefficients[idx] / L**d
    if p is not None:
        if p.dim != d or p.length != L:
            raise ValueError("field and spectrum live on different domains")
        ph = np.zeros_like(hat)
        pk = lattice_indices(p.resolution, d)
        pin = np.all([np.abs(k) <= kmax for k in pk], axis=0)
        if p.resolution % 2 == 0:
            pin &= np.all([k != -p.resolution // 2 for k in pk], axis=0)
        dest = tuple((k[pin].astype(int)) % M for k in pk)
        ph[dest] = p.hat[pin]
        hat -= ph
    return GridField.from_hat(hat, d, L)


def measure_minus_field_norm(spec: EmpiricalSpectrum, p: GridField | None, space: NormSpec,
                             P: DyadicPartition | None = None, kmax: int | None = None,
                             check_convergence: bool = True, rtol: float = 0.01) -> float:
    """Negative-smoothness norm of the distribution ``S^N - p``.

    The distribution is band-limited to ``|k|_inf <= kmax`` (default: the
    spectrum's own cutoff) and evaluated on a grid.  With
    ``check_convergence`` the value at ``kmax/2`` must agree within ``rtol``;
    otherwise :class:`ResolutionError` is raised.
    """
    if space.kind in ("Lq", "Holder") or space.s >= 0:
        raise ValueError(
            f"{space.label()} has non-negative smoothness: the norm of an atomic measure diverges "
            "with the frequency cutoff; use a space with s < 0")
    kmax = spec.kmax if kmax is None else kmax

    def value(km):
        return evaluate_norm(_difference_field(spec, p, km), space, P)

    v = value(kmax)
    if check_convergence and kmax >= 4:
        v_half = value(kmax // 2)
        change = abs(v - v_half) / max(abs(v), 1e-300)
        if change >= rtol:
            raise ResolutionError(
                f"{space.label()} norm changed by {change:.2%} between kmax={kmax // 2} and {kmax}; "
                "increase kmax")
    return v
