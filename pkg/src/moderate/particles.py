"""Euler-Maruyama simulation of moderately interacting particle systems.

Two systems are covered:

* the torus system ``dX^i = (K * V^N * S^N)(X^i) dt + sqrt(2 nu) dW^i``;
* the box system ``dX^i = (alpha(t, X^i) + b(X^i, p^N(X^i))) dt + sqrt(2 nu) dW^i``
  used for the mean-field game (``nu = 1/2``, unit noise).

Particle/grid transfer uses tensor-product B-spline stencils (linear or
cubic); deposition and interpolation share weights and are exact adjoints.
Noise is counter based: step ``n`` of a run seeded with ``seed`` draws from a
Philox stream keyed by ``(seed, n)`` and particle ``i`` takes row
``labels[i]``, so relabelling particles permutes their noise with them.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .function_spaces import EmpiricalSpectrum
from .kernels import Kernel, Mollifier, mollifier_scale
from .spectral import GridField, convolve, heat_symbol, lattice_indices

__all__ = [
    "ParticleEnsemble",
    "SdeConfig",
    "Trajectory",
    "MartingalePath",
    "sample_from_density",
    "uniform_ensemble",
    "gaussian_increments",
    "stencil",
    "deposit",
    "interpolate",
    "mollified_density",
    "pair_with_test",
    "torus_drift",
    "force_symbol",
    "direct_torus_drift",
    "step_torus",
    "step_box",
    "simulate_torus",
    "simulate_box",
    "martingale_diagnostic",
    "direct_kernel_sum",
    "spectrum_by_deposit",
]


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """``N`` particle positions in ``[0, L)^d`` at time ``t``."""

    positions: np.ndarray
    t: float = 0.0
    seed: int = 0
    labels: np.ndarray | None = None
    length: float = 1.0
    step: int = 0

    def __post_init__(self):
        X = np.asarray(self.positions, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if not np.all(np.isfinite(X)):
            raise FloatingPointError(f"non-finite particle positions at t={self.t}")
        X = np.mod(X, self.length)
        X[X >= self.length] = 0.0
        object.__setattr__(self, "positions", X)
        labels = np.arange(X.shape[0]) if self.labels is None else np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per particle")
        object.__setattr__(self, "labels", labels)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def permuted(self, perm: np.ndarray) -> "ParticleEnsemble":
        return replace(self, positions=self.positions[perm], labels=self.labels[perm])


@dataclass(frozen=True)
class SdeConfig:
    """Time stepping parameters.

    ``diffusivity`` is ``nu`` in ``sqrt(2 nu) dW`` (1 for the torus system,
    1/2 for the box/game system).
    """

    dt: float = 1e-3
    T: float = 0.1
    interpolation: str = "cubic"
    seed: int = 0
    diffusivity: float = 1.0
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if not (0 < self.dt <= 1e-2):
            raise ValueError(f"dt must lie in (0, 1e-2], got {self.dt}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"interpolation must be 'linear' or 'cubic', got {self.interpolation!r}")
        if self.scheme != "euler_maruyama":
            raise ValueError("only the Euler-Maruyama scheme is implemented")
        if self.diffusivity < 0:
            raise ValueError("diffusivity must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def check_drift_bound(self, max_drift: float) -> None:
        if max_drift > 0 and self.dt > 0.5 / max_drift:
            raise ValueError(f"dt={self.dt} exceeds the drift stability bound 0.5/max|drift| = {0.5 / max_drift:.3g}")


def gaussian_increments(seed: int, step: int, labels: np.ndarray, dim: int) -> np.ndarray:
    """Standard normal draws for ``step``, one row per particle label."""
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, step], dtype=np.uint64)))
    n = int(labels.max()) + 1 if labels.size else 0
    return gen.standard_normal((n, dim))[labels]


def uniform_ensemble(N: int, dim: int, seed: int = 0, length: float = 1.0) -> ParticleEnsemble:
    rng = np.random.default_rng([seed, 0xA11])
    return ParticleEnsemble(rng.random((N, dim)) * length, seed=seed, length=length)


def sample_from_density(p: GridField, N: int, seed: int = 0, interpolation: str = "cubic") -> ParticleEnsemble:
    """I.i.d. samples from the grid density ``p`` by rejection against its interpolant."""
    rng = np.random.default_rng([seed, 0x5A3])
    vmax = float(p.values.max()) * 1.05
    out = np.empty((0, p.dim))
    while out.shape[0] < N:
        m = max(2 * (N - out.shape[0]), 64)
        X = rng.random((m, p.dim)) * p.length
        vals = interpolate(p, X, interpolation)
        keep = rng.random(m) * vmax < vals
        out = np.vstack([out, X[keep]])
    return ParticleEnsemble(out[:N], seed=seed, length=p.length)


def stencil(X: np.ndarray, resolution: int, length: float, kind: str = "cubic"):
    """Per-axis grid indices and B-spline weights, each of shape ``(N, d, s)``."""
    u = X / (length / resolution)
    base = np.floor(u)
    f = u - base
    base = base.astype(np.int64)
    if kind == "linear":
        offs = np.array([0, 1])
        w = np.stack([1 - f, f], axis=-1)
    elif kind == "cubic":
        offs = np.array([-1, 0, 1, 2])
        f2, f3 = f * f, f * f * f
        w = np.stack([(1 - f) ** 3 / 6, (3 * f3 - 6 * f2 + 4) / 6, (-3 * f3 + 3 * f2 + 3 * f + 1) / 6, f3 / 6], axis=-1)
    else:
        raise ValueError(f"unknown stencil {kind!r}")
    idx = (base[..., None] + offs) % resolution
    return idx, w


def _flat_weights(X, resolution, length, kind):
    idx, w = stencil(X, resolution, length, kind)
    N, d, s = idx.shape
    for combo in itertools.product(range(s), repeat=d):
        flat = np.zeros(N, dtype=np.int64)
        wt = np.ones(N)
        for a, c in enumerate(combo):
            flat = flat * resolution + idx[:, a, c]
            wt = wt * w[:, a, c]
        yield flat, wt


def deposit(X: np.ndarray, resolution: int, length: float = 1.0, weights: np.ndarray | None = None,
            kind: str = "cubic") -> np.ndarray:
    """Grid density of ``sum_i weights_i delta_{X_i}`` (default weights ``1/N``).

    ``weights`` may carry a trailing component axis; the result then has a
    leading component axis.
    """
    X = np.atleast_2d(X)
    N, d = X.shape
    w_in = np.full(N, 1.0 / N) if weights is None else np.asarray(weights, dtype=float)
    vec = w_in.ndim == 2
    comps = w_in.T if vec else w_in[None]
    out = np.zeros((comps.shape[0], resolution**d))
    for flat, wt in _flat_weights(X, resolution, length, kind):
        for c in range(comps.shape[0]):
            out[c] += np.bincount(flat, weights=wt * comps[c], minlength=resolution**d)
    out /= (length / resolution) ** d
    out = out.reshape((comps.shape[0],) + (resolution,) * d)
    return out if vec else out[0]


def interpolate(F: GridField, X: np.ndarray, kind: str = "cubic") -> np.ndarray:
    """Values of ``F`` at ``X`` with the adjoint of :func:`deposit`.

    Returns ``(N,)`` for scalar fields and ``(N, ncomp)`` for vector fields.
    """
    X = np.atleast_2d(X)
    vals = F.values.reshape(F.ncomp, -1)
    out = np.zeros((X.shape[0], F.ncomp))
    for flat, wt in _flat_weights(X, F.resolution, F.length, kind):
        out += wt[:, None] * vals[:, flat].T
    return out if F.is_vector else out[:, 0]


def _transfer_symbol(resolution: int, dim: int, kind: str) -> np.ndarray:
    """Fourier symbol of the deposition stencil (product of sinc powers)."""
    power = 2 if kind == "linear" else 4
    out = np.ones((resolution,) * dim)
    for k in lattice_indices(resolution, dim):
        out = out * np.sinc(k / resolution) ** power
    return out


def mollified_density(ens: ParticleEnsemble, Vn: GridField, kind: str = "cubic") -> GridField:
    """``p^N = V^N * S^N`` on the grid of ``Vn`` (deposit, then spectral convolution)."""
    if Vn.dim != ens.dim or Vn.length != ens.length:
        raise ValueError("mollifier grid and ensemble live on different domains")
    S = GridField(deposit(ens.positions, Vn.resolution, ens.length, kind=kind), ens.dim, ens.length)
    return convolve(S, Vn)


def pair_with_test(ens: ParticleEnsemble, phi: GridField, kind: str = "cubic") -> float:
    """``<S^N, phi> = (1/N) sum_i phi(X^i)`` with stencil interpolation."""
    return float(np.mean(interpolate(phi, ens.positions, kind)))


def torus_drift(ens: ParticleEnsemble, force_hat: np.ndarray, resolution: int, kind: str = "cubic") -> np.ndarray:
    """``(K * V^N * S^N)(X^i)`` from the precomputed symbol of ``K * V^N``.

    ``force_hat`` already contains the stencil compensation (see
    :func:`force_symbol`), so transfer smoothing cancels to leading order.
    """
    d = ens.dim
    S = GridField(deposit(ens.positions, resolution, ens.length, kind=kind), d, ens.length)
    F = GridField.from_hat(force_hat * S.hat, d, ens.length)
    return interpolate(F, ens.positions, kind)


def force_symbol(K: Kernel, Vn: GridField, kind: str = "cubic") -> np.ndarray:
    """Spectral coefficients multiplying ``hat(S)`` to give ``K * V^N * S`` on the grid.

    Divides by the squared stencil symbol so that deposit + interpolate
    reproduces the pair sum up to aliasing.
    """
    mult = K.multiplier(Vn.resolution, Vn.dim, Vn.length)
    comp = _transfer_symbol(Vn.resolution, Vn.dim, kind) ** 2
    return mult * Vn.length**Vn.dim * Vn.hat / comp


def direct_torus_drift(ens: ParticleEnsemble, K: Kernel, Vn: GridField, tol: float = 1e-14) -> np.ndarray:
    """O(N^2) drift ``(1/N) sum_k (K * V^N)(X^i - X^k)`` by exact trigonometric evaluation.

    ``K * V^N`` is taken as the band-limited Fourier series of the grid field;
    only modes with non-negligible coefficients are summed.
    """
    d, L = ens.dim, ens.length
    G = K.multiplier(Vn.resolution, d, L) * Vn.hat * L**d      # coefficients of K*V^N
    mag = np.abs(G).max(axis=0)
    sel = np.nonzero(mag > tol * max(mag.max(), 1e-300))
    ks = np.stack([lattice_indices(Vn.resolution, d)[a][sel] for a in range(d)], axis=1)
    coef = G[(slice(None),) + sel]                             # (d, modes)
    X = ens.positions
    out = np.zeros((ens.N, d))
    for i in range(ens.N):
        z = X[i] - X                                           # (N, d)
        ph = np.exp(2j * np.pi / L * z @ ks.T)                 # (N, modes)
        out[i] = (ph.mean(axis=0) @ coef.T).real
    return out


def step_torus(ens: ParticleEnsemble, force_hat: np.ndarray, resolution: int, cfg: SdeConfig,
               noise: np.ndarray | None = None) -> tuple[ParticleEnsemble, np.ndarray]:
    """One Euler-Maruyama step of the torus system.

    Returns the new ensemble and the standard normal draws used.
    """
    drift = torus_drift(ens, force_hat, resolution, cfg.interpolation)
    xi = gaussian_increments(ens.seed, ens.step, ens.labels, ens.dim) if noise is None else noise
    X = ens.positions + drift * cfg.dt + math.sqrt(2 * cfg.diffusivity * cfg.dt) * xi
    if not np.all(np.isfinite(X)):
        raise FloatingPointError(f"particle positions became non-finite at step {ens.step}")
    return replace(ens, positions=X, t=ens.t + cfg.dt, step=ens.step + 1), xi


def step_box(ens: ParticleEnsemble, alpha: GridField | None, b: Callable | None, p_N: GridField | None,
             cfg: SdeConfig, noise: np.ndarray | None = None) -> tuple[ParticleEnsemble, np.ndarray]:
    """One Euler-Maruyama step of the box system.

    ``alpha`` is the vector field at the current time (or None), ``b(x, u)``
    maps positions ``(N, d)`` and density values ``(N,)`` to ``(N, d)``.
    """
    X0 = ens.positions
    drift = np.zeros_like(X0)
    if alpha is not None:
        a = interpolate(alpha, X0, cfg.interpolation)
        drift += a.reshape(X0.shape)
    if b is not None:
        u = interpolate(p_N, X0, cfg.interpolation) if p_N is not None else np.zeros(ens.N)
        drift += np.asarray(b(X0, u), dtype=float).reshape(X0.shape)
    xi = gaussian_increments(ens.seed, ens.step, ens.labels, ens.dim) if noise is None else noise
    X = X0 + drift * cfg.dt + math.sqrt(2 * cfg.diffusivity * cfg.dt) * xi
    if not np.all(np.isfinite(X)):
        raise FloatingPointError(f"particle positions became non-finite at step {ens.step}")
    return replace(ens, positions=X, t=ens.t + cfg.dt, step=ens.step + 1), xi


@dataclass
class Trajectory:
    """Checkpointed particle path.

    ``snapshots`` holds ensembles at the checkpoint steps; with noise
    retention ``positions`` and ``increments`` hold every step (the
    increments are ``sqrt(dt) * xi``, i.e. Brownian increments of unit
    variance per unit time).
    """

    snapshots: list[ParticleEnsemble]
    dt: float
    positions: list[np.ndarray] = field(default_factory=list)
    increments: list[np.ndarray] = field(default_factory=list)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    @property
    def retains_noise(self) -> bool:
        return bool(self.increments)


def _checkpoint_steps(cfg: SdeConfig, checkpoints: int | Sequence[float]) -> set[int]:
    n = cfg.n_steps
    if isinstance(checkpoints, int):
        return {int(round(i * n / (checkpoints - 1))) for i in range(checkpoints)}
    return {int(round(t / cfg.dt)) for t in checkpoints}


def simulate_torus(ens: ParticleEnsemble, K: Kernel, m: Mollifier, cfg: SdeConfig, resolution: int,
                   checkpoints: int | Sequence[float] = 17, retain_noise: bool = False,
                   zero_noise: bool = False, on_checkpoint: Callable | None = None) -> Trajectory:
    """Run the torus system from ``ens`` to ``cfg.T``."""
    Vn = mollifier_scale(m, ens.N, ens.dim, resolution, ens.length)
    fh = force_symbol(K, Vn, cfg.interpolation)
    keep = _checkpoint_steps(cfg, checkpoints)
    ens = replace(ens, seed=cfg.seed)
    traj = Trajectory([], cfg.dt)
    zero = np.zeros((ens.N, ens.dim)) if zero_noise else None
    for n in range(cfg.n_steps + 1):
        if n in keep:
            traj.snapshots.append(ens)
            if on_checkpoint is not None:
                on_checkpoint(ens)
        if n == cfg.n_steps:
            break
        new, xi = step_torus(ens, fh, resolution, cfg, noise=zero)
        if retain_noise:
            traj.positions.append(ens.positions)
            traj.increments.append(math.sqrt(cfg.dt) * xi)
        ens = new
    return traj


def simulate_box(ens: ParticleEnsemble, alpha_path: Callable[[int], GridField | None], b: Callable | None,
                 m: Mollifier, cfg: SdeConfig, resolution: int, checkpoints: int | Sequence[float] = 17,
                 on_checkpoint: Callable | None = None) -> Trajectory:
    """Run the box system; ``alpha_path(n)`` gives the feedback field at step ``n``."""
    Vn = mollifier_scale(m, ens.N, ens.dim, resolution, ens.length) if b is not None else None
    keep = _checkpoint_steps(cfg, checkpoints)
    ens = replace(ens, seed=cfg.seed)
    traj = Trajectory([], cfg.dt)
    for n in range(cfg.n_steps + 1):
        if n in keep:
            traj.snapshots.append(ens)
            if on_checkpoint is not None:
                on_checkpoint(ens)
        if n == cfg.n_steps:
            break
        pN = mollified_density(ens, Vn, cfg.interpolation) if Vn is not None else None
        ens, _ = step_box(ens, alpha_path(n), b, pN, cfg)
    return traj


def spectrum_by_deposit(ens: ParticleEnsemble, kmax: int, oversample: int = 16) -> EmpiricalSpectrum:
    """Empirical characteristic function from a cubic deposit and one FFT.

    The deposit grid has ``oversample * kmax`` points per axis (rounded up to
    a power of two); dividing by the B-spline symbol leaves an aliasing error
    of relative size about ``oversample^-4`` at the top mode.  Use
    :func:`moderate.function_spaces.empirical_spectrum` for exact values.
    """
    d, L = ens.dim, ens.length
    M = 1 << int(math.ceil(math.log2(max(oversample * kmax, 8))))
    S = deposit(ens.positions, M, L, kind="cubic")
    hat = np.fft.fftn(S) / M**d * L**d / _transfer_symbol(M, d, "cubic")
    idx = np.arange(-kmax, kmax + 1) % M
    out = hat[np.ix_(*([idx] * d))]
    out[(kmax,) * d] = 1.0
    return EmpiricalSpectrum(out, ens.N, kmax, d, L)


def direct_kernel_sum(X: np.ndarray, weights: np.ndarray, func: Callable, radius: float, resolution: int,
                      length: float = 1.0, chunk: int = 4096) -> np.ndarray:
    """Grid values of ``sum_i func(x - X_i, i)`` for a kernel supported in ``|y| < radius``.

    ``func(disp, w)`` receives displacements ``(n, d)`` and the matching rows
    of ``weights`` and returns ``(n,)`` contributions.  Periodic images are
    picked up automatically when the support exceeds the box.
    """
    X = np.atleast_2d(X)
    N, d = X.shape
    dx = length / resolution
    w = int(math.ceil(radius / dx)) + 1
    offs = np.arange(-w, w + 1)
    out = np.zeros(resolution**d)
    for start in range(0, N, chunk):
        Xc = X[start:start + chunk]
        Wc = weights[start:start + chunk]
        base = np.floor(Xc / dx).astype(np.int64)
        for combo in itertools.product(offs, repeat=d):
            node = base + np.asarray(combo)
            disp = node * dx - Xc
            r2 = (disp**2).sum(axis=1)
            sel = r2 < radius**2
            if not sel.any():
                continue
            flat = np.zeros(sel.sum(), dtype=np.int64)
            for a in range(d):
                flat = flat * resolution + node[sel, a] % resolution
            out += np.bincount(flat, weights=func(disp[sel], Wc[sel]), minlength=resolution**d)
    return out.reshape((resolution,) * d)


@dataclass
class MartingalePath:
    """Stochastic convolution ``M^N`` at the requested times."""

    times: np.ndarray
    fields: list[GridField]
    norms: dict[str, np.ndarray]

    def sup(self, name: str) -> float:
        return float(np.max(self.norms[name]))


def martingale_diagnostic(traj: Trajectory, m: Mollifier, N: int, resolution: int,
                          times: Sequence[float] | None = None, norms: dict[str, Callable] | None = None,
                          diffusivity: float = 1.0, method: str = "deposit", kind: str = "cubic") -> MartingalePath:
    """Discrete stochastic convolution ``M_{n+1} = e^{dt nu Lap} M_n + (1/N) sum_i grad V^N(. - X^i_n) . dW^i_n``.

    ``method="direct"`` evaluates ``grad V^N`` exactly at grid nodes;
    ``method="deposit"`` deposits the weighted increments and convolves with
    the sampled gradient spectrally, compensating the stencil symbol.
    """
    from .function_spaces import lq_norm

    if not traj.retains_noise:
        raise ValueError("trajectory does not retain noise increments; rerun with retain_noise=True")
    first = traj.snapshots[0]
    d, L = first.dim, first.length
    dt = traj.dt
    norms = norms or {"L2": lambda f: lq_norm(f, 2)}
    n_steps = len(traj.increments)
    want = np.arange(n_steps + 1) if times is None else np.unique([int(round(t / dt)) for t in times])
    if method == "deposit":
        Vn = mollifier_scale(m, N, d, resolution, L)
        grad_hat = np.stack([1j * xi for xi in _wavevecs(resolution, d, L)]) * Vn.hat * L**d
        grad_hat /= _transfer_symbol(resolution, d, kind)
    heat = heat_symbol(dt, diffusivity)(resolution, d, L)
    M_hat = np.zeros((resolution,) * d, dtype=complex)
    out_t, out_f = [], []
    out_n = {k: [] for k in norms}

    def record(n):
        f = GridField.from_hat(M_hat, d, L)
        out_t.append(n * dt + first.t)
        out_f.append(f)
        for k, fn in norms.items():
            out_n[k].append(fn(f))

    if 0 in want:
        record(0)
    for n in range(n_steps):
        X, dW = traj.positions[n], traj.increments[n]
        if method == "direct":
            inc = direct_kernel_sum(X, dW / N, lambda disp, w: np.sum(m.gradient(disp, N, d) * w, axis=1),
                                    m.width(N, d), resolution, L)
            inc_hat = np.fft.fftn(inc) / resolution**d
        else:
            S = deposit(X, resolution, L, weights=dW / N, kind=kind)
            S_hat = np.fft.fftn(S, axes=tuple(range(1, d + 1))) / resolution**d
            inc_hat = (grad_hat * S_hat).sum(axis=0)
        M_hat = heat * M_hat + inc_hat
        if n + 1 in want:
            record(n + 1)
    return MartingalePath(np.array(out_t), out_f, {k: np.array(v) for k, v in out_n.items()})


def _wavevecs(resolution, d, L):
    from .spectral import nyquist_mask, wavenumbers

    return [xi * nyquist_mask(resolution, d, a) for a, xi in enumerate(wavenumbers(resolution, d, L))]
