"""Mild-form solvers for the limit Fokker-Planck equations.

Torus equation ``dp/dt = nu Lap p - div(p K*p)`` and the box equation
``dp/dt = nu Lap p - div(p (alpha + b(x, p)))`` are advanced with
exponential integrators: the heat semigroup is applied exactly and only the
divergence-form nonlinearity is quadratured.  Because the nonlinearity has
no zero mode, mass is conserved to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .function_spaces import bessel_norm, lq_norm
from .kernels import Kernel
from .spectral import GridField, dealias_mask, gradient_symbol, grid_coords, wavevector_norm

__all__ = [
    "SolverConfig",
    "MildSolution",
    "BlowUpError",
    "NumericalError",
    "phi_functions",
    "fp_nonlinearity",
    "solve_fp_torus",
    "solve_fp_box",
    "box_nonlinearity",
    "picard_local",
    "PicardReport",
    "bilinear_form",
]


class NumericalError(RuntimeError):
    """A solver invariant failed (mass drift, non-finite values, guard violation)."""


class BlowUpError(NumericalError):
    """The solution norm exceeded the blow-up threshold."""

    def __init__(self, msg, t_max_proxy):
        super().__init__(msg)
        self.t_max_proxy = t_max_proxy


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping and Picard parameters for the mild solvers."""

    dt: float = 1e-3
    substeps: int = 1
    picard_tol: float = 1e-10
    picard_max: int = 50
    resolution: int | None = None
    diffusivity: float = 1.0
    blowup_factor: float = 1e3
    norm_q: float = 2.0
    store: str | int = "all"
    bessel_report: tuple | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if self.substeps < 1 or self.picard_max < 1:
            raise ValueError("substeps and picard_max must be >= 1")
        if self.diffusivity < 0:
            raise ValueError("diffusivity must be non-negative")

    @property
    def h(self) -> float:
        return self.dt / self.substeps


@dataclass
class MildSolution:
    """Time-indexed fields with solver metadata."""

    times: np.ndarray
    fields: list[GridField]
    solver_meta: dict = field(default_factory=dict)

    @property
    def final(self) -> GridField:
        return self.fields[-1]

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not stored")
        return i

    def at(self, t: float) -> GridField:
        return self.fields[self.index(t)]

    def interp(self, t: float) -> GridField:
        """Linear interpolation in time between stored fields."""
        ts = self.times
        if t <= ts[0]:
            return self.fields[0]
        if t >= ts[-1]:
            return self.fields[-1]
        i = int(np.searchsorted(ts, t)) - 1
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        if w < 1e-12:
            return self.fields[i]
        if w > 1 - 1e-12:
            return self.fields[i + 1]
        return self.fields[i].like((1 - w) * self.fields[i].values + w * self.fields[i + 1].values)

    def sup_norm(self, norm: Callable[[GridField], float]) -> float:
        return max(norm(f) for f in self.fields)


def phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(z)``, ``phi1 = (e^z - 1)/z`` and ``phi2 = (e^z - 1 - z)/z^2`` (stable near 0)."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    e = np.exp(z)
    p1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zs) / zs)
    p2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720, (np.expm1(zs) - zs) / zs**2)
    return e, p1, p2


def _to_values(hat, dim):
    axes = tuple(range(-dim, 0))
    M = hat.shape[-1]
    return np.fft.ifftn(hat, axes=axes).real * M**dim


def _to_hat(vals, dim):
    axes = tuple(range(-dim, 0))
    M = vals.shape[-1]
    return np.fft.fftn(vals, axes=axes) / M**dim


class _TorusOperator:
    """``-div(u * K*v)`` in coefficient space with 2/3-rule dealiasing."""

    def __init__(self, K: Kernel, M: int, d: int, L: float):
        self.d = d
        self.mask = dealias_mask(M, d)
        k = K.multiplier(M, d, L)
        self.kmult = k if k.ndim == d + 1 else np.stack([k] * d)
        self.grad = gradient_symbol(M, d, L)
        self.zero = K.is_zero()

    def __call__(self, u_hat, v_hat=None):
        if self.zero:
            return np.zeros_like(u_hat)
        v_hat = u_hat if v_hat is None else v_hat
        u = _to_values(u_hat * self.mask, self.d)
        kv = _to_values(self.kmult * (v_hat * self.mask), self.d)
        flux = _to_hat(u * kv, self.d) * self.mask
        return -(self.grad * flux).sum(axis=0)


def fp_nonlinearity(p: GridField, K: Kernel) -> GridField:
    """``-div(p K*p)`` on the grid."""
    op = _TorusOperator(K, p.resolution, p.dim, p.length)
    return GridField.from_hat(op(p.hat), p.dim, p.length)


def _store_steps(n_steps: int, store) -> set[int]:
    if store == "all":
        return set(range(n_steps + 1))
    if isinstance(store, int):
        if store < 2:
            raise ValueError("store needs at least 2 checkpoints")
        return {int(round(i * n_steps / (store - 1))) for i in range(store)}
    raise ValueError(f"unknown store option {store!r}")


def _n_steps(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


class _Monitor:
    """Mass, positivity and blow-up checks shared by the solvers."""

    def __init__(self, p0: GridField, cfg: SolverConfig):
        self.cfg = cfg
        self.mass0 = p0.integral()
        self.sup0 = float(np.abs(p0.values).max())
        self.norm0 = lq_norm(p0, cfg.norm_q)
        self.min_ratio = 0.0
        self.max_mass_drift = 0.0
        self.bessel = 0.0

    def check(self, f: GridField, t: float):
        if not np.all(np.isfinite(f.values)):
            raise BlowUpError(f"non-finite solution at t={t:.6g}", t)
        nrm = lq_norm(f, self.cfg.norm_q)
        if nrm > self.cfg.blowup_factor * self.norm0:
            raise BlowUpError(
                f"L^{self.cfg.norm_q} norm {nrm:.3g} exceeded {self.cfg.blowup_factor:g} x initial at t={t:.6g}; "
                f"empirical T_max proxy {t:.6g}", t)
        drift = abs(f.integral() - self.mass0)
        self.max_mass_drift = max(self.max_mass_drift, drift)
        if drift > 1e-6 * max(1.0, abs(self.mass0)):
            raise NumericalError(f"mass drifted by {drift:.3g} at t={t:.6g}")
        if self.sup0 > 0:
            self.min_ratio = min(self.min_ratio, float(f.values.min()) / self.sup0)
        if self.cfg.bessel_report is not None:
            lam, q = self.cfg.bessel_report
            self.bessel = max(self.bessel, bessel_norm(f, lam, q))

    def meta(self) -> dict:
        out = {"max_mass_drift": self.max_mass_drift, "min_over_sup0": self.min_ratio,
               "positivity_ok": self.min_ratio >= -1e-6}
        if self.cfg.bessel_report is not None:
            out["sup_bessel_norm"] = self.bessel
        return out


def _exp_midpoint(p0: GridField, nonlin: Callable, T: float, cfg: SolverConfig, scheme: str,
                  extra_meta: dict, t0: float = 0.0) -> MildSolution:
    """Exponential midpoint rule ``p+ = e^{hL} p + h phi1(hL) N(t + h/2, p_mid)``.

    ``p_mid = e^{hL/2} p + (h/2) phi1(hL/2) N(t, p)``.  Second order; exact
    for the linear part.
    """
    d, L, M = p0.dim, p0.length, p0.resolution
    h = cfg.h
    n = _n_steps(T, cfg.dt) * cfg.substeps
    z = -cfg.diffusivity * h * wavevector_norm(M, d, L) ** 2
    e1, p1, _ = phi_functions(z)
    eh, ph, _ = phi_functions(z / 2)
    keep = {s * cfg.substeps for s in _store_steps(n // cfg.substeps, cfg.store)}
    mon = _Monitor(p0, cfg)
    ph_hat = p0.hat.copy()
    times, fields = [], []
    for step in range(n + 1):
        t = t0 + step * h
        if step in keep:
            # the initial datum is stored as given, not as its FFT round trip
            f = p0 if step == 0 else GridField.from_hat(ph_hat, d, L)
            mon.check(f, t)
            times.append(t)
            fields.append(f)
        if step == n:
            break
        N0 = nonlin(t, ph_hat)
        mid = eh * ph_hat + (h / 2) * ph * N0
        ph_hat = e1 * ph_hat + h * p1 * nonlin(t + h / 2, mid)
        if not np.all(np.isfinite(ph_hat)):
            raise BlowUpError(f"non-finite solution at t={t + h:.6g}", t + h)
    meta = {"dt": cfg.dt, "substeps": cfg.substeps, "resolution": M, "scheme": scheme,
            "diffusivity": cfg.diffusivity, "steps": n}
    meta.update(mon.meta())
    meta.update(extra_meta)
    return MildSolution(np.array(times), fields, meta)


def solve_fp_torus(p0: GridField, K: Kernel, T: float, cfg: SolverConfig = SolverConfig(),
                   t0: float = 0.0) -> MildSolution:
    """Mild solution of ``dp/dt = nu Lap p - div(p K*p)`` on the torus.

    Raises :class:`BlowUpError` when the ``L^q`` norm exceeds
    ``blowup_factor`` times its initial value; the exception carries the time
    reached as an empirical proxy for the maximal existence time.
    """
    if p0.is_vector:
        raise ValueError("p0 must be scalar")
    if cfg.resolution is not None and cfg.resolution != p0.resolution:
        raise ValueError(f"p0 has resolution {p0.resolution}, config asks for {cfg.resolution}")
    if K.dim is not None and K.dim != p0.dim:
        raise ValueError(f"{K.form} kernel has dim {K.dim}, p0 has dim {p0.dim}")
    op = _TorusOperator(K, p0.resolution, p0.dim, p0.length)
    return _exp_midpoint(p0, lambda t, u: op(u), T, cfg, "exp-midpoint", {"kernel": K.form}, t0)


def box_nonlinearity(M: int, d: int, L: float, alpha: Callable | GridField | None, b: Callable | None):
    """Returns ``N(t, p_hat) = -div(p (alpha_t + b(x, p)))`` in coefficient space."""
    mask = dealias_mask(M, d)
    grad = gradient_symbol(M, d, L)
    X = np.stack(grid_coords(M, d, L), axis=-1)

    def alpha_at(t):
        if alpha is None:
            return None
        a = alpha(t) if callable(alpha) else alpha
        return None if a is None else a.values.reshape((d,) + (M,) * d)

    def nonlin(t, p_hat):
        p = _to_values(p_hat * mask, d)
        vel = np.zeros((d,) + (M,) * d)
        a = alpha_at(t)
        if a is not None:
            vel += _to_values(_to_hat(a, d) * mask, d)
        if b is not None:
            bv = np.asarray(b(X, p), dtype=float)
            vel += np.moveaxis(bv.reshape((M,) * d + (d,)), -1, 0)
        flux = _to_hat(p * vel, d) * mask
        return -(grad * flux).sum(axis=0)

    return nonlin


def _edge_mass_fraction(f: GridField, centre: float, frac: float = 0.1) -> float:
    """Fraction of mass within ``frac * L`` of the box edge (box centred at ``centre``)."""
    L = f.length
    near = np.zeros(f.values.shape, dtype=bool)
    for x in f.coords():
        dist = L / 2 - np.abs(((x - centre + L / 2) % L) - L / 2)
        near |= dist < frac * L
    tot = float(np.abs(f.values).sum())
    return float(np.abs(f.values[near]).sum()) / max(tot, 1e-300)


def solve_fp_box(p0: GridField, alpha: Callable | GridField | None, b: Callable | None, T: float,
                 cfg: SolverConfig = SolverConfig(), centre: float | None = None, edge_tol: float = 1e-3) -> MildSolution:
    """Mild solution of ``dp/dt = nu Lap p - div(p (alpha_t + b(x, p)))`` on a periodic box.

    The box of side ``p0.length`` stands in for R^d.  ``alpha`` is a vector
    GridField, a callable ``t -> GridField`` or None; ``b(x, u)`` maps grid
    coordinates ``(..., d)`` and density values ``(...)`` to ``(..., d)``.
    The run is refused when more than ``edge_tol`` of the mass sits within
    10% of the box edge at any stored time.
    """
    if p0.is_vector:
        raise ValueError("p0 must be scalar")
    centre = p0.length / 2 if centre is None else centre
    nonlin = box_nonlinearity(p0.resolution, p0.dim, p0.length, alpha, b)
    sol = _exp_midpoint(p0, nonlin, T, cfg, "exp-midpoint", {"box_length": p0.length})
    worst = max(_edge_mass_fraction(f, centre) for f in sol.fields)
    sol.solver_meta["edge_mass_fraction"] = worst
    if worst >= edge_tol:
        raise NumericalError(
            f"{worst:.3g} of the mass reached the outer 10% of the box (limit {edge_tol:g}); "
            "enlarge the box or shorten T")
    return sol


def bilinear_form(u_path: np.ndarray, v_path: np.ndarray, op: _TorusOperator, decay: tuple, h: float,
                  sign: float = -1.0) -> np.ndarray:
    """``B(u, v)(t_n) = int_0^t div e^{(t-s) nu Lap}(u_s K*v_s) ds`` on the time grid.

    Paths are coefficient arrays of shape ``(n+1, M, ..., M)``; the integrand
    is linear in time between nodes and integrated exactly against the
    semigroup (``phi1``/``phi2`` weights).  ``op`` returns ``-div(u K*v)``,
    hence the ``sign``.
    """
    e, p1, p2 = decay
    out = np.zeros_like(u_path)
    G_prev = sign * op(u_path[0], v_path[0])
    for n in range(len(u_path) - 1):
        G_next = sign * op(u_path[n + 1], v_path[n + 1])
        out[n + 1] = e * out[n] + h * p1 * G_prev + h * p2 * (G_next - G_prev)
        G_prev = G_next
    return out


@dataclass
class PicardReport:
    times: np.ndarray
    iterates: list[MildSolution]
    distances: list[float]
    contraction_ratio: float
    successive_ratios: list[float]
    converged: bool
    contracting: bool
    probe_modes: int

    @property
    def fixed_point(self) -> MildSolution:
        return self.iterates[-1]


def picard_local(p0: GridField, K: Kernel, T: float, cfg: SolverConfig = SolverConfig(),
                 probes: int | None = None, keep_iterates: bool = False) -> PicardReport:
    """Picard iteration ``u <- e^{t nu Lap} p0 - B(u, u)`` on ``[0, T]``.

    Distances are ``sup_t ||u^{n+1} - u^n||_{L^q}``.  The contraction ratio is
    the operator norm, in ``X = C([0,T]; L^q)``, of the linearisation
    ``h -> B(h, u*) + B(u*, h)`` at the fixed point, estimated over
    time-constant single-mode probes ``cos(xi . x)``, ``sin(xi . x)``.
    """
    d, L, M = p0.dim, p0.length, p0.resolution
    h = cfg.dt
    n = _n_steps(T, h)
    z = -cfg.diffusivity * h * wavevector_norm(M, d, L) ** 2
    decay = phi_functions(z)
    op = _TorusOperator(K, M, d, L)
    times = np.arange(n + 1) * h
    heat = np.stack([np.exp(-cfg.diffusivity * t * wavevector_norm(M, d, L) ** 2) * p0.hat for t in times])
    q = cfg.norm_q

    def sup_dist(a, b):
        return max(lq_norm(GridField.from_hat(x - y, d, L), q) for x, y in zip(a, b))

    def as_solution(path):
        return MildSolution(times.copy(), [GridField.from_hat(x, d, L) for x in path], {"dt": h, "resolution": M})

    u = heat
    iterates = [as_solution(u)] if keep_iterates else []
    distances = []
    converged = False
    for _ in range(cfg.picard_max):
        new = heat - bilinear_form(u, u, op, decay, h, sign=-1.0)
        dist = sup_dist(new, u)
        distances.append(dist)
        u = new
        if keep_iterates:
            iterates.append(as_solution(u))
        if dist < cfg.picard_tol:
            converged = True
            break
    if not keep_iterates:
        iterates = [as_solution(u)]

    ratio, count = 0.0, 0
    if not op.zero:
        ks = [k for k in range(1, M // 3)]
        if probes is not None:
            ks = ks[:probes]
        X = grid_coords(M, d, L)
        for k in ks:
            for trig in (np.cos, np.sin):
                hv = trig(2 * np.pi * k * X[0] / L)
                hh = np.broadcast_to(_to_hat(hv, d), u.shape)
                lin = bilinear_form(hh, u, op, decay, h, sign=-1.0) + bilinear_form(u, hh, op, decay, h, sign=-1.0)
                num = max(lq_norm(GridField.from_hat(x, d, L), q) for x in lin)
                ratio = max(ratio, num / lq_norm(GridField(hv, d, L), q))
                count += 1
    succ = [distances[i + 1] / distances[i] for i in range(len(distances) - 1) if distances[i] > 0]
    return PicardReport(times, iterates, distances, ratio, succ, converged, ratio < 1, count)
