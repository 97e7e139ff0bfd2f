"""Mean-field game with quadratic Hamiltonian on a periodic box.

Backward HJB ``du/dt + nu Lap u + b.grad u - |grad u|^2/2 + f = 0``,
``u(T) = g``; forward Fokker-Planck for the density under the feedback
``alpha* = -grad u``; Monte-Carlo cost evaluation and the particle game.
The default diffusivity ``nu = 1/2`` pairs with unit Brownian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .function_spaces import NormSpec, evaluate_norm, holder_seminorm, lq_norm
from .kernels import Mollifier, mollifier_scale
from .particles import (SdeConfig, gaussian_increments, interpolate, mollified_density,
                        sample_from_density)
from .pde import MildSolution, NumericalError, SolverConfig, phi_functions, solve_fp_box
from .spectral import (GridField, dealias_mask, gradient, gradient_symbol, grid_coords, heat_semigroup,
                       resample, wavevector_norm)

__all__ = [
    "MfgProblem",
    "MfgConfig",
    "MfgSolution",
    "solve_hjb_backward",
    "solve_mfg",
    "hopf_cole_reference",
    "cost_J",
    "CostEstimate",
    "nash_gap_probe",
    "particle_game",
    "GameRecord",
    "grad_u_holder_check",
    "feedback_path",
    "random_perturbation",
]


@dataclass
class MfgProblem:
    """Data of the game.

    ``b(x, u)`` maps coordinates ``(..., d)`` and density values ``(...)`` to
    drifts ``(..., d)``; ``f(x, u)`` returns scalar running costs ``(...)``.
    Either may be None (identically zero).  ``bound`` is the declared
    constant bounding ``|b|`` and ``|f|``.
    """

    g: GridField
    p0: GridField
    T: float
    eta: float = 1.0
    b: Callable | None = None
    f: Callable | None = None
    nu: float = 0.5
    bound: float = math.inf

    def __post_init__(self):
        if self.g.is_vector or self.p0.is_vector:
            raise ValueError("g and p0 must be scalar fields")
        if self.g.resolution != self.p0.resolution or self.g.length != self.p0.length or self.g.dim != self.p0.dim:
            raise ValueError("g and p0 must share the grid")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if not (0 < self.eta <= 1):
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.p0.values.min() < 0:
            raise ValueError("p0 must be non-negative")
        if abs(self.p0.integral() - 1) > 1e-6:
            raise ValueError(f"p0 must integrate to 1, got {self.p0.integral():.8f}")
        X = np.stack(grid_coords(self.p0.resolution, self.dim, self.length), axis=-1)
        u = np.linspace(0, 2 * max(float(self.p0.values.max()), 1.0), 5)
        for name, law in (("b", self.b), ("f", self.f)):
            if law is None:
                continue
            worst = max(float(np.abs(law(X, np.full(X.shape[:-1], v))).max()) for v in u)
            if worst > self.bound:
                raise ValueError(f"sampled sup|{name}| = {worst:.4g} exceeds the declared bound {self.bound:g}")

    @property
    def dim(self) -> int:
        return self.p0.dim

    @property
    def length(self) -> float:
        return self.p0.length

    @property
    def resolution(self) -> int:
        return self.p0.resolution

    @property
    def decoupled(self) -> bool:
        return self.b is None and self.f is None


@dataclass(frozen=True)
class MfgConfig:
    dt: float = 1e-3
    inner_tol: float = 1e-10
    inner_max: int = 20
    outer_tol: float = 1e-8
    outer_max: int = 100
    damping: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class MfgSolution:
    u: MildSolution
    p: MildSolution
    alpha_star: MildSolution
    iterations: int
    residuals: list[float]
    converged: bool
    grad_bound_constant: float = math.nan

    def residual_log(self) -> list[dict]:
        return [{"iteration": i + 1, "residual": r} for i, r in enumerate(self.residuals)]


def _vals(hat, d):
    return np.fft.ifftn(hat, axes=tuple(range(-d, 0))).real * hat.shape[-1] ** d


def _hat(v, d):
    return np.fft.fftn(v, axes=tuple(range(-d, 0))) / v.shape[-1] ** d


class _Hamiltonian:
    """``N(t, u) = b.grad u - |grad u|^2/2 + f`` in coefficient space."""

    def __init__(self, problem: MfgProblem, p_path: MildSolution | None):
        d, M, L = problem.dim, problem.resolution, problem.length
        self.d = d
        self.mask = dealias_mask(M, d)
        self.grad = gradient_symbol(M, d, L)
        self.X = np.stack(grid_coords(M, d, L), axis=-1)
        self.problem = problem
        self.p_path = p_path

    def density(self, t):
        return self.p_path.interp(t).values

    def __call__(self, t, u_hat):
        pr = self.problem
        gu = _vals(self.grad * (u_hat * self.mask), self.d)
        out = -0.5 * (gu**2).sum(axis=0)
        if pr.b is not None or pr.f is not None:
            p = self.density(t)
            if pr.b is not None:
                bv = np.moveaxis(np.asarray(pr.b(self.X, p), dtype=float).reshape(p.shape + (self.d,)), -1, 0)
                out = out + (bv * gu).sum(axis=0)
            if pr.f is not None:
                out = out + np.asarray(pr.f(self.X, p), dtype=float)
        return _hat(out, self.d) * self.mask


def _hjb_step(u_next, t_next, h, H, z_sym, cfg):
    """One backward ETD-trapezoid step with inner Picard; returns (u_hat, iterations) or None."""
    e, p1, p2 = phi_functions(h * z_sym)
    N1 = H(t_next, u_next)
    base = e * u_next + h * p1 * N1 - h * p2 * N1
    t = t_next - h
    u = base + h * p2 * N1
    for it in range(1, cfg.inner_max + 1):
        new = base + h * p2 * H(t, u)
        change = float(np.abs(_vals(new - u, H.d)).max())
        u = new
        if change < cfg.inner_tol:
            return u, it
    return None


def solve_hjb_backward(p_path: MildSolution | None, problem: MfgProblem, cfg: MfgConfig = MfgConfig()) -> MildSolution:
    """Backward sweep for ``u`` on the time grid ``0, dt, ..., T``.

    ``u_n = e^{h nu Lap} u_{n+1} + h phi1 N_{n+1} + h phi2 (N_n - N_{n+1})``
    with the implicit ``N_n`` resolved by fixed-point iteration.  A step
    whose inner iteration stalls is retried once as two half steps.
    """
    d, M, L = problem.dim, problem.resolution, problem.length
    n = int(round(problem.T / cfg.dt))
    if n < 1 or abs(n * cfg.dt - problem.T) > 1e-9:
        raise ValueError(f"T={problem.T} is not an integer multiple of dt={cfg.dt}")
    if p_path is None and not problem.decoupled:
        raise ValueError("a density path is required when b or f is present")
    z = -problem.nu * wavevector_norm(M, d, L) ** 2
    H = _Hamiltonian(problem, p_path)
    u = problem.g.hat.copy()
    out = [problem.g]
    inner = []
    halved = 0
    for k in range(n, 0, -1):
        t_next = k * cfg.dt
        res = _hjb_step(u, t_next, cfg.dt, H, z, cfg)
        if res is None:
            half = _hjb_step(u, t_next, cfg.dt / 2, H, z, cfg)
            res2 = None if half is None else _hjb_step(half[0], t_next - cfg.dt / 2, cfg.dt / 2, H, z, cfg)
            if res2 is None:
                raise NumericalError(f"HJB inner iteration failed to reach {cfg.inner_tol:g} at t={t_next - cfg.dt:.6g}")
            halved += 1
            res = (res2[0], half[1] + res2[1])
        u, its = res
        inner.append(its)
        out.append(GridField.from_hat(u, d, L))
    out.reverse()
    meta = {"dt": cfg.dt, "resolution": M, "scheme": "etd-trapezoid", "inner_max_used": max(inner),
            "halved_steps": halved, "diffusivity": problem.nu}
    return MildSolution(np.arange(n + 1) * cfg.dt, out, meta)


def hopf_cole_reference(g: GridField, T: float, times: Sequence[float], nu: float = 0.5) -> list[GridField]:
    """``u(t) = -log(e^{(T-t) nu Lap} e^{-g})``, the exact value function when ``b = f = 0``."""
    w = g.like(np.exp(-g.values))
    return [g.like(-np.log(heat_semigroup(w, T - t, nu).values)) for t in times]


def feedback_path(u: MildSolution) -> MildSolution:
    """``alpha* = -grad u`` at every stored time."""
    fields = [-gradient(f) for f in u.fields]
    return MildSolution(u.times.copy(), fields, {"from": "minus grad u"})


def _sup_l2_change(a: MildSolution, b: MildSolution) -> float:
    return max(lq_norm(x - y, 2) for x, y in zip(a.fields, b.fields))


def _blend(a: MildSolution, b: MildSolution, theta: float) -> MildSolution:
    fields = [x.like(theta * y.values + (1 - theta) * x.values) for x, y in zip(a.fields, b.fields)]
    return MildSolution(a.times.copy(), fields, dict(b.solver_meta))


def _forward(problem: MfgProblem, alpha: MildSolution | None, dt: float) -> MildSolution:
    cfg = SolverConfig(dt=dt, diffusivity=problem.nu)
    return solve_fp_box(problem.p0, None if alpha is None else alpha.interp, problem.b, problem.T, cfg)


def solve_mfg(problem: MfgProblem, cfg: MfgConfig = MfgConfig()) -> MfgSolution:
    """Damped Picard iteration between the backward HJB and forward FP sweeps.

    ``p^0`` is the forward solution with ``alpha = 0``.  Iteration ``k``
    solves for ``u^k`` given ``p^k``, blends the feedback
    ``alpha^k = theta (-grad u^k) + (1 - theta) alpha^{k-1}`` (undamped on
    the first pass) and solves forward for ``p^{k+1}``.  Stops when the
    sup-in-time L2 change of both ``u`` and ``p`` drops below ``outer_tol``.
    """
    p = _forward(problem, None, cfg.dt)
    u_prev = alpha = None
    residuals = []
    converged = False
    it = 0
    for it in range(1, cfg.outer_max + 1):
        u = solve_hjb_backward(p, problem, cfg)
        target = feedback_path(u)
        alpha = target if alpha is None else _blend(alpha, target, cfg.damping)
        p_new = _forward(problem, alpha, cfg.dt)
        res = _sup_l2_change(p_new, p)
        if u_prev is not None:
            res = max(res, _sup_l2_change(u, u_prev))
        else:
            res = max(res, math.inf)
        residuals.append(res)
        p, u_prev = p_new, u
        if res < cfg.outer_tol:
            converged = True
            break
    alpha_star = feedback_path(u_prev)
    grad_g = gradient(problem.g)
    g_eta = float(np.abs(grad_g.values).max()) + max(
        holder_seminorm(grad_g.component(a), problem.eta, with_sup=False) for a in range(problem.dim))
    sup_grad = max(float(np.abs(f.values).max()) for f in alpha_star.fields)
    return MfgSolution(u_prev, p, alpha_star, it, residuals, converged, sup_grad / (g_eta + 1.0))


@dataclass
class CostEstimate:
    value: float
    stderr: float
    samples: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        yield self.value
        yield self.stderr


def cost_J(alpha: MildSolution | Callable | None, p_path: MildSolution | None, problem: MfgProblem,
           n_paths: int = 10_000, dt: float | None = None, seed: int = 0, kind: str = "cubic") -> CostEstimate:
    """Monte-Carlo estimate of ``E[int_0^T (|alpha|^2/2 + f(X, p(X))) ds + g(X_T)]``.

    Paths start from i.i.d. samples of ``p0`` and follow
    ``dX = (alpha + b(X, p(X))) dt + sqrt(2 nu) dW``.  The same ``seed``
    reuses the same initial points and noise, so costs of different
    feedbacks are compared with common random numbers.
    """
    d, L = problem.dim, problem.length
    if alpha is not None and not callable(alpha):
        alpha_at = alpha.interp
        dt = alpha.times[1] - alpha.times[0] if dt is None else dt
    else:
        alpha_at = alpha
    dt = 1e-2 if dt is None else dt
    n = int(round(problem.T / dt))
    if abs(n * dt - problem.T) > 1e-9:
        raise ValueError(f"T={problem.T} is not an integer multiple of dt={dt}")
    if alpha is None and problem.f is None and problem.b is None and not np.any(problem.g.values):
        return CostEstimate(0.0, 0.0, np.zeros(n_paths))
    ens = sample_from_density(problem.p0, n_paths, seed=seed)
    X = ens.positions.copy()
    labels = ens.labels
    acc = np.zeros(n_paths)
    sig = math.sqrt(2 * problem.nu * dt)
    for k in range(n):
        t = k * dt
        drift = np.zeros_like(X)
        if alpha_at is not None:
            a = alpha_at(t)
            if a is not None:
                av = interpolate(a, X, kind).reshape(X.shape)
                drift += av
                acc += 0.5 * dt * (av**2).sum(axis=1)
        if problem.b is not None or problem.f is not None:
            pv = interpolate(p_path.interp(t), X, kind)
            if problem.b is not None:
                drift += np.asarray(problem.b(X, pv), dtype=float).reshape(X.shape)
            if problem.f is not None:
                acc += dt * np.asarray(problem.f(X, pv), dtype=float)
        X = np.mod(X + drift * dt + sig * gaussian_increments(seed, k, labels, d), L)
    acc += interpolate(problem.g, X, kind)
    se = float(acc.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.inf
    if np.ptp(acc) <= 1e-13 * max(float(np.abs(acc).max()), 1e-300):
        se = 0.0    # deterministic cost (constant g, no running cost); spread is rounding only
    return CostEstimate(float(acc.mean()), se, acc)


def random_perturbation(problem: MfgProblem, rng: np.random.Generator, modes: int = 3) -> GridField:
    """Smooth time-constant vector field with sup norm 1 (a few random Fourier modes)."""
    d, M, L = problem.dim, problem.resolution, problem.length
    X = grid_coords(M, d, L)
    comps = []
    for _ in range(d):
        v = np.zeros((M,) * d)
        for _ in range(modes):
            k = rng.integers(1, 4, size=d)
            ph = rng.uniform(0, 2 * np.pi)
            v += rng.standard_normal() * np.cos(2 * np.pi * sum(kk * x for kk, x in zip(k, X)) / L + ph)
        comps.append(v)
    v = np.stack(comps)
    return GridField(v / np.abs(v).max(), d, L)


def nash_gap_probe(problem: MfgProblem, sol: MfgSolution, n_perturb: int = 5, eps: float = 0.5,
                   n_paths: int = 10_000, seed: int = 0) -> list[dict]:
    """Costs of ``alpha* + eps beta`` for random bounded ``beta`` against ``J(alpha*)``.

    Every row reports the gap ``J(alpha* + eps beta) - J(alpha*)`` together
    with the standard error of the perturbed estimate and the paired
    standard error of the difference.
    """
    base = cost_J(sol.alpha_star, sol.p, problem, n_paths, seed=seed)
    rng = np.random.default_rng([seed, 0xBE7A])
    rows = []
    for i in range(n_perturb):
        beta = random_perturbation(problem, rng)

        def pert(t, beta=beta):
            return sol.alpha_star.interp(t) + eps * beta

        J = cost_J(pert, sol.p, problem, n_paths, dt=sol.alpha_star.times[1], seed=seed)
        diff = J.samples - base.samples
        rows.append({"perturbation": i, "J_star": base.value, "J_star_stderr": base.stderr, "J_perturbed": J.value,
                     "stderr": J.stderr, "gap": J.value - base.value,
                     "paired_stderr": float(diff.std(ddof=1) / math.sqrt(n_paths)),
                     "ok": bool(base.value <= J.value + 2 * J.stderr)})
    return rows


@dataclass
class GameRecord:
    """Per-checkpoint errors ``p^N_t - p_t`` of one particle-game run (keyed by norm label)."""

    N: int
    seed: int
    beta: float
    times: np.ndarray
    errors: dict

    @property
    def primary(self) -> str:
        return next(iter(self.errors))

    @property
    def sup_error(self) -> float:
        return float(np.max(self.errors[self.primary]))


def particle_game(problem: MfgProblem, sol: MfgSolution, N: int, beta: float, resolution: int,
                  lam: float = 0.6, q: float = 2.0, dt: float | None = None, seed: int = 0,
                  checkpoints: int = 17, kind: str = "cubic", norms: Sequence[NormSpec] | None = None) -> GameRecord:
    """Particles driven by ``alpha* = -grad u`` and ``b``; records ``||p^N_t - p_t||`` at checkpoints.

    The default norm is ``H^lam_q``.  The limit density is
    Fourier-interpolated onto the (finer) particle grid before differencing.
    """
    norms = [NormSpec.bessel(lam, q)] if norms is None else list(norms)
    m = Mollifier(beta)
    d, L = problem.dim, problem.length
    Vn = mollifier_scale(m, N, d, resolution, L)
    dt = float(sol.p.times[1] - sol.p.times[0]) if dt is None else dt
    cfg = SdeConfig(dt=dt, T=problem.T, interpolation=kind, seed=seed, diffusivity=problem.nu)
    n = cfg.n_steps
    keep = {int(round(i * n / (checkpoints - 1))) for i in range(checkpoints)}
    ens = replace(sample_from_density(problem.p0, N, seed=seed, interpolation=kind), seed=seed)
    times = []
    errs = {s.label(): [] for s in norms}
    sig = math.sqrt(2 * problem.nu * dt)
    for k in range(n + 1):
        t = k * dt
        pN = mollified_density(ens, Vn, kind) if (k in keep or problem.b is not None) else None
        if k in keep:
            diff = pN - resample(sol.p.interp(t), resolution)
            times.append(t)
            for s in norms:
                errs[s.label()].append(evaluate_norm(diff, s))
        if k == n:
            break
        X = ens.positions
        drift = interpolate(sol.alpha_star.interp(t), X, kind).reshape(X.shape)
        if problem.b is not None:
            drift = drift + np.asarray(problem.b(X, interpolate(pN, X, kind)), dtype=float).reshape(X.shape)
        X = X + drift * dt + sig * gaussian_increments(ens.seed, ens.step, ens.labels, d)
        ens = replace(ens, positions=X, t=t + dt, step=ens.step + 1)
    return GameRecord(N, seed, beta, np.array(times), {k: np.array(v) for k, v in errs.items()})


def grad_u_holder_check(u: MildSolution, eta: float) -> dict:
    """Hoelder seminorm ``[grad u_t]_eta`` per stored time and its supremum."""
    per_t = []
    for f in u.fields:
        g = gradient(f)
        per_t.append(max(holder_seminorm(g.component(a), eta, with_sup=False) for a in range(g.ncomp)))
    per_t = np.array(per_t)
    return {"eta": eta, "times": u.times.copy(), "per_time": per_t, "sup": float(per_t.max()) if per_t.size else 0.0}
