"""Convergence rates: exponent formulas, the N-sweep harness and Groenwall utilities."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .function_spaces import NormSpec, evaluate_norm, measure_minus_field_norm
from .kernels import Kernel, Mollifier, mollifier_scale
from .particles import (SdeConfig, mollified_density, sample_from_density, simulate_torus,
                        spectrum_by_deposit)
from .pde import SolverConfig, solve_fp_torus
from .spectral import GridField, resample

__all__ = [
    "RateParams",
    "rho_theorem1",
    "rho_theorem2",
    "rho_branches",
    "rho_grid_scan",
    "ExperimentPlan",
    "ConvergenceReport",
    "NormFit",
    "fit_slope",
    "bootstrap_slope",
    "verdict",
    "run_convergence_study",
    "Theorem1Setup",
    "Theorem2Setup",
    "stopping_time_diagnostic",
    "crossing_fractions",
    "mittag_leffler",
    "mittag_leffler_derivative",
    "gronwall_bound",
    "gronwall_closed_form",
    "run_seed",
]


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


@dataclass(frozen=True)
class RateParams:
    """Parameters entering the rate exponents.  ``q = inf`` is allowed."""

    beta: float
    d: int
    q: float
    lam: float
    eta: float | None = None
    delta: float = 0.01

    def __post_init__(self):
        if not (0 <= self.beta <= 1):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.q >= 1:
            raise ValueError("q must be >= 1")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def inv_q(self) -> Fraction:
        return Fraction(0) if math.isinf(self.q) else 1 / _frac(self.q)


def _theorem1_terms(p: RateParams) -> tuple[Fraction, Fraction]:
    if not p.lam > 0 or not p.lam > p.d * float(p.inv_q()):
        raise ValueError(f"need lam > 0 and lam > d/q (lam={p.lam}, d/q={p.d * float(p.inv_q()):g})")
    b, lam, iq, d = _frac(p.beta), _frac(p.lam), p.inv_q(), p.d
    first = b / d * (lam - d * iq)
    second = Fraction(1, 2) - b / 2 * (1 + 2 * max(Fraction(1, 2) - iq, Fraction(0)))
    return first, second


def _theorem2_terms(p: RateParams) -> tuple[Fraction, Fraction]:
    if p.eta is None or not p.eta > 0:
        raise ValueError("eta > 0 is required")
    if p.q < 2 or not p.q > p.d:
        raise ValueError(f"need q >= 2 and q > d (q={p.q}, d={p.d})")
    if not p.lam > p.d * float(p.inv_q()):
        raise ValueError(f"need lam > d/q (lam={p.lam})")
    b, lam, iq, d, eta = _frac(p.beta), _frac(p.lam), p.inv_q(), p.d, _frac(p.eta)
    first = b / d * min(eta, lam - d * iq)
    second = Fraction(1, 2) - b * (1 + lam / d - iq)
    return first, second


def rho_theorem1(p: RateParams, exact: bool = False):
    """``min{(beta/d)(lam - d/q), 1/2 - (beta/2)(1 + 2 max(1/2 - 1/q, 0))} - delta``.

    Evaluated in rational arithmetic on the decimal inputs; ``exact=True``
    returns the Fraction.
    """
    r = min(_theorem1_terms(p)) - _frac(p.delta)
    return r if exact else float(r)


def rho_theorem2(p: RateParams, exact: bool = False):
    """``min{(beta/d) min(eta, lam - d/q), 1/2 - beta (1 + lam/d - 1/q)} - delta``."""
    r = min(_theorem2_terms(p)) - _frac(p.delta)
    return r if exact else float(r)


def rho_branches(p: RateParams, theorem: int = 1) -> dict:
    """Both arguments of the minimum, the active branch and the resulting exponent."""
    first, second = _theorem1_terms(p) if theorem == 1 else _theorem2_terms(p)
    rho = min(first, second) - _frac(p.delta)
    out = {"first": float(first), "second": float(second), "active": "first" if first <= second else "second",
           "rho": float(rho), "valid": rho > 0}
    if theorem == 2:
        iq = p.inv_q()
        out["holder_branch"] = "eta" if _frac(p.eta) <= _frac(p.lam) - p.d * iq else "lam-d/q"
    return out


def rho_grid_scan(theorem: int, betas: Sequence[float], lams: Sequence[float], qs: Sequence[float], d: int = 1,
                  etas: Sequence[float] = (None,), delta: float = 0.01) -> list[dict]:
    """Evaluate the exponent on a parameter grid (admissible points only), largest first."""
    rows = []
    for beta, lam, q, eta in itertools.product(betas, lams, qs, etas):
        try:
            p = RateParams(beta, d, q, lam, eta, delta)
            br = rho_branches(p, theorem)
        except ValueError:
            continue
        rows.append({"beta": beta, "lam": lam, "q": q, "eta": eta, **br})
    rows.sort(key=lambda r: -r["rho"])
    return rows


def run_seed(seed_base: int, N: int, replica: int) -> int:
    """Independent stream id for job ``(N, replica)``."""
    return int(np.random.SeedSequence([seed_base, N, replica]).generate_state(1)[0])


@dataclass
class ExperimentPlan:
    """Sweep over particle numbers with replicas.

    ``system`` is ``"theorem1"`` (torus system) or ``"theorem2"`` (particle
    game).  Times are checkpointed at ``checkpoints`` equispaced points.
    """

    N_list: list[int]
    replicas: int
    norms: list[NormSpec]
    T: float
    beta: float
    q: float
    lam: float
    system: str = "theorem1"
    dt: float = 1e-3
    resolution: int = 512
    ref_dt: float | None = None
    ref_resolution: int | None = None
    seed_base: int = 0
    checkpoints: int = 17
    delta: float = 0.01
    eta: float | None = None
    d: int = 1
    spectrum_kmax: int = 4096
    negative_control: bool = False
    min_decay: float = 0.05
    bootstrap: int = 2000
    kernel: dict | None = None
    p0: dict | None = None

    def __post_init__(self):
        N = list(self.N_list)
        if len(N) < 4:
            raise ValueError("N_list needs at least 4 values")
        if any(b <= a for a, b in zip(N, N[1:])):
            raise ValueError("N_list must be strictly increasing")
        if self.replicas < 3:
            raise ValueError("replicas must be >= 3")
        if self.system not in ("theorem1", "theorem2"):
            raise ValueError(f"unknown system {self.system!r}")
        if not (0 <= self.beta <= 1):
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.norms:
            raise ValueError("at least one norm is required")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) % (self.checkpoints - 1):
            raise ValueError(f"T/dt = {steps:g} must be a multiple of {self.checkpoints - 1} so checkpoints fall on steps")

    @property
    def rate_params(self) -> RateParams:
        return RateParams(self.beta, self.d, self.q, self.lam, self.eta, self.delta)

    def rho(self) -> float:
        p = self.rate_params
        return rho_theorem1(p) if self.system == "theorem1" else rho_theorem2(p)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["norms"] = [n.as_dict() for n in self.norms]
        return out


@dataclass
class NormFit:
    label: str
    slope: float
    ci: tuple[float, float]
    intercept: float
    means: list[float]
    verdict: str

    @property
    def decay(self) -> float:
        return -self.slope


@dataclass
class ConvergenceReport:
    plan: ExperimentPlan
    rho: float
    errors: dict            # norm label -> array (len(N_list), replicas) of sup-in-time errors
    paths: dict             # norm label -> array (len(N_list), replicas, checkpoints)
    times: np.ndarray
    fits: dict              # norm label -> NormFit
    verdict: str
    threshold: float
    crossing: list[float]
    notes: list[str] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    def to_dict(self, include_runtime: bool = True) -> dict:
        out = {
            "plan": self.plan.as_dict(),
            "rho": self.rho,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "times": self.times.tolist(),
            "norms": {},
            "stopping_time_no_crossing_fraction": self.crossing,
            "notes": self.notes,
        }
        for lab, fit in self.fits.items():
            out["norms"][lab] = {
                "slope": fit.slope, "ci_low": fit.ci[0], "ci_high": fit.ci[1], "intercept": fit.intercept,
                "decay_magnitude": fit.decay, "mean_sup_error": fit.means, "verdict": fit.verdict,
                "sup_errors": self.errors[lab].tolist(),
            }
        if include_runtime:
            out["runtime"] = self.runtime
        return out

    def rows(self) -> list[dict]:
        out = []
        for lab, arr in self.errors.items():
            for i, N in enumerate(self.plan.N_list):
                for r in range(arr.shape[1]):
                    out.append({"norm": lab, "N": N, "replica": r, "seed": run_seed(self.plan.seed_base, N, r),
                                "sup_error": repr(float(arr[i, r]))})
        return out


def fit_slope(N: Sequence[float], err: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log err`` against ``log N``."""
    x, y = np.log(np.asarray(N, dtype=float)), np.log(np.asarray(err, dtype=float))
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(icpt)


def bootstrap_slope(N: Sequence[float], errors: np.ndarray, n_boot: int = 2000, seed: int = 0,
                    level: float = 0.95) -> tuple[float, float]:
    """Percentile interval for the slope of ``log mean_r(err)`` vs ``log N``, resampling replicas per N."""
    errors = np.asarray(errors, dtype=float)
    rng = np.random.default_rng([seed, 0xB007])
    nN, R = errors.shape
    idx = rng.integers(0, R, size=(n_boot, nN, R))
    means = np.take_along_axis(np.broadcast_to(errors, (n_boot, nN, R)), idx, axis=2).mean(axis=2)
    x = np.log(np.asarray(N, dtype=float))
    xc = x - x.mean()
    y = np.log(means)
    slopes = (y - y.mean(axis=1, keepdims=True)) @ xc / (xc @ xc)
    a = (1 - level) / 2
    return float(np.quantile(slopes, a)), float(np.quantile(slopes, 1 - a))


def verdict(ci: tuple[float, float], threshold: float) -> str:
    """``consistent`` when the whole decay interval clears ``threshold``; ``inconsistent`` when it lies below."""
    decay_low, decay_high = -ci[1], -ci[0]
    if decay_low >= threshold:
        return "consistent"
    if decay_high < threshold:
        return "inconsistent"
    return "inconclusive"


def stopping_time_diagnostic(times: Sequence[float], errors: Sequence[float], rho: float, N: int):
    """First recorded time with ``error >= N^-rho``, or None."""
    level = N ** (-rho)
    for t, e in zip(times, errors):
        if e >= level:
            return float(t)
    return None


def crossing_fractions(times, paths: np.ndarray, rho: float, N_list) -> list[float]:
    """Per N, the fraction of replicas whose error path never reaches ``N^-rho``."""
    out = []
    for i, N in enumerate(N_list):
        hits = [stopping_time_diagnostic(times, paths[i, r], rho, N) for r in range(paths.shape[1])]
        out.append(sum(h is None for h in hits) / len(hits))
    return out


class Theorem1Setup:
    """Torus system: reference PDE solution plus per-run particle simulation."""

    def __init__(self, plan: ExperimentPlan, K: Kernel, p0: GridField):
        self.plan, self.K, self.p0 = plan, K, p0
        M = plan.resolution
        Mref = plan.ref_resolution or M
        ref_dt = plan.ref_dt or plan.dt / 4
        self.ref = solve_fp_torus(resample(p0, Mref), K, plan.T, SolverConfig(dt=ref_dt, store=plan.checkpoints))
        coarse = solve_fp_torus(resample(p0, Mref), K, plan.T, SolverConfig(dt=2 * ref_dt, store=plan.checkpoints))
        self.ref_error = max(float(np.sqrt(np.mean((a.values - b.values) ** 2))) for a, b in
                             zip(self.ref.fields, coarse.fields))
        self.ref_fields = [resample(f, M) for f in self.ref.fields]
        self.m = Mollifier(plan.beta)
        self.force = Kernel.zero(K.dim or p0.dim) if plan.negative_control else K

    def run(self, N: int, seed: int) -> dict:
        plan = self.plan
        Vn = mollifier_scale(self.m, N, self.p0.dim, plan.resolution)
        ens = sample_from_density(resample(self.p0, plan.resolution), N, seed=seed)
        errs = {s.label(): [] for s in plan.norms}
        k = [0]

        def record(e):
            ref = self.ref_fields[k[0]]
            pN = None
            spec = None
            for s in plan.norms:
                if s.smoothness < 0:
                    spec = spec or spectrum_by_deposit(e, plan.spectrum_kmax)
                    errs[s.label()].append(measure_minus_field_norm(spec, ref, s))
                else:
                    pN = pN if pN is not None else mollified_density(e, Vn)
                    errs[s.label()].append(evaluate_norm(pN - ref, s))
            k[0] += 1

        cfg = SdeConfig(dt=plan.dt, T=plan.T, seed=seed)
        simulate_torus(ens, self.force, self.m, cfg, plan.resolution, checkpoints=plan.checkpoints,
                       on_checkpoint=record)
        return {lab: np.array(v) for lab, v in errs.items()}


class Theorem2Setup:
    """Particle game against a solved mean-field game."""

    def __init__(self, plan: ExperimentPlan, problem, solution):
        self.plan, self.problem, self.solution = plan, problem, solution
        self.ref_error = 0.0

    def run(self, N: int, seed: int) -> dict:
        from .mfg import particle_game

        plan = self.plan
        rec = particle_game(self.problem, self.solution, N, plan.beta, plan.resolution, dt=plan.dt, seed=seed,
                            checkpoints=plan.checkpoints, norms=plan.norms)
        return rec.errors


_ACTIVE_SETUP = None


def _run_job(job):
    _, _, N, seed = job
    return _ACTIVE_SETUP.run(N, seed)


def _map_jobs(setup, jobs, workers: int):
    """Yield ``setup.run`` results in job order, serially or on a forked pool."""
    global _ACTIVE_SETUP
    if workers <= 1 or len(jobs) < 2:
        for _, _, N, seed in jobs:
            yield setup.run(N, seed)
        return
    import multiprocessing

    _ACTIVE_SETUP = setup
    try:
        with multiprocessing.get_context("fork").Pool(min(workers, len(jobs))) as pool:
            yield from pool.imap(_run_job, jobs)
    finally:
        _ACTIVE_SETUP = None


def run_convergence_study(plan: ExperimentPlan, setup=None, progress: Callable | None = None,
                          workers: int = 1) -> ConvergenceReport:
    """Simulate every ``(N, replica)`` job, fit slopes per norm and issue the verdict.

    The verdict for a norm is ``consistent`` when the bootstrap interval of
    the fitted decay magnitude lies at or above
    ``max(rho - 0.1, min_decay)``, ``inconsistent`` when it lies entirely
    below, otherwise ``inconclusive``.  The overall verdict is the worst one.
    Jobs are seeded independently of their schedule, so ``workers > 1``
    (a forked process pool) reproduces the serial results bitwise.
    """
    t0 = time.time()
    if setup is None:
        setup = default_setup(plan)
    rho = plan.rho()
    labels = [s.label() for s in plan.norms]
    nN, R, C = len(plan.N_list), plan.replicas, plan.checkpoints
    paths = {lab: np.zeros((nN, R, C)) for lab in labels}
    jobs = [(i, r, N, run_seed(plan.seed_base, N, r)) for i, N in enumerate(plan.N_list) for r in range(R)]
    for (i, r, N, _), res in zip(jobs, _map_jobs(setup, jobs, workers)):
        for lab in labels:
            paths[lab][i, r] = res[lab]
        if progress is not None:
            progress(N, r)
    times = np.linspace(0, plan.T, C)
    errors = {lab: p.max(axis=2) for lab, p in paths.items()}
    threshold = max(rho - 0.1, plan.min_decay)
    fits = {}
    for lab in labels:
        means = errors[lab].mean(axis=1)
        slope, icpt = fit_slope(plan.N_list, means)
        ci = bootstrap_slope(plan.N_list, errors[lab], plan.bootstrap, plan.seed_base)
        fits[lab] = NormFit(lab, slope, ci, icpt, means.tolist(), verdict(ci, threshold))
    order = ["inconsistent", "inconclusive", "consistent"]
    overall = min((f.verdict for f in fits.values()), key=order.index)
    notes = []
    smallest = min(float(e.min()) for e in errors.values())
    if setup.ref_error * 10 > smallest:
        notes.append(f"reference self-convergence error {setup.ref_error:.3g} is not 10x below "
                     f"the smallest particle error {smallest:.3g}")
        if overall == "consistent":
            overall = "inconclusive"
    crossing = crossing_fractions(times, paths[labels[0]], rho, plan.N_list) if rho > 0 else []
    rep = ConvergenceReport(plan, rho, errors, paths, times, fits, overall, threshold, crossing, notes,
                            {"seconds": time.time() - t0, "reference_error": setup.ref_error})
    return rep


def default_setup(plan: ExperimentPlan):
    from .setups import ACCEPTANCE_KERNEL, build_density, build_kernel, hopf_cole_problem

    if plan.system == "theorem1":
        K = build_kernel(plan.kernel or ACCEPTANCE_KERNEL, plan.d)
        p0 = build_density(plan.p0 or {"formula": "cosine", "amplitude": 0.5}, plan.ref_resolution or plan.resolution,
                           plan.d)
        return Theorem1Setup(plan, K, p0)
    from .mfg import MfgConfig, solve_mfg

    problem = hopf_cole_problem(T=plan.T, eta=plan.eta or 0.5)
    return Theorem2Setup(plan, problem, solve_mfg(problem, MfgConfig(dt=plan.dt)))


# Groenwall-type utilities with the generalised Mittag-Leffler kernel

def _ml_series(chi: float, z, shift: float = 0.0, n_terms: int | None = None, rtol: float = 1e-16):
    """``sum_{n>=0} z^(n chi + shift) / Gamma(n chi + shift + 1)`` for ``z >= 0``."""
    if not chi > 0:
        raise ValueError(f"chi must be positive, got {chi}")
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise ValueError("the series is evaluated for z >= 0 only")
    out = np.zeros_like(z)
    pos = z > 0
    if shift == 0:
        out[~pos] = 1.0
    lz = np.log(z[pos])
    acc = np.zeros_like(lz)
    peak = int(np.ceil((z.max() if z.size else 0) / chi)) + 2 if z.size else 2
    limit = n_terms if n_terms is not None else 100_000
    for n in range(limit):
        a = n * chi + shift
        if a == 0:
            term = np.ones_like(lz)
        else:
            term = np.exp(a * lz - special.gammaln(a + 1))
        acc += term
        if n_terms is None and n > peak and np.all(term < rtol * acc):
            break
    out[pos] = acc
    return out if out.ndim else float(out)


def mittag_leffler(chi: float, z, n_terms: int | None = None):
    """``E_chi(z) = sum_n z^(n chi) / Gamma(n chi + 1)``.

    The series stops once a term falls below ``1e-16`` times the partial sum
    (past the largest term), unless ``n_terms`` fixes the count.
    """
    return _ml_series(chi, z, 0.0, n_terms)


def mittag_leffler_derivative(chi: float, z, n_terms: int | None = None):
    """``E'_chi(z) = sum_{n>=1} z^(n chi - 1) / Gamma(n chi)`` for ``z > 0``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0):
        raise ValueError("the derivative is evaluated for z > 0 only")
    return _ml_series(chi, z, chi - 1.0, n_terms) if chi != 1 else np.exp(z)


def gronwall_bound(a: Sequence[float], b: float, chi: float, t_grid: Sequence[float]) -> np.ndarray:
    """``a(t) + theta int_0^t E'_chi(theta (t - s)) a(s) ds`` with ``theta = (b Gamma(chi))^(1/chi)``.

    ``a`` is taken piecewise linear between the samples and the kernel is
    integrated exactly: with ``E`` and its primitive ``F`` the weights follow
    from ``theta E'_chi(theta(t - s)) = -d/ds E_chi(theta(t - s))``.
    """
    if not chi > 0:
        raise ValueError(f"chi must be positive, got {chi}")
    t = np.asarray(t_grid, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape != t.shape:
        raise ValueError("a and t_grid must have the same length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be increasing")
    theta = (b * special.gamma(chi)) ** (1 / chi)
    out = a.copy()
    if theta == 0:
        return out
    for n in range(1, len(t)):
        s = t[: n + 1]
        z = theta * (t[n] - s)
        E = mittag_leffler(chi, z)
        F = _ml_series(chi, z, 1.0) / theta      # int_0^{t-s} E_chi(theta r) dr
        h = np.diff(s)
        total = 0.0
        for j in range(n):
            # int_{s_j}^{s_j+1} theta E'(theta(t-s)) [a_j + (a_j+1 - a_j)(s - s_j)/h] ds
            w0 = E[j] - E[j + 1]
            lin = -E[j + 1] * h[j] + (F[j] - F[j + 1])
            total += a[j] * w0 + (a[j + 1] - a[j]) * lin / h[j]
        out[n] = a[n] + total
    return out


def gronwall_closed_form(a_sup: float, b: float, chi: float, T: float) -> float:
    """``sup u <= (sup a)(1 + E_chi(theta T))``."""
    theta = (b * special.gamma(chi)) ** (1 / chi)
    return a_sup * (1 + mittag_leffler(chi, theta * T))
