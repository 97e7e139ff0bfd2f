"""Library walkthrough: limit equation, particle system, error norms and a small rate fit.

Run with ``python demos/walkthrough.py``; takes a few seconds on one core.
"""
import numpy as np

from moderate.function_spaces import NormSpec, evaluate_norm
from moderate.kernels import Kernel, Mollifier, mollifier_scale
from moderate.particles import SdeConfig, mollified_density, sample_from_density, simulate_torus
from moderate.pde import SolverConfig, solve_fp_torus
from moderate.rates import RateParams, bootstrap_slope, fit_slope, rho_branches
from moderate.setups import build_density

M, T, dt, beta = 256, 0.05, 6.25e-4, 0.4
K = Kernel.sine_series({1: -15.0})                       # aggregating interaction
p0 = build_density({"formula": "cosine", "amplitude": 0.5}, M, 1)

# 1. the limit equation, solved in mild form on the torus
ref = solve_fp_torus(p0, K, T, SolverConfig(dt=dt / 4, store=9))
print(f"limit: peak density {p0.values.max():.3f} -> {ref.final.values.max():.3f} at T={T}")

# 2. the theoretical rate for these exponents
params = RateParams(beta=beta, d=1, q=2, lam=0.75)
br = rho_branches(params)
print(f"rate exponent rho = {br['rho']:.3f} (active branch: {br['active']})")

# 3. particle systems of growing size, error measured in L2 and a negative Besov norm
norms = [NormSpec.lq(2), NormSpec.besov(-0.75, 2, 2)]
m = Mollifier(beta)
Ns, R = [256, 1024, 4096], 3
errs = {s.label(): np.zeros((len(Ns), R)) for s in norms}
for i, N in enumerate(Ns):
    Vn = mollifier_scale(m, N, 1, M)
    for r in range(R):
        seed = 100 * i + r
        ens = sample_from_density(p0, N, seed=seed)
        path = {s.label(): [] for s in norms}

        def record(e):
            diff = mollified_density(e, Vn) - ref.at(e.t)
            for s in norms:
                path[s.label()].append(evaluate_norm(diff, s))

        simulate_torus(ens, K, m, SdeConfig(dt=dt, T=T, seed=seed), M, checkpoints=9, on_checkpoint=record)
        for lab, v in path.items():
            errs[lab][i, r] = max(v)

# 4. log-log fit with a replica bootstrap
for lab, e in errs.items():
    slope, _ = fit_slope(Ns, e.mean(axis=1))
    lo, hi = bootstrap_slope(Ns, e, 1000, seed=0)
    print(f"{lab:>12}: sup_t error {e.mean(axis=1).round(4)} slope {slope:+.3f} CI [{lo:+.3f}, {hi:+.3f}]")
