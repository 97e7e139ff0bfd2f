import dataclasses
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import special

from moderate.acceptance import ac5_plan
from moderate.function_spaces import NormSpec
from moderate.kernels import Kernel
from moderate.rates import (ExperimentPlan, RateParams, Theorem1Setup, bootstrap_slope, crossing_fractions,
                            fit_slope, gronwall_bound, gronwall_closed_form, mittag_leffler,
                            mittag_leffler_derivative, rho_branches, rho_grid_scan, rho_theorem1, rho_theorem2,
                            run_convergence_study, run_seed, stopping_time_diagnostic, verdict)
from moderate.setups import build_density, build_kernel


def test_rho_theorem1_worked_example():
    p = RateParams(beta=0.4, d=2, q=4, lam=1.5, delta=0.01)
    assert rho_theorem1(p, exact=True) == Fraction(19, 100)
    assert rho_theorem1(p) == pytest.approx(0.19, abs=1e-15)


def test_rho_theorem1_branches():
    assert rho_theorem1(RateParams(0.0, 1, 2, 0.75)) == pytest.approx(-0.01)
    p = RateParams(0.4, 1, 2, 0.75)
    br = rho_branches(p)
    assert br["second"] == pytest.approx(0.5 - 0.4 / 2)
    assert br["first"] == pytest.approx(0.4 * 0.25)
    assert br["active"] == "first" and br["valid"]
    assert rho_theorem1(p, exact=True) == Fraction(9, 100)
    with pytest.raises(ValueError):
        rho_theorem1(RateParams(0.4, 2, 2, 1.0))


def test_rho_theorem2_worked_example_and_branches():
    p = RateParams(beta=0.3, d=1, q=2, lam=0.6, eta=0.5, delta=0.01)
    assert rho_theorem2(p, exact=True) == Fraction(1, 50)
    assert rho_branches(p, 2)["holder_branch"] == "lam-d/q"
    big = RateParams(0.3, 1, 2, 0.6, eta=10.0)
    assert rho_branches(big, 2)["first"] == pytest.approx(0.3 * 0.1)
    assert rho_theorem2(RateParams(0.0, 1, 2, 0.6, eta=0.5)) == pytest.approx(-0.01)
    with pytest.raises(ValueError):
        rho_theorem2(RateParams(0.3, 2, 2, 1.5, eta=0.5))       # q must exceed d
    with pytest.raises(ValueError):
        rho_theorem2(RateParams(0.3, 1, 2, 0.6))                # eta missing


def test_rho_monotonicity():
    rs = [rho_theorem1(RateParams(0.4, 1, 2, 0.75, delta=d)) for d in (0.001, 0.01, 0.1)]
    assert rs[0] > rs[1] > rs[2]
    ls = [rho_theorem1(RateParams(0.4, 1, 2, lam)) for lam in (0.6, 0.75, 1.0, 2.0, 4.0)]
    assert all(a <= b for a, b in zip(ls, ls[1:]))


def test_rate_params_validation():
    with pytest.raises(ValueError):
        RateParams(1.2, 1, 2, 1)
    with pytest.raises(ValueError):
        RateParams(0.5, 1, 2, 1, delta=0)
    assert RateParams(0.5, 1, math.inf, 1).inv_q() == 0


def test_grid_scan_sorted_and_filtered():
    rows = rho_grid_scan(1, [0.2, 0.4], [0.4, 0.75, 1.0], [2, 4])
    assert rows and all(r["lam"] > 1 / r["q"] for r in rows)
    assert [r["rho"] for r in rows] == sorted((r["rho"] for r in rows), reverse=True)


def test_fit_slope_exact_power_law():
    N = [2**k for k in range(6, 12)]
    slope, icpt = fit_slope(N, [3.0 * n**-0.37 for n in N])
    assert slope == pytest.approx(-0.37, abs=1e-12) and icpt == pytest.approx(math.log(3.0), abs=1e-12)


def test_bootstrap_ci_brackets_slope():
    rng = np.random.default_rng(0)
    N = np.array([2**k for k in range(8, 14)])
    errs = np.exp(rng.normal(0, 0.1, size=(len(N), 6))) * N[:, None] ** -0.4
    lo, hi = bootstrap_slope(N, errs, 2000, seed=1)
    assert lo < -0.4 < hi and hi - lo < 0.2
    same = np.tile(N[:, None] ** -0.4, (1, 4))
    lo, hi = bootstrap_slope(N, same, 200)
    assert lo == pytest.approx(-0.4, abs=1e-12) and hi == pytest.approx(-0.4, abs=1e-12)


def test_verdict_cases():
    assert verdict((-0.5, -0.3), 0.2) == "consistent"
    assert verdict((-0.1, 0.0), 0.2) == "inconsistent"
    assert verdict((-0.3, -0.1), 0.2) == "inconclusive"


def test_stopping_time_cases():
    t = np.linspace(0, 1, 5)
    assert stopping_time_diagnostic(t, np.zeros(5), 0.1, 1000) is None
    assert stopping_time_diagnostic(t, np.ones(5), 0.1, 1000) == 0.0
    assert stopping_time_diagnostic(t, [0, 0, 0.9, 0, 0], 0.1, 10) == 0.5
    paths = np.array([[[0.0, 1.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]])
    assert crossing_fractions([0, 1], paths, 0.1, [10, 100]) == [0.5, 1.0]


def test_run_seed_distinct_and_stable():
    seeds = {run_seed(3, N, r) for N in (256, 512) for r in range(4)}
    assert len(seeds) == 8
    assert run_seed(3, 256, 0) == run_seed(3, 256, 0)


def test_plan_validation():
    kw = dict(replicas=3, norms=[NormSpec.lq(2)], T=0.016, beta=0.3, q=2, lam=0.75, dt=1e-3)
    ExperimentPlan(N_list=[1, 2, 4, 8], **kw)
    with pytest.raises(ValueError):
        ExperimentPlan(N_list=[1, 2, 4], **kw)
    with pytest.raises(ValueError):
        ExperimentPlan(N_list=[1, 4, 2, 8], **kw)
    with pytest.raises(ValueError):
        ExperimentPlan(N_list=[1, 2, 4, 8], **{**kw, "replicas": 2})
    with pytest.raises(ValueError):
        ExperimentPlan(N_list=[1, 2, 4, 8], **{**kw, "T": 0.015})


class PowerLawSetup:
    """Synthetic harness input: error paths ``c N^-a`` with lognormal replica scatter."""

    ref_error = 0.0

    def __init__(self, a, checkpoints):
        self.a, self.C = a, checkpoints

    def run(self, N, seed):
        rng = np.random.default_rng(seed)
        return {"L^2": N ** -self.a * np.exp(rng.normal(0, 0.05, self.C)) * np.linspace(0.5, 1, self.C)}


def synthetic_plan(**kw):
    base = dict(N_list=[2**k for k in range(8, 14)], replicas=4, norms=[NormSpec.lq(2)], T=0.016, beta=0.4, q=2,
                lam=0.75, dt=1e-3, bootstrap=500)
    base.update(kw)
    return ExperimentPlan(**base)


def test_study_verdicts_on_synthetic_errors():
    plan = synthetic_plan()
    assert plan.rho() == pytest.approx(0.09)
    good = run_convergence_study(plan, PowerLawSetup(0.4, plan.checkpoints))
    assert good.verdict == "consistent" and good.fits["L^2"].slope == pytest.approx(-0.4, abs=0.03)
    flat = run_convergence_study(plan, PowerLawSetup(0.0, plan.checkpoints))
    assert flat.verdict == "inconsistent"
    assert good.threshold == pytest.approx(0.05)
    d = good.to_dict(include_runtime=False)
    assert "runtime" not in d and d["norms"]["L^2"]["verdict"] == "consistent"
    assert len(good.rows()) == len(plan.N_list) * plan.replicas


def test_study_deterministic_and_parallel_identical():
    plan = synthetic_plan(seed_base=5)
    a = run_convergence_study(plan, PowerLawSetup(0.3, plan.checkpoints))
    b = run_convergence_study(plan, PowerLawSetup(0.3, plan.checkpoints))
    c = run_convergence_study(plan, PowerLawSetup(0.3, plan.checkpoints), workers=2)
    assert a.to_dict(False) == b.to_dict(False) == c.to_dict(False)


def test_null_model_calibration():
    # K = 0: p^N - p is sampling error of size N^{-(1 - beta)/2} in L^2 (d = 1)
    beta = 0.3
    plan = ExperimentPlan(N_list=[2**k for k in range(8, 13)], replicas=4, norms=[NormSpec.lq(2)], T=0.02,
                          beta=beta, q=2, lam=0.75, dt=1.25e-3, resolution=256, checkpoints=5, seed_base=2,
                          bootstrap=500)
    p0 = build_density({"formula": "cosine", "amplitude": 0.5}, 256, 1)
    rep = run_convergence_study(plan, Theorem1Setup(plan, Kernel.zero(1), p0))
    assert abs(rep.fits["L^2"].slope + (1 - beta) / 2) < 0.1


def test_checkpoint_doubling_changes_sup_little():
    # rate-experiment settings at the largest ensemble, where the sup enters the fit with most weight
    base = ac5_plan()
    K, p0 = build_kernel(base.kernel, 1), build_density(base.p0, base.resolution, 1)
    sups = []
    for C in (base.checkpoints, 2 * base.checkpoints - 1):
        plan = dataclasses.replace(base, checkpoints=C)
        sups.append(Theorem1Setup(plan, K, p0).run(base.N_list[-1], 3))
    for lab, v in sups[0].items():
        a, b = v.max(), sups[1][lab].max()
        assert a <= b and (b - a) / a < 0.02


def test_mittag_leffler_basics():
    for chi in (0.3, 0.5, 1.0, 2.0):
        assert mittag_leffler(chi, 0.0) == 1.0
    z = np.array([0.1, 1.0, 3.0])
    assert np.allclose(mittag_leffler(1.0, z), np.exp(z), rtol=1e-14)
    # series in z^chi: E_{1/2}(z) = exp(z) erfc(-sqrt z), E_2(z) = cosh z
    assert np.allclose(mittag_leffler(0.5, z), special.erfcx(-np.sqrt(z)), rtol=1e-13)
    assert np.allclose(mittag_leffler(2.0, z), np.cosh(z), rtol=1e-14)
    with pytest.raises(ValueError):
        mittag_leffler(0.0, 1.0)


def test_mittag_leffler_sandwich():
    for t in (0.1, 1.0, 5.0):
        e = mittag_leffler(0.5, t)
        assert math.exp(t) <= e <= 2 * math.exp(t)


def test_mittag_leffler_truncation():
    z = np.linspace(0, 10, 21)
    for chi in (0.5, 1.0, 1.5):
        a = mittag_leffler(chi, z, n_terms=300)
        b = mittag_leffler(chi, z, n_terms=600)
        assert np.all(np.abs(a - b) <= 1e-12 * np.abs(b))
        assert np.allclose(mittag_leffler(chi, z), b, rtol=1e-14)


def test_mittag_leffler_derivative_matches_finite_difference():
    z = np.array([0.2, 1.0, 4.0])
    h = 1e-6
    for chi in (0.5, 1.5):
        fd = (mittag_leffler(chi, z + h) - mittag_leffler(chi, z - h)) / (2 * h)
        assert np.allclose(mittag_leffler_derivative(chi, z), fd, rtol=1e-7)


def test_gronwall_classical_case():
    t = np.linspace(0, 2, 201)
    A, b = 1.7, 0.8
    bound = gronwall_bound(np.full_like(t, A), b, 1.0, t)
    assert np.abs(bound - A * np.exp(b * t)).max() < 1e-8
    assert gronwall_closed_form(A, b, 1.0, 2.0) == pytest.approx(A * (1 + math.exp(1.6)))


def test_gronwall_fractional_dominates_closed_form_shape():
    t = np.linspace(0, 1, 101)
    a = 1 + t
    bound = gronwall_bound(a, 2.0, 0.5, t)
    assert np.all(bound >= a) and np.all(np.diff(bound) > 0)
    assert bound[-1] <= gronwall_closed_form(a.max(), 2.0, 0.5, 1.0)
