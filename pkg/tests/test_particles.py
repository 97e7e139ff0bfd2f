import math

import numpy as np
import pytest

from moderate.function_spaces import empirical_spectrum, lq_norm
from moderate.kernels import Kernel, Mollifier, mollifier_scale
from moderate.particles import (ParticleEnsemble, SdeConfig, deposit, direct_torus_drift, force_symbol,
                                gaussian_increments, interpolate, martingale_diagnostic, mollified_density,
                                pair_with_test, sample_from_density, simulate_torus, spectrum_by_deposit,
                                step_box, step_torus, torus_drift, uniform_ensemble)
from moderate.pde import SolverConfig, solve_fp_torus
from moderate.spectral import GridField, gradient, random_field


def rng(seed=0):
    return np.random.default_rng(seed)


def periodised(func, x, images=2):
    return sum(func(x + n) for n in range(-images, images + 1))


def test_ensemble_wraps_and_validates():
    e = ParticleEnsemble(np.array([-0.25, 1.0, 2.5]))
    assert np.allclose(e.positions[:, 0], [0.75, 0.0, 0.5])
    assert e.N == 3 and e.dim == 1
    with pytest.raises(FloatingPointError):
        ParticleEnsemble(np.array([np.nan]))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((3, 1)), labels=np.arange(2))


def test_sde_config_validation():
    with pytest.raises(ValueError):
        SdeConfig(dt=0.05)
    with pytest.raises(ValueError):
        SdeConfig(interpolation="quintic")
    with pytest.raises(ValueError):
        SdeConfig(dt=1e-2).check_drift_bound(100.0)
    SdeConfig(dt=1e-3).check_drift_bound(100.0)
    assert SdeConfig(dt=1e-3, T=0.05).n_steps == 50


def test_noise_keyed_by_label_not_position():
    labels = np.array([3, 0, 2, 1])
    a = gaussian_increments(7, 5, labels, 2)
    b = gaussian_increments(7, 5, np.arange(4), 2)
    assert np.array_equal(a, b[labels])
    assert not np.array_equal(gaussian_increments(7, 6, labels, 2), a)


@pytest.mark.parametrize("kind", ["linear", "cubic"])
def test_deposit_interpolate_adjoint(kind):
    X = rng(1).random((500, 2))
    phi = random_field(32, 2, rng(2), "white")
    S = deposit(X, 32, kind=kind)
    grid_pair = float(np.sum(S * phi.values)) * phi.cell_volume
    assert abs(grid_pair - pair_with_test(ParticleEnsemble(X), phi, kind)) < 1e-10
    assert float(S.sum()) * phi.cell_volume == pytest.approx(1.0, abs=1e-13)


def test_pair_with_test_trivial():
    ens = uniform_ensemble(100, 2, seed=3)
    assert pair_with_test(ens, GridField(np.ones((16, 16)), 2)) == pytest.approx(1.0, abs=1e-14)
    two = ParticleEnsemble(np.array([0.0, 0.5]))
    cos = GridField.from_function(lambda x: np.cos(2 * np.pi * x), 64)
    assert abs(pair_with_test(two, cos)) < 1e-15


def test_pair_with_test_mollification_error_decreases():
    m, M = Mollifier(0.5), 512
    phi = random_field(M, 1, rng(4), "smooth", kmax=12)
    errs = []
    for N in (100, 1000, 10000):
        ens = uniform_ensemble(N, 1, seed=5)
        pN = mollified_density(ens, mollifier_scale(m, N, 1, M))
        errs.append(abs(pair_with_test(ens, phi) - (phi * pN).integral()))
    assert errs[0] > errs[1] > errs[2]


def test_mollified_density_single_particle():
    m, M, x0 = Mollifier(0.5), 256, 0.3137
    ens = ParticleEnsemble(np.array([[x0]]))
    pN = mollified_density(ens, mollifier_scale(m, 1, 1, M))
    x = pN.coords()[0]
    ref = periodised(lambda y: m.value((y - x0)[:, None], 1, 1), x)
    assert np.sum(np.abs(pN.values - ref)) * pN.cell_volume < 1e-3


def test_mollified_density_mass_and_lln():
    m, M = Mollifier(0.25), 512
    sups = []
    for N in (1000, 10_000, 100_000):
        pN = mollified_density(uniform_ensemble(N, 1, seed=6), mollifier_scale(m, N, 1, M))
        assert pN.integral() == pytest.approx(1.0, abs=1e-10)
        assert pN.values.min() >= -1e-12 - 0.05 * pN.values.max()
        sups.append(np.abs(pN.values - 1).max())
    assert sups[0] > sups[1] > sups[2]


def test_drift_grid_matches_direct_sum():
    K, m, M = Kernel.sine_series({1: 1.0, 2: 0.5}), Mollifier(0.5), 256
    ens = uniform_ensemble(512, 1, seed=7)
    Vn = mollifier_scale(m, ens.N, 1, M)
    grid = torus_drift(ens, force_symbol(K, Vn), M)
    direct = direct_torus_drift(ens, K, Vn)
    assert np.abs(grid - direct).max() < 1e-3 * np.abs(direct).max()


def test_mirror_pair_opposite_drift():
    K, m, M = Kernel.sine_series({1: 1.0, 3: 0.2}), Mollifier(0.5), 128
    ens = ParticleEnsemble(np.array([[0.5 - 0.137], [0.5 + 0.137]]))
    Vn = mollifier_scale(m, 2, 1, M)
    d = direct_torus_drift(ens, K, Vn)
    assert abs(d[0, 0] + d[1, 0]) < 1e-8 and abs(d[0, 0]) > 1e-3
    g = torus_drift(ens, force_symbol(K, Vn), M)
    assert abs(g[0] + g[1]) < 1e-8


def test_brownian_variance_torus():
    N, T = 10_000, 0.01
    ens = ParticleEnsemble(np.full((N, 1), 0.5))
    cfg = SdeConfig(dt=1e-3, T=T, seed=11)
    traj = simulate_torus(ens, Kernel.zero(1), Mollifier(0.25), cfg, 64, checkpoints=2)
    X = traj.snapshots[-1].positions[:, 0] - 0.5
    var, se = X.var(), 2 * T * math.sqrt(2 / N)
    assert abs(var - 2 * T) < 3 * se
    assert traj.snapshots[-1].t == pytest.approx(T)


def test_deterministic_replay():
    K, m = Kernel.sine_series({1: -3.0}), Mollifier(0.5)
    cfg = SdeConfig(dt=1e-3, T=0.02, seed=5)
    a = simulate_torus(uniform_ensemble(300, 1, 1), K, m, cfg, 128, checkpoints=3)
    b = simulate_torus(uniform_ensemble(300, 1, 1), K, m, cfg, 128, checkpoints=3)
    assert all(np.array_equal(x.positions, y.positions) for x, y in zip(a.snapshots, b.snapshots))
    c = simulate_torus(uniform_ensemble(300, 1, 1), K, m, SdeConfig(dt=1e-3, T=0.02, seed=6), 128, checkpoints=3)
    assert not np.array_equal(a.snapshots[-1].positions, c.snapshots[-1].positions)


def test_exchangeability():
    K, m, M = Kernel.sine_series({1: -2.0}), Mollifier(0.5), 128
    cfg = SdeConfig(dt=1e-3, T=0.01, seed=9)
    ens = uniform_ensemble(200, 1, 2)
    perm = rng(3).permutation(200)
    Vn = mollifier_scale(m, 200, 1, M)
    a = simulate_torus(ens, K, m, cfg, M, checkpoints=3)
    b = simulate_torus(ens.permuted(perm), K, m, cfg, M, checkpoints=3)
    for x, y in zip(a.snapshots, b.snapshots):
        assert np.abs(x.positions[perm] - y.positions).max() < 1e-12
        assert lq_norm(mollified_density(x, Vn) - mollified_density(y, Vn), math.inf) < 1e-10


def test_step_box_pure_brownian():
    N, dt = 20_000, 1e-2
    ens = ParticleEnsemble(np.full((N, 2), 4.0), length=8.0, seed=4)
    cfg = SdeConfig(dt=dt, T=dt, diffusivity=0.5)
    new, _ = step_box(ens, None, None, None, cfg)
    X = new.positions - 4.0
    se = dt * math.sqrt(2 / N)
    assert np.all(np.abs(X.var(axis=0) - dt) < 3 * se)


def test_step_box_constant_drift_translates():
    ens = ParticleEnsemble(rng(5).random((50, 2)) * 8, length=8.0)
    cfg = SdeConfig(dt=1e-3, T=1e-3, diffusivity=0.5)
    c = np.array([0.7, -1.3])
    new, _ = step_box(ens, None, lambda x, u: np.broadcast_to(c, x.shape), None, cfg, noise=np.zeros((50, 2)))
    assert np.allclose(new.positions, np.mod(ens.positions + c * 1e-3, 8.0), atol=1e-14)


def test_step_box_feedback_mean_drift():
    u = GridField.from_function(lambda x, y: np.cos(2 * np.pi * x / 8) + 0.5 * np.sin(2 * np.pi * y / 8), 64, 2, 8.0)
    alpha = -gradient(u)
    N, dt = 1000, 1e-3
    ens = ParticleEnsemble(rng(6).random((N, 2)) * 8, length=8.0, seed=8)
    cfg = SdeConfig(dt=dt, T=dt, diffusivity=0.5)
    new, xi = step_box(ens, alpha, None, None, cfg)
    disp = new.positions - ens.positions
    disp -= 8.0 * np.round(disp / 8.0)
    expect = interpolate(alpha, ens.positions).mean(axis=0)
    se = math.sqrt(dt / N) / dt
    assert np.all(np.abs(disp.mean(axis=0) / dt - expect) < 3 * se)


def test_martingale_zero_noise():
    m = Mollifier(0.5)
    cfg = SdeConfig(dt=1e-3, T=5e-3)
    traj = simulate_torus(uniform_ensemble(64, 1, 0), Kernel.zero(1), m, cfg, 64, checkpoints=2,
                          retain_noise=True, zero_noise=True)
    path = martingale_diagnostic(traj, m, 64, 64)
    assert path.sup("L2") == 0.0


def test_martingale_requires_noise():
    m = Mollifier(0.5)
    traj = simulate_torus(uniform_ensemble(8, 1, 0), Kernel.zero(1), m, SdeConfig(dt=1e-3, T=2e-3), 64)
    with pytest.raises(ValueError):
        martingale_diagnostic(traj, m, 8, 64)


def test_martingale_single_particle_single_step():
    m, M = Mollifier(0.5), 128
    cfg = SdeConfig(dt=1e-3, T=1e-3, seed=3)
    traj = simulate_torus(ParticleEnsemble(np.array([[0.37]])), Kernel.zero(1), m, cfg, M, checkpoints=2,
                          retain_noise=True)
    path = martingale_diagnostic(traj, m, 1, M, method="direct")
    x = path.fields[-1].coords()[0]
    X0, dW = traj.positions[0][0, 0], traj.increments[0][0, 0]
    ref = periodised(lambda y: m.gradient((y - X0)[:, None], 1, 1)[:, 0], x) * dW
    assert np.abs(path.fields[0].values).max() == 0.0
    assert np.abs(path.fields[-1].values - ref).max() < 1e-12


def test_martingale_deposit_matches_direct():
    m, M, N = Mollifier(0.5), 256, 256
    cfg = SdeConfig(dt=1e-3, T=0.01, seed=4)
    traj = simulate_torus(uniform_ensemble(N, 1, 4), Kernel.zero(1), m, cfg, M, checkpoints=2, retain_noise=True)
    a = martingale_diagnostic(traj, m, N, M, method="direct")
    b = martingale_diagnostic(traj, m, N, M, method="deposit")
    assert abs(a.sup("L2") - b.sup("L2")) < 0.02 * a.sup("L2")


def test_sample_from_density_moments():
    p = GridField.from_function(lambda x: 1 + 0.8 * np.cos(2 * np.pi * x), 128)
    ens = sample_from_density(p, 50_000, seed=1)
    c = np.mean(np.cos(2 * np.pi * ens.positions[:, 0]))
    assert abs(c - 0.4) < 3 * math.sqrt(0.5 / 50_000)


def test_spectrum_by_deposit_matches_exact():
    ens = uniform_ensemble(2000, 2, seed=2)
    a = spectrum_by_deposit(ens, 8)
    b = empirical_spectrum(ens, 8)
    assert np.abs(a.coefficients - b.coefficients).max() < 1e-4


def test_mean_field_tracking_improves_with_N():
    K, m, M, T = Kernel.sine_series({1: -2.0}), Mollifier(0.0), 64, 0.05
    p0 = GridField.from_function(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), M)
    ref = solve_fp_torus(p0, K, T, SolverConfig(dt=1e-3)).final
    errs = []
    for N in (500, 20_000):
        ens = sample_from_density(p0, N, seed=3)
        traj = simulate_torus(ens, K, m, SdeConfig(dt=1e-3, T=T, seed=3), M, checkpoints=2)
        # beta = 0: compare the empirical measure in a negative norm through its low modes
        s = empirical_spectrum(traj.snapshots[-1], 4)
        errs.append(max(abs(s.at(k) - ref.hat[k % M]) for k in range(1, 5)))
    assert errs[1] < errs[0]


def test_step_torus_is_euler_maruyama():
    ens = uniform_ensemble(64, 1, seed=5)
    m = Mollifier(0.3)
    Vn = mollifier_scale(m, 64, 1, 128)
    fh = force_symbol(Kernel.sine_series({1: -2.0}), Vn)
    cfg = SdeConfig(dt=1e-3, T=1e-3, seed=5)
    new, xi = step_torus(ens, fh, 128, cfg)
    drift = torus_drift(ens, fh, 128)
    assert np.array_equal(xi, gaussian_increments(5, 0, ens.labels, 1))
    assert np.allclose(new.positions, (ens.positions + 1e-3 * drift + math.sqrt(2e-3) * xi) % 1.0, rtol=0,
                       atol=1e-15)
    assert (new.step, new.t) == (1, pytest.approx(1e-3))
    zero, _ = step_torus(ens, fh, 128, cfg, noise=np.zeros((64, 1)))
    assert np.allclose(zero.positions, (ens.positions + 1e-3 * drift) % 1.0, rtol=0, atol=1e-15)
