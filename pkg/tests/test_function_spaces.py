import math
from fractions import Fraction

import numpy as np
import pytest

from moderate.function_spaces import (DyadicPartition, EmpiricalSpectrum, NormSpec, ResolutionError, besov_norm,
                                      bessel_norm, block_profile, conj, dyadic_block, dyadic_blocks,
                                      empirical_spectrum, evaluate_norm, holder_seminorm, lq_norm,
                                      measure_minus_field_norm, triebel_norm)
from moderate.spectral import GridField, random_field, wavevector_norm


def rng(seed=0):
    return np.random.default_rng(seed)


def sin1(M=256):
    return GridField.from_function(lambda x: np.sin(2 * np.pi * x), M)


def single_annulus_field(j0, P, M=256):
    """cos(2 pi k x) with k chosen where phi_{j0} == 1."""
    for k in range(1, M // 2):
        if abs(P.phi(2 * np.pi * k, j0) - 1.0) < 1e-15 and all(
                P.phi(2 * np.pi * k, j) == 0.0 for j in range(-1, 12) if j != j0):
            return GridField.from_function(lambda x: np.cos(2 * np.pi * k * x), M)
    raise AssertionError(f"no pure mode for block {j0}")


def test_conj_exponents():
    assert conj(2) == Fraction(2)
    assert conj(4) == Fraction(4, 3)
    assert conj(1) == math.inf and conj(math.inf) == 1
    assert conj(1.5) == pytest.approx(3.0)


def test_lq_closed_forms():
    f = sin1()
    assert lq_norm(f, 2) == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert lq_norm(f, 4) == pytest.approx((3 / 8) ** 0.25, abs=1e-8)
    assert lq_norm(f, math.inf) == pytest.approx(1.0, abs=1e-3)
    assert lq_norm(f, 1) == pytest.approx(2 / math.pi, abs=1e-4)
    with pytest.raises(ValueError):
        lq_norm(f, 0.5)


def test_lq_monotone_in_q():
    f = random_field(128, 2, rng(1), "white")
    vals = [lq_norm(f, q) for q in (1, 1.5, 2, 3, 6, math.inf)]
    assert all(a <= b * (1 + 1e-12) for a, b in zip(vals, vals[1:]))


def test_bessel_norm_cases():
    c = GridField.from_function(lambda x: np.cos(2 * np.pi * x), 64)
    assert bessel_norm(c, 0, 3) == lq_norm(c, 3)
    assert bessel_norm(c, 2, 2) == pytest.approx((1 + 4 * math.pi**2) / math.sqrt(2), rel=1e-12)
    f = random_field(128, 1, rng(2))
    vals = [bessel_norm(f, lam, 2) for lam in (-1, 0, 0.5, 1, 2)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_partition_validation():
    with pytest.raises(ValueError):
        DyadicPartition(1.5)
    with pytest.raises(ValueError):
        DyadicPartition(1.0)


@pytest.mark.parametrize("Lambda", [1.2, 1.35])
def test_partition_of_unity_and_supports(Lambda):
    P = DyadicPartition(Lambda)
    syms = P.symbols(256, 2, 1.0)
    assert np.abs(sum(syms) - 1.0).max() < 1e-12
    assert all(s.min() >= -1e-15 for s in syms)
    for i in range(len(syms)):
        for j in range(i + 2, len(syms)):
            assert np.abs(syms[i] * syms[j]).max() == 0.0


def test_blocks_reconstruct_random_field():
    f = random_field(128, 2, rng(3))
    err = lq_norm(sum(dyadic_blocks(f, DyadicPartition()), GridField(np.zeros_like(f.values), 2)) - f, 2)
    assert err < 1e-10 * lq_norm(f, 2)


def test_constant_only_low_block():
    P = DyadicPartition()
    f = GridField(np.full(64, 3.0), 1)
    blocks = dyadic_blocks(f, P)
    assert np.allclose(blocks[0].values, 3.0, atol=1e-13)
    assert max(np.abs(b.values).max() for b in blocks[1:]) < 1e-13


def test_single_annulus_block_and_norms():
    P = DyadicPartition()
    j0 = 6
    f = single_annulus_field(j0, P)
    assert lq_norm(dyadic_block(f, j0, P) - f, 2) < 1e-13
    jm = P.j_max(f.resolution, 1)
    for j in range(-1, jm + 1):
        if abs(j - j0) > 1:
            assert np.abs(dyadic_block(f, j, P).values).max() < 1e-13
    for s, q in ((0.5, 2.0), (-0.75, 3.0), (1.0, 1.5)):
        expect = 2.0 ** (j0 * s) * lq_norm(f, q)
        assert besov_norm(f, s, q, 2.0, P) == pytest.approx(expect, rel=1e-12)
        assert triebel_norm(f, s, q, 3.0, P) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        dyadic_block(f, jm + 1, P)


def test_block_profile_matches_besov():
    f = random_field(128, 1, rng(4))
    prof = block_profile(f, 0.5, 2.0)
    assert [j for j, _ in prof] == list(range(-1, len(prof) - 1))
    assert math.sqrt(sum(v * v for _, v in prof)) == pytest.approx(besov_norm(f, 0.5, 2.0, 2.0), rel=1e-12)


def test_triebel_equals_besov_when_q_equals_r():
    f = random_field(128, 2, rng(5), "white")
    for s in (-0.5, 0.0, 0.7):
        assert triebel_norm(f, s, 2.0, 2.0) == pytest.approx(besov_norm(f, s, 2.0, 2.0), rel=1e-12)
        assert triebel_norm(f, s, 3.0, 3.0) == pytest.approx(besov_norm(f, s, 3.0, 3.0), rel=1e-12)


def test_s0_equivalence_with_l2_is_stable():
    # almost orthogonality: sum phi_j^2 lies in [1/2, 1], so the ratio is in [1/sqrt2, 1]
    ratios = []
    for seed in range(20):
        f = random_field(128, 1, rng(100 + seed), "white")
        ratios.append(besov_norm(f, 0.0, 2.0, 2.0) / lq_norm(f, 2))
    ratios = np.array(ratios)
    assert ratios.min() >= 1 / math.sqrt(2) - 1e-12 and ratios.max() <= 1 + 1e-12
    assert ratios.max() / ratios.min() < 1.2


def test_partition_independence():
    A, B = DyadicPartition(1.2), DyadicPartition(1.35)
    for seed in range(10):
        f = random_field(256, 1, rng(200 + seed))
        r = besov_norm(f, 0.5, 2.0, 2.0, A) / besov_norm(f, 0.5, 2.0, 2.0, B)
        assert 1 / 3 < r < 3


def test_besov_increasing_in_s():
    f = random_field(128, 1, rng(6), "white")
    vals = [besov_norm(f, s, 2.0, 2.0) for s in (-1, -0.5, 0, 0.5, 1)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_besov_index_domain():
    f = sin1(64)
    with pytest.raises(ValueError):
        besov_norm(f, 0, 1.0, 2.0)
    with pytest.raises(ValueError):
        triebel_norm(f, 0, 2.0, math.inf)


def test_holder_cases():
    c = GridField(np.full(64, -2.0), 1)
    assert holder_seminorm(c, 0.5) == pytest.approx(2.0)
    assert holder_seminorm(sin1(1024), 1.0, with_sup=False) == pytest.approx(2 * math.pi, rel=0.05)
    with pytest.raises(ValueError):
        holder_seminorm(c, 1.5)


def test_holder_embedding_constant_stable():
    ratios = []
    for seed in range(20):
        f = random_field(256, 1, rng(300 + seed), "smooth", kmax=20)
        ratios.append(holder_seminorm(f, 0.5) / bessel_norm(f, 1.5, 2.0))   # lam - d/q = 0.5
    ratios = np.array(ratios)
    assert ratios.max() / ratios.min() < 3


def test_negative_besov_below_bessel():
    # E^{-lam}_{q',r'} <= C H^{-lam+delta}_{q'} with delta = 0.1
    ratios = []
    for seed in range(20):
        f = random_field(256, 1, rng(400 + seed), "white")
        ratios.append(besov_norm(f, -0.75, 2.0, 2.0) / bessel_norm(f, -0.65, 2.0))
    ratios = np.array(ratios)
    assert ratios.max() < 3 and ratios.max() / ratios.min() < 1.5


def test_normspec_round_trip_and_labels():
    for spec in (NormSpec.lq(2), NormSpec.bessel(-0.5, 2), NormSpec.besov(-0.75, 2, 2),
                 NormSpec.triebel(0.5, 3, 2), NormSpec.holder(0.25)):
        assert NormSpec.from_dict(spec.as_dict()) == spec
    assert NormSpec.besov(-0.75, 2, 2).label() == "B^-0.75_2,2"
    assert NormSpec.from_dict({"kind": "Bessel", "lam": 1, "q": 2}).s == 1.0
    with pytest.raises(ValueError):
        NormSpec("Sobolev")
    with pytest.raises(ValueError):
        NormSpec.from_dict({"kind": "Lq", "p": 2})


def test_evaluate_norm_dispatch():
    f = random_field(64, 1, rng(7))
    assert evaluate_norm(f, NormSpec.lq(3)) == lq_norm(f, 3)
    assert evaluate_norm(f, NormSpec.bessel(1, 2)) == bessel_norm(f, 1, 2)
    assert evaluate_norm(f, NormSpec.besov(0.5, 2, 3)) == besov_norm(f, 0.5, 2, 3)
    assert evaluate_norm(f, NormSpec.holder(0.5)) == holder_seminorm(f, 0.5)


def test_empirical_spectrum_trivial_cases():
    one = empirical_spectrum(np.zeros((1, 1)), 8)
    assert np.allclose(one.coefficients, 1.0)
    two = empirical_spectrum(np.array([[0.0], [0.5]]), 8)
    for k in range(-8, 9):
        assert abs(two.at(k) - (1.0 if k % 2 == 0 else 0.0)) < 1e-14
    with pytest.raises(ValueError):
        empirical_spectrum(np.zeros((0, 1)), 4)


def test_empirical_spectrum_2d_direct_sum_and_chunks():
    X = rng(8).random((300, 2))
    s = empirical_spectrum(X, 5, chunk=64)
    for k in [(1, 0), (-2, 3), (5, -5)]:
        ref = np.mean(np.exp(-2j * np.pi * X @ np.array(k)))
        assert abs(s.at(k) - ref) < 1e-13
    assert np.allclose(s.truncated(3).coefficients, s.coefficients[2:9, 2:9])


def test_empirical_spectrum_clt_scale():
    N = 10_000
    s = empirical_spectrum(rng(9).random((N, 1)), 20)
    rms = math.sqrt(np.mean(np.abs(s.coefficients[21:]) ** 2))
    assert 0.5 / math.sqrt(N) < rms < 2 / math.sqrt(N)


def test_measure_minus_field_identical_is_zero():
    p = GridField.from_function(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), 64)
    kmax = 16
    coeffs = np.zeros(2 * kmax + 1, dtype=complex)
    ks = np.arange(-kmax, kmax + 1)
    coeffs[:] = [p.hat[k % 64] for k in ks]
    spec = EmpiricalSpectrum(coeffs, 10**9, kmax, 1)
    assert measure_minus_field_norm(spec, p, NormSpec.bessel(-1, 2), check_convergence=False) < 1e-14


def test_measure_minus_field_single_atom_lattice_sum():
    kmax = 2048
    spec = empirical_spectrum(np.zeros((1, 1)), kmax)
    p = GridField(np.ones(64), 1)
    val = measure_minus_field_norm(spec, p, NormSpec.bessel(-1, 2), check_convergence=False)
    k = np.arange(1, kmax + 1)
    ref = math.sqrt(2 * np.sum(1.0 / (1 + (2 * np.pi * k) ** 2)))
    assert abs(val - ref) < 1e-6
    # closed form of the full lattice sum: sum_k 1/(1+4pi^2k^2) = coth(1/2)/2
    assert abs(val - math.sqrt(0.5 / math.tanh(0.5) - 1)) < 1e-4


def test_measure_minus_field_refuses_nonnegative_smoothness():
    spec = empirical_spectrum(np.zeros((1, 1)), 16)
    with pytest.raises(ValueError):
        measure_minus_field_norm(spec, None, NormSpec.lq(2))
    with pytest.raises(ValueError):
        measure_minus_field_norm(spec, None, NormSpec.besov(0.1, 2, 2))


def test_measure_minus_field_under_resolved():
    spec = empirical_spectrum(np.zeros((1, 1)), 16)
    with pytest.raises(ResolutionError):
        measure_minus_field_norm(spec, GridField(np.ones(32), 1), NormSpec.besov(-0.3, 2, 2))


def test_duality_pairing_bound():
    X = rng(10).random((500, 1))
    p = GridField(np.ones(256), 1)
    spec = empirical_spectrum(X, 120)
    lam = 0.75
    dual = measure_minus_field_norm(spec, p, NormSpec.besov(-lam, 2, 2), check_convergence=False)
    r = rng(11)
    for _ in range(10):
        ks = r.integers(1, 30, size=3)
        a = r.normal(size=3)
        phi = GridField.from_function(lambda x: sum(ai * np.cos(2 * np.pi * ki * x) for ai, ki in zip(a, ks)), 256)
        pairing = np.mean(sum(ai * np.cos(2 * np.pi * ki * X[:, 0]) for ai, ki in zip(a, ks)))
        # the pairing is bounded with a partition-dependent constant (<= 3 by almost orthogonality)
        assert abs(pairing) <= 3 * dual * besov_norm(phi, lam, 2, 2)


def test_j_max_covers_lattice():
    P = DyadicPartition()
    for M, d in ((64, 1), (128, 2)):
        jm = P.j_max(M, d)
        r = wavevector_norm(M, d, 1.0)
        assert np.all(P.chi(r / 2.0 ** (jm + 1)) == 1.0)
