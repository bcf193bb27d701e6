import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circlelab.circle_map import MapFamily, NoiseModel, NoisePath, lift_f
from circlelab.errors import AllBelowFloor, WindowTooShort
from circlelab.measure import (Observable, annealed_operator, correlation_curve, decay_fit,
                               pullback_densities, pullback_density, quenched_correlation,
                               sampled_lip, stationary_density, ulam_matrix, uniform)

from oracles import fine_quadrature, ulam_entry_oracle

SINE = MapFamily("sine", 400, 0.3)
DOUBLING = MapFamily("test-linear", 2.0)
IDENT = MapFamily("test-linear", 1.0)


def test_ulam_doubling_and_identity():
    assert np.allclose(ulam_matrix(DOUBLING, 0.0, 2).P, 0.5)
    assert np.array_equal(ulam_matrix(IDENT, 0.0, 16).P, np.eye(16))


def test_ulam_preconditions():
    with pytest.raises(ValueError):
        ulam_matrix(SINE, 0.0, 1)
    with pytest.raises(ValueError):
        ulam_matrix(SINE, 0.0, 8, "sampled", k=10)


@pytest.mark.parametrize("kind,alpha", [("sine", 400), ("sine", 7.3), ("two-bump", 11.0)])
def test_ulam_exact_against_root_oracle(kind, alpha):
    fam = MapFamily(kind, alpha, 0.3)
    N, om = 8, 0.013
    P = ulam_matrix(fam, om, N).P
    F = lambda x: lift_f(fam, om, x)
    for i, j in [(0, 0), (1, 3), (2, 5), (5, 7), (7, 2)]:
        assert P[i, j] == pytest.approx(ulam_entry_oracle(F, N, i, j, sub=512), abs=1e-9)


@pytest.mark.parametrize("kind", ["sine", "two-bump", "test-linear"])
def test_ulam_row_stochastic(kind):
    P = ulam_matrix(MapFamily(kind, 400 if kind != "test-linear" else 3.0, 0.3), 0.02, 256).P
    assert np.all(P >= 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12, rtol=0)


@pytest.fixture(scope="module")
def exact_ref():
    return ulam_matrix(SINE, 0.01, 1024).P


@pytest.mark.xfail(strict=True, reason="10^4 samples per bin leave ~0.065 row L1 error at N=1024")
def test_ulam_sampled_1e4_within_002(exact_ref):
    S = ulam_matrix(SINE, 0.01, 1024, "sampled", 10**4).P
    assert np.abs(exact_ref - S).sum(axis=1).max() <= 0.02


def test_ulam_sampled_1e5_within_002(exact_ref):
    S = ulam_matrix(SINE, 0.01, 1024, "sampled", 10**5).P
    assert np.abs(exact_ref - S).sum(axis=1).max() <= 0.02


def test_composition_drift():
    rng = np.random.default_rng(0)
    Ps = [ulam_matrix(SINE, w, 64).P for w in rng.uniform(-0.05, 0.05, 10)]
    M = np.eye(64)
    for t in range(1000):
        M = M @ Ps[t % 10]
    assert np.abs(M.sum(axis=1) - 1).max() <= 1e-10


def test_pullback_examples():
    path = NoisePath(1, 0.05, 20, 1)
    assert np.array_equal(pullback_density(SINE, path, 64, 0), uniform(64))
    assert np.allclose(pullback_density(DOUBLING, path, 64, 20), uniform(64), atol=1e-15)
    with pytest.raises(WindowTooShort):
        pullback_density(SINE, path, 64, 21)


def test_pullback_associativity():
    path = NoisePath(1, 0.05, 30, 5)
    for n in (0, 3, 10):
        h = pullback_density(SINE, path, 128, n)
        pushed = h @ ulam_matrix(SINE, path[0], 128).P
        assert np.array_equal(pushed, pullback_density(SINE, path.shift(1), 128, n + 1))


def test_pullback_batch_matches_single():
    path = NoisePath(2, 0.05, 20, 1)
    hs = pullback_densities(SINE, path, 128, [5, 12, 20])
    for n, h in hs.items():
        assert np.array_equal(h, pullback_density(SINE, path, 128, n))
        assert abs(h.sum() - 1) <= 1e-12 and np.all(h >= 0)


def test_pullback_decreases_to_roundoff():
    # differences shrink geometrically until they reach the double-precision floor
    path = NoisePath(1, 0.05, 40, 1)
    hs = pullback_densities(SINE, path, 256, range(0, 41, 2))
    d = [np.abs(hs[n + 2] - hs[n]).sum() for n in range(0, 39, 2)]
    floor = 1e-14
    first_floor = next(i for i, v in enumerate(d) if v <= floor)
    assert all(a > b for a, b in zip(d[:first_floor], d[1:first_floor + 1]))
    assert max(d[first_floor:]) <= floor


def test_stationary_trivial_maps():
    for fam in (DOUBLING, IDENT):
        st_ = stationary_density(fam, NoiseModel(0.05), 32)
        # uniform is exactly invariant; the noise average leaves only round-off
        assert np.allclose(st_.h, uniform(32), atol=1e-15, rtol=0)
        assert st_.residual <= 1e-15 and st_.iterations == 1


def test_annealed_row_stochastic():
    Q = annealed_operator(SINE, NoiseModel(0.05), 128).P
    assert np.all(Q >= 0) and np.allclose(Q.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    with pytest.raises(ValueError):
        annealed_operator(SINE, NoiseModel(0.05), 128, k_noise=8)


def test_observable_norms():
    c = Observable.cos(256)
    assert c.sup == pytest.approx(1.0, abs=1e-3)
    assert c.lip_norm >= sampled_lip(c)
    assert Observable.constant(8).lip_norm == 1.0
    g = Observable.grid(np.arange(4.0))
    assert g(np.array([0.1, 0.3, 0.99])).tolist() == [0.0, 1.0, 3.0]


@pytest.mark.parametrize("direction", ["forward", "backward"])
def test_correlation_trivial_observables(direction):
    path = NoisePath(1, 0.05, 30, 31)
    one, cos = Observable.constant(256), Observable.cos(256)
    zero = Observable.constant(256, 0.0)
    for n in (0, 1, 5):
        assert quenched_correlation(SINE, path, one, cos, n, direction, 256, 5000,
                                    n_back=20).C <= 1e-10
        assert quenched_correlation(SINE, path, cos, zero, n, direction, 256, 5000,
                                    n_back=20).C == 0.0


def test_correlation_n0_against_quadrature():
    path = NoisePath(1, 0.05, 10, 1)
    cos = Observable.cos(1024)
    r = quenched_correlation(SINE, path, cos, cos, 0, "backward", 1024, 10**5, n_back=10)
    h = pullback_density(SINE, path, 1024, 10)
    centers = (np.arange(1024) + 0.5) / 1024
    mu_phi = float(h @ np.cos(2 * np.pi * centers))
    ref = abs(fine_quadrature(lambda x: np.cos(2 * np.pi * x) ** 2)
              - mu_phi * fine_quadrature(lambda x: np.cos(2 * np.pi * x)))
    assert abs(r.C - ref) <= 3 * r.sigma


def test_doubling_correlation_closed_form():
    # cos(2 pi 2^n x) is orthogonal to cos(2 pi x) for n >= 1 and mu = m
    path = NoisePath.constant(0.0, 10, 12)
    cos = Observable.cos(256)
    curve = correlation_curve(DOUBLING, path, cos, cos, 10, "forward", 256, 10**5, n_back=10)
    for n, C, s in curve:
        assert abs(C - (0.5 if n == 0 else 0.0)) <= 3 * s


def test_decay_fit_examples():
    fit = decay_fit([(n, math.exp(-0.7 * n)) for n in range(20)])
    assert fit.gamma_hat == pytest.approx(0.7, abs=1e-9) and fit.r2 == pytest.approx(1.0)
    flat = decay_fit([(n, 0.3) for n in range(10)])
    assert flat.gamma_hat == 0.0 and flat.degenerate
    with pytest.raises(AllBelowFloor):
        decay_fit([(n, 1e-3, 1e-2) for n in range(10)])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**5), st.integers(0, 8), st.sampled_from([64, 128, 200]))
def test_constant_observable_normalization(seed, n, N):
    path = NoisePath(seed, 0.05, 12, 9)
    r = quenched_correlation(SINE, path, Observable.constant(N, 2.5), Observable.cos(N), n,
                             "forward", N, 2000, n_back=4)
    assert r.C <= 1e-10
