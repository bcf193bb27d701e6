import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circlelab.circle_map import MapFamily, NoiseModel, NoisePath, deriv_f, eval_f
from circlelab.errors import WindowTooShort
from circlelab.orbit import birkhoff_sums, iterate, large_dev_probe, lyapunov_estimate

SINE = MapFamily("sine", 400, 0.3)
DOUBLING = MapFamily("test-linear", 2.0)


def test_doubling_orbit():
    orb = iterate(DOUBLING, NoisePath.constant(0.0, 0, 3), 0.1, 3)
    assert np.allclose(orb.x, [0.1, 0.2, 0.4, 0.8], atol=1e-15)
    assert np.all(orb.logd == math.log(2))


def test_sine_reference_orbit():
    path = NoisePath(1, 0.05, 0, 10**4 + 1)
    orb = iterate(SINE, path, 0.0, 10**4)
    assert orb.n == 10**4 and np.all(orb.distr > 0)
    x = 0.0
    for i in range(5):
        x = eval_f(SINE, path[i], x)
    assert orb.x[5] == x


def test_zero_length_rejected():
    with pytest.raises(WindowTooShort):
        iterate(SINE, NoisePath(1, 0.05, 0, 10), 0.0, 0)
    with pytest.raises(WindowTooShort):
        iterate(SINE, NoisePath(1, 0.05, 0, 10), 0.0, 11)


def test_birkhoff_examples():
    orb = iterate(DOUBLING, NoisePath.constant(0.0, 0, 6), 0.1, 5)
    S, D = birkhoff_sums(orb, 0, 5)
    assert S == pytest.approx(5 * math.log(2), rel=1e-15) and D == 0.0
    assert birkhoff_sums(orb, 4, 5)[0] == orb.logd[4]
    sorb = iterate(SINE, NoisePath(1, 0.05, 0, 101), 0.0, 100)
    with mpmath.workdps(50):
        ref = float(mpmath.fsum(mpmath.mpf(v) for v in sorb.logd))
    assert birkhoff_sums(sorb, 0, 100)[0] == pytest.approx(ref, rel=1e-12)


def test_lyapunov_examples():
    noise = NoiseModel(0.05)
    est = lyapunov_estimate(DOUBLING, noise, 1000, 8, seed=3)
    assert est.lambda_hat == math.log(2) and est.stderr == 0.0
    ident = lyapunov_estimate(MapFamily("test-linear", 1.0), noise, 1000, 8, seed=3)
    assert ident.lambda_hat == 0.0 and ident.stderr == 0.0
    sine = lyapunov_estimate(SINE, noise, 10**4, 64, seed=1)
    assert sine.lambda_hat > 0 and len(sine.per_path) == 64


def test_lyapunov_is_thread_independent(monkeypatch):
    noise = NoiseModel(0.05)
    a = lyapunov_estimate(SINE, noise, 1000, 8, seed=2, threads=1)
    b = lyapunov_estimate(SINE, noise, 1000, 8, seed=2, threads=3)
    assert a == b


def test_large_dev_linear():
    fam = MapFamily("test-linear", 5.0)
    p = large_dev_probe(fam, NoiseModel(0.05), R=3.0, h=0.5, ell=32, grid=10**5)
    assert p.G_measure == 1.0 and not any(p.Pk_masses.values())
    assert p.Z == pytest.approx(math.log(3.0) * 0.5, rel=1e-15)
    assert p.P(10**6) == 0.0


def test_large_dev_sine_normalization():
    fam = MapFamily("sine", 1e3)
    p = large_dev_probe(fam, NoiseModel(1e3**-0.5), R=1e3**0.25, h=0.5, ell=32, grid=10**7)
    assert p.total_mass == pytest.approx(1.0, abs=1e-6)
    assert all(v >= 0 for v in p.Pk_masses.values())
    assert p.P(10**9) == 0.0


def test_large_dev_Z_decreasing_in_h():
    fam = MapFamily("sine", 1e3)
    Zs = [large_dev_probe(fam, NoiseModel(0.05), R=5.0, h=h, ell=8, grid=10**5).Z
          for h in (0.2, 0.4, 0.6, 0.8)]
    assert all(a > b for a, b in zip(Zs, Zs[1:]))


def test_orbit_determinism():
    a = iterate(SINE, NoisePath(5, 0.05, 0, 500, path_index=2), 0.123, 500)
    b = iterate(SINE, NoisePath(5, 0.05, 0, 800, path_index=2), 0.123, 500)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.logd, b.logd)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.floats(0, 1, exclude_max=True))
def test_cocycle_consistency(m, n, x0):
    path = NoisePath(9, 0.05, 0, m + n + 1)
    full = iterate(SINE, path, x0, m + n)
    tail = iterate(SINE, path.shift(m), full.x[m], n)
    assert np.array_equal(full.x[m:], tail.x)
    assert np.array_equal(full.logd[m:], tail.logd)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 1000), st.floats(0, 1, exclude_max=True))
def test_chain_rule(n, x0):
    path = NoisePath(4, 0.05, 0, n + 1)
    orb = iterate(SINE, path, x0, n)
    S = birkhoff_sums(orb, 0, n)[0]
    logprod = math.fsum(math.log(abs(deriv_f(SINE, path[i], orb.x[i]))) for i in range(n))
    assert abs(S - logprod) <= 1e-10 * max(1.0, abs(logprod))
