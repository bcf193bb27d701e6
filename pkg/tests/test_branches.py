import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circlelab.branches import (MISS, EventParams, decompose, event_batch, event_E,
                                identity_branch, invert_on_branch, push_forward, verify_witness)
from circlelab.circle_map import MapFamily, NoisePath, circle_dist, delta0, lift_f
from circlelab.errors import BranchExplosion, EmptyInterval, TargetNotCovered

SINE = MapFamily("sine", 400, 0.3)
DOUBLING = MapFamily("test-linear", 2.0)
D0 = delta0(SINE).value
EP = EventParams(L=2, delta0=D0, x0=0.0, epsilon0=D0 / 4)


def test_decompose_full_circle():
    brs = decompose(SINE, 0.0, (0.0, 1.0))
    assert len(brs) == 2
    assert brs[0].domain == pytest.approx((0.25, 0.75))
    assert brs[1].domain == pytest.approx((0.75, 1.25))
    assert brs[0].orientation == -1 and brs[1].orientation == 1


def test_decompose_inside_lap():
    assert len(decompose(SINE, 0.0, (0.3, 0.7))) == 1


def test_decompose_doubling():
    (br,) = decompose(DOUBLING, 0.0, (0.1, 0.3))
    assert br.image_length == pytest.approx(0.4)


def test_decompose_empty():
    with pytest.raises(EmptyInterval):
        decompose(SINE, 0.0, (0.3, 0.3))


def test_push_forward_doubling():
    brs = [identity_branch((0.1, 0.2))]
    path = NoisePath.constant(0.0, 0, 3)
    for i in range(3):
        brs = push_forward(DOUBLING, brs, path, i)
    assert len(brs) == 1 and brs[0].image_length == pytest.approx(0.8)


def test_push_forward_split_and_prune():
    path = NoisePath.constant(0.0, 0, 1)
    brs = push_forward(SINE, [identity_branch((0.2, 0.3))], path, 0)
    assert len(brs) == 2
    assert push_forward(SINE, [identity_branch((0.2, 0.3))], path, 0, epsilon0=0.6) == []


def test_branch_cap():
    path = NoisePath.constant(0.0, 0, 1)
    with pytest.raises(BranchExplosion):
        push_forward(SINE, [identity_branch((0.0, 1.0))], path, 0, max_branches=1)


def test_invert_examples():
    path = NoisePath.constant(0.0, 0, 1)
    (br,) = push_forward(DOUBLING, [identity_branch((0.0, 0.5))], path, 0)
    assert invert_on_branch(DOUBLING, br, (0.2, 0.4)) == pytest.approx((0.1, 0.2))
    assert invert_on_branch(DOUBLING, br, br.image) == pytest.approx(br.domain)
    with pytest.raises(TargetNotCovered):
        invert_on_branch(DOUBLING, br, (0.5, 1.5))


def test_invert_depth3_round_trip():
    path = NoisePath(1, 0.05, 0, 3)
    brs = [identity_branch((0.3, 0.3 + 1e-4))]
    for i in range(3):
        brs = push_forward(SINE, brs, path, i)
    for br in brs:
        t = (br.image[0] + 0.3 * br.image_length, br.image[0] + 0.6 * br.image_length)
        J = invert_on_branch(SINE, br, t)
        y = sorted(br.forward(SINE, np.array(J)))
        assert np.allclose(y, t, atol=1e-8)


def test_event_L0():
    ep = EventParams(0, D0, 0.0, D0 / 4)
    assert event_E(SINE, NoisePath(1, 0.05, 0, 3), (0.0, 1.0), ep) == MISS


@pytest.mark.parametrize("p", range(5))
def test_event_full_circle_depth1(p):
    path = NoisePath(1, 0.05, 0, 3, path_index=p)
    w = event_E(SINE, path, (0.0, 1.0), EP)
    assert w.hit and w.ell == 1
    assert verify_witness(SINE, path, w, EP)


def test_event_hit_rate_positive():
    d1 = D0 / 10
    hits = 0
    for p in range(200):
        path = NoisePath(1, 0.05, 0, 3, path_index=p)
        w = event_E(SINE, path, (0.3, 0.3 + d1), EP)
        hits += w.hit
        assert verify_witness(SINE, path, w, EP)
    assert hits > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1, exclude_max=True), st.floats(1e-8, 1e-6))
def test_partition_of_unity(seed, lo, width):
    # each step multiplies image lengths by ~alpha, so depth 3 needs a tiny interval
    path = NoisePath(seed, 0.05, 0, 3)
    brs = [identity_branch((lo, lo + width))]
    for i in range(3):
        brs = push_forward(SINE, brs, path, i)
        total = math.fsum(b.domain[1] - b.domain[0] for b in brs)
        assert total == pytest.approx(width, abs=1e-9)
        # image endpoints equal the composition at the domain endpoints
        for b in brs[:50]:
            ends = sorted(b.forward(SINE, np.array(b.domain)))
            assert np.allclose(ends, b.image, atol=1e-10 * max(1, abs(b.image[1])))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1, exclude_max=True))
def test_monotone_certificate(seed, lo):
    path = NoisePath(seed, 0.05, 0, 2)
    brs = [identity_branch((lo, lo + 0.05))]
    for i in range(2):
        brs = push_forward(SINE, brs, path, i)
    for b in brs[:40]:
        x = np.linspace(b.domain[0], b.domain[1], 1000)
        y = b.forward(SINE, x)
        assert np.all(b.orientation * np.diff(y) >= 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-4, 0.2))
def test_doubling_covering_growth(width):
    path = NoisePath.constant(0.0, 0, 12)
    brs = [identity_branch((0.1, 0.1 + width))]
    for n in range(1, 12):
        brs = push_forward(DOUBLING, brs, path, n - 1)
        longest = max(b.image_length for b in brs)
        if 2 ** (n - 1) * width > 2:
            break
        assert longest == pytest.approx(2**n * width, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 1, exclude_max=True))
def test_witness_validity(seed, y):
    d1 = D0 / 10
    path = NoisePath(seed, 0.05, 0, 3)
    w = event_E(SINE, path, (y - d1, y + d1), EP)
    if w.hit:
        assert verify_witness(SINE, path, w, EP)
        lo, hi = sorted(w.branch.forward(SINE, np.array(w.J)))
        assert abs(lo - (EP.target[0] + w.offset)) <= 1e-8
        assert abs(hi - (EP.target[1] + w.offset)) <= 1e-8
        # intermediate image stays epsilon0 away from the moving critical set
        if w.ell == 2:
            mid = lift_f(SINE, path[0], np.linspace(*w.J, 1000))
            d = circle_dist(mid[:, None], (SINE.critical_points - path[1])[None, :])
            assert d.min() > EP.epsilon0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6))
def test_event_batch_matches_scalar(seed):
    path = NoisePath(seed, 0.05, 0, 3)
    d1 = D0 / 10
    ys = np.linspace(0, 1, 97, endpoint=False)
    depth = event_batch(SINE, path, ys, d1, EP)
    for y, dep in zip(ys, depth):
        w = event_E(SINE, path, (y - d1, y + d1), EP)
        assert dep == (w.ell if w.hit else 0)
