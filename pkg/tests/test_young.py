import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from circlelab.branches import EventParams, event_E
from circlelab.circle_map import MapFamily, NoiseModel, NoisePath
from circlelab.config import reference_config
from circlelab.orbit import iterate
from circlelab.times import HyperbolicParams
from circlelab.young import (SATURATED, H_n_membership, density_theta1, h_stat,
                             replay_witnesses, young_run, young_times)

from oracles import brute_sparse

CFG = reference_config()
LIN4 = MapFamily("test-linear", 4.0)
# wide interval so the depth-1 event always fires for the slope-4 map
FORCED = EventParams(L=1, delta0=0.05, x0=0.5, epsilon0=0.01)
HP1 = HyperbolicParams(sigma2=0.75, L=1)


@pytest.fixture(scope="module")
def ref_run():
    return young_run(CFG.family, CFG.noise, 2000, CFG.seed, 0, CFG.hp, CFG.ep, CFG.delta1)


def test_L0_gives_empty():
    ep = dataclasses.replace(CFG.ep, L=0)
    _, _, rec = young_run(CFG.family, CFG.noise, 500, 1, 0, CFG.hp, ep, CFG.delta1)
    assert len(rec.young) == 0


def test_no_hyperbolic_times_gives_empty():
    ident = MapFamily("test-linear", 1.0)
    _, _, rec = young_run(ident, CFG.noise, 200, 1, 0, CFG.hp, FORCED, 0.2)
    assert len(rec.hyperbolic) == 0 and len(rec.young) == 0


def test_reference_nonempty_and_replayed(ref_run):
    orb, path, rec = ref_run
    assert len(rec.young) > 0
    assert replay_witnesses(rec, orb, path, CFG.ep)


def test_subset_chain(ref_run):
    _, _, rec = ref_run
    assert rec.young.as_set() <= rec.sparse.as_set() <= rec.hyperbolic.as_set()
    assert list(rec.sparse) == brute_sparse(rec.hyperbolic.as_set(), CFG.hp.L)


def test_shift_covariance(ref_run):
    orb, path, rec = ref_run
    for i in list(rec.sparse)[:60]:
        shifted = path.shift(i)
        y = iterate(CFG.family, shifted, orb.x[i], 1, CFG.hp.r).x[0]
        w = event_E(CFG.family, shifted, (y - CFG.delta1, y + CFG.delta1), CFG.ep)
        assert w.hit == (i in rec.young)


def test_forced_density_half():
    est = density_theta1(LIN4, NoiseModel(0.05), 1000, 16, 3, HP1, FORCED, 0.2)
    assert np.all(est.final_density == 0.5)
    assert est.theta1_hat == 0.5


def test_theta1_L0_is_zero():
    ep = dataclasses.replace(FORCED, L=0)
    est = density_theta1(LIN4, NoiseModel(0.05), 200, 16, 3, HP1, ep, 0.2)
    assert est.theta1_hat == 0.0


def test_theta1_reference_positive():
    est = density_theta1(CFG.family, CFG.noise, 1000, 16, CFG.seed, CFG.hp, CFG.ep, CFG.delta1)
    assert est.theta1_hat > 0


def test_h_stat_examples():
    _, _, rec = young_run(LIN4, NoiseModel(0.05), 100, 1, 0, HP1, FORCED, 0.2)
    # density is 1 at i=1 and at least 1/2 afterwards
    assert h_stat(rec, 0.5) == 1
    assert h_stat(rec, 0.9) == SATURATED
    with pytest.raises(ValueError):
        h_stat(rec, 0.0)


def test_h_stat_reference_finite():
    est = density_theta1(CFG.family, CFG.noise, 1000, 16, CFG.seed, CFG.hp, CFG.ep, CFG.delta1)
    vals = [h_stat(r, est.theta1_hat / 2) for r in est.records]
    assert sum(v != SATURATED for v in vals) >= 0.95 * len(vals)


def test_H_n_membership(ref_run):
    orb, path, rec = ref_run
    x0 = orb.x[0]
    t = int(rec.young.indices[0])
    assert H_n_membership(CFG.family, path, x0, t, CFG.hp, CFG.ep, CFG.delta1)
    # the slope-1 map never expands, so no n is hyperbolic
    ident = MapFamily("test-linear", 1.0)
    assert not H_n_membership(ident, NoisePath(1, 0.05, 0, 10), 0.1, 5, HP1, FORCED, 0.2)
    ep0 = dataclasses.replace(CFG.ep, L=0)
    assert not H_n_membership(CFG.family, path, x0, t, CFG.hp, ep0, CFG.delta1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**4))
def test_young_membership_matches_record(p):
    orb, path, rec = young_run(CFG.family, CFG.noise, 300, CFG.seed, p, CFG.hp, CFG.ep,
                               CFG.delta1)
    for n in range(1, 300, 37):
        assert H_n_membership(CFG.family, path, orb.x[0], n, CFG.hp, CFG.ep,
                              CFG.delta1) == (n in rec.young)
