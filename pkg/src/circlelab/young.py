"""Young times: sparse hyperbolic times at which the expansion event fires."""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .branches import event_E, verify_witness
from .circle_map import NoisePath
from .ensemble import map_paths
from .errors import WindowTooShort
from .orbit import initial_point, iterate
from .times import TimeSet, hyperbolic_times, sparse_times

SATURATED = "saturated"


@dataclass(frozen=True, eq=False)
class YoungRecord:
    young: TimeSet
    sparse: TimeSet
    hyperbolic: TimeSet
    witnesses: dict = field(repr=False)
    horizon: int = 0

    def counts(self):
        """#Y_i for i = 1..horizon."""
        c = np.zeros(self.horizon + 1, dtype=np.int64)
        c[self.young.indices] = 1
        return np.cumsum(c)[1:]

    def density_curve(self):
        i = np.arange(1, self.horizon + 1)
        return i, self.counts() / i

    def density(self, n=None):
        n = self.horizon if n is None else n
        return float(self.counts()[n - 1] / n)


def young_times(orbit, path, hp, ep, delta1):
    """Young times of (omega, x0): sparse hyperbolic i with theta^i omega in E(B_delta1(x_i))."""
    if path.future_len < orbit.n + ep.L:
        raise WindowTooShort(f"path covers {path.future_len}, need {orbit.n + ep.L}")
    fam = orbit.family
    hyp = hyperbolic_times(orbit, hp)
    sp = sparse_times(hyp, hp.L)
    young, wit = [], {}
    if ep.L > 0:
        for i in sp:
            y = orbit.x[i]
            w = event_E(fam, path.shift(i), (y - delta1, y + delta1), ep)
            if w.hit:
                young.append(i)
                wit[i] = w
    return YoungRecord(TimeSet(np.array(young, dtype=np.int64), "young", hp), sp, hyp,
                       wit, orbit.n)


def replay_witnesses(record, orbit, path, ep):
    """Re-validate every stored witness by dense forward sampling."""
    fam = orbit.family
    return all(verify_witness(fam, path.shift(i), w, ep) for i, w in record.witnesses.items())


def h_stat(record, theta1):
    """Smallest n with #Y_i/i >= theta1 for all observed i >= n, else SATURATED."""
    if not theta1 > 0:
        raise ValueError("theta1 must be positive")
    _, d = record.density_curve()
    bad = np.nonzero(d < theta1)[0]
    if bad.size == 0:
        return 1
    last = int(bad[-1]) + 1  # 1-based index of the last failure
    if last >= record.horizon:
        return SATURATED
    return last + 1


def young_run(family, noise, n, seed, path_index, hp, ep, delta1):
    path = NoisePath(seed, noise.epsilon, 0, n + ep.L + 1, path_index=path_index)
    orb = iterate(family, path, initial_point(seed, path_index), n, hp.r)
    return orb, path, young_times(orb, path, hp, ep, delta1)


class ThetaEstimate(NamedTuple):
    theta1_hat: float
    checkpoints: np.ndarray
    median_curve: np.ndarray
    final_density: np.ndarray
    records: list


def density_theta1(family, noise, n, ensemble, seed, hp, ep, delta1, points=100, threads=None):
    """10th percentile over paths of #Y_n/n, plus the median density curve."""
    if ensemble < 16:
        raise ValueError("ensemble must be >= 16")
    recs = map_paths(lambda p: young_run(family, noise, n, seed, p, hp, ep, delta1)[2],
                     range(ensemble), threads)
    checks = np.unique(np.linspace(1, n, points).round().astype(np.int64))
    dens = np.array([[r.counts()[c - 1] / c for c in checks] for r in recs])
    final = dens[:, -1]
    return ThetaEstimate(float(np.percentile(final, 10)), checks,
                         np.median(dens, axis=0), final, recs)


def H_n_membership(family, path, x, n, hp, ep, delta1):
    """True iff n is a Young time of (omega, x)."""
    if n < 1 or ep.L <= 0:
        return False
    orb = iterate(family, path, x, n, hp.r)
    hyp = hyperbolic_times(orb, hp)
    if n not in hyp:
        return False
    if n not in sparse_times(hyp, hp.L):
        return False
    y = orb.x[n]
    return event_E(family, path.shift(n), (y - delta1, y + delta1), ep).hit
