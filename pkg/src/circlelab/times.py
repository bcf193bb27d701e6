"""Pliss times, (sigma^2, r)-hyperbolic times and L-sparse times along an orbit."""
import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("pliss", "hyperbolic", "sparse", "young")


@dataclass(frozen=True)
class HyperbolicParams:
    sigma2: float = 0.75
    r: float = 1e-5
    b: float = 0.25
    L: int = 2

    def __post_init__(self):
        if not 0 < self.sigma2 < 1:
            raise ValueError("sigma2 must lie in (0,1)")
        if not 0 < self.r < 0.5:
            raise ValueError("r must lie in (0,1/2)")
        if not 0 < self.b < 0.5:
            raise ValueError("b must lie in (0,1/2)")
        if self.L < 0:
            raise ValueError("L must be nonnegative")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)


@dataclass(frozen=True, eq=False)
class TimeSet:
    indices: np.ndarray
    kind: str
    params: object = field(default=None, compare=False)

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64))
        object.__setattr__(self, "indices", idx)
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices.tolist())

    def __contains__(self, n):
        i = np.searchsorted(self.indices, n)
        return i < len(self.indices) and self.indices[i] == n

    def as_set(self):
        return set(self.indices.tolist())


def _good_block(seq, k, n, c):
    """Exact sign test of sum(seq[k:n]) - c*(n-k) >= 0 (correctly rounded)."""
    return math.fsum(list(seq[k:n]) + [-c] * (n - k)) >= 0.0


def _dd_prefix(seq, c):
    """Prefix sums of seq_i - c as unevaluated pairs hi + lo, accumulated with TwoSum."""
    hi = np.zeros(len(seq) + 1)
    lo = np.zeros(len(seq) + 1)
    h = l = 0.0
    for i, v in enumerate(seq.tolist()):
        for x in (v, -c):
            s = h + x
            bp = s - h
            l += (h - (s - bp)) + (x - bp)
            h = s
        hi[i + 1], lo[i + 1] = h, l
    return hi, lo


def _prefix_good(seq, c):
    """Boolean g[n], n=0..len: every block ending at n has average >= c.

    Uses running maxima of the shifted prefix sums.  Candidates within round-off
    of a tie are re-decided with double-double prefix sums, and blocks still
    within their error bound with compensated sums, so the result equals the
    direct double loop exactly.
    """
    seq = np.asarray(seq, dtype=float)
    m = len(seq)
    good = np.zeros(m + 1, dtype=bool)
    if m == 0:
        return good
    P = np.concatenate([[0.0], np.cumsum(seq - c)])
    runmax = np.maximum.accumulate(P[:-1])
    margin = P[1:] - runmax
    eps = np.finfo(float).eps
    tol = 1e-9 * (1.0 + np.maximum.accumulate(np.abs(P))[1:]) + 64 * eps * np.arange(1, m + 1)
    good[1:] = margin >= 0
    cand = np.nonzero(np.abs(margin) <= tol)[0] + 1
    if cand.size == 0:
        return good
    H, Lo = _dd_prefix(seq, c)
    # error of the lo accumulation: 2m roundings, each at most eps * 2m eps max|P|
    dd_tol = 16.0 * m * m * eps * eps * (1.0 + float(np.abs(H).max())) + 1e-300
    for n in cand:
        d = (H[n] - H[:n]) + (Lo[n] - Lo[:n])
        if np.any(d < -dd_tol):
            good[n] = False
            continue
        close = np.nonzero(np.abs(d) <= dd_tol)[0]
        good[n] = all(_good_block(seq, int(k), int(n), c) for k in close)
    return good


def pliss_times(seq, c1, c2=None, A=None):
    """All n with sum_{i=k}^{n-1} seq_i >= c1 (n-k) for every 0 <= k < n."""
    seq = np.asarray(seq, dtype=float)
    if c2 is not None and not c1 < c2:
        raise ValueError("need c1 < c2")
    if A is not None and seq.size and seq.max() > A:
        raise ValueError("sequence exceeds A")
    good = _prefix_good(seq, c1)
    return TimeSet(np.nonzero(good)[0], "pliss", dict(c1=c1, c2=c2, A=A))


def pliss_density_bound(seq, c2, A):
    """(avg - c2)/(A - c2), the guaranteed density when avg >= c2 (else 0)."""
    avg = float(np.mean(seq)) if len(seq) else 0.0
    return max(0.0, (avg - c2) / (A - c2))


def distance_ok(orbit, p):
    """ok[m] for m = 0..n: distr_j >= sigma^(b j) for all 1 <= j <= m."""
    m = np.arange(len(orbit.distr))
    thresh = p.sigma2 ** (p.b * m / 2.0)
    single = orbit.distr >= thresh  # NaN compares False
    single[0] = True
    return np.logical_and.accumulate(single)


def hyperbolic_times(orbit, p):
    """(sigma^2, r)-hyperbolic times of the orbit, read literally.

    n qualifies when prod_{j=k}^{n-1} |df|^-1 <= sigma^(2(n-k)) and
    dist_r(x_{n-k}, C_{theta^{n-k} omega}) >= sigma^(b(n-k)) for every
    0 <= k < n.  The distance condition ranges over positions 1..n, so it is
    a prefix condition along the orbit.
    """
    if abs(orbit.r - p.r) > 1e-15 * max(1.0, p.r):
        raise ValueError("orbit distances were cached with a different r")
    expand = _prefix_good(orbit.logd, math.log(1.0 / p.sigma2))
    dist = distance_ok(orbit, p)
    ok = expand & dist[: len(expand)]
    ok[0] = False
    return TimeSet(np.nonzero(ok)[0], "hyperbolic", p)


def sparse_times(times, L):
    """tau_1 = min(times), tau_i = min{n in times : n > L + tau_{i-1}}."""
    out = []
    last = None
    for n in times.indices.tolist():
        if last is None or n > L + last:
            out.append(n)
            last = n
    return TimeSet(np.array(out, dtype=np.int64), "sparse", times.params)


def time_density(times, n):
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = times.indices
    return int(np.count_nonzero((idx >= 1) & (idx <= n))) / n
