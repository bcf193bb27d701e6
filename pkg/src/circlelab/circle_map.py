"""The map family f = alpha*xi + a (mod 1), its noise and critical geometry.

Positions on the circle are floats in [0, 1).  A "lift" value is the same
quantity before reduction mod 1, which is what the branch tracker works with.
"""
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import AlphaTooSmall, DegenerateCritical, NonPhysicalProfile

TWO_PI = 2.0 * math.pi
PROFILES = ("sine", "two-bump", "test-linear")
BUMP = 0.75  # second-harmonic weight; above 1/2 the profile has two bumps per period
MASK64 = (1 << 64) - 1


# -- profiles -----------------------------------------------------------------

def _xi(kind, u):
    if kind == "sine":
        return np.sin(TWO_PI * u)
    if kind == "two-bump":
        return np.sin(TWO_PI * u) + BUMP * np.sin(2 * TWO_PI * u)
    return np.asarray(u, dtype=float) * 1.0


def _dxi(kind, u):
    if kind == "sine":
        return TWO_PI * np.cos(TWO_PI * u)
    if kind == "two-bump":
        return TWO_PI * np.cos(TWO_PI * u) + 2 * TWO_PI * BUMP * np.cos(2 * TWO_PI * u)
    return np.ones_like(np.asarray(u, dtype=float))


def _d2xi(kind, u):
    if kind == "sine":
        return -TWO_PI**2 * np.sin(TWO_PI * u)
    if kind == "two-bump":
        return (-TWO_PI**2 * np.sin(TWO_PI * u)
                - 4 * TWO_PI**2 * BUMP * np.sin(2 * TWO_PI * u))
    return np.zeros_like(np.asarray(u, dtype=float))


# scalar versions for the per-step orbit loop (math.sin is bit-identical to
# np.sin for float64 on supported platforms, checked in the tests)
def _xi_scalar(kind):
    if kind == "sine":
        return lambda u: math.sin(TWO_PI * u)
    if kind == "two-bump":
        return lambda u: math.sin(TWO_PI * u) + BUMP * math.sin(2 * TWO_PI * u)
    return lambda u: u


def _dxi_scalar(kind):
    if kind == "sine":
        return lambda u: TWO_PI * math.cos(TWO_PI * u)
    if kind == "two-bump":
        return lambda u: (TWO_PI * math.cos(TWO_PI * u)
                          + 2 * TWO_PI * BUMP * math.cos(2 * TWO_PI * u))
    return lambda u: 1.0


@dataclass(frozen=True)
class MapFamily:
    """f_{alpha,a}(x) = alpha*xi(x) + a (mod 1) for a built-in profile xi.

    "test-linear" uses xi(x) = x, so alpha is the slope of a synthetic
    piecewise-linear circle map (alpha=2 is the doubling map, alpha=1 a
    rotation).  It has no critical points and is flagged non-physical.
    """
    xi_kind: str
    alpha: float
    a: float = 0.0

    def __post_init__(self):
        if self.xi_kind not in PROFILES:
            raise ValueError(f"unknown profile {self.xi_kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.a < 1.0:
            raise ValueError("a must lie in [0, 1)")

    @property
    def physical(self):
        return self.xi_kind != "test-linear"

    def xi(self, u):
        return _xi(self.xi_kind, u)

    def dxi(self, u):
        return _dxi(self.xi_kind, u)

    def d2xi(self, u):
        return _d2xi(self.xi_kind, u)

    @property
    def xi_prime_sup(self):
        """sup |xi'| over the circle."""
        return _xi_prime_sup(self.xi_kind)

    @property
    def critical_points(self):
        """Sorted critical points of xi (empty for test-linear)."""
        if not self.physical:
            return np.empty(0)
        return np.array(_critical_scan(self.xi_kind, 1e-12)[0])


class CriticalSet(NamedTuple):
    points: tuple
    min_second_deriv: float
    count: int


@dataclass(frozen=True)
class NoiseModel:
    """Uniform noise on [-epsilon, epsilon]; c is the regime exponent."""
    epsilon: float
    c: float = 0.5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.c < 1:
            raise ValueError("c must lie in (0, 1)")

    def in_regime(self, alpha):
        """True when epsilon > alpha^(c-1), the theorems' noise regime."""
        return self.epsilon > alpha ** (self.c - 1.0)


# -- critical set ---------------------------------------------------------------

@lru_cache(maxsize=None)
def _xi_prime_sup(kind):
    u = np.linspace(0.0, 1.0, 1 << 16, endpoint=False)
    return float(np.max(np.abs(_dxi(kind, u))))


@lru_cache(maxsize=None)
def _critical_scan(kind, tol):
    cells = 1 << 16
    grid = np.arange(cells + 1) / cells
    d = _dxi(kind, grid)
    roots = []
    for i in np.nonzero(np.sign(d[:-1]) * np.sign(d[1:]) <= 0)[0]:
        lo, hi = grid[i], grid[i + 1]
        if d[i] == 0.0:
            root = lo
        elif d[i + 1] == 0.0:
            continue  # picked up as the left end of the next cell
        else:
            root = brentq(lambda u: float(_dxi(kind, u)), lo, hi,
                          xtol=min(tol, 1e-15) * 1e-3, rtol=4 * np.finfo(float).eps)
        roots.append(float(root) % 1.0)
    roots = sorted(set(roots))
    second = [abs(float(_d2xi(kind, r))) for r in roots]
    return tuple(roots), tuple(second)


def critical_set(family, tol=1e-12):
    """All zeros of xi' in [0,1) found by a 2^16-cell sign scan plus root polishing."""
    if not family.physical:
        raise NonPhysicalProfile(family.xi_kind)
    if not tol > 0:
        raise ValueError("tol must be positive")
    pts, second = _critical_scan(family.xi_kind, tol)
    for p, s in zip(pts, second):
        if s < 10 * tol:
            raise DegenerateCritical(f"|xi''({p})| = {s}")
    return CriticalSet(points=pts, min_second_deriv=min(second), count=len(pts))


# -- evaluation -----------------------------------------------------------------

def _wrap(y):
    if np.ndim(y) == 0:
        r = float(y) % 1.0
        return 0.0 if r >= 1.0 else r
    r = np.mod(y, 1.0)
    r[r >= 1.0] = 0.0
    return r


def lift_f(family, omega0, x):
    """alpha*xi(x+omega0) + a on the real line (no reduction)."""
    if np.ndim(x) == 0 and np.ndim(omega0) == 0:
        return family.alpha * _xi_scalar(family.xi_kind)(float(x) + float(omega0)) + family.a
    return family.alpha * family.xi(np.add(x, omega0)) + family.a


def eval_f(family, omega0, x):
    """f_{omega0}(x) reduced to [0,1)."""
    return _wrap(lift_f(family, omega0, x))


def deriv_f(family, omega0, x):
    if np.ndim(x) == 0 and np.ndim(omega0) == 0:
        return family.alpha * _dxi_scalar(family.xi_kind)(float(x) + float(omega0))
    return family.alpha * family.dxi(np.add(x, omega0))


def second_deriv_f(family, omega0, x):
    out = family.alpha * family.d2xi(np.add(x, omega0))
    return float(out) if np.ndim(out) == 0 else out


def lift_diff(family, omega0, x, h):
    """F(x+h) - F(x) for the lift F, without cancellation for tiny h.

    Uses sin(A+t) - sin(A) = 2 cos(A + t/2) sin(t/2), so offsets far below
    the spacing of floats near x keep full relative precision.
    """
    u = np.add(x, omega0)
    if family.xi_kind == "test-linear":
        return family.alpha * np.asarray(h, dtype=float) * 1.0
    t = TWO_PI * np.asarray(h, dtype=float)
    out = 2.0 * np.cos(TWO_PI * u + 0.5 * t) * np.sin(0.5 * t)
    if family.xi_kind == "two-bump":
        out = out + BUMP * 2.0 * np.cos(2 * TWO_PI * u + t) * np.sin(t)
    return family.alpha * out


def circle_dist(x, y):
    """Distance on R/Z."""
    d = np.abs(np.subtract(x, y)) % 1.0
    return np.minimum(d, 1.0 - d)


def shifted_critical(family, omega0):
    """The critical set of f_{omega0}, i.e. C - omega0, reduced to [0,1)."""
    return np.sort(np.mod(family.critical_points - omega0, 1.0))


def dist_r_to_critical(x, crit, omega0, r):
    """dist_r(x, C - omega0): the circle distance d if d <= r, otherwise 1."""
    pts = np.asarray(crit.points if isinstance(crit, CriticalSet) else crit, dtype=float)
    if pts.size == 0:
        return 1.0 if np.ndim(x) == 0 else np.ones(np.shape(x))
    d = circle_dist(np.asarray(x, dtype=float)[..., None], pts - omega0).min(axis=-1)
    out = np.where(d <= r, d, 1.0)
    return float(out) if np.ndim(out) == 0 else out


class Delta0(NamedTuple):
    value: float
    admissible: bool


def delta0(family, alpha=None, strict=True):
    """((#C+1) + #C/min|xi''|) * alpha^(-1/2), with the < 1/4 admissibility flag."""
    alpha = family.alpha if alpha is None else alpha
    if family.physical:
        cs = critical_set(family)
        count, mins = cs.count, cs.min_second_deriv
        val = ((count + 1) + count / mins) / math.sqrt(alpha)
    else:
        val = 1.0 / math.sqrt(alpha)
    ok = val < 0.25
    if strict and not ok:
        err = AlphaTooSmall(f"delta0 = {val} >= 1/4 at alpha = {alpha}")
        err.value = val
        raise err
    return Delta0(val, ok)


class SmallDerivMeasure(NamedTuple):
    measured: float
    bound: float
    ratio: float


def small_derivative_measure(family, K0, gamma, grid=10**7, chunk=1 << 20):
    """Lebesgue measure of {|df| < K0 alpha^gamma} against the lemma's bound.

    The grid is uniform; in each cell the signed derivative is interpolated
    linearly between the cell edges and the fraction of the cell where it
    lies in (-K, K) is counted.  This keeps the boundary error second order
    in the cell size instead of one cell per crossing.
    """
    if grid < 10**5:
        raise ValueError("grid must be at least 1e5")
    alpha = family.alpha
    K = K0 * alpha**gamma
    if family.physical:
        cs = critical_set(family)
        bound = 2 * K0 * cs.count / cs.min_second_deriv * alpha ** (gamma - 1)
    else:
        bound = 0.0
    total = 0.0
    for i0 in range(0, grid, chunk):
        i1 = min(grid, i0 + chunk)
        e = np.arange(i0, i1 + 1, dtype=float) / grid
        d = alpha * family.dxi(e)
        d0, d1 = d[:-1], d[1:]
        slope = d1 - d0
        flat = slope == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-K - d0) / slope
            t2 = (K - d0) / slope
        lo = np.clip(np.minimum(t1, t2), 0.0, 1.0)
        hi = np.clip(np.maximum(t1, t2), 0.0, 1.0)
        frac = np.where(flat, (np.abs(d0) < K).astype(float), hi - lo)
        total += math.fsum(frac)
    measured = total / grid
    ratio = measured / bound if bound > 0 else float("nan")
    return SmallDerivMeasure(measured, bound, ratio)


# -- noise paths ------------------------------------------------------------------

_COUNTER_ORIGIN = 1 << 62  # keeps negative time indices on valid Philox blocks


def noise_uniforms(seed, path_index, start, count, stream=0):
    """Uniforms in [0,1) for absolute time indices start..start+count-1.

    Each time index owns one Philox block keyed by (seed, path_index, stream);
    the value is the first 64-bit word of the block, so any window reproduces
    the same numbers bit for bit.  Stream 0 is the noise itself; other streams
    feed initial points and Monte-Carlo nodes.
    """
    if count <= 0:
        return np.empty(0)
    lane = (int(path_index) + (int(stream) << 40)) & MASK64
    bg = np.random.Philox(key=[int(seed) & MASK64, lane],
                          counter=[(int(start) + _COUNTER_ORIGIN) & MASK64, 0, 0, 0])
    raw = bg.random_raw(4 * count)[::4]
    return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Window omega_i, -past_len <= i < future_len, of i.i.d. U[-eps, eps] noise.

    ``origin`` is the absolute time index of relative index 0; shifting by k
    moves the origin so that the shifted value at i is the old value at i+k.
    """
    seed: int
    epsilon: float
    past_len: int
    future_len: int
    path_index: int = 0
    origin: int = 0
    values: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.past_len < 0 or self.future_len < 0:
            raise ValueError("window lengths must be nonnegative")
        if self.values is None:
            u = noise_uniforms(self.seed, self.path_index,
                               self.origin - self.past_len, self.past_len + self.future_len)
            vals = self.epsilon * (2.0 * u - 1.0)
            vals.setflags(write=False)
            object.__setattr__(self, "values", vals)
        elif len(self.values) != self.past_len + self.future_len:
            raise ValueError("values do not match the window")

    def __len__(self):
        return self.past_len + self.future_len

    def __getitem__(self, i):
        if not -self.past_len <= i < self.future_len:
            raise IndexError(f"time index {i} outside window")
        return float(self.values[i + self.past_len])

    def window(self, lo, hi):
        """Values for relative indices lo..hi-1 as an array."""
        if lo < -self.past_len or hi > self.future_len:
            raise IndexError(f"window [{lo}, {hi}) outside path")
        return self.values[lo + self.past_len:hi + self.past_len]

    @property
    def future(self):
        return self.window(0, self.future_len)

    def shift(self, k):
        """theta^k: relabel so that new[i] == old[i + k]."""
        if not -self.past_len <= k <= self.future_len:
            raise IndexError("shift leaves the window")
        return NoisePath(self.seed, self.epsilon, self.past_len + k, self.future_len - k,
                         self.path_index, self.origin + k, self.values)

    def resample_future(self, t, seed):
        """Copy with omega_i for i >= t redrawn from an independent stream."""
        vals = np.array(self.values)
        if t < self.future_len:
            u = noise_uniforms(seed, self.path_index, self.origin + t, self.future_len - t)
            vals[t + self.past_len:] = self.epsilon * (2.0 * u - 1.0)
        vals.setflags(write=False)
        return NoisePath(self.seed, self.epsilon, self.past_len, self.future_len,
                         self.path_index, self.origin, vals)

    @classmethod
    def constant(cls, value, past_len, future_len, epsilon=None):
        """Deterministic path with every omega_i equal to value (for oracles)."""
        eps = abs(value) if epsilon is None else epsilon
        vals = np.full(past_len + future_len, float(value))
        vals.setflags(write=False)
        return cls(0, eps if eps > 0 else 1e-300, past_len, future_len, 0, 0, vals)

    @classmethod
    def from_values(cls, future, past=(), epsilon=None):
        past = np.asarray(past, dtype=float)
        future = np.asarray(future, dtype=float)
        vals = np.concatenate([past, future])
        eps = float(np.max(np.abs(vals))) if epsilon is None and vals.size else (epsilon or 1.0)
        vals.setflags(write=False)
        return cls(0, eps if eps > 0 else 1e-300, len(past), len(future), 0, 0, vals)
