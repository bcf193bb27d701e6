"""Orbits of the random composition, the derivative cocycle and the probes on it."""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .circle_map import (NoisePath, TWO_PI, _dxi_scalar, _xi_scalar, circle_dist,
                         critical_set, noise_uniforms)
from .ensemble import map_paths
from .errors import CriticalHit, WindowTooShort

X0_STREAM = 1
LOG_TINY = 1e-300


@dataclass(frozen=True, eq=False)
class Orbit:
    """x_i = f^i_omega(x0) for i = 0..n with the cached cocycle data.

    distr has n+1 entries; distr[n] needs omega_n and is NaN when the path
    window stops at n-1.
    """
    x: np.ndarray
    logd: np.ndarray
    distr: np.ndarray
    r: float
    path: NoisePath = field(repr=False)
    family: object = None
    near_critical: tuple = ()

    @property
    def n(self):
        return len(self.logd)


def _shifted_dist(x, omegas, pts, r):
    if len(pts) == 0:
        return np.ones(len(x))
    d = circle_dist(x[:, None], pts[None, :] - omegas[:, None]).min(axis=1)
    return np.where(d <= r, d, 1.0)


def iterate(family, path, x0, n, r=0.05):
    """Run n steps of f_{omega_{n-1}} o ... o f_{omega_0} from x0."""
    if n < 1:
        raise WindowTooShort("n must be >= 1")
    if path.future_len < n:
        raise WindowTooShort(f"path covers {path.future_len} steps, need {n}")
    om = path.window(0, n).tolist()
    xi = _xi_scalar(family.xi_kind)
    dxi = _dxi_scalar(family.xi_kind)
    alpha, a = family.alpha, family.a
    xs = [0.0] * (n + 1)
    ld = [0.0] * n
    x = float(x0) % 1.0
    if x >= 1.0:
        x = 0.0
    xs[0] = x
    for i in range(n):
        u = x + om[i]
        d = abs(alpha * dxi(u))
        if d < LOG_TINY:
            raise CriticalHit(f"|df| = {d} at step {i}")
        ld[i] = math.log(d)
        y = (alpha * xi(u) + a) % 1.0
        x = 0.0 if y >= 1.0 else y
        xs[i + 1] = x
    xs = np.array(xs)
    logd = np.array(ld)
    pts = family.critical_points
    m = min(n + 1, path.future_len)
    distr = np.full(n + 1, np.nan)
    distr[:m] = _shifted_dist(xs[:m], path.window(0, m), pts, r)
    near = ()
    if len(pts):
        raw = circle_dist(xs[:n, None], pts[None, :] - path.window(0, n)[:, None]).min(axis=1)
        near = tuple(int(i) for i in np.nonzero(raw < 1e-15)[0])
    return Orbit(xs, logd, distr, r, path, family, near)


def iterate_many(family, omegas, x0):
    """Vectorized pseudo-orbits of many points along one noise sequence.

    Returns an array of shape (len(omegas)+1, len(x0)).
    """
    x = np.mod(np.asarray(x0, dtype=float), 1.0)
    out = np.empty((len(omegas) + 1, x.size))
    out[0] = x
    for i, w in enumerate(omegas):
        y = np.mod(family.alpha * family.xi(x + w) + family.a, 1.0)
        y[y >= 1.0] = 0.0
        out[i + 1] = x = y
    return out


def birkhoff_sums(orbit, k, n):
    """(sum of logd_i, sum of -log distr_i) over k <= i < n, compensated."""
    if not 0 <= k < n <= orbit.n:
        raise ValueError("need 0 <= k < n <= orbit.n")
    S = math.fsum(orbit.logd[k:n])
    D = math.fsum(-np.log(orbit.distr[k:n]))
    return S, D + 0.0


def initial_point(seed, path_index):
    return float(noise_uniforms(seed, path_index, 0, 1, stream=X0_STREAM)[0])


class LyapunovEstimate(NamedTuple):
    lambda_hat: float
    stderr: float
    per_path: list


def lyapunov_estimate(family, noise, n, ensemble, seed, threads=None):
    """Mean of S_n/n over independent paths started at Lebesgue-random points."""
    if n < 1000 or ensemble < 8:
        raise ValueError("need n >= 1000 and ensemble >= 8")

    def one(p):
        path = NoisePath(seed, noise.epsilon, 0, n, path_index=p)
        orb = iterate(family, path, initial_point(seed, p), n)
        return math.fsum(orb.logd) / n

    vals = map_paths(one, range(ensemble), threads)
    lam = math.fsum(vals) / ensemble
    if all(v == vals[0] for v in vals):
        return LyapunovEstimate(vals[0], 0.0, vals)
    se = float(np.std(vals, ddof=1) / math.sqrt(ensemble))
    return LyapunovEstimate(lam, se, vals)


# -- large-deviation probe ----------------------------------------------------------

@dataclass(frozen=True)
class LargeDevProbe:
    R: float
    h: float
    ell: int
    G_measure: float
    Pk_masses: dict
    Z: float
    Z1: float
    V: float
    beta2: float
    epsilon: float
    hypotheses_hold: bool

    def P(self, k):
        return self.Pk_masses.get(k, 0.0)

    @property
    def total_mass(self):
        return self.G_measure + math.fsum(self.Pk_masses.values())


def _small_set_integral(family):
    """V = -integral of log|df| over {|df| < 1}, by adaptive quadrature per component."""
    alpha = family.alpha
    if not family.physical:
        return -math.log(alpha) if alpha < 1 else 0.0
    dxi = _dxi_scalar(family.xi_kind)
    g = lambda u: abs(alpha * dxi(u))
    total = 0.0
    for c in critical_set(family).points:
        for sgn in (-1.0, 1.0):
            # walk out until |df| >= 1, then pin the boundary
            step = 1.0 / (64 * alpha)
            w = step
            while g(c + sgn * w) < 1.0:
                w += step
            edge = brentq(lambda t: g(c + sgn * t) - 1.0, 0.0, w, xtol=1e-16)
            val, _ = quad(lambda t: -math.log(max(g(c + sgn * t), 1e-300)), 0.0, edge,
                          limit=200, points=[0.0])
            total += val
    return total


def large_dev_probe(family, noise, R, h, ell, beta2=0.1, grid=10**7, chunk=1 << 20):
    """m(G(R)), the P(k) masses, V, Z(h), Z_1(h) and the lemma's hypotheses."""
    if not (R > 1 and 0 < h < 1 and ell >= 8):
        raise ValueError("need R > 1, h in (0,1), ell >= 8")
    eps = noise.epsilon
    logR = math.log(R)
    G = 0.0
    counts = {}
    for i0 in range(0, grid, chunk):
        i1 = min(grid, i0 + chunk)
        u = (np.arange(i0, i1) + 0.5) / grid
        d = np.abs(family.alpha * family.dxi(u))
        G += int(np.count_nonzero(d > R))
        rest = d[d <= R]
        with np.errstate(divide="ignore"):
            k = np.floor(-ell * np.log(rest) / logR).astype(np.int64)
        k = np.maximum(k, -ell)
        ks, cs = np.unique(k, return_counts=True)
        for kk, cc in zip(ks.tolist(), cs.tolist()):
            counts[kk] = counts.get(kk, 0) + cc
    masses = {k: c / grid for k, c in sorted(counts.items())}
    G_measure = G / grid
    V = _small_set_integral(family)
    Z = logR * (1 - h) - V / (2 * eps)
    Z1 = logR * (1 - h) - (beta2 + 1) / (2 * eps) * V
    ok = Z > 0 and eps > (1 - G_measure) / h
    return LargeDevProbe(R, h, ell, G_measure, masses, Z, Z1, V, beta2, eps, ok)
