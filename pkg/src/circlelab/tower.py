"""Pathwise Young-tower partition of the base Delta = B_delta0(x0).

Elements w_{n,l} at time n are pullbacks of intervals of width ~delta0*alpha^-l
through n expanding steps, so their widths fall below the float range after a
few dozen steps.  The construction therefore runs on a grid of sample points
of Delta: each sample carries its float orbit and the image of its maximal
monotone branch as offsets around the orbit point.  Everything that depends
only on the noise (events on a circle grid, the cover, admitted U' intervals)
is stored per time step in a ``CircleLevel`` so the return time of any point
can be replayed exactly.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .branches import (EventParams, _bisect_inverse, _copies, _shifted_points, event_E,
                       event_batch, invert_on_branch)
from .circle_map import (MASK64, NoisePath, TWO_PI, circle_dist, critical_set, lift_diff,
                         lift_f, noise_uniforms)
from .ensemble import map_paths
from .errors import BranchObstruction, InvalidLevel, NotAdmissible

CAL_TAG = 0x9E3779B97F4A7C15  # seed offset for the C1 calibration stream
UNASSIGNED = 0


@dataclass(frozen=True)
class TowerConstants:
    delta0: float
    delta1: float
    delta2: float
    sigma: float
    C0: float
    C1: float
    beta: float
    N0: int
    N1: int
    L: int
    x0: float = 0.0
    epsilon0: float = 0.0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


# -- constants -----------------------------------------------------------------------

def _witness_ratios(family, path, w, samples=65):
    """Sampled constants of the expansion-lemma estimates along one witness."""
    z = np.linspace(w.J[0], w.J[1], samples)
    orbit = [z]
    logd = np.zeros(samples)
    for i in range(w.ell):
        logd = logd + np.log(np.abs(family.alpha * family.dxi(orbit[-1] + path[i])))
        orbit.append(lift_f(family, path[i], orbit[-1]))
    end = orbit[-1]
    dend = np.abs(np.diff(end))
    fwd = float(np.exp(logd.max()))
    back = 0.0
    for j in range(w.ell + 1):
        back = max(back, float(np.max(np.abs(np.diff(orbit[j])) / dend)))
    i, k = np.triu_indices(samples, 1)
    dist = np.abs(end[i] - end[k])
    ok = dist > 0
    dist_ratio = float(np.max(np.abs(logd[i] - logd[k])[ok] / dist[ok])) if ok.any() else 0.0
    return max(fwd, back, dist_ratio)


def calibrate_C1(family, epsilon, ep, delta1, seed, samples=256):
    """Sampled sup of the expansion-lemma constants over random event witnesses.

    Uses its own seed stream so the constant, and with it N0, does not depend on
    the path being partitioned.
    """
    cal = (int(seed) + CAL_TAG) & MASK64
    centers = noise_uniforms(cal, 0, 0, samples, stream=2)
    C1 = 1.0
    for s in range(samples):
        path = NoisePath(cal, epsilon, 0, ep.L + 1, path_index=s)
        y = float(centers[s])
        w = event_E(family, path, (y - delta1, y + delta1), ep)
        if w.hit:
            C1 = max(C1, _witness_ratios(family, path, w))
    return C1


def tower_constants(family, epsilon, hp, ep, delta1, seed, C1=None, C0=float("nan")):
    sigma = hp.sigma
    if C1 is None:
        C1 = calibrate_C1(family, epsilon, ep, delta1, seed)
    d0 = ep.delta0
    delta2 = d0 + 9 * delta1 * C1 / 2
    N0 = 2
    while C1 * sigma**N0 >= 1:
        N0 += 1
    N1 = 1
    while not (delta2 * sigma**N1 <= d0 and 2 * delta1 * sigma**N1 <= d0 * (1 - sigma**N1) / C1):
        N1 += 1
    return TowerConstants(d0, delta1, delta2, sigma, C0, C1, C1 * sigma**N0, N0, N1, ep.L,
                          ep.x0, ep.epsilon0)


# -- step 1 -----------------------------------------------------------------------------

def giupar_element(family, omega0, delta0, x0):
    """w_{1,0} = (x - d, x + d) inside Delta with |df| >= sqrt(alpha) and f-image of length 1.

    y is the leftmost point of Delta (as a lifted interval) such that
    |df| >= sqrt(alpha) on [y, y + alpha^-1/2]; x = y + alpha^-1/2 / 2 and d is the
    smallest radius whose image covers the circle.
    """
    s = math.sqrt(family.alpha)
    lo, hi = x0 - delta0, x0 + delta0
    pts = _shifted_points(family, omega0)
    g = lambda u: abs(family.alpha * float(family.dxi(u + omega0))) - s
    bad = []
    for k in range(math.floor(lo) - 1, math.ceil(hi) + 1):
        for p in pts:
            c = p + k
            step = 1e-4 / family.alpha
            left = right = c
            w = step
            while g(c - w) < 0:
                w *= 2
            left = brentq(lambda t: g(c - t), 0.0, w, xtol=1e-16)
            w = step
            while g(c + w) < 0:
                w *= 2
            right = brentq(lambda t: g(c + t), 0.0, w, xtol=1e-16)
            bad.append((c - left, c + right))
    bad.sort()
    y = lo
    width = 1.0 / s
    changed = True
    while changed:
        changed = False
        for b0, b1 in bad:
            if b0 < y + width and b1 > y:
                y = b1
                changed = True
    if y + width > hi:
        raise NotAdmissible("no slope window of length alpha^-1/2 inside Delta")
    x = y + width / 2
    length = lambda r: abs(lift_f(family, omega0, x + r) - lift_f(family, omega0, x - r)) - 1.0
    if length(width / 2) < 0:
        raise NotAdmissible("w_{1,0} image does not cover the circle")
    d = brentq(length, 0.0, width / 2, xtol=1e-17, rtol=4 * np.finfo(float).eps)
    # nudge outward so the image length is at least one
    while length(d) < 0:
        d = np.nextafter(d, 1.0)
    return (x - d, x + d)


# -- per-step circle data ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CircleLevel:
    """Noise-only data at time n: cover centers, witnesses and the admitted U' family."""
    n: int
    centers: np.ndarray
    ell: np.ndarray
    U: np.ndarray       # (k, 2) lifted near the center
    Up: np.ndarray      # (k, 2)
    offset: np.ndarray  # target copy index m
    admitted: np.ndarray
    grid_hits: tuple = ()  # counts of depth-1 / depth-2 hits on the grid

    def admitted_sorted(self):
        """Admitted (center, ell, U, U') with U' normalized to start in [0,1), sorted."""
        idx = np.nonzero(self.admitted)[0]
        sh = np.floor(self.Up[idx, 0])
        order = np.argsort(self.Up[idx, 0] - sh)
        idx, sh = idx[order], sh[order]
        return (self.centers[idx] - sh, self.ell[idx], self.U[idx] - sh[:, None],
                self.Up[idx] - sh[:, None], idx)


def _greedy_cover(grid, mask, half):
    """Left-to-right greedy centers whose half-balls cover the masked grid points."""
    pos = grid[mask]
    centers = []
    i = 0
    while i < pos.size:
        centers.append(pos[i])
        i = int(np.searchsorted(pos, pos[i] + half, side="right"))
    return centers


def _covered(grid, centers, half):
    if not centers:
        return np.zeros(grid.size, dtype=bool)
    c = np.asarray(centers)
    j = np.searchsorted(c, grid)
    d = np.full(grid.size, np.inf)
    for jj in (j - 1, j):
        d = np.minimum(d, circle_dist(grid, c[jj % c.size]))
    return d < half


def _depth1_witnesses(family, omega, centers, half, target, delta0, x0):
    """Vectorized leftmost depth-1 witness (U, U') for intervals B_half(p)."""
    c = np.asarray(centers, dtype=float)
    pts = _shifted_points(family, omega)
    lo, hi = c - half, c + half
    cut = np.full(c.size, np.nan)
    for p in pts:
        k = np.ceil(lo - p)
        cc = p + k
        cut = np.where((cc < hi) & np.isnan(cut), cc, cut)
    has = ~np.isnan(cut)
    U = np.full((c.size, 2), np.nan)
    Up = np.full((c.size, 2), np.nan)
    off = np.zeros(c.size, dtype=np.int64)
    done = np.zeros(c.size, dtype=bool)
    for a, b, ok in ((lo, np.where(has, cut, hi), np.ones(c.size, bool)),
                     (np.where(has, cut, lo), hi, has)):
        Fa, Fb = lift_f(family, omega, a), lift_f(family, omega, b)
        inc = Fb >= Fa
        A, B = np.minimum(Fa, Fb), np.maximum(Fa, Fb)
        m0 = np.ceil(A - target[0])
        m1 = np.floor(B - target[1])
        sel = ok & ~done & (m0 <= m1)
        if not sel.any():
            continue
        m = np.where(inc, m0, m1)[sel]
        aa, bb = a[sel], b[sel]
        t = np.concatenate([target[0] + m, target[1] + m, x0 - delta0 + m, x0 + delta0 + m])
        u0, u1, v0, v1 = np.split(_bisect_inverse(family, omega, np.tile(aa, 4), np.tile(bb, 4), t), 4)
        U[sel] = np.stack([np.minimum(u0, u1), np.maximum(u0, u1)], 1)
        Up[sel] = np.stack([np.minimum(v0, v1), np.maximum(v0, v1)], 1)
        off[sel] = m.astype(np.int64)
        done |= sel
    return U, Up, off, done


def circle_level(family, path, n, consts, grid_bits=14):
    """Cover, witnesses and maximal disjoint U' family at time n (path = theta^n omega).

    Depth-1 centers are placed first and admitted first, so the depth-1 family
    only looks at omega_n; depth-2 centers fill what is left.
    """
    ep = EventParams(consts.L, consts.delta0, consts.x0, consts.epsilon0)
    d1 = consts.delta1
    grid = np.arange(1 << grid_bits) / (1 << grid_bits)
    depth = event_batch(family, path, grid, d1, ep)
    c1 = _greedy_cover(grid, depth == 1, d1)
    c2 = _greedy_cover(grid, (depth == 2) & ~_covered(grid, c1, d1), d1) if consts.L >= 2 else []
    k1, k2 = len(c1), len(c2)
    centers = np.array(c1 + c2, dtype=float)
    ell = np.array([1] * k1 + [2] * k2, dtype=np.int64)
    U = np.full((k1 + k2, 2), np.nan)
    Up = np.full((k1 + k2, 2), np.nan)
    off = np.zeros(k1 + k2, dtype=np.int64)
    ok = np.zeros(k1 + k2, dtype=bool)
    if k1:
        U[:k1], Up[:k1], off[:k1], ok[:k1] = _depth1_witnesses(
            family, path[0], centers[:k1], d1, ep.target, consts.delta0, consts.x0)
    for i in range(k1, k1 + k2):
        w = event_E(family, path, (centers[i] - d1, centers[i] + d1), ep)
        if not w.hit:
            continue
        ell[i] = w.ell
        U[i] = w.J
        tgt = (consts.x0 - consts.delta0 + w.offset, consts.x0 + consts.delta0 + w.offset)
        Up[i] = invert_on_branch(family, w.branch, tgt)
        off[i] = w.offset
        ok[i] = True
    admitted = np.zeros(k1 + k2, dtype=bool)
    t_lo, t_hi = np.empty(0), np.empty(0)
    for i in sorted(np.nonzero(ok)[0], key=lambda i: (ell[i], centers[i])):
        lo, hi = Up[i]
        if _disjoint_mod1(lo, hi, t_lo, t_hi):
            admitted[i] = True
            t_lo, t_hi = np.append(t_lo, lo), np.append(t_hi, hi)
    return CircleLevel(n, centers, ell, U, Up, off, admitted,
                       (int(np.sum(depth == 1)), int(np.sum(depth == 2))))


def _disjoint_mod1(a0, a1, b0, b1):
    """[a0,a1] meets none of the intervals [b0,b1] (arrays) modulo 1."""
    for k in (-1.0, 0.0, 1.0):
        if np.any((a0 < b1 + k) & (b0 + k < a1)):
            return False
    return True


# -- the partition ---------------------------------------------------------------------

@dataclass(eq=False)
class TowerPartition:
    family: object
    path: NoisePath
    consts: TowerConstants
    hp: object
    horizon: int
    base: tuple
    w10: tuple
    levels: dict
    samples: np.ndarray
    R: np.ndarray
    n_elem: np.ndarray
    ell: np.ndarray
    center: np.ndarray
    log_width: np.ndarray
    s_mass: np.ndarray
    collars: list = field(default_factory=list, repr=False)
    orbit: np.ndarray = field(default=None, repr=False)
    logd: np.ndarray = field(default=None, repr=False)
    eid: np.ndarray = field(default=None, repr=False)
    lidx: np.ndarray = field(default=None, repr=False)
    at_birth: np.ndarray = field(default=None, repr=False)

    @property
    def m_delta(self):
        return self.base[1] - self.base[0]

    @property
    def m_w10(self):
        return self.w10[1] - self.w10[0]

    def in_w10(self, x):
        return (x > self.w10[0]) & (x < self.w10[1])

    def return_time(self, x):
        """R(x) for a lifted point of Delta, or UNASSIGNED past the horizon."""
        xl = float(x)
        if not self.base[0] <= xl <= self.base[1]:
            xl = self.base[0] + ((xl - self.base[0]) % 1.0)
            if not self.base[0] <= xl <= self.base[1]:
                raise ValueError("x is not in Delta")
        res = propagate(self.family, self.path, self.consts, self.hp, self.levels, self.w10,
                        self.base, np.array([xl]), self.horizon)
        return int(res["R"][0])

    def survival(self, n_max=None):
        """m{R > n}/m(Delta) for n = 0..n_max; unassigned points count as R > horizon."""
        n_max = self.horizon if n_max is None else n_max
        n = np.arange(n_max + 1)
        out_w = ~self.in_w10(self.samples)
        Rs = self.R[out_w]
        Rs = np.where(Rs == UNASSIGNED, np.iinfo(np.int64).max, Rs)
        frac_out = np.array([np.mean(Rs > k) for k in n]) if Rs.size else np.ones(n.size)
        mw = self.m_w10 / self.m_delta
        surv = (1 - mw) * frac_out + mw * (n < 1)
        return surv

    def covered_mass(self, N=None):
        N = self.horizon if N is None else N
        return 1.0 - self.survival(N)[-1]

    def elements(self):
        """One record per element, w_{1,0} first, then by (n, left end)."""
        out = [dict(n=1, ell=0, left=self.w10[0], right=self.w10[1], R=1, samples=int(
            np.sum(self.in_w10(self.samples))), log_width=math.log(self.m_w10))]
        tab = element_table(self)
        rows = []
        for e in np.unique(tab["eid"]):
            sel = np.nonzero(tab["eid"] == e)[0]
            i = sel[0]
            left, right = float(tab["left"][sel].min()), float(tab["right"][sel].max())
            lw = math.log(tab["u1"][i] - tab["u0"][i]) - float(
                np.sum(self.logd[:tab["n"][i], tab["sample"][i]]))
            rows.append(dict(n=int(tab["n"][i]), ell=int(tab["ell"][i]), left=left, right=right,
                             R=int(tab["R"][i]), samples=int(sel.size), log_width=lw))
        rows.sort(key=lambda r: (r["n"], r["left"]))
        return out + rows


def delta_grid(consts, bits=14):
    lo, hi = consts.x0 - consts.delta0, consts.x0 + consts.delta0
    h = 2.0**-bits
    k = int(math.floor((hi - lo) / h))
    return lo + (np.arange(k) + 0.5) * h


def _orbits(family, omegas, x0):
    X = np.empty((len(omegas) + 1, x0.size))
    LD = np.empty((len(omegas), x0.size))
    x = np.mod(x0, 1.0)
    X[0] = x
    for i, w in enumerate(omegas):
        LD[i] = np.log(np.abs(family.alpha * family.dxi(x + w)))
        y = np.mod(family.alpha * family.xi(x + w) + family.a, 1.0)
        y[y >= 1.0] = 0.0
        X[i + 1] = x = y
    return X, LD


def _sparse_hyperbolic(family, X, LD, omegas, hp):
    """Boolean (H+1, m): n is an L-sparse (sigma^2, r)-hyperbolic time of each sample."""
    H, m = LD.shape
    P = np.vstack([np.zeros(m), np.cumsum(LD - math.log(1 / hp.sigma2), axis=0)])
    runmax = np.maximum.accumulate(P[:-1], axis=0)
    expand = np.vstack([np.zeros(m, bool), P[1:] >= runmax])
    pts = family.critical_points
    dist_ok = np.ones((H + 1, m), dtype=bool)
    if len(pts):
        d = np.min(circle_dist(X[1:, :, None], (pts[None, :] - omegas[1:H + 1, None])[:, None, :]),
                   axis=2)
        dr = np.where(d <= hp.r, d, 1.0)
        th = hp.sigma2 ** (hp.b * np.arange(1, H + 1) / 2.0)
        dist_ok[1:] = np.logical_and.accumulate(dr >= th[:, None], axis=0)
    hyp = expand & dist_ok
    hyp[0] = False
    sparse = np.zeros_like(hyp)
    last = np.full(m, -10**9)
    for n in range(1, H + 1):
        take = hyp[n] & (n > hp.L + last)
        sparse[n] = take
        last = np.where(take, n, last)
    return sparse


def _nearest_cuts(pts_shift, y):
    """Nearest lifted shifted-critical points strictly left/right of y."""
    if len(pts_shift) == 0:
        return np.full(y.size, -np.inf), np.full(y.size, np.inf)
    base = np.floor(y)
    cand = (pts_shift[None, :] + base[:, None]) + np.array([-1.0, 0.0, 1.0])[:, None, None]
    cand = cand.transpose(1, 0, 2).reshape(y.size, -1)
    left = np.where(cand <= y[:, None], cand, -np.inf).max(axis=1)
    right = np.where(cand > y[:, None], cand, np.inf).min(axis=1)
    return left, right


NEIGH = 24  # admitted U' examined on each side of a sample
PIECE_TOL = 1e-9  # image endpoints closer than this belong to the same piece


def _last_true(mask, k):
    """k + (1-based index of the last True column of mask), or k when none is True."""
    any_ = mask.any(axis=1)
    last = mask.shape[1] - np.argmax(mask[:, ::-1], axis=1)
    return np.where(any_, k + last, k).astype(np.int64)


def _zone_expiry(ST, k, ell, idx, dd, delta0, sigma, w0):
    """Last n > k at which an element born at n may meet the zone of a record at k.

    The zone is {dist(f^{k+l} y, Delta) <= delta0 sigma^(n-k)}; the element's image
    at k+l lies within w0 exp(-(S_n - S_{k+l})) of the sample's.  ST is the
    (samples, H+1) table of derivative sums.
    """
    H = ST.shape[1] - 1
    if k >= H or idx.size == 0:
        return np.full(idx.size, k, dtype=np.int64)
    base = np.minimum(k + ell, H)
    rows = ST[idx]
    grow = rows[:, k + 1:] - rows[np.arange(idx.size), base][:, None]
    reach = w0 * np.exp(-grow.clip(min=-700))
    zone = delta0 * sigma ** np.arange(1, H - k + 1)
    return _last_true(dd[:, None] - reach <= zone[None, :], k)


def _reach_expiry(ST, k, idx, dist, w0):
    """Last n > k at which an element born at n could stretch over dist at time k."""
    H = ST.shape[1] - 1
    if k >= H or idx.size == 0:
        return np.full(idx.size, k, dtype=np.int64)
    rows = ST[idx]
    grow = rows[:, k + 1:] - rows[:, k:k + 1]
    return _last_true(grow <= np.log(w0 / dist)[:, None], k)


def propagate(family, path, consts, hp, levels, w10, base, xs, horizon, record=False):
    """Assign return times to lifted sample points of Delta."""
    L = consts.L
    omegas = path.window(0, horizon + L + 1)
    X, LD = _orbits(family, omegas, xs)
    sparse = _sparse_hyperbolic(family, X[:horizon + 1], LD[:horizon], omegas[:horizon + 1], hp)
    m = xs.size
    R = np.zeros(m, dtype=np.int64)
    n_el = np.zeros(m, dtype=np.int64)
    ell_el = np.zeros(m, dtype=np.int64)
    cen = np.full(m, np.nan)
    logw = np.full(m, np.nan)
    in_w = (xs > w10[0]) & (xs < w10[1])
    R[in_w] = 1
    n_el[in_w] = 1
    # element id (0 is w_{1,0}), the level index of its U' and the branch offsets at birth
    eid = np.where(in_w, 0, -1)
    lidx = np.full(m, -1, dtype=np.int64)
    at_birth = np.full((m, 4), np.nan)
    next_eid = 1
    # samples sharing a monotone piece of f^n share pid; sgn is the orientation of f^n
    pid = np.where(xs <= w10[0], 0, 1)
    sgn = np.ones(m)
    # branch offsets around the orbit point, starting from the component of Delta \ w10
    a = np.where(xs <= w10[0], base[0] - xs, w10[1] - xs)
    b = np.where(xs <= w10[0], w10[0] - xs, base[1] - xs)
    blocked = np.full(m, -1, dtype=np.int64)
    s_until = np.full(m, -1, dtype=np.int64)
    s_mass = np.zeros(horizon + 1)
    S = np.vstack([np.zeros(m), np.cumsum(LD, axis=0)])
    ST = np.ascontiguousarray(S.T)
    margin = 8 * np.finfo(float).eps * (family.alpha + 1)
    logsig = math.log(consts.sigma)
    d0, d1, x0 = consts.delta0, consts.delta1, consts.x0
    collars = []
    pts_c = family.critical_points
    for n in range(1, horizon + 1):
        live = R == UNASSIGNED
        pt = X[n]
        near_edge = np.abs(np.abs(xs - x0) - d0) < 2 * d1 * consts.sigma**n
        s_mass[n] = np.mean(live & ((s_until >= n) | near_edge))
        lev = levels.get(n)
        if lev is not None and n >= consts.N0 and live.any():
            P, ELL, UU, UP, IDX = lev.admitted_sorted()
            if P.size:
                li = np.nonzero(live)[0]
                y = pt[li]
                A, B = y + a[li], y + b[li]
                # lifted copies of the admitted family around each point
                k = np.arange(-2, 3, dtype=float)
                order = np.argsort((P[None, :] + k[:, None]).ravel(), kind="stable")
                Pk = (P[None, :] + k[:, None]).ravel()[order]
                Ek = np.tile(ELL, k.size)[order]
                Ik = np.tile(IDX, k.size)[order]
                U0 = (UU[None, :, 0] + k[:, None]).ravel()[order]
                U1 = (UU[None, :, 1] + k[:, None]).ravel()[order]
                V0 = (UP[None, :, 0] + k[:, None]).ravel()[order]
                V1 = (UP[None, :, 1] + k[:, None]).ravel()[order]
                j = np.clip(np.searchsorted(V0, y, side="right") - 1, 0, V0.size - 1)
                inUp = (V0[j] <= y) & (y <= V1[j])
                valid_j = (Pk[j] - 9 * d1 >= A) & (Pk[j] + 9 * d1 <= B)
                cand = inUp & valid_j
                # an element is the pullback of one U' along one piece; it is admitted
                # when some sample in it is at a sparse hyperbolic time and none of its
                # samples sits in an active exclusion zone
                rel = V0[j] - A
                brk = np.ones(li.size, dtype=bool)
                brk[1:] = ((pid[li[1:]] != pid[li[:-1]]) | (Ik[j[1:]] != Ik[j[:-1]])
                           | (np.abs(rel[1:] - rel[:-1]) > PIECE_TOL) | ~cand[1:] | ~cand[:-1])
                g = np.cumsum(brk) - 1
                any_sp = np.bincount(g, weights=sparse[n, li] & cand) > 0
                all_ok = np.bincount(g, weights=(blocked[li] >= n) & cand) == 0
                take = cand & any_sp[g] & all_ok[g]
                t_idx, jt = li[take], j[take]
                if t_idx.size:
                    gt = g[take]
                    eid[t_idx] = next_eid + np.unique(gt, return_inverse=True)[1]
                    next_eid = int(eid[t_idx].max()) + 1
                lidx[t_idx] = Ik[jt]
                at_birth[t_idx] = np.column_stack([y[take], a[t_idx], b[t_idx], sgn[t_idx]])
                R[t_idx] = n + Ek[jt]
                n_el[t_idx] = n
                ell_el[t_idx] = Ek[jt]
                cen[t_idx] = np.mod(Pk[jt], 1.0)
                logw[t_idx] = np.log(V1[jt] - V0[jt]) - S[n, t_idx]
                # points staying unassigned: branch cuts and collar records, looking
                # at the NEIGH nearest centers on each side
                rest = ~take
                ri, jr = li[rest], j[rest]
                y_r, A_r, B_r = y[rest], A[rest], B[rest]
                cols = np.clip(jr[:, None] + np.arange(-NEIGH, NEIGH + 1)[None, :], 0, Pk.size - 1)
                Pc = Pk[cols]
                valid = (Pc - 9 * d1 >= A_r[:, None]) & (Pc + 9 * d1 <= B_r[:, None])
                V0c, V1c, U0c, U1c = V0[cols], V1[cols], U0[cols], U1[cols]
                inside = inUp[rest] & valid_j[rest]
                # inside a valid U' that did not become an element: keep only that U';
                # otherwise keep the gap between the nearest valid U' on each side (the
                # window edge when none is in reach, which only shrinks the branch)
                left_hi = np.where(valid & (V1c <= y_r[:, None]), V1c, -np.inf).max(axis=1)
                right_lo = np.where(valid & (V0c >= y_r[:, None]), V0c, np.inf).min(axis=1)
                left_hi = np.maximum(left_hi, np.minimum(V1c[:, 0], y_r))
                right_lo = np.minimum(right_lo, np.maximum(V0c[:, -1], y_r))
                newA = np.where(inside, V0[jr], left_hi)
                newB = np.where(inside, V1[jr], right_lo)
                a[ri] = np.maximum(a[ri], newA - y_r)
                b[ri] = np.minimum(b[ri], newB - y_r)
                # collars.  An element born at a later time n' has, at time k, an
                # image of width at most 4 delta1 / |df^{n'-k}| measured along the
                # sample's own orbit (factor 2 for distortion); the sample is blocked
                # while that element could meet the exclusion zone of a valid center.
                inV = (V0c <= y_r[:, None]) & (y_r[:, None] <= V1c)
                inU = valid & (U0c <= y_r[:, None]) & (y_r[:, None] <= U1c) & ~inV
                rr, cc = np.nonzero(inU)
                if rr.size:
                    p_idx = ri[rr]
                    l_ = Ek[cols[rr, cc]]
                    z = X[n + l_, p_idx]
                    dd = np.maximum(0.0, circle_dist(z, x0) - d0)
                    exp_ = _zone_expiry(ST, n, l_, p_idx, dd, d0, consts.sigma, 4 * d1)
                    blocked[p_idx] = np.maximum(blocked[p_idx], exp_)
                    steps = np.floor(np.log(np.maximum(dd, 1e-300) / consts.delta2) / logsig)
                    sexp = n + np.where(dd > 0, steps, 10**9).astype(np.int64)
                    s_until[p_idx] = np.maximum(s_until[p_idx], sexp)
                    if record:
                        collars.extend(zip(p_idx.tolist(), [n] * rr.size, l_.tolist(), dd.tolist(),
                                           ["inside"] * rr.size))
                # outside a valid U: a later element may still reach into it
                gap = np.maximum(U0c - y_r[:, None], y_r[:, None] - U1c)
                dJ = np.where(valid & (gap > 0), gap, np.inf).min(axis=1)
                near = dJ <= 4 * d1
                if near.any():
                    p_idx = ri[near]
                    exp_ = _reach_expiry(ST, n, p_idx, dJ[near], 4 * d1)
                    blocked[p_idx] = np.maximum(blocked[p_idx], exp_)
                    if record:
                        hit = exp_ > n
                        cnt = int(hit.sum())
                        collars.extend(zip(p_idx[hit].tolist(), [n] * cnt, [0] * cnt,
                                           dJ[near][hit].tolist(), ["outside"] * cnt))
                # within 3 delta1 of a valid center: part of a W~ for the next N1 steps
                d3 = np.where(valid, np.abs(Pc - y_r[:, None]), np.inf).min(axis=1)
                s_until[ri] = np.where(d3 < 3 * d1, np.maximum(s_until[ri], n + consts.N1 - 1),
                                       s_until[ri])
        live = R == UNASSIGNED
        if n == horizon or not live.any():
            continue
        # cut at the critical points of f_{omega_n} and push the branch image forward
        li = np.nonzero(live)[0]
        y = pt[li]
        cl, cr = _nearest_cuts(_shifted_points(family, omegas[n]), y)
        aa = np.maximum(a[li], cl - y)
        bb = np.minimum(b[li], cr - y)
        fa = lift_diff(family, omegas[n], y, aa)
        fb = lift_diff(family, omegas[n], y, bb)
        a[li] = np.minimum(fa, fb) + margin
        b[li] = np.maximum(fa, fb) - margin
        a[li] = np.minimum(a[li], 0.0)
        b[li] = np.maximum(b[li], 0.0)
        # split pieces wherever neighbouring samples no longer share an image
        sgn[li] *= np.sign(family.dxi(y + omegas[n]))
        yn = X[n + 1, li]
        A1, W1 = yn + a[li], b[li] - a[li]
        brk = np.ones(li.size, dtype=bool)
        dA = np.abs((A1[1:] - A1[:-1] + 0.5) % 1.0 - 0.5)
        brk[1:] = ((pid[li[1:]] != pid[li[:-1]]) | (sgn[li[1:]] != sgn[li[:-1]])
                   | (dA > PIECE_TOL) | (np.abs(W1[1:] - W1[:-1]) > PIECE_TOL))
        pid[li] = np.cumsum(brk)
    return dict(R=R, n_elem=n_el, ell=ell_el, center=cen, log_width=logw, s_mass=s_mass,
                collars=collars, X=X, LD=LD, eid=eid, lidx=lidx, at_birth=at_birth)


def build_partition(family, path, consts, hp, horizon, grid_bits=14, level_bits=14,
                    record=False):
    """Pathwise partition of Delta up to the given horizon."""
    if consts.delta0 >= 0.25:
        raise NotAdmissible(f"delta0 = {consts.delta0} >= 1/4")
    if path.future_len < horizon + consts.L + 1:
        raise ValueError("path too short for the horizon")
    base = (consts.x0 - consts.delta0, consts.x0 + consts.delta0)
    w10 = giupar_element(family, path[0], consts.delta0, consts.x0)
    levels = {n: circle_level(family, path.shift(n), n, consts, level_bits)
              for n in range(consts.N0, horizon + 1)}
    xs = delta_grid(consts, grid_bits)
    res = propagate(family, path, consts, hp, levels, w10, base, xs, horizon, record)
    return TowerPartition(family, path, consts, hp, horizon, base, w10, levels, xs,
                          res["R"], res["n_elem"], res["ell"], res["center"], res["log_width"],
                          res["s_mass"], res["collars"], res["X"], res["LD"], res["eid"],
                          res["lidx"], res["at_birth"])


# -- neighbourhoods along a hyperbolic time ------------------------------------------------

def _pull_offset(family, omega, x, t, lo, hi):
    """Offset o in [lo, hi] with F(x+o) - F(x) = t (F monotone there)."""
    g = lambda o: float(lift_diff(family, omega, x, o)) - t
    glo, ghi = g(lo), g(hi)
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    if glo * ghi > 0:
        raise BranchObstruction("target leaves the monotone piece")
    d = abs(family.alpha * float(family.dxi(x + omega)))
    o = t / d if d > 0 else 0.5 * (lo + hi)
    if float(lift_diff(family, omega, x, 1e-300 if glo < 0 else -1e-300)) < 0:
        o = -o
    if not lo < o < hi:
        o = 0.5 * (lo + hi)
    for _ in range(200):
        go = g(o)
        if go == 0:
            return o
        if (go < 0) == (glo < 0):
            lo, glo = o, go
        else:
            hi = o
        dd = family.alpha * float(family.dxi(x + o + omega))
        step = go / dd if dd != 0 else np.inf
        nxt = o - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - o) <= 1e-15 * max(abs(o), 1e-300):
            return nxt
        o = nxt
    return o


def _piece(orbit, k):
    """Offsets of the monotone piece around x_k, bounded by the shifted critical points."""
    x = orbit.x[k]
    cl, cr = _nearest_cuts(_shifted_points(orbit.family, orbit.path[k]), np.array([x]))
    lo, hi = float(cl[0] - x), float(cr[0] - x)
    if not np.isfinite(lo):
        lo, hi = -0.5, 0.5
    return lo, hi


def pullback_offsets(orbit, n, radius):
    """Offsets around x_k (k = 0..n) of f^-n(B_radius(x_n)) along the orbit's branch."""
    fam = orbit.family
    offs = np.zeros((n + 1, 2))
    offs[n] = (-radius, radius)
    for k in range(n - 1, -1, -1):
        lo, hi = _piece(orbit, k)
        e = [_pull_offset(fam, orbit.path[k], orbit.x[k], t, lo, hi) for t in offs[k + 1]]
        offs[k] = (min(e), max(e))
    return offs


def hyperbolic_neighborhoods(orbit, n, delta, delta1, sigma=None, pairs=64):
    """V (radius delta), W (delta1) and W~ (3 delta1) pulled back from time n to time 0.

    Returns the three lifted intervals and the largest sampled ratio
    |f^{n-k} z - f^{n-k} y| / (sigma^k |f^n z - f^n y|) over 1 <= k <= n.
    """
    out = []
    for rad in (delta, delta1, 3 * delta1):
        o = pullback_offsets(orbit, n, rad)
        out.append((orbit.x[0] + o[0, 0], orbit.x[0] + o[0, 1]))
    ratio = 0.0
    if sigma is not None:
        fam = orbit.family
        t = np.linspace(-delta, delta, pairs)
        zs = np.empty((n + 1, pairs))
        zs[n] = t
        for k in range(n - 1, -1, -1):
            x, om = orbit.x[k], orbit.path[k]
            lo, hi = _piece(orbit, k)
            zs[k] = [_pull_offset(fam, om, x, tt, lo, hi) for tt in zs[k + 1]]
        dn = np.abs(np.diff(zs[n]))
        for k in range(1, n + 1):
            dk = np.abs(np.diff(zs[n - k]))
            ratio = max(ratio, float(np.max(dk / (sigma**k * dn))))
    return out[0], out[1], out[2], ratio


# -- tower dynamics ----------------------------------------------------------------------

@dataclass(frozen=True)
class TowerPoint:
    x: float
    ell: int


def tower_step(point, R, image=None):
    """F(x, l) = (x, l+1) below the top, (f^R x, 0) at the top.

    ``image`` maps the base point to f^R of it when the top is reached.
    """
    if point.ell < 0 or point.ell >= R:
        raise InvalidLevel(f"level {point.ell} outside [0, {R})")
    if point.ell + 1 < R:
        return TowerPoint(point.x, point.ell + 1)
    if image is None:
        raise InvalidLevel("top level reached without the return map")
    return TowerPoint(image(point.x), 0)


def forward_lift(family, omegas, x):
    for w in omegas:
        x = lift_f(family, w, x)
    return x


def separation_time(z1, z2, partitions, cap, fiber1=0, fiber2=0):
    """Completed base returns before z1 and z2 fall into different elements.

    ``partitions`` is a list whose j-th entry is the partition over the fiber
    reached after j returns; leaving Delta counts as separation.
    """
    if fiber1 != fiber2:
        return 0
    if z1 == z2:
        return cap
    x1, x2 = float(z1), float(z2)
    for j, part in enumerate(partitions):
        if j >= cap:
            return cap
        inside = [part.base[0] <= x <= part.base[1] for x in (x1, x2)]
        if not all(inside):
            return j
        R1, R2 = part.return_time(x1), part.return_time(x2)
        if R1 == UNASSIGNED or R2 == UNASSIGNED:
            return cap
        key1 = element_key(part, x1)
        key2 = element_key(part, x2)
        if key1 != key2:
            return j
        om = part.path.window(0, R1)
        x1 = _to_base(part, forward_lift(part.family, om, x1))
        x2 = _to_base(part, forward_lift(part.family, om, x2))
    return cap


def _to_base(part, y):
    lo = part.base[0]
    return lo + ((y - lo) % 1.0)


def element_key(part, x):
    """(n, ell, center) of the element holding x, replayed from the stored levels."""
    xs = np.array([float(x)])
    if part.in_w10(xs)[0]:
        return (1, 0, None)
    res = propagate(part.family, part.path, part.consts, part.hp, part.levels, part.w10,
                    part.base, xs, part.horizon)
    if res["R"][0] == UNASSIGNED:
        return None
    return (int(res["n_elem"][0]), int(res["ell"][0]), round(float(res["center"][0]), 12))


def tail_survival(partitions, n_max):
    """Per-path survival curves and their ensemble median."""
    if len(partitions) < 8:
        raise ValueError("need at least 8 partitions")
    curves = np.array([p.survival(n_max) for p in partitions])
    return curves, np.median(curves, axis=0)


# -- diagnostics -------------------------------------------------------------------------

def element_table(part):
    """Per-element arrays for the elements born at n >= N0.

    Each element is the pullback of U' = [u0, u1] (lifted next to the orbit point y)
    along the sample's piece; its time-0 interval is linearized around the sample.
    """
    members = np.nonzero(part.eid > 0)[0]
    if members.size == 0:
        return dict(eid=np.zeros(0, int), sample=members, n=members, ell=members, R=members,
                    u0=np.zeros(0), u1=np.zeros(0), y=np.zeros(0), lo=np.zeros(0),
                    hi=np.zeros(0), sgn=np.zeros(0), left=np.zeros(0), right=np.zeros(0))
    n = part.n_elem[members]
    y, a, b, sg = part.at_birth[members].T
    Up = np.array([part.levels[int(k)].Up[int(i)] for k, i in zip(n, part.lidx[members])])
    sh = np.round(y - Up.mean(axis=1))
    u0, u1 = Up[:, 0] + sh, Up[:, 1] + sh
    S = np.vstack([np.zeros(part.samples.size), np.cumsum(part.logd, axis=0)])
    scale = np.exp(-S[n, members])
    x = part.samples[members]
    left = np.where(sg > 0, x + (u0 - y) * scale, x - (u1 - y) * scale)
    right = np.where(sg > 0, x + (u1 - y) * scale, x - (u0 - y) * scale)
    return dict(eid=part.eid[members], sample=members, n=n, ell=part.ell[members],
                R=part.R[members], u0=u0, u1=u1, y=y, lo=y + a, hi=y + b, sgn=sg,
                left=left, right=right)


@dataclass
class TowerReport:
    """Findings of verify_tower; ``violations`` counts every failed check."""
    paths: int
    elements: int
    disjoint_violations: int
    exclusion_violations: int
    markov_violations: int
    markov_max_error: float
    contraction_violations: int
    min_log_expansion: float
    C0_hat: float
    C1_hat: float
    p3_diameters: list
    p3_decreasing: bool
    p4_mass: list
    p4_bound: float
    p4_violations: int
    p5_checked: int
    p5_violations: int
    distortion_violations: int
    separation_convention: str = "completed base returns before separation"

    @property
    def violations(self):
        return (self.disjoint_violations + self.exclusion_violations + self.markov_violations
                + self.contraction_violations + self.p4_violations + self.p5_violations
                + self.distortion_violations + (0 if self.p3_decreasing else 1))

    def as_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["violations"] = self.violations
        return d


def _markov_check(part, tab, samples):
    """Max endpoint error of f^l(U') against Delta + m, and monotonicity failures."""
    fam, c = part.family, part.consts
    err, bad = 0.0, 0
    t = np.linspace(0.0, 1.0, samples)
    for i in range(tab["n"].size):
        n, ell = int(tab["n"][i]), int(tab["ell"][i])
        u0, u1 = tab["u0"][i], tab["u1"][i]
        # f^n maps the element monotonically onto U' when U' sits inside the piece image
        if not (tab["lo"][i] <= u0 and u1 <= tab["hi"][i]):
            bad += 1
        z = np.concatenate([[u0, u1], u0 + (u1 - u0) * t])
        for k in range(ell):
            z = lift_f(fam, part.path[n + k], z)
        lo, hi = min(z[0], z[1]), max(z[0], z[1])
        m = np.round((lo + hi) / 2 - c.x0)
        err = max(err, abs(lo - (c.x0 - c.delta0 + m)), abs(hi - (c.x0 + c.delta0 + m)))
        d = np.diff(z[2:])
        if not (np.all(d > 0) or np.all(d < 0)):
            bad += 1
    return err, bad


def _distortion_bounds(part, tab):
    """First-order bound on |log|df^R x| - log|df^R y|| over each element.

    The image of the element at time k < n has width |U'| exp(S_k - S_n); from n to
    R the images of U' are followed exactly.
    """
    fam = part.family
    out = np.zeros(tab["n"].size)
    for i, p in enumerate(tab["sample"]):
        n, R = int(tab["n"][i]), int(tab["R"][i])
        ld = part.logd[:R, p]
        S = np.concatenate([[0.0], np.cumsum(ld)])
        w = (tab["u1"][i] - tab["u0"][i]) * np.exp(S[:n] - S[n])
        xk = part.orbit[:n, p]
        om = part.path.window(0, n)
        curv = np.abs(fam.d2xi(xk + om) / fam.dxi(xk + om))
        tot = float(np.sum(curv * w))
        z = np.array([tab["u0"][i], tab["u1"][i]])
        for k in range(n, R):
            om_k = part.path[k]
            g = np.linspace(z[0], z[1], 65)
            tot += float(np.max(np.abs(fam.d2xi(g + om_k) / fam.dxi(g + om_k)))) * abs(z[1] - z[0])
            z = lift_f(fam, om_k, z)
        out[i] = tot
    return out


def verify_tower(partitions, samples=64, resample_t=None, resample_seed=None):
    """Check (P1)-(P5), disjointness, exclusion compliance and contraction.

    ``partitions`` holds the partitions of an ensemble of paths; each is checked on
    its own and the findings are summed.  (P5) rebuilds every partition with the
    noise resampled from time t = resample_t (default horizon // 2) onwards.
    """
    tot = dict(el=0, dis=0, exc=0, mk=0, mkerr=0.0, con=0, minexp=np.inf, C0=0.0, C1=0.0,
               p4=[], p4v=0, p5n=0, p5v=0, dist=0)
    diam_rows = []
    bound = None
    for part in partitions:
        c, fam = part.consts, part.family
        tab = element_table(part)
        tot["el"] += int(np.unique(tab["eid"]).size) + 1
        # disjointness of the time-0 intervals, w_{1,0} included
        iv = [(part.w10[0], part.w10[1], 0)]
        for e in np.unique(tab["eid"]):
            sel = tab["eid"] == e
            iv.append((float(tab["left"][sel].min()), float(tab["right"][sel].max()), int(e)))
        iv.sort()
        for (l0, r0, e0), (l1, r1, e1) in zip(iv[:-1], iv[1:]):
            if l1 < r0 - 1e-12:
                tot["dis"] += 1
        for l0, r0, _ in iv:
            if l0 < part.base[0] - 1e-12 or r0 > part.base[1] + 1e-12:
                tot["dis"] += 1
        # exclusion zones: an element born at n must stay out of every zone recorded
        # for its samples at earlier times
        S = np.vstack([np.zeros(part.samples.size), np.cumsum(part.logd, axis=0)])
        born = {int(p): i for i, p in enumerate(tab["sample"])}
        for p, k, ell, dd, kind in part.collars:
            i = born.get(p)
            if i is None or k >= tab["n"][i]:
                continue
            n = int(tab["n"][i])
            wU = tab["u1"][i] - tab["u0"][i]
            if kind == "inside":
                t_ = min(k + ell, part.horizon)
                half = 2 * wU * math.exp(min(S[t_, p] - S[n, p], 700))
                if dd - half <= c.delta0 * c.sigma ** (n - k):
                    tot["exc"] += 1
            else:
                half = 2 * wU * math.exp(min(S[k, p] - S[n, p], 700))
                if dd <= half:
                    tot["exc"] += 1
        # (P1) Markov onto
        err, bad = _markov_check(part, tab, samples)
        flen = abs(lift_f(fam, part.path[0], part.w10[1]) - lift_f(fam, part.path[0], part.w10[0]))
        bad += int(flen < 1.0)
        tot["mk"] += bad
        tot["mkerr"] = max(tot["mkerr"], err)
        # beta-contraction, the C1 bound and distortion along every element
        D = _distortion_bounds(part, tab)
        logb = -math.log(c.beta)
        for i, p in enumerate(tab["sample"]):
            R = int(tab["R"][i])
            SR = S[R, p]
            expn = SR - D[i]
            tot["minexp"] = min(tot["minexp"], expn)
            if expn < logb:
                tot["con"] += 1
            tot["C1"] = max(tot["C1"], math.exp(min(float(np.max(S[:R + 1, p]) - SR + D[i]), 700)))
        if D.size:
            tot["C0"] = max(tot["C0"], float(D.max()) / c.beta)
        if np.isfinite(c.C0):
            tot["dist"] += int(np.sum(D > c.C0 * c.beta))
        # w_{1,0}: exact sampled pairs, R = 1
        xs = np.linspace(part.w10[0], part.w10[1], samples)
        fx = lift_f(fam, part.path[0], xs)
        ok = np.abs(np.diff(xs)) <= c.beta * np.abs(np.diff(fx))
        tot["con"] += int(np.sum(~ok))
        ld = np.log(np.abs(fam.alpha * fam.dxi(xs + part.path[0])))
        tot["C0"] = max(tot["C0"], float(ld.max() - ld.min()) / c.beta)
        # (P3) diameters of successive refinements (linearized with distortion)
        widths = np.concatenate([[part.m_w10], tab["right"] - tab["left"]])
        diam_rows.append((part.m_delta, float(widths.max()), float(widths.max()) / part.m_delta))
        # (P4) mass of {R = 1}
        bound = 2 * c.delta0 / (fam.alpha * fam.xi_prime_sup)
        tot["p4"].append(part.m_w10)
        tot["p4v"] += int(part.m_w10 < bound)
        # (P5) stopping time
        t = part.horizon // 2 if resample_t is None else resample_t
        seed = (part.path.seed + 1 if resample_seed is None else resample_seed)
        alt_path = part.path.resample_future(t, seed)
        alt = build_partition(fam, alt_path, c, part.hp, max(t, 1))
        R0, R1 = part.R, alt.R
        early = (R0 != UNASSIGNED) & (R0 <= t)
        tot["p5n"] += int(early.sum())
        tot["p5v"] += int(np.sum(early & (R1 != R0)))
        tot["p5v"] += int(np.sum(~early & (R1 != UNASSIGNED) & (R1 <= t)))
    # refinement diameters: D_1 = max width; D_{j+1} <= e^{C0} max|w|/m(Delta) * D_j
    D1 = max(r[1] for r in diam_rows) if diam_rows else float("nan")
    q = max(r[2] for r in diam_rows) if diam_rows else float("nan")
    dist = math.exp(min(tot["C0"] * partitions[0].consts.beta, 700)) if partitions else 1.0
    diams = [partitions[0].m_delta if partitions else float("nan"), D1]
    for _ in range(3):
        diams.append(diams[-1] * dist * q)
    decreasing = all(d1 < d0 for d0, d1 in zip(diams[:-1], diams[1:]))
    return TowerReport(len(partitions), tot["el"], tot["dis"], tot["exc"], tot["mk"],
                       tot["mkerr"], tot["con"], float(tot["minexp"]), tot["C0"], tot["C1"],
                       diams, decreasing, tot["p4"], bound, tot["p4v"], tot["p5n"], tot["p5v"],
                       tot["dist"])
