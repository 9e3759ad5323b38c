"""Potential theory of simple random walk on Z^d.

Free Green function (Bessel quadrature, weighted Monte Carlo walkers or a
truncated sparse solve), killed Green functions, hitting distributions,
equilibrium measures and capacities of finite sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate, linalg, sparse, special
from scipy.sparse import linalg as splinalg

from . import rng
from .constants import ConstantsLedger
from .lattice import (CapExceeded, LatticePoint, Region, as_point, ball, boundary,
                      neighbour_edges, sphere)

DENSE_CAP = 5000
METHODS = ("quadrature", "monte_carlo", "truncated_solve")


class ToleranceError(RuntimeError):
    """Requested accuracy not reached within the configured budget."""


class NumericalError(RuntimeError):
    """A solve that cannot fail for a correct Green function did fail."""


@dataclass(frozen=True)
class GreenValue:
    value: float
    error: float
    method: str

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class GreenEvaluator:
    """Configuration for free Green function evaluations.

    Parameters
    ----------
    d : int
        Dimension, at least 3.
    method : str
        One of ``quadrature``, ``monte_carlo``, ``truncated_solve``.
    tolerance : float
        Required absolute accuracy of reported values.
    seed : int
        Master seed for the Monte Carlo method.
    walks : int
        Number of walkers for the Monte Carlo method.
    radius : float
        Truncation radius (Euclidean ball for walkers, l-infinity box for
        the sparse solve).
    """

    d: int
    method: str = "quadrature"
    tolerance: float = 1e-8
    seed: int = 0
    walks: int = 10_000_000
    radius: float = 12.0
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.d < 3:
            raise ValueError(f"simple random walk is recurrent in d={self.d}; the Green function is infinite")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")

    def __call__(self, x) -> float:
        return green_free(self, x).value

    def with_method(self, method: str, **kw) -> "GreenEvaluator":
        args = dict(d=self.d, method=method, tolerance=self.tolerance, seed=self.seed,
                    walks=self.walks, radius=self.radius)
        args.update(kw)
        return GreenEvaluator(**args)


# ---------------------------------------------------------------- quadrature

def canonical_key(x) -> tuple:
    """Sorted (|coordinate|, multiplicity) pairs; g depends on nothing else."""
    a = np.abs(np.asarray(x, dtype=np.int64))
    vals, counts = np.unique(a, return_counts=True)
    return tuple(zip(vals.tolist(), counts.tolist()))


def _log_integrand(t: float, d: int, vals: np.ndarray, counts: np.ndarray) -> float:
    iv = special.ive(vals, t / d)
    if np.any(iv <= 0.0):
        return -np.inf
    return float(np.dot(counts, np.log(iv)))


@lru_cache(maxsize=None)
def green_quadrature(d: int, key: tuple) -> tuple[float, float]:
    """g(x) = int_0^inf prod_i e^{-t/d} I_{x_i}(t/d) dt for the walk in Z^d.

    Returns (value, error bound). The integral is split dyadically up to a
    cutoff T and the remainder is mapped to [0, 1/T] where its algebraic
    endpoint behaviour u^(d/2-2) is integrated with a weighted rule.
    """
    vals = np.array([v for v, _ in key], dtype=float)
    counts = np.array([c for _, c in key], dtype=float)
    r2 = float(np.dot(vals * vals, counts))

    def f(t):
        return math.exp(_log_integrand(t, d, vals, counts)) if t > 0 else (1.0 if r2 == 0 else 0.0)

    cutoff = 10.0 * (d + r2)
    total, err = 0.0, 0.0
    a, b = 0.0, 1.0
    while a < cutoff:
        b = min(b, cutoff)
        v, e = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)
        total += v
        err += e
        a, b = b, 2.0 * b

    # the integrand decays like t^(-d/2) beyond the cutoff
    log_tail = _log_integrand(cutoff, d, vals, counts) + math.log(cutoff) - math.log(d / 2.0 - 1.0)
    if log_tail < -50.0:
        err += 2.0 * math.exp(log_tail)
    else:
        half = d / 2.0

        def h(u):
            if u <= 0:
                return (d / (2.0 * math.pi)) ** half
            return math.exp(_log_integrand(1.0 / u, d, vals, counts) - half * math.log(u))

        v, e = integrate.quad(h, 0.0, 1.0 / cutoff, weight="alg", wvar=(half - 2.0, 0.0),
                              epsabs=1e-14, epsrel=1e-12)
        total += v
        err += e
    return total, err


def asymptotic_constant(d: int) -> float:
    """a_d with g(x) ~ a_d |x|_2^(2-d)."""
    return d * math.gamma(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0))


@njit(cache=True)
def _green_far(z, d, ad):
    r2 = 0.0
    for i in range(d):
        r2 += z[i] * z[i]
    r = math.sqrt(r2)
    val = ad * r ** (2 - d)
    if d == 3:
        s4 = z[0] ** 4 + z[1] ** 4 + z[2] ** 4
        s22 = z[0] ** 2 * z[1] ** 2 + z[1] ** 2 * z[2] ** 2 + z[2] ** 2 * z[0] ** 2
        val += 6.0 * (s4 - 3.0 * s22) / (16.0 * math.pi * r ** 7)
    return val


def green_far(x, d: int | None = None) -> float:
    """Far-field approximation of g (with the next-order term in d=3)."""
    z = np.asarray(x, dtype=np.float64)
    d = z.size if d is None else d
    return float(_green_far(z, d, asymptotic_constant(d)))


# ------------------------------------------------------------- Monte Carlo

@njit(cache=True)
def _weighted_walks(d, start, targets, r2max, ad, k1, k2, w_lo, w_hi, max_steps, absorbed, tail):
    """Walkers that never enter ``targets``.

    At each site the walker deposits weight/(2d) on every neighbouring
    target, loses that mass and moves uniformly among the remaining
    directions. On leaving the Euclidean ball it deposits weight * g_far
    towards each target for the caller's far-field correction.
    """
    m = targets.shape[0]
    twod = 2 * d
    rk = 0
    for j in range(m):
        s = 0
        for i in range(d):
            s += abs(targets[j, i])
        rk = max(rk, s)
    pos = np.empty(d, np.int64)
    nbr = np.empty(m, np.int64)
    z = np.empty(d, np.float64)
    truncated = 0
    # free steps take direction codes from bit chunks of one draw, rejecting codes >= 2d
    nbits = 1
    while (1 << nbits) < twod:
        nbits += 1
    mask = np.uint64((1 << nbits) - 1)
    per_draw = 64 // nbits
    for w in range(w_lo, w_hi):
        for i in range(d):
            pos[i] = start[i]
        weight = 1.0
        base = np.uint64(w) * np.uint64(4294967296)
        step = 0
        moves = 0
        buf = np.uint64(0)
        left = 0
        while True:
            l1 = 0
            for i in range(d):
                l1 += abs(pos[i])
            k = 0
            if l1 <= rk + 1:
                for j in range(m):
                    dist = 0
                    for i in range(d):
                        dist += abs(pos[i] - targets[j, i])
                    if dist == 1:
                        nbr[k] = j
                        k += 1
            if k > 0:
                share = weight / twod
                for a in range(k):
                    absorbed[nbr[a]] += share
                weight *= (twod - k) / twod
                if k == twod:
                    break
            moves += 1
            if k == 0:
                while True:
                    if left == 0:
                        buf = rng.nb_raw64(k1, k2, base + np.uint64(step))
                        step += 1
                        left = per_draw
                    code = int(buf & mask)
                    buf = buf >> np.uint64(nbits)
                    left -= 1
                    if code < twod:
                        break
                pos[code // 2] += 1 if code % 2 == 0 else -1
            else:
                u = rng.nb_uniform(k1, k2, base + np.uint64(step))
                step += 1
                pick = int(u * (twod - k))
                c = 0
                for dirn in range(twod):
                    i = dirn // 2
                    sgn = 1 if dirn % 2 == 0 else -1
                    pos[i] += sgn
                    blocked = False
                    for a in range(k):
                        same = True
                        for t in range(d):
                            if pos[t] != targets[nbr[a], t]:
                                same = False
                                break
                        if same:
                            blocked = True
                            break
                    if blocked:
                        pos[i] -= sgn
                        continue
                    if c == pick:
                        break
                    pos[i] -= sgn
                    c += 1
            r2 = 0.0
            for i in range(d):
                r2 += pos[i] * pos[i]
            if r2 >= r2max:
                for j in range(m):
                    for i in range(d):
                        z[i] = pos[i] - targets[j, i]
                    tail[j] += weight * _green_far(z, d, ad)
                break
            if moves >= max_steps:
                truncated += 1
                break
    return truncated


@njit(cache=True)
def _killed_walks(d, region, start, target, k1, k2, n, visits, exits):
    """Plain walks from ``start`` stopped on leaving ``region``."""
    m = region.shape[0]
    pos = np.empty(d, np.int64)
    for w in range(n):
        for i in range(d):
            pos[i] = start[i]
        base = np.uint64(w) * np.uint64(4294967296)
        step = 0
        count = 0
        while True:
            inside = False
            for j in range(m):
                same = True
                for i in range(d):
                    if pos[i] != region[j, i]:
                        same = False
                        break
                if same:
                    inside = True
                    break
            if not inside:
                break
            same = True
            for i in range(d):
                if pos[i] != target[i]:
                    same = False
                    break
            if same:
                count += 1
            u = rng.nb_uniform(k1, k2, base + np.uint64(step))
            step += 1
            dirn = int(u * 2 * d)
            pos[dirn // 2] += 1 if dirn % 2 == 0 else -1
        visits[w] = count
        for i in range(d):
            exits[w, i] = pos[i]


def _chunk_bounds(n: int, chunks: int) -> list[tuple[int, int]]:
    chunks = max(2, min(chunks, n))
    edges = np.linspace(0, n, chunks + 1).astype(np.int64)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _run_weighted(d: int, start, targets: np.ndarray, n: int, key: int, radius: float,
                  chunks: int = 64, max_steps: int = 10**8):
    """Per-chunk mean absorbed mass and far-field tail per target."""
    k1, k2 = rng.key_pair(key)
    start = np.asarray(start, dtype=np.int64)
    targets = np.ascontiguousarray(targets, dtype=np.int64)
    m = targets.shape[0]
    bounds = _chunk_bounds(n, chunks)
    A = np.zeros((len(bounds), m))
    B = np.zeros((len(bounds), m))
    ad = asymptotic_constant(d)
    trunc = 0
    for c, (lo, hi) in enumerate(bounds):
        a = np.zeros(m)
        b = np.zeros(m)
        trunc += _weighted_walks(d, start, targets, radius * radius, ad, k1, k2, lo, hi, max_steps, a, b)
        A[c] = a / (hi - lo)
        B[c] = b / (hi - lo)
    weights = np.array([hi - lo for lo, hi in bounds], dtype=float)
    if trunc:
        raise ToleranceError(f"{trunc} walkers hit the step budget before leaving the ball")
    return A, B, weights


def _jackknife(stats: list[np.ndarray], weights: np.ndarray, fn):
    """Delete-one-chunk jackknife of ``fn`` applied to weighted chunk means."""
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()

    def means(mask):
        w = weights * mask
        return [np.tensordot(w, s, axes=(0, 0)) / w.sum() for s in stats]

    full = np.asarray(fn(*means(np.ones_like(weights))), dtype=float)
    k = len(weights)
    reps = []
    for i in range(k):
        mask = np.ones_like(weights)
        mask[i] = 0.0
        reps.append(np.asarray(fn(*means(mask)), dtype=float))
    reps = np.array(reps)
    h = total / weights
    pseudo = h[:, None] * full.ravel()[None, :] - (h[:, None] - 1) * reps.reshape(k, -1)
    est = pseudo.mean(axis=0)
    var = np.sum((pseudo - est) ** 2, axis=0) / (k * (k - 1))
    return full, np.sqrt(var).reshape(full.shape)


@dataclass
class MCResult:
    value: np.ndarray
    se: np.ndarray
    walks: int
    radius: float
    seed: int


def mc_escape(d: int, K: Region, walks: int, seed: int, radius: float = 12.0) -> MCResult:
    """Escape probabilities P_x[no return to K] for x in K by weighted walkers.

    The far-field return mass is closed self-consistently: from an exit
    point z the walk returns with probability sum_y g(z - y) e_K(y), which
    gives a linear system for the escape vector.
    """
    pts = K.coords
    m = len(K)
    As, Bs = [], []
    for i in range(m):
        A, B, wts = _run_weighted(d, pts[i], pts, walks, rng.stream_key(seed, 11, i), radius)
        As.append(A)
        Bs.append(B)
    Aall = np.stack(As, axis=1)   # (chunks, m, m)
    Ball = np.stack(Bs, axis=1)

    def solve(a, b):
        return np.linalg.solve(np.eye(m) + b, 1.0 - a.sum(axis=1))

    val, se = _jackknife([Aall, Ball], wts, solve)
    return MCResult(val, se, walks, radius, seed)


def mc_hitting(d: int, K: Region, x, walks: int, seed: int, radius: float = 12.0,
               escape_walks: int | None = None) -> MCResult:
    """P_x[H_K < inf] by weighted walkers, independent of the dense solves.

    ``value`` holds [total, p_y for y in K]; the far-field part is spread
    over K in proportion to the Monte Carlo escape probabilities.
    """
    x = np.asarray(as_point(x, d).coords, dtype=np.int64)
    if tuple(x.tolist()) in K.index:
        one = np.zeros(len(K) + 1)
        one[0] = 1.0
        one[1 + K.position(x)] = 1.0
        return MCResult(one, np.zeros_like(one), 0, radius, seed)
    pts = K.coords
    m = len(K)
    ew = walks if escape_walks is None else escape_walks
    As, Bs = [], []
    for i in range(m):
        A, B, _ = _run_weighted(d, pts[i], pts, ew, rng.stream_key(seed, 11, i), radius)
        As.append(A)
        Bs.append(B)
    EA = np.stack(As, axis=1)
    EB = np.stack(Bs, axis=1)
    HA, HB, wts = _run_weighted(d, x, pts, walks, rng.stream_key(seed, 12), radius)
    if EA.shape[0] != HA.shape[0]:
        raise ValueError("escape and hitting runs need the same chunking")

    def combine(ea, eb, ha, hb):
        e = np.linalg.solve(np.eye(m) + eb, 1.0 - ea.sum(axis=1))
        far = float(hb @ e)
        cap = e.sum()
        p = ha + far * e / cap
        return np.concatenate([[p.sum()], p])

    val, se = _jackknife([EA, EB, HA, HB], wts, combine)
    return MCResult(val, se, walks, radius, seed)


def mc_green(d: int, x, walks: int, seed: int, radius: float = 12.0) -> GreenValue:
    """g(x) by weighted walkers with a far-field tail; error = 3 SE + tail slack."""
    x = np.asarray(as_point(x, d).coords, dtype=np.int64)
    origin = np.zeros((1, d), dtype=np.int64)
    A0, B0, wts = _run_weighted(d, origin[0], origin, walks, rng.stream_key(seed, 21), radius)
    if not np.any(x):
        val, se = _jackknife([A0, B0], wts, lambda a, b: (1.0 + b[0]) / (1.0 - a[0]))
        tail = float(B0.mean())
    else:
        A1, B1, _ = _run_weighted(d, origin[0], x[None, :], walks, rng.stream_key(seed, 22), radius)

        def est(a0, b0, a1, b1):
            g0 = (1.0 + b0[0]) / (1.0 - a0[0])
            return g0 * a1[0] + b1[0]

        val, se = _jackknife([A0, B0, A1, B1], wts, est)
        tail = float(B1.mean())
    # next neglected far-field order is relatively O(radius^-2)
    slack = abs(tail) * (1.0 / radius) ** 2
    return GreenValue(float(val), float(3.0 * se + slack), "monte_carlo")


def mc_killed_identity(ev: GreenEvaluator, K: Region, x, y, walks: int, seed: int):
    """Monte Carlo estimate of g_K(x,y) + E_x[g(X_exit - y)] with its SE."""
    d = ev.d
    x = np.asarray(as_point(x, d).coords, dtype=np.int64)
    y = np.asarray(as_point(y, d).coords, dtype=np.int64)
    k1, k2 = rng.key_pair(rng.stream_key(seed, 31))
    visits = np.zeros(walks, dtype=np.int64)
    exits = np.zeros((walks, d), dtype=np.int64)
    _killed_walks(d, np.ascontiguousarray(K.coords), x, y, k1, k2, walks, visits, exits)
    uniq, inv = np.unique(exits - y, axis=0, return_inverse=True)
    gvals = np.array([quad_value(d, row) for row in uniq])
    sample = visits + gvals[inv.ravel()]
    return float(np.mean(sample)), float(np.std(sample, ddof=1) / math.sqrt(walks))


# ---------------------------------------------------------- truncated solve

def _box_operator(region: Region) -> sparse.csr_matrix:
    """I - P on ``region`` with P the walk kernel killed outside it."""
    n = len(region)
    e = neighbour_edges(region)
    w = 1.0 / (2 * region.d)
    P = sparse.coo_matrix((np.full(2 * len(e), w), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                          shape=(n, n))
    return (sparse.identity(n, format="csr") - P.tocsr()).tocsc()


def truncated_green(d: int, x, radius: int) -> GreenValue:
    """g_B(0, x) on the l-infinity box of the given radius.

    The reported error is the largest far-field value of g(z - x) over the
    outer boundary, which bounds the missing mass E_0[g(X_exit - x)] by the
    maximum principle (up to the far-field approximation itself).
    """
    x = as_point(x, d)
    box = ball(d, None, radius, "linf")
    if x not in box:
        raise ValueError("target outside the truncation box")
    Q = _box_operator(box)
    rhs = np.zeros(len(box))
    rhs[box.position(LatticePoint.origin(d))] = 1.0
    u = splinalg.spsolve(Q, rhs)
    val = float(u[box.position(x)])
    outer = boundary(box, "outer").coords - np.asarray(x.coords)
    bound = max(green_far(z, d) for z in outer[:: max(1, len(outer) // 2000)])
    # the far-field value itself is only accurate to relative O(r^-2)
    return GreenValue(val, float(bound * (1.0 + 4.0 / radius ** 2)), "truncated_solve")


# ----------------------------------------------------------- public entries

def quad_value(d: int, x) -> float:
    return green_quadrature(d, canonical_key(x))[0]


def green_free(ev: GreenEvaluator, x) -> GreenValue:
    """Free Green function g(x) with an error bound.

    Raises ToleranceError when the bound exceeds ``ev.tolerance``.
    """
    x = as_point(x, ev.d)
    if ev.method == "quadrature":
        val, err = green_quadrature(ev.d, canonical_key(x.coords))
        res = GreenValue(val, err, "quadrature")
    elif ev.method == "monte_carlo":
        res = mc_green(ev.d, x, ev.walks, ev.seed, ev.radius)
    else:
        res = truncated_green(ev.d, x, int(ev.radius))
    if res.error > ev.tolerance:
        raise ToleranceError(f"{res.method} error bound {res.error:.3g} exceeds tolerance {ev.tolerance:.3g}")
    return res


def _codes(sorted_abs: np.ndarray, d: int):
    vmax = int(sorted_abs.max()) if sorted_abs.size else 0
    base = vmax + 1
    if d * math.log2(base) < 62:
        weights = base ** np.arange(d, dtype=np.int64)
        return sorted_abs @ weights, None
    return None, base


def green_matrix(d: int, A, B=None) -> np.ndarray:
    """Matrix of g(a - b) for rows a of A and b of B (quadrature).

    Differences are reduced to sorted absolute values so that only
    distinct orbit representatives are integrated.
    """
    A = A.coords if isinstance(A, Region) else np.asarray(A, dtype=np.int64)
    B = A if B is None else (B.coords if isinstance(B, Region) else np.asarray(B, dtype=np.int64))
    na, nb = A.shape[0], B.shape[0]
    out = np.empty((na, nb))
    values: dict = {}
    rows = max(1, int(4_000_000 // max(1, nb * d)))
    for s in range(0, na, rows):
        diff = np.sort(np.abs(A[s:s + rows, None, :] - B[None, :, :]), axis=-1).reshape(-1, d)
        codes, _ = _codes(diff, d)
        if codes is not None:
            uq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
            reps = diff[first]
        else:
            reps, inv = np.unique(diff, axis=0, return_inverse=True)
        g = np.empty(len(reps))
        for i, r in enumerate(reps):
            t = tuple(r.tolist())
            if t not in values:
                values[t] = quad_value(d, r)
            g[i] = values[t]
        out[s:s + rows] = g[inv.ravel()].reshape(-1, nb)
    return out


@dataclass
class PotentialTable:
    K: Region
    killed_green: np.ndarray
    green_on_K: np.ndarray
    eq_measure: np.ndarray
    capacity: float


def killed_green(K: Region) -> np.ndarray:
    """(I - P_K)^{-1}: expected visits before leaving K."""
    Q = _box_operator(K).toarray()
    g = linalg.inv(Q)
    return 0.5 * (g + g.T)


def potential_table(ev: GreenEvaluator, K: Region, cap: int = DENSE_CAP) -> PotentialTable:
    if len(K) == 0:
        raise ValueError("potential table of an empty set")
    if len(K) > cap:
        raise CapExceeded(f"|K| = {len(K)} exceeds dense cap {cap}")
    if K.d != ev.d:
        raise ValueError("dimension mismatch")
    G = green_matrix(ev.d, K)
    try:
        c = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Green matrix on K is not positive definite: {exc}") from None
    e = linalg.cho_solve(c, np.ones(len(K)))
    if np.any(e < -1e-12):
        raise NumericalError("negative equilibrium measure")
    e = np.clip(e, 0.0, None)
    return PotentialTable(K, killed_green(K), G, e, float(math.fsum(e)))


@dataclass
class HitDistribution:
    probs: np.ndarray
    escape: float
    error: float = 0.0
    method: str = "green"

    @property
    def total(self) -> float:
        return float(self.probs.sum())


def hit_distribution(ev: GreenEvaluator, K: Region, x, method: str = "green",
                     tolerance: float | None = None, max_points: int = 2_000_000,
                     walks: int = 10**6) -> HitDistribution:
    """p_y = P_x[H_K < inf, X_{H_K} = y] for y in K, and the escape mass.

    ``green``: p = g(x - K) G_KK^{-1}, the unique decaying harmonic
    extension of the indicator of y.
    ``box``: Dirichlet problem on growing l-infinity boxes with the
    re-entry mass bounded by cap(K) * max over the outer boundary of g.
    ``monte_carlo``: weighted walkers.
    """
    x = as_point(x, ev.d)
    m = len(K)
    if x in K:
        p = np.zeros(m)
        p[K.position(x)] = 1.0
        return HitDistribution(p, 0.0, 0.0, method)
    tol = ev.tolerance if tolerance is None else tolerance
    if method == "green":
        G = green_matrix(ev.d, K)
        gx = green_matrix(ev.d, np.asarray([x.coords]), K)[0]
        p = linalg.solve(G, gx, assume_a="pos")
        if np.any(p < -1e-10):
            raise NumericalError("negative hitting probability")
        p = np.clip(p, 0.0, None)
        return HitDistribution(p, 1.0 - p.sum(), 0.0, "green")
    if method == "box":
        return _hit_box(ev, K, x, tol, max_points)
    if method == "monte_carlo":
        r = mc_hitting(ev.d, K, x, walks, ev.seed, ev.radius)
        return HitDistribution(r.value[1:], 1.0 - r.value[0], float(3 * r.se[0]), "monte_carlo")
    raise ValueError(f"unknown method {method!r}")


def _hit_box(ev: GreenEvaluator, K: Region, x: LatticePoint, tol: float, max_points: int) -> HitDistribution:
    d = ev.d
    allpts = np.vstack([K.coords, np.asarray([x.coords])])
    R = int(np.abs(allpts).max()) + 2
    cap = potential_table(ev, K).capacity
    bound = math.inf
    while True:
        if (2 * R + 1) ** d > max_points:
            raise ToleranceError(f"box hitting distribution: tolerance {tol:.3g} not reached below "
                                 f"{max_points} points (last re-entry bound {bound:.3g})")
        box = ball(d, None, R, "linf")
        # g(. - y) is harmonic off y, so its sup outside the box sits on the outer boundary
        outer = boundary(box, "outer").coords
        far = outer[:: max(1, len(outer) // 4000)]
        bound = cap * max(green_far(z - y, d) for z in far for y in K.coords)
        bound *= 1.0 + 4.0 / R**2
        if bound > tol:
            R *= 2
            continue
        free = box.difference(K)
        Q = _box_operator(free)
        kidx = {t: j for j, t in enumerate(map(tuple, K.coords.tolist()))}
        rows, cols = [], []
        for off in np.vstack([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)]):
            nb = free.coords + off
            for i, t in enumerate(map(tuple, nb.tolist())):
                j = kidx.get(t)
                if j is not None:
                    rows.append(i)
                    cols.append(j)
        Pk = sparse.coo_matrix((np.full(len(rows), 1.0 / (2 * d)), (rows, cols)),
                               shape=(len(free), len(K))).toarray()
        xi = free.position(x)
        p = np.empty(len(K))
        for j in range(len(K)):
            sol, info = splinalg.cg(Q, Pk[:, j], rtol=1e-12, atol=0.0, maxiter=20 * (2 * R + 1) ** 2)
            if info != 0:
                raise NumericalError("conjugate gradients did not converge on the box")
            p[j] = sol[xi]
        return HitDistribution(p, 1.0 - p.sum(), bound, "box")


def hitting_prob(ev: GreenEvaluator, x, K: Region, table: PotentialTable | None = None) -> float:
    """P_x[H_K < inf] = sum_y g(x - y) e_K(y)."""
    x = as_point(x, ev.d)
    if x in K:
        return 1.0
    t = potential_table(ev, K) if table is None else table
    gx = green_matrix(ev.d, np.asarray([x.coords]), K)[0]
    return float(min(1.0, math.fsum(gx * t.eq_measure)))


def return_probability(ev: GreenEvaluator, k: int) -> float:
    """sup over |x|_1 = k of P_x[return to B_1(0,k)] = 1 - min e_K on the sphere."""
    K = ball(ev.d, None, k, "l1")
    t = potential_table(ev, K)
    on_sphere = np.abs(K.coords).sum(axis=1) == k
    return float(1.0 - t.eq_measure[on_sphere].min())


def verify_bounds(d_range, constants: ConstantsLedger | None = None, cap: int = DENSE_CAP) -> dict:
    """Evaluate the high-dimensional Green function bounds on a desk grid.

    Reports LHS, RHS and margin (RHS - LHS) per row; pass/fail is relative
    to the supplied constants and nothing is asserted.
    """
    led = ConstantsLedger() if constants is None else constants
    rows = []

    def row(bound, d, point, lhs, rhs, used):
        rows.append({"bound": bound, "d": d, "point": point, "lhs": lhs, "rhs": rhs,
                     "margin": rhs - lhs, "pass": bool(lhs <= rhs), "constants": used})

    c, c0 = led.get("c"), led.get("c0")
    for d in d_range:
        g0 = quad_value(d, np.zeros(d, dtype=np.int64))
        row("g0_expansion", d, "0", abs(g0 - 1 - 1 / (2 * d)), 2.0 / d**2, [])
        if d >= 5:
            for pt in (LatticePoint.unit(d, 0, 8 * d), LatticePoint([2 * d] * 4 + [0] * (d - 4))):
                l1 = norm_l1(pt)
                row("c0_decay", d, str(pt.coords), quad_value(d, pt.coords),
                    (c0 * d / l1) ** (d / 2 - 2), ["c0"])
        for k in (0, 1, 2):
            try:
                lhs = return_probability(GreenEvaluator(d), k)
            except CapExceeded:
                continue
            row("return_probability", d, f"|x|_1={k}", lhs, led.get(f"c({k})") / d, [f"c({k})"])
        for mult in (1, 2):
            pt = LatticePoint.unit(d, 0, mult * d)
            row("g_l2_decay", d, str(pt.coords), quad_value(d, pt.coords),
                (c * math.sqrt(d) / (mult * d)) ** (d - 2), ["c"])
        L = d
        try:
            B = ball(d, None, L, "l2", cap=cap)
            if len(B) <= cap:
                capv = potential_table(GreenEvaluator(d), B, cap=cap).capacity
                row("ball_capacity", d, f"L={L}", capv, (c * L / math.sqrt(d)) ** (d - 2), ["c"])
        except CapExceeded:
            pass
    used = sorted({u for r in rows for u in r["constants"]})
    return {"rows": rows, "constants": led.snapshot(), "banner": led.banner(used)}


def norm_l1(p) -> int:
    return int(np.abs(np.asarray(as_point(p).coords)).sum())
