"""Hypercube constructions: embedded trees, the alpha recursion, the
Galton-Watson domination coupling, substantial and giant components and
the five-cube good event.

Cube vertices are indexed by bitmasks: local index v has coordinate i equal
to bit i of v, so the neighbour across axis i is ``v ^ (1 << i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg
from scipy.special import ndtr
from scipy.stats import binom

from .constants import ConstantsLedger
from .gff import (covariance_model, h_as, replica_normals, sample_dense, sequential_plan)
from .lattice import CapExceeded, Region, neighbour_edges
from .levelset import Excursion, wilson

CUBE_CAP = 12
_TAG_GW = 201


class GiantUniquenessError(AssertionError):
    """Two components of one cube both passed the giant-closure test."""


# ---------------------------------------------------------------- regions

def _cube_coords(d: int) -> np.ndarray:
    v = np.arange(2 ** d, dtype=np.int64)
    return ((v[:, None] >> np.arange(d)) & 1).astype(np.int64)


@dataclass
class HypercubeRegion:
    d: int
    base: tuple
    points: Region

    def __len__(self) -> int:
        return len(self.points)


def hypercube_region(d: int, base=(0, 0), cap: int = CUBE_CAP) -> HypercubeRegion:
    """H_x = 2x + {0,1}^d with x in Z^2 placed on the first two axes."""
    if d < 3:
        raise ValueError("d must be >= 3")
    if d > cap:
        raise CapExceeded(f"hypercube dimension {d} exceeds cap {cap}")
    shift = np.zeros(d, dtype=np.int64)
    shift[:2] = 2 * np.asarray(base, dtype=np.int64)
    return HypercubeRegion(d, tuple(int(b) for b in base), Region(_cube_coords(d) + shift, d=d, check=False))


# ------------------------------------------------------------------ trees

@dataclass
class EmbeddedTree:
    d: int
    depth: int
    branching: int
    blocks: list
    nodes: np.ndarray        # (n, d) 0/1 coordinates, hierarchical order
    generation: np.ndarray
    parent: np.ndarray       # index of parent node, -1 for children of the root

    @property
    def region(self) -> Region:
        return Region(self.nodes, d=self.d, check=False)

    def __len__(self) -> int:
        return len(self.nodes)


def embed_tree(d: int, depth: int, branching: int) -> EmbeddedTree:
    """Nodes sum_{k<=j} e_{i_k} with i_k in block I_k = {(k-1)r, ..., kr-1}."""
    if depth < 1 or branching < 1:
        raise ValueError("depth and branching must be >= 1")
    if depth * branching > d:
        raise ValueError(f"depth*branching = {depth * branching} exceeds d = {d}")
    r = branching
    blocks = [list(range(k * r, (k + 1) * r)) for k in range(depth)]
    nodes, gen, parent = [], [], []
    frontier = [(-1, np.zeros(d, dtype=np.int64))]
    for j, block in enumerate(blocks, start=1):
        nxt = []
        for pidx, base in frontier:
            for i in block:
                pt = base.copy()
                pt[i] = 1
                nodes.append(pt)
                gen.append(j)
                parent.append(pidx)
                nxt.append((len(nodes) - 1, pt))
        frontier = nxt
    return EmbeddedTree(d, depth, r, blocks, np.array(nodes, dtype=np.int64),
                        np.array(gen, dtype=np.int64), np.array(parent, dtype=np.int64))


@dataclass
class AlphaReport:
    d: int
    alpha: np.ndarray
    sums: np.ndarray
    hit_probs: np.ndarray
    variances: np.ndarray
    max_sum: float
    max_hit: float
    c3_prime: float
    c3_source: str
    identity_residual: float
    min_alpha: float

    @property
    def hit_margin(self) -> float:
        """Distance of c3'/d below 1/2."""
        return 0.5 - self.c3_prime / self.d

    def as_dict(self) -> dict:
        return {"max_sum": self.max_sum, "max_hit": self.max_hit, "c3_prime": self.c3_prime,
                "c3_source": self.c3_source, "identity_residual": self.identity_residual,
                "min_alpha": self.min_alpha, "sum_margin": 2.0 - self.max_sum,
                "hit_margin": self.hit_margin, "first_sum": float(self.sums[0])}


def alpha_coefficients(tree: EmbeddedTree, constants: ConstantsLedger | None = None,
                       ev=None) -> AlphaReport:
    """alpha = (I - P)^-1 where P holds the hitting weights p^{K_n}_{x_n, x_l}.

    Row sums satisfy sum_k alpha_{n,k} = 1 + sum_l p_{n,l} sum_k alpha_{l,k}.
    ``ev`` is accepted for interface symmetry; weights come from the exact
    Green matrix regression.
    """
    led = constants or ConstantsLedger()
    plan = sequential_plan(tree.region)
    P = plan.coeffs
    n = len(tree)
    alpha = linalg.solve_triangular(np.eye(n) - P, np.eye(n), lower=True, unit_diagonal=True)
    sums = alpha.sum(axis=1)
    resid = float(np.max(np.abs(sums - (1.0 + P @ sums))))
    hit = P.sum(axis=1)
    if led.is_placeholder("c3_prime"):
        c3p, src = float(tree.d * hit.max()), "measured d*max hit probability"
    else:
        c3p, src = led.get("c3_prime"), "ledger"
    return AlphaReport(tree.d, alpha, sums, hit, plan.variances, float(sums.max()), float(hit.max()),
                       c3p, src, resid, float(alpha.min()))


# ---------------------------------------------------- Galton-Watson domination

@dataclass
class GWParams:
    d: int
    eps: float
    b: int
    p: float
    formula_threshold: int
    threshold: int
    depth: int
    branching: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gw_params(d: int, eps: float, threshold: int | None = None, depth: int | None = None,
              branching: int | None = None) -> GWParams:
    """b = ceil(1 + 11/eps), p = d^-(1 - 3eps/2), threshold floor(d^eps/b)^(b-1).

    ``threshold``, ``depth`` and ``branching`` override the formula values
    (depth b and branching floor(d/b)), which are out of reach for small d.
    """
    if not 0 < eps < 1 / 3:
        raise ValueError("eps must lie in (0, 1/3)")
    b = math.ceil(1 + 11 / eps - 1e-12)
    p = d ** -(1 - 1.5 * eps)
    ft = math.floor(d ** eps / b) ** (b - 1)
    thr = ft if threshold is None else int(threshold)
    if thr < 1:
        raise ValueError(f"substantial threshold is {thr} at d={d}; supply an override")
    return GWParams(d, eps, b, p, ft, thr, b if depth is None else depth,
                    d // b if branching is None else branching)


def gw_domination_check(tree: EmbeddedTree, gw: GWParams, samples: int, seed: int,
                        alpha: AlphaReport | None = None, constants: ConstantsLedger | None = None,
                        batch: int = 5000) -> dict:
    """Run the explicit coupling phi = alpha psi and count pathwise failures of
    {phi_n >= h(1-2eps)} >= M_{n-1} and {psi_n >= h(1-3eps/2)}."""
    alpha = alpha or alpha_coefficients(tree, constants)
    d, eps = tree.d, gw.eps
    n = len(tree)
    h = h_as(d)
    lvl_psi, lvl_phi = h * (1 - 1.5 * eps), h * (1 - 2 * eps)
    m_thr = -(eps / (4 * alpha.c3_prime)) * d * h
    sd = np.sqrt(alpha.variances)
    viol = premise = 0
    m_count = 0
    hits = np.zeros(n, dtype=np.int64)
    mh_counts = np.zeros(n, dtype=np.int64)
    y_ge_z_fail = 0
    for lo in range(0, samples, batch):
        reps = np.arange(lo, min(lo + batch, samples), dtype=np.int64)
        psi = replica_normals(seed, _TAG_GW, reps, n) * sd[None, :]
        phi = psi @ alpha.alpha.T
        mhat = psi >= m_thr
        prefix = np.logical_and.accumulate(mhat, axis=1)
        m_prev = np.ones_like(mhat)
        m_prev[:, 1:] = prefix[:, :-1]
        Z = psi >= lvl_psi
        Y = phi >= lvl_phi
        prem = m_prev & Z
        premise += int(prem.sum())
        viol += int((prem & ~Y).sum())
        Mfull = prefix[:, -1]
        m_count += int(Mfull.sum())
        y_ge_z_fail += int((Z & ~Y)[Mfull].sum())
        hits += (Z & mhat).sum(axis=0)
        mh_counts += mhat.sum(axis=0)
    pooled = hits.sum() / max(mh_counts.sum(), 1)
    se = math.sqrt(pooled * (1 - pooled) / max(mh_counts.sum(), 1))
    exact = ndtr(-lvl_psi / sd) / ndtr(-m_thr / sd)
    return {
        "d": d, "eps": eps, "depth": tree.depth, "branching": tree.branching, "nodes": n,
        "samples": samples, "seed": seed,
        "levels": {"h_as": h, "psi": lvl_psi, "phi": lvl_phi, "M": m_thr},
        "alpha": alpha.as_dict(),
        "premises": premise, "violations": viol,
        "samples_in_M": m_count, "violations_on_M": y_ge_z_fail,
        "marginal": {"empirical": float(pooled), "se": se, "exact_min": float(exact.min()),
                     "p": gw.p, "meets_p": bool(pooled + 3 * se >= gw.p)},
        "gw": gw.as_dict(),
        "formula_parameters": {"b": gw.b, "branching": d // gw.b, "formula_threshold": gw.formula_threshold},
    }


def chernoff_check(n: int, p: float, delta: float) -> tuple[float, float]:
    """Exact P[Bin(n, p) < (1 - delta) n p] and the bound exp(-delta^2 n p / 2)."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    mean = n * p
    t = (1 - delta) * mean
    k = math.ceil(t) - 1
    exact = float(binom.cdf(k, n, p)) if k >= 0 else 0.0
    return exact, math.exp(-delta * delta * mean / 2)


# ------------------------------------------------------------ cube kernels

@njit(cache=True)
def _find(par, i):
    while par[i] != i:
        par[i] = par[par[i]]
        i = par[i]
    return i


@njit(cache=True)
def _cube_labels(open_, d):
    n = open_.shape[0]
    par = np.arange(n)
    for v in range(n):
        if open_[v]:
            for i in range(d):
                u = v ^ (1 << i)
                if u > v and open_[u]:
                    a, b = _find(par, v), _find(par, u)
                    if a != b:
                        par[max(a, b)] = min(a, b)
    lab = np.full(n, -1, dtype=np.int64)
    for v in range(n):
        if open_[v]:
            lab[v] = _find(par, v)
    return lab


@njit(cache=True)
def _closure_counts(lab, d):
    n = lab.shape[0]
    cnt = np.zeros(n, dtype=np.int64)
    seen = np.empty(d + 1, dtype=np.int64)
    for v in range(n):
        k = 0
        if lab[v] >= 0:
            seen[0] = lab[v]
            k = 1
        for i in range(d):
            l = lab[v ^ (1 << i)]
            if l >= 0:
                dup = False
                for j in range(k):
                    if seen[j] == l:
                        dup = True
                        break
                if not dup:
                    seen[k] = l
                    k += 1
        for j in range(k):
            cnt[seen[j]] += 1
    return cnt


def _check_cube_excursion(exc: Excursion) -> int:
    n = len(exc.region)
    d = exc.region.d
    if n != 2 ** d:
        raise ValueError("excursion must cover a full hypercube")
    base = exc.region.coords[0]
    if not np.array_equal(exc.region.coords - base, _cube_coords(d)):
        raise ValueError("excursion region must be in hypercube bitmask order")
    return d


@dataclass
class SubstantialResult:
    components: list
    bad: np.ndarray
    bad_fraction: float
    threshold: int
    log_bound: float
    bound: float


def substantial_components(exc: Excursion, gw: GWParams,
                           constants: ConstantsLedger | None = None) -> SubstantialResult:
    """Open components of size >= threshold and the bad set of vertices with
    no neighbour inside any of them."""
    d = _check_cube_excursion(exc)
    led = constants or ConstantsLedger()
    lab = _cube_labels(np.asarray(exc.bits, dtype=np.bool_), d)
    roots, sizes = np.unique(lab[lab >= 0], return_counts=True)
    big = roots[sizes >= gw.threshold]
    in_big = np.isin(lab, big)
    nb = np.zeros(len(lab), dtype=bool)
    v = np.arange(len(lab))
    for i in range(d):
        nb |= in_big[v ^ (1 << i)]
    bad = ~nb
    comps = [np.nonzero(lab == r)[0] for r in big]
    logb = -led.get("c4_prime") * d ** gw.eps
    return SubstantialResult(comps, bad, float(bad.mean()), gw.threshold, logb, math.exp(logb))


def giant_threshold(d: int) -> float:
    return (1.0 - d ** -2.0) * 2 ** d


def giant_component(exc: Excursion) -> np.ndarray | None:
    """Indices of the unique component whose closure within the cube covers
    at least (1 - d^-2) 2^d vertices, or None."""
    d = _check_cube_excursion(exc)
    lab = _cube_labels(np.asarray(exc.bits, dtype=np.bool_), d)
    cnt = _closure_counts(lab, d)
    qual = np.nonzero(cnt >= giant_threshold(d))[0]
    if len(qual) > 1:
        raise GiantUniquenessError(f"{len(qual)} components qualify as giant")
    if len(qual) == 0:
        return None
    return np.nonzero(lab == qual[0])[0]


# ------------------------------------------------------------ good event

_NEIGHBOURS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class GoodEventGeometry:
    d: int
    region: Region
    cube_of: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    cube_edges: np.ndarray   # same layout as indices: True if both ends share a cube


def good_event_geometry(d: int) -> GoodEventGeometry:
    """H_0 and its four neighbours H_x, |x|_1 = 1, cube-major bitmask order."""
    n = 2 ** d
    coords = np.vstack([hypercube_region(d, b, cap=max(CUBE_CAP, d)).points.coords for b in _NEIGHBOURS])
    region = Region(coords, d=d, check=False)
    cube_of = np.repeat(np.arange(5), n)
    e = neighbour_edges(region)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(len(region) + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    return GoodEventGeometry(d, region, cube_of, indptr, dst.astype(np.int64), cube_of[src] == cube_of[dst])


@njit(cache=True)
def _good_flags(values, hs, indptr, indices, same, cube_of, d, thr, out):
    R, n = values.shape
    unique_fail = 0
    par = np.empty(n, dtype=np.int64)
    cnt = np.zeros(n, dtype=np.int64)
    seen = np.empty(d + 1, dtype=np.int64)
    giants = np.empty(5, dtype=np.int64)
    for r in range(R):
        for hi in range(hs.shape[0]):
            h = hs[hi]
            for v in range(n):
                par[v] = v
                cnt[v] = 0
            # components inside each cube
            for v in range(n):
                if values[r, v] >= h:
                    for p in range(indptr[v], indptr[v + 1]):
                        u = indices[p]
                        if same[p] and u > v and values[r, u] >= h:
                            a, b = _find(par, v), _find(par, u)
                            if a != b:
                                par[max(a, b)] = min(a, b)
            for v in range(n):
                k = 0
                if values[r, v] >= h:
                    seen[0] = _find(par, v)
                    k = 1
                for p in range(indptr[v], indptr[v + 1]):
                    u = indices[p]
                    if same[p] and values[r, u] >= h:
                        l = _find(par, u)
                        dup = False
                        for j in range(k):
                            if seen[j] == l:
                                dup = True
                                break
                        if not dup:
                            seen[k] = l
                            k += 1
                for j in range(k):
                    cnt[seen[j]] += 1
            ok = True
            for c in range(5):
                giants[c] = -1
            for v in range(n):
                if values[r, v] >= h and par[v] == v and cnt[v] >= thr:
                    c = cube_of[v]
                    if giants[c] >= 0:
                        unique_fail += 1
                    giants[c] = v
            for c in range(5):
                if giants[c] < 0:
                    ok = False
            if ok:
                # join through all edges of the union
                for v in range(n):
                    if values[r, v] >= h:
                        for p in range(indptr[v], indptr[v + 1]):
                            u = indices[p]
                            if u > v and values[r, u] >= h:
                                a, b = _find(par, v), _find(par, u)
                                if a != b:
                                    par[max(a, b)] = min(a, b)
                root = _find(par, giants[0])
                for c in range(1, 5):
                    if _find(par, giants[c]) != root:
                        ok = False
            out[r, hi] = ok
    return unique_fail


def good_event_flags(geom: GoodEventGeometry, values: np.ndarray, h_list) -> np.ndarray:
    """Boolean (replicas, len(h_list)) indicators of G_0^h."""
    values = np.ascontiguousarray(np.atleast_2d(values), dtype=np.float64)
    hs = np.asarray(h_list, dtype=np.float64)
    out = np.zeros((values.shape[0], len(hs)), dtype=np.bool_)
    fails = _good_flags(values, hs, geom.indptr, geom.indices, geom.cube_edges,
                        geom.cube_of, geom.d, giant_threshold(geom.d), out)
    if fails:
        raise GiantUniquenessError(f"{fails} cube scans found two giant components")
    return out


@dataclass
class GoodEventResult:
    d: int
    h_list: list
    estimates: list
    replicas: int
    seed: int
    uniqueness_failures: int = 0
    notes: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"d": self.d, "h": h, "estimate": e.value, "ci_half_width": e.half_width,
                 "lo": e.lo, "hi": e.hi, "replicas": self.replicas, "seed": self.seed}
                for h, e in zip(self.h_list, self.estimates)]


def good_event_mc(d: int, h_list, replicas: int, seed: int, dense_cap: int | None = None,
                  batch: int = 100) -> GoodEventResult:
    """Estimate P[G_0^h] on a CRN grid from joint dense samples of the five cubes.

    The dense cap is raised to 5 * 2^d explicitly; d above 10 is refused.
    """
    npts = 5 * 2 ** d
    cap = 5 * 2 ** 10 if dense_cap is None else dense_cap
    if npts > cap:
        raise CapExceeded(f"good event needs {npts} jointly sampled points (cap {cap})")
    geom = good_event_geometry(d)
    model = covariance_model(geom.region, cap=cap)
    order = np.argsort(h_list, kind="stable")
    hits = np.zeros(len(h_list), dtype=np.int64)
    for lo in range(0, replicas, batch):
        b = sample_dense(model, min(batch, replicas - lo), seed, start=lo)
        flags = good_event_flags(geom, b.values, h_list)
        # the event shrinks as h grows, so every replica must be monotone
        if np.any(np.diff(flags[:, order].astype(np.int8), axis=1) > 0):
            raise AssertionError("good event not monotone in h on a replica")
        hits += flags.sum(axis=0)
    ests = [wilson(int(k), replicas, seed) for k in hits]
    notes = ["jitter"] if model.jittered else []
    return GoodEventResult(d, [float(h) for h in h_list], ests, replicas, seed, 0, notes)
