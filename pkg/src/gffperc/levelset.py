"""Excursion sets, crossing events and Monte Carlo percolation estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .gff import (FieldBatch, FieldSample, box_markov_model, covariance_model, h_as,
                  sample_box_markov, sample_dense, tail_density)
from .lattice import CapExceeded, Region, UnionFind, ball, neighbour_edges, sphere
from .potential import DENSE_CAP

PROXY_LABEL = "finite-size proxy"
Z95 = 1.959963984540054


@dataclass
class Excursion:
    region: Region
    h: float
    bits: np.ndarray
    source: tuple = ()


def excursion(sample: FieldSample, h: float) -> Excursion:
    """Sites with phi_x >= h."""
    return Excursion(sample.region, float(h), np.asarray(sample.values) >= h, sample.provenance)


@dataclass
class CrossingQuery:
    K: Region
    Kp: Region
    adjacency: str = "nearest"


def crossing(exc: Excursion, q: CrossingQuery) -> bool:
    """True iff a nearest-neighbour path of open sites meets K and K'."""
    reg = exc.region
    if not (q.K.issubset(reg) and q.Kp.issubset(reg)):
        raise ValueError("crossing sets must lie inside the sampled region")
    bits = np.asarray(exc.bits, dtype=bool)
    a = reg.positions(q.K)
    b = reg.positions(q.Kp)
    a, b = a[bits[a]], b[bits[b]]
    if len(a) == 0 or len(b) == 0:
        return False
    uf = UnionFind(len(reg))
    for i, j in neighbour_edges(reg).tolist():
        if bits[i] and bits[j]:
            uf.union(i, j)
    roots = {uf.find(int(i)) for i in a}
    return any(uf.find(int(j)) in roots for j in b)


def open_components(exc: Excursion):
    """Labels (-1 for closed sites) and sizes of the open clusters."""
    bits = np.asarray(exc.bits, dtype=bool)
    idx = np.flatnonzero(bits)
    uf = UnionFind(len(exc.region))
    for i, j in neighbour_edges(exc.region).tolist():
        if bits[i] and bits[j]:
            uf.union(i, j)
    labels = np.full(len(bits), -1, dtype=np.int64)
    if len(idx):
        roots = np.array([uf.find(int(i)) for i in idx])
        _, inv = np.unique(roots, return_inverse=True)
        labels[idx] = inv
    sizes = np.bincount(labels[idx]) if len(idx) else np.zeros(0, dtype=np.int64)
    return labels, sizes


def _csr(n: int, edges: np.ndarray):
    src = np.r_[edges[:, 0], edges[:, 1]]
    dst = np.r_[edges[:, 1], edges[:, 0]]
    order = np.argsort(src, kind="stable")
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst[order].astype(np.int64)


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def _crossing_levels(values, indptr, indices, flags, out):
    """Per row, the largest h with K <-> K' inside {values >= h}.

    Sites are opened in decreasing order; the level at which a cluster
    first carries both flags is the critical level of that sample.
    """
    nrep, n = values.shape
    parent = np.empty(n, np.int64)
    mark = np.empty(n, np.int64)
    opened = np.zeros(n, np.bool_)
    for r in range(nrep):
        out[r] = -np.inf
        opened[:] = False
        order = np.argsort(-values[r], kind="mergesort")
        for t in range(n):
            v = order[t]
            opened[v] = True
            parent[v] = v
            mark[v] = flags[v]
            root = v
            for p in range(indptr[v], indptr[v + 1]):
                u = indices[p]
                if opened[u]:
                    ru = _find(parent, u)
                    if ru != root:
                        parent[ru] = root
                        mark[root] |= mark[ru]
            if mark[root] == 3:
                out[r] = values[r, v]
                break
    return out


@dataclass
class Geometry:
    name: str
    region: Region
    K: Region
    Kp: Region
    scale: int
    box_radius: int | None = None
    _graph: tuple | None = field(default=None, repr=False)

    @property
    def flags(self) -> np.ndarray:
        f = np.zeros(len(self.region), dtype=np.int64)
        f[self.region.positions(self.K)] |= 1
        f[self.region.positions(self.Kp)] |= 2
        return f

    @property
    def graph(self):
        if self._graph is None:
            self._graph = _csr(len(self.region), neighbour_edges(self.region))
        return self._graph


def make_geometry(d: int, kind: str, scale: int) -> Geometry:
    """box_to_sphere(L, 2L), annulus(L, 3L), point_to_l1_sphere(R),
    faces(L) (opposite faces of the box of radius L) or site."""
    if kind == "box_to_sphere":
        reg = ball(d, None, 2 * scale, "linf")
        return Geometry(kind, reg, ball(d, None, scale, "linf"), sphere(d, None, 2 * scale, "linf"), scale, 2 * scale)
    if kind == "annulus":
        reg = ball(d, None, 3 * scale, "linf")
        return Geometry(kind, reg, ball(d, None, scale, "linf"), sphere(d, None, 3 * scale, "linf"), scale, 3 * scale)
    if kind == "point_to_l1_sphere":
        reg = ball(d, None, scale, "l1")
        origin = Region(np.zeros((1, d), dtype=np.int64), d=d)
        return Geometry(kind, reg, origin, sphere(d, None, scale, "l1"), scale, 0 if scale == 0 else None)
    if kind == "faces":
        reg = ball(d, None, scale, "linf")
        lo = reg.subset(reg.coords[:, 0] == -scale)
        hi = reg.subset(reg.coords[:, 0] == scale)
        return Geometry(kind, reg, lo, hi, scale, scale)
    if kind == "site":
        reg = Region(np.zeros((1, d), dtype=np.int64), d=d)
        return Geometry(kind, reg, reg, reg, 0, 0)
    raise ValueError(f"unknown geometry {kind!r}")


class FieldSource:
    """Exact sampler for a geometry: dense when it fits, otherwise
    box-Markov for l-infinity balls."""

    def __init__(self, geom: Geometry, cap: int = DENSE_CAP):
        self.geom = geom
        n = len(geom.region)
        if n <= cap:
            self.kind = "dense"
            self.model = covariance_model(geom.region, cap)
        elif geom.box_radius is not None:
            self.kind = "box_markov"
            self.model = box_markov_model(geom.region.d, geom.box_radius, cap)
        else:
            raise CapExceeded(f"region of {n} points exceeds the dense cap and is not a box")

    def batches(self, replicas: int, seed: int, chunk_elems: int = 4_000_000):
        n = len(self.geom.region)
        step = max(1, chunk_elems // max(1, n))
        for s in range(0, replicas, step):
            m = min(step, replicas - s)
            if self.kind == "dense":
                yield sample_dense(self.model, m, seed, start=s)
            else:
                yield sample_box_markov(self.model, m, seed, start=s)


def critical_levels(geom: Geometry, replicas: int, seed: int, negate: bool = False,
                    source: FieldSource | None = None) -> np.ndarray:
    """Critical crossing level of each replica (common random numbers)."""
    src = FieldSource(geom) if source is None else source
    indptr, indices = geom.graph
    flags = geom.flags
    out = []
    for batch in src.batches(replicas, seed):
        vals = -batch.values if negate else batch.values
        lev = np.empty(vals.shape[0])
        _crossing_levels(np.ascontiguousarray(vals), indptr, indices, flags, lev)
        out.append(lev)
    return np.concatenate(out)


@dataclass
class Estimate:
    value: float
    half_width: float
    replicas: int
    seed: int
    lo: float = 0.0
    hi: float = 1.0

    @property
    def se(self) -> float:
        return math.sqrt(max(self.value * (1 - self.value), 0.0) / self.replicas)


def wilson(successes: int, n: int, seed: int = 0) -> Estimate:
    """Frequency with its 95% Wilson score interval."""
    p = successes / n
    z2 = Z95 * Z95
    den = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / den
    half = Z95 * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # the score interval touches the boundary exactly at 0 and n successes
    if successes == 0:
        lo = 0.0
    if successes == n:
        hi = 1.0
    return Estimate(p, (hi - lo) / 2, n, seed, lo, hi)


def level_estimates(levels: np.ndarray, h_list, seed: int, strict: bool = False) -> list[Estimate]:
    n = len(levels)
    res = []
    for h in h_list:
        k = int(np.count_nonzero(levels > h if strict else levels >= h))
        res.append(wilson(k, n, seed))
    return res


def mc_crossing_prob(d: int, geometry: str, scale: int, h_list, replicas: int, seed: int) -> list[dict]:
    """P[K <-> K' in E^{>=h}] for every h, all from the same samples."""
    geom = make_geometry(d, geometry, scale)
    levels = critical_levels(geom, replicas, seed)
    rows = []
    for h, est in zip(h_list, level_estimates(levels, h_list, seed)):
        rows.append({"d": d, "geometry": geometry, "scale": scale, "h": float(h), "estimate": est.value,
                     "ci_half_width": est.half_width, "replicas": replicas, "seed": seed})
    return rows


def flip_identity_check(d: int, geometry: str, scale: int, h: float, replicas: int, seed: int) -> dict:
    """P[A^h] against P[flipped A at -h] on independent sample sets.

    The flipped event at level -h is the crossing inside {phi < -h}.
    """
    geom = make_geometry(d, geometry, scale)
    src = FieldSource(geom)
    up = critical_levels(geom, replicas, seed, source=src)
    down = critical_levels(geom, replicas, seed + 1_000_003, negate=True, source=src)
    a = wilson(int(np.count_nonzero(up >= h)), replicas, seed)
    b = wilson(int(np.count_nonzero(down > h)), replicas, seed + 1_000_003)
    se = math.sqrt(a.se**2 + b.se**2)
    diff = a.value - b.value
    return {"geometry": geometry, "scale": scale, "h": h, "p_event": a.value, "p_flipped": b.value,
            "difference": diff, "joint_se": se, "joint_ci_half_width": Z95 * se,
            "within_3se": bool(abs(diff) <= 3 * se), "replicas": replicas, "seed": seed}


def local_connectivity(d: int, R: int, h, replicas: int, seed: int, eps: float | None = None,
                       c5: float = 1.0) -> dict:
    """P[0 <-> S_1(0,R) in E^{>=h}] on B_1(0,R), for one level or a list.

    When ``eps`` is given the bound shape exp(-c5 f(eps,N) d log d) with
    N = R/d is reported next to the estimate, never compared.
    """
    hs = np.atleast_1d(np.asarray(h, dtype=float))
    geom = make_geometry(d, "point_to_l1_sphere", R)
    levels = critical_levels(geom, replicas, seed)
    ests = level_estimates(levels, hs, seed)
    out = {"d": d, "R": R, "rows": [{"h": float(x), "estimate": e.value, "ci_half_width": e.half_width}
                                    for x, e in zip(hs, ests)], "replicas": replicas, "seed": seed}
    if eps is not None:
        N = R / d
        f = eps**3 * math.sqrt(N / (1 + eps))
        out["bound_shape"] = {"eps": eps, "N": N, "f": f,
                              "log_bound": -c5 * f * d * math.log(d), "note": "qualitative, not asserted"}
    return out


@dataclass
class Bracket:
    h_lo: float | None
    h_hi: float | None
    resolved: bool
    label: str
    threshold: float
    rows: list

    def as_dict(self) -> dict:
        return {"h_lo": self.h_lo, "h_hi": self.h_hi, "resolved": self.resolved, "label": self.label,
                "threshold": self.threshold, "rows": self.rows}


def _bracket(table: dict, h_grid, threshold: float) -> tuple:
    """(h_lo, h_hi): h_hi is the first grid level where every scale is below
    threshold; h_lo the last earlier level where every scale is at or above."""
    h_grid = list(h_grid)
    below = [all(table[L][i] < threshold for L in table) for i in range(len(h_grid))]
    above = [all(table[L][i] >= threshold for L in table) for i in range(len(h_grid))]
    if True not in below:
        return None, None
    i_hi = below.index(True)
    lows = [i for i in range(i_hi) if above[i]]
    if not lows:
        return None, h_grid[i_hi]
    return h_grid[lows[-1]], h_grid[i_hi]


def _sweep_bracket(d, kind, L_list, threshold, h_grid, replicas, seed) -> Bracket:
    h_grid = sorted(float(h) for h in h_grid)
    table, rows = {}, []
    for L in L_list:
        levels = critical_levels(make_geometry(d, kind, L), replicas, seed)
        ests = level_estimates(levels, h_grid, seed)
        table[L] = [e.value for e in ests]
        rows += [{"d": d, "geometry": kind, "scale": L, "h": h, "estimate": e.value,
                  "ci_half_width": e.half_width, "replicas": replicas, "seed": seed}
                 for h, e in zip(h_grid, ests)]
    lo, hi = _bracket(table, h_grid, threshold)
    resolved = lo is not None and hi is not None
    return Bracket(lo, hi, resolved, PROXY_LABEL if resolved else f"{PROXY_LABEL}: unresolved",
                   threshold, rows)


def h_doublestar_proxy(d: int, L_list, threshold: float, h_grid, replicas: int, seed: int) -> Bracket:
    """Grid bracket where B(0,L) <-> S(0,2L) drops below ``threshold``."""
    return _sweep_bracket(d, "box_to_sphere", L_list, threshold, h_grid, replicas, seed)


def h_star_proxy(d: int, L_list, h_grid, replicas: int, seed: int, threshold: float = 0.5) -> Bracket:
    """Grid bracket where the frequency of a cluster spanning the box
    between opposite faces drops below ``threshold``."""
    return _sweep_bracket(d, "faces", L_list, threshold, h_grid, replicas, seed)


def density_at_h_as(d: int) -> float:
    return tail_density(d, h_as(d))
