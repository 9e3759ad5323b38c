"""Geometry of the integer lattice: points, finite regions, balls, boundaries
and connected components."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CAP = 2_000_000

NORMS = ("l1", "l2", "linf")


class DimensionError(ValueError):
    pass


class CapExceeded(ValueError):
    pass


@dataclass(frozen=True)
class LatticePoint:
    coords: tuple[int, ...]

    def __init__(self, coords: Iterable[int]):
        object.__setattr__(self, "coords", tuple(int(c) for c in coords))
        if len(self.coords) < 1:
            raise DimensionError("a lattice point needs at least one coordinate")

    @property
    def d(self) -> int:
        return len(self.coords)

    @classmethod
    def origin(cls, d: int) -> "LatticePoint":
        return cls((0,) * d)

    @classmethod
    def unit(cls, d: int, i: int, scale: int = 1) -> "LatticePoint":
        c = [0] * d
        c[i] = scale
        return cls(c)

    def _check(self, other: "LatticePoint") -> None:
        if other.d != self.d:
            raise DimensionError(f"dimension mismatch: {self.d} vs {other.d}")

    def __add__(self, other: "LatticePoint") -> "LatticePoint":
        self._check(other)
        return LatticePoint(a + b for a, b in zip(self.coords, other.coords))

    def __sub__(self, other: "LatticePoint") -> "LatticePoint":
        self._check(other)
        return LatticePoint(a - b for a, b in zip(self.coords, other.coords))

    def __neg__(self) -> "LatticePoint":
        return LatticePoint(-a for a in self.coords)

    def __iter__(self):
        return iter(self.coords)

    def __len__(self) -> int:
        return len(self.coords)

    def __getitem__(self, i):
        return self.coords[i]

    def __repr__(self) -> str:
        return f"LatticePoint{self.coords}"


def as_point(p, d: int | None = None) -> LatticePoint:
    if isinstance(p, LatticePoint):
        pt = p
    else:
        pt = LatticePoint(p)
    if d is not None and pt.d != d:
        raise DimensionError(f"dimension mismatch: expected {d}, got {pt.d}")
    return pt


def norm(p, kind: str = "l1") -> float:
    """l1, l2 or l-infinity norm of a lattice point."""
    c = np.abs(np.asarray(as_point(p).coords, dtype=np.int64))
    if kind == "l1":
        return float(c.sum())
    if kind == "l2":
        return math.sqrt(float(np.dot(c, c)))
    if kind == "linf":
        return float(c.max())
    raise ValueError(f"unknown norm {kind!r}")


class Region:
    """Finite ordered set of distinct lattice points of a common dimension.

    ``coords`` is an (n, d) integer array; ``index`` maps coordinate
    tuples to positions.
    """

    def __init__(self, points, d: int | None = None, check: bool = True):
        if isinstance(points, np.ndarray):
            arr = np.asarray(points, dtype=np.int64)
        else:
            pts = [as_point(p).coords if isinstance(p, LatticePoint) else tuple(p) for p in points]
            if not pts:
                if d is None:
                    raise DimensionError("empty region needs an explicit dimension")
                arr = np.zeros((0, d), dtype=np.int64)
            else:
                arr = np.asarray(pts, dtype=np.int64)
        if arr.ndim != 2:
            raise DimensionError("points must form an (n, d) array")
        if d is not None and arr.shape[1] != d:
            raise DimensionError(f"dimension mismatch: expected {d}, got {arr.shape[1]}")
        self.coords = arr
        self.coords.setflags(write=False)
        self.d = arr.shape[1]
        self._index = None
        if check and len(self) > 1:
            u = np.unique(arr, axis=0)
            if u.shape[0] != arr.shape[0]:
                raise ValueError("region contains duplicate points")

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __iter__(self):
        for row in self.coords:
            yield LatticePoint(row)

    def __getitem__(self, i: int) -> LatticePoint:
        return LatticePoint(self.coords[i])

    def __contains__(self, p) -> bool:
        return tuple(int(c) for c in as_point(p)) in self.index

    def __repr__(self) -> str:
        return f"Region(d={self.d}, n={len(self)})"

    @property
    def index(self) -> dict:
        if self._index is None:
            self._index = {tuple(r): i for i, r in enumerate(self.coords.tolist())}
        return self._index

    @property
    def points(self) -> list[LatticePoint]:
        return list(self)

    def position(self, p) -> int:
        return self.index[tuple(as_point(p, self.d).coords)]

    def positions(self, other: "Region") -> np.ndarray:
        """Positions of the points of ``other`` inside this region."""
        _check_dims(self, other)
        idx = self.index
        try:
            return np.array([idx[t] for t in map(tuple, other.coords.tolist())], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"point {exc.args[0]} is not in the region") from None

    def mask(self, other: "Region") -> np.ndarray:
        m = np.zeros(len(self), dtype=bool)
        m[self.positions(other)] = True
        return m

    def subset(self, mask_or_idx) -> "Region":
        sel = np.asarray(mask_or_idx)
        return Region(self.coords[sel], d=self.d, check=False)

    def sorted(self) -> "Region":
        order = np.lexsort(self.coords.T[::-1])
        return Region(self.coords[order], d=self.d, check=False)

    def translate(self, p) -> "Region":
        v = np.asarray(as_point(p, self.d).coords, dtype=np.int64)
        return Region(self.coords + v, d=self.d, check=False)

    def union(self, other: "Region") -> "Region":
        _check_dims(self, other)
        extra = ~_membership(other.coords, self.coords)
        return Region(np.vstack([self.coords, other.coords[extra]]), d=self.d, check=False)

    def intersection(self, other: "Region") -> "Region":
        _check_dims(self, other)
        return Region(self.coords[_membership(self.coords, other.coords)], d=self.d, check=False)

    def difference(self, other: "Region") -> "Region":
        _check_dims(self, other)
        return Region(self.coords[~_membership(self.coords, other.coords)], d=self.d, check=False)

    def issubset(self, other: "Region") -> bool:
        _check_dims(self, other)
        return bool(_membership(self.coords, other.coords).all())


def _check_dims(a: Region, b: Region) -> None:
    if a.d != b.d:
        raise DimensionError(f"dimension mismatch: {a.d} vs {b.d}")


def _membership(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean mask of rows of ``a`` that occur in ``b``."""
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros(a.shape[0], dtype=bool)
    keys_a, keys_b = _row_keys(a, b)
    return np.isin(keys_a, keys_b)


def _row_keys(*arrays: np.ndarray):
    """Integer keys that identify rows consistently across ``arrays``."""
    allrows = np.vstack(arrays)
    lo = allrows.min(axis=0)
    span = allrows.max(axis=0) - lo + 1
    if np.sum(np.log2(span.astype(float))) < 62:
        strides = np.ones(len(span), dtype=np.int64)
        strides[:-1] = np.cumprod(span[::-1])[::-1][1:]
        return tuple((a - lo) @ strides for a in arrays)
    _, inv = np.unique(allrows, axis=0, return_inverse=True)
    inv = inv.ravel()
    out, start = [], 0
    for a in arrays:
        out.append(inv[start:start + a.shape[0]])
        start += a.shape[0]
    return tuple(out)


def _l1_ball_count(d: int, n: int) -> int:
    return sum(2**k * math.comb(d, k) * math.comb(n, k) for k in range(min(d, n) + 1))


def _l1_sphere_count(d: int, n: int) -> int:
    if n == 0:
        return 1
    return sum(2**k * math.comb(d, k) * math.comb(n - 1, k - 1) for k in range(1, min(d, n) + 1))


def _enumerate(d: int, r: float, kind: str, sphere: bool, cap: int) -> np.ndarray:
    if kind == "linf":
        m = int(math.floor(r + 1e-12))
        if sphere and abs(r - m) > 1e-12:
            return np.zeros((0, d), dtype=np.int64)
        count = (2 * m + 1) ** d
        if count > cap:
            raise CapExceeded(f"region of {count} points exceeds cap {cap}")
        axis = np.arange(-m, m + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        if sphere:
            grid = grid[np.abs(grid).max(axis=1) == m] if m > 0 else grid
        return grid
    if kind == "l1":
        m = int(math.floor(r + 1e-12))
        if sphere and abs(r - m) > 1e-12:
            return np.zeros((0, d), dtype=np.int64)
        count = _l1_sphere_count(d, m) if sphere else _l1_ball_count(d, m)
        if count > cap:
            raise CapExceeded(f"region of {count} points exceeds cap {cap}")
        budget = m
        sq = False
    elif kind == "l2":
        r2 = r * r
        if sphere:
            if abs(r2 - round(r2)) > 1e-9:
                return np.zeros((0, d), dtype=np.int64)
            r2 = round(r2)
        budget = r2
        m = int(math.floor(math.sqrt(r2) + 1e-12))
        sq = True
    else:
        raise ValueError(f"unknown norm {kind!r}")

    out: list[tuple[int, ...]] = []
    prefix = [0] * d

    def rec(i: int, left) -> None:
        if i == d:
            if sphere and (left > 1e-9 if sq else left != 0):
                return
            out.append(tuple(prefix))
            if len(out) > cap:
                raise CapExceeded(f"region exceeds cap {cap}")
            return
        lim = int(math.floor(math.sqrt(left) + 1e-12)) if sq else int(left)
        for v in range(-lim, lim + 1):
            cost = v * v if sq else abs(v)
            prefix[i] = v
            rec(i + 1, left - cost)
        prefix[i] = 0

    rec(0, budget)
    return np.asarray(out, dtype=np.int64).reshape(-1, d)


def ball(d: int, center=None, r: float = 1, kind: str = "l1", cap: int = DEFAULT_CAP) -> Region:
    """Closed ball {y : |y - center| <= r}, lexicographically ordered."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    c = LatticePoint.origin(d) if center is None else as_point(center, d)
    pts = _enumerate(d, float(r), kind, False, cap) + np.asarray(c.coords, dtype=np.int64)
    return Region(pts, d=d, check=False)


def sphere(d: int, center=None, r: float = 1, kind: str = "l1", cap: int = DEFAULT_CAP) -> Region:
    """Sphere {y : |y - center| = r}, lexicographically ordered."""
    if r < 0:
        raise ValueError("radius must be nonnegative")
    c = LatticePoint.origin(d) if center is None else as_point(center, d)
    pts = _enumerate(d, float(r), kind, True, cap) + np.asarray(c.coords, dtype=np.int64)
    return Region(pts, d=d, check=False)


def unit_offsets(d: int) -> np.ndarray:
    """The 2d nearest-neighbour steps, ordered +e_1, -e_1, +e_2, ..."""
    off = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        off[2 * i, i] = 1
        off[2 * i + 1, i] = -1
    return off


def star_offsets(d: int) -> np.ndarray:
    off = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
    return off[np.abs(off).sum(axis=1) > 0]


def _neighbour_rows(K: Region) -> np.ndarray:
    """(n * 2d, d) array of all nearest neighbours of the points of K."""
    off = unit_offsets(K.d)
    return (K.coords[:, None, :] + off[None, :, :]).reshape(-1, K.d)


def boundary(K: Region, kind: str = "outer") -> Region:
    """Interior boundary (points of K with a neighbour outside) or outer
    boundary (points outside K with a neighbour in K)."""
    if len(K) == 0:
        raise ValueError("boundary of an empty region")
    nb = _neighbour_rows(K)
    inside = _membership(nb, K.coords).reshape(len(K), 2 * K.d)
    if kind == "interior":
        return K.subset(~inside.all(axis=1))
    if kind == "outer":
        out = np.unique(nb[~inside.ravel()], axis=0)
        return Region(out, d=K.d, check=False)
    raise ValueError(f"unknown boundary kind {kind!r}")


def closure(K: Region) -> Region:
    if len(K) == 0:
        return K
    return Region(np.vstack([K.coords, boundary(K, "outer").coords]), d=K.d, check=False).sorted()


def relative_closure(K: Region, Kp: Region) -> Region:
    """closure(K) intersected with K', in the order of K'."""
    _check_dims(K, Kp)
    return Kp.intersection(closure(K))


class UnionFind:
    """Disjoint sets over 0..n-1 with path halving and union by size."""

    def __init__(self, n: int):
        self.parents = np.arange(n, dtype=np.int64)
        self.sizes = np.ones(n, dtype=np.int64)

    def find(self, i: int) -> int:
        p = self.parents
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return int(i)

    def union(self, i: int, j: int) -> int:
        a, b = self.find(i), self.find(j)
        if a == b:
            return a
        if self.sizes[a] < self.sizes[b]:
            a, b = b, a
        self.parents[b] = a
        self.sizes[a] += self.sizes[b]
        return a

    def labels(self) -> np.ndarray:
        """Component label per element, numbered by first appearance."""
        roots = np.array([self.find(i) for i in range(len(self.parents))], dtype=np.int64)
        _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
        rank = np.argsort(np.argsort(first))
        return rank[inv]


def neighbour_edges(K: Region, adjacency: str = "nearest") -> np.ndarray:
    """Array (m, 2) of index pairs i < j of adjacent points of K."""
    n = len(K)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    if adjacency == "nearest":
        off = unit_offsets(K.d)[::2]
    elif adjacency == "star":
        off = star_offsets(K.d)
        off = off[[tuple(o) > (0,) * K.d for o in off.tolist()]]
    else:
        raise ValueError(f"unknown adjacency {adjacency!r}")
    pairs = []
    shifted = np.vstack([K.coords + o for o in off])
    kk, ks = _row_keys(K.coords, shifted)
    order = np.argsort(kk)
    sk = kk[order]
    pos = np.searchsorted(sk, ks)
    pos = np.minimum(pos, n - 1)
    hit = sk[pos] == ks
    src = np.tile(np.arange(n), len(off))
    dst = order[pos]
    pairs = np.stack([src[hit], dst[hit]], axis=1)
    pairs.sort(axis=1)
    return pairs


@dataclass
class Components:
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.sizes)


def components(K: Region, adjacency: str = "nearest") -> Components:
    """Connected components of K under nearest or star adjacency."""
    uf = UnionFind(len(K))
    for i, j in neighbour_edges(K, adjacency).tolist():
        uf.union(i, j)
    labels = uf.labels()
    sizes = np.bincount(labels, minlength=labels.max() + 1 if len(labels) else 0)
    return Components(labels, sizes)


def hypercube(d: int, base: Sequence[int] = (0, 0)) -> Region:
    """The translate 2x + {0,1}^d for x in Z^2 embedded in the first two axes."""
    if d < 2:
        raise DimensionError("hypercubes need d >= 2")
    shift = np.zeros(d, dtype=np.int64)
    shift[0], shift[1] = 2 * int(base[0]), 2 * int(base[1])
    cube = np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)
    return Region(cube + shift, d=d, check=False)
