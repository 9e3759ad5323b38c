"""Exact samplers for the lattice Gaussian free field and its conditional
decomposition onto a finite set."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, sparse, special
from scipy.sparse import linalg as splinalg

from . import rng
from .lattice import CapExceeded, Region, ball, neighbour_edges
from .potential import DENSE_CAP, GreenEvaluator, NumericalError, green_matrix, quad_value

JITTER = 1e-10
BINARY_MAGIC = b"GFFS"

_TAG_DENSE = 101
_TAG_SEQ = 102
_TAG_BOX_EDGE = 103
_TAG_BOX_BULK = 104


def g0(d: int) -> float:
    return quad_value(d, np.zeros(d, dtype=np.int64))


def replica_normals(seed: int, tag: int, replicas, width: int) -> np.ndarray:
    """Standard normals of shape (len(replicas), width); row r depends only
    on (seed, tag, r)."""
    r = np.asarray(replicas, dtype=np.uint64)
    if width >= 2**32:
        raise ValueError("width too large for a replica block")
    counters = (r[:, None] << np.uint64(32)) + np.arange(width, dtype=np.uint64)[None, :]
    return rng.normals(rng.stream_key(seed, tag), counters)


def _as_replicas(n: int, start: int = 0) -> np.ndarray:
    return np.arange(start, start + n, dtype=np.int64)


@dataclass
class FieldSample:
    region: Region
    values: np.ndarray
    provenance: tuple

    def __post_init__(self):
        if len(self.values) != len(self.region):
            raise ValueError("values length must equal |region|")


@dataclass
class FieldBatch:
    """Several replicas on one region; row i is replica ``replicas[i]``."""

    region: Region
    values: np.ndarray
    sampler: str
    seed: int
    replicas: np.ndarray
    flags: tuple = ()

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> FieldSample:
        return FieldSample(self.region, self.values[i], (self.sampler, self.seed, int(self.replicas[i])))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def _cholesky(cov: np.ndarray, scale: float) -> tuple[np.ndarray, bool]:
    """Lower Cholesky factor with a single jitter retry."""
    try:
        return linalg.cholesky(cov, lower=True), False
    except linalg.LinAlgError:
        pass
    try:
        return linalg.cholesky(cov + JITTER * scale * np.eye(len(cov)), lower=True), True
    except linalg.LinAlgError as exc:
        raise NumericalError(f"covariance not positive definite after jitter: {exc}") from None


@dataclass
class CovarianceModel:
    region: Region
    cov: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False)
    jittered: bool = False

    @property
    def factor(self) -> np.ndarray:
        if self._factor is None:
            self._factor, self.jittered = _cholesky(self.cov, self.cov[0, 0])
        return self._factor


def covariance_model(region: Region, cap: int = DENSE_CAP) -> CovarianceModel:
    if len(region) > cap:
        raise CapExceeded(f"|region| = {len(region)} exceeds dense cap {cap}")
    if region.d < 3:
        raise ValueError("the free field needs d >= 3")
    return CovarianceModel(region, green_matrix(region.d, region))


def sample_dense(model: CovarianceModel, n: int, seed: int, start: int = 0) -> FieldBatch:
    """Exact i.i.d. replicas phi = L z with L L^T = G."""
    reps = _as_replicas(n, start)
    z = replica_normals(seed, _TAG_DENSE, reps, len(model.region))
    vals = z @ model.factor.T
    flags = ("jitter",) if model.jittered else ()
    return FieldBatch(model.region, vals, "dense", seed, reps, flags)


# ------------------------------------------------------ conditional split

@dataclass
class ConditionalSplit:
    K: Region
    targets: Region
    shift_coeffs: np.ndarray
    killed_cov: np.ndarray


def conditional_split(K: Region, targets: Region) -> ConditionalSplit:
    """Law of phi on ``targets`` given phi on K.

    The conditional mean is shift_coeffs @ phi_K, whose rows are the
    hitting distributions onto K; the residual field has covariance
    g_{K^c}, obtained as a Schur complement.
    """
    if len(K) == 0:
        raise ValueError("conditioning set must be nonempty")
    d = K.d
    Gkk = green_matrix(d, K)
    Gtk = green_matrix(d, targets, K)
    Gtt = green_matrix(d, targets)
    c = linalg.cho_factor(Gkk, lower=True)
    shift = linalg.cho_solve(c, Gtk.T).T
    killed = Gtt - shift @ Gtk.T
    inK = np.array([tuple(r) in K.index for r in targets.coords.tolist()], dtype=bool)
    if inK.any():
        rows = np.flatnonzero(inK)
        shift[rows] = 0.0
        shift[rows, K.positions(targets.subset(rows))] = 1.0
        killed[rows, :] = 0.0
        killed[:, rows] = 0.0
    shift[np.abs(shift) < 1e-15] = 0.0
    killed = 0.5 * (killed + killed.T)
    return ConditionalSplit(K, targets, shift, killed)


def consistency_residual(split: ConditionalSplit) -> float:
    """max |g(x,y) - g_{K^c}(x,y) - sum_z p_{x,z} g(z,y)| over targets x and
    y in K or in targets, with g(x,y) evaluated pointwise by quadrature."""
    d = split.K.d
    ys = np.vstack([split.K.coords, split.targets.coords])
    killed = np.hstack([np.zeros((len(split.targets), len(split.K))), split.killed_cov])
    gzy = green_matrix(d, split.K, ys)
    worst = 0.0
    for i, x in enumerate(split.targets.coords):
        for j, y in enumerate(ys):
            lhs = quad_value(d, x - y)
            rhs = killed[i, j] + float(split.shift_coeffs[i] @ gzy[:, j])
            worst = max(worst, abs(lhs - rhs))
    return worst


# ------------------------------------------------------- sequential sampler

@dataclass
class SequentialPlan:
    """Per-step data for phi_{x_n} = psi_{x_n} + sum_{l<n} p_{n,l} phi_{x_l}.

    ``coeffs[n, l]`` is the hitting weight of x_l from x_n onto the first
    n sites (ordering positions); ``variances[n]`` is g_{K_n^c}(x_n, x_n).
    """

    region: Region
    ordering: np.ndarray
    coeffs: np.ndarray
    variances: np.ndarray


def sequential_plan(region: Region, ordering=None, cov: np.ndarray | None = None) -> SequentialPlan:
    n = len(region)
    order = np.arange(n) if ordering is None else np.asarray(ordering, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError("ordering must be a permutation of the region indices")
    C = green_matrix(region.d, region) if cov is None else cov
    Cp = C[np.ix_(order, order)]
    coeffs = np.zeros((n, n))
    var = np.empty(n)
    # Schur complement recursion through a Cholesky factorisation
    try:
        L = linalg.cholesky(Cp, lower=True)
    except linalg.LinAlgError:
        _, D, _ = linalg.ldl(Cp, lower=True)
        worst = float(np.min(np.diag(D)))
        if worst < -1e-10:
            raise NumericalError(f"negative Schur variance {worst:.3g}") from None
        L = linalg.cholesky(Cp + JITTER * Cp[0, 0] * np.eye(n), lower=True)
    diag = np.diag(L)
    var[:] = diag**2
    M = L / diag[None, :]
    Minv = linalg.solve_triangular(M, np.eye(n), lower=True, unit_diagonal=True)
    coeffs = np.eye(n) - Minv
    coeffs[np.abs(coeffs) < 1e-15] = 0.0
    coeffs = np.tril(coeffs, -1)
    return SequentialPlan(region, order, coeffs, var)


def run_sequential(plan: SequentialPlan, psi: np.ndarray) -> np.ndarray:
    """phi in ordering positions from psi in ordering positions (rows = replicas)."""
    phi = np.empty_like(psi)
    for k in range(psi.shape[1]):
        phi[:, k] = psi[:, k] + phi[:, :k] @ plan.coeffs[k, :k]
    return phi


def sample_sequential(region: Region, ordering, seed: int, n: int = 1, start: int = 0,
                      plan: SequentialPlan | None = None) -> FieldBatch:
    plan = sequential_plan(region, ordering) if plan is None else plan
    reps = _as_replicas(n, start)
    z = replica_normals(seed, _TAG_SEQ, reps, len(region))
    psi = z * np.sqrt(plan.variances)[None, :]
    phi_ord = run_sequential(plan, psi)
    vals = np.empty_like(phi_ord)
    vals[:, plan.ordering] = phi_ord
    return FieldBatch(region, vals, "sequential", seed, reps)


# ------------------------------------------------------ box-Markov sampler

class _SparseLDL:
    """Q = P^T L D L^T P from a symmetric-mode SuperLU factorisation."""

    def __init__(self, Q: sparse.csc_matrix):
        n = Q.shape[0]
        lu = splinalg.splu(Q.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options={"SymmetricMode": True})
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise NumericalError("symmetric factorisation lost its symmetric ordering")
        L = lu.L.tocsr()
        U = lu.U.tocsr()
        D = U.diagonal()
        if np.any(D <= 0):
            raise NumericalError("interior operator is not positive definite")
        resid = abs(U - sparse.diags(D) @ L.T).max()
        if resid > 1e-10 * max(1.0, abs(D).max()):
            raise NumericalError("LU factors are not of the form L D L^T")
        self.n = n
        self.lu = lu
        self.perm = lu.perm_r
        self.Lt = L.T.tocsr()
        self.sqrtD = np.sqrt(D)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.lu.solve(b)

    def sample(self, z: np.ndarray) -> np.ndarray:
        """Columns of z (n, m) mapped to draws with covariance Q^{-1}."""
        y = splinalg.spsolve_triangular(self.Lt, z / self.sqrtD[:, None], lower=False,
                                        unit_diagonal=True)
        return y[self.perm]


@dataclass
class BoxMarkovModel:
    box: Region
    edge_idx: np.ndarray
    bulk_idx: np.ndarray
    edge_factor: np.ndarray
    bulk: _SparseLDL | None
    coupling: sparse.csr_matrix


def box_markov_model(d: int, radius: int, edge_cap: int = DENSE_CAP) -> BoxMarkovModel:
    """Split the l-infinity ball into its interior boundary (dense) and
    interior (sparse precision I - P)."""
    box = ball(d, None, radius, "linf")
    inf = np.abs(box.coords).max(axis=1)
    edge_idx = np.flatnonzero(inf == radius)
    bulk_idx = np.flatnonzero(inf < radius)
    if len(edge_idx) > edge_cap:
        raise CapExceeded(f"boundary of {len(edge_idx)} points exceeds dense cap {edge_cap}")
    edge = box.subset(edge_idx)
    L, _ = _cholesky(green_matrix(d, edge), g0(d))
    bulk = None
    pos = np.full(len(box), -1, dtype=np.int64)
    pos[bulk_idx] = np.arange(len(bulk_idx))
    epos = np.full(len(box), -1, dtype=np.int64)
    epos[edge_idx] = np.arange(len(edge_idx))
    e = neighbour_edges(box)
    w = 1.0 / (2 * d)
    if len(bulk_idx):
        both = (pos[e[:, 0]] >= 0) & (pos[e[:, 1]] >= 0)
        ii, jj = pos[e[both, 0]], pos[e[both, 1]]
        nb = len(bulk_idx)
        P = sparse.coo_matrix((np.full(2 * len(ii), w), (np.r_[ii, jj], np.r_[jj, ii])), shape=(nb, nb))
        Q = (sparse.identity(nb) - P).tocsc()
        bulk = _SparseLDL(Q)
    # one-step kernel from interior sites to boundary sites
    a_in = pos[e[:, 0]] >= 0
    b_in = pos[e[:, 1]] >= 0
    r1 = np.r_[pos[e[a_in & ~b_in, 0]], pos[e[b_in & ~a_in, 1]]]
    c1 = np.r_[epos[e[a_in & ~b_in, 1]], epos[e[b_in & ~a_in, 0]]]
    coupling = sparse.coo_matrix((np.full(len(r1), w), (r1, c1)),
                                 shape=(len(bulk_idx), len(edge_idx))).tocsr()
    return BoxMarkovModel(box, edge_idx, bulk_idx, L, bulk, coupling)


def harmonic_extension(model: BoxMarkovModel, edge_values: np.ndarray) -> np.ndarray:
    """Interior values of the harmonic function with the given boundary
    values; rows of ``edge_values`` are replicas."""
    rhs = model.coupling @ np.atleast_2d(edge_values).T
    return model.bulk.solve(np.asarray(rhs)).T


def sample_box_markov(model: BoxMarkovModel, n: int, seed: int, start: int = 0) -> FieldBatch:
    """Exact field on the box: boundary from its dense covariance, interior
    as harmonic extension plus an independent zero-boundary field."""
    reps = _as_replicas(n, start)
    ne, nb = len(model.edge_idx), len(model.bulk_idx)
    vals = np.empty((n, len(model.box)))
    edge = replica_normals(seed, _TAG_BOX_EDGE, reps, ne) @ model.edge_factor.T
    vals[:, model.edge_idx] = edge
    if nb:
        z = replica_normals(seed, _TAG_BOX_BULK, reps, nb)
        free = model.bulk.sample(z.T).T
        vals[:, model.bulk_idx] = harmonic_extension(model, edge) + free
    return FieldBatch(model.box, vals, "box_markov", seed, reps)


# ------------------------------------------------------------ tails, maxima

def tail_density(d: int, h: float) -> float:
    """P[phi_0 >= h]."""
    return float(0.5 * special.erfc(h / math.sqrt(2.0 * g0(d))))


def gaussian_tail(h: float) -> float:
    return float(0.5 * special.erfc(h / math.sqrt(2.0)))


def gaussian_tail_bounds(h: float) -> tuple[float, float]:
    """Lower and upper bounds on the standard Gaussian tail at h > 0."""
    if h <= 0:
        raise ValueError("tail bounds need h > 0")
    dens = math.exp(-h * h / 2.0) / math.sqrt(2.0 * math.pi)
    return (1.0 / h - 1.0 / h**3) * dens, dens / h


def h_as(d: int, eps: float = 0.0) -> float:
    """(1 + eps) sqrt(2 g(0) log d)."""
    if d < 3:
        raise ValueError("h_as needs d >= 3")
    return (1.0 + eps) * math.sqrt(2.0 * g0(d) * math.log(d))


def btis_constant(dims=range(3, 101)) -> float:
    """sqrt(sup_d 2 g(0)) over the given dimensions."""
    return math.sqrt(max(2.0 * g0(d) for d in dims))


@dataclass
class MaxBounds:
    expectation: float
    tail: float | None
    c1: float
    note: str = ""


def max_field_bounds(K: Region, alpha: float) -> MaxBounds:
    """E[max_K phi] <= sqrt(2 g(0) log|K|) and
    P[max_K phi > c1 alpha] <= exp(-(alpha - sqrt(log|K|))^2)."""
    n = len(K)
    if n < 2:
        raise ValueError("need |K| >= 2")
    d = K.d
    c1 = btis_constant()
    expct = math.sqrt(2.0 * g0(d) * math.log(n))
    root = math.sqrt(math.log(n))
    if alpha < root:
        return MaxBounds(expct, None, c1, "not applicable: alpha below sqrt(log|K|)")
    return MaxBounds(expct, math.exp(-(alpha - root) ** 2), c1)


# -------------------------------------------------------------- export

def encode_binary(sample: FieldSample) -> bytes:
    """Little-endian layout: magic, d (u32), |K| (u64), seed (u64),
    replica (u64), coordinates (i64, |K| x d), values (f64)."""
    sampler, seed, replica = sample.provenance
    return b"".join([
        BINARY_MAGIC,
        struct.pack("<IQQQ", sample.region.d, len(sample.region), int(seed) & (2**64 - 1), int(replica)),
        sample.region.coords.astype("<i8").tobytes(),
        np.asarray(sample.values, dtype="<f8").tobytes(),
    ])


def write_binary(sample: FieldSample, path) -> None:
    Path(path).write_bytes(encode_binary(sample))


def read_binary(path) -> FieldSample:
    raw = Path(path).read_bytes()
    if raw[:4] != BINARY_MAGIC:
        raise ValueError("not a field sample file")
    d, n, seed, replica = struct.unpack_from("<IQQQ", raw, 4)
    off = 4 + struct.calcsize("<IQQQ")
    coords = np.frombuffer(raw, dtype="<i8", count=n * d, offset=off).reshape(n, d)
    vals = np.frombuffer(raw, dtype="<f8", count=n, offset=off + 8 * n * d)
    return FieldSample(Region(coords.astype(np.int64), d=d, check=False), vals.astype(np.float64),
                       ("file", seed, replica))


def write_csv(sample: FieldSample, path) -> None:
    d = sample.region.d
    header = ",".join([f"x{i + 1}" for i in range(d)] + ["value"])
    lines = [header]
    for row, v in zip(sample.region.coords.tolist(), sample.values.tolist()):
        lines.append(",".join(str(c) for c in row) + f",{v!r}")
    Path(path).write_text("\r\n".join(lines) + "\r\n", encoding="utf-8")
