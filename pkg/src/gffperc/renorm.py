"""Log-space calculators for the two multiscale renormalization schemes.

The upper-bound scheme works on geometric scales L_n = l0^n L0 with a dyadic
tree of boxes and doubly exponential crossing bounds. The lower-bound scheme
is two-dimensional with super-geometric scales l_n = 20 ceil(L_n^a).

Every x^(y 2^n) quantity is carried as log(x) y 2^n. Recursions run in
numpy longdouble. Nothing here is random: identical inputs give identical
traces.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PLACEHOLDER_BANNER, ConstantsLedger
from .gff import btis_constant, h_as

__all__ = [
    "B_CONST", "ConstantsLedger", "ScheduleError", "SeedConditionError",
    "UBSchedule", "UBTrace", "LBSchedule", "LBTrace",
    "ub_N", "ub_min_valid_d", "ub_schedule", "ub_sequences", "ub_propagate",
    "ub_final_chain", "ub_sprinkling_threshold", "embedding_count_log",
    "enumerate_embeddings", "local_connectivity_params",
    "lb_schedule", "lb_propagate", "iroot_ceil", "report", "rows_to_csv",
]

B_CONST = 1.0 / (1.0 - math.exp(-1.0))
LN2 = math.log(2.0)
_LD = np.longdouble


class ScheduleError(ValueError):
    """A parameter constraint failed. Carries the inequality and both sides."""

    def __init__(self, inequality: str, lhs: float, rhs: float, hint: str = ""):
        self.inequality, self.lhs, self.rhs, self.hint = inequality, lhs, rhs, hint
        msg = f"{inequality} violated ({_fmt(lhs)} < {rhs:.1f})"
        super().__init__(msg + (f"; {hint}" if hint else ""))


class SeedConditionError(ValueError):
    pass


def _fmt(x) -> str:
    return str(int(x)) if float(x).is_integer() else f"{x:.4g}"


def _lae(a, b):
    return np.logaddexp(_LD(a), _LD(b))


# ---------------------------------------------------------------------------
# upper-bound scheme


@dataclass
class UBSchedule:
    d: int
    eps: float
    L0: int
    l0: int
    N: int
    k0: float
    b: float
    h0: float | None
    constants: ConstantsLedger
    k0_variant: str = "default"
    min_valid_d: int | None = None
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"d": self.d, "eps": self.eps, "L0": self.L0, "l0": self.l0, "N": self.N,
                "k0": self.k0, "b": self.b, "h0": self.h0, "k0_variant": self.k0_variant,
                "min_valid_d": self.min_valid_d, "notes": list(self.notes)}


@dataclass
class UBTrace:
    schedule: UBSchedule
    rows: list[dict]
    verdicts: list[dict]
    log_sprinkle_sum: float
    log_p0: float | None = None
    violations: int = 0

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.rows], dtype=float)


def ub_N(eps: float, constants: ConstantsLedger | None = None) -> int:
    """N(eps) = ceil(max(c4(eps), 2^5 (2 + eps) 6^2 / (c5 eps^3)^2))."""
    led = constants or ConstantsLedger()
    c4, c5 = led.get("c4_eps"), led.get("c5")
    val = max(c4, 2 ** 5 * (2.0 + eps) * 36.0 / (c5 * eps ** 3) ** 2)
    # guard against 3456.0000000001 style rounding
    return math.ceil(val * (1.0 - 1e-13))


def local_f(eps: float, N: float) -> float:
    return eps ** 3 * math.sqrt(N / (1.0 + eps))


def ub_min_valid_d(N: int) -> int:
    """Smallest d with d >= 20(sqrt d + N), i.e. valid under L0 = l0 = d."""
    s = 10.0 + math.sqrt(100.0 + 20.0 * N)
    d = max(3, int(s * s) - 2)
    while d < 20.0 * (math.sqrt(d) + N):
        d += 1
    while d > 3 and (d - 1) >= 20.0 * (math.sqrt(d - 1) + N):
        d -= 1
    return d


def _k0(d: int, l0: int, c2: float, variant: str) -> float:
    if variant == "default":
        return B_CONST + LN2 + 2 * (d - 1) * math.log(c2 * l0)
    if variant == "display":
        # variant matching the final display, which uses (2 c2 l0)^(2(d-1))
        return B_CONST + LN2 + 2 * (d - 1) * math.log(2 * c2 * l0)
    raise ValueError(f"unknown k0 variant {variant!r}")


def ub_schedule(d: int, eps: float, constants: ConstantsLedger | None = None, *,
                L0: int | None = None, l0: int | None = None, N: int | None = None,
                k0: float | None = None, h0: float | None = None, k0_variant: str = "default",
                compute_h0: bool = True, validate: bool = True) -> UBSchedule:
    """Build the upper-bound parameters and validate the scale constraints.

    Defaults are L0 = l0 = d, N = N(eps) and k0 = b + log(2 (c2 l0)^(2(d-1))).
    Raises ScheduleError naming the first violated inequality. With
    validate=False violations are recorded in ``notes`` instead, which lets
    the sequences be evaluated at sub-threshold parameters.
    """
    if d < 3:
        raise ValueError("d must be >= 3")
    if not eps > 0:
        raise ValueError("eps must be positive")
    led = constants or ConstantsLedger()
    N = ub_N(eps, led) if N is None else int(N)
    L0 = d if L0 is None else int(L0)
    l0 = d if l0 is None else int(l0)
    if N < 1:
        raise ScheduleError("N ≥ 1", N, 1)
    dmin = ub_min_valid_d(N)
    failed = []
    if L0 < d:
        failed.append(ScheduleError("L_0 ≥ d", L0, d))
    rhs = 20.0 * (math.sqrt(d) + N)
    if l0 < rhs:
        failed.append(ScheduleError("l_0 ≥ 20(√d+N)", l0, rhs,
                                    f"with L_0 = l_0 = d the smallest valid d for N={N} is {dmin}"))
    if failed and validate:
        raise failed[0]
    k0 = _k0(d, l0, led.get("c2"), k0_variant) if k0 is None else float(k0)
    if not k0 > 0:
        raise ScheduleError("k_0 > 0", k0, 0.0)
    if h0 is None and compute_h0:
        h0 = h_as(d, eps / 2.0)
    s = UBSchedule(d, float(eps), L0, l0, N, k0, B_CONST, h0, led, k0_variant, dmin)
    if led.banner(["c2", "c3", "c4_eps", "c5"]):
        s.notes.append(PLACEHOLDER_BANNER)
    s.notes.extend(str(e) for e in failed)
    if k0 < B_CONST:
        s.notes.append("k_0 < b: sequences only, propagation refused")
    return s


def _ub_arrays(s: UBSchedule, n_max: int):
    if not 0 <= n_max <= 64:
        raise ValueError("n_max must lie in [0, 64]")
    d, N, L0, l0, k0 = s.d, s.N, s.L0, s.l0, s.k0
    c3 = s.constants.get("c3")
    n = np.arange(n_max + 1, dtype=_LD)
    m = np.sqrt(n * _LD(LN2) + _LD(d) * np.log(_LD((N + 1) * 3) * _LD(L0)))
    gap = _LD(2) ** ((n + 1) / 2) * (np.sqrt(n) + np.sqrt(_LD(k0)))
    alpha = m + gap
    log_incr = (np.log(alpha) + (d - 2) * np.log(_LD(c3) * (np.sqrt(_LD(d)) + N))
                + (n + 1) * (_LD(LN2) - (d - 2) * np.log(_LD(l0))))
    return n, m, gap, alpha, log_incr


def _sprinkle_tail(log_last, n_max: int, k0: float, d: int, l0: int):
    """Log of a geometric bound on sum_{n > n_max} of the increments (None if it diverges)."""
    log_rho = (0.5 * LN2 + math.log1p(1.0 / (math.sqrt(n_max) + math.sqrt(k0))) + LN2
               - (d - 2) * math.log(l0))
    if log_rho >= 0.0:
        return None
    return float(log_last) + log_rho - math.log(-math.expm1(log_rho))


def ub_sequences(s: UBSchedule, n_max: int = 30) -> UBTrace:
    """m_n, alpha_n, h_n and the sprinkling sum for an upper-bound schedule."""
    n, m, gap, alpha, log_incr = _ub_arrays(s, n_max)
    if not np.all(gap > 0) or not np.all(alpha > m):
        raise ArithmeticError("alpha_n > m_n failed")
    if not np.all(np.isfinite(log_incr)):
        raise ArithmeticError("non-finite value in log-space sequence")
    # log of h_n - h_0 (partial sums of the increments)
    log_cum = np.full(n_max + 2, -np.inf, dtype=_LD)
    for i in range(n_max + 1):
        log_cum[i + 1] = _lae(log_cum[i], log_incr[i])
    log_c2l0 = math.log(s.constants.get("c2") * s.l0)
    rows = []
    for i in range(n_max + 1):
        lc = float(log_cum[i])
        rows.append({
            "n": i,
            "log_L": math.log(s.L0) + i * math.log(s.l0),
            "m": float(m[i]),
            "alpha": float(alpha[i]),
            "log_h_increment": float(log_incr[i]),
            "log_h_minus_h0": lc,
            "h": None if s.h0 is None else (s.h0 + math.exp(lc) if lc < 709.0 else math.inf),
            "log_p_bound": -(s.k0 - s.b) * 2.0 ** i,
            "log_complexity": 2 * (s.d - 1) * 2.0 ** i * log_c2l0,
        })
    tail = _sprinkle_tail(log_incr[-1], n_max, s.k0, s.d, s.l0)
    total = float(log_cum[-1]) if tail is None else float(_lae(log_cum[-1], tail))
    target = math.log(s.eps / 2.0)
    ratios = np.diff(log_incr)
    bound = np.log(2.0 * alpha[1:] / alpha[:-1]) - (s.d - 2) * np.log(_LD(s.l0))
    verdicts = [
        {"name": "alpha_n > m_n", "pass": True},
        # increments are exp(log_incr) > 0, so h_n is strictly increasing
        {"name": "h increments positive and decaying",
         "pass": bool(np.all(ratios < 0)) and bool(np.all(np.isfinite(log_incr))),
         "max_log_ratio": float(ratios.max()) if len(ratios) else None},
        {"name": "increment ratio <= 2 l0^-(d-2) alpha_{n+1}/alpha_n",
         "pass": bool(np.all(ratios <= bound + 1e-12 * np.abs(bound)))},
        {"name": "h_inf - h_0 <= eps/2", "pass": tail is not None and total <= target,
         "log_lhs": total, "log_rhs": target, "tail_bounded": tail is not None},
    ]
    return UBTrace(s, rows, verdicts, total)


def ub_propagate(s: UBSchedule, log_p0: float, n_max: int = 30) -> UBTrace:
    """Iterate p_{n+1} <= p_n^2 + exp(-(alpha_n - m_n)^2) from a seed and
    check p_n <= exp(-(k0 - b) 2^n) at every step."""
    if log_p0 > -s.k0:
        raise SeedConditionError(
            f"seed condition p_0(h_0) ≤ e^{{-k_0}} violated: log p_0 = {log_p0:.6g} > "
            f"-k_0 = {-s.k0:.6g}. The recursion only closes when the seed is already below "
            f"e^(-k_0); with k_0 of order 2(d-1) log(c2 l0) this demands p_0 <= c' l0^(-2(d-1)), "
            "a much stronger seed than a plain small-probability estimate.")
    if s.k0 < s.b:
        raise ScheduleError("k_0 ≥ b", s.k0, s.b)
    tr = ub_sequences(s, n_max)
    lp = _LD(log_p0)
    k0 = _LD(s.k0)
    viol = 0
    for i, row in enumerate(tr.rows):
        cf = -(k0 - _LD(s.b)) * _LD(2) ** i
        row["log_p_iter"] = float(lp)
        row["log_p_bound"] = float(cf)
        row["margin"] = float(cf - lp)
        ok = bool(lp <= cf)
        row["bound_ok"] = ok
        viol += not ok
        # (alpha_n - m_n)^2 written out so no cancellation enters
        gap2 = _LD(2) ** (i + 1) * (np.sqrt(_LD(i)) + np.sqrt(k0)) ** 2
        lp = _lae(2 * lp, -gap2)
    tr.log_p0 = float(log_p0)
    tr.violations = viol
    tr.verdicts.append({"name": "p_n <= exp(-(k0-b) 2^n)", "pass": viol == 0,
                        "violations": viol})
    return tr


def ub_final_chain(s: UBSchedule, trace: UBTrace | None = None, n_max: int = 30) -> dict:
    """log(2^d |Lambda_n| p_n) per n, plus the seed requirement comparison."""
    trace = trace or ub_sequences(s, n_max)
    d, l0 = s.d, s.l0
    led = s.constants
    c2 = led.get("c2")
    rows = []
    for r in trace.rows:
        n = r["n"]
        val = d * LN2 + 2 * (d - 1) * 2.0 ** n * math.log(c2 * l0) + r["log_p_bound"]
        rows.append({"n": n, "log_chain": val,
                     "display_reference": -2 * (d - 1) * (2.0 ** n - 1) * LN2,
                     "exact_log_embeddings": embedding_count_log(d, l0, n)})
    vals = np.array([r["log_chain"] for r in rows])
    decreasing = bool(np.all(np.diff(vals) < 0))
    # chain = A - B 2^n exactly, so it is unbounded below iff B > 0
    slope = (s.k0 - s.b) - 2 * (d - 1) * math.log(c2 * l0)
    eps = s.eps
    c5, c8, c0 = led.get("c5"), led.get("c8"), led.get("c0")
    lc = local_connectivity_params(d, eps, s.N, c0=c0, c8=c8)
    f_half = local_f(eps / 2.0, s.N)
    seed_log_bound = (math.log(2 * d) + (d - 1) * math.log(2 * s.L0 + 1)
                      - c5 * f_half * d * math.log(d))
    seed = {
        "log_requirement_remark": math.log(led.get("c_prime")) - 2 * (d - 1) * math.log(l0),
        "log_requirement_exact": -s.k0,
        "log_seed_bound": seed_log_bound,
        "c5_f_half": c5 * f_half,
        "c5_f_half_ge_6": c5 * f_half >= 6.0 * (1 - 1e-12),
        "seed_bound_meets_requirement": seed_log_bound <= -s.k0,
        **lc,
    }
    verdicts = [
        {"name": "chain strictly decreasing", "pass": decreasing},
        {"name": "chain -> -inf", "pass": decreasing and slope > 0, "slope": slope},
        {"name": "seed bound <= e^-k0", "pass": seed["seed_bound_meets_requirement"]},
    ]
    return {"rows": rows, "verdicts": verdicts, "seed": seed, "tends_to_zero": decreasing and slope > 0}


def local_connectivity_params(d: int, eps: float, N: int, c0: float = 1.0, c8: float = 1.0) -> dict:
    c6 = 2 * (math.ceil(c0) + 1)
    N0 = N // c6
    ell = min(1.0, math.sqrt(c8 * eps ** 2 / (4 * (1 + eps) * N0))) if N0 > 0 else 1.0
    return {"c6": c6, "N0": N0, "ell": ell,
            "log_C_d": (1 + eps) * N0 * math.floor(ell * d) * math.log(d),
            "f": local_f(eps, N)}


def _sphere_count(d: int, r: int) -> int:
    return (2 * r + 1) ** d - (2 * r - 1) ** d


def _log_sphere_count(d: int, r: int) -> float:
    """log((2r+1)^d - (2r-1)^d) without forming the integers."""
    return d * math.log(2 * r + 1) + math.log(-math.expm1(d * math.log((2 * r - 1) / (2 * r + 1))))


def embedding_count_log(d: int, l0: int, n: int) -> float:
    """Exact log |Lambda_{n,x}|: each internal node picks children on the
    l-inf spheres of radius l0 and 2 l0 of the next lattice."""
    per = _log_sphere_count(d, l0) + _log_sphere_count(d, 2 * l0)
    return (2 ** n - 1) * per


def enumerate_embeddings(d: int, L0: int, l0: int, n: int) -> int:
    """Brute-force count of proper embeddings of the depth-n tree (tiny cases)."""
    if n > 2 or _sphere_count(d, 2 * l0) ** (2 ** n - 1) > 10 ** 7:
        raise ValueError("enumeration only for n <= 2 and small l0, d")

    def sphere_pts(center, radius, step):
        out = []
        for off in itertools.product(range(-radius, radius + 1), repeat=d):
            if max(abs(o) for o in off) == radius:
                out.append(tuple(c + o * step for c, o in zip(center, off)))
        return out

    def count(root, depth):
        if depth == 0:
            return 1
        L = L0 * l0 ** depth
        step = L // l0
        a = sum(count(p, depth - 1) for p in sphere_pts(root, l0, step)
                if all(c % step == 0 for c in p) and max(abs(c - r) for c, r in zip(p, root)) == L)
        b = sum(count(p, depth - 1) for p in sphere_pts(root, 2 * l0, step)
                if all(c % step == 0 for c in p) and max(abs(c - r) for c, r in zip(p, root)) == 2 * L)
        return a * b

    return count((0,) * d, n)


def ub_sprinkling_threshold(eps: float, constants: ConstantsLedger | None = None,
                            d_max: int = 10 ** 6, n_max: int = 64, chunk: int = 50_000) -> dict:
    """Scan d with L0 = l0 = d and report the smallest d0 such that the
    sprinkling verdict holds for every d in [d0, d_max]."""
    led = constants or ConstantsLedger()
    N = ub_N(eps, led)
    c2, c3 = led.get("c2"), led.get("c3")
    target = math.log(eps / 2.0)
    last_fail = 2
    n = np.arange(n_max + 1, dtype=float)[None, :]
    for lo in range(3, d_max + 1, chunk):
        dv = np.arange(lo, min(lo + chunk, d_max + 1), dtype=float)[:, None]
        k0 = B_CONST + LN2 + 2 * (dv - 1) * np.log(c2 * dv)
        m = np.sqrt(n * LN2 + dv * np.log(3.0 * (N + 1) * dv))
        alpha = m + 2.0 ** ((n + 1) / 2) * (np.sqrt(n) + np.sqrt(k0))
        li = np.log(alpha) + (dv - 2) * np.log(c3 * (np.sqrt(dv) + N)) + (n + 1) * (LN2 - (dv - 2) * np.log(dv))
        tot = np.logaddexp.reduce(li, axis=1)
        log_rho = (0.5 * LN2 + np.log1p(1 / (np.sqrt(n_max) + np.sqrt(k0[:, 0]))) + LN2
                   - (dv[:, 0] - 2) * np.log(dv[:, 0]))
        with np.errstate(divide="ignore", invalid="ignore"):
            tail = li[:, -1] + log_rho - np.log(-np.expm1(log_rho))
            tot = np.where(log_rho < 0, np.logaddexp(tot, tail), np.inf)
        bad = np.nonzero(~(tot <= target))[0]
        if len(bad):
            last_fail = int(dv[bad[-1], 0])
    threshold = last_fail + 1
    return {"eps": eps, "N": N, "threshold": threshold, "d_max": d_max,
            "scanned": [3, d_max], "banner": led.banner(["c2", "c3", "c4_eps", "c5"])}


# ---------------------------------------------------------------------------
# lower-bound scheme


def iroot_ceil(x: int, k: int) -> int:
    """ceil(x^(1/k)) for a positive integer x, exact (integer Newton)."""
    if x <= 1:
        return int(x)
    r = 1 << ((x.bit_length() + k - 1) // k)  # r^k >= x
    while True:
        nxt = ((k - 1) * r + x // r ** (k - 1)) // k
        if nxt >= r:
            break
        r = nxt
    # r = floor root
    return r if r ** k == x else r + 1


@dataclass
class LBSchedule:
    d: int
    eps: float
    a: float
    L0: int
    L: list[int]
    l: list[int]
    constants: ConstantsLedger
    k1_mode: str = "exact"
    notes: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"d": self.d, "eps": self.eps, "a": self.a, "L0": self.L0, "k1_mode": self.k1_mode,
                "L": [str(x) if x > 2 ** 53 else x for x in self.L[:6]], "notes": list(self.notes)}


@dataclass
class LBTrace:
    schedule: LBSchedule
    rows: list[dict]
    verdicts: list[dict]
    preconditions_hold: bool
    propagation_holds: bool | None = None
    duality: dict | None = None


def lb_schedule(d: int, eps: float, constants: ConstantsLedger | None = None, *,
                L0: int | None = None, n_max: int = 40, k1_mode: str = "exact") -> LBSchedule:
    """Scales L_{n+1} = l_n L_n with l_n = 20 ceil(L_n^(1/10)), L0 = ceil((c0/c1') d)."""
    if d < 3:
        raise ValueError("d must be >= 3")
    if k1_mode not in ("exact", "bound"):
        raise ValueError("k1_mode must be 'exact' or 'bound'")
    led = constants or ConstantsLedger()
    if L0 is None:
        L0 = math.ceil(led.get("c0") / led.get("c1_prime") * d * (1 - 1e-15))
    L0 = int(L0)
    if L0 < 2:
        raise ScheduleError("L_0 ≥ 2", L0, 2)
    L, l = [L0], []
    for _ in range(n_max + 2):
        ln = 20 * iroot_ceil(L[-1], 10)
        l.append(ln)
        L.append(L[-1] * ln)
    s = LBSchedule(d, float(eps), 0.1, L0, L, l, led, k1_mode)
    if led.banner(["c", "c0", "c0_prime", "c1_prime"]):
        s.notes.append(PLACEHOLDER_BANNER)
    return s


def k1_size(Ln: int, d: int, exact: bool = True, c: float = 1.0) -> float:
    """|K_1|: planar (6L+1)^2 box grown by one l1 step, times 2^d cube sites."""
    if exact:
        side = 6 * Ln + 1
        return float(side * side + 4 * side) * 2.0 ** d
    return c * float(Ln) ** 2 * 2.0 ** d


def _log_k1(Ln: int, d: int, exact: bool, c: float) -> float:
    if exact:
        side = 6 * Ln + 1
        return math.log(side * side + 4 * side) + d * LN2
    return math.log(c) + 2 * math.log(Ln) + d * LN2


def lb_propagate(s: LBSchedule, log_q0: float | None = None, n_max: int = 40,
                 p_fail: float | None = None) -> LBTrace:
    """Evaluate beta_n, delta_n, eps_n and iterate
    q_{n+1} <= c0' l_n^2 (q_n^2 + eps_n) from q_0 (default l_0^-3)."""
    if n_max + 1 >= len(s.l):
        raise ValueError("schedule too short for n_max")
    led = s.constants
    d = s.d
    c, c0p = led.get("c"), led.get("c0_prime")
    c1 = btis_constant()
    exact = s.k1_mode == "exact"
    log_l = [math.log(x) for x in s.l]
    if log_q0 is None:
        log_q0 = -3 * log_l[0]
    rows = []
    lq = _LD(log_q0)
    prop_ok = True
    for n in range(n_max + 1):
        Ln = s.L[n]
        logK1 = _log_k1(Ln, d, exact, c)
        log_btis = math.log(2 * c0p) + 2 * log_l[n] + 3 * log_l[n + 1]
        beta = c1 * (math.sqrt(log_btis) + math.sqrt(logK1))
        log_delta = (LN2 + math.log(c) + math.log(beta) + 2 * math.log(Ln) + d * LN2
                     - (d / 2 - 2) * log_l[n])
        log_eps_n = -log_btis
        cond = math.log(2 * c0p) - 4 * log_l[n] + 3 * log_l[n + 1]
        qb = -3 * log_l[n]
        ok = bool(lq <= _LD(qb))
        prop_ok &= ok
        rows.append({"n": n, "L": Ln if Ln < 2 ** 53 else None, "l": s.l[n] if s.l[n] < 2 ** 53 else None,
                     "log_L": math.log(Ln), "beta": beta, "log_delta": log_delta,
                     "delta": math.exp(log_delta) if log_delta < 700 else math.inf, "log_eps": log_eps_n,
                     "log_scale_condition": cond, "log_q": float(lq),
                     "log_q_bound": qb, "q_margin": qb - float(lq), "q_ok": ok})
        lq = _LD(math.log(c0p) + 2 * log_l[n]) + _lae(2 * lq, log_eps_n)
    log_deltas = np.array([r["log_delta"] for r in rows])
    with np.errstate(over="ignore"):
        sum_delta = float(np.exp(np.logaddexp.reduce(log_deltas)))
    dec = np.diff(log_deltas[1:])
    conds = [r["log_scale_condition"] <= 0 for r in rows]
    seed_ok = log_q0 <= -3 * log_l[0]
    pre = bool(sum_delta <= s.eps and all(conds) and seed_ok)
    verdicts = [
        {"name": "sum delta_n <= eps", "pass": sum_delta <= s.eps, "value": sum_delta},
        {"name": "2 c0' l_n^-4 l_{n+1}^3 <= 1", "pass": all(conds),
         "first_failure": next((i for i, ok in enumerate(conds) if not ok), None)},
        {"name": "q_0 <= l_0^-3", "pass": bool(seed_ok)},
        {"name": "q_n <= l_n^-3 (propagated)", "pass": prop_ok},
        {"name": "delta_n decreasing for n >= 1", "pass": bool(np.all(dec < 0)),
         "max_log_ratio": float(dec.max()) if len(dec) else None},
        {"name": "preconditions imply propagation", "pass": (not pre) or prop_ok},
    ]
    inv_l2 = sum(1.0 / (x * x) for x in s.l[: n_max + 1])
    tr = LBTrace(s, rows, verdicts, pre, prop_ok)
    tr.duality = duality_chain(tr, p_fail)
    tr.duality["sum_inv_l2"] = inv_l2
    return tr


def duality_chain(trace: LBTrace, p_fail: float | None) -> dict:
    """c L0^2 P[bad] + 3 sum l_n q_n, compared with 1."""
    s = trace.schedule
    c = s.constants.get("c")
    lterms = [math.log(3) + math.log(s.l[r["n"]]) + r["log_q"] for r in trace.rows]
    series = float(np.exp(np.logaddexp.reduce(lterms)))
    out = {"series": series, "p_fail": p_fail}
    if p_fail is not None:
        total = c * s.L0 ** 2 * p_fail + series
        out.update(total=total)
        out["pass"] = total < 1
    return out


# ---------------------------------------------------------------------------
# reports


def report(obj) -> dict:
    """JSON-ready {schedule, constants, rows, verdicts} for a trace."""
    s = obj.schedule
    led = s.constants
    out = {"schedule": s.as_dict(), "constants": led.snapshot(), "rows": obj.rows,
           "verdicts": obj.verdicts, "banner": led.banner()}
    if isinstance(obj, LBTrace):
        out["duality"] = obj.duality
        out["preconditions_hold"] = obj.preconditions_hold
    return out


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
