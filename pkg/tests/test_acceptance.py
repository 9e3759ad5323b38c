"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal
summary, or run with -s to see them inline)."""

import math
import time

import numpy as np

from gffperc.constants import ConstantsLedger
from gffperc.gff import (box_markov_model, covariance_model, g0, gaussian_tail, gaussian_tail_bounds,
                         sample_box_markov, sample_dense, sample_sequential, sequential_plan)
from gffperc.hypercube import (GiantUniquenessError, alpha_coefficients, chernoff_check, embed_tree,
                               good_event_mc, gw_domination_check, gw_params)
from gffperc.lattice import Region
from gffperc.levelset import critical_levels, density_at_h_as, flip_identity_check, level_estimates, make_geometry
from gffperc.potential import (GreenEvaluator, hitting_prob, mc_green, mc_hitting, mc_killed_identity,
                               potential_table, quad_value)
from gffperc.renorm import (B_CONST, lb_propagate, lb_schedule, ub_final_chain, ub_propagate, ub_schedule,
                            ub_sequences, ub_sprinkling_threshold)

ONES = {"c": 1, "c0": 1, "c2": 1, "c3": 1, "c4_eps": 1, "c5": 1, "c0_prime": 1, "c1_prime": 1}


def test_criterion_01_green_mc_vs_quadrature(acceptance):
    mc_green(3, (0, 0, 0), 1000, 1)  # compile outside the timed run
    t = time.perf_counter()
    mc = mc_green(3, (0, 0, 0), 10**7, 2024)
    elapsed = time.perf_counter() - t
    q = quad_value(3, (0, 0, 0))
    diff = abs(mc.value - q)
    ok = diff <= 5e-4 and abs(q - 1.5164) <= 5e-4 and abs(mc.value - 1.5164) <= 5e-4 and elapsed < 60
    acceptance(1, ok, f"quad={q:.10f} mc={mc.value:.6f} (+-{mc.error:.1e}) |diff|={diff:.2e} "
                      f"runtime={elapsed:.1f}s")
    assert ok


def test_criterion_02_g0_expansion(acceptance):
    res = {d: abs(g0(d) - 1 - 1 / (2 * d)) for d in (10, 20, 50, 100)}
    ok = all(r <= 2 / d**2 for d, r in res.items()) and res[100] < res[10]
    acceptance(2, ok, " ".join(f"d={d}:{r:.3e}<={2 / d**2:.1e}" for d, r in res.items()))
    assert ok


def _random_instance(rs, d):
    m = int(rs.integers(1, 6))
    pts = set()
    while len(pts) < m:
        pts.add(tuple(int(v) for v in rs.integers(-2, 3, size=d)))
    K = Region(sorted(pts))
    x = K.coords[rs.integers(m)]
    y = K.coords[rs.integers(m)]
    while True:
        z = tuple(int(v) for v in rs.integers(-4, 5, size=d))
        if z not in pts:
            break
    return K, x, y, z


def test_criterion_03_potential_identities(acceptance):
    rs = np.random.default_rng(3)
    worst_k = worst_h = 0.0
    fails = []
    for i in range(20):
        d = int(rs.choice([3, 4, 5]))
        K, x, y, z = _random_instance(rs, d)
        ev = GreenEvaluator(d)
        # g(x, y) = g_K(x, y) + E_x[g(X_exit, y)]
        est, se = mc_killed_identity(ev, K, x, y, 50_000, 100 + i)
        zk = abs(est - quad_value(d, x - y)) / (se + 1e-12 / 3)
        # P_z[H_K < inf] = sum_y g(z, y) e_K(y)
        table = potential_table(ev, K)
        h = mc_hitting(d, K, z, 30_000, 200 + i)
        zh = abs(h.value[0] - hitting_prob(ev, z, K, table)) / h.se[0]
        worst_k, worst_h = max(worst_k, zk), max(worst_h, zh)
        if zk > 3 or zh > 3 or np.any(table.eq_measure < 0):
            fails.append(i)
    # capacity: nested pairs and unions, exact up to rounding of the solves
    cap_bad = 0
    ev3 = GreenEvaluator(3)
    for _ in range(50):
        A, _, _, _ = _random_instance(rs, 3)
        B, _, _, _ = _random_instance(rs, 3)
        U = A.union(B)
        ca, cb, cu = (potential_table(ev3, R).capacity for R in (A, B, U))
        tol = 1e-12 * cu
        if not (ca <= cu + tol and cb <= cu + tol and cu <= ca + cb + tol):
            cap_bad += 1
    ok = not fails and cap_bad == 0
    acceptance(3, ok, f"max z killed={worst_k:.2f} hitting={worst_h:.2f} failing instances={fails} "
                      f"capacity violations={cap_bad}/50")
    assert ok


def _moments(vals):
    n = vals.shape[0]
    iu = np.triu_indices(vals.shape[1])
    mean = np.empty(len(iu[0]))
    se = np.empty(len(iu[0]))
    for k, (i, j) in enumerate(zip(*iu)):
        p = vals[:, i] * vals[:, j]
        mean[k] = p.mean()
        se[k] = p.std(ddof=1) / math.sqrt(n)
    return mean, se


def test_criterion_04_sampler_equivalence(acceptance):
    t = time.perf_counter()
    n = 200_000
    model = box_markov_model(3, 1)
    reg = model.box
    dense = sample_dense(covariance_model(reg), n, 41).values
    box = sample_box_markov(model, n, 42).values
    rev = np.arange(len(reg))[::-1]
    shuffled = np.random.default_rng(7).permutation(len(reg))
    stats = {"dense": _moments(dense), "box": _moments(box)}
    for name, order in (("seq_rev", rev), ("seq_perm", shuffled)):
        plan = sequential_plan(reg, order)
        stats[name] = _moments(sample_sequential(reg, order, 43, n, plan=plan).values)
    pairs = [("dense", "box"), ("dense", "seq_rev"), ("box", "seq_rev"), ("dense", "seq_perm"),
             ("box", "seq_perm")]
    worst = {}
    for a, b in pairs:
        (ma, sa), (mb, sb) = stats[a], stats[b]
        worst[f"{a}/{b}"] = float(np.max(np.abs(ma - mb) / np.sqrt(sa**2 + sb**2)))
    elapsed = time.perf_counter() - t
    ok = all(v <= 4 for v in worst.values()) and elapsed < 300
    acceptance(4, ok, "max z " + " ".join(f"{k}={v:.2f}" for k, v in worst.items())
               + f" entries={len(stats['dense'][0])} runtime={elapsed:.1f}s")
    assert ok


def test_criterion_05_gaussian_tail_bracket(acceptance):
    rows = []
    ok = True
    for h in (1, 1.5, 2, 3, 5):
        lo, hi = gaussian_tail_bounds(h)
        p = gaussian_tail(h)
        ok &= lo <= p <= hi
        rows.append(f"h={h}:{lo:.4e}<={p:.4e}<={hi:.4e}")
    acceptance(5, ok, " ".join(rows))
    assert ok


def test_criterion_06_ub_recursion(acceptance):
    t = time.perf_counter()
    viol = 0
    for k0 in np.linspace(B_CONST + 0.1, B_CONST + 50, 20):
        s = ub_schedule(3, 1.0, L0=3, l0=3, N=1, k0=float(k0), validate=False, compute_h0=False)
        viol += ub_propagate(s, -float(k0), 30).violations
    elapsed = time.perf_counter() - t
    decreasing = True
    for c2, c3 in ((1, 1), (2, 1), (10, 7), (1.5, 100)):
        led = ConstantsLedger().update({"c2": c2, "c3": c3, "c5": 1})
        vals = [r["log_chain"] for r in ub_final_chain(ub_schedule(10**5, 1.0, led), n_max=30)["rows"]]
        decreasing &= all(b < a for a, b in zip(vals, vals[1:]))
    ok = viol == 0 and decreasing and elapsed < 1.0
    acceptance(6, ok, f"violations={viol} over 20 k0 x 31 steps, final chain decreasing={decreasing}, "
                      f"recursion runtime={elapsed:.3f}s")
    assert ok


def test_criterion_07_sprinkling_threshold(acceptance):
    led = ConstantsLedger().update(ONES)
    res = ub_sprinkling_threshold(1.0, led)
    thr = res["threshold"]

    def verdict(d):
        s = ub_schedule(d, 1.0, led, validate=False, compute_h0=False)
        v = next(v for v in ub_sequences(s, 64).verdicts if v["name"] == "h_inf - h_0 <= eps/2")
        return v["pass"]

    at, above = verdict(thr), verdict(thr + 1)
    ok = at and above and thr <= res["d_max"]
    acceptance(7, ok, f"threshold d={thr} (scan to {res['d_max']}), recheck at thr={at} thr+1={above}")
    assert ok


def test_criterion_08_lb_recursion(acceptance):
    led = ConstantsLedger().update(ONES)
    rows = []
    mismatch = 0
    for d in (40, 60, 100):
        tr = lb_propagate(lb_schedule(d, 1.0, led), n_max=40)
        verdict = {v["name"]: v["pass"] for v in tr.verdicts}
        if tr.preconditions_hold and not (verdict["sum delta_n <= eps"] and tr.propagation_holds):
            mismatch += 1
        rows.append(f"d={d}:pre={tr.preconditions_hold},sum_delta={verdict['sum delta_n <= eps']},"
                    f"prop={tr.propagation_holds}")
    ok = mismatch == 0
    acceptance(8, ok, f"mismatches={mismatch} " + " ".join(rows))
    assert ok


def test_criterion_09_gw_domination(acceptance):
    t = time.perf_counter()
    tree = embed_tree(15, 3, 4)
    a = alpha_coefficients(tree)
    gw = gw_params(15, 0.3, threshold=1, depth=3, branching=4)
    res = gw_domination_check(tree, gw, 10_000, 9, alpha=a)
    rs = np.random.default_rng(9)
    ch_bad = 0
    for _ in range(100):
        n = int(rs.integers(1, 2000))
        exact, bound = chernoff_check(n, float(rs.uniform(0.001, 0.999)), float(rs.uniform(0.01, 0.99)))
        ch_bad += exact > bound
    elapsed = time.perf_counter() - t
    ok = a.max_sum <= 2 and res["violations"] == 0 and ch_bad == 0 and elapsed < 600
    acceptance(9, ok, f"max alpha row sum={a.max_sum:.6f} violations={res['violations']}/"
                      f"{res['premises']} premises, chernoff failures={ch_bad}/100 runtime={elapsed:.1f}s")
    assert ok


def test_criterion_10_monotone_and_flip(acceptance):
    hs = np.linspace(-2, 2, 41)
    geoms = [("box_to_sphere", 1), ("annulus", 1), ("faces", 2)]
    mono = True
    flips = []
    for kind, scale in geoms:
        levels = critical_levels(make_geometry(3, kind, scale), 2000, 5)
        vals = [e.value for e in level_estimates(levels, hs, 5)]
        mono &= all(a >= b for a, b in zip(vals, vals[1:]))
        flips.append(flip_identity_check(3, kind, scale, 0.3, 20_000, 10))
    ok = mono and all(f["within_3se"] for f in flips)
    acceptance(10, ok, f"CRN monotone={mono} flip |diff|/se: "
               + " ".join(f"{f['geometry']}={abs(f['difference']) / f['joint_se']:.2f}" for f in flips))
    assert ok


def test_criterion_11_density_trend(acceptance):
    bad = [d for d in range(3, 101) if not d**-1.6 <= density_at_h_as(d) <= d**-0.9]
    ok = not bad
    acceptance(11, ok, f"d=3..100 outside [d^-1.6, d^-0.9]: {bad}; "
                       f"P(d=3)={density_at_h_as(3):.3e} P(d=100)={density_at_h_as(100):.3e}")
    assert ok


def test_criterion_12_good_event(acceptance):
    t = time.perf_counter()
    hs = [-1e9, -1.0, -0.5, 0.0, 0.25, 0.5, 1.0, 1e9]
    try:
        res = good_event_mc(9, hs, 500, 12)
        unique_ok = res.uniqueness_failures == 0
    except GiantUniquenessError as exc:
        acceptance(12, False, f"giant uniqueness fired: {exc}")
        raise
    elapsed = time.perf_counter() - t
    vals = [e.value for e in res.estimates]
    ok = (all(a >= b for a, b in zip(vals, vals[1:])) and vals[0] == 1.0 and vals[-1] == 0.0
          and unique_ok and elapsed < 900)
    acceptance(12, ok, "P(G) " + " ".join(f"{h:g}:{v:.3f}" for h, v in zip(hs, vals))
               + f" runtime={elapsed:.1f}s")
    assert ok

