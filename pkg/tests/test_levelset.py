import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gffperc.gff import FieldSample, covariance_model, h_as, sample_dense, tail_density
from gffperc.lattice import CapExceeded, Region, ball
from gffperc.levelset import (CrossingQuery, FieldSource, _bracket, critical_levels, crossing,
                              density_at_h_as, excursion, flip_identity_check, h_doublestar_proxy,
                              level_estimates, local_connectivity, make_geometry, mc_crossing_prob,
                              open_components, wilson)


@pytest.mark.parametrize("kind,scale", [("box_to_sphere", 1), ("annulus", 1), ("point_to_l1_sphere", 3),
                                        ("faces", 2)])
def test_critical_level_agrees_with_direct_crossing(kind, scale):
    """The union-find sweep level and a direct BFS crossing test agree
    at every level of a grid (two independent routes)."""
    geom = make_geometry(3, kind, scale)
    src = FieldSource(geom)
    levels = critical_levels(geom, 30, 5, source=src)
    batch = next(src.batches(30, 5))
    q = CrossingQuery(geom.K, geom.Kp)
    for r in range(30):
        for h in (-1.0, -0.3, 0.0, 0.4, 1.0, levels[r]):
            want = crossing(excursion(batch[r], h), q)
            assert want == (levels[r] >= h), (r, h, levels[r])


def test_crossing_requires_subsets():
    reg = ball(3, None, 1, "l1")
    s = sample_dense(covariance_model(reg), 1, 0)[0]
    with pytest.raises(ValueError):
        crossing(excursion(s, 0.0), CrossingQuery(Region([(5, 5, 5)]), reg))


def test_open_components_labels():
    reg = Region([(0, 0, 0), (1, 0, 0), (3, 0, 0)])
    s = FieldSample(reg, np.array([1.0, 1.0, 1.0]), ("x", 0, 0))
    labels, sizes = open_components(excursion(s, 0.5))
    assert labels[0] == labels[1] != labels[2]
    assert sorted(sizes.tolist()) == [1, 2]
    labels, sizes = open_components(excursion(s, 2.0))
    assert np.all(labels == -1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=10, unique=True))
def test_crn_estimates_monotone(h_list):
    levels = critical_levels(make_geometry(3, "box_to_sphere", 1), 200, 3)
    hs = sorted(h_list)
    vals = [e.value for e in level_estimates(levels, hs, 3)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_mc_crossing_prob_rows():
    rows = mc_crossing_prob(3, "box_to_sphere", 1, [-10.0, 0.0, 10.0], 300, 1)
    assert [r["estimate"] for r in rows][0] == 1.0
    assert rows[-1]["estimate"] == 0.0
    assert rows == mc_crossing_prob(3, "box_to_sphere", 1, [-10.0, 0.0, 10.0], 300, 1)


def test_site_geometry_is_tail_probability():
    """A single-site crossing is {phi_0 >= h}; its frequency matches erfc."""
    levels = critical_levels(make_geometry(3, "site", 0), 40_000, 8)
    est = level_estimates(levels, [0.7], 8)[0]
    assert abs(est.value - tail_density(3, 0.7)) <= 4 * est.se


def test_wilson_interval():
    e = wilson(0, 100)
    assert e.lo == 0.0 and e.hi > 0
    e = wilson(50, 100)
    assert e.lo < 0.5 < e.hi
    assert e.half_width == pytest.approx((e.hi - e.lo) / 2)


def test_flip_identity_small():
    r = flip_identity_check(3, "box_to_sphere", 1, 0.3, 4000, 2)
    assert r["within_3se"]


def test_bracket_logic():
    table = {1: [0.9, 0.6, 0.2], 2: [0.95, 0.4, 0.1]}
    assert _bracket(table, [0.0, 1.0, 2.0], 0.5) == (0.0, 2.0)
    assert _bracket({1: [0.9, 0.8]}, [0.0, 1.0], 0.5) == (None, None)
    assert _bracket({1: [0.1]}, [0.0], 0.5) == (None, 0.0)


def test_h_doublestar_proxy_labelled():
    br = h_doublestar_proxy(3, [1], 0.5, [-2.0, 0.0, 2.0], 300, 1)
    assert br.label.startswith("finite-size proxy")
    assert br.resolved and br.h_lo < br.h_hi


def test_local_connectivity_reports_shape_only():
    out = local_connectivity(3, 3, [0.0, 1.0], 200, 4, eps=0.5)
    assert out["bound_shape"]["note"] == "qualitative, not asserted"
    assert out["rows"][0]["estimate"] >= out["rows"][1]["estimate"]


def test_box_markov_source_for_large_box():
    geom = make_geometry(3, "box_to_sphere", 2)
    src = FieldSource(geom, cap=500)
    assert src.kind == "box_markov"
    with pytest.raises(CapExceeded):
        FieldSource(make_geometry(3, "point_to_l1_sphere", 12), cap=100)


def test_density_at_h_as():
    assert density_at_h_as(10) == pytest.approx(0.5 * math.erfc(h_as(10) / math.sqrt(2 * 1.0595437478882)), rel=1e-9)
