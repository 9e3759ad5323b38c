import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from gffperc import rng
from gffperc.gff import (box_markov_model, btis_constant, conditional_split, consistency_residual,
                         covariance_model, encode_binary, g0, gaussian_tail, gaussian_tail_bounds,
                         h_as, harmonic_extension, max_field_bounds, read_binary, replica_normals,
                         run_sequential, sample_box_markov, sample_dense, sample_sequential,
                         sequential_plan, tail_density, write_binary, write_csv)
from gffperc.lattice import CapExceeded, Region, ball
from gffperc.potential import green_matrix, hitting_prob, GreenEvaluator


def test_replica_rows_independent_of_batching():
    a = replica_normals(7, 1, np.arange(10), 5)
    b = replica_normals(7, 1, np.array([6]), 5)
    assert np.array_equal(a[6], b[0])
    assert not np.array_equal(replica_normals(8, 1, [6], 5), b)


def test_normals_are_standard():
    z = rng.normals(rng.stream_key(3, 4), np.arange(200_000, dtype=np.uint64))
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


def test_dense_sampler_start_offset():
    model = covariance_model(ball(3, None, 1, "linf"))
    full = sample_dense(model, 8, 11)
    part = sample_dense(model, 3, 11, start=5)
    # normals are bit-identical per replica; the matrix product may differ in the last ulp
    assert np.allclose(full.values[5:], part.values, rtol=1e-13, atol=1e-14)
    assert full[2].provenance == ("dense", 11, 2)


def test_dense_cap():
    with pytest.raises(CapExceeded):
        covariance_model(ball(3, None, 2, "linf"), cap=100)


@pytest.mark.parametrize("ordering", [None, "reverse", "shuffle"])
def test_sequential_plan_reproduces_covariance(ordering):
    """(I - P)^-1 diag(var) (I - P)^-T equals the Green matrix exactly."""
    reg = ball(3, None, 1, "linf")
    n = len(reg)
    order = {None: None, "reverse": np.arange(n)[::-1],
             "shuffle": np.random.default_rng(2).permutation(n)}[ordering]
    plan = sequential_plan(reg, order)
    A = np.linalg.inv(np.eye(n) - plan.coeffs)
    C = A @ np.diag(plan.variances) @ A.T
    G = green_matrix(3, reg)
    assert np.allclose(C, G[np.ix_(plan.ordering, plan.ordering)], atol=1e-12)


def test_sequential_coeffs_are_hitting_distributions():
    reg = Region([(0, 0, 0), (1, 0, 0), (1, 1, 0), (3, 0, 1), (0, 2, 0)])
    plan = sequential_plan(reg)
    ev = GreenEvaluator(3)
    for k in range(1, len(reg)):
        total = plan.coeffs[k, :k].sum()
        assert total == pytest.approx(hitting_prob(ev, reg[k], reg.subset(np.arange(k))), abs=1e-12)
        assert np.all(plan.coeffs[k, :k] >= -1e-14)


def test_run_sequential_is_triangular_solve():
    reg = ball(3, None, 1, "l1")
    plan = sequential_plan(reg)
    psi = np.random.default_rng(0).standard_normal((4, len(reg)))
    phi = run_sequential(plan, psi)
    assert np.allclose((np.eye(len(reg)) - plan.coeffs) @ phi.T, psi.T)


def test_sequential_sampler_ordering_check():
    with pytest.raises(ValueError):
        sample_sequential(ball(3, None, 1, "l1"), [0, 0, 1, 2, 3, 4, 5], 1)


def test_box_markov_implied_covariance_exact():
    """Boundary block from the dense factor, interior from the harmonic
    extension plus the killed field: the implied covariance is the Green matrix."""
    model = box_markov_model(3, 2)
    G = green_matrix(3, model.box)
    e, b = model.edge_idx, model.bulk_idx
    H = harmonic_extension(model, np.eye(len(e)))  # row j: extension of the j-th unit boundary vector
    Ge = model.edge_factor @ model.edge_factor.T
    killed = model.bulk.solve(np.eye(len(b)))
    C_bb = H.T @ Ge @ H + killed
    assert np.allclose(Ge, G[np.ix_(e, e)], atol=1e-10)
    assert np.allclose(C_bb, G[np.ix_(b, b)], atol=1e-10)


def test_box_markov_sample_shape_and_determinism():
    model = box_markov_model(3, 2)
    a = sample_box_markov(model, 5, 3)
    b = sample_box_markov(model, 2, 3, start=3)
    assert a.values.shape == (5, 125)
    assert np.allclose(a.values[3:], b.values)


def test_conditional_split_consistency():
    K = Region([(0, 0, 0), (2, 0, 0)])
    T = Region([(1, 0, 0), (1, 1, 0), (0, 0, 0)])
    split = conditional_split(K, T)
    assert consistency_residual(split) < 1e-10
    # a target inside K is copied from K
    assert split.shift_coeffs[2].tolist() == [1.0, 0.0]
    assert np.all(np.linalg.eigvalsh(split.killed_cov) > -1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 30.0))
def test_gaussian_tail_inside_bounds(h):
    lo, hi = gaussian_tail_bounds(h)
    t = gaussian_tail(h)
    assert lo <= t <= hi


def test_tail_density_uses_g0():
    assert tail_density(3, 1.0) == pytest.approx(0.5 * erfc(1 / math.sqrt(2 * g0(3))), rel=1e-14)


def test_h_as_and_btis():
    assert h_as(10) == pytest.approx(math.sqrt(2 * g0(10) * math.log(10)))
    assert h_as(10, 0.1) == pytest.approx(1.1 * h_as(10))
    assert btis_constant() == pytest.approx(math.sqrt(2 * g0(3)))
    with pytest.raises(ValueError):
        h_as(2)


def test_max_field_bounds():
    K = ball(3, None, 1, "linf")
    m = max_field_bounds(K, 5.0)
    assert m.tail == pytest.approx(math.exp(-(5 - math.sqrt(math.log(27))) ** 2))
    assert max_field_bounds(K, 0.1).tail is None


def test_binary_round_trip(tmp_path):
    model = covariance_model(ball(3, None, 1, "l1"))
    s = sample_dense(model, 3, 9)[2]
    p = tmp_path / "f.bin"
    write_binary(s, p)
    back = read_binary(p)
    assert np.array_equal(back.values, s.values)
    assert np.array_equal(back.region.coords, s.region.coords)
    assert back.provenance == ("file", 9, 2)
    assert p.read_bytes() == encode_binary(s)
    write_csv(s, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_bytes().split(b"\r\n")
    assert lines[0] == b"x1,x2,x3,value" and len(lines) == 7 + 2
