from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_game.errors import SolverBlowUp
from sparse_game.graph import Graph, build_chain, build_lattice, nkh_table
from sparse_game.lq_openloop import (
    BoundaryData, LqGameSpec, assemble_F, dv_decay_report, gaussian_flow, perturbation_experiment,
    reduction_experiment, riccati_solve, time_average, w2_gaussian, w2_gaussian_sq,
)


def bench(n=21, mu=0.3, **kw):
    return LqGameSpec.build(build_chain(n), mu=mu, init_mean=[(i % 3) - 1 for i in range(n)], **kw)


def test_assemble_F_examples():
    spec = LqGameSpec.build(build_chain(3, cyclic=False), mu=0.5)
    np.testing.assert_array_equal(assemble_F(spec), [[1, -.5, 0], [-.5, 2, -.5], [0, -.5, 1]])
    assert np.all(assemble_F(LqGameSpec.build(Graph.from_lists([[]]))) == 0)
    F0 = assemble_F(LqGameSpec.build(build_chain(5), mu=0.0, Q=2.0))
    np.testing.assert_array_equal(F0, 4 * np.eye(5))


def test_F_matches_finite_differences():
    rng = np.random.default_rng(0)
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    spec = LqGameSpec.build(build_lattice(2), d=2, Q=Q, mu=0.4)
    F = assemble_F(spec)
    for _ in range(5):
        x = rng.standard_normal((spec.n, 2))
        for i in range(spec.n):
            fd = np.zeros(2)
            for c in range(2):
                e = np.zeros_like(x)
                e[i, c] = 1e-5
                fd[c] = (spec.f_value(i, x + e) - spec.f_value(i, x - e)) / 2e-5
            exact = (F @ x.ravel())[2 * i:2 * i + 2]
            assert np.abs(fd - exact).max() <= 1e-8 * max(1.0, np.abs(exact).max())


def test_single_player_trivial():
    spec = LqGameSpec.build(Graph.from_lists([[]]))
    sol = riccati_solve(spec, steps=50)
    assert np.all(sol.P == 0) and np.all(sol.q == 0)


@pytest.mark.parametrize("Q,n_i", [(1.0, 2), (2.5, 2)])
def test_scalar_closed_form(Q, n_i):
    spec = LqGameSpec.build(build_chain(5), mu=0.0, Q=Q)
    sol = riccati_solve(spec, steps=1000)
    c = np.sqrt(n_i * Q)
    np.testing.assert_allclose(sol.block(0, 0)[:, 0, 0], c * np.tanh(c * (spec.T - sol.t)), atol=1e-8, rtol=0)
    assert np.abs(sol.P[:, 0, 1:]).max() == 0


def test_fourth_order_convergence():
    spec = LqGameSpec.build(build_chain(2, cyclic=False), mu=0.5, G=0.5)
    ref = riccati_solve(spec, steps=4000).P[0]
    e1 = np.abs(riccati_solve(spec, steps=20).P[0] - ref).max()
    e2 = np.abs(riccati_solve(spec, steps=40).P[0] - ref).max()
    assert 12 < e1 / e2 < 20


def test_symmetry_undirected():
    sol = riccati_solve(bench(9), steps=400)
    assert np.abs(sol.P - np.swapaxes(sol.P, 1, 2)).max() <= 1e-10


def test_sparsity_disconnected():
    g = Graph.from_lists([[1], [0], [3], [2]])
    sol = riccati_solve(LqGameSpec.build(g, mu=0.5), steps=200)
    assert np.all(sol.P[:, :2, 2:] == 0) and np.all(sol.P[:, 2:, :2] == 0)
    assert np.all(sol.P[-1] == np.diag(np.diag(sol.P[-1])))


def test_blowup_guard():
    # a negative-definite terminal cost is not allowed, so force blow-up via huge horizon and tiny kappa
    spec = LqGameSpec.build(build_chain(3), mu=0.9, kappa=1.0, Q=1.0)
    object.__setattr__(spec, "G", -50.0 * np.ones((3, 1, 1)))
    with pytest.raises(SolverBlowUp):
        riccati_solve(spec, steps=200)


def test_pure_diffusion_flow():
    spec = LqGameSpec.build(Graph.from_lists([[], []]), sigma=0.7, init_mean=[1.0, -2.0], init_cov=0.3)
    sol = riccati_solve(spec, steps=100)
    fl = gaussian_flow(spec, sol)
    np.testing.assert_allclose(fl.mean, np.broadcast_to([1.0, -2.0], fl.mean.shape))
    np.testing.assert_allclose(fl.cov[:, 0, 0], 0.3 + 0.49 * sol.t, atol=1e-13)


def test_deterministic_flow_has_zero_covariance():
    spec = bench(7, sigma=0.0, init_cov=0.0)
    fl = gaussian_flow(spec, riccati_solve(spec, steps=200))
    assert np.abs(fl.cov).max() == 0


def test_w2_examples():
    assert w2_gaussian_sq(0.0, 1.0, 0.0, 1.0) == 0
    assert w2_gaussian_sq(0.0, 1.0, 1.0, 4.0) == pytest.approx(2.0)
    S1, S2 = np.diag([1.0, 4.0]), np.diag([9.0, 0.25])
    ref = w2_gaussian_sq(0, 1, 1, 9) + w2_gaussian_sq(0, 4, 0, 0.25)
    assert w2_gaussian_sq([0, 0], S1, [1, 0], S2) == pytest.approx(ref, rel=1e-12)
    assert w2_gaussian(0.0, 1.0, 3.0, 1.0) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        w2_gaussian_sq([0, 0], np.diag([1.0, -1.0]), [0, 0], np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_w2_symmetric_and_triangle(seed):
    rng = np.random.default_rng(seed)
    mats = []
    for _ in range(3):
        A = rng.standard_normal((3, 3))
        mats.append((rng.standard_normal(3), A @ A.T))
    d = lambda a, b: w2_gaussian(a[0], a[1], b[0], b[1])
    assert d(mats[0], mats[1]) == pytest.approx(d(mats[1], mats[0]), rel=1e-6, abs=1e-9)
    assert d(mats[0], mats[2]) <= d(mats[0], mats[1]) + d(mats[1], mats[2]) + 1e-8


def test_time_average_trapezoid():
    assert time_average(np.linspace(0, 1, 11), 2.0) == pytest.approx(0.5)


def test_decoupled_reduction_is_zero():
    c = reduction_experiment(bench(9, mu=0.0), r_list=range(1, 6), steps=400)
    assert c.avg_w2_sq.max() <= 1e-16 and c.sup_w2_sq.max() <= 1e-16


def test_reduction_full_index_set():
    c = reduction_experiment(bench(9), r_list=[5, 6], steps=400)
    assert np.all(c.avg_w2_sq == 0) and np.all(c.rhs == 0) and np.all(c.gamma_r == 0)


def test_reduction_bound_and_decay_small():
    c = reduction_experiment(bench(11), r_list=range(1, 6), steps=400)
    assert np.all(c.avg_w2_sq <= c.rhs)
    assert np.all(c.avg_w2_sq[1:] < c.avg_w2_sq[:-1])


def test_reduction_full_mean_boundary_smaller():
    a = reduction_experiment(bench(11), r_list=[2], steps=400)
    b = reduction_experiment(bench(11), r_list=[2], steps=400, boundary_policy="full_mean")
    assert b.avg_w2_sq[0] < a.avg_w2_sq[0]


def test_decoupled_marginals_match():
    spec = bench(9, mu=0.0)
    t = nkh_table(spec.graph, 0)
    I = t.ball(2)
    sf = riccati_solve(spec, steps=300)
    sr = riccati_solve(spec, I, BoundaryData.frozen(spec, [3, 6], 300), 300)
    ff, fr = gaussian_flow(spec, sf), gaussian_flow(spec, sr)
    np.testing.assert_allclose(ff.marginal(0)[0], fr.marginal(0)[0], atol=1e-12)
    np.testing.assert_allclose(ff.marginal(0)[1], fr.marginal(0)[1], atol=1e-12)


def test_dv_decay():
    spec = bench(15)
    rep = dv_decay_report(riccati_solve(spec, steps=400), nkh_table(spec.graph, 0))
    vals = [rep.by_distance[k] for k in range(1, 8)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert rep.slope < 0
    rep0 = dv_decay_report(riccati_solve(bench(15, mu=0.0), steps=100), nkh_table(spec.graph, 0))
    assert all(v == 0 for k, v in rep0.by_distance.items() if k > 0)


def test_dv_outward_lattice_unreachable_blocks():
    g = build_lattice(3, "outward")
    spec = LqGameSpec.build(g, mu=0.4)
    sol = riccati_solve(spec, steps=200)
    t = nkh_table(g, 0)
    # nothing reads the origin, so no other field depends on it
    for k in range(1, g.n):
        assert np.all(sol.block(k, 0) == 0)
    assert len(t.layer_of) == g.n


def test_perturbation():
    spec = bench(15)
    same = perturbation_experiment(spec, 5, steps=400, check=False)
    assert same["lhs"] == 0
    res = perturbation_experiment(spec, 5, new_mean=spec.init_mean[5] + 1, steps=400, check=False)
    assert 0 < res["lhs"] <= res["bound"]
    dec = perturbation_experiment(bench(15, mu=0.0), 5, new_mean=spec.init_mean[5] + 1, steps=400, check=False)
    assert dec["lhs"] == 0


def test_spec_validation():
    g = build_chain(3)
    with pytest.raises(ValueError):
        LqGameSpec.build(g, mu=1.0)
    with pytest.raises(ValueError):
        LqGameSpec.build(g, kappa=0.0)
    with pytest.raises(ValueError):
        LqGameSpec.build(g, Q=0.0)
    with pytest.raises(ValueError):
        LqGameSpec.build(g, init_cov=-1.0)


def test_cost_bounds():
    b = bench(5).cost_bounds()
    assert np.all(b.K_f == 1.0) and np.all(b.l_f == pytest.approx(0.15))
    b1 = LqGameSpec.build(build_chain(3, cyclic=False), mu=0.9).cost_bounds()
    assert b1.K_f[0] == pytest.approx(1 - 0.45)
