from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparse_game.decay import (
    CostBounds, decay_report, gamma_r, gamma_sequence, gamma_table, r_step_bound_oracle,
    reduction_radius, theta_from_game, theta_star, theta_star_uniform, tilde_gamma,
)
from sparse_game.errors import InfeasibleError
from sparse_game.graph import Graph, build_chain, build_lattice, build_tree, nkh_table


def chain_closed_form(theta, r):
    seq = [theta]
    if r > 1:
        seq.append(theta / (1 - 2 * theta ** 2))
    while len(seq) < r:
        seq.append(theta / (1 - theta * seq[-1]))
    return np.array(seq[:r])


def test_theta_chain_benchmark():
    b = CostBounds.uniform(21, T=1.0, kappa=1.0, K_f=1.0, l_f=0.15)
    assert theta_from_game(b, build_chain(21)) == pytest.approx(0.15 / 1.125, rel=1e-15)


def test_theta_zero_without_interaction():
    assert theta_from_game(CostBounds.uniform(5, 1.0, K_f=1.0), build_chain(5)) == 0.0


def test_theta_increases_with_horizon():
    g = build_chain(5)
    t1 = theta_from_game(CostBounds.uniform(5, 1.0, K_f=1.0, l_f=0.1), g)
    t2 = theta_from_game(CostBounds.uniform(5, 2.0, K_f=1.0, l_f=0.1), g)
    assert t2 > t1


def test_theta_isolated_player():
    b = CostBounds.uniform(1, 1.0, l_f=0.3)
    assert theta_from_game(b, Graph.from_lists([[]])) == 0.0


@pytest.mark.parametrize("theta", [0.1, 0.2, 0.3, 0.45])
def test_chain_closed_form(theta):
    t = nkh_table(build_chain(41), 0)
    np.testing.assert_allclose(gamma_sequence(t, theta, 15), chain_closed_form(theta, 15), rtol=0, atol=1e-12)


def test_chain_values():
    seq = gamma_sequence(nkh_table(build_chain(41), 0), 0.25, 3)
    assert seq[1] == pytest.approx(0.2857142857142857, abs=1e-12)
    assert seq[2] == pytest.approx(0.2692307692307692, abs=1e-12)


@pytest.mark.parametrize("theta", [0.1, 0.3])
def test_outward_lattice_closed_form(theta):
    t = nkh_table(build_lattice(8, "outward"), 0)
    seq = gamma_sequence(t, theta, 6)
    np.testing.assert_allclose(seq[1:], 2 * theta, atol=1e-12)
    for r in range(7):
        assert abs(gamma_r(seq[:r]) - 0.5 * (2 * theta) ** r) <= 1e-12 or r == 0


def test_gamma_r_edge_cases():
    assert gamma_r([]) == 1.0
    assert gamma_r([0.3, 0.0, 0.2]) == 0.0


def test_empty_next_layer_gives_zero():
    t = nkh_table(build_chain(7), 0)
    seq = gamma_sequence(t, 0.2, t.h_star)
    assert seq[-1] == 0.0 and gamma_r(seq) == 0.0


def test_infeasible_raises():
    with pytest.raises(InfeasibleError):
        gamma_sequence(nkh_table(build_chain(41), 0), 0.9, 20)


def test_theta_star_examples():
    assert theta_star(nkh_table(build_chain(41), 0)) == pytest.approx(0.5, abs=1e-12)
    assert theta_star(nkh_table(build_lattice(6, "outward"), 0)) == 1.0
    assert theta_star(nkh_table(Graph.from_lists([[]]), 0), 1) == 1.0


def test_theta_star_is_feasible_and_sharp():
    t = nkh_table(build_lattice(5), 0)
    ts = theta_star(t)
    gamma_sequence(t, ts, t.h_star)
    with pytest.raises(InfeasibleError):
        gamma_sequence(t, ts + 1e-9, t.h_star)


def test_theta_star_uniform_values():
    assert theta_star_uniform(1, 0.5) == pytest.approx(1 / 6)
    assert theta_star_uniform(4, 0.25) == pytest.approx(0.025)


@pytest.mark.parametrize("g", [build_lattice(8), build_tree(3, 6), build_chain(31)])
def test_uniform_bound(g):
    t = nkh_table(g, 0)
    n = t.max_count()
    for gb in (0.1, 0.25, 0.4):
        seq = gamma_sequence(t, theta_star_uniform(n, gb), min(7, t.h_star))
        assert np.all(seq < 1)
        for r in range(len(seq) + 1):
            assert gamma_r(seq[:r]) <= gb ** r * (1 + 1e-12)


def test_monotone_in_gamma():
    t = nkh_table(build_lattice(6), 0)
    grid = np.linspace(0.01, 0.9 * theta_star(t), 20)
    seqs = np.array([gamma_sequence(t, x, 5) for x in grid])
    assert np.all(np.diff(seqs, axis=0) >= 0)


def tilde_oracle(t, gamma, r):
    """Term-by-term evaluation with explicit layer loops over the counts."""
    hs = t.h_star
    g = gamma_sequence(t, gamma, hs)
    sup = lambda l, h: max((t.count(k, h) for k in (t.layers[l] if l < hs else ())), default=0)
    den = lambda h: 1 - gamma * sum(sup(i, h) * np.prod(g[i:h]) for i in range(h + 1))
    out = {r: 1 / den(r)}
    for j in range(r + 1, hs):
        acc = 0.0
        for l in range(j):
            for i in range(max(r, l), j):
                acc += sup(l, j) * out[i] * np.prod(g[l:i])
        out[j] = gamma * acc / den(j)
    total = sum(np.prod(g[:j]) * out[j] for j in range(r, hs))
    return np.array([out[j] for j in range(r, hs)]), total


@pytest.mark.parametrize("g,gamma", [(build_chain(15), 0.1), (build_lattice(5), 0.05), (build_tree(2, 5), 0.2)])
def test_tilde_gamma_matches_oracle(g, gamma):
    t = nkh_table(g, 0)
    for r in range(t.h_star):
        seq, total = tilde_gamma(t, gamma, r)
        ref_seq, ref_total = tilde_oracle(t, gamma, r)
        np.testing.assert_allclose(seq, ref_seq, rtol=1e-13)
        assert total == pytest.approx(ref_total, rel=1e-13)


def test_tilde_gamma_bound():
    gb_max = (math.sqrt(17) - 1) / 8
    for g in (build_chain(41), build_lattice(8), build_tree(2, 6)):
        t = nkh_table(g, 0)
        n = t.max_count()
        Kp = 4 * (1 + 1e-9)
        for gb in (0.1, 0.25, gb_max):
            gamma = theta_star_uniform(n, gb)
            for r in range(min(8, t.h_star)):
                seq, total = tilde_gamma(t, gamma, r)
                assert total <= 2 * Kp * gb ** r
                assert np.all(seq <= Kp * (2 * gb) ** np.arange(len(seq)))


def test_tilde_gamma_last_layer_and_small_gamma():
    t = nkh_table(build_chain(9), 0)
    seq, total = tilde_gamma(t, 0.2, t.h_star - 1)
    assert len(seq) == 1
    assert total == pytest.approx(gamma_r(gamma_sequence(t, 0.2, t.h_star - 1)) * seq[0])
    assert tilde_gamma(t, 1e-9, 2)[1] < 1e-15


@pytest.mark.parametrize("eps,M,r", [(0.01, 5, 10), (20, 5, 0), (1, 1, 1)])
def test_reduction_radius(eps, M, r):
    theta, rr = reduction_radius(eps, M, 2)
    assert rr == r
    assert theta == pytest.approx(theta_star_uniform(2, 1 / 8))


def test_r_step_bound_zero_and_chain():
    g = build_chain(9)
    assert r_step_bound_oracle(g, 0, 0.2, np.zeros(9), 4)
    t = nkh_table(g, 0)
    # equality propagated inward from layer 4
    C = np.zeros(9)
    for v in t.layers[4]:
        C[v] = 1.0
    ball = t.ball(4)
    A = np.array([[1.0 if j in g.in_neighbors[i] else 0.0 for j in range(9)] for i in range(9)])
    out = [v for v in range(9) if v not in ball]
    C[ball] = np.linalg.solve(np.eye(len(ball)) - 0.2 * A[np.ix_(ball, ball)], 0.2 * A[np.ix_(ball, out)] @ C[out])
    assert r_step_bound_oracle(g, 0, 0.2, C, 4)


def test_r_step_bound_rejects_bad_hypothesis():
    with pytest.raises(ValueError):
        r_step_bound_oracle(build_chain(5), 0, 0.1, np.ones(5), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_r_step_bound_random(seed):
    from sparse_game.acceptance import random_r_step_instance
    g, gamma, C, r = random_r_step_instance(np.random.default_rng(seed))
    assert r_step_bound_oracle(g, 0, gamma, C, r)


def test_decay_report_roundtrip():
    g = build_chain(21)
    b = CostBounds.uniform(21, 1.0, K_f=1.0, l_f=0.15)
    rep = decay_report(b, g, 0, 3)
    assert rep.feasible
    d = rep.to_json_dict()
    assert len(d["gamma_seq"]) == 3 and d["gamma_r"] == pytest.approx(np.prod(d["gamma_seq"]))
    assert d["alpha"][0] == pytest.approx(0.125) and d["beta"][0] == pytest.approx(1.125)


def test_gamma_table_rows():
    rows = gamma_table(nkh_table(build_chain(7), 0), 0.2, 3)
    assert [r["sup_next"] for r in rows] == [1, 1, 1]
