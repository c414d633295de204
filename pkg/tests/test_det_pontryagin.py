from __future__ import annotations

import numpy as np
import pytest

from sparse_game.det_pontryagin import (
    ConvexCoupling, DetGameSpec, det_reduction_experiment, gradient_selfcheck, monotonicity_check, shoot,
    time_reversal_error,
)
from sparse_game.graph import Graph, build_chain
from sparse_game.lq_openloop import LqGameSpec, gaussian_flow, riccati_solve

X0 = [(i % 3) - 1 for i in range(9)]


def test_no_interaction():
    s = DetGameSpec.build(Graph.from_lists([[], []]), ConvexCoupling(), x0=[1.0, 2.0])
    sol = shoot(s, steps=50)
    assert np.all(sol.p == 0) and np.all(sol.X[:, :, 0] == [1.0, 2.0])


def test_quadratic_matches_lq_mean():
    g = build_chain(9)
    s = DetGameSpec.build(g, ConvexCoupling(lam=1.5), mu=0.3, G=0.4, x0=X0)
    sol = shoot(s, steps=800)
    lq = LqGameSpec.build(g, Q=1.5, mu=0.3, G=0.4, sigma=0.0, init_cov=0.0, init_mean=X0)
    fl = gaussian_flow(lq, riccati_solve(lq, steps=800))
    for i in range(9):
        np.testing.assert_allclose(sol.path(i)[:, 0], fl.marginal(i)[0][:, 0], atol=1e-8)


def test_smoothed_reduction_decays():
    s = DetGameSpec.build(build_chain(9), ConvexCoupling("smoothed", 1.0, 0.1), mu=0.3, x0=X0)
    c = det_reduction_experiment(s, steps=400)
    assert max(c.extra["residual"]) <= 1e-10
    assert np.all(c.avg_w2_sq[1:] <= c.avg_w2_sq[:-1] / 2)
    assert np.all(c.avg_w2_sq <= c.rhs)


def test_gradient_selfcheck():
    rng = np.random.default_rng(1)
    assert gradient_selfcheck(ConvexCoupling(lam=2.0), rng.standard_normal((20, 2))) <= 1e-10
    assert gradient_selfcheck(ConvexCoupling("smoothed", 1.0, 0.1), 30 * rng.standard_normal((20, 1))) <= 1e-8
    assert np.all(ConvexCoupling("smoothed", 1.0, 0.1).grad(np.zeros(3)) == 0)


def test_monotonicity_constants():
    s = DetGameSpec.build(build_chain(9), ConvexCoupling("smoothed", 1.0, 0.1), mu=0.3, x0=X0)
    assert monotonicity_check(s, pairs=300) >= 0
    s2 = DetGameSpec.build(build_chain(3, cyclic=False), ConvexCoupling("smoothed", 1.0, 0.5), mu=0.8)
    assert monotonicity_check(s2, pairs=300) >= 0


def test_time_reversal():
    s = DetGameSpec.build(build_chain(7), ConvexCoupling("smoothed", 1.0, 0.1), mu=0.3, G=0.5, x0=X0[:7])
    sol = shoot(s, steps=400)
    assert sol.residual <= 1e-10
    assert time_reversal_error(s, sol) <= 1e-9


def test_coupling_validation():
    with pytest.raises(ValueError):
        ConvexCoupling("cubic")
    with pytest.raises(ValueError):
        ConvexCoupling("quadratic", 1.0, 0.1)
