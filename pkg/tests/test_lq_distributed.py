from __future__ import annotations

import numpy as np
import pytest

from sparse_game.errors import ConvergenceError
from sparse_game.graph import Graph, build_chain, nkh_table
from sparse_game.lq_distributed import (
    distributed_fixed_point, distributed_reduction_experiment, hjb_forcing,
)
from sparse_game.lq_openloop import BoundaryData, LqGameSpec, gaussian_flow, riccati_solve


def bench(n=9, mu=0.3, **kw):
    return LqGameSpec.build(build_chain(n), mu=mu, init_mean=[(i % 3) - 1 for i in range(n)], **kw)


def test_decoupled_single_sweep_matches_openloop():
    s = bench(mu=0.0)
    v, mf = distributed_fixed_point(s, steps=400)
    assert mf.iterations == 1
    sol = riccati_solve(s, steps=400)
    np.testing.assert_allclose(v.K[:, 0, 0, 0], sol.P[:, 0, 0], atol=1e-13)


def test_two_initializations_agree():
    s = bench()
    _, a = distributed_fixed_point(s, guess="zeros", steps=400)
    _, b = distributed_fixed_point(s, guess="initial", steps=400)
    assert np.abs(a.mean - b.mean).max() < 1e-8
    assert a.iterations <= 60


def test_single_player_matches_openloop():
    s = LqGameSpec.build(Graph.from_lists([[]]), G=0.7, sigma=0.5, init_mean=1.3, init_cov=0.4)
    _, mf = distributed_fixed_point(s, steps=400)
    fl = gaussian_flow(s, riccati_solve(s, steps=400))
    np.testing.assert_allclose(mf.mean[:, 0], fl.mean, atol=1e-10)
    np.testing.assert_allclose(mf.cov[:, 0], fl.cov, atol=1e-10)


def test_forcing_reads_only_neighbors():
    s = bench()
    rng = np.random.default_rng(0)
    means = rng.standard_normal((11, 9, 1))
    base = hjb_forcing(s, range(9), means, None)
    other = means.copy()
    other[:, 4] += 5.0   # player 4 is not a neighbor of player 0
    assert np.array_equal(hjb_forcing(s, range(9), other, None)[:, 0], base[:, 0])
    assert not np.array_equal(hjb_forcing(s, range(9), other, None)[:, 3], base[:, 3])


def test_nonconvergence_reports_history():
    with pytest.raises(ConvergenceError) as exc:
        distributed_fixed_point(bench(), steps=100, max_iter=3)
    assert len(exc.value.history) == 3


def test_reduced_needs_boundary():
    with pytest.raises(ValueError):
        distributed_fixed_point(bench(), index_set=[0, 1, 8], steps=50)
    b = BoundaryData.frozen(bench(), [2, 7], 50)
    _, mf = distributed_fixed_point(bench(), index_set=[0, 1, 8], boundary=b, steps=50)
    assert mf.mean.shape == (51, 3, 1)


def test_distributed_reduction_curve():
    c = distributed_reduction_experiment(bench(), r_list=range(1, 6), steps=400)
    assert np.all(c.avg_w2_sq <= c.rhs)
    assert np.all(c.avg_w2_sq[1:4] < c.avg_w2_sq[:3])
    assert c.avg_w2_sq[-1] == 0
    assert all(it >= 1 for it in c.extra["iterations"])
    z = distributed_reduction_experiment(bench(mu=0.0), r_list=range(1, 5), steps=200)
    assert z.avg_w2_sq.max() <= 1e-16
