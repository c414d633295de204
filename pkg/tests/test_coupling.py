from __future__ import annotations

import numpy as np
import pytest

from sparse_game.coupling import mc_coupling_oracle, worker_count
from sparse_game.graph import build_chain, nkh_table
from sparse_game.lq_openloop import LqGameSpec, reduction_experiment


def spec(n=9, **kw):
    kw.setdefault("mu", 0.3)
    return LqGameSpec.build(build_chain(n), init_mean=[(i % 3) - 1 for i in range(n)], **kw)


def test_deterministic_case_matches_exact():
    s = spec(sigma=0.0, init_cov=0.0)
    I = nkh_table(s.graph, 0).ball(2)
    est = mc_coupling_oracle(s, I, paths=20, batches=2, steps=2000, seed=0)
    exact = reduction_experiment(s, r_list=[2], steps=2000, check=False).avg_w2_sq[0]
    assert est.avg_w2_sq == pytest.approx(exact, rel=1e-2)
    assert est.quantile_avg_w2_sq == pytest.approx(exact, rel=1e-2)


def test_same_seed_bit_identical():
    s = spec()
    I = nkh_table(s.graph, 0).ball(2)
    a = mc_coupling_oracle(s, I, paths=400, batches=4, steps=200, seed=7)
    b = mc_coupling_oracle(s, I, paths=400, batches=4, steps=200, seed=7)
    assert a.avg_w2_sq == b.avg_w2_sq and a.stderr == b.stderr
    np.testing.assert_array_equal(a.w2_sq, b.w2_sq)


def test_worker_count_independent(monkeypatch):
    s = spec()
    I = nkh_table(s.graph, 0).ball(2)
    a = mc_coupling_oracle(s, I, paths=400, batches=4, steps=200, seed=3, workers=1)
    b = mc_coupling_oracle(s, I, paths=400, batches=4, steps=200, seed=3, workers=4)
    assert a.avg_w2_sq == b.avg_w2_sq
    monkeypatch.setenv("SPARSE_GAME_THREADS", "2")
    assert worker_count(8) == 2


def test_rejects_multidimensional():
    s = LqGameSpec.build(build_chain(5), d=2)
    with pytest.raises(ValueError):
        mc_coupling_oracle(s, [0, 1, 4], paths=100, batches=2)
