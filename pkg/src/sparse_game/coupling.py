"""Monte Carlo cross-check of the reduction gap by synchronous coupling.

The full and the reduced games are simulated with Euler-Maruyama under their
equilibrium feedbacks, sharing the initial samples and Brownian increments of
every player they have in common.  The root's empirical laws are compared at
each recorded time in two ways:
- ``quantile``: sorted-sample matching, the empirical W2 of the two samples;
- ``moments``: W2 between the Gaussians with the sample means and variances.
Both laws are Gaussian in the linear-quadratic setting, so the two estimators
target the same value.  The quantile version carries an upward bias of the order
of the variance of the unshared noise (players outside the reduced game), which
at 10^4 paths can exceed the sampling error; the moment version does not.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .lq_openloop import LqGameSpec, _boundary_for, riccati_solve, time_average


@dataclass(frozen=True)
class McEstimate:
    avg_w2_sq: float          # moment estimator
    stderr: float
    quantile_avg_w2_sq: float
    quantile_stderr: float
    times: np.ndarray
    w2_sq: np.ndarray         # moment estimator per recorded time


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("SPARSE_GAME_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _quantile_w2_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Empirical W2^2 along the last axis, for equal sample sizes."""
    return np.mean((np.sort(a, axis=-1) - np.sort(b, axis=-1)) ** 2, axis=-1)


def _moment_w2_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.mean(axis=-1) - b.mean(axis=-1)) ** 2 + (a.std(axis=-1) - b.std(axis=-1)) ** 2


def _simulate_batch(spec, sol_f, sol_r, pos_r, root, n_paths, seed_seq, record_every):
    rng = np.random.default_rng(seed_seq)
    n = spec.n
    steps = len(sol_f.t) - 1
    h = spec.T / steps
    sig = spec.sigma[:, 0, 0]
    x = spec.init_mean[:, 0] + np.sqrt(spec.init_cov[:, 0, 0]) * rng.standard_normal((n_paths, n))
    I = list(sol_r.index_set)
    y = x[:, I].copy()
    kf, kr = sol_f.kinv, sol_r.kinv
    rec_f, rec_r = [x[:, root].copy()], [y[:, pos_r].copy()]
    for m in range(steps):
        dB = np.sqrt(h) * rng.standard_normal((n_paths, n))
        drift_f = -(x @ sol_f.P[m].T + sol_f.q[m]) * kf
        drift_r = -(y @ sol_r.P[m].T + sol_r.q[m]) * kr
        x = x + h * drift_f + dB * sig
        y = y + h * drift_r + dB[:, I] * sig[I]
        if (m + 1) % record_every == 0:
            rec_f.append(x[:, root].copy())
            rec_r.append(y[:, pos_r].copy())
    return np.array(rec_f), np.array(rec_r)


def mc_coupling_oracle(spec: LqGameSpec, index_set, boundary_policy: str = "frozen", paths: int = 10_000,
                       seed: int = 0, steps: int = 1000, batches: int = 20, record_every: int = 10,
                       root: int = 0, workers: int | None = None) -> McEstimate:
    """Estimate the time-averaged squared W2 gap of the root between the full game
    and the game reduced to ``index_set``.

    Batches draw from independent child seeds of ``seed``, so the result does not
    depend on the number of worker threads.
    """
    if spec.d != 1:
        raise ValueError("the quantile coupling estimator requires d = 1")
    if paths < batches or paths % batches:
        raise ValueError("paths must be a positive multiple of batches")
    if steps % record_every:
        raise ValueError("steps must be a multiple of record_every")
    I = sorted(index_set)
    if root not in I:
        raise ValueError("root must belong to the index set")
    sol_f = riccati_solve(spec, None, None, steps)
    bnd = _boundary_for(spec, I, boundary_policy, steps) if len(I) < spec.n else None
    sol_r = riccati_solve(spec, I, bnd, steps)
    children = np.random.SeedSequence(seed).spawn(batches)
    per = paths // batches
    job = lambda s: _simulate_batch(spec, sol_f, sol_r, I.index(root), root, per, s, record_every)
    nw = min(worker_count(workers), batches)
    if nw > 1:
        with ThreadPoolExecutor(nw) as ex:
            out = list(ex.map(job, children))
    else:
        out = [job(s) for s in children]
    full = np.concatenate([o[0] for o in out], axis=1)
    red = np.concatenate([o[1] for o in out], axis=1)

    def estimate(fn):
        w = fn(full, red)
        per_batch = np.array([time_average(fn(f, r), spec.T) for f, r in out])
        return time_average(w, spec.T), float(per_batch.std(ddof=1) / np.sqrt(batches)), w

    est, se, w = estimate(_moment_w2_sq)
    q_est, q_se, _ = estimate(_quantile_w2_sq)
    return McEstimate(est, se, q_est, q_se, np.linspace(0, spec.T, len(w)), w)
