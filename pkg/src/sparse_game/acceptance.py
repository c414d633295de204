"""Acceptance checks shared by the test suite and the ``validate`` subcommand."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .decay import theta_star
from .graph import Graph, nkh_table


def random_r_step_instance(rng: np.random.Generator, max_n: int = 12):
    """Random digraph with a non-negative sequence meeting the one-step
    inequality with equality on the ball of radius r around vertex 0.

    Returns ``(graph, gamma, C, r)``.
    """
    while True:
        n = int(rng.integers(2, max_n + 1))
        p = rng.uniform(0.15, 0.6)
        adj = rng.random((n, n)) < p
        np.fill_diagonal(adj, False)
        g = Graph.from_lists([np.flatnonzero(row).tolist() for row in adj])
        t = nkh_table(g, 0)
        if t.h_star < 2:
            continue
        r = int(rng.integers(1, t.h_star))
        gamma = float(rng.uniform(0.1, 0.95)) * theta_star(t, r)
        ball = t.ball(r)
        rest = [v for v in range(n) if v not in set(ball)]
        A = adj.astype(float)
        C = np.zeros(n)
        C[rest] = rng.uniform(0.0, 1.0, len(rest))
        M = np.eye(len(ball)) - gamma * A[np.ix_(ball, ball)]
        try:
            C[ball] = np.linalg.solve(M, gamma * A[np.ix_(ball, rest)] @ C[rest])
        except np.linalg.LinAlgError:
            continue
        if np.all(C >= 0):
            return g, gamma, C, r


# ----------------------------------------------------------------------------
# criteria
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Criterion:
    number: int
    name: str
    time_limit: float
    check: Callable[..., tuple[bool, str]]


@dataclass(frozen=True)
class Outcome:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    time_limit: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name}: {self.detail}"


def benchmark_spec(n: int = 21, mu: float = 0.3):
    from .graph import build_chain
    from .lq_openloop import LqGameSpec
    return LqGameSpec.build(build_chain(n), d=1, T=1.0, kappa=1.0, Q=1.0, mu=mu, sigma=1.0,
                            init_mean=[(i % 3) - 1 for i in range(n)], init_cov=1.0)


def _chain_closed_form(theta: float, r: int) -> list[float]:
    seq = [theta, theta / (1 - 2 * theta ** 2)]
    while len(seq) < r:
        seq.append(theta / (1 - theta * seq[-1]))
    return seq[:r]


def c1_chain_closed_form(**_):
    from .decay import gamma_sequence
    from .graph import build_chain
    t = nkh_table(build_chain(41), 0)
    err = max(float(np.abs(gamma_sequence(t, th, 15) - _chain_closed_form(th, 15)).max())
              for th in (0.1, 0.2, 0.3, 0.45))
    return err <= 1e-12, f"max |gamma_h - closed form| = {err:.3e} (tol 1e-12)"


def c2_outward_lattice(**_):
    from .decay import gamma_r, gamma_sequence
    from .graph import build_lattice
    t = nkh_table(build_lattice(8, "outward"), 0)
    err = 0.0
    for th in (0.1, 0.3):
        seq = gamma_sequence(t, th, 6)
        for r in range(1, 7):
            err = max(err, abs(gamma_r(seq[:r]) - 0.5 * (2 * th) ** r))
    return err <= 1e-12, f"max |gamma^(r) - (2 theta)^r / 2| = {err:.3e} (tol 1e-12)"


def c3_uniform_bound(**_):
    from .decay import gamma_r, gamma_sequence, theta_star_uniform
    from .graph import build_lattice
    t = nkh_table(build_lattice(8), 0)
    gamma = theta_star_uniform(4, 0.25)
    seq = gamma_sequence(t, gamma, 6)
    worst = max(gamma_r(seq[:r]) / 0.25 ** r for r in range(7))
    ok = t.max_count() <= 4 and bool(np.all(seq < 1)) and worst <= 1.0
    return ok, (f"max_r gamma^(r)/0.25^r = {worst:.6f}, max gamma_h = {seq.max():.6f}, "
                f"max N_k^h = {t.max_count()}")


def c4_lq_benchmark(inject_theta=None, steps=2000, **_):
    from .decay import gamma_sequence, theta_from_game, theta_star
    from .lq_openloop import reduction_experiment
    spec = benchmark_spec()
    t = nkh_table(spec.graph, 0)
    theta = theta_from_game(spec.cost_bounds(), spec.graph) if inject_theta is None else inject_theta
    th_star = theta_star(t)
    if theta > th_star:
        return False, f"theta = {theta:.6f} > theta* = {th_star:.6f}"
    curve = reduction_experiment(spec, 0, range(1, 9), steps=steps)
    gbar = float(gamma_sequence(t, theta, 8).max())
    c, rhs = curve.avg_w2_sq, curve.rhs
    bound_ok = bool(np.all(c <= rhs))
    ratios = [c[a + 1] / c[a] for a in range(7) if c[a] > 1e-14]
    ratio_ok = all(x <= gbar + 0.1 for x in ratios)
    return bound_ok and ratio_ok, (
        f"theta = {theta:.6f} <= theta* = {th_star:.6f}; max curve/rhs = {float(np.max(c / rhs)):.3e}; "
        f"max ratio = {max(ratios):.4f} <= {gbar + 0.1:.4f}")


def c5_decoupled(steps=2000, **_):
    from .lq_openloop import reduction_experiment
    curve = reduction_experiment(benchmark_spec(mu=0.0), 0, range(1, 9), steps=steps)
    m = float(curve.avg_w2_sq.max())
    return m <= 1e-14, f"max_r curve[r] = {m:.3e} (tol 1e-14)"


def c6_riccati_oracle(**_):
    from .graph import Graph, build_chain
    from .lq_openloop import LqGameSpec, riccati_solve
    two = Graph.from_lists([[1], [0]])
    spec = LqGameSpec.build(two, mu=0.5, G=0.5)
    a = riccati_solve(spec, steps=1000)
    ref = riccati_solve(spec, steps=100_000)
    err = float(np.abs(a.P - ref.P[::100]).max())
    lam = 1.0
    cf_err = 0.0
    for g, n_i in ((two, 1), (build_chain(5), 2)):
        s0 = LqGameSpec.build(g, mu=0.0, Q=lam)
        sol = riccati_solve(s0, steps=1000)
        c = math.sqrt(n_i * lam)
        cf_err = max(cf_err, float(np.abs(sol.P[:, 0, 0] - c * np.tanh(c * (s0.T - sol.t))).max()))
    return err <= 1e-6 and cf_err <= 1e-8, (
        f"RK4 vs reference max block error = {err:.3e} (tol 1e-6); closed form error = {cf_err:.3e} (tol 1e-8)")


def c7_field_decay(steps=2000, **_):
    from .lq_openloop import dv_decay_report, riccati_solve
    spec = benchmark_spec()
    rep = dv_decay_report(riccati_solve(spec, steps=steps), nkh_table(spec.graph, 0))
    vals = [rep.by_distance[k] for k in range(2, 9)]
    mono = all(b < a for a, b in zip(vals, vals[1:]))
    return mono and rep.slope < 0, (
        f"strictly decreasing over distances 2..8: {mono}; log-slope = {rep.slope:.4f}")


def c8_perturbation(steps=2000, **_):
    from .lq_openloop import perturbation_experiment
    spec = benchmark_spec()
    res = perturbation_experiment(spec, 5, new_mean=spec.init_mean[5] + 1.0, steps=steps)
    return res["lhs"] <= res["bound"], f"lhs = {res['lhs']:.3e} <= bound = {res['bound']:.3e}"


def c9_distributed(steps=2000, **_):
    from .decay import gamma_sequence, theta_from_game
    from .lq_distributed import distributed_fixed_point, distributed_reduction_experiment
    spec = benchmark_spec(9)
    _, a = distributed_fixed_point(spec, guess="zeros", steps=steps)
    _, b = distributed_fixed_point(spec, guess="initial", steps=steps)
    gap = float(np.abs(a.mean - b.mean).max())
    t = nkh_table(spec.graph, 0)
    theta = theta_from_game(spec.cost_bounds(), spec.graph)
    gbar = float(gamma_sequence(t, theta, t.h_star).max())
    curve = distributed_reduction_experiment(spec, 0, range(1, t.h_star + 1), steps=steps)
    c = curve.avg_w2_sq
    ratios = [c[k + 1] / c[k] for k in range(len(c) - 1) if c[k] > 1e-14 and c[k + 1] > 1e-14]
    ok = gap <= 1e-8 and bool(np.all(c <= curve.rhs)) and all(x <= gbar + 0.1 for x in ratios)
    return ok, (f"initialization gap = {gap:.3e} (tol 1e-8); iterations = {a.iterations}/{b.iterations}; "
                f"max ratio = {max(ratios):.4f} <= {gbar + 0.1:.4f}")


def c10_nonlinear(steps=1000, **_):
    from .det_pontryagin import ConvexCoupling, DetGameSpec, det_reduction_experiment
    from .graph import build_chain
    spec = DetGameSpec.build(build_chain(9), ConvexCoupling("smoothed", 1.0, 0.1), mu=0.3,
                             x0=[(i % 3) - 1 for i in range(9)])
    curve = det_reduction_experiment(spec, 0, range(1, 5), steps=steps)
    res = max(curve.extra["residual"])
    c = curve.avg_w2_sq
    factors = [c[k] / c[k + 1] for k in range(3)]
    ok = res <= 1e-10 and all(f >= 2 for f in factors)
    return ok, f"max residual = {res:.3e} (tol 1e-10); decay factors r=1..3: " + ", ".join(f"{f:.1f}" for f in factors)


def c11_monte_carlo(seed=0, **_):
    from .coupling import mc_coupling_oracle
    from .lq_openloop import reduction_experiment
    spec = benchmark_spec()
    I = nkh_table(spec.graph, 0).ball(2)
    est = mc_coupling_oracle(spec, I, paths=10_000, seed=seed, steps=1000)
    exact = float(reduction_experiment(spec, 0, [2], steps=2000).avg_w2_sq[0])
    z = abs(est.avg_w2_sq - exact) / est.stderr
    return z <= 3, f"MC = {est.avg_w2_sq:.4e} +/- {est.stderr:.2e}, exact = {exact:.4e}, |z| = {z:.2f} (tol 3)"


def c12_r_step_bruteforce(seed=12345, **_):
    from .decay import r_step_bound_oracle
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(100):
        g, gamma, C, r = random_r_step_instance(rng)
        passed += r_step_bound_oracle(g, 0, gamma, C, r)
    return passed == 100, f"{passed}/100 random instances satisfy the r-step bound"


CRITERIA = (
    Criterion(1, "chain closed form", 1.0, c1_chain_closed_form),
    Criterion(2, "directed lattice closed form", 1.0, c2_outward_lattice),
    Criterion(3, "uniform decay bound", 1.0, c3_uniform_bound),
    Criterion(4, "LQ benchmark reduction decay", 60.0, c4_lq_benchmark),
    Criterion(5, "decoupled benchmark", 60.0, c5_decoupled),
    Criterion(6, "Riccati oracle", 5.0, c6_riccati_oracle),
    Criterion(7, "decoupling field decay", 10.0, c7_field_decay),
    Criterion(8, "initial-data perturbation", 30.0, c8_perturbation),
    Criterion(9, "distributed uniqueness and decay", 60.0, c9_distributed),
    Criterion(10, "nonlinear deterministic decay", 30.0, c10_nonlinear),
    Criterion(11, "Monte Carlo cross-check", 60.0, c11_monte_carlo),
    Criterion(12, "r-step bound brute force", 5.0, c12_r_step_bruteforce),
)


def run_criterion(c: Criterion, **kw) -> Outcome:
    t0 = time.perf_counter()
    try:
        ok, detail = c.check(**kw)
    except Exception as exc:  # a crash is a failure with its message
        ok, detail = False, f"error: {type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    if dt > c.time_limit:
        ok, detail = False, detail + f"; runtime {dt:.1f}s over {c.time_limit:g}s"
    return Outcome(c.number, c.name, bool(ok), detail, dt, c.time_limit)


def run_all(inject_theta: float | None = None, only=None) -> list[Outcome]:
    out = []
    for c in CRITERIA:
        if only is not None and c.number not in only:
            continue
        kw = {"inject_theta": inject_theta} if c.number == 4 else {}
        out.append(run_criterion(c, **kw))
    return out
