"""Deterministic games with convex couplings, solved by shooting.

With zero noise, Dirac initial states and H^i(p) = |p|^2 / (2 kappa^i), the
decoupling field evaluated along the equilibrium flow, p^i(t) = v^i(t, X_t),
satisfies the characteristic system

    dX^i/dt = -D_p H^i(p^i) = -p^i / kappa^i,
    dp^i/dt = -D_i f^i(X_t),                 p^i(T) = G^i X^i_T,

because D_x H^i = 0, so differentiating v^i(t, X_t) in time leaves only the
running-cost gradient.  The unknown p(0) is found by Newton's method on the
terminal mismatch.  In a reduced game, neighbors outside the index set are
replaced by given paths Z^j(t).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .decay import CostBounds, theta_from_game, theta_star
from .errors import ConvergenceError, InfeasibleError
from .graph import Graph, degrees, nkh_table
from .lq_openloop import W2Curve, _layer_constants, outside_neighbors, reduction_rhs, time_average


@dataclass(frozen=True)
class ConvexCoupling:
    """phi(z) = lam/2 |z|^2 (+ eps * sum_c log cosh z_c for the smoothed family)."""
    kind: str = "quadratic"
    lam: float = 1.0
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "smoothed"):
            raise ValueError(f"unknown coupling family {self.kind!r}")
        if not self.lam > 0 or self.eps < 0:
            raise ValueError("need lam > 0 and eps >= 0")
        if self.kind == "quadratic" and self.eps != 0:
            raise ValueError("the quadratic family takes no eps")

    @property
    def Lam(self) -> float:
        """Upper bound on phi''."""
        return self.lam + self.eps

    def value(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        out = 0.5 * self.lam * np.sum(z * z, axis=-1)
        if self.eps:
            out = out + self.eps * np.sum(np.logaddexp(z, -z) - math.log(2.0), axis=-1)
        return out

    def grad(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        g = self.lam * z
        return g + self.eps * np.tanh(z) if self.eps else g


def gradient_selfcheck(coupling: ConvexCoupling, points) -> float:
    """Largest relative gap between grad(phi) and central differences of phi."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for z in pts:
        g = coupling.grad(z)
        for c in range(z.size):
            step = 1e-5 * (1 + abs(z[c]))
            e = np.zeros_like(z)
            e[c] = step
            fd = (coupling.value(z + e) - coupling.value(z - e)) / (2 * step)
            worst = max(worst, abs(fd - g[c]) / max(1.0, abs(g[c])))
    return worst


@dataclass(frozen=True)
class DetGameSpec:
    graph: Graph
    d: int
    T: float
    kappa: np.ndarray      # (n,)
    coupling: ConvexCoupling
    mu: float
    G: np.ndarray          # (n, d, d)
    x0: np.ndarray         # (n, d)

    def __post_init__(self):
        n = self.graph.n
        if self.kappa.shape != (n,) or np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive, one per player")
        if not 0 <= self.mu < 1 or not self.T > 0:
            raise ValueError("need mu in [0, 1) and T > 0")
        if self.G.shape != (n, self.d, self.d) or self.x0.shape != (n, self.d):
            raise ValueError("G / x0 have wrong shape")

    @classmethod
    def build(cls, graph: Graph, coupling: ConvexCoupling, d: int = 1, T: float = 1.0, kappa=1.0,
              mu: float = 0.0, G=0.0, x0=0.0) -> "DetGameSpec":
        from .lq_openloop import _per_player_matrix, _per_player_vector
        n = graph.n
        kap = np.broadcast_to(np.asarray(kappa, dtype=float), (n,)).copy()
        return cls(graph, int(d), float(T), kap, coupling, float(mu),
                   _per_player_matrix(G, n, d, "G"), _per_player_vector(x0, n, d, "x0"))

    @property
    def n(self) -> int:
        return self.graph.n

    def cost_bounds(self) -> CostBounds:
        lam, Lam = self.coupling.lam, self.coupling.Lam
        n_in, _ = degrees(self.graph)
        K_f = np.minimum(lam, np.maximum(n_in * (lam - self.mu * Lam / 2), 0.0))
        l_f = np.where(n_in > 0, self.mu * Lam / 2, 0.0)
        K_g = np.array([np.linalg.eigvalsh(g)[0] for g in self.G]).clip(min=0.0)
        return CostBounds(self.kappa.copy(), K_f, l_f, K_g, np.zeros(self.n), self.T)

    def f_value(self, i: int, x: np.ndarray) -> float:
        nb = list(self.graph.in_neighbors[i])
        return float(np.sum(self.coupling.value(x[i] - self.mu * x[nb]))) if nb else 0.0

    def f_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        nb = list(self.graph.in_neighbors[i])
        if not nb:
            return np.zeros(self.d)
        return self.coupling.grad(x[i] - self.mu * x[nb]).sum(axis=0)


def monotonicity_check(spec: DetGameSpec, pairs: int = 1000, seed: int = 0, scale: float = 3.0) -> float:
    """Smallest slack of the one-sided convexity inequality over random pairs.

    For every player i the check is
        (D_i f^i(x) - D_i f^i(y)).(x^i - y^i)
            >= K_f^i |x^i - y^i|^2 - l_f^i sum_{j~i} |x^j - y^j|^2 (1 + 1e-8);
    the return value is the minimum of left minus right, normalized by the
    size of the displacement, so a non-negative result means the constants hold.
    """
    rng = np.random.default_rng(seed)
    b = spec.cost_bounds()
    worst = math.inf
    for _ in range(pairs):
        x = scale * rng.standard_normal((spec.n, spec.d))
        y = scale * rng.standard_normal((spec.n, spec.d))
        for i in range(spec.n):
            nb = list(spec.graph.in_neighbors[i])
            di = x[i] - y[i]
            lhs = float((spec.f_grad(i, x) - spec.f_grad(i, y)) @ di)
            rhs = b.K_f[i] * float(di @ di) - b.l_f[i] * float(np.sum((x[nb] - y[nb]) ** 2)) * (1 + 1e-8)
            norm = float(di @ di) + float(np.sum((x[nb] - y[nb]) ** 2)) + 1e-300
            worst = min(worst, (lhs - rhs) / norm)
    return worst


@dataclass(frozen=True)
class TpbvpSolution:
    t: np.ndarray
    X: np.ndarray          # (M+1, nI, d)
    p: np.ndarray          # (M+1, nI, d)
    index_set: tuple[int, ...]
    residual: float
    iterations: int

    def path(self, i: int) -> np.ndarray:
        return self.X[:, self.index_set.index(i)]


class _System:
    """Vectorized right-hand side of the characteristic system on an index set."""

    def __init__(self, spec: DetGameSpec, I: list[int], boundary: dict | None, steps: int):
        self.spec, self.I, self.steps = spec, I, steps
        self.h = spec.T / steps
        pos = {v: a for a, v in enumerate(I)}
        outside = outside_neighbors(spec.graph, I)
        # outside neighbors without a given path stay at their initial position
        opos = {v: len(I) + a for a, v in enumerate(outside)}
        src, dst = [], []
        for a, i in enumerate(I):
            for j in spec.graph.in_neighbors[i]:
                dst.append(a)
                src.append(pos[j] if j in pos else opos[j])
        self.src = np.array(src, dtype=int)
        self.dst = np.array(dst, dtype=int)
        inc = np.zeros((len(I), len(src)))
        inc[self.dst, np.arange(len(src))] = 1.0
        self.inc = inc
        zb = np.zeros((steps + 1, len(outside), spec.d))
        for a, j in enumerate(outside):
            zb[:, a] = np.broadcast_to(boundary[j] if boundary is not None and j in boundary
                                       else spec.x0[j], (steps + 1, spec.d))
        self.zb = zb
        self.zmid = 0.5 * (zb[:-1] + zb[1:])
        self.kinv = (1.0 / spec.kappa[I])[:, None]
        self.GI = spec.G[I]

    def rhs(self, X, p, Z):
        """X, p: (B, nI, d); Z: (nZ, d)."""
        ddt_x = -p * self.kinv
        if len(self.src) == 0:
            return ddt_x, np.zeros_like(p)
        Y = np.concatenate([X, np.broadcast_to(Z, (X.shape[0],) + Z.shape)], axis=1)
        z = Y[:, self.dst] - self.spec.mu * Y[:, self.src]
        grads = self.spec.coupling.grad(z)
        return ddt_x, -np.einsum("ie,bed->bid", self.inc, grads)

    def integrate(self, x0, p0, record: bool = False, backward: bool = False):
        """RK4 over the grid. x0, p0: (B, nI, d)."""
        h = -self.h if backward else self.h
        M = self.steps
        X, p = x0.copy(), p0.copy()
        if record:
            Xs = np.zeros((M + 1,) + X.shape)
            ps = np.zeros_like(Xs)
            Xs[0], ps[0] = X, p
        for s in range(M):
            m = M - s if backward else s
            m1 = m - 1 if backward else m + 1
            Za, Zm, Zb = self.zb[m], self.zmid[min(m, m1)], self.zb[m1]
            a1, b1 = self.rhs(X, p, Za)
            a2, b2 = self.rhs(X + 0.5 * h * a1, p + 0.5 * h * b1, Zm)
            a3, b3 = self.rhs(X + 0.5 * h * a2, p + 0.5 * h * b2, Zm)
            a4, b4 = self.rhs(X + h * a3, p + h * b3, Zb)
            X = X + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            p = p + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
            if record:
                Xs[s + 1], ps[s + 1] = X, p
        return (Xs, ps) if record else (X, p)

    def residual(self, p0_batch):
        """Terminal mismatch p(T) - G X(T) for a batch of initial costates."""
        B = p0_batch.shape[0]
        x0 = np.broadcast_to(self.spec.x0[self.I], (B, len(self.I), self.spec.d)).copy()
        XT, pT = self.integrate(x0, p0_batch)
        return pT - np.einsum("nij,bnj->bni", self.GI, XT)


def shoot(spec: DetGameSpec, index_set=None, boundary_paths: dict | None = None, steps: int = 1000,
          tol: float = 1e-10, max_newton: int = 50, p0_guess=None) -> TpbvpSolution:
    """Solve for the initial costate with Newton's method on the terminal mismatch.

    The Jacobian is built from central differences, all perturbations being
    integrated as one batch.  A backtracking line search guards each step, and
    a damped fixed-point step p0 - R/2 is used when no backtracked step helps.
    """
    I = list(range(spec.n)) if index_set is None else sorted(index_set)
    sysm = _System(spec, I, boundary_paths, steps)
    shape = (len(I), spec.d)
    nv = len(I) * spec.d
    p0 = np.zeros(shape) if p0_guess is None else np.array(p0_guess, dtype=float).reshape(shape)
    R = sysm.residual(p0[None])[0]
    history = [float(np.abs(R).max())]
    it = 0
    while history[-1] > tol:
        if it >= max_newton:
            raise ConvergenceError(f"shooting stalled at residual {history[-1]:.3g}", history)
        it += 1
        flat = p0.ravel()
        steps_fd = 1e-6 * (1 + np.abs(flat))
        pert = np.repeat(flat[None], 2 * nv, axis=0)
        idx = np.arange(nv)
        pert[idx, idx] += steps_fd
        pert[nv + idx, idx] -= steps_fd
        res = sysm.residual(pert.reshape((2 * nv,) + shape)).reshape(2 * nv, nv)
        J = ((res[:nv] - res[nv:]) / (2 * steps_fd)[:, None]).T
        try:
            delta = np.linalg.solve(J, -R.ravel()).reshape(shape)
        except np.linalg.LinAlgError:
            delta = None
        accepted = False
        if delta is not None:
            alpha = 1.0
            while alpha >= 1 / 64:
                cand = p0 + alpha * delta
                Rc = sysm.residual(cand[None])[0]
                if np.abs(Rc).max() < history[-1]:
                    p0, R, accepted = cand, Rc, True
                    break
                alpha /= 2
        if not accepted:
            cand = p0 - 0.5 * R
            Rc = sysm.residual(cand[None])[0]
            if not np.abs(Rc).max() < history[-1]:
                history.append(float(np.abs(Rc).max()))
                raise ConvergenceError("shooting made no progress", history)
            p0, R = cand, Rc
        history.append(float(np.abs(R).max()))
    x0 = spec.x0[I][None]
    Xs, ps = sysm.integrate(x0, p0[None], record=True)
    t = np.linspace(0.0, spec.T, steps + 1)
    return TpbvpSolution(t, Xs[:, 0], ps[:, 0], tuple(I), history[-1], it)


def time_reversal_error(spec: DetGameSpec, sol: TpbvpSolution, boundary_paths: dict | None = None) -> float:
    """Integrate back from (X(T), p(T)) and compare with (x0, p(0))."""
    sysm = _System(spec, list(sol.index_set), boundary_paths, len(sol.t) - 1)
    Xb, pb = sysm.integrate(sol.X[-1][None], sol.p[-1][None], backward=True)
    return float(max(np.abs(Xb[0] - sol.X[0]).max(), np.abs(pb[0] - sol.p[0]).max()))


def det_reduction_experiment(spec: DetGameSpec, root: int = 0, r_list=range(1, 5), steps: int = 1000,
                             tol: float = 1e-10, max_newton: int = 50, strict: bool = False) -> W2Curve:
    """Squared distance between the root's equilibrium path in the full game and
    in the game reduced to the players at distance < r (outside neighbors frozen
    at their initial positions)."""
    g = spec.graph
    table = nkh_table(g, root)
    b = spec.cost_bounds()
    th_star = theta_star(table)
    theta_all = theta_from_game(b, g)
    if theta_all > th_star:
        msg = f"smallness condition fails: theta={theta_all:.6g} > theta*={th_star:.6g}"
        if strict:
            raise InfeasibleError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    full = shoot(spec, None, None, steps, tol, max_newton)
    x_full = full.path(root)
    moment_full = lambda j: np.sum(full.path(j) ** 2, axis=1)
    moment_z = lambda j: np.full(steps + 1, float(spec.x0[j] @ spec.x0[j]))

    rows = {k: [] for k in ("r", "avg", "sup", "gr", "rhs", "theta", "res")}
    for r in r_list:
        r = int(r)
        if r < 1:
            raise ValueError("radii must be >= 1")
        theta_r, gr = _layer_constants(b, g, table, r, strict)
        if r >= table.h_star:
            a_w = s_w = rh = gr = 0.0
            res = full.residual
        else:
            red = shoot(spec, table.ball(r), None, steps, tol, max_newton)
            w = np.sum((x_full - red.path(root)) ** 2, axis=1)
            a_w, s_w = time_average(w, spec.T), float(w.max())
            rh = math.inf if math.isnan(gr) else reduction_rhs(b, table, root, r, gr, moment_full, moment_z)
            res = red.residual
        for key, v in zip(rows, (r, a_w, s_w, gr, rh, theta_r, res)):
            rows[key].append(v)
    arr = lambda x: np.array(x, dtype=float)
    return W2Curve(np.array(rows["r"], dtype=int), arr(rows["avg"]), arr(rows["sup"]), arr(rows["gr"]),
                   arr(rows["rhs"]), arr(rows["theta"]), th_star,
                   {"residual": [float(x) for x in rows["res"]]})
