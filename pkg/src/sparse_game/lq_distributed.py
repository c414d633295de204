"""Linear-quadratic games with distributed (own-state feedback) strategies.

Each player solves an HJB equation in its own state against the law of the
others.  With f^i(x) = sum_{j in N_i} 1/2 (x^i - mu x^j)^T Q (x^i - mu x^j), the
averaged cost seen by player i is

    F^i(x) = n_i/2 x^T Q x - mu x^T Q sum_{j in N_i} E[X^j_t] + (terms free of x),

so only the neighbors' mean paths enter the drift.  The quadratic ansatz
w^i = 1/2 x^T K^i x + k^i.x + c^i in -dw/dt - 1/2 tr(Sigma D^2 w) + |Dw|^2/(2 kappa) = F^i gives

    dK^i/dt = K^i K^i / kappa^i - n_i Q,               K^i(T) = G^i,
    dk^i/dt = K^i k^i / kappa^i + mu Q sum_j E[X^j_t],  k^i(T) = 0,

and the feedback drift -(K^i x + k^i) / kappa^i moves the Gaussian law by

    dm^i/dt = -(K^i m^i + k^i) / kappa^i,   dS^i/dt = -(K^i S^i + S^i K^i) / kappa^i + Sigma^i.

c^i does not affect the drift and is not computed.  K^i and S^i do not depend
on the other players, so the equilibrium is a fixed point over mean paths alone,
found by damped Picard iteration.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .decay import theta_from_game, theta_star
from .errors import ConvergenceError, InfeasibleError, SolverBlowUp
from .graph import nkh_table
from .lq_openloop import (
    BLOWUP, REFINE_RTOL, BoundaryData, LqGameSpec, W2Curve, _hermite_mid, _layer_constants,
    outside_neighbors, reduction_rhs, time_average, w2_gaussian_sq,
)


@dataclass(frozen=True)
class DistributedValue:
    t: np.ndarray
    K: np.ndarray          # (M+1, nI, d, d)
    k: np.ndarray          # (M+1, nI, d)
    index_set: tuple[int, ...]


@dataclass(frozen=True)
class MeanFieldIterate:
    t: np.ndarray
    mean: np.ndarray       # (M+1, nI, d)
    cov: np.ndarray        # (M+1, nI, d, d); players are independent
    index_set: tuple[int, ...]
    iterations: int
    residual: float
    history: list = field(repr=False, default_factory=list)

    def marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.index_set.index(i)
        return self.mean[:, a], self.cov[:, a]

    def second_moment(self, i: int) -> np.ndarray:
        m, S = self.marginal(i)
        return np.einsum("td,td->t", m, m) + np.trace(S, axis1=1, axis2=2)


def hjb_forcing(spec: LqGameSpec, index_set, means: np.ndarray, boundary: BoundaryData | None) -> np.ndarray:
    """mu Q sum_{j in N_i} E[X^j_t] for every i in the index set.

    ``means`` has shape (M+1, nI, d) aligned with ``index_set``; players outside
    the set are read from ``boundary``.  Only the listed neighbors are touched.
    """
    I = list(index_set)
    pos = {v: a for a, v in enumerate(I)}
    out = np.zeros_like(means)
    if spec.mu == 0:
        return out
    for a, i in enumerate(I):
        for j in spec.graph.in_neighbors[i]:
            if j in pos:
                out[:, a] += means[:, pos[j]]
            else:
                if boundary is None or j not in boundary.mean:
                    raise ValueError(f"boundary data missing for player {j}")
                out[:, a] += boundary.mean[j]
    return spec.mu * out @ spec.Q.T


def _bmv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


def _rk4_linear_step(A0, Am, A1, tau):
    """Propagator of one RK4 step for y' = A(t) y, batched over leading axes."""
    eye = np.broadcast_to(np.eye(A0.shape[-1]), A0.shape)
    k1 = A0
    k2 = Am @ (eye + 0.5 * tau * k1)
    k3 = Am @ (eye + 0.5 * tau * k2)
    k4 = A1 @ (eye + tau * k3)
    return eye + tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_source_step(Am, A1, s0, sm, s1, tau):
    """Contribution of the source s to one RK4 step of y' = A(t) y + s(t) from y = 0."""
    k1 = s0
    k2 = _bmv(Am, 0.5 * tau * k1) + sm
    k3 = _bmv(Am, 0.5 * tau * k2) + sm
    k4 = _bmv(A1, tau * k3) + s1
    return tau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _affine_recurrence(R, U, y0, reverse: bool):
    """y_{next} = R_m y + U_m along the grid, forward or backward."""
    M = R.shape[0]
    out = np.zeros((M + 1,) + y0.shape)
    scalar = R.shape[-1] == 1
    Rs = R[..., 0, 0] if scalar else R
    order = range(M - 1, -1, -1) if reverse else range(M)
    y = y0.copy()
    out[M if reverse else 0] = y
    for m in order:
        y = (Rs[m][:, None] * y if scalar else _bmv(Rs[m], y)) + U[m]
        out[m if reverse else m + 1] = y
    return out


class _Sweep:
    """Precomputed pieces of one best-response map m -> Phi(m).

    The value offset k and the mean solve linear ODEs whose coefficients do not
    change across sweeps, so their RK4 step propagators are built once; a sweep
    only assembles the source terms and runs two affine recurrences.
    """

    def __init__(self, spec: LqGameSpec, I: list[int], boundary: BoundaryData | None, steps: int):
        self.spec, self.I, self.boundary, self.steps = spec, I, boundary, steps
        h = self.h = spec.T / steps
        self.kinv = (1.0 / spec.kappa[I])[:, None, None]
        n_in = np.array([len(spec.graph.in_neighbors[i]) for i in I], dtype=float)
        self.nQ = n_in[:, None, None] * spec.Q
        self.Sig = np.einsum("nij,nkj->nik", spec.sigma[I], spec.sigma[I])
        self.K = self._riccati(spec.G[I].copy())
        self.dK = self._dK(self.K)
        K, dK = self.K, self.dK
        self.Kmid = _hermite_mid(K[:-1], K[1:], dK[:-1], dK[1:], h)
        # offset: k' = (K / kappa) k + s, integrated from T backward
        Ak = K * self.kinv
        self.Ak = Ak
        self.Ak_mid = self.Kmid * self.kinv
        self.R_back = _rk4_linear_step(Ak[1:], self.Ak_mid, Ak[:-1], -h)
        # mean: m' = -(K / kappa) m - k / kappa
        self.R_fwd = _rk4_linear_step(-Ak[:-1], -self.Ak_mid, -Ak[1:], h)
        self.S = self._covariance(spec.init_cov[I].copy())
        self.b_slope = None
        if boundary is not None:
            self.b_slope = BoundaryData({j: np.gradient(m, h, axis=0) for j, m in boundary.mean.items()},
                                        boundary.cov)
        self.coupled = spec.mu != 0 and any(spec.graph.in_neighbors[i] for i in I)

    def _dK(self, K):
        return K @ K * self.kinv - self.nQ

    def _riccati(self, KT):
        h, M = self.h, self.steps
        K = np.zeros((M + 1,) + KT.shape)
        K[M] = KT
        f = self._dK
        for m in range(M, 0, -1):
            x = K[m]
            k1 = f(x)
            k2 = f(x - 0.5 * h * k1)
            k3 = f(x - 0.5 * h * k2)
            k4 = f(x - h * k3)
            K[m - 1] = x - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(K[m - 1])) or np.abs(K[m - 1]).max() > BLOWUP:
                raise SolverBlowUp(f"HJB Riccati exceeded {BLOWUP:g}")
        return K

    def _covariance(self, S0):
        h, M = self.h, self.steps
        S = np.zeros((M + 1,) + S0.shape)
        S[0] = S0

        def f(K, s):
            KS = K @ s * self.kinv
            return -(KS + np.swapaxes(KS, -1, -2)) + self.Sig

        for m in range(M):
            s = S[m]
            a1 = f(self.K[m], s)
            a2 = f(self.Kmid[m], s + 0.5 * h * a1)
            a3 = f(self.Kmid[m], s + 0.5 * h * a2)
            a4 = f(self.K[m + 1], s + h * a3)
            S[m + 1] = s + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        return S

    def __call__(self, mean: np.ndarray, dmean: np.ndarray):
        """Best-response mean paths (and their slopes) given the others' mean paths."""
        spec, h = self.spec, self.h
        kin = self.kinv[:, :, 0]
        s = hjb_forcing(spec, self.I, mean, self.boundary)
        ds = hjb_forcing(spec, self.I, dmean, self.b_slope)
        smid = _hermite_mid(s[:-1], s[1:], ds[:-1], ds[1:], h)
        U = _rk4_source_step(self.Ak_mid, self.Ak[:-1], s[1:], smid, s[:-1], -h)
        k = _affine_recurrence(self.R_back, U, np.zeros_like(mean[0]), reverse=True)
        dk = _bmv(self.Ak, k) + s
        kmid = _hermite_mid(k[:-1], k[1:], dk[:-1], dk[1:], h)
        V = _rk4_source_step(-self.Ak_mid, -self.Ak[1:], -k[:-1] * kin, -kmid * kin, -k[1:] * kin, h)
        new = _affine_recurrence(self.R_fwd, V, spec.init_mean[self.I], reverse=False)
        if not np.all(np.isfinite(new)) or np.abs(new).max() > BLOWUP:
            raise SolverBlowUp(f"mean flow exceeded {BLOWUP:g}")
        dnew = -(_bmv(self.K, new) + k) * kin
        return new, dnew, k


def initial_guess(spec: LqGameSpec, I, steps: int, kind: str = "initial") -> np.ndarray:
    if kind == "zeros":
        return np.zeros((steps + 1, len(I), spec.d))
    if kind == "initial":
        return np.broadcast_to(spec.init_mean[list(I)], (steps + 1, len(I), spec.d)).copy()
    raise ValueError(f"unknown initial guess {kind!r}")


def distributed_fixed_point(spec: LqGameSpec, index_set=None, boundary: BoundaryData | None = None,
                            damping: float = 0.5, tol: float = 1e-10, max_iter: int = 500,
                            steps: int = 2000, guess="initial") -> tuple[DistributedValue, MeanFieldIterate]:
    """Damped Picard iteration m <- m + damping * (Phi(m) - m) over mean paths."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if not tol > 0 or max_iter < 1:
        raise ValueError("need tol > 0 and max_iter >= 1")
    I = list(range(spec.n)) if index_set is None else sorted(index_set)
    if len(I) < spec.n and spec.mu != 0 and outside_neighbors(spec.graph, I) and boundary is None:
        raise ValueError("boundary data required for a reduced index set")
    sweep = _Sweep(spec, I, boundary, steps)
    mean = initial_guess(spec, I, steps, guess) if isinstance(guess, str) else np.array(guess, dtype=float)
    dmean = np.zeros_like(mean) if isinstance(guess, str) else np.gradient(mean, spec.T / steps, axis=0)

    history: list[float] = []
    it = 0
    while True:
        it += 1
        new, dnew, k = sweep(mean, dmean)
        res = float(np.abs(new - mean).max())
        history.append(res)
        if not sweep.coupled or res < tol:
            mean = new
            break
        if it >= max_iter:
            raise ConvergenceError(f"Picard iteration stalled at residual {res:.3g} after {it} sweeps", history)
        mean = mean + damping * (new - mean)
        dmean = dmean + damping * (dnew - dmean)
    if len(history) > 6 and np.any(np.diff(history[5:]) > 0):
        warnings.warn("Picard residual was not monotone after the first sweeps", RuntimeWarning, stacklevel=2)
    t = np.linspace(0.0, spec.T, steps + 1)
    value = DistributedValue(t, sweep.K, k, tuple(I))
    mf = MeanFieldIterate(t, mean, sweep.S, tuple(I), it, history[-1], history)
    return value, mf


def _solve(spec, I, policy, steps, damping, tol, max_iter, check, full=None):
    def once(M, ref):
        b = None
        if I is not None:
            players = outside_neighbors(spec.graph, I)
            if policy == "frozen":
                b = BoundaryData.frozen(spec, players, M)
            elif policy == "full_mean":
                b = BoundaryData({j: ref.marginal(j)[0].copy() for j in players},
                                 {j: np.zeros((M + 1, spec.d, spec.d)) for j in players})
            else:
                raise ValueError(f"unknown boundary policy {policy!r}")
        return distributed_fixed_point(spec, I, b, damping, tol, max_iter, M)[1], b

    mf, b = once(steps, full[0] if full else None)
    if check:
        mf2, _ = once(2 * steps, full[1] if full else None)
        scale = max(1.0, float(np.abs(mf2.mean).max()))
        change = max(float(np.abs(mf.mean - mf2.mean[::2]).max()) / scale,
                     float(np.abs(mf.cov - mf2.cov[::2]).max()) / max(1.0, float(np.abs(mf2.cov).max())))
        if change >= REFINE_RTOL:
            raise ConvergenceError(f"step refinement changed the solution by {change:.3g}", [change])
    return mf, b


def distributed_reduction_experiment(spec: LqGameSpec, root: int = 0, r_list=range(1, 9),
                                     boundary_policy: str = "frozen", steps: int = 2000, damping: float = 0.5,
                                     tol: float = 1e-10, max_iter: int = 500, check: bool = True,
                                     strict: bool = False) -> W2Curve:
    """Same comparison as the open-loop reduction, with both games played in
    distributed strategies."""
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

    full, _ = _solve(spec, None, boundary_policy, steps, damping, tol, max_iter, check)
    full_fine = None
    if check and boundary_policy == "full_mean":
        full_fine, _ = _solve(spec, None, boundary_policy, 2 * steps, damping, tol, max_iter, False)
    m_f, S_f = full.marginal(root)

    rows = {k: [] for k in ("r", "avg", "sup", "gr", "rhs", "theta", "it")}
    for r in r_list:
        r = int(r)
        if r < 1:
            raise ValueError("radii must be >= 1")
        theta_r, gr = _layer_constants(b, g, table, r, strict)
        if r >= table.h_star:
            a_w = s_w = rh = gr = 0.0
            its = full.iterations
        else:
            red, bnd = _solve(spec, table.ball(r), boundary_policy, steps, damping, tol, max_iter, check,
                              (full, full_fine))
            m_r, S_r = red.marginal(root)
            w = np.array([w2_gaussian_sq(m_f[t], S_f[t], m_r[t], S_r[t]) for t in range(len(m_f))])
            a_w, s_w = time_average(w, spec.T), float(w.max())
            rh = (math.inf if math.isnan(gr) else
                  reduction_rhs(b, table, root, r, gr, full.second_moment, bnd.second_moment))
            its = red.iterations
        for key, v in zip(rows, (r, a_w, s_w, gr, rh, theta_r, its)):
            rows[key].append(v)
    arr = lambda x: np.array(x, dtype=float)
    return W2Curve(np.array(rows["r"], dtype=int), arr(rows["avg"]), arr(rows["sup"]), arr(rows["gr"]),
                   arr(rows["rhs"]), arr(rows["theta"]), th_star, {"iterations": [int(x) for x in rows["it"]]})
