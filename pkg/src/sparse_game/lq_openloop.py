"""Linear-quadratic open-loop games on a graph.

Model (player i, state x^i in R^d):
    dX^i = a^i dt + sigma^i dB^i,     running cost  kappa^i |a|^2 / 2 + f^i(x),
    f^i(x) = sum_{j in N_i} 1/2 (x^i - mu x^j)^T Q (x^i - mu x^j),
    g^i(x) = 1/2 x^iT G^i x^i.

The Hamiltonian is H^i(p) = |p|^2 / (2 kappa^i), so the equilibrium drift is
-v^i / kappa^i where v^i is the decoupling field of the Pontryagin system.

Substituting the ansatz v^i(t, x) = sum_j P^{ij}(t) x^j + q^i(t):
- second derivatives of a linear field vanish, so the diffusion term drops;
- D_x H^i = 0 and D_p H^j(p) = p / kappa^j;
- along the equilibrium flow dX = -K^{-1}(P X + q) dt + noise, the field obeys
  d/dt v^i(t, X_t) = -D_i f^i(X_t), with D_i f^i(x) = (F x)^i + c^i.
Matching the linear and constant parts in x gives

    dP/dt = P K^{-1} P - F,   P(T) = blockdiag(G^i),
    dq/dt = P K^{-1} q - c,   q(T) = 0,

with K = blockdiag(kappa^i I_d), F^{ii} = n_i Q, F^{ik} = -mu Q for k in N_i.
For a reduced game on an index set I, F is restricted to I x I and players
outside I enter only through the forcing c^i = -mu Q sum_{j in N_i \\ I} E[Z^j_t].
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .decay import (
    CostBounds, gamma_r, gamma_sequence, theta_from_game, theta_star, tilde_gamma,
)
from .errors import ConvergenceError, InfeasibleError, SolverBlowUp
from .graph import Graph, NkhTable, degrees, nkh_table

BLOWUP = 1e8
REFINE_RTOL = 1e-6


def _per_player_matrix(value, n: int, d: int, name: str) -> np.ndarray:
    """Broadcast a scalar, a d x d matrix, or a list of either to shape (n, d, d)."""
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.broadcast_to(a * np.eye(d), (n, d, d)).copy()
    if a.ndim == 1 and a.shape == (n,):
        return a[:, None, None] * np.eye(d)
    if a.shape == (d, d):
        return np.broadcast_to(a, (n, d, d)).copy()
    if a.shape == (n, d, d):
        return a.copy()
    raise ValueError(f"{name}: cannot broadcast shape {a.shape} to ({n}, {d}, {d})")


def _per_player_vector(value, n: int, d: int, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return np.full((n, d), float(a))
    if a.shape == (n,) and d == 1:
        return a[:, None].copy()
    if a.shape == (d,):
        return np.broadcast_to(a, (n, d)).copy()
    if a.shape == (n, d):
        return a.copy()
    raise ValueError(f"{name}: cannot broadcast shape {a.shape} to ({n}, {d})")


def _check_psd(m: np.ndarray, name: str, tol: float = 1e-12):
    if not np.allclose(m, np.swapaxes(m, -1, -2), atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(m)
    if np.any(ev < -tol * max(1.0, float(np.abs(ev).max(initial=0.0)))):
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LqGameSpec:
    graph: Graph
    d: int
    T: float
    kappa: np.ndarray        # (n,)
    Q: np.ndarray            # (d, d)
    mu: float
    G: np.ndarray            # (n, d, d)
    sigma: np.ndarray        # (n, d, d)
    init_mean: np.ndarray    # (n, d)
    init_cov: np.ndarray     # (n, d, d)

    def __post_init__(self):
        n, d = self.graph.n, self.d
        if d < 1 or not self.T > 0:
            raise ValueError("need d >= 1 and T > 0")
        if self.kappa.shape != (n,) or np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive, one per player")
        if not 0 <= self.mu < 1:
            raise ValueError("mu must lie in [0, 1)")
        _check_psd(self.Q, "Q")
        if np.linalg.eigvalsh(self.Q)[0] <= 0:
            raise ValueError("Q must be positive definite")
        _check_psd(self.G, "G")
        _check_psd(self.init_cov, "init_cov")
        if self.sigma.shape != (n, d, d) or self.init_mean.shape != (n, d):
            raise ValueError("sigma / init_mean have wrong shape")

    @classmethod
    def build(cls, graph: Graph, d: int = 1, T: float = 1.0, kappa=1.0, Q=1.0, mu: float = 0.0,
              G=0.0, sigma=1.0, init_mean=0.0, init_cov=1.0) -> "LqGameSpec":
        n = graph.n
        kap = np.broadcast_to(np.asarray(kappa, dtype=float), (n,)).copy()
        Qm = np.asarray(Q, dtype=float)
        Qm = Qm * np.eye(d) if Qm.ndim == 0 else Qm
        return cls(graph, int(d), float(T), kap, Qm, float(mu),
                   _per_player_matrix(G, n, d, "G"), _per_player_matrix(sigma, n, d, "sigma"),
                   _per_player_vector(init_mean, n, d, "init_mean"),
                   _per_player_matrix(init_cov, n, d, "init_cov"))

    def replace(self, **kw) -> "LqGameSpec":
        from dataclasses import replace
        return replace(self, **kw)

    @property
    def n(self) -> int:
        return self.graph.n

    def q_bounds(self) -> tuple[float, float]:
        ev = np.linalg.eigvalsh(self.Q)
        return float(ev[0]), float(ev[-1])

    def cost_bounds(self) -> CostBounds:
        """Convexity/interaction constants of the quadratic costs.

        For f^i above, (D_i f^i(x) - D_i f^i(y)).(x^i - y^i) is bounded below by
        n_i (lam - mu Lam / 2)|x^i - y^i|^2 - (mu Lam / 2) sum_j |x^j - y^j|^2,
        so K_f^i = min(lam, n_i (lam - mu Lam / 2)) is valid and l_f^i = mu Lam / 2.
        """
        lam, Lam = self.q_bounds()
        n_in, _ = degrees(self.graph)
        K_f = np.minimum(lam, np.maximum(n_in * (lam - self.mu * Lam / 2), 0.0))
        l_f = np.where(n_in > 0, self.mu * Lam / 2, 0.0)
        K_g = np.array([np.linalg.eigvalsh(g)[0] for g in self.G]).clip(min=0.0)
        return CostBounds(self.kappa.copy(), K_f, l_f, K_g, np.zeros(self.n), self.T)

    def f_value(self, i: int, x: np.ndarray) -> float:
        """Running coupling cost of player i at the joint state x (shape (n, d))."""
        tot = 0.0
        for j in self.graph.in_neighbors[i]:
            z = x[i] - self.mu * x[j]
            tot += 0.5 * z @ self.Q @ z
        return float(tot)


def assemble_F(spec: LqGameSpec, index_set=None) -> np.ndarray:
    """Block matrix of the linear part of x -> (D_i f^i(x))_i restricted to I x I."""
    I = list(range(spec.n)) if index_set is None else sorted(index_set)
    pos = {v: a for a, v in enumerate(I)}
    d = spec.d
    F = np.zeros((len(I) * d, len(I) * d))
    for a, i in enumerate(I):
        nbrs = spec.graph.in_neighbors[i]
        F[a * d:(a + 1) * d, a * d:(a + 1) * d] = len(nbrs) * spec.Q
        for k in nbrs:
            if k in pos:
                b = pos[k]
                F[a * d:(a + 1) * d, b * d:(b + 1) * d] = -spec.mu * spec.Q
    return F


# ----------------------------------------------------------------------------
# boundary processes
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryData:
    """Deterministic stand-ins for the players outside the index set.

    ``mean[j]`` has shape (steps + 1, d) on the solver grid; ``cov`` likewise
    (zero for deterministic paths).
    """
    mean: dict
    cov: dict

    @classmethod
    def frozen(cls, spec: LqGameSpec, players, steps: int) -> "BoundaryData":
        """Each outside player frozen at the mean of its initial law."""
        mean = {j: np.broadcast_to(spec.init_mean[j], (steps + 1, spec.d)).copy() for j in players}
        cov = {j: np.zeros((steps + 1, spec.d, spec.d)) for j in players}
        return cls(mean, cov)

    @classmethod
    def from_flow(cls, flow: "GaussianFlow", players) -> "BoundaryData":
        """Outside players follow the mean path of a reference flow."""
        mean = {j: flow.marginal(j)[0].copy() for j in players}
        cov = {j: np.zeros_like(flow.marginal(j)[1]) for j in players}
        return cls(mean, cov)

    def second_moment(self, j: int) -> np.ndarray:
        m = self.mean[j]
        return np.einsum("td,td->t", m, m) + np.trace(self.cov[j], axis1=1, axis2=2)


def outside_neighbors(g: Graph, index_set) -> list[int]:
    I = set(index_set)
    return sorted({j for i in I for j in g.in_neighbors[i] if j not in I})


def _forcing(spec: LqGameSpec, I: list[int], boundary: BoundaryData | None, steps: int) -> np.ndarray | None:
    """c(t_m) on the grid, shape (steps + 1, |I| d); None when identically zero."""
    if boundary is None or spec.mu == 0:
        return None
    Iset = set(I)
    d = spec.d
    c = np.zeros((steps + 1, len(I) * d))
    hit = False
    for a, i in enumerate(I):
        for j in spec.graph.in_neighbors[i]:
            if j in Iset:
                continue
            if j not in boundary.mean:
                raise ValueError(f"boundary data missing for player {j}")
            c[:, a * d:(a + 1) * d] -= spec.mu * boundary.mean[j] @ spec.Q.T
            hit = True
    return c if hit and np.any(c) else None


# ----------------------------------------------------------------------------
# Riccati system
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RiccatiSolution:
    t: np.ndarray                 # (M+1,)
    P: np.ndarray                 # (M+1, nI d, nI d)
    q: np.ndarray                 # (M+1, nI d)
    index_set: tuple[int, ...]
    d: int
    kinv: np.ndarray = field(repr=False)   # diagonal of K^{-1}, (nI d,)
    F: np.ndarray = field(repr=False)
    c: np.ndarray | None = field(repr=False, default=None)

    def block(self, i: int, j: int) -> np.ndarray:
        """Path of D_j v^i, shape (M+1, d, d)."""
        a, b = self.index_set.index(i), self.index_set.index(j)
        d = self.d
        return self.P[:, a * d:(a + 1) * d, b * d:(b + 1) * d]

    def dP(self, m: int) -> np.ndarray:
        P = self.P[m]
        return (P * self.kinv) @ P - self.F

    def dq(self, m: int) -> np.ndarray:
        out = (self.P[m] * self.kinv) @ self.q[m]
        return out if self.c is None else out - self.c[m]


def _kinv(spec: LqGameSpec, I) -> np.ndarray:
    return np.repeat(1.0 / spec.kappa[list(I)], spec.d)


def _interp_linear(c: np.ndarray | None, m: int, frac: float):
    if c is None:
        return None
    return (1 - frac) * c[m] + frac * c[m + 1]


def riccati_solve(spec: LqGameSpec, index_set=None, boundary: BoundaryData | None = None,
                  steps: int = 2000) -> RiccatiSolution:
    """Backward RK4 for (P, q) on a uniform grid of ``steps`` intervals."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    I = list(range(spec.n)) if index_set is None else sorted(index_set)
    if len(I) < spec.n and outside_neighbors(spec.graph, I) and spec.mu != 0 and boundary is None:
        raise ValueError("boundary data required for a reduced index set")
    d = spec.d
    nI = len(I) * d
    F = assemble_F(spec, I)
    kinv = _kinv(spec, I)
    c = _forcing(spec, I, boundary, steps)
    h = spec.T / steps

    def rhs_P(P):
        return (P * kinv) @ P - F

    def rhs_q(P, q, cc):
        out = (P * kinv) @ q
        return out if cc is None else out - cc

    P = np.zeros((steps + 1, nI, nI))
    q = np.zeros((steps + 1, nI))
    PT = np.zeros((nI, nI))
    for a, i in enumerate(I):
        PT[a * d:(a + 1) * d, a * d:(a + 1) * d] = spec.G[i]
    P[steps] = PT
    for m in range(steps, 0, -1):
        Pm, qm = P[m], q[m]
        # stepping from t_m to t_{m-1} with step -h
        k1 = rhs_P(Pm)
        k2 = rhs_P(Pm - 0.5 * h * k1)
        k3 = rhs_P(Pm - 0.5 * h * k2)
        k4 = rhs_P(Pm - h * k3)
        P[m - 1] = Pm - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if c is not None:
            cm, cmid, cp = c[m], _interp_linear(c, m - 1, 0.5), c[m - 1]
            l1 = rhs_q(Pm, qm, cm)
            l2 = rhs_q(Pm - 0.5 * h * k1, qm - 0.5 * h * l1, cmid)
            l3 = rhs_q(Pm - 0.5 * h * k2, qm - 0.5 * h * l2, cmid)
            l4 = rhs_q(Pm - h * k3, qm - h * l3, cp)
            q[m - 1] = qm - h / 6 * (l1 + 2 * l2 + 2 * l3 + l4)
        if not (np.all(np.isfinite(P[m - 1])) and np.abs(P[m - 1]).max() <= BLOWUP
                and np.abs(q[m - 1]).max(initial=0.0) <= BLOWUP):
            raise SolverBlowUp(f"Riccati solution exceeded {BLOWUP:g} at t={(m - 1) * h:.6g}")
    t = np.linspace(0.0, spec.T, steps + 1)
    return RiccatiSolution(t, P, q, tuple(I), d, kinv, F, c)


# ----------------------------------------------------------------------------
# Gaussian flow
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianFlow:
    t: np.ndarray          # (M+1,)
    mean: np.ndarray       # (M+1, nI d)
    cov: np.ndarray        # (M+1, nI d, nI d)
    index_set: tuple[int, ...]
    d: int

    def marginal(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        a = self.index_set.index(i)
        s = slice(a * self.d, (a + 1) * self.d)
        return self.mean[:, s], self.cov[:, s, s]

    def second_moment(self, i: int) -> np.ndarray:
        m, S = self.marginal(i)
        return np.einsum("td,td->t", m, m) + np.trace(S, axis1=1, axis2=2)


def _hermite_mid(y0, y1, dy0, dy1, h):
    return 0.5 * (y0 + y1) + h * (dy0 - dy1) / 8


def gaussian_flow(spec: LqGameSpec, sol: RiccatiSolution, init_mean=None, init_cov=None) -> GaussianFlow:
    """Forward RK4 for the mean and joint covariance of the equilibrium states.

    With A(t) = -K^{-1} P(t): dm/dt = A m - K^{-1} q, dS/dt = A S + S A^T + Sigma.
    Off-grid values of P and q come from cubic Hermite interpolation using the
    Riccati right-hand sides, which keeps the scheme fourth order.
    """
    I = list(sol.index_set)
    d = spec.d
    nI = len(I) * d
    im = spec.init_mean if init_mean is None else init_mean
    ic = spec.init_cov if init_cov is None else init_cov
    Sig = np.zeros((nI, nI))
    m0 = np.zeros(nI)
    S0 = np.zeros((nI, nI))
    for a, i in enumerate(I):
        s = slice(a * d, (a + 1) * d)
        Sig[s, s] = spec.sigma[i] @ spec.sigma[i].T
        m0[s] = im[i]
        S0[s, s] = ic[i]
    kinv = sol.kinv
    steps = len(sol.t) - 1
    h = spec.T / steps
    has_q = sol.c is not None

    def rhs(P, q, m, S):
        A = -(kinv[:, None] * P)
        dm = A @ m
        if has_q:
            dm = dm - kinv * q
        AS = A @ S
        return dm, AS + AS.T + Sig

    mean = np.zeros((steps + 1, nI))
    cov = np.zeros((steps + 1, nI, nI))
    mean[0], cov[0] = m0, S0
    dP_prev, dq_prev = sol.dP(0), (sol.dq(0) if has_q else None)
    for m in range(steps):
        P0, P1 = sol.P[m], sol.P[m + 1]
        dP_next = sol.dP(m + 1)
        Pmid = _hermite_mid(P0, P1, dP_prev, dP_next, h)
        if has_q:
            dq_next = sol.dq(m + 1)
            q0, q1 = sol.q[m], sol.q[m + 1]
            qmid = _hermite_mid(q0, q1, dq_prev, dq_next, h)
        else:
            q0 = q1 = qmid = None
        x, S = mean[m], cov[m]
        a1, b1 = rhs(P0, q0, x, S)
        a2, b2 = rhs(Pmid, qmid, x + 0.5 * h * a1, S + 0.5 * h * b1)
        a3, b3 = rhs(Pmid, qmid, x + 0.5 * h * a2, S + 0.5 * h * b2)
        a4, b4 = rhs(P1, q1, x + h * a3, S + h * b3)
        mean[m + 1] = x + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        Sn = S + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        Sn = 0.5 * (Sn + Sn.T)
        tr = np.trace(Sn)
        if tr > 0 and np.linalg.eigvalsh(Sn)[0] < -1e-8 * tr:
            raise SolverBlowUp(f"covariance lost positive semidefiniteness at t={(m + 1) * h:.6g}")
        if not np.all(np.isfinite(Sn)) or np.abs(mean[m + 1]).max(initial=0.0) > BLOWUP:
            raise SolverBlowUp(f"state flow exceeded {BLOWUP:g} at t={(m + 1) * h:.6g}")
        cov[m + 1] = Sn
        dP_prev = dP_next
        if has_q:
            dq_prev = dq_next
    return GaussianFlow(sol.t.copy(), mean, cov, tuple(I), d)


# ----------------------------------------------------------------------------
# Wasserstein distance between Gaussians
# ----------------------------------------------------------------------------

def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    tol = 1e-12 * max(float(np.abs(w).sum()), 1e-300)
    if w[0] < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def w2_gaussian_sq(m1, S1, m2, S2) -> float:
    """Squared 2-Wasserstein distance between N(m1, S1) and N(m2, S2)."""
    m1, m2 = np.atleast_1d(np.asarray(m1, dtype=float)), np.atleast_1d(np.asarray(m2, dtype=float))
    S1, S2 = np.atleast_2d(np.asarray(S1, dtype=float)), np.atleast_2d(np.asarray(S2, dtype=float))
    dm = float(np.sum((m1 - m2) ** 2))
    if S1.shape == (1, 1):
        a, b = S1[0, 0], S2[0, 0]
        if min(a, b) < -1e-12 * max(abs(a), abs(b), 1e-300):
            raise ValueError("variance must be non-negative")
        a, b = max(a, 0.0), max(b, 0.0)
        sa, sb = math.sqrt(a), math.sqrt(b)
        # (sqrt a - sqrt b)^2 written to avoid cancellation
        return dm + ((a - b) / (sa + sb)) ** 2 if sa + sb > 0 else dm
    r1 = _psd_sqrt(S1)
    cross = _psd_sqrt(r1 @ S2 @ r1)
    return dm + max(float(np.trace(S1) + np.trace(S2) - 2 * np.trace(cross)), 0.0)


def w2_gaussian(m1, S1, m2, S2) -> float:
    return math.sqrt(w2_gaussian_sq(m1, S1, m2, S2))


def w2_path_sq(flow_a: GaussianFlow, i: int, flow_b: GaussianFlow, j: int | None = None) -> np.ndarray:
    ma, Sa = flow_a.marginal(i)
    mb, Sb = flow_b.marginal(i if j is None else j)
    return np.array([w2_gaussian_sq(ma[k], Sa[k], mb[k], Sb[k]) for k in range(len(ma))])


def time_average(values: np.ndarray, T: float) -> float:
    """(1/T) * trapezoid integral over the uniform grid."""
    v = np.asarray(values, dtype=float)
    h = T / (len(v) - 1)
    return float(h * (v.sum() - 0.5 * (v[0] + v[-1])) / T)


# ----------------------------------------------------------------------------
# solves with self-refinement
# ----------------------------------------------------------------------------

def _boundary_for(spec, I, policy, steps, full_flow=None):
    players = outside_neighbors(spec.graph, I)
    if policy == "frozen":
        return BoundaryData.frozen(spec, players, steps)
    if policy == "full_mean":
        if full_flow is None:
            raise ValueError("full_mean policy needs the full flow")
        return BoundaryData.from_flow(full_flow, players)
    raise ValueError(f"unknown boundary policy {policy!r}")


def solve_game(spec: LqGameSpec, index_set=None, boundary_policy: str = "frozen", steps: int = 2000,
               check: bool = True, full_flows: tuple | None = None, init_mean=None):
    """Riccati + flow, optionally confirmed against a run at twice the steps.

    Returns ``(sol, flow, boundary)``.  ``full_flows`` supplies the full-game flows
    at ``steps`` and ``2*steps`` when the boundary follows the full game.
    """
    def once(M, ff):
        b = _boundary_for(spec, index_set, boundary_policy, M, ff) if index_set is not None else None
        s = riccati_solve(spec, index_set, b, M)
        return s, gaussian_flow(spec, s, init_mean=init_mean), b

    sol, flow, b = once(steps, full_flows[0] if full_flows else None)
    if check:
        sol2, flow2, _ = once(2 * steps, full_flows[1] if full_flows else None)
        change = max(
            _rel_change(sol.P, sol2.P[::2]),
            _rel_change(flow.mean, flow2.mean[::2]),
            _rel_change(flow.cov, flow2.cov[::2]),
        )
        if change >= REFINE_RTOL:
            raise ConvergenceError(
                f"step refinement changed the solution by {change:.3g} (>= {REFINE_RTOL:g}); increase steps",
                [change])
    return sol, flow, b


def _rel_change(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


# ----------------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class W2Curve:
    r: np.ndarray
    avg_w2_sq: np.ndarray
    sup_w2_sq: np.ndarray
    gamma_r: np.ndarray
    rhs: np.ndarray
    theta: np.ndarray
    theta_star: float
    extra: dict = field(default_factory=dict)

    COLUMNS = ("r", "avg_w2_sq", "sup_w2_sq", "gamma_r", "rhs", "theta", "theta_star")

    def rows(self) -> list[list]:
        out = []
        for a in range(len(self.r)):
            row = [int(self.r[a]), float(self.avg_w2_sq[a]), float(self.sup_w2_sq[a]),
                   float(self.gamma_r[a]), float(self.rhs[a]), float(self.theta[a]), float(self.theta_star)]
            out.append(row + [self.extra[k][a] for k in sorted(self.extra)])
        return out

    def columns(self) -> list[str]:
        return list(self.COLUMNS) + sorted(self.extra)

    def to_json_dict(self) -> dict:
        return {c: [row[a] for row in self.rows()] for a, c in enumerate(self.columns())}


def reduction_rhs(b: CostBounds, table: NkhTable, root: int, r: int, gamma_rr: float,
                  moment_full, moment_boundary) -> float:
    """Bound on the time-averaged squared gap of the root implied by the r-step
    decay estimate, with every boundary gap bounded by twice the sum of second
    moments of the two laws being compared."""
    if r >= table.h_star or gamma_rr == 0:
        return 0.0
    alpha, beta = b.rhs_weights()
    tot = 0.0
    for j in table.layers[r]:
        tot += 2 * (alpha[j] + beta[j]) * float(np.max(moment_full(j) + moment_boundary(j)))
    return gamma_rr * tot / beta[root]


def _layer_constants(b, g, table, r, strict):
    """theta on the ball of radius r, and gamma^(r) (nan when infeasible)."""
    I = table.ball(r) if r < table.h_star else list(table.layer_of)
    theta = theta_from_game(b, g, I)
    if theta == 0:
        return theta, (1.0 if r == 0 else 0.0)
    try:
        return theta, gamma_r(gamma_sequence(table, theta, min(r, table.h_star)))
    except InfeasibleError:
        if strict:
            raise
        return theta, math.nan


def reduction_experiment(spec: LqGameSpec, root: int = 0, r_list=range(1, 9), boundary_policy: str = "frozen",
                         steps: int = 2000, check: bool = True, strict: bool = False) -> W2Curve:
    """Gap between the root's equilibrium law in the full game and in the game
    reduced to the players at distance < r, for each r in ``r_list``."""
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

    need_fine = check and boundary_policy == "full_mean"
    sol_f, flow_f, _ = solve_game(spec, None, steps=steps, check=check)
    full_flows = (flow_f, solve_game(spec, None, steps=2 * steps, check=False)[1]) if need_fine else (flow_f, None)

    rs, avg, sup, grs, rhs, thetas = [], [], [], [], [], []
    for r in r_list:
        r = int(r)
        if r < 0:
            raise ValueError("radii must be non-negative")
        theta_r, gr = _layer_constants(b, g, table, r, strict)
        if r >= table.h_star:
            a_w, s_w, rh, gr = 0.0, 0.0, 0.0, 0.0
        else:
            if r == 0:
                raise ValueError("r = 0 leaves no players in the reduced game")
            I = table.ball(r)
            _, flow_r, bnd = solve_game(spec, I, boundary_policy, steps, check, full_flows)
            w = w2_path_sq(flow_f, root, flow_r)
            a_w, s_w = time_average(w, spec.T), float(w.max())
            rh = (math.inf if math.isnan(gr) else
                  reduction_rhs(b, table, root, r, gr, flow_f.second_moment, bnd.second_moment))
        rs.append(r); avg.append(a_w); sup.append(s_w); grs.append(gr); rhs.append(rh); thetas.append(theta_r)
    arr = lambda x: np.array(x, dtype=float)
    return W2Curve(np.array(rs, dtype=int), arr(avg), arr(sup), arr(grs), arr(rhs), arr(thetas), th_star)


@dataclass(frozen=True)
class DvDecay:
    rows: list             # (k, distance or -1, max_t ||P^{root k}||_op)
    by_distance: dict      # distance -> max over k at that distance
    slope: float           # least-squares slope of log(by_distance) vs distance, distances >= 1


def dv_decay_report(sol: RiccatiSolution, table: NkhTable) -> DvDecay:
    """Size of the sensitivity of the root's decoupling field to each player."""
    root = table.root
    rows = []
    by_d: dict[int, float] = {}
    for k in sol.index_set:
        blk = sol.block(root, k)
        val = float(max(np.linalg.norm(B, 2) for B in blk))
        dist = table.layer_of.get(k, -1)
        rows.append((k, dist, val))
        if dist >= 0:
            by_d[dist] = max(by_d.get(dist, 0.0), val)
    pts = [(dd, math.log(v)) for dd, v in sorted(by_d.items()) if dd >= 1 and v > 0]
    if len(pts) >= 2:
        x, y = np.array(pts).T
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = math.nan
    return DvDecay(rows, dict(sorted(by_d.items())), slope)


def row_norm_sup(sol: RiccatiSolution, i: int) -> float:
    """max_t sum_j ||D_j v^i(t)||_op."""
    blocks = [sol.block(i, j) for j in sol.index_set]
    return float(np.max(sum(np.linalg.norm(B, 2, axis=(1, 2)) for B in blocks)))


def perturbation_experiment(spec: LqGameSpec, k: int, new_mean=None, new_cov=None, root: int = 0,
                            steps: int = 2000, check: bool = True) -> dict:
    """Effect on the root of changing player k's initial law.

    The bound side is max(1/alpha_0, T/beta_0) * tilde_gamma^(r) *
    (2 kappa^k + T ||Dv^k||) * W2^2(old_k, new_k), where r = dist(root, k) and
    tilde_gamma is evaluated with the interaction level obtained after halving
    every kappa (the weight the source player carries in the recursion).
    """
    if k == root:
        raise ValueError("perturbed player must differ from the root")
    table = nkh_table(spec.graph, root)
    if k not in table.layer_of:
        raise ValueError(f"player {k} is not reachable from the root")
    r = table.layer_of[k]
    im = spec.init_mean.copy()
    ic = spec.init_cov.copy()
    if new_mean is not None:
        im[k] = np.asarray(new_mean, dtype=float)
    if new_cov is not None:
        ic[k] = np.asarray(new_cov, dtype=float)

    sol, flow, _ = solve_game(spec, None, steps=steps, check=check)
    flow2 = gaussian_flow(spec, sol, init_mean=im, init_cov=ic)
    w = w2_path_sq(flow, root, flow2)
    w_T = float(w[-1])
    integral = time_average(w, spec.T) * spec.T
    w0 = w2_gaussian_sq(spec.init_mean[k], spec.init_cov[k], im[k], ic[k])

    b = spec.cost_bounds()
    alpha, beta = b.rhs_weights()
    theta_h = theta_from_game(b.with_kappa_scaled(0.5), spec.graph)
    if theta_h == 0:
        tg = 0.0
    else:
        tg = tilde_gamma(table, theta_h, r)[1] if r < table.h_star else 0.0
    dv_norm = row_norm_sup(sol, k)
    weight = max(1 / alpha[root], spec.T / beta[root]) * (2 * spec.kappa[k] + spec.T * dv_norm)
    bound = weight * tg * w0
    lhs = w_T + integral
    ratio = lhs / bound if bound > 0 else (0.0 if lhs == 0 else math.inf)
    out = {"r": r, "w2_sq_T": w_T, "int_w2_sq": integral, "lhs": lhs, "w2_sq_init": w0,
           "theta": theta_h, "tilde_gamma_r": tg, "dv_norm": dv_norm, "bound": bound, "ratio": ratio}
    return {key: (v if key == "r" else float(v)) for key, v in out.items()}
