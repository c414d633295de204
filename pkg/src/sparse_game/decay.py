"""Decay constants for the reduction estimates.

Given the layer table of a root, the recursion

    gamma_h = gamma * S(h+1, h) / (1 - gamma * D_h),
    D_h     = sum_{i<=h} S(i, h) * prod_{i<=j<h} gamma_j,

with ``S(l, h) = max_{k in layer l} N_k^h`` (0 over an empty layer), turns a
one-step interaction bound ``C^i <= gamma * sum_{j~i} C^j`` into the r-step bound
``C^root <= gamma^(r) * sum_{layer r} C^j`` with ``gamma^(r) = prod_{h<r} gamma_h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError
from .graph import Graph, NkhTable, nkh_table

BISECTION_ITERS = 60


@dataclass(frozen=True)
class CostBounds:
    """Per-player convexity/interaction constants of the running and terminal costs."""
    kappa: np.ndarray
    K_f: np.ndarray
    l_f: np.ndarray
    K_g: np.ndarray
    l_g: np.ndarray
    T: float

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float) for k in ("kappa", "K_f", "l_f", "K_g", "l_g")]
        n = arrs[0].shape
        if any(a.shape != n or a.ndim != 1 for a in arrs):
            raise ValueError("cost bounds must be 1-D arrays of equal length")
        if np.any(arrs[0] <= 0):
            raise ValueError("kappa must be positive")
        if any(np.any(a < 0) for a in arrs[1:]):
            raise ValueError("K_f, l_f, K_g, l_g must be non-negative")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")
        for k, a in zip(("kappa", "K_f", "l_f", "K_g", "l_g"), arrs):
            object.__setattr__(self, k, a)

    @classmethod
    def uniform(cls, n: int, T: float, kappa=1.0, K_f=0.0, l_f=0.0, K_g=0.0, l_g=0.0) -> "CostBounds":
        full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
        return cls(full(kappa), full(K_f), full(l_f), full(K_g), full(l_g), float(T))

    def rhs_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights ``alpha_j`` (terminal gap) and ``beta_j`` (time-averaged gap)."""
        alpha = self.kappa / 8 + self.K_g * self.T
        beta = self.kappa / 8 + self.K_f * self.T ** 2
        return alpha, beta

    def with_kappa_scaled(self, factor: float) -> "CostBounds":
        return CostBounds(self.kappa * factor, self.K_f, self.l_f, self.K_g, self.l_g, self.T)


def _ratio(num: float, den: float) -> float:
    if num == 0:
        return 0.0
    return math.inf if den <= 0 else num / den


def theta_from_game(b: CostBounds, g: Graph, index_set=None) -> float:
    """Largest interaction-to-convexity ratio over the players in ``index_set``.

    Each player's interaction constants are compared with the weakest convexity
    among the players it reads.  An empty neighbor set gives an infinite
    infimum, so the term vanishes.
    """
    idx = range(g.n) if index_set is None else sorted(index_set)
    if len(idx) == 0:
        raise ValueError("index set must be nonempty")
    T = b.T
    dg = b.kappa / (8 * T) + b.K_g
    df = b.kappa / (8 * T ** 2) + b.K_f
    theta = 0.0
    for i in idx:
        nbrs = list(g.in_neighbors[i])
        inf_g = dg[nbrs].min() if nbrs else math.inf
        inf_f = df[nbrs].min() if nbrs else math.inf
        theta = max(theta, _ratio(b.l_g[i], inf_g), _ratio(b.l_f[i], inf_f))
    return theta


def gamma_table(t: NkhTable, gamma: float, r: int) -> list[dict]:
    """Rows ``h, S(h+1,h), D_h, gamma_h, prod_{j<=h} gamma_j`` for ``h < r``.

    Raises InfeasibleError as soon as a denominator ``1 - gamma*D_h`` is <= 0.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if r < 0:
        raise ValueError("r must be non-negative")
    seq: list[float] = []
    rows = []
    prod = 1.0
    for h in range(r):
        # tail[i] = prod_{i<=j<h} gamma_j, built right to left
        D = 0.0
        tail = 1.0
        for i in range(h, -1, -1):
            D += t.sup_count(i, h) * tail
            if i > 0:
                tail *= seq[i - 1]
        den = 1.0 - gamma * D
        if den <= 0:
            raise InfeasibleError(f"decay recursion infeasible at h={h} (gamma={gamma!r}, D_h={D!r})")
        s_next = t.sup_count(h + 1, h)
        g_h = gamma * s_next / den
        seq.append(g_h)
        prod *= g_h
        rows.append({"h": h, "sup_next": s_next, "D": D, "gamma_h": g_h, "gamma_prod": prod})
    return rows


def gamma_sequence(t: NkhTable, gamma: float, r: int) -> np.ndarray:
    return np.array([row["gamma_h"] for row in gamma_table(t, gamma, r)], dtype=float)


def gamma_r(seq) -> float:
    return float(np.prod(np.asarray(seq, dtype=float)))


def is_feasible(t: NkhTable, gamma: float, r: int) -> bool:
    try:
        gamma_table(t, gamma, r)
    except InfeasibleError:
        return False
    return True


def theta_star(t: NkhTable, r: int | None = None) -> float:
    """Largest gamma in (0, 1] keeping the recursion's denominators positive.

    Feasibility is monotone in gamma (each D_h is nondecreasing in the earlier
    gamma_j), so bisection applies; the returned value is feasible.
    """
    r = t.h_star if r is None else r
    if is_feasible(t, 1.0, r):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(BISECTION_ITERS):
        mid = 0.5 * (lo + hi)
        if is_feasible(t, mid, r):
            lo = mid
        else:
            hi = mid
    return lo


def theta_star_uniform(n_bound: float, gamma_bar: float) -> float:
    """Interaction level that forces ``gamma^(r) <= gamma_bar**r`` whenever every
    count ``N_k^h`` is at most ``n_bound``."""
    if n_bound < 1:
        raise ValueError("n_bound must be >= 1")
    if not 0 < gamma_bar < 1:
        raise ValueError("gamma_bar must lie in (0, 1)")
    return gamma_bar / (2 * n_bound * (1 + gamma_bar))


def tilde_gamma(t: NkhTable, gamma: float, r: int) -> tuple[np.ndarray, float]:
    """Constants for the influence of a perturbation placed at distance ``r``.

    Returns ``(tg, total)`` with ``tg[j - r]`` the coefficient at layer ``j`` for
    ``r <= j < h*`` and ``total = sum_j gamma^(j) * tg[j - r]``.
    """
    h_star = t.h_star
    if not 0 <= r < h_star:
        raise ValueError(f"r must satisfy 0 <= r < h*={h_star}")
    rows = gamma_table(t, gamma, h_star)
    g = [row["gamma_h"] for row in rows]
    D = [row["D"] for row in rows]

    def span(a: int, b: int) -> float:
        return float(np.prod(g[a:b])) if b > a else 1.0

    tg = [1.0 / (1.0 - gamma * D[r])]
    for j in range(r + 1, h_star):
        num = 0.0
        for ell in range(j):
            s = t.sup_count(ell, j)
            if s == 0:
                continue
            inner = sum(tg[i - r] * span(ell, i) for i in range(max(r, ell), j))
            num += s * inner
        tg.append(gamma * num / (1.0 - gamma * D[j]))
    tg_arr = np.array(tg, dtype=float)
    total = float(sum(span(0, j) * tg_arr[j - r] for j in range(r, h_star)))
    return tg_arr, total


def reduction_radius(epsilon: float, M: float, n_bound: float) -> tuple[float, int]:
    """Interaction level and radius that bring the reduction gap below ``epsilon``
    for players whose second moments stay below ``M``."""
    if not (epsilon > 0 and M > 0):
        raise ValueError("epsilon and M must be positive")
    gamma_bar = 1.0 / (4 * n_bound)
    theta = theta_star_uniform(n_bound, gamma_bar)
    r = max(0, math.ceil(math.log2(2 * M / epsilon) - 1e-12))
    return theta, r


def r_step_bound_oracle(g: Graph, root: int, gamma: float, C, r: int, rtol: float = 1e-12) -> bool:
    """Check the r-step consequence of a one-step interaction inequality.

    ``C`` must satisfy ``C^i <= gamma * sum_{j~i} C^j`` for every vertex at
    distance < r from ``root``; otherwise ValueError.  Returns whether
    ``C^root <= gamma^(r) * sum_{layer r} C^j`` holds (relative slack ``rtol``).
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (g.n,) or np.any(C < 0):
        raise ValueError("C must be a non-negative vector with one entry per vertex")
    t = nkh_table(g, root)
    for i in t.ball(r):
        rhs = gamma * sum(C[j] for j in g.in_neighbors[i])
        if C[i] > rhs * (1 + rtol) + 1e-300:
            raise ValueError(f"hypothesis violated at vertex {i}: {C[i]!r} > {rhs!r}")
    boundary = t.layers[r] if r < t.h_star else ()
    bound = gamma_r(gamma_sequence(t, gamma, r)) * sum(C[j] for j in boundary)
    return bool(C[root] <= bound * (1 + rtol) + 1e-300)


@dataclass(frozen=True)
class DecayReport:
    theta: float
    theta_star: float
    gamma_seq: np.ndarray
    gamma_r: float
    tilde_gamma_seq: np.ndarray | None
    tilde_gamma_r: float | None
    feasible: bool
    rhs_weights: tuple[np.ndarray, np.ndarray] = field(repr=False)

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta,
            "theta_star": self.theta_star,
            "gamma_seq": [float(x) for x in self.gamma_seq],
            "gamma_r": self.gamma_r,
            "tilde_gamma_seq": None if self.tilde_gamma_seq is None else [float(x) for x in self.tilde_gamma_seq],
            "tilde_gamma_r": self.tilde_gamma_r,
            "feasible": self.feasible,
            "alpha": [float(x) for x in self.rhs_weights[0]],
            "beta": [float(x) for x in self.rhs_weights[1]],
        }


def decay_report(b: CostBounds, g: Graph, root: int, r: int, index_set=None) -> DecayReport:
    """Assemble all constants for a reduction of radius ``r`` around ``root``."""
    t = nkh_table(g, root)
    theta = theta_from_game(b, g, index_set)
    th_star = theta_star(t)
    ok = theta <= th_star and theta > 0
    if theta == 0:
        seq, gr, tg, tgr, ok = np.zeros(r), (1.0 if r == 0 else 0.0), None, None, True
    elif ok:
        seq = gamma_sequence(t, theta, r)
        gr = gamma_r(seq)
        tg, tgr = tilde_gamma(t, theta, r) if r < t.h_star else (None, 0.0)
    else:
        seq, gr, tg, tgr = np.full(r, math.nan), math.nan, None, None
    return DecayReport(theta, th_star, seq, gr, tg, tgr, bool(ok), b.rhs_weights())
