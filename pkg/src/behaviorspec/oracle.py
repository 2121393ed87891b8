"""Exact solvers for small discounted CMDPs with indicator costs.

Everything is computed with dense linear solves, so these routines serve as
ground truth for the sampled machinery in :mod:`behaviorspec.agent`.

Thresholds ``d`` are normalised rates: a policy is feasible when
``(1 - gamma) * J_Ck(pi) <= d_k``, i.e. when the occupancy-weighted
probability of behavior ``k`` is at most ``d_k``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TabularCMDP:
    P: np.ndarray          # (S, A, S)
    R: np.ndarray          # (S, A)
    C: np.ndarray          # (K, S, A), entries in {0, 1}
    d: np.ndarray          # (K,)
    gamma: float
    P0: np.ndarray         # (S,)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.C = np.asarray(self.C, dtype=np.float64).reshape(-1, *self.R.shape)
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.P0 = np.asarray(self.P0, dtype=np.float64)
        S, A = self.R.shape
        if self.P.shape != (S, A, S):
            raise ValueError(f"P has shape {self.P.shape}, expected {(S, A, S)}")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("every row of P must be a probability distribution")
        if not np.all((self.C == 0.0) | (self.C == 1.0)):
            raise ValueError("cost tables must be indicators (0 or 1)")
        if len(self.d) != len(self.C) or np.any(self.d < 0) or np.any(self.d > 1):
            raise ValueError("need one threshold in [0, 1] per cost table")
        if self.P0.shape != (S,) or abs(self.P0.sum() - 1.0) > 1e-12 or np.any(self.P0 < 0):
            raise ValueError("P0 must be a distribution over states")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def S(self):
        return self.R.shape[0]

    @property
    def A(self):
        return self.R.shape[1]

    @property
    def K(self):
        return len(self.C)

    @property
    def Z(self):
        """Normaliser of the discounted occupancy, 1 / (1 - gamma)."""
        return 1.0 / (1.0 - self.gamma)


def check_policy(m: TabularCMDP, pi):
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (m.S, m.A) or np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > 1e-10:
        raise ValueError("policy must be a row-stochastic (S, A) table")
    return pi


def _system(m, pi):
    P_pi = np.einsum("sa,sat->st", pi, m.P)
    return np.eye(m.S) - m.gamma * P_pi


def state_values(m: TabularCMDP, pi, f):
    """V_f^pi for every state."""
    pi = check_policy(m, pi)
    f_pi = (pi * np.asarray(f, dtype=np.float64)).sum(axis=1)
    return np.linalg.solve(_system(m, pi), f_pi)


def exact_return(m: TabularCMDP, pi, f) -> float:
    """Expected discounted sum of ``f(s, a)`` from the initial distribution."""
    return float(m.P0 @ state_values(m, pi, f))


def occupancy(m: TabularCMDP, pi) -> np.ndarray:
    """Normalised discounted state-action occupancy x(s, a); sums to one."""
    pi = check_policy(m, pi)
    dist = np.linalg.solve(_system(m, pi).T, (1.0 - m.gamma) * m.P0)
    return dist[:, None] * pi


def behavior_rates(m: TabularCMDP, pi) -> np.ndarray:
    """Occupancy probability of each indicator, (1 - gamma) * J_Ck."""
    x = occupancy(m, pi)
    return np.einsum("sa,ksa->k", x, m.C)


def lagrangian_reward(m: TabularCMDP, lam, reward_weight=1.0):
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    return reward_weight * m.R - np.einsum("k,ksa->sa", lam, m.C)


def lagrangian_best_response(m: TabularCMDP, lam, tol=1e-10, max_iter=100_000):
    """Greedy deterministic policy for ``L = R - sum_k lam_k C_k`` and its exact J_L."""
    lam = np.asarray(lam, dtype=np.float64).reshape(-1)
    if np.any(lam < 0):
        raise ValueError("multipliers must be non-negative")
    L = lagrangian_reward(m, lam)
    V = np.zeros(m.S)
    for _ in range(max_iter):
        Q = L + m.gamma * m.P @ V
        V_new = Q.max(axis=1)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta < tol:
            break
    Q = L + m.gamma * m.P @ V
    pi = np.eye(m.A)[Q.argmax(axis=1)]
    return pi, exact_return(m, pi, L)


def deterministic_policies(m: TabularCMDP):
    """Every deterministic policy as a one-hot table (A^S of them)."""
    eye = np.eye(m.A)
    for choice in itertools.product(range(m.A), repeat=m.S):
        yield eye[list(choice)]


def policy_from_occupancy(x):
    x = np.asarray(x, dtype=np.float64)
    mass = x.sum(axis=1, keepdims=True)
    uniform = np.full_like(x, 1.0 / x.shape[1])
    return np.where(mass > 0, x / np.where(mass > 0, mass, 1.0), uniform)


@dataclass
class DualResult:
    lam: np.ndarray
    value: float
    primal_value: float
    primal_policy: np.ndarray
    primal_rates: np.ndarray
    grid_values: list = field(default_factory=list)


def lambda_grid(K, values):
    """Cartesian product grid: ``values`` is one 1-D array reused for each constraint."""
    values = np.asarray(values, dtype=np.float64)
    return [np.array(p) for p in itertools.product(values, repeat=K)]


def dual_minimize(m: TabularCMDP, grid) -> DualResult:
    """Grid minimisation of the dual ``g(lam) = max_pi J_L(pi) + Z * sum_k lam_k d_k``.

    The primal candidate is the best feasible policy among grid best responses
    and pairwise occupancy mixtures of them.  By weak duality ``value`` bounds
    the constrained optimum from above.
    """
    grid = [np.asarray(g, dtype=np.float64).reshape(-1) for g in grid]
    if not grid:
        raise ValueError("empty multiplier grid")
    best = None
    responses = {}
    values = []
    for lam in grid:
        if len(lam) != m.K:
            raise ValueError(f"grid point {lam} has the wrong length for K={m.K}")
        pi, j_l = lagrangian_best_response(m, lam)
        g = j_l + m.Z * float(lam @ m.d)
        values.append(g)
        if best is None or g < best[1]:
            best = (lam, g)
        responses.setdefault(pi.argmax(axis=1).tobytes(), pi)

    cands = []
    for pi in responses.values():
        x = occupancy(m, pi)
        cands.append((x, float((x * m.R).sum()) * m.Z, np.einsum("sa,ksa->k", x, m.C)))

    primal = None
    slack = 1e-12
    for i, (x, ret, rates) in enumerate(cands):
        if np.all(rates <= m.d + slack) and (primal is None or ret > primal[1]):
            primal = (x, ret)
        for x2, ret2, rates2 in cands[i + 1:]:
            # theta * (x) + (1 - theta) * (x2): feasible interval in theta
            lo, hi = 0.0, 1.0
            for r1, r2, dk in zip(rates, rates2, m.d):
                a, b = r1 - r2, r2 - dk          # rate(theta) - d = a * theta + b
                if abs(a) < 1e-15:
                    if b > slack:
                        lo, hi = 1.0, 0.0
                elif a > 0:
                    hi = min(hi, -b / a)
                else:
                    lo = max(lo, -b / a)
            if lo > hi:
                continue
            theta = hi if ret >= ret2 else lo
            mix_ret = theta * ret + (1.0 - theta) * ret2
            if primal is None or mix_ret > primal[1]:
                primal = (theta * x + (1.0 - theta) * x2, mix_ret)

    if primal is None:
        return DualResult(best[0], best[1], float("-inf"), None, None, values)
    pi = policy_from_occupancy(primal[0])
    return DualResult(best[0], best[1], exact_return(m, pi, m.R), pi, behavior_rates(m, pi), values)


@dataclass
class GdaTrace:
    policies: list
    lambdas: list
    steps: list
    final_policy: np.ndarray
    average_policy: np.ndarray
    diverged_at: int = -1


def _softmax_rows(theta):
    e = np.exp(theta - theta.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def gda_reference(m: TabularCMDP, steps=5000, policy_lr=1.0, multiplier_lr=0.05,
                  mode="unnormalized", z_init=0.0, record_every=50, lambda_bound=1e6,
                  average_from=0.5):
    """Exact gradient ascent (policy) / descent (multipliers) on the Lagrangian.

    The policy is a tabular softmax; its exact gradient comes from the policy
    gradient theorem with the discounted state visitation.  ``unnormalized``
    multipliers take plain projected steps ``lam <- max(0, lam + lr (rate - d))``;
    ``normalized`` ones are a softmax with a dummy reward logit and follow the
    diagonal softmax gradient.  ``average_policy`` is derived from the mean
    occupancy of the iterates after ``average_from`` of the run.
    """
    theta = np.zeros((m.S, m.A))
    z = np.full(m.K, float(z_init))
    pols, lams, rec = [], [], []
    x_sum = np.zeros((m.S, m.A))
    n_avg = 0
    start_avg = int(steps * average_from)
    diverged = -1
    for t in range(steps):
        pi = _softmax_rows(theta)
        if mode == "normalized":
            e = np.exp(np.concatenate([[0.0], z]) - max(0.0, z.max(initial=0.0)))
            w = e / e.sum()
            reward_w, lam = w[0], w[1:]
        else:
            reward_w, lam = 1.0, z
        L = lagrangian_reward(m, lam, reward_w)
        V = state_values(m, pi, L)
        Q = L + m.gamma * m.P @ V
        x = occupancy(m, pi)
        visit = x.sum(axis=1) * m.Z
        theta += policy_lr * visit[:, None] * pi * (Q - V[:, None])

        rates = np.einsum("sa,ksa->k", x, m.C)
        if mode == "normalized":
            c = m.d - rates
            z -= multiplier_lr * lam * (1.0 - lam) * c
        else:
            z = np.maximum(0.0, z + multiplier_lr * (rates - m.d))
            if diverged < 0 and np.any(z > lambda_bound):
                diverged = t
        if t >= start_avg:
            x_sum += x
            n_avg += 1
        if t % record_every == 0 or t == steps - 1:
            pols.append(pi)
            lams.append(lam.copy() if mode == "normalized" else z.copy())
            rec.append(t)
    final = _softmax_rows(theta)
    avg = policy_from_occupancy(x_sum / max(n_avg, 1))
    return GdaTrace(pols, lams, rec, final, avg, diverged)


# ---------------------------------------------------------------------------
# text format


def format_cmdp(m: TabularCMDP) -> str:
    """Plain-text table: header ``S A K gamma`` then P, R, C_k, d and P0 rows."""
    lines = [f"{m.S} {m.A} {m.K} {m.gamma!r}", "# P(s'|s,a), one row per (s, a)"]
    for s in range(m.S):
        for a in range(m.A):
            lines.append(" ".join(repr(float(v)) for v in m.P[s, a]))
    lines.append("# R(s,a), one row per state")
    lines += [" ".join(repr(float(v)) for v in row) for row in m.R]
    for k in range(m.K):
        lines.append(f"# C_{k + 1}(s,a)")
        lines += [" ".join(str(int(v)) for v in row) for row in m.C[k]]
    lines.append("# thresholds d")
    lines.append(" ".join(repr(float(v)) for v in m.d))
    lines.append("# P0")
    lines.append(" ".join(repr(float(v)) for v in m.P0))
    return "\n".join(lines) + "\n"


def parse_cmdp(text: str) -> TabularCMDP:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens += line.split()
    if len(tokens) < 4:
        raise ValueError("missing header 'S A K gamma'")
    S, A, K = (int(t) for t in tokens[:3])
    gamma = float(tokens[3])
    vals = np.array([float(t) for t in tokens[4:]])
    sizes = [S * A * S, S * A, K * S * A, K, S]
    if len(vals) != sum(sizes):
        raise ValueError(f"expected {sum(sizes)} numbers after the header, found {len(vals)}")
    parts = np.split(vals, np.cumsum(sizes)[:-1])
    return TabularCMDP(P=parts[0].reshape(S, A, S), R=parts[1].reshape(S, A),
                       C=parts[2].reshape(K, S, A), d=parts[3], gamma=gamma, P0=parts[4])


def random_cmdp(rng, S, A, K, gamma=0.9, d=None, cost_prob=0.5) -> TabularCMDP:
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(0.0, 1.0, size=(S, A))
    C = (rng.uniform(size=(K, S, A)) < cost_prob).astype(float)
    if d is None:
        d = rng.uniform(0.1, 0.9, size=K)
    P0 = rng.dirichlet(np.ones(S))
    return TabularCMDP(P, R, C, d, gamma, P0)
