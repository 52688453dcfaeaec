"""Exact tabular MDP machinery.

Soft (maximum-entropy) and standard policy evaluation by dense linear
solves, discounted state visitation, entropy-augmented returns, reward
shaping with behavior log-densities, and the distribution distances used
by the bounds in :mod:`cci_lab.theory`.

Convention: ``0 * log 0 = 0`` everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax, xlogy

DEFAULT_TOL = 1e-10
DEFAULT_LOG_CLIP = (-20.0, 0.0)
_ROW_TOL = 1e-12
# dense solves above this size switch to fixed-point iteration
_DIRECT_SOLVE_MAX_STATES = 2000


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite discounted MDP.

    ``transition[s, a, s2]`` is the probability of moving to ``s2``;
    ``reward[s, a]`` is the expected immediate reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    name: str = "mdp"

    def __post_init__(self):
        t = np.array(self.transition, dtype=np.float64)
        r = np.array(self.reward, dtype=np.float64)
        mu = np.array(self.initial_dist, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {t.shape}")
        if r.shape != t.shape[:2]:
            raise ValueError(f"reward must have shape {t.shape[:2]}, got {r.shape}")
        if mu.shape != (t.shape[0],):
            raise ValueError(f"initial_dist must have shape ({t.shape[0]},), got {mu.shape}")
        if np.any(t < 0) or np.max(np.abs(t.sum(axis=2) - 1.0)) > _ROW_TOL:
            raise ValueError("every transition row must be a probability distribution")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > _ROW_TOL:
            raise ValueError("initial_dist must be a probability distribution")
        if not (0.0 <= float(self.gamma) < 1.0):
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward must be finite")
        for name, arr in (("transition", t), ("reward", r), ("initial_dist", mu)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_reward(self, reward) -> "TabularMdp":
        return TabularMdp(self.transition, reward, self.gamma, self.initial_dist, self.name)

    def absorbing_states(self) -> np.ndarray:
        """States that self-loop with probability one under every action."""
        idx = np.arange(self.n_states)
        return np.flatnonzero(np.all(self.transition[idx, :, idx] == 1.0, axis=1))

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "gamma": self.gamma,
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, name: str = "mdp") -> "TabularMdp":
        mdp = cls(doc["transition"], doc["reward"], doc["gamma"], doc["initial_dist"], name)
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError("n_states / n_actions disagree with the transition tensor")
        return mdp

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TabularMdp":
        return cls.from_dict(json.loads(Path(path).read_text()), name=Path(path).stem)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic action table, optionally backed by logits."""

    probs: np.ndarray
    logits: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ValueError("policy rows must be probability distributions")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)
        if self.logits is not None:
            z = np.array(self.logits, dtype=np.float64)
            if z.shape != p.shape or np.max(np.abs(softmax(z, axis=1) - p)) > _ROW_TOL:
                raise ValueError("probs must equal row-softmax(logits)")
            z.flags.writeable = False
            object.__setattr__(self, "logits", z)

    @classmethod
    def from_logits(cls, logits) -> "TabularPolicy":
        z = np.asarray(logits, dtype=np.float64)
        return cls(softmax(z, axis=1), z)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @property
    def shape(self):
        return self.probs.shape

    def log_probs(self, log_clip=DEFAULT_LOG_CLIP) -> np.ndarray:
        """Elementwise log-probabilities; ``-inf`` at zeros unless clipped."""
        if self.logits is not None:
            logp = log_softmax(self.logits, axis=1)
        else:
            with np.errstate(divide="ignore"):
                logp = np.log(self.probs)
        if log_clip is not None:
            logp = np.clip(logp, log_clip[0], log_clip[1])
        return logp


@dataclass(frozen=True, eq=False)
class SoftValues:
    q: np.ndarray
    v: np.ndarray
    alpha: float

    @property
    def advantage(self) -> np.ndarray:
        return self.q - self.v[:, None]


def clip_log(probs, log_clip=DEFAULT_LOG_CLIP) -> np.ndarray:
    """``log(p)`` clipped to ``[l_min, l_max]``; zeros map to ``l_min``."""
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(probs, dtype=np.float64))
    return np.clip(logp, log_clip[0], log_clip[1])


def _check_policy(mdp: TabularMdp, policy: TabularPolicy):
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}")


def state_kernel(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """``P_pi[s, s2] = sum_a pi(a|s) T(s2|s, a)``."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def entropy_bonus(policy: TabularPolicy, alpha: float) -> np.ndarray:
    """Per-state ``-alpha * sum_a pi log pi`` with ``0 log 0 = 0``."""
    if alpha == 0.0:
        return np.zeros(policy.shape[0])
    return -alpha * xlogy(policy.probs, policy.probs).sum(axis=1)


def evaluate_policy(mdp: TabularMdp, policy: TabularPolicy, alpha: float = 0.0,
                    tol: float = DEFAULT_TOL, method: str = "auto") -> SoftValues:
    """Soft Q/V of ``policy`` at temperature ``alpha`` (``alpha=0``: standard values).

    ``method="direct"`` solves ``(I - gamma P_pi) V = r_pi + H_alpha`` exactly;
    ``"iterate"`` runs the Bellman recursion until the residual drops below ``tol``.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_policy(mdp, policy)
    n = mdp.n_states
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.reward) + entropy_bonus(policy, alpha)
    if method == "auto":
        method = "direct" if n <= _DIRECT_SOLVE_MAX_STATES else "iterate"
    if method == "direct":
        a = np.eye(n) - mdp.gamma * state_kernel(mdp, policy)
        try:
            v = np.linalg.solve(a, r_pi)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - impossible for gamma < 1
            raise RuntimeError("policy evaluation system is singular") from exc
    elif method == "iterate":
        p_pi = state_kernel(mdp, policy)
        v = np.zeros(n)
        while True:
            v_new = r_pi + mdp.gamma * p_pi @ v
            if np.max(np.abs(v_new - v)) < tol * (1.0 - mdp.gamma):
                v = v_new
                break
            v = v_new
    else:
        raise ValueError(f"unknown method {method!r}")
    q = mdp.reward + mdp.gamma * mdp.transition @ v
    return SoftValues(q=q, v=v, alpha=float(alpha))


def soft_bellman_residual(mdp: TabularMdp, policy: TabularPolicy, values: SoftValues) -> float:
    """Max absolute violation of the soft Bellman equations."""
    alpha = values.alpha
    v_from_q = np.einsum("sa,sa->s", policy.probs, values.q) + entropy_bonus(policy, alpha)
    q_from_v = mdp.reward + mdp.gamma * mdp.transition @ values.v
    return float(max(np.max(np.abs(v_from_q - values.v)), np.max(np.abs(q_from_v - values.q))))


def discounted_visitation(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """Normalized discounted state occupancy ``d_pi``."""
    _check_policy(mdp, policy)
    a = np.eye(mdp.n_states) - mdp.gamma * state_kernel(mdp, policy).T
    return np.linalg.solve(a, (1.0 - mdp.gamma) * mdp.initial_dist)


def max_entropy_return(mdp: TabularMdp, policy: TabularPolicy, alpha: float = 0.0) -> float:
    """Entropy-augmented discounted return from the initial distribution."""
    return float(mdp.initial_dist @ evaluate_policy(mdp, policy, alpha).v)


def max_entropy_return_occupancy(mdp: TabularMdp, policy: TabularPolicy, alpha: float = 0.0) -> float:
    """Same quantity as :func:`max_entropy_return`, via the occupancy measure."""
    d = discounted_visitation(mdp, policy)
    per_state = np.einsum("sa,sa->s", policy.probs, mdp.reward) + entropy_bonus(policy, alpha)
    return float(d @ per_state / (1.0 - mdp.gamma))


def shape_reward(mdp: TabularMdp, behavior: TabularPolicy, alpha: float,
                 log_clip=DEFAULT_LOG_CLIP) -> TabularMdp:
    """Copy of ``mdp`` with reward ``r - alpha * log pi_beta``.

    With ``log_clip=None`` a zero behavior probability is an error.
    """
    _check_policy(mdp, behavior)
    if alpha == 0.0:
        return mdp.with_reward(mdp.reward)
    if log_clip is None:
        if np.any(behavior.probs == 0.0):
            raise ValueError("behavior has zero-probability actions; enable log clipping")
        logp = np.log(behavior.probs)
    else:
        logp = clip_log(behavior.probs, log_clip)
    return mdp.with_reward(mdp.reward - alpha * logp)


def kl_rows(p, q, log_floor: float = DEFAULT_LOG_CLIP[0]) -> np.ndarray:
    """Row-wise ``KL(p || q)``; ``log q`` is floored at ``log_floor``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    with np.errstate(divide="ignore"):
        logq = np.maximum(np.log(q), log_floor)
    return (xlogy(p, p) - np.where(p > 0, p * logq, 0.0)).sum(axis=-1)


def tv_rows(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return 0.5 * np.abs(p - q).sum(axis=-1)


def divergences(p, q) -> tuple[float, float]:
    """``(KL(p || q), TV(p, q))`` for two distributions on the same support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or p.shape != q.shape:
        raise ValueError(f"expected two vectors of equal length, got {p.shape} and {q.shape}")
    return float(kl_rows(p, q)), float(tv_rows(p, q))


# -- instance generators ------------------------------------------------------

def random_mdp(n_states: int, n_actions: int, gamma: float = 0.9, seed=0,
               reward_range=(-1.0, 1.0)) -> TabularMdp:
    """Dirichlet(1) transitions, uniform rewards, uniform start distribution."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    t = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalize so rows sum to one at the last ulp
    t /= t.sum(axis=2, keepdims=True)
    r = rng.uniform(reward_range[0], reward_range[1], size=(n_states, n_actions))
    mu = np.full(n_states, 1.0 / n_states)
    return TabularMdp(t, r, gamma, mu, name=f"random-{n_states}x{n_actions}")


def chain_mdp(n_states: int, gamma: float = 0.9, reward: float = 1.0) -> TabularMdp:
    """Two-action chain: action 1 moves right, action 0 resets to state 0.

    The last state is absorbing; entering it pays ``reward``.
    """
    if n_states < 2:
        raise ValueError("chain needs at least 2 states")
    t = np.zeros((n_states, 2, n_states))
    r = np.zeros((n_states, 2))
    last = n_states - 1
    for s in range(last):
        t[s, 0, 0] = 1.0
        t[s, 1, s + 1] = 1.0
    t[last, :, last] = 1.0
    r[last - 1, 1] = reward
    mu = np.zeros(n_states)
    mu[0] = 1.0
    return TabularMdp(t, r, gamma, mu, name=f"chain-{n_states}")


# up, right, down, left
GRID_MOVES = ((0, -1), (1, 0), (0, 1), (-1, 0))


def gridworld(width: int, height: int, gamma: float = 0.99, step_reward: float = -0.01,
              goal_reward: float = 1.0, slip: float = 0.0) -> TabularMdp:
    """Four-action gridworld from the top-left corner to an absorbing goal at the bottom-right.

    Moves into walls leave the agent in place. With ``slip > 0`` the chosen
    move is replaced by a uniformly random one with that probability.
    Entering the goal pays ``goal_reward``; every other step pays ``step_reward``.
    """
    n = width * height
    goal = n - 1
    t = np.zeros((n, 4, n))
    r = np.full((n, 4), step_reward)

    def move(s, d):
        x, y = s % width, s // width
        dx, dy = GRID_MOVES[d]
        nx, ny = x + dx, y + dy
        if 0 <= nx < width and 0 <= ny < height:
            return ny * width + nx
        return s

    for s in range(n):
        if s == goal:
            t[s, :, s] = 1.0
            r[s, :] = 0.0
            continue
        for a in range(4):
            for d in range(4):
                p = (1.0 - slip) * (d == a) + slip / 4.0
                if p > 0:
                    t[s, a, move(s, d)] += p
            r[s, a] = step_reward + (goal_reward - step_reward) * t[s, a, goal]
    mu = np.zeros(n)
    mu[0] = 1.0
    return TabularMdp(t, r, gamma, mu, name=f"gridworld-{width}x{height}")


def optimal_q(mdp: TabularMdp, tol: float = DEFAULT_TOL, max_iter: int = 100_000) -> np.ndarray:
    """Standard optimal action values by value iteration."""
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.reward + mdp.gamma * mdp.transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            return mdp.reward + mdp.gamma * mdp.transition @ v_new
        v = v_new
    raise RuntimeError("value iteration did not converge")


def epsilon_greedy(q: np.ndarray, eps: float) -> TabularPolicy:
    """Greedy on ``q`` (first maximizer) mixed with uniform noise of weight ``eps``."""
    n_s, n_a = q.shape
    probs = np.full((n_s, n_a), eps / n_a)
    probs[np.arange(n_s), np.argmax(q, axis=1)] += 1.0 - eps
    return TabularPolicy(probs)


def random_policy(n_states: int, n_actions: int, seed=0, scale: float = 1.0,
                  min_prob: float = 1e-3) -> TabularPolicy:
    """Softmax of Gaussian logits, shrunk per row until every probability is >= ``min_prob``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = rng.normal(scale=scale, size=(n_states, n_actions))
    for s in range(n_states):
        while softmax(z[s]).min() < min_prob:
            z[s] *= 0.9
    return TabularPolicy.from_logits(z)
