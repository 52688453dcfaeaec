"""Tabular ACPO: soft twin critics, interpolated weighted policy improvement, projected dual ascent on lambda.

All "networks" are dense tables. One training step is

    sample batch -> value update -> Q update -> lambda update -> policy update -> target soft update

and every ``eval_every`` steps the current policy is scored exactly by
dynamic programming on the evaluation MDP.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from . import kernels
from .cci import CciParams, cci_weight
from .data import OfflineDataset, dataset_state_distribution, fit_behavior_mle
from .mdp import DEFAULT_LOG_CLIP, TabularMdp, TabularPolicy, clip_log, max_entropy_return
from .rng import rng_stream

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid training configuration; ``errors`` maps field names to messages."""

    def __init__(self, errors: dict):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors.items()))


@dataclass(frozen=True)
class AcpoConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    tau: float = 5e-3
    lr_actor: float = 0.1
    lr_critic: float = 0.5
    eta_lambda: float = 1e-5
    epsilon: float = -1.0
    lambda_init: float | None = None  # None means lambda_init = alpha
    n_beta: int = 1
    n_steps: int = 20_000
    batch_size: int = 256
    seed: int = 0
    eval_every: int = 1000
    weight_clip: float = 100.0
    log_clip: tuple = DEFAULT_LOG_CLIP
    behavior_smoothing: float = 0.5
    freeze_lambda: bool = False
    lr_schedule: str = "constant"
    lr_final_fraction: float = 0.2
    eval_alpha: float | None = None  # None means score J at the training alpha
    target_critics: bool = True  # value target and advantage read the target Q tables

    def __post_init__(self):
        object.__setattr__(self, "log_clip", tuple(float(x) for x in self.log_clip))
        errors = self._validate()
        if errors:
            raise ConfigError(errors)

    def _validate(self) -> dict:
        e = {}
        for name in ("lr_actor", "lr_critic", "eta_lambda", "alpha", "weight_clip"):
            if not getattr(self, name) > 0:
                e[name] = "must be > 0"
        if not 0 <= self.gamma < 1:
            e["gamma"] = "must lie in [0, 1)"
        if not 0 < self.tau <= 1:
            e["tau"] = "must lie in (0, 1]"
        if not math.isfinite(self.epsilon):
            e["epsilon"] = "must be finite"
        if self.lambda_init is not None and not self.lambda_init >= 0:
            e["lambda_init"] = "must be >= 0"
        for name in ("n_beta", "n_steps", "batch_size", "eval_every"):
            if not getattr(self, name) >= 1:
                e[name] = "must be >= 1"
        if len(self.log_clip) != 2 or not self.log_clip[0] <= self.log_clip[1] <= 0:
            e["log_clip"] = "must be [l_min, l_max] with l_min <= l_max <= 0"
        if not self.behavior_smoothing >= 0:
            e["behavior_smoothing"] = "must be >= 0"
        if self.lr_schedule not in ("constant", "cosine"):
            e["lr_schedule"] = "must be 'constant' or 'cosine'"
        if not 0 < self.lr_final_fraction <= 1:
            e["lr_final_fraction"] = "must lie in (0, 1]"
        if self.eval_alpha is not None and not self.eval_alpha >= 0:
            e["eval_alpha"] = "must be >= 0"
        return e

    @property
    def score_alpha(self) -> float:
        return self.alpha if self.eval_alpha is None else float(self.eval_alpha)

    @property
    def initial_lambda(self) -> float:
        return self.alpha if self.lambda_init is None else float(self.lambda_init)

    def cci_params(self, lam: float) -> CciParams:
        return CciParams(self.alpha, lam, self.log_clip, self.weight_clip)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["log_clip"] = list(self.log_clip)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "AcpoConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        errors = {k: "unknown key" for k in doc if k not in fields}
        kwargs = {}
        for k, v in doc.items():
            if k not in fields:
                continue
            want = fields[k].type
            if k == "log_clip":
                ok = isinstance(v, (list, tuple)) and all(_is_number(x) for x in v)
            elif k == "lr_schedule":
                ok = isinstance(v, str)
            elif k in ("freeze_lambda", "target_critics"):
                ok = isinstance(v, bool)
            elif k in ("lambda_init", "eval_alpha"):
                ok = v is None or _is_number(v)
            elif want == "int":
                ok = isinstance(v, int) and not isinstance(v, bool)
            else:
                ok = _is_number(v)
            if ok:
                kwargs[k] = v
            else:
                errors[k] = f"bad type {type(v).__name__}"
        try:
            cfg = cls(**kwargs)
        except ConfigError as exc:
            errors.update(exc.errors)
        if errors:
            raise ConfigError(errors)
        return cfg

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


@dataclass
class DualState:
    lam: float
    eta: float
    epsilon: float
    trace_step: list = field(default_factory=list)
    trace_lambda: list = field(default_factory=list)
    trace_constraint: list = field(default_factory=list)


@dataclass
class CriticSet:
    q1: np.ndarray
    q2: np.ndarray
    q1_target: np.ndarray
    q2_target: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "CriticSet":
        z = lambda: np.zeros((n_states, n_actions))  # noqa: E731
        return cls(z(), z(), z(), z(), np.zeros(n_states))

    def min_target(self) -> np.ndarray:
        return np.minimum(self.q1_target, self.q2_target)

    def min_q(self, target: bool = True) -> np.ndarray:
        return self.min_target() if target else np.minimum(self.q1, self.q2)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("q1", "q2", "q1_target", "q2_target", "v")}


@dataclass
class TrainResult:
    logits: np.ndarray
    dual: DualState
    critics: CriticSet
    behavior_fit: TabularPolicy
    eval_steps: list
    eval_lambda: list
    eval_constraint: list
    eval_j_pi: list
    j_beta: float
    n_steps: int

    @property
    def policy(self) -> TabularPolicy:
        return TabularPolicy.from_logits(self.logits)

    def trace_rows(self):
        for row in zip(self.eval_steps, self.eval_lambda, self.eval_constraint, self.eval_j_pi):
            yield (*row, self.j_beta)

    def checkpoint(self) -> dict:
        return {
            "logits": self.logits.tolist(),
            "critics": self.critics.to_dict(),
            "dual": {
                "lambda": self.dual.lam,
                "eta_lambda": self.dual.eta,
                "epsilon": self.dual.epsilon,
                "trace_step": list(self.dual.trace_step),
                "trace_lambda": list(self.dual.trace_lambda),
                "trace_constraint": list(self.dual.trace_constraint),
            },
            "n_steps": self.n_steps,
        }


# -- single updates ---------------------------------------------------------------


def update_value(critics: CriticSet, policy: TabularPolicy, states, alpha: float, lr: float,
                 rng: np.random.Generator, backend=None, target: bool = True) -> np.ndarray:
    """Move ``v(s)`` toward ``min_i Q_i(s, a~) - alpha log pi(a~|s)`` with ``a~ ~ pi(.|s)``.

    ``target`` selects the target tables ``Q_i'`` (default) or the online ones.
    """
    states = np.asarray(states, dtype=np.int64)
    u = rng.random(len(states))
    acts = kernels.sample_cdf(kernels.row_cdf(policy.probs), states, u, backend=backend)
    logp = policy.log_probs(log_clip=None)
    y = critics.min_q(target)[states, acts] - alpha * logp[states, acts]
    kernels.scatter_mean_step(critics.v, states, y, lr, backend=backend)
    return critics.v


def update_q(critics: CriticSet, s, a, r, s_next, terminal, gamma: float, lr: float,
             backend=None) -> tuple[np.ndarray, np.ndarray]:
    """TD step for both critics toward ``r + gamma v(s')``; each twin sees its own half-batch."""
    s, a = np.asarray(s, dtype=np.int64), np.asarray(a, dtype=np.int64)
    s_next = np.asarray(s_next, dtype=np.int64)
    not_done = 1.0 - np.asarray(terminal, dtype=np.float64)
    target = np.asarray(r, dtype=np.float64) + gamma * not_done * critics.v[s_next]
    idx = s * critics.q1.shape[1] + a
    n = len(s)
    if n < 2:
        halves = (slice(None), slice(None))
    else:
        halves = (slice(0, n // 2), slice(n // 2, n))
    for table, part in zip((critics.q1, critics.q2), halves):
        kernels.scatter_mean_step(table.reshape(-1), idx[part], target[part], lr, backend=backend)
    return critics.q1, critics.q2


def project_dual(lam: float, eta: float, constraint: float, epsilon: float) -> float:
    return max(0.0, lam - eta * (constraint - epsilon))


def update_dual(dual: DualState, constraint: float, step: int | None = None) -> DualState:
    """Projected gradient step ``lam <- [lam - eta (constraint - epsilon)]_+`` (in place)."""
    if not math.isfinite(constraint):
        raise ValueError("constraint estimate must be finite")
    dual.lam = project_dual(dual.lam, dual.eta, constraint, dual.epsilon)
    dual.trace_step.append(len(dual.trace_step) + 1 if step is None else step)
    dual.trace_lambda.append(dual.lam)
    dual.trace_constraint.append(float(constraint))
    return dual


def policy_objective(logits, s, a, weights) -> float:
    """``sum_s mean_{i in s} w_i log softmax(logits)[s_i, a_i]``; :func:`update_policy` ascends it."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64), axis=1)
    s, a = np.asarray(s), np.asarray(a)
    cnt = np.bincount(s, minlength=logp.shape[0]).astype(np.float64)
    return float(np.sum(np.asarray(weights) * logp[s, a] / cnt[s]))


def training_weights(critics: CriticSet, s, a, behavior_logp, params: CciParams,
                     target: bool = True) -> np.ndarray:
    """Interpolated weights from the critic advantage ``min_i Q_i - v`` and clipped ``log pi_beta``."""
    adv = critics.min_q(target)[s, a] - critics.v[s]
    return cci_weight(adv, behavior_logp[s, a], params)


def update_policy(logits: np.ndarray, s, a, critics: CriticSet, behavior_logp: np.ndarray,
                  params: CciParams, lr: float, backend=None, target: bool = True) -> np.ndarray:
    """One ascent step on the weighted log-likelihood of dataset actions (in place)."""
    s, a = np.asarray(s, dtype=np.int64), np.asarray(a, dtype=np.int64)
    w = training_weights(critics, s, a, behavior_logp, params, target)
    grad = kernels.policy_grad(softmax(logits, axis=1), s, a, w, backend=backend)
    logits += lr * grad
    return logits


def soft_update_targets(critics: CriticSet, tau: float) -> CriticSet:
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    critics.q1_target *= 1.0 - tau
    critics.q1_target += tau * critics.q1
    critics.q2_target *= 1.0 - tau
    critics.q2_target += tau * critics.q2
    return critics


def expected_constraint(policy: TabularPolicy, behavior_logp: np.ndarray, state_weights) -> float:
    """Exact ``E_{s~w, a~pi}[log pi_beta]``."""
    return float(np.asarray(state_weights) @ np.einsum("sa,sa->s", policy.probs, behavior_logp))


def sampled_constraint(policy: TabularPolicy, behavior_logp: np.ndarray, states,
                       rng: np.random.Generator, backend=None) -> float:
    """One fresh action per batch state from ``policy``; mean clipped ``log pi_beta``."""
    states = np.asarray(states, dtype=np.int64)
    acts = kernels.sample_cdf(kernels.row_cdf(policy.probs), states, rng.random(len(states)),
                              backend=backend)
    return float(np.mean(behavior_logp[states, acts]))


def episodic_policy(policy: TabularPolicy, terminal_states) -> TabularPolicy:
    """Replace rows at absorbing states by a point mass so no entropy accrues after termination."""
    probs = np.array(policy.probs)
    probs[terminal_states] = 0.0
    probs[terminal_states, 0] = 1.0
    return TabularPolicy(probs)


def _lr_at(base: float, step: int, cfg: AcpoConfig) -> float:
    if cfg.lr_schedule == "constant":
        return base
    final = base * cfg.lr_final_fraction
    return final + (base - final) * 0.5 * (1.0 + math.cos(math.pi * step / cfg.n_steps))


# -- full loop ----------------------------------------------------------------------


def train(config: AcpoConfig, dataset: OfflineDataset, mdp_for_eval: TabularMdp,
          behavior_for_eval: TabularPolicy | None = None, backend=None) -> TrainResult:
    """Run ACPO on ``dataset``; deterministic given ``config.seed``.

    ``J_beta`` is scored on ``behavior_for_eval`` when given, else on the
    fitted behavior policy. Both returns treat absorbing states as
    action-free, matching ``terminal=True`` transitions in the data.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n_s, n_a = mdp_for_eval.n_states, mdp_for_eval.n_actions
    dataset.check_shapes(n_s, n_a)
    cfg = config

    # behavior pretraining: the count MLE is the optimum, one pass suffices
    behavior = fit_behavior_mle(dataset, n_s, n_a, cfg.behavior_smoothing)
    behavior_logp = clip_log(behavior.probs, cfg.log_clip)
    state_weights = dataset_state_distribution(dataset, n_s)

    critics = CriticSet.zeros(n_s, n_a)
    logits = np.zeros((n_s, n_a))
    dual = DualState(cfg.initial_lambda, cfg.eta_lambda, cfg.epsilon)

    batch_rng = rng_stream(cfg.seed, "batch")
    value_rng = rng_stream(cfg.seed, "value_actions")
    dual_rng = rng_stream(cfg.seed, "dual_actions")

    terminal_states = mdp_for_eval.absorbing_states()

    def score(pol):
        return max_entropy_return(mdp_for_eval, episodic_policy(pol, terminal_states), cfg.score_alpha)

    j_beta = score(behavior_for_eval or behavior)
    result = TrainResult(logits, dual, critics, behavior, [], [], [], [], j_beta, cfg.n_steps)

    def record(step):
        pol = TabularPolicy.from_logits(logits)
        result.eval_steps.append(step)
        result.eval_lambda.append(dual.lam)
        result.eval_constraint.append(expected_constraint(pol, behavior_logp, state_weights))
        result.eval_j_pi.append(score(pol))
        log.info("step %d lambda %.6g constraint %.4f J_pi %.4f J_beta %.4f", step, dual.lam,
                 result.eval_constraint[-1], result.eval_j_pi[-1], j_beta)

    record(0)
    n = len(dataset)
    for step in range(1, cfg.n_steps + 1):
        idx = batch_rng.integers(0, n, size=cfg.batch_size)
        s, a = dataset.s[idx], dataset.a[idx]
        lr_c = _lr_at(cfg.lr_critic, step, cfg)
        lr_a = _lr_at(cfg.lr_actor, step, cfg)

        policy = TabularPolicy.from_logits(logits)
        update_value(critics, policy, s, cfg.alpha, lr_c, value_rng, backend=backend,
                     target=cfg.target_critics)
        update_q(critics, s, a, dataset.r[idx], dataset.s_next[idx], dataset.terminal[idx],
                 cfg.gamma, lr_c, backend=backend)
        g_hat = sampled_constraint(policy, behavior_logp, s, dual_rng, backend=backend)
        if cfg.freeze_lambda:
            dual.trace_step.append(step)
            dual.trace_lambda.append(dual.lam)
            dual.trace_constraint.append(g_hat)
        else:
            update_dual(dual, g_hat, step)
        update_policy(logits, s, a, critics, behavior_logp, cfg.cci_params(dual.lam), lr_a,
                      backend=backend, target=cfg.target_critics)
        soft_update_targets(critics, cfg.tau)

        if step % cfg.eval_every == 0:
            record(step)
    return result
