"""Continuous constraint interpolation: closed-form policies and the weight spectrum.

For a fixed action-value (or advantage) table, the behavior-log-density
constrained max-entropy problem has the solution

    pi_lam(a|s)  ~  exp(A(s,a) / alpha) * pi_beta(a|s) ** (lam / alpha)

and projecting it onto a parametric policy yields weighted log-likelihood
training with

    w_lam(s,a) = exp(A(s,a) / alpha + (lam - alpha) / alpha * log pi_beta(a|s)).

``lam = 0`` gives the support-constrained weights, ``lam = alpha`` the
KL-density (advantage-weighted) weights, and large ``lam`` weighted behavior
cloning.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mdp import DEFAULT_LOG_CLIP, TabularPolicy, clip_log

KL_DENSITY_ATOL = 1e-12


@dataclass(frozen=True)
class CciParams:
    alpha: float
    lam: float
    log_clip: tuple = DEFAULT_LOG_CLIP
    weight_clip: float = 100.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        lo, hi = self.log_clip
        if not lo <= hi <= 0:
            raise ValueError(f"log_clip must satisfy l_min <= l_max <= 0, got {self.log_clip}")
        if not self.weight_clip > 0:
            raise ValueError("weight_clip must be > 0")
        object.__setattr__(self, "log_clip", (float(lo), float(hi)))

    def with_lam(self, lam: float) -> "CciParams":
        return CciParams(self.alpha, lam, self.log_clip, self.weight_clip)


class Regime(str, enum.Enum):
    SUPPORT = "Support"
    SUPPORT_TO_DENSITY = "SupportToDensity"
    KL_DENSITY = "KlDensity"
    DENSITY_TO_WBC = "DensityToWbc"
    PRACTICAL_WBC = "PracticalWbc"


def cci_log_weight(adv, log_pb, params: CciParams):
    """Unclipped log of the interpolated weight."""
    a, lam = params.alpha, params.lam
    return np.asarray(adv) / a + ((lam - a) / a) * np.asarray(log_pb)


def cci_weight(adv, log_pb, params: CciParams):
    """``min(weight_clip, w_lam)``; ``log_pb`` is expected to be clipped already.

    Clipping happens in log space so large advantages never overflow.
    """
    logw = cci_log_weight(adv, log_pb, params)
    cap = np.log(params.weight_clip)
    return np.where(logw >= cap, params.weight_clip, np.exp(np.minimum(logw, cap)))


def _row_logits(adv, behavior_probs, params: CciParams):
    """Unnormalized log pi_lam over actions, ``-inf`` outside the behavior support."""
    adv = np.asarray(adv, dtype=np.float64)
    pb = np.asarray(behavior_probs, dtype=np.float64)
    ell = clip_log(pb, params.log_clip)
    logits = adv / params.alpha + (params.lam / params.alpha) * ell
    return np.where(pb > 0, logits, -np.inf), ell


def closed_form_policy(advantage, behavior: TabularPolicy, params: CciParams) -> TabularPolicy:
    """Rows ``exp(A/alpha) * pi_beta ** (lam/alpha)``, normalized in log space.

    Zero-density behavior actions get probability 0 for every ``lam``,
    including ``lam = 0`` (support convention ``0 * inf = 0``).
    """
    adv = np.asarray(advantage, dtype=np.float64)
    if adv.shape != behavior.shape:
        raise ValueError(f"advantage shape {adv.shape} != behavior shape {behavior.shape}")
    if not np.all(np.isfinite(adv)):
        raise ValueError("advantage must be finite")
    logits, _ = _row_logits(adv, behavior.probs, params)
    shift = np.max(logits, axis=1, keepdims=True)
    if not np.all(np.isfinite(shift)):
        raise ValueError("a row has no mass after clipping")
    unnorm = np.exp(logits - shift)
    return TabularPolicy(unnorm / unnorm.sum(axis=1, keepdims=True))


def log_normalizer(q_row, behavior_row, params: CciParams) -> float:
    """``alpha * log sum_a exp(Q(a)/alpha) pi_beta(a) ** (lam/alpha)`` over the support."""
    logits, _ = _row_logits(q_row, behavior_row, params)
    if not np.any(np.isfinite(logits)):
        raise ValueError("behavior row has empty support")
    return float(params.alpha * logsumexp(logits))


def constraint_value(state_weights, policy: TabularPolicy, behavior: TabularPolicy,
                     params: CciParams) -> float:
    """``sum_s w(s) sum_a pi(a|s) clip(log pi_beta(a|s))``."""
    ell = clip_log(behavior.probs, params.log_clip)
    per_state = np.einsum("sa,sa->s", policy.probs, ell)
    return float(np.asarray(state_weights) @ per_state)


def _row_policy_and_ell(adv_row, behavior_row, params):
    logits, ell = _row_logits(adv_row, behavior_row, params)
    p = np.exp(logits - np.max(logits))
    return p / p.sum(), ell


def state_constraint(adv_row, behavior_row, params: CciParams) -> float:
    """``g_s(lam) = E_{a ~ pi_lam}[clip(log pi_beta)]`` for one state."""
    p, ell = _row_policy_and_ell(adv_row, behavior_row, params)
    return float(p @ ell)


def constraint_derivative(adv_row, behavior_row, params: CciParams) -> float:
    """``d g_s / d lam = Var_{pi_lam}(log pi_beta) / alpha``."""
    p, ell = _row_policy_and_ell(adv_row, behavior_row, params)
    mean = p @ ell
    return float(p @ (ell - mean) ** 2 / params.alpha)


def classify_regime(params: CciParams, wbc_threshold: float) -> Regime:
    a, lam = params.alpha, params.lam
    if not wbc_threshold > a:
        raise ValueError("wbc_threshold must exceed alpha")
    if lam == 0.0:
        return Regime.SUPPORT
    if abs(lam - a) <= KL_DENSITY_ATOL:
        return Regime.KL_DENSITY
    if lam < a:
        return Regime.SUPPORT_TO_DENSITY
    if lam < wbc_threshold:
        return Regime.DENSITY_TO_WBC
    return Regime.PRACTICAL_WBC


def advantage_bound(r_max: float, alpha: float, c_max: float, gamma: float) -> float:
    """Uniform bound ``2 (R_max + alpha C_max) / (1 - gamma)`` on soft advantages."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    return 2.0 * (r_max + alpha * c_max) / (1.0 - gamma)


def wbc_threshold(r_max: float, alpha: float, c_max: float, gamma: float,
                  c_beta_min: float, delta: float) -> float:
    """Sufficient ``lam`` for the advantage term to be dominated by the log-density term."""
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if c_beta_min + delta <= 0:
        raise ValueError("c_beta_min + delta must be positive")
    return alpha + advantage_bound(r_max, alpha, c_max, gamma) / (c_beta_min + delta)
