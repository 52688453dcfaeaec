"""Exact numerical checks of the performance-difference identities and the CCI lower bounds.

Every quantity is an exact sum over a small tabular MDP, so tolerances only
absorb floating-point error. Each check returns a :class:`TheoryReport`.
"""

from __future__ import annotations

import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import softmax

from .cci import CciParams, closed_form_policy, constraint_derivative, state_constraint
from .mdp import (DEFAULT_LOG_CLIP, TabularMdp, TabularPolicy, clip_log, discounted_visitation,
                  evaluate_policy, kl_rows, max_entropy_return, random_mdp, random_policy,
                  shape_reward, tv_rows)

EQ_TOL = 1e-8
INEQ_TOL = 1e-10
FD_STEP = 1e-4
FD_TOL = 1e-5
MONO_TOL = 1e-12
VARIANTS = ("shaped", "original")
SUITES = ("pdl", "prop1", "thm1", "thm2", "bounds", "all")


@dataclass
class BoundTerms:
    B: float
    eps_beta: float
    kappa_beta: float
    delta_tv: float
    # shaped-advantage variant
    delta_sub: float
    f_lambda_star: float
    f_lambda_theta: float
    # original-reward-advantage variant
    delta_sub_original: float
    f_lambda_star_original: float
    f_lambda_theta_original: float

    def sub_gap(self, variant: str) -> float:
        return self.delta_sub if variant == "shaped" else self.delta_sub_original


@dataclass
class TheoryReport:
    check: str
    lhs: float
    rhs: float
    slack: float
    passed: bool
    tol: float
    instance: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "TheoryReport":
        return cls(**doc)


def _equality(check, lhs, rhs, tol, instance, terms=None):
    slack = abs(lhs - rhs)
    return TheoryReport(check, float(lhs), float(rhs), float(slack), bool(slack < tol), tol,
                        dict(instance or {}), dict(terms or {}))


def _lower_bound(check, lhs, rhs, tol, instance, terms=None):
    """Report for ``lhs >= rhs``; slack is ``lhs - rhs``."""
    slack = lhs - rhs
    return TheoryReport(check, float(lhs), float(rhs), float(slack), bool(slack >= -tol), tol,
                        dict(instance or {}), dict(terms or {}))


def _upper_bound(check, lhs, rhs, tol, instance, terms=None):
    """Report for ``lhs <= rhs``; slack is ``rhs - lhs``."""
    slack = rhs - lhs
    return TheoryReport(check, float(lhs), float(rhs), float(slack), bool(slack >= -tol), tol,
                        dict(instance or {}), dict(terms or {}))


def _describe(mdp, **kw):
    d = {"n_states": mdp.n_states, "n_actions": mdp.n_actions, "gamma": mdp.gamma}
    d.update(kw)
    return d


# -- advantages --------------------------------------------------------------------


def standard_advantage(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    return evaluate_policy(mdp, policy, 0.0).advantage


def shaped_advantage(mdp: TabularMdp, behavior: TabularPolicy, alpha: float,
                     log_clip=DEFAULT_LOG_CLIP) -> np.ndarray:
    """Standard advantage of ``behavior`` under reward ``r - alpha log pi_beta``."""
    return standard_advantage(shape_reward(mdp, behavior, alpha, log_clip), behavior)


# -- performance difference ----------------------------------------------------------


def check_pdl_standard(mdp: TabularMdp, pi: TabularPolicy, pi_ref: TabularPolicy,
                       tol: float = EQ_TOL, instance=None) -> TheoryReport:
    lhs = max_entropy_return(mdp, pi) - max_entropy_return(mdp, pi_ref)
    adv = standard_advantage(mdp, pi_ref)
    d = discounted_visitation(mdp, pi)
    rhs = d @ np.einsum("sa,sa->s", pi.probs, adv) / (1.0 - mdp.gamma)
    return _equality("pdl_standard", lhs, rhs, tol, instance or _describe(mdp))


def check_pdl_maxent(mdp: TabularMdp, pi: TabularPolicy, pi_beta: TabularPolicy, alpha: float,
                     log_clip=DEFAULT_LOG_CLIP, tol: float = EQ_TOL, corrupt_reward: float = 0.0,
                     instance=None) -> TheoryReport:
    """Max-entropy performance difference against ``pi_beta`` via the shaped advantage.

    ``corrupt_reward`` is a fault-injection hook: it shifts ``r[0, 0]`` after
    the returns on the left-hand side have been computed.
    """
    lhs = max_entropy_return(mdp, pi, alpha) - max_entropy_return(mdp, pi_beta, alpha)
    if corrupt_reward:
        r = np.array(mdp.reward)
        r[0, 0] += corrupt_reward
        mdp = mdp.with_reward(r)
    adv = shaped_advantage(mdp, pi_beta, alpha, log_clip)
    d = discounted_visitation(mdp, pi)
    per_state = np.einsum("sa,sa->s", pi.probs, adv) - alpha * kl_rows(pi.probs, pi_beta.probs, log_clip[0])
    rhs = d @ per_state / (1.0 - mdp.gamma)
    return _equality("pdl_maxent", lhs, rhs, tol, instance or _describe(mdp, alpha=alpha))


# -- bound terms ---------------------------------------------------------------------


def _f_lambda(pi_probs, adv, ell, kl, d_beta, alpha, lam):
    per_state = (np.einsum("sa,sa->s", pi_probs, adv) - alpha * kl
                 + (lam - alpha) * np.einsum("sa,sa->s", pi_probs, ell))
    return float(d_beta @ per_state)


def maximizer(mdp: TabularMdp, pi_beta: TabularPolicy, alpha: float, lam: float,
              variant: str = "original", log_clip=DEFAULT_LOG_CLIP) -> TabularPolicy:
    """Closed-form CCI policy built from the advantage of the given variant."""
    if variant == "shaped":
        adv = shaped_advantage(mdp, pi_beta, alpha, log_clip)
    elif variant == "original":
        adv = standard_advantage(mdp, pi_beta)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return closed_form_policy(adv, pi_beta, CciParams(alpha, lam, log_clip))


def compute_bound_terms(mdp: TabularMdp, pi: TabularPolicy, pi_beta: TabularPolicy, alpha: float,
                        lam: float, log_clip=DEFAULT_LOG_CLIP) -> BoundTerms:
    ell = clip_log(pi_beta.probs, log_clip)
    adv_shaped = shaped_advantage(mdp, pi_beta, alpha, log_clip)
    adv_orig = standard_advantage(mdp, pi_beta)
    d_beta = discounted_visitation(mdp, pi_beta)
    kl = kl_rows(pi.probs, pi_beta.probs, log_clip[0])
    params = CciParams(alpha, lam, log_clip)

    f = {}
    for name, adv in (("shaped", adv_shaped), ("original", adv_orig)):
        star = closed_form_policy(adv, pi_beta, params)
        kl_star = kl_rows(star.probs, pi_beta.probs, log_clip[0])
        f[name] = (_f_lambda(star.probs, adv, ell, kl_star, d_beta, alpha, lam),
                   _f_lambda(pi.probs, adv, ell, kl, d_beta, alpha, lam))

    return BoundTerms(
        B=float(np.max(np.abs(ell))),
        eps_beta=float(np.max(np.abs(np.einsum("sa,sa->s", pi.probs, adv_shaped)))),
        kappa_beta=float(np.max(kl)),
        delta_tv=float(d_beta @ tv_rows(pi.probs, pi_beta.probs)),
        delta_sub=f["shaped"][0] - f["shaped"][1],
        f_lambda_star=f["shaped"][0],
        f_lambda_theta=f["shaped"][1],
        delta_sub_original=f["original"][0] - f["original"][1],
        f_lambda_star_original=f["original"][0],
        f_lambda_theta_original=f["original"][1],
    )


def _bound_rhs(j_beta, t: BoundTerms, alpha, lam, gamma):
    h = 1.0 - gamma
    return (j_beta - 2.0 * t.B * abs(lam - alpha) * t.delta_tv / h
            - (4.0 * alpha * t.B + 2.0 * gamma * (t.eps_beta + alpha * t.kappa_beta)) * t.delta_tv / h ** 2)


def check_theorem1(mdp: TabularMdp, pi_beta: TabularPolicy, alpha: float, lam: float,
                   log_clip=DEFAULT_LOG_CLIP, tol: float = INEQ_TOL, instance=None) -> TheoryReport:
    """``J(pi*_lam)`` against its lower bound; ``pi*_lam`` uses the original-reward advantage."""
    star = maximizer(mdp, pi_beta, alpha, lam, "original", log_clip)
    t = compute_bound_terms(mdp, star, pi_beta, alpha, lam, log_clip)
    lhs = max_entropy_return(mdp, star, alpha)
    rhs = _bound_rhs(max_entropy_return(mdp, pi_beta, alpha), t, alpha, lam, mdp.gamma)
    return _lower_bound("theorem1", lhs, rhs, tol,
                        instance or _describe(mdp, alpha=alpha, lam=lam), asdict(t))


def check_theorem2(mdp: TabularMdp, pi_beta: TabularPolicy, pi_theta: TabularPolicy, alpha: float,
                   lam: float, variant: str = "shaped", log_clip=DEFAULT_LOG_CLIP,
                   tol: float = INEQ_TOL, instance=None) -> TheoryReport:
    """``J(pi_theta)`` against the bound with the parametric gap ``delta_sub`` of ``variant``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    t = compute_bound_terms(mdp, pi_theta, pi_beta, alpha, lam, log_clip)
    lhs = max_entropy_return(mdp, pi_theta, alpha)
    rhs = (_bound_rhs(max_entropy_return(mdp, pi_beta, alpha), t, alpha, lam, mdp.gamma)
           - t.sub_gap(variant) / (1.0 - mdp.gamma))
    desc = instance or _describe(mdp, alpha=alpha, lam=lam)
    return _lower_bound(f"theorem2_{variant}", lhs, rhs, tol, {**desc, "variant": variant}, asdict(t))


def check_occupancy_bound(mdp: TabularMdp, pi: TabularPolicy, pi_beta: TabularPolicy,
                          tol: float = INEQ_TOL, instance=None) -> TheoryReport:
    """``||d_pi - d_beta||_1 <= 2 gamma / (1 - gamma) * TV averaged under d_beta``."""
    d_pi = discounted_visitation(mdp, pi)
    d_beta = discounted_visitation(mdp, pi_beta)
    lhs = np.abs(d_pi - d_beta).sum()
    rhs = 2.0 * mdp.gamma / (1.0 - mdp.gamma) * (d_beta @ tv_rows(pi.probs, pi_beta.probs))
    return _upper_bound("occupancy_bound", lhs, rhs, tol, instance or _describe(mdp))


def check_advantage_bound(mdp: TabularMdp, pi: TabularPolicy, alpha: float, l_min: float,
                          l_max: float, tol: float = INEQ_TOL, instance=None) -> TheoryReport:
    """``max |A_soft| <= 2 (R_max + alpha C_max) / (1 - gamma)``."""
    pos = pi.probs > 0
    with np.errstate(divide="ignore"):
        logp = np.log(pi.probs)
    if np.any(pos & ((logp < l_min) | (logp > l_max))):
        raise ValueError("policy log-probabilities fall outside [l_min, l_max]")
    adv = evaluate_policy(mdp, pi, alpha).advantage
    r_max = float(np.max(np.abs(mdp.reward)))
    c_max = max(abs(l_min), abs(l_max))
    lhs = float(np.max(np.abs(adv)))
    rhs = 2.0 * (r_max + alpha * c_max) / (1.0 - mdp.gamma)
    return _upper_bound("advantage_bound", lhs, rhs, tol, instance or _describe(mdp, alpha=alpha))


# -- monotone constraint and its derivative -------------------------------------------


def _g_oracle(adv_row, ell, alpha, lam):
    """``E_{pi*_lam}[ell]`` written out independently; accepts any real ``lam``."""
    p = softmax(adv_row / alpha + lam / alpha * ell)
    return float(p @ ell)


def check_prop1(adv: np.ndarray, pi_beta: TabularPolicy, alpha: float, lam_grid,
                log_clip=DEFAULT_LOG_CLIP, h: float = FD_STEP, fd_tol: float = FD_TOL,
                mono_tol: float = MONO_TOL, instance=None) -> list[TheoryReport]:
    """Monotonicity of ``g_s`` over ``lam_grid`` and derivative vs central differences, every state."""
    lam_grid = np.asarray(lam_grid, dtype=np.float64)
    if np.any(np.diff(lam_grid) <= 0):
        raise ValueError("lambda grid must be strictly increasing")
    ell = clip_log(pi_beta.probs, log_clip)
    worst_step, worst_fd = math.inf, 0.0
    base = CciParams(alpha, 0.0, log_clip)
    for s in range(adv.shape[0]):
        g = [state_constraint(adv[s], pi_beta.probs[s], base.with_lam(lam)) for lam in lam_grid]
        worst_step = min(worst_step, float(np.min(np.diff(g))))
        for lam in lam_grid:
            fd = (_g_oracle(adv[s], ell[s], alpha, lam + h) - _g_oracle(adv[s], ell[s], alpha, lam - h)) / (2 * h)
            dg = constraint_derivative(adv[s], pi_beta.probs[s], base.with_lam(lam))
            worst_fd = max(worst_fd, abs(fd - dg))
    desc = dict(instance or {"n_states": adv.shape[0], "n_actions": adv.shape[1]}, alpha=alpha)
    return [_lower_bound("prop1_monotone", worst_step, -mono_tol, 0.0, desc),
            _upper_bound("prop1_derivative", worst_fd, fd_tol, 0.0, desc)]


# -- random instances and suites --------------------------------------------------------


def instance_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(suite.encode()), index)))


def random_instance(rng: np.random.Generator, n_states: int, n_actions: int,
                    gamma: float) -> tuple[TabularMdp, TabularPolicy]:
    """Dirichlet(1) transitions, U[-1, 1] rewards, behavior with every probability >= 1e-3."""
    mdp = random_mdp(n_states, n_actions, gamma, rng)
    return mdp, random_policy(n_states, n_actions, rng, scale=1.5, min_prob=1e-3)


def perturb_policy(policy: TabularPolicy, rng: np.random.Generator, scale: float) -> TabularPolicy:
    logits = np.log(policy.probs) + rng.normal(scale=scale, size=policy.shape)
    return TabularPolicy.from_logits(logits)


def _sizes(rng, max_states, max_actions):
    return int(rng.integers(2, max_states + 1)), int(rng.integers(2, max_actions + 1))


def _pdl_case(seed, i, inject_fault=False):
    rng = instance_rng(seed, "pdl", i)
    out = []
    n_s, n_a = _sizes(rng, 6, 3)
    gamma = (0.5, 0.9, 0.99)[i % 3]
    mdp, pi_ref = random_instance(rng, n_s, n_a, gamma)
    pi = random_policy(n_s, n_a, rng, scale=1.5)
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": gamma}
    out.append(check_pdl_standard(mdp, pi, pi_ref, instance=desc))
    alpha = (0.1, 0.5)[i % 2]
    mdp, pi_beta = random_instance(rng, n_s, n_a, 0.9)
    pi = random_policy(n_s, n_a, rng, scale=1.5)
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": 0.9, "alpha": alpha}
    out.append(check_pdl_maxent(mdp, pi, pi_beta, alpha, corrupt_reward=0.1 if inject_fault else 0.0,
                                instance=desc))
    return out


PROP1_ALPHAS = (0.5, 1.0)
PROP1_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0)


def _prop1_case(seed, i, inject_fault=False):
    rng = instance_rng(seed, "prop1", i)
    n_s, n_a = _sizes(rng, 6, 3)
    mdp, pi_beta = random_instance(rng, n_s, n_a, 0.9)
    alpha = PROP1_ALPHAS[i % len(PROP1_ALPHAS)]
    adv = standard_advantage(mdp, pi_beta)
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": 0.9}
    return check_prop1(adv, pi_beta, alpha, np.array(PROP1_GRID) * alpha, instance=desc)


THM_LAMBDA_FACTORS = (0.0, 0.5, 1.0, 2.0, 10.0)


def _thm1_case(seed, i, inject_fault=False):
    rng = instance_rng(seed, "thm1", i)
    n_s, n_a = _sizes(rng, 6, 3)
    gamma = (0.5, 0.9)[i % 2]
    alpha = (0.1, 1.0)[(i // 2) % 2]
    lam = THM_LAMBDA_FACTORS[(i // 4) % len(THM_LAMBDA_FACTORS)] * alpha
    mdp, pi_beta = random_instance(rng, n_s, n_a, gamma)
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": gamma,
            "alpha": alpha, "lam": lam}
    return [check_theorem1(mdp, pi_beta, alpha, lam, instance=desc)]


THM2_SOURCES = ("acpo", "perturbed", "maximizer")


def _acpo_policy(mdp, pi_beta, alpha, lam, seed):
    from .acpo import AcpoConfig, train
    from .data import generate_dataset
    data = generate_dataset(mdp, pi_beta, 2000, 50, seed)
    cfg = AcpoConfig(alpha=alpha, gamma=mdp.gamma, lambda_init=lam, n_steps=200, batch_size=64,
                     eval_every=200, seed=seed, eta_lambda=1e-3)
    return train(cfg, data, mdp, pi_beta).policy


def _thm2_case(seed, i, inject_fault=False):
    rng = instance_rng(seed, "thm2", i)
    n_s, n_a = _sizes(rng, 6, 3)
    gamma = (0.5, 0.9)[i % 2]
    alpha = (0.1, 1.0)[(i // 2) % 2]
    lam = THM_LAMBDA_FACTORS[(i // 4) % len(THM_LAMBDA_FACTORS)] * alpha
    source = THM2_SOURCES[i % 3]
    mdp, pi_beta = random_instance(rng, n_s, n_a, gamma)
    if source == "acpo":
        pi_theta = _acpo_policy(mdp, pi_beta, alpha, lam, int(rng.integers(2 ** 31)))
    elif source == "perturbed":
        pi_theta = perturb_policy(pi_beta, rng, scale=float(rng.choice([0.1, 0.5, 2.0])))
    else:
        pi_theta = maximizer(mdp, pi_beta, alpha, lam, ("shaped", "original")[(i // 3) % 2])
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": gamma,
            "alpha": alpha, "lam": lam, "source": source}
    return [check_theorem2(mdp, pi_beta, pi_theta, alpha, lam, v, instance=desc) for v in VARIANTS]


def _bounds_case(seed, i, inject_fault=False):
    rng = instance_rng(seed, "bounds", i)
    n_s, n_a = _sizes(rng, 6, 3)
    gamma = (0.5, 0.9, 0.99)[i % 3]
    mdp, pi_beta = random_instance(rng, n_s, n_a, gamma)
    pi = random_policy(n_s, n_a, rng, scale=2.0)
    alpha = (0.0, 0.1, 1.0)[i % 3]
    desc = {"seed": seed, "index": i, "n_states": n_s, "n_actions": n_a, "gamma": gamma}
    l_min, l_max = DEFAULT_LOG_CLIP
    return [check_occupancy_bound(mdp, pi, pi_beta, instance=desc),
            check_advantage_bound(mdp, pi, alpha, l_min, l_max, instance={**desc, "alpha": alpha})]


_CASES = {"pdl": _pdl_case, "prop1": _prop1_case, "thm1": _thm1_case, "thm2": _thm2_case,
          "bounds": _bounds_case}
DEFAULT_COUNTS = {"pdl": 100, "prop1": 50, "thm1": 200, "thm2": 200, "bounds": 100}


def _run_case(args):
    suite, seed, i, inject_fault = args
    return _CASES[suite](seed, i, inject_fault)


def run_suite(suite: str, n_instances: int | None = None, seed: int = 0, workers: int = 1,
              inject_fault: bool = False) -> list[TheoryReport]:
    """Run one suite (or ``"all"``); reports come back in instance order regardless of ``workers``."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    names = list(_CASES) if suite == "all" else [suite]
    jobs = [(name, seed, i, inject_fault)
            for name in names for i in range(DEFAULT_COUNTS[name] if n_instances is None else n_instances)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(_run_case, jobs, chunksize=8))
    else:
        batches = [_run_case(j) for j in jobs]
    return [rep for batch in batches for rep in batch]


def summarize(reports: list[TheoryReport]) -> dict:
    by_check: dict = {}
    for rep in reports:
        entry = by_check.setdefault(rep.check, {"n": 0, "failed": 0, "min_slack": math.inf,
                                                "max_slack": -math.inf})
        entry["n"] += 1
        entry["failed"] += int(not rep.passed)
        # equality checks report |lhs - rhs|, so max_slack is their worst case
        entry["min_slack"] = min(entry["min_slack"], rep.slack)
        entry["max_slack"] = max(entry["max_slack"], rep.slack)
    return {"n_reports": len(reports), "n_failed": sum(not r.passed for r in reports),
            "passed": all(r.passed for r in reports), "checks": by_check}
