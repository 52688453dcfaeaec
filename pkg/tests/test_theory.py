import json
import math

import numpy as np
import pytest

from cci_lab.mdp import TabularMdp, TabularPolicy, max_entropy_return
from cci_lab.theory import (PROP1_GRID, TheoryReport, check_advantage_bound, check_occupancy_bound,
                            check_pdl_maxent, check_pdl_standard, check_prop1, check_theorem1,
                            check_theorem2, compute_bound_terms, instance_rng, maximizer,
                            random_instance, run_suite, standard_advantage, summarize)


def one_state(rewards, gamma):
    r = np.atleast_2d(np.asarray(rewards, dtype=float))
    return TabularMdp(np.ones((1, r.shape[1], 1)), r, gamma, np.array([1.0]))


@pytest.fixture
def inst():
    return random_instance(np.random.default_rng(3), 5, 3, 0.9)


# -- performance difference ----------------------------------------------------------


def test_pdl_standard_identical_policies(inst):
    mdp, beh = inst
    rep = check_pdl_standard(mdp, beh, beh)
    assert abs(rep.lhs) < 1e-12 and abs(rep.rhs) < 1e-12 and rep.passed


def test_pdl_standard_one_state_example():
    mdp = one_state([1.0, 0.0], 0.5)
    rep = check_pdl_standard(mdp, TabularPolicy(np.array([[1.0, 0.0]])), TabularPolicy(np.array([[0.0, 1.0]])))
    assert rep.lhs == pytest.approx(2.0, abs=1e-14)
    assert rep.rhs == pytest.approx(2.0, abs=1e-14)
    assert rep.passed


def test_pdl_maxent_identical_policies(inst):
    mdp, beh = inst
    rep = check_pdl_maxent(mdp, beh, beh, 0.3)
    assert abs(rep.lhs) < 1e-12 and abs(rep.rhs) < 1e-12


def test_pdl_maxent_alpha_zero_reduces(inst):
    mdp, beh = inst
    pi = TabularPolicy.from_logits(np.random.default_rng(0).normal(size=(5, 3)))
    a = check_pdl_maxent(mdp, pi, beh, 0.0)
    b = check_pdl_standard(mdp, pi, beh)
    assert a.passed and b.passed
    assert abs(a.rhs - b.rhs) < 1e-8


def test_pdl_fault_injection_detected(inst):
    mdp, beh = inst
    pi = TabularPolicy.from_logits(np.random.default_rng(1).normal(size=(5, 3)))
    assert check_pdl_maxent(mdp, pi, beh, 0.1).passed
    assert not check_pdl_maxent(mdp, pi, beh, 0.1, corrupt_reward=0.1).passed


# -- bound terms ----------------------------------------------------------------------


def test_bound_terms_identical_policies(inst):
    mdp, beh = inst
    t = compute_bound_terms(mdp, beh, beh, 0.1, 0.1)
    assert t.eps_beta < 1e-12 and t.kappa_beta < 1e-15 and t.delta_tv == 0.0


def test_bound_terms_B():
    mdp = one_state([0.0, 0.0], 0.5)
    t = compute_bound_terms(mdp, TabularPolicy.uniform(1, 2), TabularPolicy(np.array([[0.9, 0.1]])), 0.1, 0.1)
    assert t.B == pytest.approx(math.log(10), abs=1e-14)
    assert abs(t.B - 2.302585) < 1e-6


@pytest.mark.parametrize("variant", ["shaped", "original"])
@pytest.mark.parametrize("lam_factor", [0.0, 0.5, 1.0, 3.0])
def test_maximizer_has_zero_gap(inst, variant, lam_factor):
    mdp, beh = inst
    alpha = 0.2
    star = maximizer(mdp, beh, alpha, lam_factor * alpha, variant)
    t = compute_bound_terms(mdp, star, beh, alpha, lam_factor * alpha)
    assert abs(t.sub_gap(variant)) < 1e-12


def test_gap_nonnegative_for_other_policies(inst):
    mdp, beh = inst
    rng = np.random.default_rng(5)
    for _ in range(20):
        pi = TabularPolicy.from_logits(rng.normal(scale=2.0, size=(5, 3)))
        t = compute_bound_terms(mdp, pi, beh, 0.1, 0.3)
        assert t.delta_sub >= -1e-12 and t.delta_sub_original >= -1e-12


# -- theorems -------------------------------------------------------------------------


def test_theorem1_equality_case():
    # equal rewards in a one-state MDP give A = 0, so the maximizer at lam = alpha is pi_beta
    mdp = one_state([0.5, 0.5, 0.5], 0.9)
    beh = TabularPolicy(np.array([[0.2, 0.3, 0.5]]))
    rep = check_theorem1(mdp, beh, 0.4, 0.4)
    assert rep.terms["delta_tv"] < 1e-15
    assert abs(rep.slack) < 1e-10 and rep.passed
    assert rep.rhs == pytest.approx(max_entropy_return(mdp, beh, 0.4), abs=1e-10)


@pytest.mark.parametrize("alpha,lam", [(0.1, 0.0), (0.1, 0.05), (1.0, 1.0), (1.0, 10.0)])
def test_theorem1_holds(inst, alpha, lam):
    mdp, beh = inst
    assert check_theorem1(mdp, beh, alpha, lam).passed


def test_theorem2_behavior_policy(inst):
    mdp, beh = inst
    for v in ("shaped", "original"):
        rep = check_theorem2(mdp, beh, beh, 0.1, 0.1, v)
        assert rep.terms["delta_tv"] == 0.0
        assert rep.passed


def test_theorem2_reduces_to_theorem1(inst):
    mdp, beh = inst
    star = maximizer(mdp, beh, 0.5, 1.0, "original")
    t1 = check_theorem1(mdp, beh, 0.5, 1.0)
    t2 = check_theorem2(mdp, beh, star, 0.5, 1.0, "original")
    assert t2.lhs == t1.lhs
    assert t2.rhs == pytest.approx(t1.rhs, abs=1e-10)


def test_theorem2_unknown_variant(inst):
    mdp, beh = inst
    with pytest.raises(ValueError):
        check_theorem2(mdp, beh, beh, 0.1, 0.1, "other")


# -- bounds ---------------------------------------------------------------------------


def test_occupancy_identical(inst):
    mdp, beh = inst
    rep = check_occupancy_bound(mdp, beh, beh)
    assert rep.lhs < 1e-12 and rep.rhs == 0.0 and rep.passed


def test_occupancy_two_state_example():
    # action 0 stays, action 1 switches; start in state 0
    t = np.zeros((2, 2, 2))
    t[0, 0, 0] = t[1, 0, 1] = 1.0
    t[0, 1, 1] = t[1, 1, 0] = 1.0
    mdp = TabularMdp(t, np.zeros((2, 2)), 0.5, np.array([1.0, 0.0]))
    beh = TabularPolicy(np.array([[1.0, 0.0], [1.0, 0.0]]))
    pi = TabularPolicy(np.array([[0.0, 1.0], [1.0, 0.0]]))
    rep = check_occupancy_bound(mdp, pi, beh)
    assert rep.lhs == pytest.approx(1.0, abs=1e-15)   # 2 gamma
    assert rep.rhs == pytest.approx(2.0, abs=1e-15)   # 2 gamma / (1 - gamma) * 1
    assert rep.passed


def test_advantage_bound_zero_reward():
    mdp = one_state([0.0], 0.9)
    rep = check_advantage_bound(mdp, TabularPolicy(np.ones((1, 1))), 0.5, -20.0, 0.0)
    assert rep.lhs == 0.0 and rep.passed


def test_advantage_bound_one_state():
    mdp = one_state([1.0, -1.0], 0.5)
    rep = check_advantage_bound(mdp, TabularPolicy.uniform(1, 2), 0.0, -20.0, 0.0)
    assert rep.rhs == pytest.approx(4.0, abs=1e-15)
    assert rep.lhs == pytest.approx(1.0, abs=1e-14)
    assert rep.passed


def test_advantage_bound_precondition():
    mdp = one_state([1.0, -1.0], 0.5)
    with pytest.raises(ValueError):
        check_advantage_bound(mdp, TabularPolicy(np.array([[1 - 1e-10, 1e-10]])), 0.1, -5.0, 0.0)


# -- Prop. 1 ------------------------------------------------------------------------


def test_prop1_single_instance(inst):
    mdp, beh = inst
    reps = check_prop1(standard_advantage(mdp, beh), beh, 0.5, np.array(PROP1_GRID) * 0.5)
    assert [r.check for r in reps] == ["prop1_monotone", "prop1_derivative"]
    assert all(r.passed for r in reps)


def test_prop1_small_alpha_with_finer_step():
    # at alpha = 0.1 the h = 1e-4 central difference carries O(1e-5) truncation error;
    # a smaller step isolates the derivative formula itself
    worst = 0.0
    for i in range(50):
        rng = instance_rng(0, "prop1", i)
        n_s, n_a = int(rng.integers(2, 7)), int(rng.integers(2, 4))
        mdp, beh = random_instance(rng, n_s, n_a, 0.9)
        reps = check_prop1(standard_advantage(mdp, beh), beh, 0.1, np.array(PROP1_GRID) * 0.1, h=1e-6)
        assert all(r.passed for r in reps)
        worst = max(worst, reps[1].lhs)
    assert worst < 1e-6


# -- suites and reports ---------------------------------------------------------------


def test_report_json_roundtrip(inst):
    mdp, beh = inst
    rep = check_theorem1(mdp, beh, 0.1, 0.2)
    back = TheoryReport.from_dict(json.loads(rep.to_json()))
    assert back == rep


def test_suite_reproducible():
    a = [r.to_json() for r in run_suite("bounds", 10, seed=3)]
    b = [r.to_json() for r in run_suite("bounds", 10, seed=3)]
    assert a == b
    assert a != [r.to_json() for r in run_suite("bounds", 10, seed=4)]


def test_suite_workers_preserve_order():
    a = [r.to_json() for r in run_suite("thm1", 12, seed=1)]
    b = [r.to_json() for r in run_suite("thm1", 12, seed=1, workers=2)]
    assert a == b


def test_suite_unknown_name():
    with pytest.raises(ValueError):
        run_suite("lemma9")


def test_summary_counts_failures():
    reps = run_suite("pdl", 5, seed=0, inject_fault=True)
    s = summarize(reps)
    assert not s["passed"]
    assert s["checks"]["pdl_maxent"]["failed"] == 5
    assert s["checks"]["pdl_standard"]["failed"] == 0
