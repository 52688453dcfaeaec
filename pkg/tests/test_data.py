from fractions import Fraction

import numpy as np
import pytest

from cci_lab.data import (OfflineDataset, Transition, action_counts, dataset_state_distribution,
                          fit_behavior_mle, generate_dataset)
from cci_lab.mdp import (TabularMdp, TabularPolicy, chain_mdp, discounted_visitation, random_mdp,
                         random_policy, tv_rows)


def tiny(rows, n_states=3, n_actions=2):
    return OfflineDataset.from_transitions([Transition(*r) for r in rows],
                                           {"n_states": n_states, "n_actions": n_actions})


def test_empty_dataset():
    mdp = chain_mdp(3)
    data = generate_dataset(mdp, TabularPolicy.uniform(3, 2), 0, 10, seed=0)
    assert len(data) == 0
    assert data.dumps().count("\n") == 1


def test_generation_deterministic():
    mdp = random_mdp(4, 3, 0.9, seed=0)
    beh = random_policy(4, 3, seed=1)
    a = generate_dataset(mdp, beh, 500, 20, seed=9).dumps()
    b = generate_dataset(mdp, beh, 500, 20, seed=9).dumps()
    assert a == b
    assert a != generate_dataset(mdp, beh, 500, 20, seed=10).dumps()


def test_deterministic_mdp_and_policy():
    mdp = chain_mdp(5)
    pi = TabularPolicy(np.tile([0.0, 1.0], (5, 1)))
    data = generate_dataset(mdp, pi, 200, 100, seed=0)
    for s in np.unique(data.s):
        assert len(set(data.a[data.s == s])) == 1
        assert len(set(data.s_next[data.s == s])) == 1


def test_episode_boundaries():
    mdp = chain_mdp(4)
    pi = TabularPolicy(np.tile([0.0, 1.0], (4, 1)))
    data = generate_dataset(mdp, pi, 9, 100, seed=0)
    np.testing.assert_array_equal(data.s, [0, 1, 2] * 3)
    np.testing.assert_array_equal(data.terminal, [False, False, True] * 3)
    np.testing.assert_array_equal(data.r, [0, 0, 1] * 3)
    assert data.meta["n_trajectories"] == 3


def test_horizon_truncation_not_terminal():
    mdp = chain_mdp(10)
    pi = TabularPolicy(np.tile([0.0, 1.0], (10, 1)))
    data = generate_dataset(mdp, pi, 6, 3, seed=0)
    np.testing.assert_array_equal(data.s, [0, 1, 2, 0, 1, 2])
    assert not data.terminal.any()
    assert data.meta["n_trajectories"] == 2


def test_meta_fields():
    data = generate_dataset(chain_mdp(3), TabularPolicy.uniform(3, 2), 10, 5, seed=3,
                            mdp_id="chain:3", behavior_id="uniform")
    for key in ("seed", "mdp", "behavior", "n_trajectories", "horizon", "n_states", "n_actions"):
        assert key in data.meta
    assert data.meta["mdp"] == "chain:3"


def test_behavior_shape_mismatch():
    with pytest.raises(ValueError):
        generate_dataset(chain_mdp(3), TabularPolicy.uniform(2, 2), 10, 5, seed=0)


def test_empirical_frequencies_match_generator():
    mdp = random_mdp(5, 3, 0.9, seed=2)
    beh = random_policy(5, 3, seed=3)
    data = generate_dataset(mdp, beh, 100_000, 50, seed=0)
    counts = action_counts(data, 5, 3)
    freq = counts / counts.sum(axis=1, keepdims=True)
    for s in np.flatnonzero(counts.sum(axis=1) >= 1000):
        assert tv_rows(freq[s], beh.probs[s]) < 0.05


# -- MLE --------------------------------------------------------------------------


def test_mle_count_ratio():
    data = tiny([(0, 0, 0.0, 1, False)] * 9 + [(0, 1, 0.0, 1, False)])
    pi = fit_behavior_mle(data, 3, 2, smoothing=0.0)
    np.testing.assert_allclose(pi.probs[0], [0.9, 0.1], atol=1e-15)


def test_mle_exact_rationals(rng):
    for _ in range(10):
        n_s, n_a = 3, 4
        s = rng.integers(0, n_s, size=17)
        a = rng.integers(0, n_a, size=17)
        data = OfflineDataset(s, a, np.zeros(17), s, np.zeros(17, bool))
        pi = fit_behavior_mle(data, n_s, n_a, smoothing=0.0)
        for st in range(n_s):
            tot = int(np.sum(s == st))
            for ac in range(n_a):
                if tot:
                    exact = Fraction(int(np.sum((s == st) & (a == ac))), tot)
                    assert Fraction(pi.probs[st, ac]).limit_denominator(1000) == exact


def test_mle_unvisited_rows_uniform():
    data = tiny([(0, 0, 0.0, 1, False)])
    pi = fit_behavior_mle(data, 3, 2, smoothing=1.0)
    np.testing.assert_array_equal(pi.probs[2], [0.5, 0.5])
    np.testing.assert_allclose(pi.probs.sum(axis=1), 1.0, atol=1e-12)


def test_mle_strict_unvisited():
    data = tiny([(0, 0, 0.0, 1, False)])
    with pytest.raises(ValueError):
        fit_behavior_mle(data, 3, 2, smoothing=0.0, strict=True)


def test_mle_smoothing_formula():
    data = tiny([(1, 1, 0.0, 1, False)] * 3)
    pi = fit_behavior_mle(data, 3, 2, smoothing=0.5)
    np.testing.assert_allclose(pi.probs[1], [0.5 / 4, 3.5 / 4])


def test_mle_recovers_generator():
    mdp = random_mdp(4, 3, 0.9, seed=7)
    beh = random_policy(4, 3, seed=8)
    data = generate_dataset(mdp, beh, 100_000, 50, seed=1)
    fit = fit_behavior_mle(data, 4, 3)
    visits = np.bincount(data.s, minlength=4)
    assert np.all(tv_rows(fit.probs, beh.probs)[visits >= 1000] < 0.05)


# -- state distribution ---------------------------------------------------------------


def test_state_distribution_examples():
    np.testing.assert_array_equal(dataset_state_distribution(tiny([(0, 0, 0.0, 0, False)] * 3)), [1, 0, 0])
    d = dataset_state_distribution(tiny([(0, 0, 0.0, 0, False), (1, 0, 0.0, 0, False)]))
    np.testing.assert_array_equal(d, [0.5, 0.5, 0.0])


def test_state_distribution_empty():
    with pytest.raises(ValueError):
        dataset_state_distribution(tiny([]))


def test_state_distribution_tracks_visitation():
    # With horizon ~ 1/(1-gamma) the empirical distribution approximates d_pi
    mdp = random_mdp(5, 2, 0.9, seed=4)
    mdp = TabularMdp(mdp.transition, mdp.reward, 0.9, np.eye(5)[0])
    beh = random_policy(5, 2, seed=5)
    data = generate_dataset(mdp, beh, 100_000, 10, seed=2)
    assert tv_rows(dataset_state_distribution(data, 5), discounted_visitation(mdp, beh)) < 0.1


# -- I/O ---------------------------------------------------------------------------


def test_jsonl_roundtrip(tmp_path):
    data = generate_dataset(random_mdp(3, 2, 0.9, seed=0), random_policy(3, 2, seed=0), 50, 7, seed=4)
    data.save(tmp_path / "d.jsonl")
    back = OfflineDataset.load(tmp_path / "d.jsonl")
    for col in ("s", "a", "r", "s_next", "terminal"):
        np.testing.assert_array_equal(getattr(back, col), getattr(data, col))
    assert back.meta == data.meta
    assert back.dumps() == data.dumps()


def test_load_rejects_missing_header():
    with pytest.raises(ValueError):
        OfflineDataset.loads('{"s": 0, "a": 0, "r": 0, "s_next": 0, "terminal": false}\n')


def test_indices_checked_against_meta():
    with pytest.raises(ValueError):
        tiny([(5, 0, 0.0, 0, False)])
