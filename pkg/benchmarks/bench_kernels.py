"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Also runs a short ACPO training loop under each backend and checks the
results are bit-identical.
"""

import argparse
import time

import numpy as np

from cci_lab import kernels
from cci_lab.acpo import AcpoConfig, train
from cci_lab.data import generate_dataset
from cci_lab.mdp import epsilon_greedy, gridworld, optimal_q


def best_of(fn, repeat):
    fn()  # warm-up (numba compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    n_s, n_a, n = 400, 8, 100_000
    probs = rng.dirichlet(np.ones(n_a), size=n_s)
    cdf = kernels.row_cdf(probs)
    states = rng.integers(0, n_s, size=n)
    actions = rng.integers(0, n_a, size=n)
    u = rng.random(n)
    target = rng.normal(size=n)
    w = rng.exponential(size=n)
    idx = states * n_a + actions

    mdp = gridworld(10, 10)
    beh = epsilon_greedy(optimal_q(mdp), 0.2)
    absorbing = np.zeros(mdp.n_states, dtype=bool)
    absorbing[mdp.absorbing_states()] = True
    roll_u = rng.random((n, 3))
    roll_args = (kernels.row_cdf(mdp.initial_dist), kernels.row_cdf(mdp.transition),
                 kernels.row_cdf(beh.probs), mdp.reward, absorbing, n, 200, roll_u)

    return {
        "sample_cdf": lambda b: kernels.sample_cdf(cdf, states, u, backend=b),
        "scatter_mean": lambda b: kernels.scatter_mean_step(np.zeros(n_s * n_a), idx, target, 0.5, backend=b),
        "policy_grad": lambda b: kernels.policy_grad(probs, states, actions, w, backend=b),
        "rollout": lambda b: kernels.rollout(*roll_args, backend=b),
    }


def train_case(backend):
    mdp = gridworld(5, 5)
    beh = epsilon_greedy(optimal_q(mdp), 0.2)
    data = generate_dataset(mdp, beh, 20_000, 100, seed=0, backend=backend)
    return train(AcpoConfig(n_steps=2000, eval_every=500), data, mdp, beh, backend=backend)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<14}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, fn in cases.items():
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<14}{t_nb * 1e3:>12.3f}{t_np * 1e3:>12.3f}{t_np / t_nb:>10.1f}")

    results = {}
    for backend in kernels.BACKENDS:
        train_case(backend)  # warm-up
        t0 = time.perf_counter()
        results[backend] = train_case(backend)
        print(f"train 2000 steps [{backend}]: {time.perf_counter() - t0:.2f} s")
    same = np.array_equal(results["numba"].logits, results["numpy"].logits)
    print(f"backends bit-identical: {same}")


if __name__ == "__main__":
    main()
