"""Inner loops of dataset rollouts and tabular ACPO updates.

Each kernel has a loop implementation (compiled with numba) and a numpy
implementation. Both touch the same entries in the same order with the
same floating-point operations, so they agree bit for bit; transcendental
functions (exp, log) are evaluated by the callers, never in here.

Random numbers are always drawn by the caller from numpy generators and
passed in as uniforms, which keeps results independent of the backend.
"""

import numpy as np

from . import _backend

# -- categorical sampling -------------------------------------------------------


def _sample_cdf_loop(cdf, states, u):
    n = states.shape[0]
    n_a = cdf.shape[1]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        s = states[i]
        k = 0
        while k < n_a - 1 and u[i] >= cdf[s, k]:
            k += 1
        out[i] = k
    return out


def _sample_cdf_numpy(cdf, states, u):
    k = np.sum(u[:, None] >= cdf[states], axis=1)
    return np.minimum(k, cdf.shape[1] - 1).astype(np.int64)


# -- per-entry mean squared-loss step -------------------------------------------


def _scatter_mean_loop(table, idx, target, lr):
    n = table.shape[0]
    acc = np.zeros(n)
    cnt = np.zeros(n)
    for i in range(idx.shape[0]):
        j = idx[i]
        acc[j] += table[j] - target[i]
        cnt[j] += 1.0
    for j in range(n):
        if cnt[j] > 0:
            table[j] -= lr * (acc[j] / cnt[j])


def _scatter_mean_numpy(table, idx, target, lr):
    n = table.shape[0]
    acc = np.bincount(idx, weights=table[idx] - target, minlength=n)
    cnt = np.bincount(idx, minlength=n).astype(np.float64)
    m = cnt > 0
    table[m] -= lr * (acc[m] / cnt[m])


# -- weighted log-likelihood ascent on softmax logits ----------------------------


def _policy_grad_loop(probs, states, actions, weights):
    n_s, n_a = probs.shape
    w_sa = np.zeros((n_s, n_a))
    w_s = np.zeros(n_s)
    cnt = np.zeros(n_s)
    for i in range(states.shape[0]):
        s = states[i]
        w_sa[s, actions[i]] += weights[i]
        w_s[s] += weights[i]
        cnt[s] += 1.0
    grad = np.zeros((n_s, n_a))
    for s in range(n_s):
        if cnt[s] > 0:
            for a in range(n_a):
                grad[s, a] = (w_sa[s, a] - w_s[s] * probs[s, a]) / cnt[s]
    return grad


def _policy_grad_numpy(probs, states, actions, weights):
    n_s, n_a = probs.shape
    w_sa = np.bincount(states * n_a + actions, weights=weights, minlength=n_s * n_a).reshape(n_s, n_a)
    w_s = np.bincount(states, weights=weights, minlength=n_s)
    cnt = np.bincount(states, minlength=n_s).astype(np.float64)
    grad = np.zeros((n_s, n_a))
    m = cnt > 0
    grad[m] = (w_sa[m] - w_s[m, None] * probs[m]) / cnt[m, None]
    return grad


# -- episodic rollouts -----------------------------------------------------------


def _rollout_loop(init_cdf, trans_cdf, pol_cdf, reward, absorbing, n, horizon, u):
    n_s = init_cdf.shape[0]
    n_a = pol_cdf.shape[1]
    s_out = np.empty(n, dtype=np.int64)
    a_out = np.empty(n, dtype=np.int64)
    r_out = np.empty(n)
    sn_out = np.empty(n, dtype=np.int64)
    term_out = np.zeros(n, dtype=np.bool_)
    s = 0
    t = 0
    new_episode = True
    for i in range(n):
        if new_episode:
            s = 0
            while s < n_s - 1 and u[i, 0] >= init_cdf[s]:
                s += 1
            t = 0
            new_episode = False
        a = 0
        while a < n_a - 1 and u[i, 1] >= pol_cdf[s, a]:
            a += 1
        sn = 0
        while sn < n_s - 1 and u[i, 2] >= trans_cdf[s, a, sn]:
            sn += 1
        s_out[i] = s
        a_out[i] = a
        r_out[i] = reward[s, a]
        sn_out[i] = sn
        term_out[i] = absorbing[sn]
        t += 1
        if absorbing[sn] or t >= horizon:
            new_episode = True
        else:
            s = sn
    return s_out, a_out, r_out, sn_out, term_out


_NUMPY = {
    "sample_cdf": _sample_cdf_numpy,
    "scatter_mean": _scatter_mean_numpy,
    "policy_grad": _policy_grad_numpy,
    # inherently sequential; the fallback runs the loop in the interpreter
    "rollout": _rollout_loop,
}

if _backend.HAVE_NUMBA:
    _NUMBA = {
        "sample_cdf": _backend.njit(_sample_cdf_loop),
        "scatter_mean": _backend.njit(_scatter_mean_loop),
        "policy_grad": _backend.njit(_policy_grad_loop),
        "rollout": _backend.njit(_rollout_loop),
    }
else:  # pragma: no cover
    _NUMBA = None

BACKENDS = ("numba", "numpy")


def _impl(name, backend):
    backend = backend or _backend.backend_name()
    if backend == "numba":
        if _NUMBA is None:
            raise RuntimeError("numba backend requested but numba is not installed")
        return _NUMBA[name]
    if backend == "numpy":
        return _NUMPY[name]
    raise ValueError(f"unknown backend {backend!r}")


def row_cdf(probs):
    """Cumulative sums along the last axis, used for inverse-CDF sampling."""
    return np.ascontiguousarray(np.cumsum(probs, axis=-1))


def sample_cdf(cdf, states, u, backend=None):
    """Draw one action per entry of ``states`` from the rows of ``cdf``."""
    return _impl("sample_cdf", backend)(cdf, np.asarray(states, dtype=np.int64),
                                        np.asarray(u, dtype=np.float64))


def scatter_mean_step(table, idx, target, lr, backend=None):
    """In-place SGD on ``0.5 (table[j] - target)**2`` averaged over the hits of each entry.

    ``table`` is a contiguous 1-D float array (pass ``arr.reshape(-1)`` for tables).
    """
    _impl("scatter_mean", backend)(table, np.asarray(idx, dtype=np.int64),
                                   np.asarray(target, dtype=np.float64), float(lr))


def policy_grad(probs, states, actions, weights, backend=None):
    """Gradient w.r.t. softmax logits of ``sum_s mean_{i in s} w_i log pi(a_i|s)``."""
    return _impl("policy_grad", backend)(np.ascontiguousarray(probs, dtype=np.float64),
                                         np.asarray(states, dtype=np.int64),
                                         np.asarray(actions, dtype=np.int64),
                                         np.asarray(weights, dtype=np.float64))


def rollout(init_cdf, trans_cdf, pol_cdf, reward, absorbing, n, horizon, u, backend=None):
    return _impl("rollout", backend)(init_cdf, trans_cdf, pol_cdf,
                                     np.ascontiguousarray(reward, dtype=np.float64),
                                     np.asarray(absorbing, dtype=np.bool_), int(n), int(horizon),
                                     np.ascontiguousarray(u, dtype=np.float64))
