"""Offline datasets: generation under a behavior policy, tabular behavior MLE, JSON-lines I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels
from .mdp import TabularMdp, TabularPolicy
from .rng import rng_stream

DEFAULT_SMOOTHING = 0.5


class Transition(NamedTuple):
    s: int
    a: int
    r: float
    s_next: int
    terminal: bool


@dataclass(eq=False)
class OfflineDataset:
    """Column-stored transitions plus generation metadata."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.s_next = np.asarray(self.s_next, dtype=np.int64)
        self.terminal = np.asarray(self.terminal, dtype=bool)
        n = len(self.s)
        if not all(len(x) == n for x in (self.a, self.r, self.s_next, self.terminal)):
            raise ValueError("transition columns have different lengths")
        for key in ("n_states", "n_actions"):
            if key in self.meta and n:
                col = self.a if key == "n_actions" else np.concatenate([self.s, self.s_next])
                if col.min() < 0 or col.max() >= self.meta[key]:
                    raise ValueError(f"transition indices exceed {key}={self.meta[key]}")

    def __len__(self):
        return len(self.s)

    def __iter__(self):
        for i in range(len(self)):
            yield Transition(int(self.s[i]), int(self.a[i]), float(self.r[i]),
                             int(self.s_next[i]), bool(self.terminal[i]))

    @classmethod
    def from_transitions(cls, transitions, meta=None) -> "OfflineDataset":
        rows = list(transitions)
        if not rows:
            return cls([], [], [], [], [], dict(meta or {}))
        s, a, r, sn, term = zip(*rows)
        return cls(s, a, r, sn, term, dict(meta or {}))

    def check_shapes(self, n_states: int, n_actions: int) -> None:
        if len(self) == 0:
            return
        if max(self.s.max(), self.s_next.max()) >= n_states or self.a.max() >= n_actions:
            raise ValueError(f"dataset indices exceed MDP shape ({n_states}, {n_actions})")
        if min(self.s.min(), self.s_next.min(), self.a.min()) < 0:
            raise ValueError("negative state or action index in dataset")

    # JSON-lines: one metadata header line, then one transition per line.
    def dumps(self) -> str:
        lines = [json.dumps({"meta": self.meta}, sort_keys=True)]
        for t in self:
            lines.append(json.dumps({"s": t.s, "a": t.a, "r": t.r, "s_next": t.s_next,
                                     "terminal": t.terminal}))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "OfflineDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty dataset file (missing metadata header)")
        header = json.loads(lines[0])
        if "meta" not in header:
            raise ValueError("first line must be a metadata header {\"meta\": {...}}")
        rows = []
        for lineno, ln in enumerate(lines[1:], start=2):
            d = json.loads(ln)
            try:
                rows.append(Transition(int(d["s"]), int(d["a"]), float(d["r"]),
                                       int(d["s_next"]), bool(d["terminal"])))
            except KeyError as exc:
                raise ValueError(f"line {lineno}: missing key {exc}") from None
        return cls.from_transitions(rows, header["meta"])

    @classmethod
    def load(cls, path) -> "OfflineDataset":
        return cls.loads(Path(path).read_text())


def generate_dataset(mdp: TabularMdp, behavior: TabularPolicy, n_transitions: int,
                     horizon: int, seed: int, mdp_id: str | None = None,
                     behavior_id: str = "custom", backend=None) -> OfflineDataset:
    """Roll out episodes under ``behavior`` until ``n_transitions`` are collected.

    Episodes end on entering an absorbing state (``terminal=True``) or at
    ``horizon`` steps (``terminal=False``, bootstrapped by the learner).
    """
    if n_transitions < 0:
        raise ValueError("n_transitions must be >= 0")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if behavior.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("behavior policy shape does not match the MDP")
    absorbing = np.zeros(mdp.n_states, dtype=bool)
    absorbing[mdp.absorbing_states()] = True
    u = rng_stream(seed, "dataset").random((n_transitions, 3))
    s, a, r, sn, term = kernels.rollout(
        kernels.row_cdf(mdp.initial_dist), kernels.row_cdf(mdp.transition),
        kernels.row_cdf(behavior.probs), mdp.reward, absorbing, n_transitions, horizon, u,
        backend=backend)
    meta = {
        "seed": int(seed),
        "mdp": mdp_id or mdp.name,
        "behavior": behavior_id,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "n_trajectories": _count_episodes(term, horizon),
        "horizon": int(horizon),
        "n_transitions": int(n_transitions),
    }
    return OfflineDataset(s, a, r, sn, term, meta)


def _count_episodes(terminal, horizon):
    n, t, new = 0, 0, True
    for term in terminal:
        if new:
            n, t, new = n + 1, 0, False
        t += 1
        new = bool(term) or t >= horizon
    return n


def action_counts(dataset: OfflineDataset, n_states: int, n_actions: int) -> np.ndarray:
    dataset.check_shapes(n_states, n_actions)
    flat = np.bincount(dataset.s * n_actions + dataset.a, minlength=n_states * n_actions)
    return flat.reshape(n_states, n_actions)


def fit_behavior_mle(dataset: OfflineDataset, n_states: int, n_actions: int,
                     smoothing: float = DEFAULT_SMOOTHING, strict: bool = False) -> TabularPolicy:
    """Additively smoothed count estimate of the behavior policy.

    With ``smoothing=0`` this is the exact maximizer of the dataset
    log-likelihood over tabular policies. Unvisited states get a uniform row
    (an error when ``strict`` and ``smoothing == 0``).
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    counts = action_counts(dataset, n_states, n_actions).astype(np.float64)
    totals = counts.sum(axis=1)
    unvisited = totals == 0
    if strict and smoothing == 0 and np.any(unvisited):
        raise ValueError(f"states {np.flatnonzero(unvisited).tolist()} never appear in the dataset")
    probs = np.full((n_states, n_actions), 1.0 / n_actions)
    seen = ~unvisited
    probs[seen] = (counts[seen] + smoothing) / (totals[seen, None] + smoothing * n_actions)
    return TabularPolicy(probs)


def dataset_state_distribution(dataset: OfflineDataset, n_states: int | None = None) -> np.ndarray:
    """Empirical distribution of the ``s`` column."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    n = n_states or dataset.meta.get("n_states") or int(dataset.s.max()) + 1
    counts = np.bincount(dataset.s, minlength=n).astype(np.float64)
    return counts / counts.sum()
