"""Empirical MDP built from an offline dataset, plus bootstrap trajectory batches."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chain import ACTIONS, OfflineDataset, ReturnTable, TabularPolicy, pair_index
from .distances import GaussianMixture, ScalarGaussian
from .rng import make_rng


@dataclass(frozen=True, eq=False)
class EmpiricalMDP:
    """Per-pair outcome lists ``(r, s')`` and empirical pair frequencies.

    Outcomes of pair ``p`` are rows ``offsets[p]:offsets[p+1]`` of ``rewards``
    and ``next_states``. Unobserved pairs fall back to the single outcome
    ``(0, s)``, a self-loop with zero reward.
    """

    n_states: int
    counts: np.ndarray
    offsets: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    @property
    def n_pairs(self) -> int:
        return 2 * self.n_states

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def reward_dim(self) -> int:
        return self.rewards.shape[1]

    @cached_property
    def b_hat(self) -> np.ndarray:
        if self.total == 0:
            return np.zeros(self.n_pairs)
        return self.counts / self.total

    @property
    def observed(self) -> np.ndarray:
        return self.counts > 0

    def outcomes(self, s: int, a: int):
        """Arrays ``(r, s')`` for pair ``(s, a)``, with the fallback if unobserved."""
        p = pair_index(s, a)
        if self.counts[p] == 0:
            return np.zeros((1, self.reward_dim)), np.array([s])
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return self.rewards[lo:hi], self.next_states[lo:hi]

    @cached_property
    def sampling_table(self):
        """Outcome arrays with the fallback row inserted for unobserved pairs."""
        counts = np.maximum(self.counts, 1)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        rewards = np.zeros((offsets[-1], self.reward_dim))
        nxt = np.empty(offsets[-1], dtype=np.int64)
        for p in range(self.n_pairs):
            lo = offsets[p]
            if self.counts[p]:
                src = slice(self.offsets[p], self.offsets[p + 1])
                rewards[lo : lo + counts[p]] = self.rewards[src]
                nxt[lo : lo + counts[p]] = self.next_states[src]
            else:
                nxt[lo] = p // 2 + 1
        return counts, offsets, rewards, nxt


def fit(dataset: OfflineDataset, n_states: int | None = None, actions=ACTIONS) -> EmpiricalMDP:
    """Group the dataset by state-action pair, keeping record order within each pair."""
    if tuple(actions) != ACTIONS:
        raise ValueError("only the actions (-1, +1) are supported")
    n = dataset.n_states if n_states is None else int(n_states)
    if len(dataset) and max(dataset.s.max(), dataset.s_next.max()) > n:
        raise ValueError("dataset visits states beyond n_states")
    pair = dataset.pair
    order = np.argsort(pair, kind="stable")
    counts = np.bincount(pair, minlength=2 * n).astype(np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return EmpiricalMDP(n, counts, offsets, dataset.r[order], dataset.s_next[order])


def split_fit(dataset: OfflineDataset, m: int, n_states: int | None = None) -> list:
    """Fit ``m`` empirical MDPs on contiguous slices; the remainder joins the last slice."""
    N = len(dataset)
    if m < 1 or m > N:
        raise ValueError("need 1 <= m <= N")
    size = N // m
    bounds = [j * size for j in range(m)] + [N]
    return [fit(dataset.subset(slice(bounds[j], bounds[j + 1])), n_states) for j in range(m)]


def estimated_bellman_mixture(
    model_table: ReturnTable, emp: EmpiricalMDP, target: TabularPolicy, gamma: float, sa
) -> GaussianMixture:
    """One-step empirical Bellman target at ``sa`` as a Gaussian mixture."""
    if model_table.kind != "gaussian":
        raise TypeError("closed-form mixture needs a Gaussian return table")
    s, a = sa
    rewards, nxt = emp.outcomes(s, a)
    k = rewards.shape[0]
    weights, comps = [], []
    for r, s2 in zip(rewards[:, 0], nxt):
        for a2, prob in target.action_probs(int(s2)):
            z = model_table[int(s2), a2]
            weights.append(prob / k)
            comps.append(ScalarGaussian(float(r + gamma * z.mean), gamma * gamma * z.var))
    return GaussianMixture(tuple(weights), tuple(comps))


# ---------------------------------------------------------------------------
# trajectory batches


@dataclass(frozen=True, eq=False)
class BootstrapBatch:
    """Frozen trajectory groups used by multi-step objectives.

    Group ``g`` starts at pair ``group_pairs[g]`` and owns rows
    ``offsets[g]:offsets[g+1]``. Each row holds the discounted reward sum
    ``returns`` over ``m`` steps, the pair reached after ``m`` steps and a
    component weight; weights sum to one within a group.
    """

    m: int
    gamma: float
    group_pairs: np.ndarray
    offsets: np.ndarray
    returns: np.ndarray
    terminals: np.ndarray
    weights: np.ndarray
    fallback_count: int = 0

    @property
    def discount(self) -> float:
        return self.gamma ** self.m

    @property
    def n_groups(self) -> int:
        return self.group_pairs.shape[0]

    def group(self, g: int):
        sl = slice(self.offsets[g], self.offsets[g + 1])
        return self.returns[sl], self.terminals[sl], self.weights[sl]


def stratified_quota(b_hat: np.ndarray, M: int) -> np.ndarray:
    """Trajectories per observed pair: ``max(1, round(M * b_hat))`` (half rounds up)."""
    quota = np.floor(M * b_hat + 0.5).astype(np.int64)
    return np.where(b_hat > 0, np.maximum(quota, 1), 0)


def _simulate(step_mdps, target: TabularPolicy, gamma: float, M: int, seed: int) -> BootstrapBatch:
    first = step_mdps[0]
    if first.total == 0:
        raise ValueError("cannot sample trajectories from an empty dataset")
    if M < int(np.count_nonzero(first.counts)):
        raise ValueError("M must be at least the number of observed pairs")
    m = len(step_mdps)
    quota = stratified_quota(first.b_hat, M)
    groups = np.flatnonzero(quota)
    u_out, u_act = [], []
    for p in groups:
        rng = make_rng(seed, p)
        u_out.append(rng.random((m, quota[p])))
        u_act.append(rng.random((m, quota[p])))
    u_out = np.concatenate(u_out, axis=1)
    u_act = np.concatenate(u_act, axis=1)
    cur = np.repeat(groups, quota[groups])
    ret = np.zeros((cur.shape[0], first.reward_dim))
    fallback = 0
    for t, emp in enumerate(step_mdps):
        counts, offsets, rewards, nxt = emp.sampling_table
        fallback += int(np.count_nonzero(emp.counts[cur] == 0))
        pick = np.minimum((u_out[t] * counts[cur]).astype(np.int64), counts[cur] - 1)
        row = offsets[cur] + pick
        ret += gamma**t * rewards[row]
        s2 = nxt[row]
        a2 = target.sample_actions(s2, u_act[t])
        cur = 2 * (s2 - 1) + (a2 == 1)
    sizes = quota[groups]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    weights = np.repeat(1.0 / sizes, sizes)
    return BootstrapBatch(m, gamma, groups, offsets, ret, cur, weights, fallback)


def sample_trajectories(
    emp: EmpiricalMDP, target: TabularPolicy, gamma: float, m: int, M: int, seed: int
) -> BootstrapBatch:
    """Draw ``M`` (stratified) bootstrap trajectories of length ``m`` from ``emp``."""
    if m < 1 or M < 1:
        raise ValueError("m and M must be positive")
    return _simulate([emp] * m, target, gamma, M, seed)


def sample_trajectories_split(
    emps, target: TabularPolicy, gamma: float, M: int, seed: int
) -> BootstrapBatch:
    """Trajectories whose ``j``-th transition is drawn from ``emps[j]``."""
    if M < 1 or len(emps) < 1:
        raise ValueError("need M >= 1 and at least one empirical MDP")
    return _simulate(list(emps), target, gamma, M, seed)


def enumerate_one_step(emp: EmpiricalMDP, target: TabularPolicy, gamma: float) -> BootstrapBatch:
    """Exact one-step batch: every outcome and next action with its probability."""
    groups = np.flatnonzero(emp.counts)
    rets, terms, weights, sizes = [], [], [], []
    for p in groups:
        s, a = p // 2 + 1, ACTIONS[p % 2]
        rewards, nxt = emp.outcomes(s, a)
        n_rows = 0
        for r, s2 in zip(rewards, nxt):
            for a2, prob in target.action_probs(int(s2)):
                rets.append(r)
                terms.append(pair_index(int(s2), a2))
                weights.append(prob / rewards.shape[0])
                n_rows += 1
        sizes.append(n_rows)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return BootstrapBatch(
        1, gamma, groups, offsets, np.array(rets).reshape(len(rets), -1),
        np.array(terms, dtype=np.int64), np.array(weights), 0,
    )
