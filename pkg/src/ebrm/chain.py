"""Chain MDP: environment, policies, offline datasets and exact return laws.

States are ``1..n``; actions are -1 (left) and +1 (right). Taking ``a`` in
``s`` lands on ``k = s + a``, pays ``r ~ N(mu_k, sigma0^2)`` with
``mu_k = A0 * p0**k`` for ``k <= n`` and ``mu_{n+1} = 0``, and moves to ``k``
clipped into ``[1, n]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .distances import BivariateGaussian, GaussianMixture, ParticleSet, ScalarGaussian
from .rng import make_rng

ACTIONS = (-1, 1)


def pair_index(s: int, a: int) -> int:
    """Flat index of the state-action pair ``(s, a)``."""
    if a not in ACTIONS:
        raise ValueError(f"action must be -1 or +1, got {a}")
    return 2 * (int(s) - 1) + (1 if a == 1 else 0)


def pair_of(index: int) -> tuple:
    return index // 2 + 1, ACTIONS[index % 2]


@dataclass(frozen=True)
class ChainConfig:
    n_states: int = 30
    A0: float = 100.0
    p0: float = 0.9
    sigma0_sq: float = 20.0
    gamma: float = 0.99

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("need at least two states")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.sigma0_sq < 0:
            raise ValueError("sigma0_sq must be non-negative")
        if not 0.0 < self.p0 < 1.0:
            raise ValueError("p0 must lie in (0, 1)")

    @property
    def n_pairs(self) -> int:
        return 2 * self.n_states

    def reward_mean(self, k):
        """Mean reward on landing at raw position ``k`` (0..n+1)."""
        k = np.asarray(k)
        val = np.where(k <= self.n_states, self.A0 * self.p0 ** k.astype(float), 0.0)
        return float(val) if val.ndim == 0 else val

    def next_state(self, k):
        return np.clip(k, 1, self.n_states)

    def step(self, s: int, a: int, rng) -> tuple:
        k = s + a
        r = self.reward_mean(k) + math.sqrt(self.sigma0_sq) * rng.standard_normal()
        return float(r), int(self.next_state(k))


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Stochastic policy stored as the probability of moving right in each state."""

    prob_right: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prob_right, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or np.any(p > 1):
            raise ValueError("prob_right must be a vector of probabilities")
        object.__setattr__(self, "prob_right", p)

    @classmethod
    def uniform(cls, n_states: int) -> "TabularPolicy":
        return cls(np.full(n_states, 0.5))

    @classmethod
    def always_right(cls, n_states: int) -> "TabularPolicy":
        return cls(np.ones(n_states))

    @property
    def n_states(self) -> int:
        return self.prob_right.shape[0]

    def prob(self, s: int, a: int) -> float:
        p = self.prob_right[s - 1]
        return float(p if a == 1 else 1.0 - p)

    def action_probs(self, s: int):
        """Pairs ``(a, pi(a|s))`` with positive probability."""
        return [(a, self.prob(s, a)) for a in ACTIONS if self.prob(s, a) > 0]

    def pair_probs(self) -> np.ndarray:
        """Array of shape (n_pairs,) with ``pi(a|s)`` at each pair index."""
        out = np.empty(2 * self.n_states)
        out[0::2] = 1.0 - self.prob_right
        out[1::2] = self.prob_right
        return out

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.prob_right == 0) | (self.prob_right == 1)))

    @property
    def is_always_right(self) -> bool:
        return bool(np.all(self.prob_right == 1))

    def sample_actions(self, states, u):
        """Actions for ``states`` given uniform draws ``u``."""
        return np.where(u < self.prob_right[np.asarray(states) - 1], 1, -1)


# ---------------------------------------------------------------------------
# return tables

_KINDS = {
    ScalarGaussian: "gaussian",
    GaussianMixture: "mixture",
    ParticleSet: "particles",
    BivariateGaussian: "bivariate",
}


@dataclass(frozen=True)
class ReturnTable:
    """One return distribution per state-action pair, indexed by :func:`pair_index`."""

    n_states: int
    entries: tuple

    def __post_init__(self):
        if len(self.entries) != 2 * self.n_states:
            raise ValueError("need one entry per state-action pair")
        kinds = {_KINDS.get(type(e)) for e in self.entries}
        if None in kinds or len(kinds) != 1:
            raise ValueError("table entries must share one distribution kind")

    @property
    def kind(self) -> str:
        return _KINDS[type(self.entries[0])]

    def __getitem__(self, sa):
        s, a = sa
        return self.entries[pair_index(s, a)]

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_gaussian_arrays(cls, mean, var) -> "ReturnTable":
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        return cls(mean.shape[0] // 2, tuple(ScalarGaussian(float(m), float(v)) for m, v in zip(mean, var)))

    def gaussian_arrays(self):
        if self.kind != "gaussian":
            raise TypeError("table is not Gaussian")
        return (np.array([e.mean for e in self.entries]), np.array([e.var for e in self.entries]))


def true_return_table(cfg: ChainConfig, target: TabularPolicy) -> ReturnTable:
    """Closed-form return laws under the always-right policy.

    Every pair has variance ``sigma0^2 / (1 - gamma^2)``. Means are geometric
    sums of the rewards collected while walking right to the absorbing end.
    """
    if not target.is_always_right:
        raise NotImplementedError("closed form only for the always-right policy; use iterate_bellman")
    mean, var = _true_arrays(cfg)
    return ReturnTable.from_gaussian_arrays(mean, var)


def _true_arrays(cfg: ChainConfig):
    n, A0, p0, g = cfg.n_states, cfg.A0, cfg.p0, cfg.gamma
    i = np.arange(1, n + 1, dtype=float)
    q = g * p0
    right = A0 * p0 ** (i + 1) * _geom(q, n - i)
    left = A0 * p0 ** (i - 1) * _geom(q, n + 2 - i)
    left[0] = A0 + g * right[0]
    mean = np.empty(2 * n)
    mean[0::2] = left
    mean[1::2] = right
    var = np.full(2 * n, cfg.sigma0_sq / (1.0 - g * g))
    return mean, var


def _geom(q, terms):
    """sum_{j < terms} q^j."""
    terms = np.asarray(terms, dtype=float)
    if q == 1.0:
        return terms
    return (1.0 - q ** terms) / (1.0 - q)


def _transition_arrays(cfg: ChainConfig):
    s = np.repeat(np.arange(1, cfg.n_states + 1), 2)
    a = np.tile(np.array(ACTIONS), cfg.n_states)
    k = s + a
    return cfg.reward_mean(k), cfg.next_state(k)


def exact_bellman_apply(table: ReturnTable, cfg: ChainConfig, target: TabularPolicy) -> ReturnTable:
    """Apply the population distributional Bellman operator once.

    Gaussian tables stay Gaussian under a deterministic target; otherwise the
    result is a table of Gaussian mixtures.
    """
    if table.kind not in ("gaussian", "mixture"):
        raise TypeError("exact Bellman update needs Gaussian or mixture entries")
    rmean, snext = _transition_arrays(cfg)
    g = cfg.gamma
    out = []
    for p in range(cfg.n_pairs):
        s2 = int(snext[p])
        weights, comps = [], []
        for a2, prob in target.action_probs(s2):
            for w, c in _components(table[s2, a2]):
                weights.append(prob * w)
                comps.append(ScalarGaussian(rmean[p] + g * c.mean, cfg.sigma0_sq + g * g * c.var))
        out.append((weights, comps))
    if all(len(c) == 1 for _, c in out):
        return ReturnTable(cfg.n_states, tuple(c[0] for _, c in out))
    entries = []
    for weights, comps in out:
        total = math.fsum(weights)
        entries.append(GaussianMixture(tuple(w / total for w in weights), tuple(comps)))
    return ReturnTable(cfg.n_states, tuple(entries))


def _components(d):
    if isinstance(d, ScalarGaussian):
        return [(1.0, d)]
    return list(zip(d.weights, d.components))


def bellman_gaussian_arrays(mean, var, cfg: ChainConfig, target: TabularPolicy, times: int = 1):
    """Iterate the exact operator on Gaussian moment arrays (deterministic target)."""
    if not target.is_deterministic:
        raise ValueError("Gaussian closure needs a deterministic target policy")
    rmean, snext = _transition_arrays(cfg)
    nxt = np.array([pair_index(int(s2), 1 if target.prob_right[s2 - 1] == 1 else -1) for s2 in snext])
    mean = np.asarray(mean, dtype=float).copy()
    var = np.asarray(var, dtype=float).copy()
    g2 = cfg.gamma ** 2
    for _ in range(times):
        mean, var = rmean + cfg.gamma * mean[nxt], cfg.sigma0_sq + g2 * var[nxt]
    return mean, var


def iterate_bellman(cfg: ChainConfig, target: TabularPolicy, tol: float = 1e-12) -> ReturnTable:
    """Return laws of a deterministic target by iterating until ``gamma^T < tol``."""
    times = 1 if cfg.gamma == 0 else int(math.ceil(math.log(tol) / math.log(cfg.gamma)))
    zeros = np.zeros(cfg.n_pairs)
    mean, var = bellman_gaussian_arrays(zeros, zeros, cfg, target, times)
    return ReturnTable.from_gaussian_arrays(mean, var)


# ---------------------------------------------------------------------------
# offline data


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    """Transitions ``(s, a, r, s')``; ``r`` has shape (N, d) for d-dimensional rewards."""

    n_states: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int64)
        a = np.asarray(self.a, dtype=np.int64)
        r = np.asarray(self.r, dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        sn = np.asarray(self.s_next, dtype=np.int64)
        n = s.shape[0]
        if not (a.shape == (n,) and sn.shape == (n,) and r.shape[0] == n):
            raise ValueError("dataset columns differ in length")
        if n and (s.min() < 1 or s.max() > self.n_states or sn.min() < 1 or sn.max() > self.n_states):
            raise ValueError("state out of range")
        if n and not np.all(np.isin(a, ACTIONS)):
            raise ValueError("actions must be -1 or +1")
        for name, val in (("s", s), ("a", a), ("r", r), ("s_next", sn)):
            object.__setattr__(self, name, val)

    def __len__(self):
        return self.s.shape[0]

    @property
    def reward_dim(self) -> int:
        return self.r.shape[1]

    @property
    def pair(self) -> np.ndarray:
        return 2 * (self.s - 1) + (self.a == 1)

    def subset(self, idx) -> "OfflineDataset":
        return OfflineDataset(self.n_states, self.s[idx], self.a[idx], self.r[idx], self.s_next[idx])

    def to_csv(self, path) -> None:
        d = self.reward_dim
        header = ["s", "a"] + [f"r{j}" for j in range(d)] + ["s_next"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([int(self.s[i]), int(self.a[i])] + [repr(float(x)) for x in self.r[i]] + [int(self.s_next[i])])

    @classmethod
    def from_csv(cls, path, n_states: int) -> "OfflineDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        if header[:2] != ["s", "a"] or header[-1] != "s_next" or len(header) < 4:
            raise ValueError(f"unexpected dataset header {header}")
        body = rows[1:]
        s = [int(r[0]) for r in body]
        a = [int(r[1]) for r in body]
        rew = [[float(x) for x in r[2:-1]] for r in body]
        sn = [int(r[-1]) for r in body]
        rew = np.array(rew, dtype=float).reshape(len(body), len(header) - 3)
        return cls(n_states, np.array(s), np.array(a), rew, np.array(sn))


def generate_dataset(cfg: ChainConfig, behavior: TabularPolicy, N: int, seed: int) -> OfflineDataset:
    """Draw ``N`` transitions with uniform initial states and behaviour actions."""
    if N < 1:
        raise ValueError("N must be positive")
    if behavior.n_states != cfg.n_states:
        raise ValueError("behaviour policy size does not match the chain")
    rng = make_rng(seed)
    s = rng.integers(1, cfg.n_states + 1, size=N)
    a = behavior.sample_actions(s, rng.random(N))
    k = s + a
    r = cfg.reward_mean(k) + math.sqrt(cfg.sigma0_sq) * rng.standard_normal(N)
    return OfflineDataset(cfg.n_states, s, a, np.atleast_1d(r)[:, None], cfg.next_state(k))


def generate_bivariate_dataset(
    cfg: ChainConfig, behavior: TabularPolicy, N: int, seed: int, rho0: float, sigma0_sq: float | None = None
) -> OfflineDataset:
    """Chain transitions with centred bivariate normal rewards of correlation ``rho0``."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = make_rng(seed)
    s = rng.integers(1, cfg.n_states + 1, size=N)
    a = behavior.sample_actions(s, rng.random(N))
    k = s + a
    law = BivariateGaussian((0.0, 0.0), cfg.sigma0_sq if sigma0_sq is None else sigma0_sq, rho0)
    return OfflineDataset(cfg.n_states, s, a, law.sample(rng, N), cfg.next_state(k))
