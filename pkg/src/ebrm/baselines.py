"""Comparison estimators: quantile-regression TD and fitted likelihood evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .chain import OfflineDataset, ReturnTable, TabularPolicy
from .distances import ParticleSet
from .empirical import fit
from .estimators import EstimationResult
from .models import default_inits
from .optimize import OptimizerConfig, nelder_mead
from .rng import make_rng


# ---------------------------------------------------------------------------
# QRTD


@dataclass(frozen=True, eq=False)
class QuantileTable:
    """``values[p]`` holds the ``n_tau`` quantile estimates of pair ``p``."""

    n_states: int
    taus: np.ndarray
    values: np.ndarray

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.values, axis=1) >= 0))

    def to_return_table(self) -> ReturnTable:
        return ReturnTable(self.n_states, tuple(ParticleSet(v) for v in self.values))


@njit(cache=True)
def _qrtd_sweep(values, taus, order, pair, reward, next_state, prob_right, idx_i, idx_j, u_act, alpha, gamma):
    n_tau = taus.shape[0]
    for n in range(order.shape[0]):
        rec = order[n]
        p = pair[rec]
        s2 = next_state[rec]
        for rep in range(n_tau):
            i = idx_i[n, rep]
            q = 2 * (s2 - 1) + (1 if u_act[n, rep] < prob_right[s2 - 1] else 0)
            y = reward[rec] + gamma * values[q, idx_j[n, rep]]
            below = 1.0 if y < values[p, i] else 0.0
            values[p, i] += alpha * (taus[i] - below)


def qrtd_fit(
    dataset: OfflineDataset, target: TabularPolicy, gamma: float, n_tau: int = 99, alpha0: float = 5.0,
    epochs: int = 100, seed: int = 0, init: float = 0.0,
) -> QuantileTable:
    """Tabular quantile TD over the offline records.

    Each epoch visits the records in a seeded random order. Per record it
    performs ``n_tau`` updates, each at a uniformly drawn quantile index, with
    the bootstrap target ``r + gamma z'`` where ``z'`` is a uniformly drawn
    entry of the current quantile list at ``(s', a')`` and ``a' ~ pi(s')``.
    Each quantile list is sorted at the end.
    """
    if alpha0 <= 0:
        raise ValueError("alpha0 must be positive")
    if epochs < 0 or n_tau < 1:
        raise ValueError("need epochs >= 0 and n_tau >= 1")
    taus = np.arange(1, n_tau + 1) / (n_tau + 1.0)
    values = np.full((2 * dataset.n_states, n_tau), float(init))
    N = len(dataset)
    pair = dataset.pair.astype(np.int64)
    reward = np.ascontiguousarray(dataset.r[:, 0])
    nxt = dataset.s_next.astype(np.int64)
    for e in range(epochs):
        rng = make_rng(seed, e)
        order = rng.permutation(N)
        idx_i = rng.integers(0, n_tau, size=(N, n_tau))
        idx_j = rng.integers(0, n_tau, size=(N, n_tau))
        u_act = rng.random((N, n_tau))
        _qrtd_sweep(values, taus, order, pair, reward, nxt, target.prob_right, idx_i, idx_j, u_act, float(alpha0), float(gamma))
    values.sort(axis=1)
    return QuantileTable(dataset.n_states, taus, values)


# ---------------------------------------------------------------------------
# FLE


@dataclass(frozen=True)
class PartitionRule:
    """Number-of-iterations heuristic ``T* = max(T_tilde, floor(T(N)))``.

    ``T(N)`` is the base-``(1/gamma)^(1 - 1/(2l))`` logarithm of
    ``(N / log N)^(1/(2l)) / C0``, with ``C0`` chosen so that ``T(N0) = T0``.
    """

    l: float = 10.0
    N0: int = 2000
    T0: float = 25.0
    T_tilde: int = 15

    def T(self, N: int, gamma: float) -> float:
        log_base = (1.0 - 1.0 / (2.0 * self.l)) * math.log(1.0 / gamma)
        g = lambda n: math.log(n / math.log(n)) / (2.0 * self.l)
        log_c0 = g(self.N0) - self.T0 * log_base
        return (g(N) - log_c0) / log_base

    def iterations(self, N: int, gamma: float) -> int:
        return max(int(self.T_tilde), int(math.floor(self.T(N, gamma))))


def fle_slices(N: int, T: int):
    """Contiguous index bounds of ``T`` slices of size ``N // T``; the remainder joins the last."""
    if N < T:
        raise ValueError("need at least one record per iteration")
    size = N // T
    return [(t * size, (t + 1) * size if t < T - 1 else N) for t in range(T)]


def _pair_stats(pair, y, n_pairs):
    cnt = np.bincount(pair, minlength=n_pairs).astype(float)
    s1 = np.bincount(pair, weights=y, minlength=n_pairs)
    s2 = np.bincount(pair, weights=y * y, minlength=n_pairs)
    return cnt, s1, s2


def gaussian_nll(mean, var, cnt, s1, s2) -> float:
    """Negative Gaussian log-likelihood from per-pair sufficient statistics."""
    used = cnt > 0
    m, v = mean[used], var[used]
    sq = s2[used] - 2.0 * m * s1[used] + cnt[used] * m * m
    return float(0.5 * np.sum(cnt[used] * np.log(2.0 * math.pi * v) + sq / v))


def fle_fit(
    dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float, partition: PartitionRule = PartitionRule(),
    seed: int = 0, opt: OptimizerConfig = OptimizerConfig(),
) -> EstimationResult:
    """Iterated Gaussian maximum likelihood on pseudo-targets ``r + gamma z'``.

    Iteration ``t`` uses only the ``t``-th data slice and draws one
    ``z' ~ Upsilon_{t-1}(s', a')`` per record with ``a' ~ pi(s')``.
    """
    if not spec.gaussian:
        raise TypeError("likelihood fitting needs a Gaussian model")
    N = len(dataset)
    T = partition.iterations(N, gamma)
    slices = fle_slices(N, T)
    emp = fit(dataset, spec.n_states)
    theta = default_inits(spec, emp, gamma)[0]
    n_pairs = 2 * spec.n_states
    pair_all = dataset.pair
    converged = True
    nfev = 0
    for t, (lo, hi) in enumerate(slices, start=1):
        rng = make_rng(seed, t)
        mean, var = spec.moments(theta)
        s2 = dataset.s_next[lo:hi]
        a2 = target.sample_actions(s2, rng.random(hi - lo))
        q = 2 * (s2 - 1) + (a2 == 1)
        z = mean[q] + np.sqrt(var[q]) * rng.standard_normal(hi - lo)
        y = dataset.r[lo:hi, 0] + gamma * z
        cnt, s1, sq = _pair_stats(pair_all[lo:hi], y, n_pairs)
        scale = max(cnt.sum(), 1.0)

        def f(x):
            m, v = spec.moments(spec.from_unconstrained(x))
            return gaussian_nll(m, v, cnt, s1, sq) / scale

        res = nelder_mead(f, [spec.to_unconstrained(theta)], opt)
        theta = spec.from_unconstrained(res.x)
        converged = converged and res.converged
        nfev += res.nfev
    m, v = spec.moments(theta)
    return EstimationResult(theta, f(spec.to_unconstrained(theta)), converged, {"iterations": T, "nfev": nfev})
