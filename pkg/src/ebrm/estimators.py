"""Energy-based estimators of return-distribution models.

Every objective is a ``b_hat``-weighted sum over observed state-action pairs
of the energy distance between the model law at the pair and a Bellman-style
target mixture built from data. Trajectory batches are sampled once per
estimation call and held fixed while the optimiser runs, so each objective is
a deterministic function of the parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from .chain import OfflineDataset, TabularPolicy
from .distances import SQRT_2_OVER_PI, ScalarGaussian, energy_gg, energy_mc, mean_abs_normal
from .empirical import (
    BootstrapBatch,
    EmpiricalMDP,
    enumerate_one_step,
    fit,
    sample_trajectories,
    sample_trajectories_split,
    split_fit,
)
from .models import default_inits
from .optimize import OptimizerConfig, nelder_mead
from .rng import derive_seed

MC_SAMPLES = 20_000


@dataclass
class EstimationResult:
    theta_hat: np.ndarray
    objective_value: float
    converged: bool
    diagnostics: dict = field(default_factory=dict)


class MixtureResidual:
    """Weighted energy between Gaussian model laws and frozen target mixtures.

    Group ``g`` compares ``N(mean[p_g], var[p_g])`` with the mixture of
    ``N(G_j + c mean[t_j], c^2 var[t_j])`` over its rows ``j``, where ``c`` is
    the batch discount ``gamma^m``. Everything that does not depend on the
    model parameters is precomputed, including all within-group row pairs.
    """

    def __init__(self, batch: BootstrapBatch, group_weight):
        if batch.returns.shape[1] != 1:
            raise ValueError("closed-form residual needs scalar rewards")
        self.discount = batch.discount
        self.group_pairs = batch.group_pairs
        self.group_weight = np.asarray(group_weight, dtype=float)
        sizes = np.diff(batch.offsets)
        row_group = np.repeat(np.arange(batch.n_groups), sizes)
        self.row_pair = batch.group_pairs[row_group]
        self.returns = batch.returns[:, 0].copy()
        self.terminals = batch.terminals.astype(np.int64)
        gw = self.group_weight[row_group]
        self.cross_weight = gw * batch.weights
        self.diag_weight = gw * batch.weights**2
        diff, left, right, weight = [], [], [], []
        for g in range(batch.n_groups):
            lo, hi = batch.offsets[g], batch.offsets[g + 1]
            if hi - lo < 2:
                continue
            j, k = np.triu_indices(hi - lo, 1)
            j += lo
            k += lo
            diff.append(self.returns[j] - self.returns[k])
            left.append(self.terminals[j])
            right.append(self.terminals[k])
            weight.append(2.0 * self.group_weight[g] * batch.weights[j] * batch.weights[k])
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt)
        self.pair_diff = cat(diff, float)
        self.pair_left = cat(left, np.int64)
        self.pair_right = cat(right, np.int64)
        self.pair_weight = cat(weight, float)

    def __call__(self, mean, var) -> float:
        c = self.discount
        mean = np.asarray(mean, dtype=float)
        var = np.asarray(var, dtype=float)
        t = self.terminals
        d = mean[self.row_pair] - self.returns - c * mean[t]
        s = np.sqrt(var[self.row_pair] + c * c * var[t])
        cross = float(self.cross_weight @ mean_abs_normal(d, s))
        self_model = float(self.group_weight @ (np.sqrt(2.0 * var[self.group_pairs]) * SQRT_2_OVER_PI))
        diag = float(self.diag_weight @ (c * np.sqrt(2.0 * var[t]) * SQRT_2_OVER_PI))
        shift = c * (mean[:, None] - mean[None, :])
        scale = c * np.sqrt(var[:, None] + var[None, :])
        off = _kernel.pair_sum(
            self.pair_diff, self.pair_left, self.pair_right, self.pair_weight, shift, scale, _kernel.H_TABLE
        )
        return 2.0 * cross - (self_model + diag + off)


def _group_weights(batch: BootstrapBatch, emp: EmpiricalMDP):
    return emp.b_hat[batch.group_pairs]


def _mc_residual(theta, batch, emp, spec, seed, n=MC_SAMPLES) -> float:
    law = spec.law(theta)
    c = batch.discount
    total = 0.0
    weights = _group_weights(batch, emp)
    for g in range(batch.n_groups):
        rets, terms, w = batch.group(g)

        def target_sampler(rng, size, rets=rets, w=w):
            idx = rng.choice(rets.shape[0], size=size, p=w)
            return rets[idx] + c * law.sample(rng, size)

        est, _ = energy_mc(law.sample, target_sampler, n, derive_seed(seed, int(batch.group_pairs[g])))
        total += weights[g] * est
    return total


def _objective(theta, batch, emp, spec, mc_seed=0) -> float:
    theta = spec.validate(theta)
    if spec.gaussian:
        return MixtureResidual(batch, _group_weights(batch, emp))(*spec.moments(theta))
    return _mc_residual(theta, batch, emp, spec, mc_seed)


def objective_single_step(theta, emp: EmpiricalMDP, spec, target: TabularPolicy, gamma: float) -> float:
    """Weighted energy between the model and its one-step empirical Bellman target."""
    return _objective(theta, enumerate_one_step(emp, target, gamma), emp, spec)


def objective_bootstrap(theta, batch: BootstrapBatch, emp: EmpiricalMDP, spec, target=None, gamma=None) -> float:
    """Multi-step objective on a frozen trajectory batch, weighted by ``emp.b_hat``."""
    return _objective(theta, batch, emp, spec)


def _fit(spec, batch, emp, gamma, opt: OptimizerConfig, starts=None, mc_seed=0) -> EstimationResult:
    if spec.gaussian:
        residual = MixtureResidual(batch, _group_weights(batch, emp))

        def value(theta):
            return residual(*spec.moments(theta))

    else:

        def value(theta):
            return _mc_residual(theta, batch, emp, spec, mc_seed)

    def f(x):
        return value(spec.from_unconstrained(x))

    if starts is None:
        starts = default_inits(spec, emp, gamma)
    xs = []
    for theta in starts:
        try:
            xs.append(spec.to_unconstrained(theta))
        except ValueError:
            continue
    res = nelder_mead(f, xs, opt)
    theta_hat = spec.from_unconstrained(res.x)
    return EstimationResult(
        theta_hat,
        value(theta_hat),
        res.converged,
        {"nfev": res.nfev, "restart": res.restart, "optimizer_min": res.fun, "fallback_count": batch.fallback_count},
    )


def ebrm_single(
    dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float, opt: OptimizerConfig = OptimizerConfig(), starts=None
) -> EstimationResult:
    """Single-step estimator."""
    emp = fit(dataset, spec.n_states)
    return _fit(spec, enumerate_one_step(emp, target, gamma), emp, gamma, opt, starts)


def ebrm_multi_bootstrap(
    dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float, m: int, M: int, seed: int,
    opt: OptimizerConfig = OptimizerConfig(), starts=None,
) -> EstimationResult:
    """Multi-step estimator with ``M`` bootstrap trajectories of length ``m``."""
    emp = fit(dataset, spec.n_states)
    batch = sample_trajectories(emp, target, gamma, m, M, seed)
    return _fit(spec, batch, emp, gamma, opt, starts, mc_seed=seed)


def ebrm_multi_split(
    dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float, m: int, M: int, seed: int,
    opt: OptimizerConfig = OptimizerConfig(), starts=None,
) -> EstimationResult:
    """Multi-step estimator whose ``j``-th step is drawn from the ``j``-th data slice."""
    emps = split_fit(dataset, m, spec.n_states)
    batch = sample_trajectories_split(emps, target, gamma, M, seed)
    return _fit(spec, batch, emps[0], gamma, opt, starts, mc_seed=seed)


def objective_deterministic(theta, dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float) -> float:
    """Record-averaged energy objective for data with deterministic transitions.

    Averages, over records, ``2 x1 - x2 - x3`` where ``x1`` compares the model
    at ``(s, a)`` with ``r + gamma Z(s', A')``, ``x2`` is the model's own
    spread at ``(s, a)`` and ``x3`` is the spread of ``gamma Z(s', A')`` with
    ``A' ~ pi`` drawn independently on each side.
    """
    mean, var = spec.moments(spec.validate(theta))
    p = dataset.pair
    r = dataset.r[:, 0]
    s2 = dataset.s_next
    probs = target.pair_probs()
    nxt = [2 * (s2 - 1), 2 * (s2 - 1) + 1]
    x1 = np.zeros(len(dataset))
    x3 = np.zeros(len(dataset))
    for q1 in nxt:
        w1 = probs[q1]
        x1 += w1 * mean_abs_normal(mean[p] - r - gamma * mean[q1], np.sqrt(var[p] + gamma**2 * var[q1]))
        for q2 in nxt:
            x3 += w1 * probs[q2] * mean_abs_normal(gamma * (mean[q1] - mean[q2]), gamma * np.sqrt(var[q1] + var[q2]))
    x2 = mean_abs_normal(0.0, np.sqrt(2.0 * var[p]))
    return float(np.mean(2.0 * x1 - x2 - x3))


# ---------------------------------------------------------------------------
# step-level selection


@dataclass
class LepskiResult:
    selected_m: int
    exit_level: int
    levels: tuple
    intervals: dict
    estimates: dict
    theta_single: np.ndarray | None = None


def lepski_rule(levels, estimates_at, z: float = 1.96) -> LepskiResult:
    """Run the interval-intersection loop over ``levels = (m_0, m_1, ..., m_K)``.

    ``estimates_at(k)`` returns the replicate discrepancies for level ``k``.
    Walking down from ``K``, each level adds ``[mean +- z sd]`` to a running
    intersection; the first empty intersection stops the loop and its level is
    returned. Reaching level 0 always stops and returns ``m_0``.
    """
    levels = tuple(int(m) for m in levels)
    K = len(levels) - 1
    lo, hi = -math.inf, math.inf
    intervals, estimates = {}, {}
    k = K + 1
    while True:
        k -= 1
        if k == 0:
            break
        e = np.asarray(estimates_at(k), dtype=float)
        mu = float(e.mean())
        sd = float(e.std(ddof=1)) if e.size > 1 else 0.0
        estimates[k] = e
        intervals[k] = (mu - z * sd, mu + z * sd)
        lo, hi = max(lo, intervals[k][0]), min(hi, intervals[k][1])
        if lo > hi:
            break
    return LepskiResult(levels[k], k, levels, intervals, estimates)


def _weighted_energy(mean_a, var_a, mean_b, var_b, weights) -> float:
    total = 0.0
    for p in np.flatnonzero(weights):
        total += weights[p] * energy_gg(ScalarGaussian(mean_a[p], var_a[p]), ScalarGaussian(mean_b[p], var_b[p]))
    return total


def lepski_select(
    dataset: OfflineDataset, spec, target: TabularPolicy, gamma: float, grid, J: int, M: int, seed: int,
    opt: OptimizerConfig = OptimizerConfig(), boot_opt: OptimizerConfig | None = None,
) -> LepskiResult:
    """Choose the step level from data by bootstrap interval intersection.

    ``grid`` lists ``m_1 < ... < m_K``; a leading 1 is read as ``m_0``.
    Replicate ``j`` at level ``k`` refits the multi-step estimator on a fresh
    trajectory batch and records the ``b_hat``-weighted energy between its
    table and the single-step fit. The first replicate of each level is fitted
    with ``opt`` from the single-step estimate and the default starts; the
    rest start from that first fit using ``boot_opt`` (default: ``opt`` with a
    single restart).
    """
    if not spec.gaussian:
        raise TypeError("step-level selection needs a Gaussian model")
    grid = [int(m) for m in grid]
    if grid != sorted(set(grid)) or grid[0] < 1:
        raise ValueError("grid must be strictly increasing positive integers")
    levels = grid if grid[0] == 1 else [1] + grid
    if len(levels) < 2:
        raise ValueError("grid needs at least one level above 1")
    if J < 2:
        raise ValueError("J must be at least 2")
    boot_opt = replace(opt, restarts=1) if boot_opt is None else boot_opt
    emp = fit(dataset, spec.n_states)
    base = _fit(spec, enumerate_one_step(emp, target, gamma), emp, gamma, opt)
    mean0, var0 = spec.moments(base.theta_hat)
    starts = [base.theta_hat] + default_inits(spec, emp, gamma)

    def estimates_at(k):
        out = []
        first = None
        for j in range(J):
            batch = sample_trajectories(emp, target, gamma, levels[k], M, derive_seed(seed, k, j))
            if first is None:
                res = _fit(spec, batch, emp, gamma, opt, starts)
                first = res.theta_hat
            else:
                res = _fit(spec, batch, emp, gamma, boot_opt, [first])
            out.append(_weighted_energy(mean0, var0, *spec.moments(res.theta_hat), emp.b_hat))
        return out

    result = lepski_rule(levels, estimates_at)
    result.theta_single = base.theta_hat
    return result
