"""Built-in invariant checks with a tabulated report."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .chain import (
    ChainConfig,
    OfflineDataset,
    TabularPolicy,
    bellman_gaussian_arrays,
    true_return_table,
)
from .distances import ScalarGaussian, energy_gg, energy_gm, energy_mc, w1_gaussian
from .empirical import enumerate_one_step, estimated_bellman_mixture, fit
from .estimators import objective_bootstrap, objective_single_step
from .metrics import bound_B1
from .models import LinearMisspec
from .rng import make_rng


@dataclass
class CheckResult:
    name: str
    tolerance: float
    observed: float
    passed: bool


def _tables(rng, n_states=30, count=2):
    out = []
    for _ in range(count):
        mean = rng.normal(0, 50, 2 * n_states)
        var = rng.uniform(1, 400, 2 * n_states)
        out.append((mean, var))
    return out


def _per_pair(fn, ma, va, mb, vb):
    return np.array([fn(ScalarGaussian(ma[p], va[p]), ScalarGaussian(mb[p], vb[p])) for p in range(len(ma))])


def check_fixed_point(energy=energy_gg) -> CheckResult:
    worst = 0.0
    for A0, p0, s2 in ((100.0, 0.9, 20.0), (50.0, 0.7, 5.0), (-30.0, 0.95, 100.0)):
        cfg = ChainConfig(A0=A0, p0=p0, sigma0_sq=s2, gamma=0.99)
        pi = TabularPolicy.always_right(cfg.n_states)
        m, v = true_return_table(cfg, pi).gaussian_arrays()
        m2, v2 = bellman_gaussian_arrays(m, v, cfg, pi)
        worst = max(worst, float(np.max(np.abs(_per_pair(energy, m, v, m2, v2)))))
    return CheckResult("fixed_point", 1e-10, worst, worst <= 1e-10)


def check_identity(energy=energy_gg, seed=0) -> CheckResult:
    rng = make_rng(seed)
    (ma, va), (mb, vb) = _tables(rng)
    same = float(np.max(np.abs(_per_pair(energy, ma, va, ma, va))))
    apart = float(np.min(_per_pair(energy, ma, va, mb, vb)))
    # zero on identical laws, strictly positive on distinct ones
    observed = same if apart > 0 else -apart
    return CheckResult("identity", 1e-12, observed, same <= 1e-12 and apart > 0)


def _contraction(dist, seed):
    rng = make_rng(seed)
    cfg = ChainConfig(gamma=0.9)
    pi = TabularPolicy.always_right(cfg.n_states)
    (ma, va), (mb, vb) = _tables(rng)
    before = float(np.max(_per_pair(dist, ma, va, mb, vb)))
    ta = bellman_gaussian_arrays(ma, va, cfg, pi)
    tb = bellman_gaussian_arrays(mb, vb, cfg, pi)
    after = float(np.max(_per_pair(dist, *ta, *tb)))
    return after - cfg.gamma * before


def check_contraction_w1(seed=0) -> CheckResult:
    slack = _contraction(w1_gaussian, seed)
    return CheckResult("contraction_w1", 1e-9, slack, slack <= 1e-9)


def check_contraction_energy(energy=energy_gg, seed=0) -> CheckResult:
    slack = _contraction(energy, seed)
    return CheckResult("contraction_energy", 1e-9, slack, slack <= 1e-9)


def check_relaxed_triangle(energy=energy_gg, seed=0, trials=200) -> CheckResult:
    rng = make_rng(seed)
    worst = -math.inf
    for _ in range(trials):
        a, b, c = (ScalarGaussian(rng.normal(0, 10), rng.uniform(0.01, 50)) for _ in range(3))
        worst = max(worst, energy(a, c) - 2.0 * (energy(a, b) + energy(b, c)))
    return CheckResult("relaxed_triangle", 1e-12, worst, worst <= 1e-12)


def check_mc_vs_closed_form(energy=energy_gg, seed=0, cases=10, n=100_000) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for k in range(cases):
        a = ScalarGaussian(rng.normal(0, 3), rng.uniform(0.1, 9))
        b = ScalarGaussian(rng.normal(0, 3), rng.uniform(0.1, 9))
        est, se = energy_mc(a.sample, b.sample, n, seed * 1000 + k)
        worst = max(worst, abs(est - energy(a, b)) / se)
    return CheckResult("mc_vs_closed_form_z", 3.0, worst, worst <= 3.0)


def _toy():
    ds = OfflineDataset(
        3,
        np.array([1, 1, 2, 3, 2]),
        np.array([1, 1, -1, 1, 1]),
        np.array([0.5, -1.0, 2.0, 0.0, 3.5]),
        np.array([2, 2, 1, 3, 3]),
    )
    return ds, LinearMisspec(0.8, 3), np.array([4.0, 6.0, -1.5, 2.0])


def check_single_step_oracle() -> CheckResult:
    ds, spec, theta = _toy()
    emp = fit(ds)
    pi = TabularPolicy(np.array([1.0, 0.3, 1.0]))
    table = spec.instantiate(theta)
    brute = 0.0
    for p in np.flatnonzero(emp.counts):
        sa = (p // 2 + 1, (-1, 1)[p % 2])
        brute += emp.b_hat[p] * energy_gm(table[sa], estimated_bellman_mixture(table, emp, pi, 0.8, sa))
    gap = abs(objective_single_step(theta, emp, spec, pi, 0.8) - brute)
    return CheckResult("single_step_oracle", 1e-12, gap, gap <= 1e-12)


def check_bootstrap_m1() -> CheckResult:
    ds, spec, theta = _toy()
    emp = fit(ds)
    pi = TabularPolicy(np.array([1.0, 0.3, 1.0]))
    batch = enumerate_one_step(emp, pi, 0.8)
    gap = abs(objective_bootstrap(theta, batch, emp, spec) - objective_single_step(theta, emp, spec, pi, 0.8))
    return CheckResult("bootstrap_m1_equivalence", 1e-12, gap, gap <= 1e-12)


def check_series_constant() -> CheckResult:
    gap = abs(bound_B1(0.0, 1.0, 1.0) - 4.0)
    return CheckResult("series_constant", 0.0, gap, gap == 0.0)


def run_selfcheck(energy=energy_gg) -> list:
    """Run every check. ``energy`` replaces the Gaussian energy in the distance checks."""
    return [
        check_fixed_point(energy),
        check_identity(energy),
        check_contraction_w1(),
        check_contraction_energy(energy),
        check_relaxed_triangle(energy),
        check_mc_vs_closed_form(energy),
        check_single_step_oracle(),
        check_bootstrap_m1(),
        check_series_constant(),
    ]


def format_report(results) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check':<{width}}  {'tolerance':>10}  {'observed':>12}  result"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.tolerance:>10.3g}  {r.observed:>12.4g}  {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
