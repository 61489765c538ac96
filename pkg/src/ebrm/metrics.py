"""Inaccuracy measures, best approximations, population objectives and the series constant."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import ndtr, ndtri

from .chain import ReturnTable, TabularPolicy, bellman_gaussian_arrays, exact_bellman_apply
from .distances import (
    BivariateGaussian,
    ParticleSet,
    ScalarGaussian,
    as_mixture,
    energy,
    energy_mc,
    energy_mc_gaussian,
    mean_abs_normal,
    w1_empirical,
    w1_gaussian,
)
from .optimize import OptimizerConfig, nelder_mead
from .rng import make_rng

B1_TERM_TOL = 1e-15
B1_MAX_TERMS = 10_000


def uniform_weights(n_states: int) -> np.ndarray:
    """Pair weights of a uniform initial state with a uniform behaviour policy."""
    return np.full(2 * n_states, 1.0 / (2 * n_states))


def _check_weights(w, n):
    w = np.asarray(w, dtype=float)
    if w.shape != (n,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be a probability vector over pairs")
    return w


def expected_energy(a: ReturnTable, b: ReturnTable, w=None, mc_n: int = 100_000, seed: int = 0) -> float:
    """Weighted average over pairs of the energy distance between two tables."""
    w = uniform_weights(a.n_states) if w is None else _check_weights(w, len(a))
    if a.kind == "gaussian" and b.kind == "gaussian":
        ma, va = a.gaussian_arrays()
        mb, vb = b.gaussian_arrays()
        cross = mean_abs_normal(ma - mb, np.sqrt(va + vb))
        per = 2.0 * cross - (mean_abs_normal(0.0, np.sqrt(2 * va)) + mean_abs_normal(0.0, np.sqrt(2 * vb)))
        return float(w @ per)
    total = 0.0
    for p in np.flatnonzero(w):
        x, y = a.entries[p], b.entries[p]
        if isinstance(x, BivariateGaussian) and isinstance(y, BivariateGaussian):
            val, _ = energy_mc_gaussian(x, y, mc_n, seed)
        elif isinstance(x, BivariateGaussian) or isinstance(y, BivariateGaussian):
            val, _ = energy_mc(x.sample, y.sample, mc_n, seed)
        else:
            val = energy(x, y)
        total += w[p] * val
    return float(total)


def _cdf(d, x):
    if isinstance(d, ScalarGaussian):
        if d.var == 0:
            return (x >= d.mean).astype(float)
        return ndtr((x - d.mean) / d.std)
    m = as_mixture(d)
    out = np.zeros_like(x)
    for wj, c in zip(m.weights, m.components):
        out += wj * (ndtr((x - c.mean) / c.std) if c.var > 0 else (x >= c.mean))
    return out


def _support(d):
    m = as_mixture(d)
    sd = np.sqrt(m.variances)
    return float(np.min(m.means - 12 * sd)), float(np.max(m.means + 12 * sd)), m.means


def _w1_gauss_atoms(g: ScalarGaussian, atoms, weights) -> float:
    """Exact W1 between a normal law and a weighted set of atoms on the line."""
    order = np.argsort(atoms)
    x = np.asarray(atoms, dtype=float)[order]
    c = np.cumsum(np.asarray(weights, dtype=float)[order])
    c[-1] = 1.0
    mu, sd = g.mean, g.std
    if sd == 0:
        return float(np.asarray(weights)[order] @ np.abs(x - mu))

    def prim(t):
        # integral of Phi((s - mu)/sd) ds from -inf to t
        u = (t - mu) / sd
        return sd * (u * ndtr(u) + math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi))

    def seg(level, lo, hi):
        # integral of |level - Phi| over [lo, hi]
        cut = mu + sd * float(ndtri(level)) if 0 < level < 1 else (math.inf if level >= 1 else -math.inf)
        total = 0.0
        for a0, a1, sign in ((lo, min(hi, cut), 1.0), (max(lo, cut), hi, -1.0)):
            if a1 > a0:
                total += sign * (level * (a1 - a0) - (prim(a1) - prim(a0)))
        return total

    total = prim(x[0])
    u = (x[-1] - mu) / sd
    total += sd * (math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi) - u * (1 - ndtr(u)))
    for k in range(len(x) - 1):
        if x[k + 1] > x[k]:
            total += seg(c[k], x[k], x[k + 1])
    return float(total)


def w1(a, b) -> float:
    """W1 between two univariate laws (closed form where available, else CDF quadrature)."""
    if isinstance(a, ScalarGaussian) and isinstance(b, ScalarGaussian):
        return w1_gaussian(a, b)
    if isinstance(a, ParticleSet) and isinstance(b, ScalarGaussian) and a.dim == 1:
        return _w1_gauss_atoms(b, a.points[:, 0], a.weights)
    if isinstance(b, ParticleSet) and isinstance(a, ScalarGaussian) and b.dim == 1:
        return _w1_gauss_atoms(a, b.points[:, 0], b.weights)
    if (
        isinstance(a, ParticleSet) and isinstance(b, ParticleSet) and a.dim == b.dim == 1
        and a.points.shape == b.points.shape
        and np.allclose(a.weights, a.weights[0]) and np.allclose(b.weights, b.weights[0])
    ):
        return w1_empirical(np.sort(a.points[:, 0]), np.sort(b.points[:, 0]))
    lo_a, hi_a, pa = _support(a)
    lo_b, hi_b, pb = _support(b)
    lo, hi = min(lo_a, lo_b), max(hi_a, hi_b)
    if hi <= lo:
        return 0.0
    knots = np.unique(np.concatenate([[lo, hi], pa, pb]))
    total = 0.0
    for x0, x1 in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(lambda x: abs(float(_cdf(a, np.array([x]))[0] - _cdf(b, np.array([x]))[0])), x0, x1, limit=200)
        total += val
    return total


def expected_w1(a: ReturnTable, b: ReturnTable, w=None) -> float:
    """Weighted average over pairs of W1 between two univariate tables."""
    w = uniform_weights(a.n_states) if w is None else _check_weights(w, len(a))
    if a.kind == "gaussian" and b.kind == "gaussian":
        ma, va = a.gaussian_arrays()
        mb, vb = b.gaussian_arrays()
        return float(w @ mean_abs_normal(ma - mb, np.abs(np.sqrt(va) - np.sqrt(vb))))
    return float(sum(w[p] * w1(a.entries[p], b.entries[p]) for p in np.flatnonzero(w)))


def sample_marginal(table: ReturnTable, w, n: int, rng) -> np.ndarray:
    """``n`` draws from the ``w``-weighted mixture of the table's laws."""
    counts = rng.multinomial(n, w)
    parts = [np.asarray(table.entries[p].sample(rng, int(counts[p])), dtype=float) for p in np.flatnonzero(counts)]
    return np.concatenate(parts)


def marginal_w1(a: ReturnTable, b: ReturnTable, w=None, n: int = 100_000, seed: int = 0) -> float:
    """W1 between the ``w``-mixtures of two tables, from sorted samples."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    w = uniform_weights(a.n_states) if w is None else _check_weights(w, len(a))
    # common random numbers: both tables consume identical streams
    xa = np.sort(sample_marginal(a, w, n, make_rng(seed)))
    xb = np.sort(sample_marginal(b, w, n, make_rng(seed)))
    return w1_empirical(xa, xb)


# ---------------------------------------------------------------------------
# best approximation


@dataclass
class BestApprox:
    theta: np.ndarray
    value: float
    converged: bool


def _table_start(spec, mean, var):
    if spec.kind == "linear_misspec":
        n = spec.n_states
        i = np.arange(1, n + 1, dtype=float)
        X = np.zeros((2 * n, 3))
        X[0::2, 0] = 1.0
        X[1::2, 1] = 1.0
        X[0::2, 2] = i
        X[1::2, 2] = i
        coef, *_ = np.linalg.lstsq(X, mean, rcond=None)
        slope = min(coef[2], -1e-3)
        return np.array([coef[0], coef[1], slope, float(np.mean(var)) * (1 - spec.gamma**2)])
    if spec.kind == "chain_realizable":
        p0 = 0.5
        A0 = float(np.max(np.abs(mean))) * (1 - spec.gamma * p0)
        theta = [A0, p0]
        if spec.estimate_variance:
            theta.append(float(np.mean(var)) * (1 - spec.gamma**2))
        return np.array(theta)
    return spec.interior_point()


def best_approx(spec, truth: ReturnTable, w=None, opt: OptimizerConfig = OptimizerConfig()) -> BestApprox:
    """Parameter minimising the weighted energy between the model and ``truth``."""
    if not spec.gaussian or truth.kind != "gaussian":
        raise TypeError("best approximation needs a Gaussian model and truth")
    w = uniform_weights(truth.n_states) if w is None else _check_weights(w, len(truth))
    mt, vt = truth.gaussian_arrays()
    self_t = mean_abs_normal(0.0, np.sqrt(2 * vt))

    def value(theta):
        m, v = spec.moments(theta)
        per = 2.0 * mean_abs_normal(m - mt, np.sqrt(v + vt)) - (mean_abs_normal(0.0, np.sqrt(2 * v)) + self_t)
        return float(w @ per)

    starts = [spec.to_unconstrained(_table_start(spec, mt, vt)), np.zeros(spec.n_params)]
    res = nelder_mead(lambda x: value(spec.from_unconstrained(x)), starts, opt)
    theta = spec.from_unconstrained(res.x)
    return BestApprox(theta, value(theta), res.converged)


# ---------------------------------------------------------------------------
# population multi-step objective


@dataclass(frozen=True)
class CorrelatedRewardChain:
    """Chain whose rewards are centred bivariate normals ``sigma0_sq * C(rho0)``."""

    sigma0_sq: float = 4.0
    rho0: float = 0.5
    n_states: int = 30


def bivariate_cov_after(theta_rho, sigma1_sq, env: CorrelatedRewardChain, gamma, m):
    """Covariance scale and correlation of ``(T^pi)^m`` applied to the model law.

    Returns the law as a :class:`BivariateGaussian`; ``m=None`` gives the fixed point.
    """
    g2 = gamma * gamma
    if m is None:
        c_rew, c_mod = 1.0 / (1.0 - g2), 0.0
    else:
        c_rew, c_mod = (1.0 - g2**m) / (1.0 - g2), g2**m / (1.0 - g2)
    cov = env.sigma0_sq * c_rew * np.array([[1, env.rho0], [env.rho0, 1]]) + sigma1_sq * c_mod * np.array(
        [[1, theta_rho], [theta_rho, 1]]
    )
    s2 = float(cov[0, 0])
    return BivariateGaussian((0.0, 0.0), s2, float(cov[0, 1] / s2))


def population_multistep_objective(
    theta, spec, env, target: TabularPolicy, gamma: float, m, w=None, mc_n: int = 100_000, seed: int = 0,
) -> float:
    """``F_m(theta)``: weighted energy between the model and ``(T^pi)^m`` of the model.

    ``m=None`` compares with the true return laws instead (``F``). Gaussian
    models use exact moment recursions; the bivariate model uses
    :func:`energy_mc_gaussian` with ``seed`` shared across calls, so values
    at different ``theta`` share random numbers.
    """
    if spec.kind == "bivariate_corr":
        law = spec.law(theta)
        other = bivariate_cov_after(float(theta[0]), spec.sigma1_sq, env, gamma, m)
        est, _ = energy_mc_gaussian(law, other, mc_n, seed)
        return est
    cfg = env
    n = cfg.n_states
    w = uniform_weights(n) if w is None else _check_weights(w, 2 * n)
    mean, var = spec.moments(spec.validate(theta))
    model = ReturnTable.from_gaussian_arrays(mean, var)
    if m is None:
        from .chain import iterate_bellman, true_return_table

        other = true_return_table(cfg, target) if target.is_always_right else iterate_bellman(cfg, target)
    elif target.is_deterministic:
        other = ReturnTable.from_gaussian_arrays(*bellman_gaussian_arrays(mean, var, cfg, target, m))
    else:
        other = model
        for _ in range(m):
            other = exact_bellman_apply(other, cfg, target)
    return expected_energy(model, other, w)


# ---------------------------------------------------------------------------
# series constant


def bound_B1(gamma: float, beta0: float, q: float) -> float:
    """``(1 - gamma^beta0)^-1 * sum_{k>=1} 4^(q k) gamma^((2^(k-1) - 1) beta0)``.

    Summation stops at the first term below 1e-15 (included) or after 10^4 terms.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if beta0 <= 0 or q < 0:
        raise ValueError("need beta0 > 0 and q >= 0")
    total = 0.0
    log_g = math.log(gamma) if gamma > 0 else -math.inf
    for k in range(1, B1_MAX_TERMS + 1):
        expo = (2.0 ** (k - 1) - 1.0) * beta0 if k < 1024 else math.inf
        if expo == 0:
            term = 4.0 ** (q * k)
        elif log_g == -math.inf:
            term = 0.0
        else:
            log_term = q * k * math.log(4.0) + expo * log_g
            term = math.exp(log_term) if log_term > -745 else 0.0
        total += term
        if term < B1_TERM_TOL:
            break
    return total / (1.0 - gamma**beta0)
