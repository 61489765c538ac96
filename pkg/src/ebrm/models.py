"""Parametric return-distribution families and their unconstrained coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .chain import ReturnTable, _true_arrays
from .distances import BivariateGaussian


def _positive(x):
    return math.exp(float(np.clip(x, -700.0, 700.0)))


@dataclass(frozen=True)
class ChainRealizable:
    """Chain return laws indexed by ``(A0, p0, sigma2)``.

    With ``estimate_variance=False`` the parameter is ``(A0, p0)`` and the
    reward variance is fixed at ``known_sigma0_sq``.
    """

    gamma: float
    n_states: int = 30
    estimate_variance: bool = True
    known_sigma0_sq: float | None = None

    kind = "chain_realizable"
    gaussian = True

    def __post_init__(self):
        if not self.estimate_variance and self.known_sigma0_sq is None:
            raise ValueError("known_sigma0_sq is required when the variance is fixed")

    @property
    def param_names(self):
        return ("A0", "p0", "sigma2") if self.estimate_variance else ("A0", "p0")

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def validate(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,) or not np.all(np.isfinite(theta)):
            raise ValueError(f"theta must be a finite vector of length {self.n_params}")
        if not 0.0 < theta[1] < 1.0:
            raise ValueError("p0 must lie in (0, 1)")
        if self.estimate_variance and theta[2] <= 0:
            raise ValueError("sigma2 must be positive")
        return theta

    def _sigma2(self, theta):
        return theta[2] if self.estimate_variance else self.known_sigma0_sq

    def moments(self, theta):
        """Mean and variance arrays over all pairs."""
        A0, p0 = float(theta[0]), float(theta[1])
        cfg = _LooseChain(self.n_states, A0, p0, float(self._sigma2(theta)), self.gamma)
        return _true_arrays(cfg)

    def to_unconstrained(self, theta):
        theta = self.validate(theta)
        x = [theta[0], logit(theta[1])]
        if self.estimate_variance:
            x.append(math.log(theta[2]))
        return np.array(x)

    def from_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        theta = [x[0], float(np.clip(expit(x[1]), 1e-300, 1 - 1e-16))]
        if self.estimate_variance:
            theta.append(_positive(x[2]))
        return np.array(theta)

    def interior_point(self):
        return self.from_unconstrained(np.zeros(self.n_params))

    def moment_start(self, emp, gamma):
        """Log-linear fit of per-position mean rewards plus pooled within-pair variance."""
        mean_r, var_r, cnt = _pair_reward_stats(emp)
        k = np.repeat(np.arange(1, self.n_states + 1), 2) + np.tile([-1, 1], self.n_states)
        ok = (cnt > 0) & (mean_r > 0) & (k <= self.n_states)
        if ok.sum() >= 2 and np.ptp(k[ok]) > 0:
            slope, icpt = np.polyfit(k[ok], np.log(mean_r[ok]), 1, w=np.sqrt(cnt[ok]))
            p0 = float(np.clip(math.exp(slope), 0.05, 0.99))
            A0 = math.exp(icpt)
        else:
            p0, A0 = 0.5, float(np.mean(emp.rewards[:, 0])) if emp.total else 0.0
        theta = [A0, p0]
        if self.estimate_variance:
            theta.append(max(_pooled_var(var_r, cnt, emp), 1e-6))
        return np.array(theta)

    def instantiate(self, theta) -> ReturnTable:
        mean, var = self.moments(self.validate(theta))
        return ReturnTable.from_gaussian_arrays(mean, var)


@dataclass(frozen=True)
class _LooseChain:
    # ChainConfig without range checks so the optimiser can probe any p0, A0
    n_states: int
    A0: float
    p0: float
    sigma0_sq: float
    gamma: float


@dataclass(frozen=True)
class LinearMisspec:
    """Gaussian laws with side-specific linear means and a common variance.

    ``theta = (beta_L, beta_R, beta_1, sigma2)`` with ``beta_1 <= 0``; pair
    ``(i, -1)`` has mean ``beta_L + beta_1 i``, pair ``(i, +1)`` has mean
    ``beta_R + beta_1 i``, and every pair has variance ``sigma2 / (1 - gamma^2)``.
    """

    gamma: float
    n_states: int = 30

    kind = "linear_misspec"
    gaussian = True
    param_names = ("beta_L", "beta_R", "beta_1", "sigma2")
    n_params = 4

    def validate(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (4,) or not np.all(np.isfinite(theta)):
            raise ValueError("theta must be a finite vector of length 4")
        if theta[2] > 0:
            raise ValueError("beta_1 must be non-positive")
        if theta[3] <= 0:
            raise ValueError("sigma2 must be positive")
        return theta

    def moments(self, theta):
        i = np.arange(1, self.n_states + 1, dtype=float)
        mean = np.empty(2 * self.n_states)
        mean[0::2] = theta[0] + theta[2] * i
        mean[1::2] = theta[1] + theta[2] * i
        var = np.full(2 * self.n_states, theta[3] / (1.0 - self.gamma**2))
        return mean, var

    def to_unconstrained(self, theta):
        theta = self.validate(theta)
        if theta[2] == 0:
            raise ValueError("beta_1 = 0 lies on the boundary of the unconstrained map")
        return np.array([theta[0], theta[1], math.log(-theta[2]), math.log(theta[3])])

    def from_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        return np.array([x[0], x[1], -_positive(x[2]), _positive(x[3])])

    def interior_point(self):
        return self.from_unconstrained(np.zeros(4))

    def moment_start(self, emp, gamma):
        """Mean reward scaled by ``1/(1-gamma)`` with a mild slope and the reward variance."""
        r = emp.rewards[:, 0]
        level = float(r.mean()) / (1.0 - gamma) if r.size else 0.0
        spread = float(r.var()) if r.size > 1 else 1.0
        return np.array([level, level, -max(abs(level), 1.0) / self.n_states, max(spread, 1e-6)])

    def instantiate(self, theta) -> ReturnTable:
        mean, var = self.moments(self.validate(theta))
        return ReturnTable.from_gaussian_arrays(mean, var)


@dataclass(frozen=True)
class BivariateCorr:
    """Centred bivariate normal laws with covariance ``sigma1_sq C(rho) / (1 - gamma^2)``."""

    gamma: float
    sigma1_sq: float
    n_states: int = 30

    kind = "bivariate_corr"
    gaussian = False
    param_names = ("rho",)
    n_params = 1

    def validate(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape != (1,) or not -1.0 <= theta[0] <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        return theta

    def law(self, theta) -> BivariateGaussian:
        rho = float(self.validate(theta)[0])
        return BivariateGaussian((0.0, 0.0), self.sigma1_sq / (1.0 - self.gamma**2), rho)

    def to_unconstrained(self, theta):
        rho = float(self.validate(theta)[0])
        if abs(rho) == 1.0:
            raise ValueError("rho = +-1 lies on the boundary of the unconstrained map")
        return np.array([2.0 * math.atanh(rho)])

    def from_unconstrained(self, x):
        return np.array([math.tanh(0.5 * float(np.asarray(x).reshape(-1)[0]))])

    def interior_point(self):
        return np.array([0.0])

    def moment_start(self, emp, gamma):
        r = emp.rewards
        if r.shape[0] > 2 and r.shape[1] == 2:
            c = np.corrcoef(r.T)[0, 1]
            if np.isfinite(c):
                return np.array([float(np.clip(c, -0.95, 0.95))])
        return np.array([0.0])

    def instantiate(self, theta) -> ReturnTable:
        law = self.law(theta)
        return ReturnTable(self.n_states, tuple([law] * (2 * self.n_states)))


ModelSpec = ChainRealizable | LinearMisspec | BivariateCorr


def instantiate(spec, theta) -> ReturnTable:
    return spec.instantiate(theta)


def to_unconstrained(spec, theta) -> np.ndarray:
    return spec.to_unconstrained(theta)


def from_unconstrained(spec, x) -> np.ndarray:
    return spec.from_unconstrained(x)


def default_inits(spec, emp, gamma) -> list:
    """Starting points in the constrained space: moment-matched first, then interior."""
    return [spec.moment_start(emp, gamma), spec.interior_point()]


def _pair_reward_stats(emp):
    P = emp.n_pairs
    mean = np.zeros(P)
    var = np.zeros(P)
    for p in range(P):
        lo, hi = emp.offsets[p], emp.offsets[p + 1]
        if hi > lo:
            r = emp.rewards[lo:hi, 0]
            mean[p] = r.mean()
            var[p] = r.var(ddof=1) if hi - lo > 1 else 0.0
    return mean, var, emp.counts.astype(float)


def _pooled_var(var_r, cnt, emp) -> float:
    dof = np.maximum(cnt - 1, 0)
    if dof.sum() > 0:
        return float((dof * var_r).sum() / dof.sum())
    r = emp.rewards[:, 0]
    return float(r.var()) if r.size > 1 else 1.0
