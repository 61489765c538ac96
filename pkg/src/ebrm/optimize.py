"""Derivative-free minimisation: Nelder-Mead with restarts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


class NonFiniteStart(ValueError):
    """The objective is not finite at a starting point."""


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 2000
    ftol: float = 1e-9
    xtol: float = 1e-8
    restarts: int = 3
    seed: int = 0
    jitter: float = 0.5

    def __post_init__(self):
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be positive")


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int
    nit: int
    restart: int = 0
    history: list = field(default_factory=list, repr=False)


def initial_simplex(x0) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    n = x0.shape[0]
    sim = np.tile(x0, (n + 1, 1))
    edge = np.maximum(0.05 * np.abs(x0), 0.1)
    sim[1:][np.arange(n), np.arange(n)] += edge
    return sim


def _safe(f, x):
    v = f(x)
    v = float(v)
    return v if math.isfinite(v) else math.inf


def nelder_mead_once(f, x0, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """A single Nelder-Mead run with standard coefficients.

    Stops when both the simplex spread in ``x`` is below ``xtol`` and the
    spread of objective values is below ``ftol``, or after ``max_iters``
    iterations (then ``converged`` is False).
    """
    sim = initial_simplex(x0)
    n = sim.shape[1]
    fsim = np.array([_safe(f, x) for x in sim])
    if not math.isfinite(fsim[0]):
        raise NonFiniteStart("objective is not finite at the starting point")
    nfev = n + 1
    converged = False
    it = 0
    while it < cfg.max_iters:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        if (np.max(np.abs(sim[1:] - sim[0])) <= cfg.xtol and np.max(np.abs(fsim[1:] - fsim[0])) <= cfg.ftol):
            converged = True
            break
        it += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + REFLECT * (centroid - sim[-1])
        fr = _safe(f, xr)
        nfev += 1
        if fr < fsim[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = _safe(f, xe)
            nfev += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
            fc = _safe(f, xc)
            nfev += 1
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (sim[-1] - centroid)
            fc = _safe(f, xc)
            nfev += 1
            if fc < fsim[-1]:
                sim[-1], fsim[-1] = xc, fc
                continue
        for j in range(1, n + 1):
            sim[j] = sim[0] + SHRINK * (sim[j] - sim[0])
            fsim[j] = _safe(f, sim[j])
        nfev += n
    else:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
    return OptimizeResult(sim[0].copy(), float(fsim[0]), converged, nfev, it)


def nelder_mead(f, starts, cfg: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    """Best Nelder-Mead run over several starts.

    ``starts`` is one point or a list of points. Runs ``max(restarts,
    len(starts))`` searches: first from each start, then from the best point
    so far plus seeded Gaussian jitter. Ties keep the earliest run.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    n_runs = max(cfg.restarts, starts.shape[0])
    rng = make_rng(cfg.seed)
    best = None
    nfev = 0
    history = []
    for r in range(n_runs):
        if r < starts.shape[0]:
            x0 = starts[r]
        elif best is None:
            break
        else:
            scale = cfg.jitter * np.maximum(np.abs(best.x), 1.0)
            x0 = best.x + scale * rng.standard_normal(best.x.shape[0])
            if not math.isfinite(_safe(f, x0)):
                x0 = best.x
        try:
            res = nelder_mead_once(f, x0, cfg)
        except NonFiniteStart:
            history.append((r, math.inf, False))
            continue
        nfev += res.nfev
        res.restart = r
        history.append((r, res.fun, res.converged))
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise ValueError("objective is not finite at any starting point")
    best.nfev = nfev
    best.history = history
    return best
