"""Experiment configuration and runners that write CSV reports.

Config files are line-oriented ``key = value`` pairs; dotted keys address
sections (``env.gamma = 0.99``). Lists are comma separated. ``#`` starts a
comment. See :data:`DEFAULTS` for every recognised key.
"""

from __future__ import annotations

import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import PartitionRule, fle_fit, qrtd_fit
from .chain import ChainConfig, TabularPolicy, generate_dataset, true_return_table
from .estimators import ebrm_multi_bootstrap, ebrm_multi_split, ebrm_single, lepski_select
from .metrics import (
    CorrelatedRewardChain,
    best_approx,
    expected_energy,
    expected_w1,
    marginal_w1,
    population_multistep_objective,
)
from .models import BivariateCorr, ChainRealizable, LinearMisspec
from .optimize import OptimizerConfig
from .rng import derive_seed

OUTPUT_ENV = "EBRM_OUTPUT_DIR"
METRICS = ("e_bar", "w1_bar", "w1_marginal")
ESTIMATORS = ("ebrm_single", "ebrm_boot", "ebrm_split", "lepski", "qrtd", "fle")
MODELS = ("chain_realizable", "linear_misspec", "bivariate_corr")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "chain_realizable"
    estimate_variance: bool = True
    sigma1_sq: float = 10.0


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "ebrm_single"
    m: int = 1
    M: int = 0  # 0 means M = N
    grid: tuple = (1, 2, 4)
    J: int = 20
    alpha0: float = 5.0
    epochs: int = 100
    n_tau: int = 99
    l: float = 10.0
    N0: int = 2000
    T0: float = 25.0
    T_tilde: int = 15


@dataclass(frozen=True)
class RhoDemoConfig:
    sigma0_sq: float = 4.0
    rho0: float = 0.5
    sigma1_sq: float = 10.0
    gamma: float = 0.99
    m: tuple = (1, 5, 20, 100)
    points: int = 201
    mc_n: int = 100_000
    seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str = "custom"
    env: ChainConfig = field(default_factory=ChainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    rho: RhoDemoConfig = field(default_factory=RhoDemoConfig)
    sample_sizes: tuple = (500,)
    replications: int = 1
    master_seed: int = 0
    metrics: tuple = METRICS
    marginal_n: int = 100_000
    record_timing: bool = False
    output_dir: str = ""

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        sizes = list(self.sample_sizes)
        if not sizes or sizes != sorted(sizes) or len(set(sizes)) != len(sizes) or sizes[0] < 1:
            raise ValueError("sample_sizes must be strictly ascending positive integers")
        if self.model.kind not in MODELS:
            raise ValueError(f"unknown model kind {self.model.kind!r}")
        if self.estimator.kind not in ESTIMATORS:
            raise ValueError(f"unknown estimator kind {self.estimator.kind!r}")
        bad = set(self.metrics) - set(METRICS)
        if bad:
            raise ValueError(f"unknown metrics {sorted(bad)}")

    def model_spec(self):
        g = self.env.gamma
        m = self.model
        if m.kind == "chain_realizable":
            return ChainRealizable(g, self.env.n_states, m.estimate_variance, None if m.estimate_variance else self.env.sigma0_sq)
        if m.kind == "linear_misspec":
            return LinearMisspec(g, self.env.n_states)
        return BivariateCorr(g, m.sigma1_sq, self.env.n_states)

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "results"))


# ---------------------------------------------------------------------------
# presets and parsing

PRESETS = {
    "custom": {},
    "realizable_var20": {
        "env.sigma0_sq": "20", "env.gamma": "0.99",
        "model.kind": "chain_realizable", "model.estimate_variance": "false",
        "estimator.kind": "ebrm_single",
        "sample_sizes": "500, 1000, 2000, 5000, 10000, 20000", "replications": "20",
    },
    "realizable_var5000": {
        "env.sigma0_sq": "5000", "env.gamma": "0.99",
        "model.kind": "chain_realizable", "model.estimate_variance": "false",
        "estimator.kind": "ebrm_single", "estimator.alpha0": "2", "estimator.N0": "20000",
        "sample_sizes": "2000, 5000, 10000, 20000, 50000, 100000", "replications": "20",
    },
    "nonrealizable_g50": {
        "env.sigma0_sq": "20", "env.gamma": "0.5",
        "model.kind": "linear_misspec", "estimator.kind": "ebrm_single",
        "estimator.l": "0.7", "estimator.N0": "3000", "estimator.T0": "10", "estimator.T_tilde": "10",
        "sample_sizes": "2000, 3000, 5000, 10000", "replications": "20",
    },
    "nonrealizable_g99": {
        "env.sigma0_sq": "20", "env.gamma": "0.99",
        "model.kind": "linear_misspec", "estimator.kind": "ebrm_boot", "estimator.m": "240", "estimator.M": "0",
        "sample_sizes": "2000, 3000, 5000, 10000", "replications": "10",
    },
    "rho_demo": {
        "model.kind": "bivariate_corr", "rho.sigma0_sq": "4", "rho.rho0": "0.5", "rho.sigma1_sq": "10",
        "rho.gamma": "0.99",
    },
}

_SECTIONS = {"env": "env", "model": "model", "estimator": "estimator", "optimizer": "optimizer", "rho": "rho"}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a dict of strings."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {n}: empty key")
        out[key] = value
    return out


def _convert(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        items = [v.strip() for v in value.split(",") if v.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(int(v) if v.lstrip("-").isdigit() else float(v) for v in items)
    return value


def _apply(obj, key: str, value: str):
    names = {f.name for f in fields(obj)}
    if key not in names:
        raise KeyError(key)
    return replace(obj, **{key: _convert(value, getattr(obj, key))})


def build_config(settings: dict | None = None, preset: str | None = None) -> ExperimentConfig:
    """Config from a preset overlaid with ``settings`` (later keys win)."""
    merged = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
        merged["scenario"] = preset
    merged.update(settings or {})
    parts = {name: getattr(ExperimentConfig(), name) for name in _SECTIONS}
    top = {}
    for key, value in merged.items():
        section, _, sub = key.partition(".")
        try:
            if sub:
                if section not in parts:
                    raise KeyError(key)
                parts[section] = _apply(parts[section], sub, value)
            else:
                if key in _SECTIONS:
                    raise KeyError(key)
                top[key] = value
        except KeyError:
            raise ValueError(f"unknown config key {key!r}") from None
    base = ExperimentConfig(**parts)
    for key, value in top.items():
        try:
            base = _apply(base, key, value)
        except KeyError:
            raise ValueError(f"unknown config key {key!r}") from None
    return base


def load_config(path=None, preset=None, overrides=None) -> ExperimentConfig:
    settings = {}
    if path is not None:
        settings.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    settings.update(overrides or {})
    if preset is None and "scenario" in settings and settings["scenario"] in PRESETS:
        preset = settings.pop("scenario")
    return build_config(settings, preset)


# ---------------------------------------------------------------------------
# sweep


def cell_seed(master_seed: int, N: int, rep: int) -> int:
    return derive_seed(master_seed, N, rep)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


def _estimate(cfg: ExperimentConfig, ds, spec, seed: int):
    """Return (theta or None, objective, return table)."""
    env, est, opt = cfg.env, cfg.estimator, cfg.optimizer
    target = TabularPolicy.always_right(env.n_states)
    g = env.gamma
    M = est.M or len(ds)
    if est.kind == "qrtd":
        q = qrtd_fit(ds, target, g, est.n_tau, est.alpha0, est.epochs, seed)
        return None, None, q.to_return_table()
    if est.kind == "fle":
        rule = PartitionRule(est.l, est.N0, est.T0, est.T_tilde)
        res = fle_fit(ds, spec, target, g, rule, seed, opt)
    elif est.kind == "ebrm_single":
        res = ebrm_single(ds, spec, target, g, opt)
    elif est.kind == "ebrm_boot":
        res = ebrm_multi_bootstrap(ds, spec, target, g, est.m, M, seed, opt)
    elif est.kind == "ebrm_split":
        res = ebrm_multi_split(ds, spec, target, g, est.m, M, seed, opt)
    else:
        sel = lepski_select(ds, spec, target, g, est.grid, est.J, M, derive_seed(seed, 1), opt)
        if sel.selected_m == 1:
            res = ebrm_single(ds, spec, target, g, opt)
        else:
            res = ebrm_multi_bootstrap(ds, spec, target, g, sel.selected_m, M, seed, opt)
    return res.theta_hat, res.objective_value, spec.instantiate(res.theta_hat)


def run_cell(cfg: ExperimentConfig, N: int, rep: int) -> dict:
    """One (N, replication) run; failures are reported in ``status``."""
    seed = cell_seed(cfg.master_seed, N, rep)
    spec = cfg.model_spec()
    row = {"scenario": cfg.scenario, "estimator": cfg.estimator.kind, "N": N, "rep": rep, "seed": seed}
    t0 = time.perf_counter()
    try:
        if spec.kind == "bivariate_corr":
            raise ValueError("sweeps need a scalar-reward model")
        behavior = TabularPolicy.uniform(cfg.env.n_states)
        ds = generate_dataset(cfg.env, behavior, N, derive_seed(seed, 0))
        theta, obj, table = _estimate(cfg, ds, spec, derive_seed(seed, 1))
        truth = true_return_table(cfg.env, TabularPolicy.always_right(cfg.env.n_states))
        row["theta"] = None if theta is None else [float(x) for x in theta]
        row["objective"] = None if obj is None else float(obj)
        if "e_bar" in cfg.metrics:
            row["e_bar"] = expected_energy(table, truth)
        if "w1_bar" in cfg.metrics:
            row["w1_bar"] = expected_w1(table, truth)
        if "w1_marginal" in cfg.metrics:
            row["w1_marginal"] = marginal_w1(table, truth, n=cfg.marginal_n, seed=derive_seed(seed, 2))
        row["status"] = "ok"
    except Exception as exc:  # recorded per row so the sweep continues
        row["status"] = f"error:{type(exc).__name__}"
    row["wall_ms"] = (time.perf_counter() - t0) * 1e3
    return row


def _cell_args(cfg):
    return [(cfg, N, rep) for N in cfg.sample_sizes for rep in range(cfg.replications)]


def _run_cell_star(args):
    return run_cell(*args)


def detail_header(cfg: ExperimentConfig) -> list:
    n_theta = 0 if cfg.estimator.kind == "qrtd" else cfg.model_spec().n_params
    return (["scenario", "estimator", "N", "rep", "seed"] + [f"theta_{i}" for i in range(n_theta)]
            + ["objective", "e_bar", "w1_bar", "w1_marginal", "wall_ms", "status"])


def detail_rows(cfg: ExperimentConfig, rows) -> list:
    header = detail_header(cfg)
    n_theta = sum(h.startswith("theta_") for h in header)
    out = []
    for r in sorted(rows, key=lambda r: (r["N"], r["rep"])):
        theta = r.get("theta") or [None] * n_theta
        wall = r["wall_ms"] if cfg.record_timing else None
        out.append([r["scenario"], r["estimator"], r["N"], r["rep"], r["seed"], *theta, r.get("objective"),
                    r.get("e_bar"), r.get("w1_bar"), r.get("w1_marginal"), wall, r["status"]])
    return out


SUMMARY_FIELDS = ("objective", "e_bar", "w1_bar", "w1_marginal")


def summarize(rows) -> list:
    """Mean and SD (ddof=1) of every metric per (scenario, estimator, N) over successful runs."""
    cells = {}
    for r in rows:
        cells.setdefault((r["scenario"], r["estimator"], r["N"]), []).append(r)
    out = []
    for key in sorted(cells, key=lambda k: k[2]):
        ok = [r for r in cells[key] if r["status"] == "ok"]
        line = list(key) + [len(cells[key]), len(ok)]
        for name in SUMMARY_FIELDS:
            vals = np.array([r[name] for r in ok if r.get(name) is not None], dtype=float)
            line.append(float(vals.mean()) if vals.size else None)
            line.append(float(vals.std(ddof=1)) if vals.size > 1 else None)
        out.append(line)
    return out


def summary_header() -> list:
    cols = ["scenario", "estimator", "N", "runs", "ok"]
    for name in SUMMARY_FIELDS:
        cols += [f"{name}_mean", f"{name}_sd"]
    return cols


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def run_sweep(cfg: ExperimentConfig, jobs: int = 1, out_dir=None) -> dict:
    """Run every (N, replication) cell and write ``detail.csv`` and ``summary.csv``."""
    seeds = [cell_seed(cfg.master_seed, N, rep) for N in cfg.sample_sizes for rep in range(cfg.replications)]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("sub-seed collision; choose another master seed")
    args = _cell_args(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_star, args))
    else:
        rows = [_run_cell_star(a) for a in args]
    rows.sort(key=lambda r: (r["N"], r["rep"]))
    out = Path(out_dir) if out_dir is not None else cfg.out_path
    _write_csv(out / "detail.csv", detail_header(cfg), detail_rows(cfg, rows))
    _write_csv(out / "summary.csv", summary_header(), summarize(rows))
    return {"rows": rows, "detail": out / "detail.csv", "summary": out / "summary.csv"}


# ---------------------------------------------------------------------------
# other reports


def run_table9(cfg: ExperimentConfig, gammas=(0.5, 0.99), out_dir=None) -> list:
    """Best linear approximation of the true return laws for each discount."""
    rows = []
    for g in gammas:
        env = replace(cfg.env, gamma=g)
        truth = true_return_table(env, TabularPolicy.always_right(env.n_states))
        res = best_approx(LinearMisspec(g, env.n_states), truth, opt=cfg.optimizer)
        rows.append([g, *[float(x) for x in res.theta], res.value, "converged" if res.converged else "not_converged"])
    out = Path(out_dir) if out_dir is not None else cfg.out_path
    _write_csv(out / "table9.csv", ["gamma", "beta_L", "beta_R", "beta_1", "sigma2", "min_e_bar", "status"], rows)
    return rows


def run_rho_demo(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Population objective curves over the correlation grid for several step levels."""
    rc = cfg.rho
    if rc.points < 50:
        raise ValueError("the correlation grid needs at least 50 points")
    spec = BivariateCorr(rc.gamma, rc.sigma1_sq)
    env = CorrelatedRewardChain(rc.sigma0_sq, rc.rho0)
    target = TabularPolicy.always_right(env.n_states)
    grid = np.linspace(-1.0, 1.0, rc.points)
    levels = list(rc.m) + [None]
    curves, argmins = [], []
    for m in levels:
        vals = [population_multistep_objective(np.array([r]), spec, env, target, rc.gamma, m, mc_n=rc.mc_n, seed=rc.seed)
                for r in grid]
        label = "inf" if m is None else str(m)
        curves += [[label, float(r), float(v)] for r, v in zip(grid, vals)]
        k = int(np.argmin(vals))
        argmins.append([label, float(grid[k]), float(vals[k])])
    out = Path(out_dir) if out_dir is not None else cfg.out_path
    _write_csv(out / "rho_curves.csv", ["m", "rho", "F"], curves)
    _write_csv(out / "rho_argmin.csv", ["m", "argmin_rho", "min_F"], argmins)
    return {"curves": curves, "argmin": argmins}


def run_lepski(cfg: ExperimentConfig, N: int | None = None, out_dir=None):
    """Step-level selection on one generated dataset; writes the interval trace."""
    N = cfg.sample_sizes[0] if N is None else N
    seed = cell_seed(cfg.master_seed, N, 0)
    ds = generate_dataset(cfg.env, TabularPolicy.uniform(cfg.env.n_states), N, derive_seed(seed, 0))
    est = cfg.estimator
    res = lepski_select(ds, cfg.model_spec(), TabularPolicy.always_right(cfg.env.n_states), cfg.env.gamma,
                        est.grid, est.J, est.M or N, derive_seed(seed, 1), cfg.optimizer)
    rows = []
    for k in sorted(res.intervals, reverse=True):
        e = res.estimates[k]
        rows.append([k, res.levels[k], float(np.mean(e)), float(np.std(e, ddof=1)), *res.intervals[k]])
    out = Path(out_dir) if out_dir is not None else cfg.out_path
    _write_csv(out / "lepski.csv", ["level", "m", "mean", "sd", "lower", "upper"], rows)
    return res
