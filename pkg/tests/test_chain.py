import math

import numpy as np
import pytest

from ebrm.chain import (
    ChainConfig,
    OfflineDataset,
    ReturnTable,
    TabularPolicy,
    bellman_gaussian_arrays,
    exact_bellman_apply,
    generate_bivariate_dataset,
    generate_dataset,
    iterate_bellman,
    pair_index,
    pair_of,
    true_return_table,
)
from ebrm.distances import ParticleSet, ScalarGaussian, energy_gg, w1_gaussian
from ebrm.rng import make_rng

CFG = ChainConfig()
RIGHT = TabularPolicy.always_right(30)


def rollout_returns(cfg, s, a, n, horizon, seed):
    """Discounted returns of ``n`` always-right rollouts, simulated step by step."""
    rng = make_rng(seed)
    total = np.zeros(n)
    state = np.full(n, s)
    act = np.full(n, a)
    disc = 1.0
    for _ in range(horizon):
        k = state + act
        mu = np.where(k <= cfg.n_states, cfg.A0 * cfg.p0 ** k.astype(float), 0.0)
        total += disc * (mu + math.sqrt(cfg.sigma0_sq) * rng.standard_normal(n))
        state = np.clip(k, 1, cfg.n_states)
        act = np.ones(n, dtype=int)
        disc *= cfg.gamma
    return total


def test_pair_index_round_trip():
    for p in range(60):
        assert pair_index(*pair_of(p)) == p
    with pytest.raises(ValueError):
        pair_index(1, 0)


def test_reward_mean():
    assert CFG.reward_mean(1) == pytest.approx(90.0)
    assert CFG.reward_mean(0) == 100.0
    assert CFG.reward_mean(31) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(gamma=1.0)
    with pytest.raises(ValueError):
        ChainConfig(p0=1.0)
    with pytest.raises(ValueError):
        ChainConfig(n_states=1)


def test_step_boundaries():
    rng = make_rng(0)
    cfg0 = ChainConfig(sigma0_sq=0.0)
    assert cfg0.step(30, 1, rng) == (0.0, 30)
    assert cfg0.step(1, -1, rng) == (100.0, 1)
    assert cfg0.step(5, 1, rng) == (cfg0.reward_mean(6), 6)


def test_generate_dataset_rejects_empty():
    with pytest.raises(ValueError):
        generate_dataset(CFG, TabularPolicy.uniform(30), 0, 0)


def test_generate_dataset_frequencies():
    ds = generate_dataset(CFG, TabularPolicy.uniform(30), 10_000, 1)
    freq = np.bincount(ds.pair, minlength=60) / len(ds)
    sd = math.sqrt((1 / 60) * (59 / 60) / len(ds))
    assert np.all(np.abs(freq - 1 / 60) < 4 * sd)


def test_generate_dataset_large_total_variation():
    ds = generate_dataset(CFG, TabularPolicy.uniform(30), 1_000_000, 2)
    freq = np.bincount(ds.pair, minlength=60) / len(ds)
    assert 0.5 * np.abs(freq - 1 / 60).sum() <= 0.02


def test_generate_dataset_deterministic(tmp_path):
    a = generate_dataset(CFG, TabularPolicy.uniform(30), 500, 7)
    b = generate_dataset(CFG, TabularPolicy.uniform(30), 500, 7)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_dataset_csv_round_trip(tmp_path):
    ds = generate_dataset(CFG, TabularPolicy.uniform(30), 200, 3)
    ds.to_csv(tmp_path / "d.csv")
    back = OfflineDataset.from_csv(tmp_path / "d.csv", 30)
    assert np.array_equal(back.s, ds.s) and np.array_equal(back.a, ds.a)
    assert np.array_equal(back.r, ds.r) and np.array_equal(back.s_next, ds.s_next)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "s,a,r0,s_next"


def test_bivariate_dataset_round_trip(tmp_path):
    ds = generate_bivariate_dataset(CFG, TabularPolicy.uniform(30), 50, 0, rho0=0.5, sigma0_sq=4.0)
    assert ds.reward_dim == 2
    ds.to_csv(tmp_path / "d.csv")
    back = OfflineDataset.from_csv(tmp_path / "d.csv", 30)
    assert np.array_equal(back.r, ds.r)


def test_dataset_validation():
    with pytest.raises(ValueError):
        OfflineDataset(3, np.array([4]), np.array([1]), np.array([0.0]), np.array([1]))
    with pytest.raises(ValueError):
        OfflineDataset(3, np.array([1]), np.array([0]), np.array([0.0]), np.array([1]))


def test_true_table_end_values():
    m, v = true_return_table(CFG, RIGHT).gaussian_arrays()
    assert m[pair_index(30, 1)] == 0.0
    assert np.allclose(v, 20 / (1 - 0.99**2))


def test_true_table_rejects_other_policies():
    with pytest.raises(NotImplementedError):
        true_return_table(CFG, TabularPolicy.uniform(30))


@pytest.mark.parametrize("sa", [(2, -1), (1, -1), (1, 1), (29, 1)])
def test_true_means_against_rollouts(sa):
    returns = rollout_returns(CFG, sa[0], sa[1], 20_000, 2500, seed=sa[0])
    se = returns.std(ddof=1) / math.sqrt(returns.size)
    assert abs(returns.mean() - true_return_table(CFG, RIGHT)[sa].mean) < 3 * se


def test_iterate_bellman_matches_closed_form():
    for cfg in (CFG, ChainConfig(A0=50, p0=0.7, sigma0_sq=5, gamma=0.9)):
        a = np.stack(true_return_table(cfg, RIGHT).gaussian_arrays())
        b = np.stack(iterate_bellman(cfg, RIGHT).gaussian_arrays())
        assert np.allclose(a, b, rtol=1e-9, atol=1e-8)


@pytest.mark.parametrize("cfg", [CFG, ChainConfig(A0=50, p0=0.7, sigma0_sq=5, gamma=0.5), ChainConfig(A0=-30, p0=0.95, sigma0_sq=100, gamma=0.9)])
def test_fixed_point(cfg):
    truth = true_return_table(cfg, RIGHT)
    after = exact_bellman_apply(truth, cfg, RIGHT)
    assert max(energy_gg(x, y) for x, y in zip(truth.entries, after.entries)) <= 1e-10


def test_gamma_zero_forgets_input():
    cfg = ChainConfig(gamma=0.0)
    rng = make_rng(0)
    table = ReturnTable.from_gaussian_arrays(rng.normal(size=60), rng.uniform(1, 2, 60))
    out = exact_bellman_apply(table, cfg, RIGHT)
    for p, e in enumerate(out.entries):
        s, a = pair_of(p)
        assert e.mean == cfg.reward_mean(s + a) and e.var == cfg.sigma0_sq


def test_stochastic_target_gives_mixtures():
    table = true_return_table(CFG, RIGHT)
    out = exact_bellman_apply(table, CFG, TabularPolicy.uniform(30))
    assert out.kind == "mixture"
    assert all(abs(sum(e.weights) - 1) < 1e-12 for e in out.entries)


def test_particle_table_rejected():
    table = ReturnTable(30, tuple(ParticleSet(np.array([0.0])) for _ in range(60)))
    with pytest.raises(TypeError):
        exact_bellman_apply(table, CFG, RIGHT)


def test_iterated_from_dirac_matches_truncated_rollout():
    m = 7
    table = ReturnTable.from_gaussian_arrays(np.zeros(60), np.zeros(60))
    for _ in range(m):
        table = exact_bellman_apply(table, CFG, RIGHT)
    returns = rollout_returns(CFG, 3, -1, 50_000, m, seed=9)
    se = returns.std(ddof=1) / math.sqrt(returns.size)
    assert abs(returns.mean() - table[3, -1].mean) < 3 * se


def test_gaussian_arrays_agree_with_generic_apply():
    rng = make_rng(1)
    mean, var = rng.normal(size=60), rng.uniform(0, 3, 60)
    generic = exact_bellman_apply(ReturnTable.from_gaussian_arrays(mean, var), CFG, RIGHT)
    m2, v2 = bellman_gaussian_arrays(mean, var, CFG, RIGHT)
    gm, gv = generic.gaussian_arrays()
    assert np.allclose(gm, m2, atol=1e-12) and np.allclose(gv, v2, atol=1e-12)


def test_w1_contraction_random_tables():
    rng = make_rng(5)
    cfg = ChainConfig(gamma=0.9)
    for _ in range(20):
        a = (rng.normal(0, 20, 60), rng.uniform(0, 50, 60))
        b = (rng.normal(0, 20, 60), rng.uniform(0, 50, 60))
        before = max(w1_gaussian(ScalarGaussian(*x), ScalarGaussian(*y)) for x, y in zip(zip(*a), zip(*b)))
        ta, tb = bellman_gaussian_arrays(*a, cfg, RIGHT), bellman_gaussian_arrays(*b, cfg, RIGHT)
        after = max(w1_gaussian(ScalarGaussian(*x), ScalarGaussian(*y)) for x, y in zip(zip(*ta), zip(*tb)))
        assert after <= cfg.gamma * before + 1e-10


def test_policy_helpers():
    pi = TabularPolicy(np.array([0.0, 0.3, 1.0]))
    assert pi.prob(2, -1) == pytest.approx(0.7)
    assert pi.action_probs(1) == [(-1, 1.0)]
    assert not pi.is_deterministic
    assert np.allclose(pi.pair_probs(), [1, 0, 0.7, 0.3, 0, 1])
    with pytest.raises(ValueError):
        TabularPolicy(np.array([1.2]))
