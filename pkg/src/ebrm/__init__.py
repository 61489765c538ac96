"""Energy-distance Bellman residual estimation of return distributions on a chain MDP."""

from .baselines import PartitionRule, QuantileTable, fle_fit, qrtd_fit
from .chain import (
    ChainConfig,
    OfflineDataset,
    ReturnTable,
    TabularPolicy,
    exact_bellman_apply,
    generate_bivariate_dataset,
    generate_dataset,
    true_return_table,
)
from .distances import (
    BivariateGaussian,
    GaussianMixture,
    ParticleSet,
    ScalarGaussian,
    energy,
    energy_mc,
    mean_abs_normal,
    w1_empirical,
)
from .empirical import EmpiricalMDP, fit, sample_trajectories
from .estimators import (
    EstimationResult,
    LepskiResult,
    ebrm_multi_bootstrap,
    ebrm_multi_split,
    ebrm_single,
    lepski_select,
    objective_deterministic,
)
from .metrics import best_approx, bound_B1, expected_energy, expected_w1, marginal_w1
from .models import BivariateCorr, ChainRealizable, LinearMisspec
from .optimize import OptimizerConfig, nelder_mead
from .rng import derive_seed, make_rng

__version__ = "0.1.0"
