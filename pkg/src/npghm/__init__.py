"""Natural policy gradient with Hessian-aided momentum variance reduction.

Sample-based NPG for softmax-tabular and truncated linear-Gaussian policies,
with momentum baselines, exact small-MDP oracles, and a training harness.
"""
from .algorithms import (
    ALGORITHMS,
    IterateRecord,
    NanAbortError,
    RunConfig,
    RunResult,
    alpha_schedule,
    auto_horizon,
    beta_schedule,
    run_harpg,
    run_mnpg,
    run_npg_hm,
    run_vanilla_pg,
)
from .envs import (
    PointMassEnv,
    TabularMdp,
    Trajectory,
    bandit,
    chain,
    discounted_return,
    dump_mdp_text,
    load_mdp_text,
    pointmass,
    random_mdp,
    sample_state_action,
    sample_trajectory,
)
from .estimators import (
    ImportanceWeightWarning,
    MomentumState,
    PolicySupportError,
    baseline_grad,
    hessian_vector_product,
    importance_weight,
    momentum_update_hessian,
    momentum_update_is,
    reward_to_go,
    truncated_grad,
)
from .natural_gradient import (
    SubproblemConfig,
    averaged_sgd_error_bound,
    exact_npg_direction,
    npg_sgd,
    recommended_subproblem_iters,
)
from .oracles import (
    ConstantsBundle,
    compute_constants,
    epsilon_bias,
    exact_fim,
    exact_policy_gradient,
    exact_quantities,
    exact_return,
    exact_value,
    min_norm_compatible_w,
    optimal_return,
    theoretical_alpha0,
)
from .policies import (
    PointMassFeatures,
    TabularSoftmaxPolicy,
    TruncatedLinearGaussianPolicy,
    load_policy,
    measured_bounds,
    save_policy,
)
from .seeding import STREAMS, substream, substreams

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "ConstantsBundle",
    "ImportanceWeightWarning",
    "IterateRecord",
    "MomentumState",
    "NanAbortError",
    "PointMassEnv",
    "PointMassFeatures",
    "PolicySupportError",
    "RunConfig",
    "RunResult",
    "STREAMS",
    "SubproblemConfig",
    "TabularMdp",
    "TabularSoftmaxPolicy",
    "Trajectory",
    "TruncatedLinearGaussianPolicy",
    "alpha_schedule",
    "auto_horizon",
    "averaged_sgd_error_bound",
    "bandit",
    "baseline_grad",
    "beta_schedule",
    "chain",
    "compute_constants",
    "discounted_return",
    "dump_mdp_text",
    "epsilon_bias",
    "exact_fim",
    "exact_npg_direction",
    "exact_policy_gradient",
    "exact_quantities",
    "exact_return",
    "exact_value",
    "hessian_vector_product",
    "importance_weight",
    "load_mdp_text",
    "load_policy",
    "measured_bounds",
    "min_norm_compatible_w",
    "momentum_update_hessian",
    "momentum_update_is",
    "npg_sgd",
    "optimal_return",
    "pointmass",
    "random_mdp",
    "recommended_subproblem_iters",
    "reward_to_go",
    "run_harpg",
    "run_mnpg",
    "run_npg_hm",
    "run_vanilla_pg",
    "sample_state_action",
    "sample_trajectory",
    "save_policy",
    "substream",
    "substreams",
    "theoretical_alpha0",
    "truncated_grad",
]
