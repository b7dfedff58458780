"""Off-policy evaluation with learned context-action embeddings for marginalized IPS."""
from .core import (
    Dataset,
    EpsilonGreedyPolicy,
    InvalidArgumentError,
    LoggedSample,
    Policy,
    TabularPolicy,
    UniformPolicy,
    UnsupportedActionError,
    derive_seed,
    epsilon_greedy_policy,
    uniform_policy,
)
from .estimators import (
    EstimateReport,
    MarginalWeightTable,
    dm_estimate,
    ips_estimate,
    marginal_weights,
    mips_estimate,
)
from .synthetic import SyntheticEnv, generate_dataset, true_value

__version__ = "0.1.0"
