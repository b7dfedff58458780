"""Synthetic bandit environment with a Gaussian-bump reward surface.

Contexts are uniform on [0, 1]^d. Action ``a`` carries a representation whose
first coordinate is (a + 1) / K; the mean reward is 10 * exp(-(x_0 - a_0)^2),
so only that coordinate matters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    Dataset,
    EpsilonGreedyPolicy,
    InvalidArgumentError,
    Policy,
    derive_seed,
    epsilon_greedy_policy,
    make_rng,
)

REWARD_SCALE = 10.0
_SHARD_SIZE = 50_000


@dataclass(frozen=True, eq=False)
class SyntheticEnv:
    context_dim: int = 5
    num_actions: int = 500
    reward_std: float = 1.0
    seed: int = 0
    action_reps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.context_dim < 1 or self.num_actions < 1:
            raise InvalidArgumentError("context_dim and num_actions must be >= 1")
        if self.reward_std < 0:
            raise InvalidArgumentError("reward_std must be >= 0")
        rng = make_rng(derive_seed(self.seed, 0xAC7))
        reps = rng.uniform(0.0, 1.0, size=(self.num_actions, self.context_dim))
        reps[:, 0] = (np.arange(self.num_actions) + 1) / self.num_actions
        reps.flags.writeable = False
        object.__setattr__(self, "action_reps", reps)

    def q(self, contexts: np.ndarray) -> np.ndarray:
        """Mean rewards of every action, shape (n, K)."""
        x0 = np.atleast_2d(contexts)[:, :1]
        return REWARD_SCALE * np.exp(-((x0 - self.action_reps[None, :, 0]) ** 2))

    def target_policy(self, epsilon: float) -> EpsilonGreedyPolicy:
        return epsilon_greedy_policy(self.q, epsilon, self.num_actions)


@dataclass(frozen=True)
class GroundTruth:
    value: float
    mc_samples: int
    std_error: float


def expected_reward(env: SyntheticEnv, x: np.ndarray, a: int) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != env.context_dim:
        raise InvalidArgumentError(f"context must have length {env.context_dim}")
    return float(REWARD_SCALE * np.exp(-((x[0] - env.action_reps[a, 0]) ** 2)))


def generate_dataset(env: SyntheticEnv, mu: Policy, n: int, seed: int) -> Dataset:
    """Draw ``n`` iid (x, a, r) triples with a ~ mu(.|x) and r ~ N(q(x, a), sigma^2)."""
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if mu.num_actions != env.num_actions:
        raise InvalidArgumentError("behavior policy and environment disagree on K")
    rng = make_rng(seed)
    contexts = rng.uniform(0.0, 1.0, size=(n, env.context_dim))
    dist = mu.action_dist(contexts)
    # inverse-CDF sampling keeps one uniform per row regardless of K
    u = rng.uniform(size=(n, 1))
    actions = np.minimum((dist.cumsum(axis=1) < u).sum(axis=1), env.num_actions - 1)
    q = env.q(contexts)[np.arange(n), actions]
    noise = rng.standard_normal(n)
    rewards = q + env.reward_std * noise if env.reward_std > 0 else q
    return Dataset(
        contexts=contexts,
        actions=actions,
        rewards=rewards,
        propensities=dist[np.arange(n), actions],
        num_actions=env.num_actions,
    )


def true_value(env: SyntheticEnv, pi: Policy, mc_contexts: int = 1_000_000, seed: int = 0) -> GroundTruth:
    """Monte Carlo over contexts, exact sum over actions.

    Contexts are drawn in fixed-size shards with seeds derived from
    ``(seed, shard_index)``, so the result does not depend on how shards are
    scheduled.
    """
    if mc_contexts < 1:
        raise InvalidArgumentError("mc_contexts must be >= 1")
    total = 0.0
    total_sq = 0.0
    for shard, start in enumerate(range(0, mc_contexts, _SHARD_SIZE)):
        m = min(_SHARD_SIZE, mc_contexts - start)
        rng = make_rng(derive_seed(seed, shard))
        contexts = rng.uniform(0.0, 1.0, size=(m, env.context_dim))
        per_context = np.einsum("ij,ij->i", pi.action_dist(contexts), env.q(contexts))
        total += per_context.sum()
        total_sq += np.square(per_context).sum()
    mean = total / mc_contexts
    var = max(total_sq / mc_contexts - mean**2, 0.0)
    return GroundTruth(value=float(mean), mc_samples=int(mc_contexts), std_error=float(np.sqrt(var / mc_contexts)))
