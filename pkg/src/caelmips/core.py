"""Domain types shared by every other module: logged data, policies, seeding."""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Union

import numpy as np

PROB_TOL = 1e-9


class InvalidArgumentError(ValueError):
    """Raised when an argument violates a documented precondition."""


class UnsupportedActionError(ValueError):
    """Raised when an importance weight needs a behavior probability of zero."""


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive a 64-bit child seed from ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def check_distribution(probs: np.ndarray, name: str = "probs") -> np.ndarray:
    """Validate rows of ``probs`` as points on the probability simplex."""
    probs = np.asarray(probs, dtype=float)
    if not np.all(np.isfinite(probs)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    if np.any(probs < 0.0):
        raise InvalidArgumentError(f"{name} contains negative entries")
    sums = probs.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise InvalidArgumentError(f"{name} rows must sum to 1, got {sums}")
    return probs


@dataclass(frozen=True)
class LoggedSample:
    context: np.ndarray
    action: int
    reward: float
    behavior_propensity: float
    embedding: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Logged bandit feedback stored column-wise.

    Parameters
    ----------
    contexts: array of shape (n, d)
    actions: int array of shape (n,), values in [0, num_actions)
    rewards: array of shape (n,)
    propensities: behavior probabilities of the logged actions, shape (n,)
    num_actions: size K of the action set
    embeddings: optional array of shape (n, d_e)
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    num_actions: int
    embeddings: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
        actions = np.asarray(self.actions, dtype=np.int64).reshape(-1)
        rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        propensities = np.asarray(self.propensities, dtype=float).reshape(-1)
        n = actions.shape[0]
        if contexts.shape[0] != n or rewards.shape[0] != n or propensities.shape[0] != n:
            raise InvalidArgumentError("contexts, actions, rewards and propensities must have equal length")
        if self.num_actions < 1:
            raise InvalidArgumentError("num_actions must be >= 1")
        if n and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise InvalidArgumentError(f"actions must lie in [0, {self.num_actions})")
        if not np.all(np.isfinite(contexts)) or not np.all(np.isfinite(rewards)):
            raise InvalidArgumentError("contexts and rewards must be finite")
        if np.any(propensities <= 0.0) or np.any(propensities > 1.0 + PROB_TOL):
            raise UnsupportedActionError("behavior propensities must lie in (0, 1]")
        arrays = {"contexts": contexts, "actions": actions, "rewards": rewards, "propensities": propensities}
        if self.embeddings is not None:
            emb = np.atleast_2d(np.asarray(self.embeddings, dtype=float))
            if emb.shape[0] != n:
                raise InvalidArgumentError("embeddings must have one row per sample")
            arrays["embeddings"] = emb
        for key, arr in arrays.items():
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, key, arr)

    @classmethod
    def from_samples(cls, samples: Sequence[LoggedSample], num_actions: int) -> "Dataset":
        if not samples:
            raise InvalidArgumentError("cannot build a Dataset from zero samples")
        embeddings = None
        if all(s.embedding is not None for s in samples):
            embeddings = np.stack([np.asarray(s.embedding, dtype=float) for s in samples])
        return cls(
            contexts=np.stack([np.asarray(s.context, dtype=float) for s in samples]),
            actions=np.array([s.action for s in samples]),
            rewards=np.array([s.reward for s in samples]),
            propensities=np.array([s.behavior_propensity for s in samples]),
            num_actions=num_actions,
            embeddings=embeddings,
        )

    @property
    def n(self) -> int:
        return int(self.actions.shape[0])

    @property
    def context_dim(self) -> int:
        return int(self.contexts.shape[1])

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> LoggedSample:
        return LoggedSample(
            context=self.contexts[i],
            action=int(self.actions[i]),
            reward=float(self.rewards[i]),
            behavior_propensity=float(self.propensities[i]),
            embedding=None if self.embeddings is None else self.embeddings[i],
        )

    def __iter__(self) -> Iterator[LoggedSample]:
        return (self[i] for i in range(self.n))

    @property
    def samples(self) -> list[LoggedSample]:
        return list(self)

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            contexts=self.contexts[index],
            actions=self.actions[index],
            rewards=self.rewards[index],
            propensities=self.propensities[index],
            num_actions=self.num_actions,
            embeddings=None if self.embeddings is None else self.embeddings[index],
        )

    def equals(self, other: "Dataset") -> bool:
        """Exact (bitwise) equality of every stored column."""
        same = (
            self.num_actions == other.num_actions
            and np.array_equal(self.contexts, other.contexts)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.propensities, other.propensities)
        )
        if self.embeddings is None or other.embeddings is None:
            return same and self.embeddings is None and other.embeddings is None
        return same and np.array_equal(self.embeddings, other.embeddings)


class Policy(ABC):
    """Conditional distribution over ``num_actions`` actions given a context."""

    num_actions: int

    @abstractmethod
    def action_dist(self, contexts: np.ndarray) -> np.ndarray:
        """Return action probabilities of shape (n, K) for contexts of shape (n, d)."""

    def probs(self, context: np.ndarray) -> np.ndarray:
        return self.action_dist(np.atleast_2d(np.asarray(context, dtype=float)))[0]


class UniformPolicy(Policy):
    def __init__(self, num_actions: int) -> None:
        if num_actions < 1:
            raise InvalidArgumentError(f"num_actions must be >= 1, got {num_actions}")
        self.num_actions = int(num_actions)

    def action_dist(self, contexts: np.ndarray) -> np.ndarray:
        n = np.atleast_2d(contexts).shape[0]
        return np.full((n, self.num_actions), 1.0 / self.num_actions)


class EpsilonGreedyPolicy(Policy):
    """Greedy w.r.t. ``q`` with probability 1 - epsilon, uniform otherwise.

    ``q`` maps contexts of shape (n, d) to mean rewards of shape (n, K).
    Ties in the argmax go to the lowest action index.
    """

    def __init__(self, q: Callable[[np.ndarray], np.ndarray], epsilon: float, num_actions: int) -> None:
        if not 0.0 <= epsilon <= 1.0:
            raise InvalidArgumentError(f"epsilon must be in [0, 1], got {epsilon}")
        if num_actions < 1:
            raise InvalidArgumentError(f"num_actions must be >= 1, got {num_actions}")
        self.q = q
        self.epsilon = float(epsilon)
        self.num_actions = int(num_actions)

    def action_dist(self, contexts: np.ndarray) -> np.ndarray:
        values = np.atleast_2d(self.q(np.atleast_2d(contexts)))
        if values.shape[1] != self.num_actions:
            raise InvalidArgumentError("q must return one value per action")
        greedy = np.argmax(values, axis=1)  # first maximum wins
        dist = np.full(values.shape, self.epsilon / self.num_actions)
        dist[np.arange(values.shape[0]), greedy] += 1.0 - self.epsilon
        return dist


class TabularPolicy(Policy):
    """Policy over a finite context set; ``context[0]`` holds the context index."""

    def __init__(self, table: np.ndarray) -> None:
        self.table = check_distribution(np.atleast_2d(table), "policy table")
        self.num_actions = int(self.table.shape[1])

    def action_dist(self, contexts: np.ndarray) -> np.ndarray:
        idx = np.atleast_2d(contexts)[:, 0].astype(np.int64)
        return self.table[idx]


def uniform_policy(num_actions: int) -> UniformPolicy:
    return UniformPolicy(num_actions)


def epsilon_greedy_policy(q: Callable[[np.ndarray], np.ndarray], epsilon: float, num_actions: int) -> EpsilonGreedyPolicy:
    return EpsilonGreedyPolicy(q, epsilon, num_actions)


PolicyLike = Union[Policy, np.ndarray]


def resolve_action_dist(policy: PolicyLike, contexts: np.ndarray) -> np.ndarray:
    """Action probabilities for every context.

    ``policy`` is either a :class:`Policy` or a precomputed (n, K) array, the
    latter being how per-row target probabilities of real logs are supplied.
    """
    contexts = np.atleast_2d(contexts)
    if isinstance(policy, Policy):
        return policy.action_dist(contexts)
    dist = np.atleast_2d(np.asarray(policy, dtype=float))
    if dist.shape[0] != contexts.shape[0]:
        raise InvalidArgumentError(
            f"action distribution has {dist.shape[0]} rows for {contexts.shape[0]} contexts"
        )
    return dist


def ips_weight(pi: Policy, mu: Policy, x: np.ndarray, a: int) -> float:
    """Importance weight pi(a|x) / mu(a|x)."""
    behavior = float(mu.probs(x)[a])
    if behavior <= 0.0:
        raise UnsupportedActionError(f"action {a} has zero behavior probability")
    return float(pi.probs(x)[a]) / behavior


def importance_weights(pi_dist: np.ndarray, mu_dist: np.ndarray) -> np.ndarray:
    """Elementwise pi/mu over all actions; entries with mu = 0 and pi = 0 are 0.

    Raises if some action has target mass but zero behavior mass.
    """
    pi_dist = np.asarray(pi_dist, dtype=float)
    mu_dist = np.asarray(mu_dist, dtype=float)
    unsupported = (mu_dist <= 0.0) & (pi_dist > 0.0)
    if np.any(unsupported):
        raise UnsupportedActionError("target policy puts mass on actions the behavior policy never takes")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(mu_dist > 0.0, pi_dist / np.where(mu_dist > 0.0, mu_dist, 1.0), 0.0)
    return w
