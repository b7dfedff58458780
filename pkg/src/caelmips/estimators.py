"""Point estimators (IPS, DM, MIPS) and closed-form IPS diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Protocol

import numpy as np

from .core import (
    Dataset,
    InvalidArgumentError,
    Policy,
    PolicyLike,
    UnsupportedActionError,
    resolve_action_dist,
)

if TYPE_CHECKING:
    from .oracle import DiscreteInstance


class PosteriorLike(Protocol):
    def predict_proba(self, contexts: np.ndarray, embeddings: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class EstimateReport:
    value: float
    estimator_name: str
    n: int
    behavior_source: str = "logged"


@dataclass(frozen=True, eq=False)
class MarginalWeightTable:
    """Per-sample marginal weights sum_a posterior(a|x_i, e_i) * w(x_i, a)."""

    weights: np.ndarray
    behavior_source: str = "policy"

    def __len__(self) -> int:
        return int(self.weights.shape[0])


def ips_estimate(data: Dataset, pi: PolicyLike) -> EstimateReport:
    """Vanilla IPS: mean of pi(A_i|X_i) / propensity_i * R_i, no clipping."""
    if data.n == 0:
        raise InvalidArgumentError("cannot estimate from an empty dataset")
    if np.any(data.propensities <= 0.0):
        raise UnsupportedActionError("logged propensity of zero")
    pi_dist = resolve_action_dist(pi, data.contexts)
    w = pi_dist[np.arange(data.n), data.actions] / data.propensities
    return EstimateReport(value=float(np.mean(w * data.rewards)), estimator_name="ips", n=data.n)


def dm_estimate(
    contexts: np.ndarray,
    pi: PolicyLike,
    q_hat: Callable[[np.ndarray], np.ndarray],
    num_actions: int,
) -> EstimateReport:
    """Direct method: (1/n) sum_i sum_a pi(a|x_i) q_hat(x_i, a).

    ``q_hat`` maps a (n, d) context batch to predicted rewards of shape (n, K).
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    pi_dist = resolve_action_dist(pi, contexts)
    pred = np.asarray(q_hat(contexts), dtype=float)
    if pred.shape != (contexts.shape[0], num_actions) or pi_dist.shape != pred.shape:
        raise InvalidArgumentError(f"q_hat must return shape ({contexts.shape[0]}, {num_actions})")
    value = float(np.mean(np.einsum("ij,ij->i", pi_dist, pred)))
    return EstimateReport(value=value, estimator_name="dm", n=contexts.shape[0])


def behavior_matrix(data: Dataset, mu: Optional[PolicyLike]) -> tuple[np.ndarray, str]:
    """Behavior probabilities of all actions with logged propensities on the logged ones.

    ``mu=None`` means the log came from a uniformly random policy and only
    the logged propensities are known.
    """
    if mu is None:
        dist = np.full((data.n, data.num_actions), 1.0 / data.num_actions)
        source = "assumed-uniform"
    else:
        dist = np.array(resolve_action_dist(mu, data.contexts), dtype=float)
        source = "policy"
    dist[np.arange(data.n), data.actions] = data.propensities
    return dist, source


def weight_matrix(data: Dataset, pi: PolicyLike, mu: Optional[PolicyLike]) -> tuple[np.ndarray, str]:
    """IPS weights w(x_i, a) for every sample and action, shape (n, K)."""
    pi_dist = resolve_action_dist(pi, data.contexts)
    mu_dist, source = behavior_matrix(data, mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(mu_dist > 0.0, pi_dist / np.where(mu_dist > 0.0, mu_dist, 1.0), 0.0)
    if np.any((mu_dist <= 0.0) & (pi_dist > 0.0)):
        w = np.where((mu_dist <= 0.0) & (pi_dist > 0.0), np.inf, w)
    return w, source


def marginal_weights(
    data: Dataset,
    pi: PolicyLike,
    posterior: PosteriorLike,
    embeddings: np.ndarray,
    mu: Optional[PolicyLike] = None,
) -> MarginalWeightTable:
    """Marginal importance weight of each sample under the given posterior."""
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=float))
    if embeddings.shape[0] != data.n:
        raise InvalidArgumentError(f"got {embeddings.shape[0]} embeddings for {data.n} samples")
    post = np.asarray(posterior.predict_proba(data.contexts, embeddings), dtype=float)
    if post.shape != (data.n, data.num_actions):
        raise InvalidArgumentError(f"posterior must return shape ({data.n}, {data.num_actions})")
    w, source = weight_matrix(data, pi, mu)
    bad = np.isinf(w) & (post > 0.0)
    if np.any(bad):
        raise UnsupportedActionError("posterior puts mass on an action with zero behavior probability")
    w = np.where(np.isinf(w), 0.0, w)
    return MarginalWeightTable(weights=np.einsum("ij,ij->i", post, w), behavior_source=source)


def mips_estimate(data: Dataset, weights: MarginalWeightTable, name: str = "mips") -> EstimateReport:
    if len(weights) != data.n:
        raise InvalidArgumentError(f"weight table has {len(weights)} entries for {data.n} samples")
    if data.n == 0:
        raise InvalidArgumentError("cannot estimate from an empty dataset")
    return EstimateReport(
        value=float(np.mean(weights.weights * data.rewards)),
        estimator_name=name,
        n=data.n,
        behavior_source=weights.behavior_source,
    )


def _instance_tables(inst: "DiscreteInstance", pi, mu) -> tuple[np.ndarray, np.ndarray]:
    from .oracle import DiscreteInstance, policy_table

    if not isinstance(inst, DiscreteInstance):
        raise InvalidArgumentError("closed-form IPS diagnostics need an enumerable DiscreteInstance")
    return policy_table(pi, inst), policy_table(mu, inst)


def ips_variance_terms(inst: "DiscreteInstance", pi, mu, n: int = 1) -> tuple[float, float, float]:
    """The three summands of Var[IPS] for a dataset of size ``n``.

    Returns (E[w^2 Var[R|X,A]] / n, Var_X[E_mu[w q]] / n, E_X[Var_mu[w q]] / n).
    """
    pi_t, mu_t = _instance_tables(inst, pi, mu)
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    w = np.where(mu_t > 0, pi_t / np.where(mu_t > 0, mu_t, 1.0), 0.0)
    q = inst.q_xa()
    var_r = inst.second_moment_xa() - q**2
    px = inst.p_x
    noise = np.sum(px * np.sum(mu_t * w**2 * var_r, axis=1))
    cond_mean = np.sum(mu_t * w * q, axis=1)
    cond_var = np.sum(mu_t * (w * q) ** 2, axis=1) - cond_mean**2
    between = np.sum(px * cond_mean**2) - np.sum(px * cond_mean) ** 2
    within = np.sum(px * cond_var)
    return float(noise / n), float(between / n), float(within / n)


def ips_bias_unsupported(inst: "DiscreteInstance", pi, mu) -> float:
    """E_X[sum over actions with mu(a|X) = 0 of pi(a|X) q(X, a)]."""
    pi_t, mu_t = _instance_tables(inst, pi, mu)
    mask = mu_t <= 0.0
    return float(np.sum(inst.p_x * np.sum(np.where(mask, pi_t * inst.q_xa(), 0.0), axis=1)))
