"""Alternating optimisation of the embedding network and the posterior model."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np

from ..core import Dataset, InvalidArgumentError, PolicyLike, derive_seed, make_rng
from ..estimators import EstimateReport, marginal_weights, mips_estimate, weight_matrix
from .losses import LossBreakdown, loss_bias, loss_reward, loss_total, loss_var
from .net import EmbeddingNet, predict_reward_from_embeddings
from .posterior import PosteriorConfig, PosteriorModel, fit_posterior

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; usually the learning rate is too high."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-2
    iterations: int = 500
    rho: float = 10.0
    gamma: float = 0.1
    seed: int = 0
    posterior_refit_epochs: int = 1
    posterior_lr: float = 0.5
    posterior_l2: float = 1e-3
    # "gd": a few warm-started epochs per batch; "lbfgs": fit each batch close to convergence
    posterior_solver: str = "gd"
    posterior_max_iter: int = 50
    hidden: int = 128
    dropout: float = 0.2
    # population variance bound uses logged R^2; the empirical objective uses predicted R-hat^2
    use_logged_reward_in_var: bool = False
    # False treats the posterior output as a constant during the network step
    grad_through_posterior: bool = True
    log_every: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.learning_rate <= 0 or self.iterations < 0:
            raise InvalidArgumentError("batch_size and learning_rate must be positive, iterations >= 0")
        if self.rho < 0 or self.gamma < 0:
            raise InvalidArgumentError("rho and gamma must be non-negative")
        if self.posterior_refit_epochs < 0 or self.posterior_l2 < 0:
            raise InvalidArgumentError("posterior settings must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainResult(NamedTuple):
    net: EmbeddingNet
    posterior: PosteriorModel
    history: list


def embedding_objective(
    emb: np.ndarray,
    contexts: np.ndarray,
    rewards: np.ndarray,
    posterior: Optional[PosteriorModel],
    w: np.ndarray,
    w_sq_sum: np.ndarray,
    rho: float,
    gamma: float,
    order: Optional[np.ndarray] = None,
    use_logged_reward: bool = False,
    grad_through_posterior: bool = True,
) -> tuple[LossBreakdown, np.ndarray]:
    """Combined loss of a batch and its gradient w.r.t. the embeddings.

    The posterior parameters are held fixed but gradients flow through its
    dependence on the embedding input.
    """
    r_hat = predict_reward_from_embeddings(emb, contexts)
    l_r, d_rhat = loss_reward(r_hat, rewards)
    l_b = l_v = 0.0
    if rho or gamma:
        if posterior is None:
            raise InvalidArgumentError("bias and variance terms need a posterior")
        post = posterior.predict_proba(contexts, emb)
        d_post = np.zeros_like(post)
        if rho:
            l_b, g = loss_bias(post, w, order)
            d_post += rho * g
        if gamma:
            r_used = rewards if use_logged_reward else r_hat
            l_v, g_post, g_r = loss_var(r_used, post, w_sq_sum)
            d_post += gamma * g_post
            if not use_logged_reward:
                d_rhat = d_rhat + gamma * g_r
        d_emb = d_rhat[:, None] * contexts
        if grad_through_posterior:
            d_emb = d_emb + posterior.embedding_grad(post, d_post)
    else:
        d_emb = d_rhat[:, None] * contexts
    return loss_total(l_r, l_b, l_v, rho, gamma), d_emb


def network_loss_and_grad(
    net: EmbeddingNet,
    posterior: Optional[PosteriorModel],
    contexts: np.ndarray,
    actions: np.ndarray,
    rewards: np.ndarray,
    w: np.ndarray,
    rho: float,
    gamma: float,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    dropout: Optional[bool] = None,
    use_logged_reward: bool = False,
) -> tuple[LossBreakdown, dict]:
    """Loss and parameter gradients for one batch.

    With ``train=False`` (running batchnorm statistics) and no dropout the
    loss is a deterministic function of the parameters.
    """
    emb, cache = net.forward(contexts, actions, train=train, rng=rng, dropout=dropout, update_stats=False)
    breakdown, d_emb = embedding_objective(
        emb, contexts, rewards, posterior, w, np.sum(w * w, axis=1), rho, gamma, use_logged_reward=use_logged_reward
    )
    return breakdown, net.backward(d_emb, cache)


def train_embeddings(
    data: Dataset,
    pi: PolicyLike,
    mu: Optional[PolicyLike],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Learn context-action embeddings, then fit the final posterior on all of them.

    Each iteration samples a minibatch, embeds it, warm-starts the posterior
    on the batch, evaluates the combined loss and takes one gradient step on
    the network. ``mu=None`` treats the log as uniformly random.
    """
    if data.n == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    w, _ = weight_matrix(data, pi, mu)
    if np.any(~np.isfinite(w)):
        raise InvalidArgumentError("target policy is not supported by the behavior policy")
    w_sq_sum = np.sum(w * w, axis=1)
    order = np.argsort(w, axis=1, kind="stable")
    rng = make_rng(config.seed)
    net = EmbeddingNet.init(
        data.context_dim,
        data.num_actions,
        hidden=config.hidden,
        dropout=config.dropout,
        rng=make_rng(derive_seed(config.seed, 1)),
    )
    post_cfg = PosteriorConfig(
        l2=config.posterior_l2,
        lr=config.posterior_lr,
        epochs=config.posterior_refit_epochs,
        batch_size=config.batch_size,
        solver=config.posterior_solver,
        max_iter=config.posterior_max_iter,
    )
    needs_posterior = bool(config.rho or config.gamma)
    posterior: Optional[PosteriorModel] = None
    B = min(config.batch_size, data.n)
    history: list[LossBreakdown] = []
    X, A, R = data.contexts, data.actions, data.rewards
    for it in range(config.iterations):
        idx = rng.choice(data.n, size=B, replace=False) if B < data.n else rng.permutation(data.n)
        x_b, a_b, r_b = X[idx], A[idx], R[idx]
        emb, cache = net.forward(x_b, a_b, train=True, rng=rng)
        if needs_posterior:
            posterior = fit_posterior(x_b, emb, a_b, data.num_actions, post_cfg, init=posterior, rng=rng)
        breakdown, d_emb = embedding_objective(
            emb,
            x_b,
            r_b,
            posterior,
            w[idx],
            w_sq_sum[idx],
            config.rho,
            config.gamma,
            order=order[idx],
            use_logged_reward=config.use_logged_reward_in_var,
            grad_through_posterior=config.grad_through_posterior,
        )
        if not np.isfinite(breakdown.total):
            raise TrainingDivergedError(
                f"non-finite loss at iteration {it} (l_r={breakdown.l_r}, l_bias={breakdown.l_bias}, "
                f"l_var={breakdown.l_var}); learning rate {config.learning_rate} is likely too high"
            )
        grads = net.backward(d_emb, cache)
        for k, g in grads.items():
            net.params[k] -= config.learning_rate * g
        if config.log_every and it % config.log_every == 0:
            history.append(breakdown)
            logger.debug("iter %d loss %.4f (r %.4f bias %.4f var %.4f)", it, breakdown.total, breakdown.l_r, breakdown.l_bias, breakdown.l_var)
    for k, v in net.params.items():
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError(f"parameter {k} became non-finite; lower the learning rate")
    final_emb = net.embed(X, A)
    final_cfg = PosteriorConfig(l2=config.posterior_l2, solver="lbfgs")
    posterior = fit_posterior(X, final_emb, A, data.num_actions, final_cfg, init=posterior)
    return TrainResult(net=net, posterior=posterior, history=history)


def cael_mips_estimate(
    data: Dataset,
    pi: PolicyLike,
    mu: Optional[PolicyLike],
    net: EmbeddingNet,
    posterior: PosteriorModel,
    name: str = "cael-mips",
) -> EstimateReport:
    """MIPS with learned embeddings f(X_i, A_i) and the fitted posterior."""
    emb = net.embed(data.contexts, data.actions)
    table = marginal_weights(data, pi, posterior, emb, mu)
    return mips_estimate(data, table, name=name)
