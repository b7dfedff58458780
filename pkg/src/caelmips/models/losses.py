"""Reward, bias-bound and variance-bound losses with their gradients.

Each loss function returns ``(value, grads)``; grads are w.r.t. the
posterior probabilities and/or the predicted rewards of the batch, which the
trainer chains through the posterior and the network.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import InvalidArgumentError


@dataclass(frozen=True)
class LossBreakdown:
    l_r: float
    l_bias: float
    l_var: float
    total: float
    rho: float
    gamma: float


def loss_reward(r_hat: np.ndarray, rewards: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared reward error and its gradient w.r.t. ``r_hat``."""
    resid = np.asarray(r_hat, dtype=float) - np.asarray(rewards, dtype=float)
    if resid.size == 0:
        raise InvalidArgumentError("empty batch")
    return float(np.mean(resid**2)), 2.0 * resid / resid.size


def pairwise_spread(post: np.ndarray, w: np.ndarray, order: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Per row, s = sum_{i<j} p_i p_j |w_j - w_i| and ds/dp_m = sum_i p_i |w_m - w_i|.

    Sorting each row by weight turns the O(K^2) pair sum into prefix sums.
    """
    if order is None:
        order = np.argsort(w, axis=1, kind="stable")
    ps = np.take_along_axis(post, order, axis=1)
    ws = np.take_along_axis(w, order, axis=1)
    # spread only depends on differences; shifting by the row minimum makes constant rows exactly zero
    ws = ws - ws[:, :1]
    pw = ps * ws
    below_p = np.cumsum(ps, axis=1) - ps
    below_pw = np.cumsum(pw, axis=1) - pw
    total_p = ps.sum(axis=1, keepdims=True)
    total_pw = pw.sum(axis=1, keepdims=True)
    spread = np.sum(ps * (ws * below_p - below_pw), axis=1)
    above_p = total_p - below_p - ps
    above_pw = total_pw - below_pw - pw
    grad_sorted = (ws * below_p - below_pw) + (above_pw - ws * above_p)
    grad = np.empty_like(grad_sorted)
    np.put_along_axis(grad, order, grad_sorted, axis=1)
    return spread, grad


def pairwise_spread_reference(post: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Literal double loop over action pairs; used to cross-check the fast path."""
    out = np.zeros(post.shape[0])
    K = post.shape[1]
    for k in range(post.shape[0]):
        for i in range(K):
            for j in range(i + 1, K):
                out[k] += post[k, i] * post[k, j] * abs(w[k, j] - w[k, i])
    return out


def loss_bias(post: np.ndarray, w: np.ndarray, order: Optional[np.ndarray] = None) -> tuple[float, np.ndarray]:
    """Squared batch mean of the pairwise spread, and its gradient w.r.t. ``post``.

    The absolute value has subgradient 0 at ties.
    """
    spread, grad = pairwise_spread(post, w, order)
    B = post.shape[0]
    mean = spread.sum() / B
    return float(mean * mean), (2.0 * mean / B) * grad


def loss_var(
    r: np.ndarray, post: np.ndarray, w_sq_sum: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """(1/B^2) sum_i r_i^2 * sum_a post_ia^2 * sum_a w_ia^2.

    ``w_sq_sum`` holds sum_a w(x_i, a)^2 per row. Returns the value and the
    gradients w.r.t. ``post`` and ``r``.
    """
    r = np.asarray(r, dtype=float)
    B = r.shape[0]
    collision = np.sum(post * post, axis=1)
    scale = w_sq_sum / (B * B)
    value = float(np.sum(r * r * collision * scale))
    d_post = (2.0 * r * r * scale)[:, None] * post
    d_r = 2.0 * r * collision * scale
    return value, d_post, d_r


def collision_factor(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.sum(p * p, axis=-1)


def collision_entropy(p: np.ndarray) -> float:
    """Renyi entropy of order 2, -log sum_i p_i^2."""
    p = np.asarray(p, dtype=float)
    if p.size == 0 or np.any(p < 0) or p.sum() <= 0:
        raise InvalidArgumentError("collision entropy needs a non-zero probability vector")
    return float(-np.log(np.sum(p * p)))


def loss_total(l_r: float, l_bias: float, l_var: float, rho: float, gamma: float) -> LossBreakdown:
    total = l_r
    if rho:
        total = total + rho * l_bias
    if gamma:
        total = total + gamma * l_var
    return LossBreakdown(l_r=l_r, l_bias=l_bias, l_var=l_var, total=total, rho=rho, gamma=gamma)
