"""Multinomial softmax posterior over actions given (context, embedding)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from ..core import InvalidArgumentError


@dataclass(frozen=True)
class PosteriorConfig:
    l2: float = 1e-3
    lr: float = 0.5
    epochs: int = 1
    batch_size: int = 256
    solver: str = "gd"  # "gd" (minibatch gradient descent) or "lbfgs"
    max_iter: int = 500


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


@dataclass
class PosteriorModel:
    """p(a | x, e) = softmax(((concat(x, e) - mean) / scale) @ weights + intercept).

    ``mean`` and ``scale`` standardize the features and are part of the model.
    """

    weights: np.ndarray  # (F, K)
    intercept: np.ndarray  # (K,)
    mean: np.ndarray  # (F,)
    scale: np.ndarray  # (F,)
    context_dim: int

    @property
    def num_actions(self) -> int:
        return int(self.intercept.shape[0])

    def _features(self, contexts: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
        feats = np.hstack([np.atleast_2d(contexts), np.atleast_2d(embeddings)])
        if feats.shape[1] != self.weights.shape[0]:
            raise InvalidArgumentError(f"expected {self.weights.shape[0]} features, got {feats.shape[1]}")
        return (feats - self.mean) / self.scale

    def predict_proba(self, contexts: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
        return softmax(self._features(contexts, embeddings) @ self.weights + self.intercept)

    def embedding_grad(self, probs: np.ndarray, d_probs: np.ndarray) -> np.ndarray:
        """Backpropagate dL/d(probs) to dL/d(embeddings) with the parameters held fixed."""
        d_logits = probs * (d_probs - np.sum(probs * d_probs, axis=1, keepdims=True))
        d_feats = d_logits @ self.weights.T
        return d_feats[:, self.context_dim :] / self.scale[self.context_dim :]

    def restandardize(self, mean: np.ndarray, scale: np.ndarray) -> "PosteriorModel":
        """Same conditional distribution expressed under new feature statistics."""
        weights = self.weights * (scale / self.scale)[:, None]
        intercept = self.intercept + ((mean - self.mean) / self.scale) @ self.weights
        return PosteriorModel(weights, intercept, mean.copy(), scale.copy(), self.context_dim)


def _feature_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    return mean, np.where(scale > 1e-8, scale, 1.0)


def _objective(theta: np.ndarray, z: np.ndarray, labels: np.ndarray, K: int, l2: float):
    F = z.shape[1]
    W = theta[: F * K].reshape(F, K)
    b = theta[F * K :]
    logits = z @ W + b
    logits -= logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(logits).sum(axis=1))
    n = z.shape[0]
    nll = np.mean(logsum - logits[np.arange(n), labels])
    probs = np.exp(logits - logsum[:, None])
    probs[np.arange(n), labels] -= 1.0
    probs /= n
    gW = z.T @ probs + l2 * W
    gb = probs.sum(axis=0)
    return nll + 0.5 * l2 * np.sum(W * W), np.concatenate([gW.ravel(), gb])


def fit_posterior(
    contexts: np.ndarray,
    embeddings: np.ndarray,
    labels: np.ndarray,
    num_actions: int,
    config: PosteriorConfig = PosteriorConfig(),
    init: Optional[PosteriorModel] = None,
    rng: Optional[np.random.Generator] = None,
) -> PosteriorModel:
    """Fit softmax regression on concat(x, e) by L2-penalized cross-entropy.

    With ``init`` the fit is warm-started from those parameters after
    re-expressing them in the standardization of the new batch.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=float))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = labels.shape[0]
    if n == 0:
        raise InvalidArgumentError("cannot fit a posterior on an empty batch")
    if labels.min() < 0 or labels.max() >= num_actions:
        raise InvalidArgumentError(f"labels must lie in [0, {num_actions})")
    feats = np.hstack([contexts, embeddings])
    F = feats.shape[1]
    mean, scale = _feature_stats(feats)
    if init is None:
        model = PosteriorModel(np.zeros((F, num_actions)), np.zeros(num_actions), mean, scale, contexts.shape[1])
    else:
        model = init.restandardize(mean, scale)
    z = (feats - mean) / scale
    theta = np.concatenate([model.weights.ravel(), model.intercept])

    if config.solver == "lbfgs":
        res = minimize(
            _objective,
            theta,
            args=(z, labels, num_actions, config.l2),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": config.max_iter, "gtol": 1e-8},
        )
        theta = res.x
    elif config.solver == "gd":
        rng = np.random.default_rng(0) if rng is None else rng
        bs = min(config.batch_size, n)
        for _ in range(config.epochs):
            order = rng.permutation(n) if bs < n else np.arange(n)
            for start in range(0, n, bs):
                idx = order[start : start + bs]
                _, g = _objective(theta, z[idx], labels[idx], num_actions, config.l2)
                theta -= config.lr * g
    else:
        raise InvalidArgumentError(f"unknown solver {config.solver!r}")
    return PosteriorModel(
        theta[: F * num_actions].reshape(F, num_actions).copy(),
        theta[F * num_actions :].copy(),
        mean,
        scale,
        contexts.shape[1],
    )
