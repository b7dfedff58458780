"""Three-layer embedding network f(x, a) with hand-written backpropagation.

Layout: [x, onehot(a)] -> Linear(H) -> BatchNorm -> ReLU -> Dropout
-> Linear(H) -> BatchNorm -> ReLU -> Dropout -> Linear(d_e).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import InvalidArgumentError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1

PARAM_NAMES = ("W1", "b1", "g1", "c1", "W2", "b2", "g2", "c2", "W3", "b3")


@dataclass
class EmbeddingNet:
    context_dim: int
    num_actions: int
    embed_dim: int
    hidden: int = 128
    dropout: float = 0.2
    params: dict = field(default_factory=dict, repr=False)
    running: dict = field(default_factory=dict, repr=False)

    @classmethod
    def init(
        cls,
        context_dim: int,
        num_actions: int,
        embed_dim: Optional[int] = None,
        hidden: int = 128,
        dropout: float = 0.2,
        rng: Optional[np.random.Generator] = None,
    ) -> "EmbeddingNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, unit BN scale, zero BN shift."""
        rng = np.random.default_rng(0) if rng is None else rng
        embed_dim = context_dim if embed_dim is None else embed_dim
        fan1 = context_dim + num_actions

        def uni(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params = {
            "W1": uni(fan1, (fan1, hidden)),
            "b1": uni(fan1, (hidden,)),
            "g1": np.ones(hidden),
            "c1": np.zeros(hidden),
            "W2": uni(hidden, (hidden, hidden)),
            "b2": uni(hidden, (hidden,)),
            "g2": np.ones(hidden),
            "c2": np.zeros(hidden),
            "W3": uni(hidden, (hidden, embed_dim)),
            "b3": uni(hidden, (embed_dim,)),
        }
        running = {"m1": np.zeros(hidden), "v1": np.ones(hidden), "m2": np.zeros(hidden), "v2": np.ones(hidden)}
        return cls(context_dim, num_actions, embed_dim, hidden, dropout, params, running)

    def copy(self) -> "EmbeddingNet":
        return EmbeddingNet(
            self.context_dim,
            self.num_actions,
            self.embed_dim,
            self.hidden,
            self.dropout,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.running.items()},
        )

    # flat parameter vector, used by the optimizer tests and finite differences
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for k in PARAM_NAMES:
            size = self.params[k].size
            self.params[k] = np.asarray(flat[pos : pos + size], dtype=float).reshape(self.params[k].shape).copy()
            pos += size

    @staticmethod
    def flatten_grads(grads: dict) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in PARAM_NAMES])

    def _check_inputs(self, contexts: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        if contexts.shape[1] != self.context_dim:
            raise InvalidArgumentError(f"expected contexts of dimension {self.context_dim}, got {contexts.shape[1]}")
        if contexts.shape[0] != actions.shape[0]:
            raise InvalidArgumentError("contexts and actions must have equal length")
        if actions.size and (actions.min() < 0 or actions.max() >= self.num_actions):
            raise InvalidArgumentError(f"actions must lie in [0, {self.num_actions})")
        return contexts, actions

    def forward(
        self,
        contexts: np.ndarray,
        actions: np.ndarray,
        train: bool = False,
        rng: Optional[np.random.Generator] = None,
        dropout: Optional[bool] = None,
        update_stats: bool = True,
    ) -> tuple[np.ndarray, dict]:
        """Embeddings of shape (n, d_e) and the cache needed by :meth:`backward`.

        ``train=True`` normalizes with batch statistics (and updates the
        running averages unless ``update_stats`` is False); otherwise the
        running statistics are used, which makes the map deterministic.
        Dropout defaults to on in train mode and needs ``rng``.
        """
        p = self.params
        use_dropout = (train if dropout is None else dropout) and self.dropout > 0.0
        if use_dropout and rng is None:
            raise InvalidArgumentError("dropout needs an rng")
        contexts, actions = self._check_inputs(contexts, actions)
        cache = {"x": contexts, "a": actions, "train": train}
        h = contexts
        for layer in (1, 2):
            if layer == 1:
                # [x, onehot(a)] @ W1 without materialising the one-hot block
                W1 = p["W1"]
                z = contexts @ W1[: self.context_dim] + W1[self.context_dim :][actions] + p["b1"]
            else:
                z = h @ p["W2"] + p["b2"]
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    m = z.shape[0]
                    unbiased = var * m / max(m - 1, 1)
                    self.running[f"m{layer}"] = (1 - BN_MOMENTUM) * self.running[f"m{layer}"] + BN_MOMENTUM * mean
                    self.running[f"v{layer}"] = (1 - BN_MOMENTUM) * self.running[f"v{layer}"] + BN_MOMENTUM * unbiased
            else:
                mean = self.running[f"m{layer}"]
                var = self.running[f"v{layer}"]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            zhat = (z - mean) * inv_std
            y = p[f"g{layer}"] * zhat + p[f"c{layer}"]
            a = np.maximum(y, 0.0)
            if use_dropout:
                mask = (rng.uniform(size=a.shape) >= self.dropout) / (1.0 - self.dropout)
                out = a * mask
            else:
                mask = None
                out = a
            cache[layer] = {"h_in": h, "zhat": zhat, "inv_std": inv_std, "y": y, "mask": mask}
            h = out
        cache["h2"] = h
        emb = h @ p["W3"] + p["b3"]
        return emb, cache

    def backward(self, d_emb: np.ndarray, cache: dict) -> dict:
        """Gradients of a scalar loss w.r.t. every parameter given dL/d(embedding)."""
        p = self.params
        grads = {"W3": cache["h2"].T @ d_emb, "b3": d_emb.sum(axis=0)}
        dh = d_emb @ p["W3"].T
        for layer in (2, 1):
            c = cache[layer]
            if c["mask"] is not None:
                dh = dh * c["mask"]
            dy = dh * (c["y"] > 0.0)
            grads[f"g{layer}"] = np.sum(dy * c["zhat"], axis=0)
            grads[f"c{layer}"] = dy.sum(axis=0)
            dzhat = dy * p[f"g{layer}"]
            if cache["train"]:
                m = dzhat.shape[0]
                dz = (c["inv_std"] / m) * (
                    m * dzhat - dzhat.sum(axis=0) - c["zhat"] * np.sum(dzhat * c["zhat"], axis=0)
                )
            else:
                dz = dzhat * c["inv_std"]
            grads[f"b{layer}"] = dz.sum(axis=0)
            if layer == 2:
                grads["W2"] = c["h_in"].T @ dz
                dh = dz @ p["W2"].T
            else:
                dW1 = np.zeros_like(p["W1"])
                dW1[: self.context_dim] = cache["x"].T @ dz
                np.add.at(dW1[self.context_dim :], cache["a"], dz)
                grads["W1"] = dW1
        return grads

    def embed(self, contexts: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Deterministic (eval-mode) embeddings."""
        return self.forward(contexts, actions, train=False)[0]

    def reward_matrix(self, contexts: np.ndarray, chunk: int = 20_000) -> np.ndarray:
        """Predicted reward e(x, a)^T x for every action, shape (n, K)."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        n, K = contexts.shape[0], self.num_actions
        out = np.empty((n, K))
        rows_per_chunk = max(1, chunk // K)
        for start in range(0, n, rows_per_chunk):
            x = contexts[start : start + rows_per_chunk]
            m = x.shape[0]
            xr = np.repeat(x, K, axis=0)
            ar = np.tile(np.arange(K), m)
            out[start : start + m] = predict_reward_from_embeddings(self.embed(xr, ar), xr).reshape(m, K)
        return out


def predict_reward_from_embeddings(embeddings: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    embeddings = np.atleast_2d(embeddings)
    contexts = np.atleast_2d(contexts)
    if embeddings.shape != contexts.shape:
        raise InvalidArgumentError(
            f"reward head needs embedding dim == context dim, got {embeddings.shape[1]} vs {contexts.shape[1]}"
        )
    return np.einsum("ij,ij->i", embeddings, contexts)


def embed_forward(net: EmbeddingNet, x: np.ndarray, a: int, train: bool = False, rng=None) -> np.ndarray:
    """Embedding of a single (context, action) pair."""
    return net.forward(np.atleast_2d(x), np.array([a]), train=train, rng=rng, update_stats=False)[0][0]


def predict_reward(net: EmbeddingNet, x: np.ndarray, a: int) -> float:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if net.embed_dim != net.context_dim:
        raise InvalidArgumentError("reward head needs embed_dim == context_dim")
    return float(predict_reward_from_embeddings(net.embed(x, np.array([a])), x)[0])
