"""Exact enumeration on finite bandit instances.

Every quantity here is a finite sum over (context, action, embedding, reward)
atoms, so identities between biases and variances of IPS and MIPS can be
checked to floating-point precision. Estimator-level variances use
Var(single-sample term) / n, which is exact for iid samples.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Dataset, InvalidArgumentError, Policy, TabularPolicy, check_distribution

IDENTITY_TOL = 1e-10
PMF_TOL = 1e-12


class OracleMismatchError(AssertionError):
    """Two independent exact computations disagree beyond tolerance."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteInstance:
    """Fully enumerable bandit instance with embeddings.

    Attributes
    ----------
    p_x: (X,) context pmf
    p_e: (X, K, E) embedding pmf p_E(e | x, a)
    reward_support: (S,) reward atoms
    reward_pmf: (X, K, E, S) reward pmf given (x, a, e)
    pi, mu: (X, K) target and behavior tables
    """

    p_x: np.ndarray
    p_e: np.ndarray
    reward_support: np.ndarray
    reward_pmf: np.ndarray
    pi: np.ndarray
    mu: np.ndarray

    def __post_init__(self) -> None:
        for name in ("p_x", "p_e", "reward_support", "reward_pmf", "pi", "mu"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        X, K, E = self.p_e.shape
        S = self.reward_support.shape[0]
        if self.p_x.shape != (X,) or self.reward_pmf.shape != (X, K, E, S):
            raise InvalidArgumentError("inconsistent instance shapes")
        if self.pi.shape != (X, K) or self.mu.shape != (X, K):
            raise InvalidArgumentError("policy tables must have shape (X, K)")
        for name in ("p_x", "p_e", "reward_pmf", "pi", "mu"):
            arr = getattr(self, name)
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > PMF_TOL):
                raise InvalidArgumentError(f"{name} is not a valid pmf")
        if not np.all(np.isfinite(self.reward_support)):
            raise InvalidArgumentError("reward support must be finite")

    @property
    def num_contexts(self) -> int:
        return self.p_e.shape[0]

    @property
    def num_actions(self) -> int:
        return self.p_e.shape[1]

    @property
    def num_embeddings(self) -> int:
        return self.p_e.shape[2]

    @property
    def reward_range(self) -> tuple[float, float]:
        return float(self.reward_support.min()), float(self.reward_support.max())

    def q_xae(self) -> np.ndarray:
        return self.reward_pmf @ self.reward_support

    def second_moment_xae(self) -> np.ndarray:
        return self.reward_pmf @ self.reward_support**2

    def q_xa(self) -> np.ndarray:
        return np.sum(self.p_e * self.q_xae(), axis=2)

    def second_moment_xa(self) -> np.ndarray:
        return np.sum(self.p_e * self.second_moment_xae(), axis=2)

    def target_policy(self) -> TabularPolicy:
        return TabularPolicy(self.pi)

    def behavior_policy(self) -> TabularPolicy:
        return TabularPolicy(self.mu)

    def atoms(self):
        """Yield (probability, x, a, e, r) for every atom of the logging distribution."""
        for x, a, e, s in itertools.product(
            range(self.num_contexts), range(self.num_actions), range(self.num_embeddings), range(len(self.reward_support))
        ):
            p = self.p_x[x] * self.mu[x, a] * self.p_e[x, a, e] * self.reward_pmf[x, a, e, s]
            if p > 0.0:
                yield p, x, a, e, float(self.reward_support[s])

    def sample_dataset(self, n: int, rng: np.random.Generator) -> Dataset:
        """Draw n logged samples; context and embedding are stored as their indices."""
        X, K, E = self.p_e.shape
        x = rng.choice(X, size=n, p=self.p_x)
        u = rng.uniform(size=(n, 3))
        a = np.minimum((self.mu[x].cumsum(axis=1) < u[:, :1]).sum(axis=1), K - 1)
        e = np.minimum((self.p_e[x, a].cumsum(axis=1) < u[:, 1:2]).sum(axis=1), E - 1)
        s = np.minimum((self.reward_pmf[x, a, e].cumsum(axis=1) < u[:, 2:3]).sum(axis=1), len(self.reward_support) - 1)
        return Dataset(
            contexts=x[:, None].astype(float),
            actions=a,
            rewards=self.reward_support[s],
            propensities=self.mu[x, a],
            num_actions=K,
            embeddings=e[:, None].astype(float),
        )

    def with_policies(self, pi=None, mu=None) -> "DiscreteInstance":
        return DiscreteInstance(
            p_x=self.p_x,
            p_e=self.p_e,
            reward_support=self.reward_support,
            reward_pmf=self.reward_pmf,
            pi=self.pi if pi is None else policy_table(pi, self),
            mu=self.mu if mu is None else policy_table(mu, self),
        )


def policy_table(policy, inst: DiscreteInstance) -> np.ndarray:
    """(X, K) table of a policy given as a Policy object or an array."""
    if policy is None:
        raise InvalidArgumentError("policy required")
    if isinstance(policy, Policy):
        contexts = np.arange(inst.num_contexts, dtype=float)[:, None]
        table = policy.action_dist(contexts)
    else:
        table = np.asarray(policy, dtype=float)
    if table.shape != (inst.num_contexts, inst.num_actions):
        raise InvalidArgumentError(f"policy table must have shape {(inst.num_contexts, inst.num_actions)}")
    return check_distribution(table, "policy table")


def _tables(inst, pi, mu):
    pi_t = inst.pi if pi is None else policy_table(pi, inst)
    mu_t = inst.mu if mu is None else policy_table(mu, inst)
    return pi_t, mu_t


def _weights(pi_t: np.ndarray, mu_t: np.ndarray) -> np.ndarray:
    return np.where(mu_t > 0, pi_t / np.where(mu_t > 0, mu_t, 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class ExactPosterior:
    """mu(a | x, e) = mu(a|x) p_E(e|x,a) / p_E(e|x,mu), stored as (X, E, K).

    Where p_E(e|x,mu) = 0 the posterior is undefined and falls back to mu(.|x).
    """

    table: np.ndarray
    marginal: np.ndarray

    @classmethod
    def from_instance(cls, inst: DiscreteInstance, mu=None) -> "ExactPosterior":
        mu_t = inst.mu if mu is None else policy_table(mu, inst)
        joint = mu_t[:, :, None] * inst.p_e  # (X, K, E)
        marginal = joint.sum(axis=1)  # (X, E)
        post = np.where(
            marginal[:, None, :] > 0,
            joint / np.where(marginal[:, None, :] > 0, marginal[:, None, :], 1.0),
            mu_t[:, :, None],
        )
        return cls(table=np.transpose(post, (0, 2, 1)), marginal=marginal)

    def predict_proba(self, contexts: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(contexts)[:, 0].astype(np.int64)
        e = np.atleast_2d(embeddings)[:, 0].astype(np.int64)
        return self.table[x, e]


def exact_value(inst: DiscreteInstance, policy=None) -> float:
    """v(pi) = sum_x sum_a sum_e p_X pi p_E q."""
    pi_t = inst.pi if policy is None else policy_table(policy, inst)
    return float(np.einsum("x,xa,xae,xae->", inst.p_x, pi_t, inst.p_e, inst.q_xae()))


def exact_mips_expectation(inst: DiscreteInstance, pi=None, mu=None) -> float:
    """E[single-sample MIPS term] with the exact posterior, by atom enumeration."""
    pi_t, mu_t = _tables(inst, pi, mu)
    inst = inst.with_policies(pi_t, mu_t)
    post = ExactPosterior.from_instance(inst)
    w = _weights(pi_t, mu_t)
    total = 0.0
    for p, x, a, e, r in inst.atoms():
        total += p * float(post.table[x, e] @ w[x]) * r
    return total


def _single_sample_moments(inst: DiscreteInstance, pi_t, mu_t):
    """(E[ips], E[ips^2], E[mips], E[mips^2]) of the one-sample terms by enumeration."""
    inst = inst.with_policies(pi_t, mu_t)
    post = ExactPosterior.from_instance(inst)
    w = _weights(pi_t, mu_t)
    m = np.zeros(4)
    for p, x, a, e, r in inst.atoms():
        ips = w[x, a] * r
        mips = float(post.table[x, e] @ w[x]) * r
        m += p * np.array([ips, ips * ips, mips, mips * mips])
    return m


def _pairwise(post_row: np.ndarray, fn: Callable[[int, int], float]) -> float:
    total = 0.0
    K = post_row.shape[0]
    for i in range(K):
        for j in range(i + 1, K):
            total += post_row[i] * post_row[j] * fn(i, j)
    return total


@dataclass(frozen=True)
class MipsBias:
    decomposition: float
    enumeration: float

    @property
    def value(self) -> float:
        return self.enumeration


def exact_mips_bias(inst: DiscreteInstance, pi=None, mu=None, tol: float = IDENTITY_TOL) -> MipsBias:
    """Bias of MIPS with the exact posterior, computed two independent ways.

    The decomposition sums mu(i|x,e) mu(j|x,e) (q_i - q_j)(w_j - w_i) over
    pairs i < j; the enumeration computes E[MIPS term] - v(pi) directly.
    """
    pi_t, mu_t = _tables(inst, pi, mu)
    if np.any((mu_t <= 0) & (pi_t > 0)):
        raise PreconditionError("overlap violated: pi puts mass where mu does not")
    inst = inst.with_policies(pi_t, mu_t)
    post = ExactPosterior.from_instance(inst)
    w = _weights(pi_t, mu_t)
    q = inst.q_xae()
    decomposition = 0.0
    for x in range(inst.num_contexts):
        for e in range(inst.num_embeddings):
            pe = post.marginal[x, e]
            if pe <= 0:
                continue
            row = post.table[x, e]
            decomposition += inst.p_x[x] * pe * _pairwise(
                row, lambda i, j: (q[x, i, e] - q[x, j, e]) * (w[x, j] - w[x, i])
            )
    enumeration = exact_mips_expectation(inst) - exact_value(inst)
    if abs(decomposition - enumeration) > tol:
        raise OracleMismatchError(f"bias decomposition {decomposition!r} != enumeration {enumeration!r}")
    return MipsBias(decomposition=float(decomposition), enumeration=float(enumeration))


def bias_upper_bound(inst: DiscreteInstance, pi=None, mu=None, reward_range: Optional[tuple[float, float]] = None) -> float:
    """(b - a) * E[sum_{i<j} mu(i|X,E) mu(j|X,E) |w(X,j) - w(X,i)|]."""
    pi_t, mu_t = _tables(inst, pi, mu)
    lo, hi = inst.reward_range if reward_range is None else reward_range
    if hi < lo:
        raise InvalidArgumentError("reward range must satisfy a <= b")
    post = ExactPosterior.from_instance(inst, mu_t)
    w = _weights(pi_t, mu_t)
    total = 0.0
    for x in range(inst.num_contexts):
        for e in range(inst.num_embeddings):
            pe = post.marginal[x, e]
            if pe > 0:
                total += inst.p_x[x] * pe * _pairwise(post.table[x, e], lambda i, j: abs(w[x, j] - w[x, i]))
    return float((hi - lo) * total)


def satisfies_no_direct_effect(inst: DiscreteInstance, mu=None, tol: float = PMF_TOL) -> bool:
    """Reward law given (x, e) is the same for every action that can produce e."""
    mu_t = inst.mu if mu is None else policy_table(mu, inst)
    for x in range(inst.num_contexts):
        for e in range(inst.num_embeddings):
            live = [a for a in range(inst.num_actions) if mu_t[x, a] > 0 and inst.p_e[x, a, e] > 0]
            for a in live[1:]:
                if np.max(np.abs(inst.reward_pmf[x, a, e] - inst.reward_pmf[x, live[0], e])) > tol:
                    return False
    return True


def variance_reduction_sides(inst: DiscreteInstance, pi=None, mu=None, n: int = 1) -> tuple[float, float]:
    """(closed-form reduction, enumerated Var[IPS] - Var[MIPS]) for size-n datasets."""
    pi_t, mu_t = _tables(inst, pi, mu)
    if not satisfies_no_direct_effect(inst, mu_t):
        raise PreconditionError("variance-reduction identity requires the no-direct-effect condition")
    inst = inst.with_policies(pi_t, mu_t)
    post = ExactPosterior.from_instance(inst)
    w = _weights(pi_t, mu_t)
    m2 = inst.second_moment_xae()
    closed = 0.0
    for x in range(inst.num_contexts):
        for e in range(inst.num_embeddings):
            pe = post.marginal[x, e]
            if pe <= 0:
                continue
            row = post.table[x, e]
            r2 = float(row @ m2[x, :, e])
            var_w = float(row @ w[x] ** 2 - (row @ w[x]) ** 2)
            closed += inst.p_x[x] * pe * r2 * var_w
    e_ips, e_ips2, e_mips, e_mips2 = _single_sample_moments(inst, pi_t, mu_t)
    direct = (e_ips2 - e_ips**2) - (e_mips2 - e_mips**2)
    return float(closed / n), float(direct / n)


def exact_variance_reduction(inst: DiscreteInstance, pi=None, mu=None, n: int = 1, tol: float = IDENTITY_TOL) -> float:
    """Var[IPS] - Var[MIPS] under no direct effect; both routes must agree."""
    closed, direct = variance_reduction_sides(inst, pi, mu, n)
    if abs(closed - direct) > tol:
        raise OracleMismatchError(f"variance reduction identity {closed!r} != enumeration {direct!r}")
    return closed


def variance_upper_bound_gap(inst: DiscreteInstance, pi=None, mu=None, n: int = 1) -> tuple[float, float]:
    """(exact Var[MIPS], Var[IPS] + E[R^2 sum_a mu(a|X,E)^2 sum_a w(X,a)^2] / n).

    The ordering lhs <= rhs holds for every instance, not only under no
    direct effect, since Var[MIPS] <= E[w(X,E)^2 R^2] and Cauchy-Schwarz.
    """
    pi_t, mu_t = _tables(inst, pi, mu)
    inst = inst.with_policies(pi_t, mu_t)
    post = ExactPosterior.from_instance(inst)
    w = _weights(pi_t, mu_t)
    sum_w2 = np.sum(w**2, axis=1)
    collision = np.sum(post.table**2, axis=2)  # (X, E)
    extra = 0.0
    for p, x, a, e, r in inst.atoms():
        extra += p * r * r * collision[x, e] * sum_w2[x]
    e_ips, e_ips2, e_mips, e_mips2 = _single_sample_moments(inst, pi_t, mu_t)
    lhs = (e_mips2 - e_mips**2) / n
    rhs = (e_ips2 - e_ips**2) / n + extra / n
    if lhs > rhs + IDENTITY_TOL:
        raise OracleMismatchError(f"variance bound violated: {lhs!r} > {rhs!r}")
    return float(lhs), float(rhs)


def finite_difference_gradient(loss: Callable[[np.ndarray], float], params: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function, one coordinate at a time."""
    params = np.array(params, dtype=float)
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(loss(params))
        flat[i] = orig - h
        down = float(loss(params))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss evaluation at coordinate {i}")
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def random_instance(
    rng: np.random.Generator,
    no_direct_effect: bool = False,
    max_contexts: int = 4,
    max_actions: int = 5,
    max_embeddings: int = 4,
    max_atoms: int = 3,
) -> DiscreteInstance:
    """Random non-degenerate instance; reward atoms live in [0, 10]."""
    X = int(rng.integers(1, max_contexts + 1))
    K = int(rng.integers(2, max_actions + 1))
    E = int(rng.integers(1, max_embeddings + 1))
    S = int(rng.integers(2, max_atoms + 1))
    p_x = rng.dirichlet(np.ones(X))
    p_e = rng.dirichlet(np.ones(E), size=(X, K))
    if E > 1:
        # sparsify some embedding rows so zero-marginal (x, e) cells occur
        drop = rng.uniform(size=(X, K, E)) < 0.25
        drop[..., int(rng.integers(E))] = False
        p_e = np.where(drop, 0.0, p_e)
        p_e /= p_e.sum(axis=2, keepdims=True)
    support = np.sort(rng.uniform(0.0, 10.0, size=S))
    if no_direct_effect:
        base = rng.dirichlet(np.ones(S), size=(X, 1, E))
        reward_pmf = np.repeat(base, K, axis=1)
    else:
        reward_pmf = rng.dirichlet(np.ones(S), size=(X, K, E))
    mu = 0.5 * rng.dirichlet(np.ones(K), size=X) + 0.5 / K
    pi = rng.dirichlet(np.ones(K), size=X)
    return DiscreteInstance(p_x=p_x, p_e=p_e, reward_support=support, reward_pmf=reward_pmf, pi=pi, mu=mu)


@dataclass
class VerificationReport:
    instances: int
    max_bias_gap: float = 0.0
    max_variance_identity_gap: float = 0.0
    bias_bound_violations: int = 0
    variance_bound_violations: int = 0
    seconds: float = 0.0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (
            not self.failures
            and self.max_bias_gap <= IDENTITY_TOL
            and self.max_variance_identity_gap <= IDENTITY_TOL
            and self.bias_bound_violations == 0
            and self.variance_bound_violations == 0
        )

    def lines(self) -> list[str]:
        return [
            f"instances checked: {self.instances}",
            f"max |decomposition - enumeration| bias gap: {self.max_bias_gap:.3e}",
            f"max variance-reduction identity gap: {self.max_variance_identity_gap:.3e}",
            f"bias bound violations: {self.bias_bound_violations}",
            f"variance bound violations: {self.variance_bound_violations}",
            f"elapsed: {self.seconds:.2f}s",
            *self.failures,
            "PASS" if self.passed else "FAIL",
        ]


def run_verification(num_instances: int = 100, seed: int = 0, n: int = 1) -> VerificationReport:
    """Check the bias decomposition, variance identity and both bounds on random instances.

    Half of the instances satisfy no direct effect so the variance identity
    is exercised on every other draw; bias and bounds are checked on all.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = VerificationReport(instances=num_instances)
    for k in range(num_instances):
        nde = k % 2 == 0
        inst = random_instance(rng, no_direct_effect=nde)
        try:
            bias = exact_mips_bias(inst, tol=np.inf)
            report.max_bias_gap = max(report.max_bias_gap, abs(bias.decomposition - bias.enumeration))
            if bias_upper_bound(inst) < abs(bias.enumeration) - IDENTITY_TOL:
                report.bias_bound_violations += 1
            lhs, rhs = variance_upper_bound_gap(inst, n=n)
        except OracleMismatchError as exc:
            report.variance_bound_violations += 1
            report.failures.append(f"instance {k}: {exc}")
            continue
        if nde:
            closed, direct = variance_reduction_sides(inst, n=n)
            report.max_variance_identity_gap = max(report.max_variance_identity_gap, abs(closed - direct))
    report.seconds = time.perf_counter() - start
    return report
