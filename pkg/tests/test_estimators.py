import numpy as np
import pytest

from caelmips.core import Dataset, InvalidArgumentError, TabularPolicy, UnsupportedActionError, uniform_policy
from caelmips.estimators import (
    MarginalWeightTable,
    dm_estimate,
    ips_bias_unsupported,
    ips_estimate,
    ips_variance_terms,
    marginal_weights,
    mips_estimate,
    weight_matrix,
)
from caelmips.oracle import (
    DiscreteInstance,
    ExactPosterior,
    exact_mips_expectation,
    exact_value,
    random_instance,
)
from caelmips.synthetic import SyntheticEnv, generate_dataset, true_value


class FixedPosterior:
    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def predict_proba(self, contexts, embeddings):
        return self.table


def _two_sample():
    # context index selects the tabular policy row
    return Dataset(
        contexts=np.array([[0.0], [1.0]]),
        actions=np.array([0, 1]),
        rewards=np.array([1.0, 4.0]),
        propensities=np.array([0.25, 0.5]),
        num_actions=2,
    )


def test_ips_hand_arithmetic():
    pi = TabularPolicy(np.array([[0.5, 0.5], [0.75, 0.25]]))
    # weights (0.5/0.25, 0.25/0.5) = (2, 0.5)
    assert ips_estimate(_two_sample(), pi).value == pytest.approx(2.0)


def test_ips_on_policy_is_sample_mean():
    env = SyntheticEnv(context_dim=2, num_actions=4)
    d = generate_dataset(env, uniform_policy(4), 100, seed=0)
    assert ips_estimate(d, uniform_policy(4)).value == pytest.approx(d.rewards.mean(), rel=1e-14)


def test_dm_examples():
    x = np.zeros((1, 1))
    assert dm_estimate(x, np.array([[0.3, 0.7]]), lambda c: np.array([[10.0, 0.0]]), 2).value == pytest.approx(3.0)
    xs = np.zeros((4, 1))
    assert dm_estimate(xs, uniform_policy(3), lambda c: np.full((4, 3), 2.5), 3).value == pytest.approx(2.5)
    with pytest.raises(InvalidArgumentError):
        dm_estimate(xs, uniform_policy(3), lambda c: np.zeros((4, 2)), 3)


def test_dm_with_true_reward_matches_ground_truth():
    env = SyntheticEnv(context_dim=2, num_actions=10)
    pi = env.target_policy(0.2)
    gt = true_value(env, pi, mc_contexts=200_000, seed=1)
    x = np.random.default_rng(9).uniform(size=(200_000, 2))
    dm = dm_estimate(x, pi, env.q, 10).value
    assert abs(dm - gt.value) <= 3 * np.sqrt(2) * gt.std_error


def test_marginal_weight_examples():
    d = Dataset(np.zeros((1, 1)), np.array([0]), np.array([1.0]), np.array([1 / 3]), 3)
    pi = np.array([[1.0, 1 / 3, 1 / 6]])  # weights (3, 1, 0.5) under uniform mu
    mu = uniform_policy(3)
    table = marginal_weights(d, pi, FixedPosterior([[0.5, 0.3, 0.2]]), np.zeros((1, 1)), mu)
    assert table.weights[0] == pytest.approx(1.9)
    uni = marginal_weights(d, pi, FixedPosterior([[1 / 3] * 3]), np.zeros((1, 1)), mu)
    assert uni.weights[0] == pytest.approx(1.5)  # (3 + 1 + 0.5) / 3
    np.testing.assert_allclose(
        marginal_weights(d, np.array([[0.2, 0.3, 0.5]]), FixedPosterior([[1 / 3] * 3]), np.zeros((1, 1)), mu).weights, 1.0
    )


def test_delta_posterior_reduces_to_ips():
    env = SyntheticEnv(context_dim=2, num_actions=6)
    d = generate_dataset(env, uniform_policy(6), 300, seed=1)
    pi = env.target_policy(0.3)
    delta = np.eye(6)[d.actions]
    table = marginal_weights(d, pi, FixedPosterior(delta), np.zeros((300, 1)), uniform_policy(6))
    assert abs(mips_estimate(d, table).value - ips_estimate(d, pi).value) <= 1e-12


def test_marginal_weights_reject_unsupported_mass():
    d = Dataset(np.zeros((1, 1)), np.array([0]), np.array([1.0]), np.array([1.0]), 2)
    mu = np.array([[1.0, 0.0]])
    with pytest.raises(UnsupportedActionError):
        marginal_weights(d, np.array([[0.5, 0.5]]), FixedPosterior([[0.5, 0.5]]), np.zeros((1, 1)), mu)


def test_assumed_uniform_behavior_is_recorded():
    d = Dataset(np.zeros((2, 1)), np.array([0, 1]), np.ones(2), np.full(2, 0.5), 2)
    w, source = weight_matrix(d, np.array([[1.0, 0.0], [0.0, 1.0]]), None)
    assert source == "assumed-uniform"
    np.testing.assert_allclose(w, [[2.0, 0.0], [0.0, 2.0]])
    table = marginal_weights(d, np.array([[1.0, 0.0], [0.0, 1.0]]), FixedPosterior(np.eye(2)), np.zeros((2, 1)))
    assert mips_estimate(d, table).behavior_source == "assumed-uniform"


def test_mips_length_mismatch():
    d = _two_sample()
    with pytest.raises(InvalidArgumentError):
        mips_estimate(d, MarginalWeightTable(np.ones(3), "policy"))
    assert mips_estimate(d, MarginalWeightTable(np.ones(2), "policy")).value == pytest.approx(2.5)


def test_mips_expectation_matches_oracle_enumeration(instance):
    # a size-1 dataset per atom: sum of p * MIPS term equals the oracle's expectation
    post = ExactPosterior.from_instance(instance)
    total = 0.0
    for p, x, a, e, r in instance.atoms():
        d = Dataset(np.array([[float(x)]]), np.array([a]), np.array([r]), np.array([instance.mu[x, a]]),
                    instance.num_actions, embeddings=np.array([[float(e)]]))
        table = marginal_weights(d, instance.target_policy(), post, d.embeddings, instance.behavior_policy())
        total += p * mips_estimate(d, table).value
    assert total == pytest.approx(exact_mips_expectation(instance), abs=1e-12)


def test_exact_posterior_marginal_weights_have_mean_one():
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = random_instance(rng)
        post = ExactPosterior.from_instance(inst)
        w = inst.pi / inst.mu
        mean = sum(p * float(post.table[x, e] @ w[x]) for p, x, a, e, r in inst.atoms())
        assert mean == pytest.approx(1.0, abs=1e-12)


def test_ips_variance_terms_limits():
    X, K, E = 1, 2, 1
    base = dict(
        p_x=np.ones(X),
        p_e=np.ones((X, K, E)),
        reward_support=np.array([1.0, 3.0]),
    )
    det = np.zeros((X, K, E, 2))
    det[..., 0] = 1.0
    mu = np.array([[0.5, 0.5]])
    inst = DiscreteInstance(reward_pmf=det, pi=mu, mu=mu, **base)
    assert ips_variance_terms(inst, mu, mu, n=3) == pytest.approx((0.0, 0.0, 0.0), abs=1e-15)
    # single context, single action: only the noise term remains
    noisy = np.full((1, 1, 1, 2), 0.5)
    one = DiscreteInstance(np.ones(1), np.ones((1, 1, 1)), np.array([1.0, 3.0]), noisy, np.ones((1, 1)), np.ones((1, 1)))
    assert ips_variance_terms(one, np.ones((1, 1)), np.ones((1, 1)), n=4) == pytest.approx((1.0 / 4, 0.0, 0.0))
    with pytest.raises(InvalidArgumentError):
        ips_variance_terms("not an instance", mu, mu)


def test_ips_variance_terms_sum_to_enumerated_variance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        inst = random_instance(rng)
        w = inst.pi / inst.mu
        m1 = sum(p * w[x, a] * r for p, x, a, e, r in inst.atoms())
        m2 = sum(p * (w[x, a] * r) ** 2 for p, x, a, e, r in inst.atoms())
        n = int(rng.integers(1, 10))
        assert sum(ips_variance_terms(inst, inst.pi, inst.mu, n=n)) == pytest.approx((m2 - m1**2) / n, abs=1e-10)


def test_ips_variance_matches_simulation(instance):
    # 10^5 simulated datasets of size 4, drawn as one long sample and reshaped
    n, reps = 4, 100_000
    big = instance.sample_dataset(n * reps, np.random.default_rng(12))
    w = instance.pi[big.contexts[:, 0].astype(int), big.actions] / big.propensities
    est = (w * big.rewards).reshape(reps, n).mean(axis=1)
    var = sum(ips_variance_terms(instance, instance.pi, instance.mu, n=n))
    # standard error of a sample variance: sqrt((m4 - s^4) / reps)
    c = est - est.mean()
    se = np.sqrt((np.mean(c**4) - np.var(est) ** 2) / reps)
    assert abs(np.var(est) - var) <= 3 * se
    assert abs(est.mean() - exact_value(instance)) <= 3 * est.std() / np.sqrt(reps)


def test_ips_bias_unsupported():
    inst = random_instance(np.random.default_rng(2))
    assert ips_bias_unsupported(inst, inst.pi, inst.mu) == 0.0
    # mu never plays action 2; q = const there
    X, K = 2, 3
    p_e = np.ones((X, K, 1))
    pmf = np.zeros((X, K, 1, 2))
    pmf[..., 1] = 1.0  # reward 2 always
    mu = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0]])
    pi = np.array([[0.2, 0.2, 0.6], [0.5, 0.3, 0.2]])
    inst = DiscreteInstance(np.array([0.25, 0.75]), p_e, np.array([0.0, 2.0]), pmf, pi, mu)
    expected = 0.25 * 0.6 * 2 + 0.75 * 0.2 * 2
    assert ips_bias_unsupported(inst, pi, mu) == pytest.approx(expected)
    # IPS misses exactly that mass in expectation
    w = np.where(mu > 0, pi / np.where(mu > 0, mu, 1), 0.0)
    e_ips = sum(p * w[x, a] * r for p, x, a, e, r in inst.atoms())
    assert exact_value(inst) - e_ips == pytest.approx(expected, abs=1e-12)
