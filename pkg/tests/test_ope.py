import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import one_hot_dataset, random_dataset, random_linear_policy, reduction_gaps, table_policy
from oplscape.core import Clustering, LinearPolicy, RewardModel
from oplscape.envgen import EnvironmentSpec, make_environment, sample_logged, true_value
from oplscape.errors import ConfigError
from oplscape.objectives import BoundObjective, OpeObjective
from oplscape.ope import (
    ClusterPolicy,
    OpeConfig,
    estimate,
    estimate_cips,
    estimate_dr,
    estimate_ips,
    estimate_mips,
    estimate_offcem,
    estimate_potec,
    ope_gradient,
    within_cluster_best,
)
from oplscape.trainer import finite_diff_check


def test_ips_examples():
    ds = one_hot_dataset([0], [0], [1.0], [0.5], 2)
    assert estimate_ips(ds, table_policy([[0.5, 0.5]])) == pytest.approx(1.0)
    ds = one_hot_dataset([0, 1], [0, 0], [1.0, 1.0], [0.25, 0.5], 2)
    assert estimate_ips(ds, table_policy([[0.5, 0.5], [0.25, 0.75]])) == pytest.approx(1.25)
    zero = one_hot_dataset([0, 1], [0, 1], [0.0, 0.0], [0.3, 0.3], 2)
    assert estimate_ips(zero, table_policy([[0.5, 0.5], [0.5, 0.5]])) == 0.0


def test_cips_examples(rng):
    ds = one_hot_dataset([0], [0], [1.0], [0.1], 2)
    assert estimate_cips(ds, table_policy([[0.4, 0.6]]), 0.2) == pytest.approx(2.0)
    ds, _, _ = random_dataset(rng)
    pol = random_linear_policy(rng, ds.K, ds.d)
    P = pol.probs(ds.contexts)[np.arange(ds.n), ds.actions]
    assert estimate_cips(ds, pol, 1.0) == pytest.approx(np.mean(P * ds.rewards))
    with pytest.raises(ConfigError):
        estimate_cips(ds, pol, 1.5)


def test_dr_examples():
    ds = one_hot_dataset([0], [0], [1.0], [0.5], 2)
    rm = RewardModel.constant(2, 0.5)
    assert estimate_dr(ds, table_policy([[0.5, 0.5]]), rm, 0.0) == pytest.approx(1.0)


def test_dr_with_exact_residuals_is_the_model_value():
    P0 = np.array([[0.2, 0.3, 0.5]])
    R = np.array([[0.1, 0.7, 0.4]])
    ds = one_hot_dataset([0, 0, 0], [0, 1, 2], R[0], P0[0], 3)
    rm = RewardModel.from_table(np.eye(1), R)
    pol = table_policy(P0)
    assert estimate_dr(ds, pol, rm) == pytest.approx(float(P0[0] @ R[0]))


def test_mips_examples(rng):
    ds = one_hot_dataset([0], [1], [1.0], [0.25], 4, cids=[0], cprobs=[0.5])
    cl = Clustering(np.array([0, 0, 1, 1]), 2)
    pol = table_policy([[0.3, 0.5, 0.1, 0.1]])
    assert estimate_mips(ds, pol, cl) == pytest.approx(1.6)
    ds, _, _ = random_dataset(rng, clustered=False)
    single = Clustering.single(ds.K)
    ds1 = ds.__class__(ds.contexts, ds.actions, ds.rewards, ds.logging_probs, ds.K,
                       np.zeros(ds.n, dtype=int), np.ones(ds.n))
    assert estimate_mips(ds1, random_linear_policy(rng, ds.K, ds.d), single) == pytest.approx(
        ds.rewards.mean())


def test_mips_without_annotations_is_a_config_error(rng):
    ds, cl, _ = random_dataset(rng, clustered=False)
    with pytest.raises(ConfigError):
        estimate_mips(ds, random_linear_policy(rng, ds.K, ds.d), cl)


def test_offcem_example():
    ds = one_hot_dataset([0], [0], [1.0], [0.25], 4, cids=[0], cprobs=[0.5])
    cl = Clustering(np.array([0, 0, 1, 1]), 2)
    rm = RewardModel.from_table(np.eye(1), [[0.4, 0.2, 0.0, 0.0]])
    pol = table_policy([[0.5, 0.3, 0.1, 0.1]])
    assert estimate_offcem(ds, pol, cl, rm) == pytest.approx(1.22)


def test_potec_example():
    ds = one_hot_dataset([0], [0], [1.0], [0.25], 4, cids=[0], cprobs=[0.5])
    cl = Clustering(np.array([0, 0, 1, 1]), 2)
    rm = RewardModel.from_table(np.eye(1), [[0.4, 0.2, 0.0, 0.0]])
    # near point mass on cluster 0
    cp = ClusterPolicy(LinearPolicy(np.array([[40.0], [0.0]])), cl, rm)
    assert estimate_potec(ds, cp) == pytest.approx(1.6, abs=1e-12)


def test_potec_with_exact_residuals_is_the_model_value(rng):
    ds, cl, _ = random_dataset(rng)
    Xu, inv = ds.unique_contexts
    table = rng.random((Xu.shape[0], ds.K))
    ds = ds.__class__(ds.contexts, ds.actions, table[inv, ds.actions], ds.logging_probs, ds.K,
                      ds.cluster_ids, ds.cluster_logging_probs)
    rm = RewardModel.from_table(Xu, table)
    cp = ClusterPolicy(random_linear_policy(rng, cl.num_clusters, ds.d), cl, rm)
    rmax, _ = within_cluster_best(rm.predict(Xu), cl)
    expected = np.mean(np.sum(cp.cluster_probs(Xu) * rmax, axis=1)[inv])
    assert estimate_potec(ds, cp) == pytest.approx(expected)


def test_potec_on_singleton_clusters_with_zero_model_is_mips(rng):
    ds, _, _ = random_dataset(rng, clustered=False)
    ident = Clustering.identity(ds.K)
    ds = ds.__class__(ds.contexts, ds.actions, ds.rewards, ds.logging_probs, ds.K,
                      ds.actions.copy(), ds.logging_probs.copy())
    pol = random_linear_policy(rng, ds.K, ds.d)
    cp = ClusterPolicy(pol, ident, RewardModel.constant(ds.K, 0.0))
    assert estimate_potec(ds, cp) == pytest.approx(estimate_mips(ds, pol, ident), abs=1e-12)


def test_cluster_policy_composition_sums_to_one(rng):
    ds, cl, rm = random_dataset(rng)
    cp = ClusterPolicy(random_linear_policy(rng, cl.num_clusters, ds.d), cl, rm)
    P = cp.probs(ds.contexts)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
    Xu, _ = ds.unique_contexts
    sel = cp.selected_actions(Xu)
    R = rm.predict(Xu)
    for c in range(cl.num_clusters):
        members = cl.members(c)
        assert np.all(R[np.arange(len(Xu)), sel[:, c]] == R[:, members].max(axis=1))


def test_reduction_identities_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        assert np.max(np.abs(reduction_gaps(rng))) < 1e-10


def test_ips_is_unbiased_on_full_support():
    env = make_environment(EnvironmentSpec(m=5, K=4, d=3, seed=3))
    rng = np.random.default_rng(0)
    targets = [random_linear_policy(rng, env.K, env.d) for _ in range(5)]
    est = np.array([[estimate_ips(ds, t) for t in targets]
                    for ds in (sample_logged(env, 2000, s) for s in range(500))])
    se = est.std(axis=0, ddof=1) / np.sqrt(est.shape[0])
    truth = np.array([true_value(env, t) for t in targets])
    assert np.all(np.abs(est.mean(axis=0) - truth) < 4 * se)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["ips", "cips", "dr", "mips", "offcem"]))
def test_estimators_are_linear_in_policy_probabilities(seed, method):
    rng = np.random.default_rng(seed)
    ds, cl, rm = random_dataset(rng, n=12, m=12)
    cfg = OpeConfig(tau=0.1, reward_model=rm, clustering=cl)
    pol = random_linear_policy(rng, ds.K, ds.d)
    # per-sample summands through the coefficient route equal the direct estimate
    bound = BoundObjective(OpeObjective(method, cfg), ds)
    assert bound.value(pol) == pytest.approx(estimate(method, ds, pol, cfg), rel=1e-12, abs=1e-12)
    # doubling a row of coefficients' probabilities doubles that row's contribution
    ub, C, total = bound.terms.aggregate()
    P = pol.probs(bound.terms.unique[ub])
    contrib = np.sum(C * P, axis=1)
    P2 = P.copy()
    P2[0] *= 2.0
    assert np.sum(C[0] * P2[0]) == pytest.approx(2.0 * contrib[0])


def test_zero_rewards_and_model_give_zero_gradient(rng):
    ds, cl, _ = random_dataset(rng)
    ds = ds.__class__(ds.contexts, ds.actions, np.zeros(ds.n), ds.logging_probs, ds.K,
                      ds.cluster_ids, ds.cluster_logging_probs)
    zero = RewardModel.constant(ds.K, 0.0)
    pol = random_linear_policy(rng, ds.K, ds.d)
    cfg = OpeConfig(tau=0.1, reward_model=zero, clustering=cl)
    for method in ("ips", "cips", "dr", "mips", "offcem"):
        assert np.all(ope_gradient(method, ds, pol, cfg) == 0.0)


@pytest.mark.parametrize("method", ["ips", "cips", "dr", "mips", "offcem", "potec"])
def test_gradients_match_finite_differences(rng, method):
    ds, cl, rm = random_dataset(rng)
    cfg = OpeConfig(tau=0.1, reward_model=rm, clustering=cl)
    K = cl.num_clusters if method == "potec" else ds.K
    pol = random_linear_policy(rng, K, ds.d)
    if method == "potec":
        pol = ClusterPolicy(pol, cl, rm)
    err = finite_diff_check(OpeObjective(method, cfg), ds, pol, num_coords=pol.num_params)
    assert err < 1e-5


def test_dr_gradient_with_constant_model_is_shifted_ips(rng):
    ds, _, _ = random_dataset(rng)
    c = 0.3
    pol = random_linear_policy(rng, ds.K, ds.d)
    dr = ope_gradient("dr", ds, pol, OpeConfig(reward_model=RewardModel.constant(ds.K, c)))
    # IPS is linear in the rewards, so its gradient on r - c is grad(r) - c grad(1)
    ones = ds.__class__(ds.contexts, ds.actions, np.ones(ds.n), ds.logging_probs, ds.K)
    shifted = ope_gradient("ips", ds, pol, OpeConfig()) - c * ope_gradient("ips", ones, pol,
                                                                           OpeConfig())
    np.testing.assert_allclose(dr, shifted, atol=1e-12)


def test_missing_resources_are_config_errors(rng):
    ds, cl, rm = random_dataset(rng)
    pol = random_linear_policy(rng, ds.K, ds.d)
    with pytest.raises(ConfigError):
        estimate("dr", ds, pol, OpeConfig())
    with pytest.raises(ConfigError):
        estimate("offcem", ds, pol, OpeConfig(reward_model=rm))
    with pytest.raises(ConfigError):
        OpeConfig(tau=-0.1)
    with pytest.raises(ConfigError):
        estimate("snips", ds, pol, OpeConfig())
