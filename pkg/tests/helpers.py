"""Random instances shared by the test modules."""
import numpy as np

from oplscape.core import Clustering, LinearPolicy, LoggedDataset, RewardModel
from oplscape.ope import estimate_cips, estimate_dr, estimate_ips, estimate_mips, estimate_offcem


def random_dataset(rng, n=40, K=6, d=3, m=5, num_clusters=3, clustered=True):
    """A logged dataset on ``m`` distinct contexts with a consistent clustering.

    Returns the dataset, its clustering and a table reward model over the
    distinct contexts.
    """
    Xc = rng.standard_normal((m, d))
    P0 = rng.dirichlet(np.ones(K), size=m)
    P0 = np.maximum(P0, 1e-3)
    P0 /= P0.sum(axis=1, keepdims=True)
    ctx = rng.integers(0, m, n)
    actions = np.array([rng.choice(K, p=P0[c]) for c in ctx])
    rewards = rng.random(n)
    clustering = Clustering(np.arange(K) % num_clusters, num_clusters)
    cids = cprobs = None
    if clustered:
        cids = clustering.assignment[actions]
        cprobs = clustering.marginal(P0)[ctx, cids]
    ds = LoggedDataset(Xc[ctx], actions, rewards, P0[ctx, actions], K, cids, cprobs)
    rm = RewardModel.from_table(Xc, rng.random((m, K)), "perturbed-oracle")
    return ds, clustering, rm


def random_linear_policy(rng, K, d, scale=1.0, l2=0.0):
    return LinearPolicy(scale * rng.standard_normal((K, d)), l2)


def with_clustering(ds, clustering, P0_lookup):
    """Re-annotate ``ds`` for another clustering, given pi_0 rows per sample."""
    cids = clustering.assignment[ds.actions]
    cprobs = clustering.marginal(P0_lookup)[np.arange(ds.n), cids]
    return LoggedDataset(ds.contexts, ds.actions, ds.rewards, ds.logging_probs, ds.n_actions,
                         cids, cprobs)


def table_policy(P, l2=0.0):
    """Linear policy on one-hot contexts whose rows reproduce the table ``P``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return LinearPolicy(np.log(P).T.copy(), l2)


def one_hot_dataset(ctx, actions, rewards, p0, K, m=None, cids=None, cprobs=None):
    """Dataset over one-hot contexts ``e_ctx``."""
    ctx = np.asarray(ctx)
    m = m if m is not None else int(ctx.max()) + 1
    X = np.eye(m)[ctx]
    return LoggedDataset(X, np.asarray(actions), np.asarray(rewards, dtype=float),
                         np.asarray(p0, dtype=float), K,
                         None if cids is None else np.asarray(cids),
                         None if cprobs is None else np.asarray(cprobs, dtype=float))


def reduction_gaps(rng):
    """Gaps of the five estimator reduction identities on one random instance."""
    ds, cl, rm = random_dataset(rng, n=30, K=5, d=3, m=4, num_clusters=2)
    pol = random_linear_policy(rng, ds.K, ds.d)
    zero = RewardModel.constant(ds.K, 0.0)
    tau = float(rng.uniform(0.0, 0.5))
    ident = Clustering.identity(ds.K)
    # identity-cluster annotations only need the logged action's propensity
    P0_rows = np.zeros((ds.n, ds.K))
    P0_rows[np.arange(ds.n), ds.actions] = ds.logging_probs
    dsi = with_clustering(ds, ident, P0_rows)
    return [
        estimate_cips(ds, pol, 0.0) - estimate_ips(ds, pol),
        estimate_dr(ds, pol, zero, tau) - estimate_cips(ds, pol, tau),
        estimate_mips(dsi, pol, ident) - estimate_ips(ds, pol),
        estimate_offcem(ds, pol, cl, zero) - estimate_mips(ds, pol, cl),
        estimate_offcem(dsi, pol, ident, rm) - estimate_dr(ds, pol, rm, 0.0),
    ]
