"""Off-policy value estimators and their policy gradients.

IPS, clipped IPS, doubly robust, marginalized IPS over action clusters,
OffCEM (cluster-level doubly robust) and the two-stage POTEC objective over
a cluster-level policy. The ``estimate_*`` functions evaluate the per-sample
formulas directly; ``ope_terms`` gives the same estimators in coefficient
form for gradients and training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Clustering, LoggedDataset, RewardModel, SoftmaxPolicy
from .errors import ConfigError, ContractViolation
from .objectives import OPE_METHODS, BoundObjective, OpeObjective, Terms

__all__ = [
    "OpeConfig",
    "ClusterPolicy",
    "estimate_ips",
    "estimate_cips",
    "estimate_dr",
    "estimate_mips",
    "estimate_offcem",
    "estimate_potec",
    "estimate",
    "ope_terms",
    "ope_gradient",
    "within_cluster_best",
]


@dataclass(frozen=True, eq=False)
class OpeConfig:
    tau: float = 0.0
    reward_model: Optional[RewardModel] = None
    clustering: Optional[Clustering] = None

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("clipping threshold tau must lie in [0, 1]")

    def check(self, method: str, ds: LoggedDataset) -> None:
        if method not in OPE_METHODS:
            raise ConfigError(f"unknown OPE method {method!r}")
        if method in ("dr", "offcem", "potec") and self.reward_model is None:
            raise ConfigError(f"{method} requires a reward model")
        if method in ("mips", "offcem", "potec"):
            _check_clusters(ds, self.clustering)


def _check_clusters(ds, clustering):
    if clustering is None:
        raise ConfigError("cluster-based estimators require a clustering")
    if not ds.has_clusters:
        raise ConfigError("dataset carries no cluster annotations")
    if clustering.n_actions != ds.n_actions:
        raise ConfigError("clustering does not cover the dataset's actions")
    if np.any(clustering.assignment[ds.actions] != ds.cluster_ids):
        raise ConfigError("dataset cluster ids disagree with the clustering")


def within_cluster_best(rhat: np.ndarray, clustering: Clustering):
    """Per context and cluster: the best predicted reward and the action attaining it.

    Ties go to the lowest action index.
    """
    U = rhat.shape[0]
    best = np.empty((U, clustering.num_clusters))
    arg = np.empty((U, clustering.num_clusters), dtype=np.int64)
    for c in range(clustering.num_clusters):
        members = clustering.members(c)
        j = np.argmax(rhat[:, members], axis=1)
        arg[:, c] = members[j]
        best[:, c] = rhat[np.arange(U), arg[:, c]]
    return best, arg


@dataclass(frozen=True, eq=False)
class ClusterPolicy:
    """POTEC's two-stage policy: a softmax over clusters, then a fixed greedy pick.

    Within cluster ``c`` the action is ``argmax_{a: phi(a)=c} r_hat(x, a)``;
    only ``cluster_policy`` (a softmax over the C clusters) is trainable.
    """

    cluster_policy: SoftmaxPolicy
    clustering: Clustering
    reward_model: RewardModel

    def __post_init__(self):
        if self.cluster_policy.n_actions != self.clustering.num_clusters:
            raise ContractViolation("cluster policy must score every cluster")
        if self.reward_model.n_actions != self.clustering.n_actions:
            raise ContractViolation("reward model and clustering disagree on K")

    kind = "cluster-two-stage"

    @property
    def n_actions(self):
        return self.clustering.n_actions

    @property
    def dim(self):
        return self.cluster_policy.dim

    @property
    def is_linear(self):
        return self.cluster_policy.is_linear

    @property
    def l2_strength(self):
        return self.cluster_policy.l2_strength

    @property
    def params(self):
        return self.cluster_policy.params

    @property
    def num_params(self):
        return self.cluster_policy.num_params

    def with_params(self, params):
        return ClusterPolicy(self.cluster_policy.with_params(params), self.clustering,
                             self.reward_model)

    def with_l2(self, l2_strength):
        return ClusterPolicy(self.cluster_policy.with_l2(l2_strength), self.clustering,
                             self.reward_model)

    def penalty(self):
        return self.cluster_policy.penalty()

    def cluster_probs(self, X):
        return self.cluster_policy.probs(X)

    def rhat_max(self, X):
        return within_cluster_best(self.reward_model.predict(X), self.clustering)[0]

    def selected_actions(self, X):
        return within_cluster_best(self.reward_model.predict(X), self.clustering)[1]

    def probs(self, X):
        """Composed action distribution sum_c pi_RM(a|x,c) pi_CL(c|x)."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        Pc = self.cluster_policy.probs(X2)
        sel = self.selected_actions(X2)
        P = np.zeros((X2.shape[0], self.n_actions))
        rows = np.repeat(np.arange(X2.shape[0]), Pc.shape[1])
        np.add.at(P, (rows, sel.ravel()), Pc.ravel())
        return P[0] if single else P

    def deploy(self, X):
        return np.argmax(self.probs(X), axis=-1)


def _rows(ds, policy):
    Xu, inv = ds.unique_contexts
    return Xu, inv, policy.probs(Xu)


def estimate_ips(ds: LoggedDataset, policy) -> float:
    r"""IPS estimate :math:`\frac1n\sum_i \frac{\pi(a_i|x_i)}{\pi_0(a_i|x_i)} r_i`."""
    _, inv, P = _rows(ds, policy)
    return ds.mean(P[inv, ds.actions] / ds.logging_probs * ds.rewards)


def estimate_cips(ds: LoggedDataset, policy, tau: float) -> float:
    """IPS with propensities clipped from below at ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError("tau must lie in [0, 1]")
    _, inv, P = _rows(ds, policy)
    return ds.mean(P[inv, ds.actions] / np.maximum(ds.logging_probs, tau) * ds.rewards)


def estimate_dr(ds: LoggedDataset, policy, rm: RewardModel, tau: float = 0.0) -> float:
    """Doubly robust: clipped weighted residual plus the exact model value under pi."""
    Xu, inv, P = _rows(ds, policy)
    R = rm.predict(Xu)
    resid = ds.rewards - R[inv, ds.actions]
    dm = np.sum(P * R, axis=1)[inv]
    return ds.mean(P[inv, ds.actions] * resid / np.maximum(ds.logging_probs, tau) + dm)


def estimate_mips(ds: LoggedDataset, policy, clustering: Clustering) -> float:
    """IPS on cluster marginals pi(c|x) / pi_0(c|x)."""
    _check_clusters(ds, clustering)
    _, inv, P = _rows(ds, policy)
    Pc = clustering.marginal(P)
    return ds.mean(Pc[inv, ds.cluster_ids] / ds.cluster_logging_probs * ds.rewards)


def estimate_offcem(ds: LoggedDataset, policy, clustering: Clustering, rm: RewardModel) -> float:
    """Cluster-ratio weighted residuals plus the exact model value under pi."""
    _check_clusters(ds, clustering)
    Xu, inv, P = _rows(ds, policy)
    R = rm.predict(Xu)
    Pc = clustering.marginal(P)
    resid = ds.rewards - R[inv, ds.actions]
    dm = np.sum(P * R, axis=1)[inv]
    return ds.mean(Pc[inv, ds.cluster_ids] / ds.cluster_logging_probs * resid + dm)


def estimate_potec(ds: LoggedDataset, cp: ClusterPolicy) -> float:
    """POTEC objective of the cluster-level policy of ``cp``."""
    _check_clusters(ds, cp.clustering)
    Xu, inv = ds.unique_contexts
    Pcl = cp.cluster_probs(Xu)
    R = cp.reward_model.predict(Xu)
    rmax, _ = within_cluster_best(R, cp.clustering)
    resid = ds.rewards - R[inv, ds.actions]
    model_term = np.sum(Pcl * rmax, axis=1)[inv]
    return ds.mean(Pcl[inv, ds.cluster_ids] / ds.cluster_logging_probs * resid + model_term)


def estimate(method: str, ds: LoggedDataset, policy, cfg: OpeConfig) -> float:
    cfg.check(method, ds)
    if method == "ips":
        return estimate_ips(ds, policy)
    if method == "cips":
        return estimate_cips(ds, policy, cfg.tau)
    if method == "dr":
        return estimate_dr(ds, policy, cfg.reward_model, cfg.tau)
    if method == "mips":
        return estimate_mips(ds, policy, cfg.clustering)
    if method == "offcem":
        return estimate_offcem(ds, policy, cfg.clustering, cfg.reward_model)
    if not isinstance(policy, ClusterPolicy):
        policy = ClusterPolicy(policy, cfg.clustering, cfg.reward_model)
    return estimate_potec(ds, policy)


def ope_terms(method: str, ds: LoggedDataset, cfg: OpeConfig) -> Terms:
    """Coefficient form of an estimator; see ``objectives.Terms``."""
    cfg.check(method, ds)
    Xu, inv = ds.unique_contexts
    w = ds.sample_weights
    r, p0, a = ds.rewards, ds.logging_probs, ds.actions
    K = ds.n_actions
    common = dict(unique=Xu, inverse=inv, row_weights=w, log=False)
    if method == "ips":
        return Terms(slots=a, values=w * r / p0, n_slots=K, **common)
    if method == "cips":
        return Terms(slots=a, values=w * r / np.maximum(p0, cfg.tau), n_slots=K, **common)
    if method == "mips":
        return Terms(slots=ds.cluster_ids, values=w * r / ds.cluster_logging_probs,
                     n_slots=cfg.clustering.num_clusters,
                     expand=cfg.clustering.assignment, **common)
    R = cfg.reward_model.predict(Xu)
    resid = r - R[inv, a]
    if method == "dr":
        return Terms(slots=a, values=w * resid / np.maximum(p0, cfg.tau), n_slots=K,
                     dense=R, **common)
    if method == "offcem":
        return Terms(slots=ds.cluster_ids, values=w * resid / ds.cluster_logging_probs,
                     n_slots=cfg.clustering.num_clusters,
                     expand=cfg.clustering.assignment, dense=R, **common)
    rmax, _ = within_cluster_best(R, cfg.clustering)
    return Terms(slots=ds.cluster_ids, values=w * resid / ds.cluster_logging_probs,
                 n_slots=cfg.clustering.num_clusters, dense=rmax, **common)


def ope_gradient(method: str, ds: LoggedDataset, policy, cfg: OpeConfig) -> np.ndarray:
    """Exact gradient of the estimate with respect to the trainable parameters.

    For ``potec`` the parameters are those of the cluster-level policy.
    """
    bound = BoundObjective(OpeObjective(method, cfg), ds)
    return bound.gradient(policy, regularize=False)
