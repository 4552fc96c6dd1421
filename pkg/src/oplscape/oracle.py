"""Closed-form infinite-data solutions of every objective on a finite environment.

OPE objectives converge to deterministic policies (argmax of a per-context
score); PWLL objectives converge to stochastic policies proportional to
``E[g(r, pi_0)] * pi_0``. Expected rewards stand in for r throughout. All
argmax operations break ties toward the lowest index.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Clustering
from .envgen import Environment, policy_table
from .errors import ConfigError, ContractViolation
from .ope import OpeConfig, within_cluster_best
from .pwll import Weighting

__all__ = [
    "OraclePolicy",
    "asymptotic_ope_policy",
    "asymptotic_pwll_distribution",
    "expected_weight_table",
    "argmax_agreement",
    "oracle_for_method",
    "policy_as_oracle",
    "ORACLE_OF_METHOD",
]

# which asymptotic solution a trained method is compared against
ORACLE_OF_METHOD = {
    "ips": "ips", "cips": "cips", "dr": "dr", "mips": "mips", "offcem": "offcem",
    "potec": "potec", "lpi": "lpi", "clpi": "cips", "regkl": "regkl",
}


@dataclass(frozen=True, eq=False)
class OraclePolicy:
    """Per-context solution: action ids, optional (m, K) probabilities, optional cluster choices.

    Cluster-level oracles (MIPS) fix only the cluster; agreement with them is
    judged on the cluster of the deployed action.
    """

    method: str
    actions: np.ndarray
    probs: Optional[np.ndarray] = None
    clusters: Optional[np.ndarray] = None
    clustering: Optional[Clustering] = None
    params: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.actions.shape[0]

    @property
    def cluster_level(self):
        return self.method == "mips"

    def table(self, n_actions: int) -> np.ndarray:
        if self.probs is not None:
            return self.probs
        t = np.zeros((self.m, n_actions))
        t[np.arange(self.m), self.actions] = 1.0
        return t

    def to_csv(self, path, n_actions: int) -> None:
        """Rows ``context_id,action,prob`` for every context and action."""
        T = self.table(n_actions)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["context_id", "action", "prob"])
            for i in range(T.shape[0]):
                for a in range(T.shape[1]):
                    w.writerow([i, a, repr(float(T[i, a]))])


def _safe_ratio(num, den):
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _cluster_residual_mean(env, clustering, rhat):
    """E_{pi_0}[(r - r_hat) 1{phi(a)=c}] / pi_0(c|x); zero for clusters pi_0 never logs."""
    P = env.logging_table
    num = clustering.marginal(P * (env.reward_table - rhat))
    mass = clustering.marginal(P)
    return _safe_ratio(num, mass), mass


def asymptotic_ope_policy(env: Environment, method: str, cfg: OpeConfig | None = None) -> OraclePolicy:
    """Limit of argmax_pi V_hat_n(pi) as n -> infinity, per context."""
    cfg = cfg if cfg is not None else OpeConfig()
    R, P = env.reward_table, env.logging_table
    params = {"tau": cfg.tau}
    if method in ("dr", "offcem", "potec"):
        if cfg.reward_model is None:
            raise ConfigError(f"{method} oracle requires a reward model")
        rhat = cfg.reward_model.predict(env.contexts)
        params["reward_model"] = cfg.reward_model.mode
    if method in ("mips", "offcem", "potec"):
        clustering = cfg.clustering if cfg.clustering is not None else env.clustering
        if clustering is None:
            raise ConfigError(f"{method} oracle requires a clustering")
        params["num_clusters"] = clustering.num_clusters
    else:
        clustering = None

    if method == "ips":
        score = R * (P > 0)
    elif method == "cips":
        score = _safe_ratio(P * R, np.maximum(P, cfg.tau))
    elif method == "dr":
        # evaluated with the primed action index throughout
        score = rhat + _safe_ratio(P * (R - rhat), np.maximum(P, cfg.tau))
    elif method == "mips":
        num = clustering.marginal(P * R)
        mass = clustering.marginal(P)
        cscore = np.where(mass > 0, _safe_ratio(num, mass), -np.inf)
        chosen = np.argmax(cscore, axis=1)
        first = np.array([clustering.members(c)[0] for c in range(clustering.num_clusters)])
        return OraclePolicy(method, first[chosen], None, chosen, clustering, params)
    elif method == "offcem":
        corr, _ = _cluster_residual_mean(env, clustering, rhat)
        score = rhat + corr[:, clustering.assignment]
    elif method == "potec":
        corr, _ = _cluster_residual_mean(env, clustering, rhat)
        rmax, sel = within_cluster_best(rhat, clustering)
        chosen = np.argmax(rmax + corr, axis=1)
        actions = sel[np.arange(env.m), chosen]
        return OraclePolicy(method, actions, None, chosen, clustering, params)
    else:
        raise ConfigError(f"unknown OPE method {method!r}")
    actions = np.argmax(score, axis=1)
    chosen = None if clustering is None else clustering.assignment[actions]
    return OraclePolicy(method, actions, None, chosen, clustering, params)


def expected_weight_table(env: Environment, w: Weighting) -> np.ndarray:
    """E[g(r, pi_0(a|x))] under the environment's reward distribution, per (x, a)."""
    R, P = env.reward_table, env.logging_table
    if w.kind in ("lpi", "clpi"):
        return w(R, np.where(P > 0, P, 1.0))  # linear in r
    if env.reward_mode == "binary":
        return R * w(np.ones_like(R), P) + (1.0 - R) * w(np.zeros_like(R), P)
    h = env.noise_halfwidth()
    if w.kind == "regkl":
        # E[exp((r + U(-h, h)) / beta)] - 1 in closed form
        z = h / w.beta
        sinhc = np.where(z > 0, np.sinh(z) / np.where(z > 0, z, 1.0), 1.0)
        return np.exp(R / w.beta) * sinhc - 1.0
    nodes, wts = np.polynomial.legendre.leggauss(32)
    return sum(0.5 * wt * w(R + h * x, P) for x, wt in zip(nodes, wts))


def asymptotic_pwll_distribution(env: Environment, w: Weighting) -> OraclePolicy:
    """pi*(a|x) proportional to E[g(r, pi_0)] pi_0(a|x); uniform (with a warning) if all zero."""
    weights = expected_weight_table(env, w) * env.logging_table
    totals = weights.sum(axis=1, keepdims=True)
    dead = totals[:, 0] <= 0
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} context(s) have zero total weight; "
            "their limit is undefined and falls back to uniform",
            RuntimeWarning, stacklevel=2,
        )
    probs = np.where(dead[:, None], 1.0 / env.n_actions, _safe_ratio(weights, totals))
    params = {"tau": w.tau, "beta": w.beta}
    return OraclePolicy(w.kind, np.argmax(probs, axis=1), probs, None, None, params)


def argmax_agreement(p1: OraclePolicy, p2: OraclePolicy) -> float:
    """Fraction of contexts whose deployed choices coincide.

    When either side is a cluster-level oracle the comparison is between the
    clusters of the deployed actions.
    """
    if p1.m != p2.m:
        raise ContractViolation("oracle policies cover different context sets")
    a1, a2 = p1.actions, p2.actions
    if p1.cluster_level or p2.cluster_level:
        clustering = p1.clustering if p1.cluster_level else p2.clustering
        if clustering is None:
            raise ContractViolation("cluster-level comparison needs a clustering")
        return float(np.mean(clustering.assignment[a1] == clustering.assignment[a2]))
    return float(np.mean(a1 == a2))


def policy_as_oracle(env: Environment, policy, method: str = "trained") -> OraclePolicy:
    """Wrap a trained policy's (m, K) table so it can be compared with oracles."""
    T = policy_table(env, policy)
    if hasattr(policy, "deploy"):
        actions = np.asarray(policy.deploy(env.contexts))
    else:
        actions = np.argmax(T, axis=1)
    return OraclePolicy(method, actions, T, None, env.clustering, {})


def oracle_for_method(env: Environment, method: str, *, tau=0.0, beta=1.0,
                      reward_model=None, clustering=None) -> OraclePolicy:
    """The asymptotic solution a policy trained with ``method`` is compared against."""
    method = ORACLE_OF_METHOD.get(method, method)
    if method in ("lpi", "clpi", "regkl"):
        return asymptotic_pwll_distribution(env, Weighting(method, tau=tau, beta=beta))
    cfg = OpeConfig(tau=tau, reward_model=reward_model,
                    clustering=clustering if clustering is not None else env.clustering)
    return asymptotic_ope_policy(env, method, cfg)
