"""Synthetic finite environments, logged-data sampling and CSV ingestion."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import Clustering, LoggedDataset, RewardModel, _frozen, softmax
from .errors import ConfigError, ContractViolation, DataValidationError

__all__ = [
    "EnvironmentSpec",
    "Environment",
    "make_environment",
    "sample_logged",
    "population_dataset",
    "true_value",
    "deployed_value",
    "policy_table",
    "make_reward_model",
    "ingest_csv",
    "write_csv",
]

REWARD_MODES = ("binary", "continuous")


@dataclass(frozen=True)
class EnvironmentSpec:
    """Recipe for a synthetic environment; serializes to the JSON environment spec."""

    m: int
    K: int
    d: int
    seed: int = 0
    reward_sharpness: float = 4.0
    logging_temperature: float = 1.0
    support_fraction: float = 1.0
    num_clusters: int = 0
    reward_mode: str = "binary"
    reward_noise: float = 0.1
    logging_noise: float = 1.0
    clustering_mode: str = "kmeans"

    def __post_init__(self):
        if min(self.m, self.K, self.d) < 1:
            raise ConfigError("m, K and d must all be >= 1")
        if self.m > 4096:
            raise ConfigError("finite context sets are limited to 4096 contexts")
        if not 0.0 < self.support_fraction <= 1.0:
            raise ConfigError("support_fraction must lie in (0, 1]")
        if not self.logging_temperature > 0:
            raise ConfigError("logging_temperature must be positive")
        if self.reward_mode not in REWARD_MODES:
            raise ConfigError(f"reward_mode must be one of {REWARD_MODES}")
        if not 0 <= self.num_clusters <= self.K:
            raise ConfigError("num_clusters must lie in [0, K]")
        if self.clustering_mode not in ("kmeans", "random"):
            raise ConfigError("clustering_mode must be 'kmeans' or 'random'")
        if not 0.0 <= self.reward_noise <= 0.5:
            raise ConfigError("reward_noise must lie in [0, 0.5]")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvironmentSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown environment spec keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Environment:
    """Finite ground truth: weighted contexts, reward means r(x, a) and logging table pi_0."""

    contexts: np.ndarray
    context_weights: np.ndarray
    reward_table: np.ndarray
    logging_table: np.ndarray
    clustering: Optional[Clustering] = None
    rng_seed: int = 0
    reward_mode: str = "binary"
    reward_noise: float = 0.0
    action_features: Optional[np.ndarray] = None
    spec: Optional[EnvironmentSpec] = field(default=None, repr=False)

    def __post_init__(self):
        X = _frozen(self.contexts)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        R = _frozen(self.reward_table)
        P = _frozen(self.logging_table)
        w = _frozen(self.context_weights)
        m = X.shape[0]
        if R.ndim != 2 or R.shape[0] != m or P.shape != R.shape:
            raise ContractViolation("reward and logging tables must both be (m, K)")
        if w.shape != (m,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ContractViolation("context weights must be a probability vector")
        if np.any(R < 0) or np.any(R > 1):
            raise ContractViolation("rewards must lie in [0, 1]")
        if np.any(P < 0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
            raise ContractViolation("logging rows must be probability vectors")
        if self.clustering is not None and self.clustering.n_actions != R.shape[1]:
            raise ContractViolation("clustering must cover all K actions")
        if self.reward_mode not in REWARD_MODES:
            raise ContractViolation(f"reward_mode must be one of {REWARD_MODES}")
        for name, v in (("contexts", X), ("reward_table", R), ("logging_table", P), ("context_weights", w)):
            object.__setattr__(self, name, v)
        if self.action_features is not None:
            object.__setattr__(self, "action_features", _frozen(self.action_features))

    @classmethod
    def from_tables(cls, reward_table, logging_table, contexts=None, context_weights=None,
                    clustering=None, reward_mode="binary", reward_noise=0.0, seed=0):
        R = np.atleast_2d(np.asarray(reward_table, dtype=float))
        P = np.atleast_2d(np.asarray(logging_table, dtype=float))
        m = R.shape[0]
        if contexts is None:
            contexts = np.eye(m)
        if context_weights is None:
            context_weights = np.full(m, 1.0 / m)
        return cls(contexts, context_weights, R, P, clustering, seed, reward_mode, reward_noise)

    @property
    def m(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    @property
    def n_actions(self) -> int:
        return self.reward_table.shape[1]

    @property
    def K(self) -> int:
        return self.n_actions

    def cluster_logging_table(self) -> np.ndarray:
        if self.clustering is None:
            raise ConfigError("environment has no clustering")
        return self.clustering.marginal(self.logging_table)

    def with_clustering(self, clustering: Optional[Clustering]) -> "Environment":
        return Environment(
            self.contexts, self.context_weights, self.reward_table, self.logging_table,
            clustering, self.rng_seed, self.reward_mode, self.reward_noise,
            self.action_features, self.spec,
        )

    def noise_halfwidth(self) -> np.ndarray:
        """Half-width of the symmetric truncated noise of continuous rewards, per (x, a)."""
        R = self.reward_table
        return np.minimum(self.reward_noise, np.minimum(R, 1.0 - R))


def _kmeans_clustering(features, num_clusters, seed):
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=num_clusters, n_init=4, random_state=seed % (2**32))
    labels = km.fit_predict(features)
    # relabel by first appearance; merge away any cluster k-means left empty
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return Clustering(order[inv.reshape(-1)])


def make_environment(spec: EnvironmentSpec | dict) -> Environment:
    """Build a deterministic synthetic environment from its spec.

    Context and action feature vectors are standard normal; their scaled inner
    products are the affinities. Mean rewards are the sigmoid of
    ``reward_sharpness * affinity``. The logging policy is a softmax over
    noisy affinities at ``logging_temperature``, with all but a
    ``support_fraction`` share of the actions in each context set to zero.
    """
    if isinstance(spec, dict):
        spec = EnvironmentSpec.from_dict(spec)
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.m, spec.d))
    B = rng.standard_normal((spec.K, spec.d))
    A = X @ B.T / math.sqrt(spec.d)
    R = 1.0 / (1.0 + np.exp(-spec.reward_sharpness * A))

    noisy = A + spec.logging_noise * rng.standard_normal(A.shape)
    if math.isinf(spec.logging_temperature):
        P = np.full(A.shape, 1.0 / spec.K)
    else:
        P = softmax(noisy / spec.logging_temperature)
    if spec.support_fraction < 1.0:
        keep = max(1, math.ceil(spec.support_fraction * spec.K))
        ranks = np.argsort(rng.random(A.shape), axis=1)
        mask = np.zeros(A.shape, dtype=bool)
        np.put_along_axis(mask, ranks[:, :keep], True, axis=1)
        P = np.where(mask, P, 0.0)
        P /= P.sum(axis=1, keepdims=True)

    clustering = None
    if spec.num_clusters > 0:
        if spec.clustering_mode == "random":
            clustering = Clustering.random(spec.K, spec.num_clusters, rng)
        else:
            clustering = _kmeans_clustering(A.T, spec.num_clusters, spec.seed)

    weights = np.full(spec.m, 1.0 / spec.m)
    return Environment(
        X, weights, R, P, clustering, spec.seed, spec.reward_mode,
        spec.reward_noise if spec.reward_mode == "continuous" else 0.0, B, spec,
    )


def _sample_actions(logging_rows, u):
    cdf = np.cumsum(logging_rows, axis=1)
    cdf /= cdf[:, -1:]
    # strict inequality never selects a zero-probability action
    return (cdf <= u[:, None]).sum(axis=1)


def _annotate(env, ctx, actions):
    if env.clustering is None:
        return None, None
    c = env.clustering.assignment[actions]
    pc = env.cluster_logging_table()[ctx, c]
    return c, np.maximum(pc, env.logging_table[ctx, actions])


def sample_logged(env: Environment, n: int, seed: int) -> LoggedDataset:
    """Draw n logged interactions: x by weight, a ~ pi_0(.|x), r around r(x, a)."""
    if n < 1:
        raise ContractViolation("n must be >= 1")
    rng = np.random.default_rng(seed)
    ctx = rng.choice(env.m, size=n, p=env.context_weights)
    u = rng.random(n)
    actions = np.empty(n, dtype=np.int64)
    for c in np.unique(ctx):
        rows = np.flatnonzero(ctx == c)
        actions[rows] = _sample_actions(env.logging_table[c][None, :], u[rows])
    mean = env.reward_table[ctx, actions]
    if env.reward_mode == "binary":
        rewards = (rng.random(n) < mean).astype(float)
    else:
        h = env.noise_halfwidth()[ctx, actions]
        rewards = np.clip(mean + h * rng.uniform(-1.0, 1.0, n), 0.0, 1.0)
    cids, cprobs = _annotate(env, ctx, actions)
    return LoggedDataset(
        env.contexts[ctx], actions, rewards, env.logging_table[ctx, actions],
        env.n_actions, cids, cprobs,
    )


def population_dataset(env: Environment) -> LoggedDataset:
    """The infinite-data limit of ``sample_logged`` as a weighted dataset.

    One row per supported (context, action) and reward outcome, weighted by
    its probability. Binary rewards are represented exactly; continuous
    rewards collapse to their mean, which is exact for objectives that are
    linear in the reward.
    """
    ctx, act = np.nonzero(env.logging_table > 0)
    base = env.context_weights[ctx] * env.logging_table[ctx, act]
    mean = env.reward_table[ctx, act]
    if env.reward_mode == "binary":
        ctx = np.concatenate([ctx, ctx])
        act = np.concatenate([act, act])
        rewards = np.concatenate([np.ones_like(mean), np.zeros_like(mean)])
        weights = np.concatenate([base * mean, base * (1.0 - mean)])
        keep = weights > 0
        ctx, act, rewards, weights = ctx[keep], act[keep], rewards[keep], weights[keep]
    else:
        rewards, weights = mean, base
    cids, cprobs = _annotate(env, ctx, act)
    return LoggedDataset(
        env.contexts[ctx], act, rewards, env.logging_table[ctx, act],
        env.n_actions, cids, cprobs, weights,
    )


def policy_table(env: Environment, policy) -> np.ndarray:
    """(m, K) action probabilities of a policy object or an explicit table."""
    if hasattr(policy, "probs"):
        return np.asarray(policy.probs(env.contexts))
    table = np.asarray(policy, dtype=float)
    if table.shape != env.reward_table.shape:
        raise ContractViolation("policy table must be (m, K)")
    return table


def true_value(env: Environment, policy) -> float:
    """Exact V(pi) = sum_x w(x) sum_a pi(a|x) r(x, a)."""
    P = policy_table(env, policy)
    return float(env.context_weights @ np.einsum("ij,ij->i", P, env.reward_table))


def deployed_value(env: Environment, policy) -> float:
    """Value of the argmax-deterministic version of ``policy``."""
    if hasattr(policy, "deploy"):
        actions = policy.deploy(env.contexts)
    else:
        actions = np.argmax(policy_table(env, policy), axis=1)
    return float(env.context_weights @ env.reward_table[np.arange(env.m), actions])


def make_reward_model(env: Environment, noise: float = 0.0, seed: int = 0) -> RewardModel:
    """Exact reward table, or one perturbed by uniform noise of amplitude ``noise``."""
    if noise == 0.0:
        return RewardModel.from_table(env.contexts, env.reward_table, "exact-oracle")
    rng = np.random.default_rng(seed)
    R = env.reward_table + rng.uniform(-noise, noise, env.reward_table.shape)
    return RewardModel.from_table(env.contexts, np.clip(R, 0.0, 1.0), "perturbed-oracle")


_BASE_COLUMNS = ("action", "reward", "logging_prob")
_CLUSTER_COLUMNS = ("cluster", "cluster_logging_prob")


def write_csv(ds: LoggedDataset, path) -> None:
    """Write a dataset in the logged-data CSV format (weights are not stored)."""
    header = [f"ctx_{j}" for j in range(ds.d)] + list(_BASE_COLUMNS)
    if ds.has_clusters:
        header += list(_CLUSTER_COLUMNS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.contexts[i]]
            row += [int(ds.actions[i]), repr(float(ds.rewards[i])), repr(float(ds.logging_probs[i]))]
            if ds.has_clusters:
                row += [int(ds.cluster_ids[i]), repr(float(ds.cluster_logging_probs[i]))]
            w.writerow(row)


def ingest_csv(path, n_actions: Optional[int] = None) -> LoggedDataset:
    """Parse a logged-data CSV file.

    The header must be ``ctx_0..ctx_{d-1},action,reward,logging_prob`` with
    optional trailing ``cluster,cluster_logging_prob``. ``n_actions`` defaults
    to one more than the largest logged action.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataValidationError(f"{path}: empty file, header required") from None
        d = 0
        while d < len(header) and header[d] == f"ctx_{d}":
            d += 1
        rest = tuple(header[d:])
        if d == 0 or rest not in (_BASE_COLUMNS, _BASE_COLUMNS + _CLUSTER_COLUMNS):
            raise DataValidationError(f"{path}: line 1: unexpected header {header}")
        has_clusters = len(rest) == 5
        X, a, r, p, c, pc = [], [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                X.append([float(v) for v in row[:d]])
                a.append(int(row[d]))
                r.append(float(row[d + 1]))
                p.append(float(row[d + 2]))
                if has_clusters:
                    c.append(int(row[d + 3]))
                    pc.append(float(row[d + 4]))
            except ValueError as exc:
                raise DataValidationError(f"{path}: line {lineno}: {exc}") from None
            if not 0.0 < p[-1] <= 1.0:
                raise DataValidationError(
                    f"{path}: line {lineno}: propensity {p[-1]} outside (0, 1]"
                )
            if a[-1] < 0:
                raise DataValidationError(f"{path}: line {lineno}: negative action id")
    if not a:
        raise DataValidationError(f"{path}: no data rows")
    K = n_actions if n_actions is not None else max(a) + 1
    return LoggedDataset(
        np.array(X), np.array(a), np.array(r), np.array(p), K,
        np.array(c) if has_clusters else None,
        np.array(pc) if has_clusters else None,
    )
