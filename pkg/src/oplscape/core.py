"""Shared domain types: softmax policies, action clusterings, reward models and logged data.

Every type here is immutable after construction. Arrays are copied on the way
in and marked read-only so that instances can be shared freely between
workers.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ContractViolation, DataValidationError

__all__ = [
    "SoftmaxPolicy",
    "LinearPolicy",
    "InnerProductPolicy",
    "Clustering",
    "RewardModel",
    "LoggedDataset",
    "softmax",
    "log_softmax",
    "policy_probs",
    "cluster_marginal",
    "deploy_argmax",
]


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def softmax(scores):
    """Row-wise softmax with max-score subtraction."""
    z = scores - scores.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def log_softmax(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class SoftmaxPolicy(ABC):
    """A policy pi(a|x) = softmax over K action scores computed from the context.

    Subclasses expose their trainable parameters as one flat vector so that
    objectives, trainers and gradient checks can treat every family alike.
    """

    l2_strength: float

    @property
    @abstractmethod
    def kind(self) -> str: ...

    @property
    @abstractmethod
    def n_actions(self) -> int: ...

    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    @abstractmethod
    def is_linear(self) -> bool:
        """True when the scores are linear in the trainable parameters."""

    @property
    @abstractmethod
    def params(self) -> np.ndarray: ...

    @abstractmethod
    def with_params(self, params) -> "SoftmaxPolicy": ...

    @abstractmethod
    def with_l2(self, l2_strength: float) -> "SoftmaxPolicy": ...

    @abstractmethod
    def _scores(self, X: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def backprop(self, X: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(G * scores(X))`` with respect to the flat parameters."""

    @property
    def num_params(self) -> int:
        return int(self.params.size)

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.dim:
            raise ContractViolation(
                f"context dimension {X2.shape[-1]} does not match policy dimension {self.dim}"
            )
        return X2, single

    def scores(self, X) -> np.ndarray:
        X2, single = self._check(X)
        s = self._scores(X2)
        return s[0] if single else s

    def probs(self, X) -> np.ndarray:
        X2, single = self._check(X)
        p = softmax(self._scores(X2))
        return p[0] if single else p

    def log_probs(self, X) -> np.ndarray:
        X2, single = self._check(X)
        lp = log_softmax(self._scores(X2))
        return lp[0] if single else lp

    def deploy(self, X) -> np.ndarray:
        """Deterministic argmax actions; ties go to the lowest index."""
        return np.argmax(self.scores(X), axis=-1)

    def penalty(self) -> float:
        if self.l2_strength == 0.0:
            return 0.0
        theta = self.params
        return 0.5 * self.l2_strength * float(theta @ theta)

    def penalty_grad(self) -> np.ndarray:
        return self.l2_strength * self.params


@dataclass(frozen=True, eq=False)
class LinearPolicy(SoftmaxPolicy):
    """Linear per-action scores ``s_a(x) = theta_a . x`` with ``theta`` of shape (K, d)."""

    theta: np.ndarray
    l2_strength: float = 0.0

    def __post_init__(self):
        theta = _frozen(self.theta)
        if theta.ndim != 2:
            raise ContractViolation("theta must be a (K, d) matrix")
        if self.l2_strength < 0:
            raise ContractViolation("l2_strength must be nonnegative")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, n_actions: int, dim: int, l2_strength: float = 0.0) -> "LinearPolicy":
        return cls(np.zeros((n_actions, dim)), l2_strength)

    kind = "linear-per-action"

    @property
    def n_actions(self):
        return self.theta.shape[0]

    @property
    def dim(self):
        return self.theta.shape[1]

    @property
    def is_linear(self):
        return True

    @property
    def params(self):
        return self.theta.ravel().copy()

    def with_params(self, params):
        return LinearPolicy(np.reshape(params, self.theta.shape), self.l2_strength)

    def with_l2(self, l2_strength):
        return LinearPolicy(self.theta, l2_strength)

    def _scores(self, X):
        return X @ self.theta.T

    def backprop(self, X, G):
        return (G.T @ X).ravel()


@dataclass(frozen=True, eq=False)
class InnerProductPolicy(SoftmaxPolicy):
    """Scores ``s_a(x) = <e_a, f(x)>`` with fixed action embeddings ``e_a``.

    The encoder ``f`` is linear (``W x``, lightweight) or has one tanh hidden
    layer (``W tanh(H x)``, heavyweight). Only the encoder trains.
    """

    encoder: np.ndarray
    embeddings: np.ndarray
    hidden: Optional[np.ndarray] = None
    l2_strength: float = 0.0

    def __post_init__(self):
        enc = _frozen(self.encoder)
        emb = _frozen(self.embeddings)
        hid = None if self.hidden is None else _frozen(self.hidden)
        if emb.ndim != 2 or enc.ndim != 2 or enc.shape[0] != emb.shape[1]:
            raise ContractViolation("encoder rows must match the embedding width")
        if hid is not None and (hid.ndim != 2 or hid.shape[0] != enc.shape[1]):
            raise ContractViolation("hidden layer width must match encoder columns")
        if self.l2_strength < 0:
            raise ContractViolation("l2_strength must be nonnegative")
        object.__setattr__(self, "encoder", enc)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "hidden", hid)

    kind = "inner-product"

    @property
    def n_actions(self):
        return self.embeddings.shape[0]

    @property
    def dim(self):
        return self.encoder.shape[1] if self.hidden is None else self.hidden.shape[1]

    @property
    def is_linear(self):
        return self.hidden is None

    @property
    def params(self):
        if self.hidden is None:
            return self.encoder.ravel().copy()
        return np.concatenate([self.hidden.ravel(), self.encoder.ravel()])

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        if self.hidden is None:
            return InnerProductPolicy(
                params.reshape(self.encoder.shape), self.embeddings, None, self.l2_strength
            )
        k = self.hidden.size
        return InnerProductPolicy(
            params[k:].reshape(self.encoder.shape),
            self.embeddings,
            params[:k].reshape(self.hidden.shape),
            self.l2_strength,
        )

    def with_l2(self, l2_strength):
        return InnerProductPolicy(self.encoder, self.embeddings, self.hidden, l2_strength)

    def _features(self, X):
        if self.hidden is None:
            return X @ self.encoder.T, None
        z = np.tanh(X @ self.hidden.T)
        return z @ self.encoder.T, z

    def _scores(self, X):
        return self._features(X)[0] @ self.embeddings.T

    def backprop(self, X, G):
        GE = G @ self.embeddings
        if self.hidden is None:
            return (GE.T @ X).ravel()
        z = np.tanh(X @ self.hidden.T)
        d_enc = GE.T @ z
        dz = (GE @ self.encoder) * (1.0 - z * z)
        d_hid = dz.T @ X
        return np.concatenate([d_hid.ravel(), d_enc.ravel()])


@dataclass(frozen=True, eq=False)
class Clustering:
    """A map phi from K actions onto ``num_clusters`` nonempty clusters."""

    assignment: np.ndarray
    num_clusters: int = field(default=-1)

    def __post_init__(self):
        a = _frozen(self.assignment, dtype=np.int64)
        if a.ndim != 1 or a.size == 0:
            raise ContractViolation("assignment must be a nonempty 1-d array")
        c = int(a.max()) + 1 if self.num_clusters < 0 else int(self.num_clusters)
        if a.min() < 0 or a.max() >= c:
            raise ContractViolation("cluster ids must lie in [0, num_clusters)")
        if np.bincount(a, minlength=c).min() == 0:
            raise ContractViolation("every cluster must be nonempty")
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "num_clusters", c)

    @classmethod
    def identity(cls, n_actions):
        return cls(np.arange(n_actions), n_actions)

    @classmethod
    def single(cls, n_actions):
        return cls(np.zeros(n_actions, dtype=np.int64), 1)

    @classmethod
    def random(cls, n_actions, num_clusters, rng):
        """Balanced random assignment; every cluster gets at least one action."""
        if not 1 <= num_clusters <= n_actions:
            raise ContractViolation("need 1 <= num_clusters <= n_actions")
        a = rng.permutation(np.arange(n_actions) % num_clusters)
        return cls(a, num_clusters)

    @property
    def n_actions(self):
        return self.assignment.size

    @cached_property
    def onehot(self) -> np.ndarray:
        m = np.zeros((self.n_actions, self.num_clusters))
        m[np.arange(self.n_actions), self.assignment] = 1.0
        m.setflags(write=False)
        return m

    def members(self, c):
        return np.flatnonzero(self.assignment == c)

    def marginal(self, P):
        """Cluster marginals of action distributions (last axis K -> C)."""
        P = np.asarray(P, dtype=float)
        if P.shape[-1] != self.n_actions:
            raise ContractViolation("clustering does not cover the policy's actions")
        return P @ self.onehot


REWARD_MODEL_MODES = ("exact-oracle", "perturbed-oracle", "least-squares-fit", "constant")


@dataclass(frozen=True, eq=False)
class RewardModel:
    """Predicted rewards r_hat(x, a), clipped to [0, 1].

    Table models look contexts up by exact value; least-squares models fit
    one affine predictor per action.
    """

    mode: str
    n_actions: int
    table: Optional[np.ndarray] = None
    contexts: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    value: float = 0.0

    def __post_init__(self):
        if self.mode not in REWARD_MODEL_MODES:
            raise ContractViolation(f"unknown reward model mode {self.mode!r}")
        if self.table is not None:
            object.__setattr__(self, "table", _frozen(np.clip(self.table, 0.0, 1.0)))
            object.__setattr__(self, "contexts", _frozen(self.contexts))
            if self.table.shape != (self.contexts.shape[0], self.n_actions):
                raise ContractViolation("reward table must be (m, K) matching its contexts")
        if self.weights is not None:
            object.__setattr__(self, "weights", _frozen(self.weights))

    @classmethod
    def constant(cls, n_actions, value=0.0):
        return cls("constant", n_actions, value=float(np.clip(value, 0.0, 1.0)))

    @classmethod
    def from_table(cls, contexts, table, mode="exact-oracle"):
        table = np.asarray(table, dtype=float)
        return cls(mode, table.shape[1], table=table, contexts=contexts)

    @classmethod
    def fit_least_squares(cls, ds: "LoggedDataset", ridge=1e-3):
        """Per-action ridge regression of observed rewards on [x, 1]."""
        Z = np.hstack([ds.contexts, np.ones((ds.n, 1))])
        w = ds.sample_weights
        W = np.zeros((Z.shape[1], ds.n_actions))
        eye = ridge * np.eye(Z.shape[1])
        for a in range(ds.n_actions):
            idx = ds.actions == a
            if not idx.any():
                continue
            Za = Z[idx] * w[idx, None]
            W[:, a] = np.linalg.solve(Za.T @ Z[idx] + eye, Za.T @ ds.rewards[idx])
        return cls("least-squares-fit", ds.n_actions, weights=W)

    @cached_property
    def _index(self):
        return {row.tobytes(): i for i, row in enumerate(self.contexts)}

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.mode == "constant":
            return np.full((X.shape[0], self.n_actions), self.value)
        if self.weights is not None:
            Z = np.hstack([X, np.ones((X.shape[0], 1))])
            return np.clip(Z @ self.weights, 0.0, 1.0)
        rows = []
        for x in np.ascontiguousarray(X):
            i = self._index.get(x.tobytes())
            if i is None:
                raise ContractViolation("reward table has no entry for this context")
            rows.append(i)
        return np.asarray(self.table[rows])


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Logged bandit feedback ``(x_i, a_i, r_i)`` with logging propensities.

    ``weights`` is an optional nonnegative per-row multiplicity. It lets a
    finite environment be represented exactly by its expectation (one row per
    context, action and reward outcome); plain logs leave it unset.
    """

    contexts: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    logging_probs: np.ndarray
    n_actions: int
    cluster_ids: Optional[np.ndarray] = None
    cluster_logging_probs: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _frozen(self.contexts)
        if X.ndim == 1:
            X = _frozen(X[:, None])
        a = _frozen(self.actions, dtype=np.int64)
        r = _frozen(self.rewards)
        p = _frozen(self.logging_probs)
        n = X.shape[0]
        for name, v in (("actions", a), ("rewards", r), ("logging_probs", p)):
            if v.shape != (n,):
                raise DataValidationError(f"{name} must have one entry per context row")
        if n == 0:
            raise DataValidationError("dataset is empty")
        if a.min() < 0 or a.max() >= self.n_actions:
            raise DataValidationError("actions out of range [0, K)")
        if not np.all((r >= 0.0) & (r <= 1.0)):
            raise DataValidationError("rewards must lie in [0, 1]")
        if not np.all((p > 0.0) & (p <= 1.0)):
            raise DataValidationError("logging probabilities must lie in (0, 1]")
        if (self.cluster_ids is None) != (self.cluster_logging_probs is None):
            raise DataValidationError(
                "cluster_ids and cluster_logging_probs must be given together"
            )
        if self.cluster_ids is not None:
            c = _frozen(self.cluster_ids, dtype=np.int64)
            pc = _frozen(self.cluster_logging_probs)
            if c.shape != (n,) or pc.shape != (n,):
                raise DataValidationError("cluster annotations must have one entry per row")
            if c.min() < 0:
                raise DataValidationError("cluster ids must be nonnegative")
            if np.any(pc < p * (1 - 1e-12)) or np.any(pc > 1.0 + 1e-12):
                raise DataValidationError(
                    "cluster logging probability must dominate its member's propensity"
                )
            object.__setattr__(self, "cluster_ids", c)
            object.__setattr__(self, "cluster_logging_probs", pc)
        if self.weights is not None:
            w = _frozen(self.weights)
            if w.shape != (n,) or np.any(w < 0) or w.sum() <= 0:
                raise DataValidationError("weights must be nonnegative with a positive total")
            object.__setattr__(self, "weights", w)
        object.__setattr__(self, "contexts", X)
        object.__setattr__(self, "actions", a)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "logging_probs", p)

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def d(self) -> int:
        return self.contexts.shape[1]

    @property
    def K(self) -> int:
        return self.n_actions

    @property
    def has_clusters(self) -> bool:
        return self.cluster_ids is not None

    @cached_property
    def sample_weights(self) -> np.ndarray:
        w = np.ones(self.n) if self.weights is None else np.array(self.weights)
        w.setflags(write=False)
        return w

    @cached_property
    def unique_contexts(self):
        """Distinct context rows and the row -> distinct index map."""
        Xu, inv = np.unique(self.contexts, axis=0, return_inverse=True)
        return Xu, inv.reshape(-1)

    def mean(self, values) -> float:
        """(Weighted) sample mean in index order."""
        values = np.asarray(values, dtype=float)
        if self.weights is None:
            return float(values.mean())
        return float(self.weights @ values / self.weights.sum())

    def subset(self, idx) -> "LoggedDataset":
        idx = np.asarray(idx)
        opt = lambda v: None if v is None else v[idx]  # noqa: E731
        return LoggedDataset(
            self.contexts[idx],
            self.actions[idx],
            self.rewards[idx],
            self.logging_probs[idx],
            self.n_actions,
            opt(self.cluster_ids),
            opt(self.cluster_logging_probs),
            opt(self.weights),
        )


def policy_probs(policy: SoftmaxPolicy, context) -> np.ndarray:
    """pi(.|x) for one context (1-d) or a batch of contexts (2-d)."""
    return policy.probs(context)


def cluster_marginal(policy: SoftmaxPolicy, context, clustering: Clustering) -> np.ndarray:
    """pi(c|x): policy mass summed over the members of each cluster."""
    if clustering.n_actions != policy.n_actions:
        raise ContractViolation("clustering must cover every action of the policy")
    return clustering.marginal(policy.probs(context))


def deploy_argmax(policy, context=None):
    """Deterministic deployment: the most probable action, lowest index on ties.

    ``policy`` may be a policy object (then ``context`` is required) or an
    explicit probability vector / matrix.
    """
    if context is None:
        return np.argmax(np.asarray(policy, dtype=float), axis=-1)
    if hasattr(policy, "deploy"):
        return policy.deploy(context)
    return np.argmax(policy.probs(context), axis=-1)
