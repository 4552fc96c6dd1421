"""Training objectives as policy-independent coefficient tables.

Every OPE estimator handled here is linear in the target policy's
probabilities and every PWLL objective is linear in their logarithms. Both
can therefore be written, for a batch of samples, as

    (1 / W) * sum_u <C_u, f(pi(.|x_u))>,    f = identity or log,

where ``u`` runs over the distinct contexts of the batch and ``C_u`` is a
coefficient row that does not depend on the policy. ``Terms`` stores the
per-sample pieces of ``C``; ``BoundObjective`` aggregates them for any batch
and differentiates through the softmax.

The estimators in ``ope`` and ``pwll`` also have direct per-sample
implementations, and the two routes are checked against each other.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LoggedDataset, log_softmax, softmax
from .errors import ConfigError

__all__ = ["Terms", "BoundObjective", "Objective", "OPE_METHODS", "PWLL_METHODS",
           "ALL_METHODS", "make_objective"]

OPE_METHODS = ("ips", "cips", "dr", "mips", "offcem", "potec")
PWLL_METHODS = ("lpi", "clpi", "regkl")
ALL_METHODS = OPE_METHODS + PWLL_METHODS


@dataclass(frozen=True, eq=False)
class Terms:
    unique: np.ndarray  # (U, d) distinct contexts
    inverse: np.ndarray  # (n,) row -> distinct context
    slots: np.ndarray  # (n,) action or cluster id that carries the sparse coefficient
    values: np.ndarray  # (n,) sparse coefficient, already times the row weight
    row_weights: np.ndarray  # (n,)
    n_slots: int
    log: bool
    expand: Optional[np.ndarray] = None  # slot id of every score entry, when slots are clusters
    dense: Optional[np.ndarray] = None  # (U, S) coefficient row added once per sample

    def aggregate(self, idx=None):
        """Distinct contexts of the batch, their coefficient rows and the batch weight."""
        if idx is None:
            ub = np.arange(self.unique.shape[0])
            local = self.inverse
            slots, values, w = self.slots, self.values, self.row_weights
        else:
            ub, local = np.unique(self.inverse[idx], return_inverse=True)
            local = local.reshape(-1)
            slots, values, w = self.slots[idx], self.values[idx], self.row_weights[idx]
        U = ub.size
        C = np.bincount(local * self.n_slots + slots, weights=values,
                        minlength=U * self.n_slots).reshape(U, self.n_slots)
        if self.expand is not None:
            C = C[:, self.expand]
        if self.dense is not None:
            C = C + np.bincount(local, weights=w, minlength=U)[:, None] * self.dense[ub]
        return ub, C, float(w.sum())


class BoundObjective:
    """An objective with its data-dependent coefficients precomputed."""

    def __init__(self, objective: "Objective", ds: LoggedDataset):
        self.objective = objective
        self.dataset = ds
        self.terms = objective.terms(ds)
        self._full = None

    def value_and_grad(self, policy, idx=None, regularize=True, need_grad=True):
        view = self.objective.view(policy)
        if idx is None:
            # the full-data aggregate is policy-independent; build it once
            if self._full is None:
                self._full = self.terms.aggregate()
            ub, C, total = self._full
        else:
            ub, C, total = self.terms.aggregate(idx)
        X = self.terms.unique[ub]
        s = view._scores(X)
        if self.terms.log:
            lp = log_softmax(s)
            value = float(np.sum(C * lp)) / total
            G = (C - C.sum(axis=1, keepdims=True) * np.exp(lp)) / total if need_grad else None
        else:
            P = softmax(s)
            v = np.sum(C * P, axis=1, keepdims=True)
            value = float(v.sum()) / total
            G = P * (C - v) / total if need_grad else None
        grad = view.backprop(X, G) if need_grad else None
        if regularize and view.l2_strength > 0:
            value -= view.penalty()
            if need_grad:
                grad = grad - view.penalty_grad()
        return value, grad

    def value(self, policy, idx=None, regularize=True):
        return self.value_and_grad(policy, idx, regularize, need_grad=False)[0]

    def gradient(self, policy, idx=None, regularize=True):
        return self.value_and_grad(policy, idx, regularize)[1]


class Objective:
    """A named training objective: OPE estimator or PWLL weighting."""

    name: str
    family: str

    def terms(self, ds: LoggedDataset) -> Terms:
        raise NotImplementedError

    def evaluate(self, ds: LoggedDataset, policy, regularize=True) -> float:
        """Direct per-sample evaluation (independent of the coefficient route)."""
        raise NotImplementedError

    def view(self, policy):
        """The softmax policy whose probabilities the coefficients multiply."""
        return policy

    def bind(self, ds: LoggedDataset) -> BoundObjective:
        return BoundObjective(self, ds)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class OpeObjective(Objective):
    family = "ope"

    def __init__(self, method, cfg):
        from .ope import OpeConfig

        if method not in OPE_METHODS:
            raise ConfigError(f"unknown OPE method {method!r}")
        self.name = method
        self.cfg = cfg if cfg is not None else OpeConfig()

    def terms(self, ds):
        from .ope import ope_terms

        return ope_terms(self.name, ds, self.cfg)

    def evaluate(self, ds, policy, regularize=True):
        from .ope import estimate

        value = estimate(self.name, ds, policy, self.cfg)
        if regularize:
            value -= self.view(policy).penalty()
        return value

    def view(self, policy):
        if self.name == "potec":
            return getattr(policy, "cluster_policy", policy)
        return policy


class PwllObjective(Objective):
    family = "pwll"

    def __init__(self, weighting):
        self.weighting = weighting
        self.name = weighting.kind

    def terms(self, ds):
        from .pwll import pwll_terms

        return pwll_terms(ds, self.weighting)

    def evaluate(self, ds, policy, regularize=True):
        from .pwll import pwll_objective

        return pwll_objective(ds, policy, self.weighting, regularize=regularize)


def make_objective(method: str, *, tau=0.0, beta=1.0, reward_model=None, clustering=None,
                   weighting=None) -> Objective:
    """Objective by method id: one of ``ALL_METHODS`` (or ``custom`` with a weighting)."""
    from .ope import OpeConfig
    from .pwll import Weighting

    if method in OPE_METHODS:
        return OpeObjective(method, OpeConfig(tau=tau, reward_model=reward_model,
                                              clustering=clustering))
    if method in PWLL_METHODS:
        return PwllObjective(Weighting(method, tau=tau, beta=beta))
    if method == "custom" and weighting is not None:
        return PwllObjective(weighting)
    raise ConfigError(f"unknown method {method!r}")
