"""Empirical landscape probes: trap instances, plateau lengths and basin censuses.

The trap is one concrete instance family, not a general construction: a
single context in which the only rewarded-best action is rarely logged and
the policy starts biased toward a distractor. All probes run full-batch
ascent on the exact population dataset of the environment, so they carry no
sampling noise.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LinearPolicy
from .envgen import Environment, population_dataset, true_value
from .errors import ConfigError
from .objectives import Objective
from .oracle import asymptotic_pwll_distribution, oracle_for_method
from .trainer import TrainConfig, train

__all__ = [
    "AdversarialSpec",
    "build_adversarial",
    "adversarial_policy",
    "build_composite_trap",
    "composite_policy",
    "objective_target_value",
    "PlateauReport",
    "plateau_length",
    "CensusReport",
    "basin_census",
]


@dataclass(frozen=True)
class AdversarialSpec:
    """Trap parameters: K actions, the best action logged with probability ``epsilon``,
    the rest ``gap`` worse, and a distractor starting ``init_bias`` ahead."""

    K: int
    epsilon: float
    gap: float
    init_bias: float = 0.0
    distractor: int = 1

    def __post_init__(self):
        if self.K < 2:
            raise ConfigError("a trap needs at least two actions")
        if not 0.0 < self.epsilon <= 1.0 / self.K + 1e-15:
            raise ConfigError("epsilon must lie in (0, 1/K]")
        if not 0.0 < self.gap <= 1.0:
            raise ConfigError("gap must lie in (0, 1]")
        if not 1 <= self.distractor < self.K:
            raise ConfigError("the distractor must be one of the non-best actions")

    def rows(self, best: int = 0):
        """Reward and logging rows with the best action at index ``best``."""
        K = self.K
        rewards = np.full(K, 1.0 - self.gap)
        # remaining mass shared in decreasing proportions K-1, ..., 1 (keeps the
        # PWLL optima free of exact ties)
        shares = np.arange(K - 1, 0, -1, dtype=float)
        logging = np.empty(K)
        logging[0] = self.epsilon
        logging[1:] = (1.0 - self.epsilon) * shares / shares.sum()
        rewards[0] = 1.0
        return np.roll(rewards, best), np.roll(logging, best)


def build_adversarial(spec: AdversarialSpec) -> Environment:
    """Single-context trap environment (context = [1.0])."""
    r, p = spec.rows()
    return Environment.from_tables(r[None, :], p[None, :], contexts=np.ones((1, 1)))


def adversarial_policy(spec: AdversarialSpec, l2_strength: float = 0.0) -> LinearPolicy:
    """Linear policy on the trap with the distractor's score raised by ``init_bias``."""
    theta = np.zeros((spec.K, 1))
    theta[spec.distractor, 0] = spec.init_bias
    return LinearPolicy(theta, l2_strength)


def _composite_contexts(n_contexts, shared_features):
    if not shared_features:
        return np.eye(n_contexts)
    # points on a circle plus a constant: the traps share parameters, so a
    # linear policy cannot solve each one independently
    t = 2.0 * np.pi * np.arange(n_contexts) / n_contexts
    return np.column_stack([np.cos(t), np.sin(t), np.ones(n_contexts)])


def build_composite_trap(spec: AdversarialSpec, n_contexts: int = 4,
                         shared_features: bool = True) -> Environment:
    """Traps on several contexts; context u hides its best action at index u mod K.

    With ``shared_features`` the contexts are 3-d (cosine, sine, constant);
    otherwise they are one-hot, which makes a linear policy tabular and its
    value landscape free of spurious maxima.
    """
    if n_contexts < 1:
        raise ConfigError("n_contexts must be >= 1")
    R = np.empty((n_contexts, spec.K))
    P = np.empty((n_contexts, spec.K))
    for u in range(n_contexts):
        R[u], P[u] = spec.rows(best=u % spec.K)
    return Environment.from_tables(R, P, contexts=_composite_contexts(n_contexts, shared_features))


def composite_policy(spec: AdversarialSpec, n_contexts: int = 4, l2_strength: float = 0.0,
                     shared_features: bool = True) -> LinearPolicy:
    """Linear policy for ``build_composite_trap`` with each context's distractor raised."""
    if shared_features:
        theta = np.zeros((spec.K, 3))
        theta[spec.distractor, 2] = spec.init_bias
        return LinearPolicy(theta, l2_strength)
    theta = np.zeros((spec.K, n_contexts))
    for u in range(n_contexts):
        theta[(u + spec.distractor) % spec.K, u] = spec.init_bias
    return LinearPolicy(theta, l2_strength)


def objective_target_value(env: Environment, objective: Objective) -> float:
    """True value of the objective's asymptotic solution on ``env``."""
    if objective.family == "pwll":
        w = objective.weighting
        if w.kind == "custom":
            raise ConfigError("no closed-form target for a custom weighting")
        return true_value(env, asymptotic_pwll_distribution(env, w).probs)
    cfg = objective.cfg
    oracle = oracle_for_method(env, objective.name, tau=cfg.tau,
                               reward_model=cfg.reward_model, clustering=cfg.clustering)
    return true_value(env, oracle.table(env.n_actions))


@dataclass(frozen=True)
class PlateauReport:
    length: int
    unescaped: bool
    initial_value: float
    target_value: float
    values: np.ndarray = field(repr=False)


def plateau_length(env: Environment, objective: Objective, tc: TrainConfig,
                   threshold: float = 0.1, policy=None) -> PlateauReport:
    """Iterations of full-batch ascent before the value gains ``threshold`` of its total gain.

    The total gain is measured against the true value of the objective's
    asymptotic solution. ``tc.epochs`` is the iteration budget. If the
    threshold is never crossed (always the case for ``threshold >= 1``, since
    softmax ascent only approaches its limit) the budget is returned with
    ``unescaped=True``. A run whose target is no better than its start has
    length 0.
    """
    ds = population_dataset(env)
    init = "given" if policy is not None else tc.init
    if policy is None:
        policy = LinearPolicy.zeros(env.n_actions, env.d)
    run_tc = replace(tc, batch_size=ds.n, record_every=1, init=init, grad_tol=None)
    _, trace = train(objective, ds, policy, run_tc, env=env)
    values = trace.true_values
    v0 = float(values[0])
    target = objective_target_value(env, objective)
    budget = len(values) - 1
    if target - v0 <= 0:
        return PlateauReport(0, False, v0, target, values)
    if threshold < 1.0:
        hit = np.flatnonzero(values - v0 >= threshold * (target - v0))
        if hit.size:
            return PlateauReport(int(hit[0]), False, v0, target, values)
    return PlateauReport(budget, True, v0, target, values)


@dataclass(frozen=True)
class CensusReport:
    """Distinct basins found by a multi-start census (a lower bound on their number)."""

    num_basins: int
    basins: list  # (argmax pattern, objective value, hit count)
    runs: list  # (restart, argmax pattern, objective value, final grad norm)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["basin", "pattern", "objective", "count"])
            for i, (pattern, value, count) in enumerate(self.basins):
                w.writerow([i, "-".join(map(str, pattern)), repr(float(value)), count])


def _restart_seed(seed, r):
    return int(np.random.SeedSequence([seed, r]).generate_state(1, dtype=np.uint64)[0])


def _census_run(args):
    env, objective, policy, tc, ds = args
    final, trace = train(objective, ds, policy, tc)
    pattern = tuple(int(a) for a in final.deploy(env.contexts))
    return pattern, float(trace.objectives[-1]), float(trace.grad_norms[-1])


def basin_census(env: Environment, objective: Objective, restarts: int, tc: TrainConfig,
                 seed: int = 0, policy=None, value_tol: float = 1e-4,
                 workers: int = 1) -> CensusReport:
    """Run ``restarts`` full-batch ascents from independent gaussian inits and merge basins.

    Each run stops when the gradient norm drops below ``tc.grad_tol``
    (default 1e-7) or after ``tc.epochs`` iterations. Two outcomes share a
    basin when their deployed argmax patterns match and their objective values
    are within ``value_tol``. Restart r always uses the same seed, so the
    count can only grow with ``restarts``.
    """
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    ds = population_dataset(env)
    if policy is None:
        policy = LinearPolicy.zeros(env.n_actions, env.d)
    grad_tol = tc.grad_tol if tc.grad_tol is not None else 1e-7
    jobs = [
        (env, objective, policy,
         replace(tc, batch_size=ds.n, init="gaussian", seed=_restart_seed(seed, r),
                 grad_tol=grad_tol, record_every=tc.epochs),
         ds)
        for r in range(restarts)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_census_run, jobs))
    else:
        outcomes = [_census_run(j) for j in jobs]

    basins = []
    runs = []
    for r, (pattern, value, gnorm) in enumerate(outcomes):
        runs.append((r, pattern, value, gnorm))
        for b in basins:
            if b[0] == pattern and abs(b[1] - value) <= value_tol:
                b[2] += 1
                break
        else:
            basins.append([pattern, value, 1])
    return CensusReport(len(basins), [tuple(b) for b in basins], runs)
