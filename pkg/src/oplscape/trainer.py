"""Deterministic mini-batch gradient ascent and the finite-difference gradient check."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import LoggedDataset
from .envgen import Environment, true_value
from .errors import ConfigError, TrainingError
from .objectives import BoundObjective, Objective

__all__ = ["TrainConfig", "TracePoint", "TrainTrace", "train", "learning_rate",
           "finite_diff_check", "SCHEDULES"]

SCHEDULES = ("constant", "inverse-sqrt", "cosine")
INITS = ("zeros", "gaussian", "given")


@dataclass(frozen=True)
class TrainConfig:
    """Plain SGD settings.

    ``init='given'`` starts from the parameters of the policy passed to
    ``train``; ``grad_tol`` stops full-batch runs once the gradient norm falls
    below it. ``l2_strength=None`` keeps the policy's own strength.
    """

    batch_size: int
    epochs: int
    base_rate: float
    schedule: str = "constant"
    l2_strength: Optional[float] = None
    seed: int = 0
    init: str = "zeros"
    init_scale: float = 0.1
    record_every: Optional[int] = None
    grad_tol: Optional[float] = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if not self.base_rate > 0:
            raise ConfigError("base rate must be positive")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.init not in INITS:
            raise ConfigError(f"init must be one of {INITS}")
        if self.l2_strength is not None and self.l2_strength < 0:
            raise ConfigError("l2_strength must be nonnegative")
        if self.record_every is not None and self.record_every < 1:
            raise ConfigError("record_every must be >= 1")


def learning_rate(tc: TrainConfig, step: int, steps_per_epoch: int, total_steps: int) -> float:
    if tc.schedule == "constant":
        return tc.base_rate
    if tc.schedule == "inverse-sqrt":
        return tc.base_rate / math.sqrt(1.0 + step / steps_per_epoch)
    return tc.base_rate * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class TracePoint:
    step: int
    objective: float
    grad_norm: float
    true_value: Optional[float]
    seconds: Optional[float]


@dataclass
class TrainTrace:
    points: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)

    @property
    def steps(self):
        return np.array([p.step for p in self.points])

    @property
    def objectives(self):
        return np.array([p.objective for p in self.points])

    @property
    def grad_norms(self):
        return np.array([p.grad_norm for p in self.points])

    @property
    def true_values(self):
        return np.array([np.nan if p.true_value is None else p.true_value for p in self.points])

    def to_csv(self, path) -> None:
        """Columns ``step,objective,grad_norm,true_value,seconds``; unset cells are empty."""
        fmt = lambda v: "" if v is None else repr(float(v))  # noqa: E731
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "objective", "grad_norm", "true_value", "seconds"])
            for p in self.points:
                w.writerow([p.step, fmt(p.objective), fmt(p.grad_norm), fmt(p.true_value),
                            fmt(p.seconds)])


def _initial_policy(policy, tc: TrainConfig):
    if tc.l2_strength is not None:
        policy = policy.with_l2(tc.l2_strength)
    if tc.init == "given":
        return policy
    if tc.init == "zeros":
        return policy.with_params(np.zeros(policy.num_params))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([tc.seed, 1])))
    return policy.with_params(tc.init_scale * rng.standard_normal(policy.num_params))


def train(objective: Objective | BoundObjective, ds: LoggedDataset, policy, tc: TrainConfig,
          env: Optional[Environment] = None, record_timing: bool = False):
    """Gradient ascent ``theta <- theta + lr_t * grad`` over shuffled mini-batches.

    Shuffling uses a Philox counter-based generator keyed by ``tc.seed``, so
    identical inputs give bitwise-identical parameters. Recorded points carry
    the full-data objective and gradient norm, and the exact value when
    ``env`` is given. Wall-clock seconds are recorded only on request.

    Returns the final policy and its ``TrainTrace``.
    """
    bound = objective if isinstance(objective, BoundObjective) else objective.bind(ds)
    n = ds.n
    if tc.batch_size > n:
        raise ConfigError(f"batch_size {tc.batch_size} exceeds dataset size {n}")
    full_batch = tc.batch_size == n
    steps_per_epoch = math.ceil(n / tc.batch_size)
    total = tc.epochs * steps_per_epoch
    record_every = tc.record_every or steps_per_epoch
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([tc.seed, 0])))
    policy = _initial_policy(policy, tc)
    trace = TrainTrace()
    start = time.perf_counter()

    def record(step, value=None, grad=None):
        if value is None:
            value, grad = bound.value_and_grad(policy)
        gnorm = float(np.linalg.norm(grad))
        if not (math.isfinite(value) and math.isfinite(gnorm)):
            raise TrainingError("non-finite objective or gradient", step)
        tv = true_value(env, policy) if env is not None else None
        secs = time.perf_counter() - start if record_timing else None
        trace.points.append(TracePoint(step, value, gnorm, tv, secs))
        return gnorm

    record(0)
    step = 0
    for _ in range(tc.epochs):
        order = None if full_batch else rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = None if full_batch else order[k * tc.batch_size:(k + 1) * tc.batch_size]
            value, grad = bound.value_and_grad(policy, idx)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingError("non-finite objective or gradient", step)
            if full_batch and tc.grad_tol is not None and np.linalg.norm(grad) < tc.grad_tol:
                if trace.points[-1].step != step:
                    record(step, value, grad)
                return policy, trace
            lr = learning_rate(tc, step, steps_per_epoch, total)
            policy = policy.with_params(policy.params + lr * grad)
            step += 1
            if step % record_every == 0 or step == total:
                record(step)
    return policy, trace


def finite_diff_check(objective: Objective, ds: LoggedDataset, policy, num_coords: int = 10,
                      step: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> float:
    """Largest relative error between analytic and central-difference partials.

    Differences are taken on the objective's direct per-sample evaluation,
    not on the coefficient form the analytic gradient comes from. The error
    of coordinate j is ``|num_j - ana_j| / max(|num_j|, |ana_j|, floor)``.
    """
    if not step > 0:
        raise ConfigError("finite-difference step must be positive")
    theta = policy.params
    ana = objective.bind(ds).gradient(policy)
    rng = np.random.default_rng(seed)
    coords = rng.choice(theta.size, size=min(num_coords, theta.size), replace=False)
    worst = 0.0
    for j in coords:
        e = np.zeros_like(theta)
        e[j] = step
        up = objective.evaluate(ds, policy.with_params(theta + e))
        down = objective.evaluate(ds, policy.with_params(theta - e))
        num = (up - down) / (2 * step)
        worst = max(worst, abs(num - ana[j]) / max(abs(num), abs(ana[j]), floor))
    return worst
