"""Experiment runner: configuration, sweeps, MSE and parametrization reports.

Every output is a deterministic function of the configuration and seeds:
floats are written with ``repr`` and no timestamps or host data appear in
any CSV.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import Clustering, InnerProductPolicy, LinearPolicy, RewardModel
from ..envgen import (
    Environment,
    EnvironmentSpec,
    deployed_value,
    ingest_csv,
    make_environment,
    make_reward_model,
    sample_logged,
    true_value,
)
from ..errors import ConfigError, OplError
from ..objectives import ALL_METHODS, OPE_METHODS, PWLL_METHODS, make_objective
from ..ope import ClusterPolicy
from ..oracle import ORACLE_OF_METHOD, argmax_agreement, oracle_for_method, policy_as_oracle
from ..trainer import SCHEDULES, TrainConfig, train
from .charts import emit_chart

__all__ = [
    "PolicySpec",
    "TrainGrid",
    "ExperimentConfig",
    "RunRecord",
    "SweepResult",
    "TablePolicy",
    "build_policy",
    "run_sweep",
    "summarize",
    "mse_report",
    "parametrization_report",
    "NEEDS_CLUSTERING",
    "NEEDS_REWARD_MODEL",
]

NEEDS_CLUSTERING = ("mips", "offcem", "potec")
NEEDS_REWARD_MODEL = ("dr", "offcem", "potec")

# hyperparameters each method reads; anything else in its grid is rejected
_METHOD_KEYS = {
    "ips": (), "cips": ("tau",), "dr": ("tau", "reward_model"), "mips": ("clustering",),
    "offcem": ("clustering", "reward_model"), "potec": ("clustering", "reward_model"),
    "lpi": (), "clpi": ("tau",), "regkl": ("beta",),
}
_DEFAULT_HYPER = {"tau": [0.01], "beta": [1.0], "reward_model": [0.2], "clustering": ["env"],
                  "l2": [0.0]}

VALUE_LABEL = "exact true value V(pi) of the trained stochastic policy on the synthetic environment"


def _check_keys(doc, allowed, where):
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class PolicySpec:
    """Policy family: ``linear`` (K x d per-action weights) or ``inner-product``.

    Inner-product policies score ``<e_a, f(x)>`` with fixed width-``width``
    action embeddings; ``hidden`` adds a tanh layer to the encoder.
    """

    kind: str = "inner-product"
    width: int = 16
    hidden: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("linear", "inner-product"):
            raise ConfigError("policy kind must be 'linear' or 'inner-product'")
        if self.width < 1 or (self.hidden is not None and self.hidden < 1):
            raise ConfigError("policy widths must be >= 1")
        if self.kind == "linear" and self.hidden is not None:
            raise ConfigError("a linear per-action policy has no hidden layer")

    @classmethod
    def from_dict(cls, doc: dict) -> "PolicySpec":
        _check_keys(doc, ("kind", "width", "hidden"), "policy")
        return cls(**doc)

    def num_params(self, n_outputs: int, d: int) -> int:
        if self.kind == "linear":
            return n_outputs * d
        if self.hidden is None:
            return self.width * d
        return self.hidden * d + self.width * self.hidden


def _embeddings(env: Environment, width: int, n_outputs: int, clustering=None):
    """Fixed action (or cluster) embeddings: a seeded projection of the action features."""
    rng = np.random.default_rng([env.rng_seed, 7])
    feats = env.action_features
    if feats is None:
        feats = rng.standard_normal((env.n_actions, width))
    E = feats @ rng.standard_normal((feats.shape[1], width)) / math.sqrt(feats.shape[1])
    if clustering is not None:
        E = (clustering.onehot.T @ E) / np.bincount(clustering.assignment)[:, None]
    assert E.shape[0] == n_outputs
    return E


def build_policy(env: Environment, spec: PolicySpec, seed: int = 0, l2_strength: float = 0.0,
                 clustering: Optional[Clustering] = None):
    """Initial policy for ``env``: zero output weights, gaussian hidden layer.

    With ``clustering`` the policy scores clusters instead of actions (the
    trainable part of the two-stage POTEC policy); cluster embeddings are the
    means of their members' embeddings.
    """
    n_out = env.n_actions if clustering is None else clustering.num_clusters
    d = env.d
    if spec.kind == "linear":
        return LinearPolicy.zeros(n_out, d, l2_strength)
    E = _embeddings(env, spec.width, n_out, clustering)
    if spec.hidden is None:
        return InnerProductPolicy(np.zeros((spec.width, d)), E, None, l2_strength)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    H = rng.standard_normal((spec.hidden, d)) / math.sqrt(d)
    return InnerProductPolicy(np.zeros((spec.width, spec.hidden)), E, H, l2_strength)


@dataclass(frozen=True)
class TrainGrid:
    batch_sizes: tuple = (64, 512, 4096)
    schedules: tuple = SCHEDULES
    base_rates: tuple = (0.01, 0.1, 1.0)
    epochs: int = 10
    seeds: tuple = (0,)

    def __post_init__(self):
        for name in ("batch_sizes", "schedules", "base_rates", "seeds"):
            v = tuple(getattr(self, name))
            if not v:
                raise ConfigError(f"train grid {name} must be non-empty")
            object.__setattr__(self, name, v)
        if any(s not in SCHEDULES for s in self.schedules):
            raise ConfigError(f"schedules must be drawn from {SCHEDULES}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainGrid":
        _check_keys(doc, ("batch_sizes", "schedules", "base_rates", "epochs", "seeds"), "train")
        return cls(**doc)

    def points(self):
        return list(itertools.product(self.batch_sizes, self.schedules, self.base_rates, self.seeds))


@dataclass(frozen=True)
class ExperimentConfig:
    """A sweep: environment (or dataset), methods, per-method grids, train grid, outputs."""

    methods: tuple
    environment: Optional[EnvironmentSpec] = None
    dataset: Optional[str] = None
    n: int = 50_000
    hyper: dict = field(default_factory=dict)
    train: TrainGrid = field(default_factory=TrainGrid)
    policy: PolicySpec = field(default_factory=PolicySpec)
    out: str = "out"
    extra: dict = field(default_factory=dict)  # sections read by other commands

    def __post_init__(self):
        methods = tuple(self.methods)
        if not methods:
            raise ConfigError("method list must be non-empty")
        for m in methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        object.__setattr__(self, "methods", methods)
        if (self.environment is None) == (self.dataset is None):
            raise ConfigError("give exactly one of 'environment' or 'dataset'")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        hyper = {}
        for m in methods:
            grid = dict(self.hyper.get(m, {}))
            _check_keys(grid, _METHOD_KEYS[m] + ("l2",), f"hyper.{m}")
            for key in _METHOD_KEYS[m] + ("l2",):
                vals = grid.get(key, _DEFAULT_HYPER[key])
                vals = list(vals) if isinstance(vals, (list, tuple)) else [vals]
                if not vals:
                    raise ConfigError(f"hyper.{m}.{key} must be non-empty")
                grid[key] = vals
            hyper[m] = grid
        extra_methods = sorted(set(self.hyper) - set(methods))
        if extra_methods:
            raise ConfigError(f"hyperparameters given for unlisted methods: {extra_methods}")
        object.__setattr__(self, "hyper", hyper)
        self._check_resources()

    def _check_resources(self):
        for m in self.methods:
            grid = self.hyper[m]
            for c in grid.get("clustering", []):
                _parse_clustering(c)
                if c == "env" and (self.environment is None or self.environment.num_clusters < 1):
                    raise ConfigError(f"{m} needs a clustering: set environment.num_clusters "
                                      "or choose 'identity', 'single' or 'random-<C>'")
            for rm in grid.get("reward_model", []):
                if rm == "least-squares":
                    continue
                if not isinstance(rm, (int, float)) or not 0 <= rm <= 1:
                    raise ConfigError(f"{m} reward_model must be a noise level in [0, 1] "
                                      "or 'least-squares'")
                if self.environment is None:
                    raise ConfigError("perturbed-oracle reward models need an environment")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        _check_keys(doc, ("methods", "environment", "dataset", "n", "hyper", "train", "policy",
                          "out", "landscape", "mse", "params"), "config")
        env = doc.pop("environment", None)
        extra = {k: doc.pop(k) for k in ("landscape", "mse", "params") if k in doc}
        return cls(
            methods=doc.pop("methods", ()),
            environment=None if env is None else EnvironmentSpec.from_dict(env),
            dataset=doc.pop("dataset", None),
            n=int(doc.pop("n", 50_000)),
            hyper=doc.pop("hyper", {}),
            train=TrainGrid.from_dict(doc.pop("train", {})),
            policy=PolicySpec.from_dict(doc.pop("policy", {})),
            out=doc.pop("out", "out"),
            extra=extra,
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {
            "methods": list(self.methods),
            "n": self.n,
            "hyper": self.hyper,
            "train": {k: list(v) if isinstance(v, tuple) else v
                      for k, v in asdict(self.train).items()},
            "policy": asdict(self.policy),
            "out": self.out,
        }
        if self.environment is not None:
            doc["environment"] = self.environment.to_dict()
        else:
            doc["dataset"] = self.dataset
        doc.update(self.extra)
        return doc

    def grid(self):
        """Every (method, hyperparameters, batch, schedule, rate, seed) in run order."""
        jobs = []
        for m in self.methods:
            keys = sorted(self.hyper[m])
            for combo in itertools.product(*(self.hyper[m][k] for k in keys)):
                hp = dict(zip(keys, combo))
                for point in self.train.points():
                    jobs.append((m, hp) + point)
        return jobs


def _parse_clustering(c):
    if c in ("env", "identity", "single"):
        return c, None
    if isinstance(c, str) and c.startswith("random-"):
        try:
            k = int(c.split("-", 1)[1])
        except ValueError:
            raise ConfigError(f"bad clustering id {c!r}") from None
        if k < 1:
            raise ConfigError(f"bad clustering id {c!r}")
        return "random", k
    raise ConfigError(f"unknown clustering id {c!r}")


def _hp_key(hp: dict) -> str:
    return ";".join(f"{k}={hp[k]}" for k in sorted(hp))


@dataclass(frozen=True)
class RunRecord:
    """One grid point. ``proxy_sq_error`` is the PWLL objective used as a value estimate."""

    index: int
    method: str
    hyperparams: str
    batch_size: int
    schedule: str
    base_rate: float
    epochs: int
    seed: int
    status: str
    true_value: float = math.nan
    deployed_value: float = math.nan
    agreement: float = math.nan
    estimator_sq_error: float = math.nan
    proxy_sq_error: float = math.nan
    final_objective: float = math.nan
    trace_path: str = ""
    error: str = ""

    @property
    def ok(self):
        return self.status == "ok"


RUN_COLUMNS = tuple(RunRecord.__dataclass_fields__)


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


class _Context:
    """Environment, datasets and resources shared by the runs of one config (per process)."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.env = make_environment(cfg.environment) if cfg.environment is not None else None
        self._data = {}
        self._models = {}

    def dataset(self, seed):
        if seed not in self._data:
            if self.env is None:
                self._data[seed] = ingest_csv(self.cfg.dataset)
            else:
                self._data[seed] = sample_logged(self.env, self.cfg.n, seed)
        return self._data[seed]

    def clustering(self, cid):
        kind, k = _parse_clustering(cid)
        K = self.env.n_actions if self.env is not None else self.dataset(0).n_actions
        if kind == "env":
            return self.env.clustering
        if kind == "identity":
            return Clustering.identity(K)
        if kind == "single":
            return Clustering.single(K)
        rng = np.random.default_rng([self.env.rng_seed if self.env is not None else 0, 11])
        return Clustering.random(K, k, rng)

    def reward_model(self, rm, seed):
        key = (rm, seed if rm == "least-squares" else None)
        if key not in self._models:
            if rm == "least-squares":
                self._models[key] = RewardModel.fit_least_squares(self.dataset(seed))
            else:
                self._models[key] = make_reward_model(self.env, float(rm), seed=self.env.rng_seed)
        return self._models[key]

    def env_for(self, clustering):
        if self.env is None or clustering is None or clustering is self.env.clustering:
            return self.env
        return self.env.with_clustering(clustering)


@lru_cache(maxsize=4)
def _context(cfg_json: str) -> _Context:
    return _Context(ExperimentConfig.from_json(cfg_json))


def _run_one(ctx: _Context, index, method, hp, batch, schedule, rate, seed, trace_dir):
    cfg = ctx.cfg
    clustering = ctx.clustering(hp["clustering"]) if "clustering" in hp else None
    rm = ctx.reward_model(hp["reward_model"], seed) if "reward_model" in hp else None
    env = ctx.env_for(clustering)
    ds = ctx.dataset(seed)
    if clustering is not None and env is not None and (
            not ds.has_clusters or clustering is not ctx.env.clustering):
        ds = sample_logged(env, cfg.n, seed)
    tau, beta = hp.get("tau", 0.0), hp.get("beta", 1.0)
    objective = make_objective(method, tau=tau, beta=beta, reward_model=rm, clustering=clustering)
    l2 = float(hp["l2"])
    penv = ctx.env if ctx.env is not None else _FakeEnv(ds)
    if method == "potec":
        policy = ClusterPolicy(build_policy(penv, cfg.policy, seed, l2, clustering), clustering, rm)
    else:
        policy = build_policy(penv, cfg.policy, seed, l2)
    tc = TrainConfig(batch, cfg.train.epochs, rate, schedule, l2_strength=l2, seed=seed,
                     init="given")
    final, trace = train(objective, ds, policy, tc, env=env)
    name = f"run-{index:04d}.csv"
    trace.to_csv(Path(trace_dir) / name)
    # relative to the output directory, so reruns elsewhere give identical CSVs
    fields = dict(final_objective=float(trace.objectives[-1]), trace_path=f"traces/{name}")
    if env is not None:
        v = true_value(env, final)
        est = objective.evaluate(ds, final, regularize=False)
        oracle = oracle_for_method(env, method, tau=tau, beta=beta, reward_model=rm,
                                   clustering=clustering)
        fields.update(
            true_value=v,
            deployed_value=deployed_value(env, final),
            agreement=argmax_agreement(policy_as_oracle(env, final), oracle),
        )
        key = "estimator_sq_error" if method in OPE_METHODS else "proxy_sq_error"
        fields[key] = (est - v) ** 2
    return fields


class _FakeEnv:
    """Stand-in carrying the shapes ``build_policy`` needs when only a dataset is given."""

    def __init__(self, ds):
        self.n_actions, self.d, self.rng_seed, self.action_features = ds.n_actions, ds.d, 0, None


def _execute(job):
    cfg_json, trace_dir, index, method, hp, batch, schedule, rate, seed = job
    ctx = _context(cfg_json)
    base = dict(index=index, method=method, hyperparams=_hp_key(hp), batch_size=batch,
                schedule=schedule, base_rate=float(rate), epochs=ctx.cfg.train.epochs, seed=seed)
    try:
        fields = _run_one(ctx, index, method, hp, batch, schedule, rate, seed, trace_dir)
    except (OplError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
        return RunRecord(status="failed", error=f"{type(e).__name__}: {e}", **base)
    return RunRecord(status="ok", **base, **fields)


@dataclass(frozen=True)
class SweepResult:
    records: list
    summary: list
    runs_path: Path
    summary_path: Path

    @property
    def failed(self):
        return [r for r in self.records if not r.ok]


def _stats(values):
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan, math.nan
    lo, hi = float(v.min()), float(v.max())
    ratio = lo / hi if hi > 0 else math.nan
    return float(v.mean()), lo, hi, ratio


SUMMARY_COLUMNS = (
    "method", "hyperparams", "oracle", "runs", "failed",
    "mean_value", "min_value", "max_value", "robustness_ratio",
    "mean_deployed", "min_deployed", "max_deployed", "deployed_robustness_ratio",
    "mean_agreement", "mse",
)


def summarize(records) -> list:
    """One row per (method, hyperparameters), in first-appearance order."""
    groups = {}
    for r in records:
        groups.setdefault((r.method, r.hyperparams), []).append(r)
    rows = []
    for (method, hp), rs in groups.items():
        ok = [r for r in rs if r.ok]
        mean_v, min_v, max_v, ratio = _stats(r.true_value for r in ok)
        mean_d, min_d, max_d, ratio_d = _stats(r.deployed_value for r in ok)
        err = [r.estimator_sq_error if method in OPE_METHODS else r.proxy_sq_error for r in ok]
        rows.append(dict(
            method=method, hyperparams=hp, oracle=ORACLE_OF_METHOD[method], runs=len(rs),
            failed=len(rs) - len(ok),
            mean_value=mean_v, min_value=min_v, max_value=max_v, robustness_ratio=ratio,
            mean_deployed=mean_d, min_deployed=min_d, max_deployed=max_d,
            deployed_robustness_ratio=ratio_d,
            mean_agreement=_stats(r.agreement for r in ok)[0],
            mse=_stats(err)[0],
        ))
    return rows


def _oracle_header():
    return ", ".join(f"{m}->{ORACLE_OF_METHOD[m]}" for m in ALL_METHODS)


def write_summary(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# value: {VALUE_LABEL}\n")
        fh.write(f"# oracle mapping: {_oracle_header()}\n")
        fh.write("# mse: estimator squared error for OPE methods; for PWLL methods the "
                 "objective is used as a value proxy (not-a-value-estimator)\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])


def write_runs(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in records:
            w.writerow([_cell(getattr(r, c)) for c in RUN_COLUMNS])


def run_sweep(cfg: ExperimentConfig, out=None, workers: int = 1, jobs=None) -> SweepResult:
    """Execute the full grid, write ``runs.csv``, ``summary.csv`` and per-run traces.

    Runs are dispatched to ``workers`` processes and merged in grid order, so
    the outputs do not depend on the worker count. A failing run is recorded
    with its diagnostic and the sweep continues.
    """
    out = Path(out if out is not None else cfg.out)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    grid = cfg.grid() if jobs is None else jobs
    work = [(cfg_json, str(trace_dir), i) + tuple(job) for i, job in enumerate(grid)]
    if workers > 1 and len(work) > 1:
        with ProcessPoolExecutor(min(workers, len(work))) as pool:
            records = list(pool.map(_execute, work, chunksize=1))
    else:
        records = [_execute(w) for w in work]
    rows = summarize(records)
    runs_path, summary_path = out / "runs.csv", out / "summary.csv"
    write_runs(records, runs_path)
    write_summary(rows, summary_path)
    return SweepResult(records, rows, runs_path, summary_path)


class TablePolicy:
    """An explicit (m, K) policy table over an environment's contexts."""

    def __init__(self, env: Environment, table):
        self.table = np.asarray(table, dtype=float)
        if self.table.shape != env.reward_table.shape:
            raise ConfigError("policy table must be (m, K)")
        self.n_actions = self.table.shape[1]
        self._index = {row.tobytes(): i for i, row in enumerate(env.contexts)}

    def _rows(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        try:
            return np.array([self._index[x.tobytes()] for x in X])
        except KeyError:
            raise ConfigError("context not in the environment") from None

    def probs(self, X):
        return self.table[self._rows(X)]

    def log_probs(self, X):
        with np.errstate(divide="ignore"):
            return np.log(self.probs(X))

    def deploy(self, X):
        return np.argmax(self.probs(X), axis=1)

    def penalty(self):
        return 0.0


MSE_COLUMNS = ("section", "method", "target", "true_value", "mean_estimate", "mse", "seeds")


def mse_report(env: Environment, seeds, methods, targets: dict, n: int, path=None, *,
               tau: float = 0.01, beta: float = 1.0, reward_noise: float = 0.2) -> list:
    """Mean over ``seeds`` of (estimate - true value)^2 per method and target policy.

    ``targets`` maps names to policies or (m, K) tables. PWLL objectives are
    evaluated the same way, as if they were value estimates, and land in a
    separate section flagged ``not-a-value-estimator``. POTEC scores two-stage
    policies only and is skipped for other targets.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one dataset seed")
    rm = make_reward_model(env, reward_noise, seed=env.rng_seed) if any(
        m in NEEDS_REWARD_MODEL for m in methods) else None
    if any(m in NEEDS_CLUSTERING for m in methods) and env.clustering is None:
        raise ConfigError("cluster-based estimators need an environment clustering")
    objs = {m: make_objective(m, tau=tau, beta=beta, reward_model=rm, clustering=env.clustering)
            for m in methods}
    pols = {name: (TablePolicy(env, t) if not hasattr(t, "probs") else t)
            for name, t in targets.items()}
    values = {name: true_value(env, p) for name, p in pols.items()}
    est = {(m, t): [] for m in methods for t in pols}
    for s in seeds:
        ds = sample_logged(env, n, s)
        for m in methods:
            for t, p in pols.items():
                if m == "potec" and not isinstance(p, ClusterPolicy):
                    continue
                est[(m, t)].append(objs[m].evaluate(ds, p, regularize=False))
    rows = []
    for section, family in (("estimator", OPE_METHODS), ("not-a-value-estimator", PWLL_METHODS)):
        for m in methods:
            if m not in family:
                continue
            for t in pols:
                e = np.asarray(est[(m, t)], dtype=float)
                if e.size == 0:
                    continue
                with np.errstate(invalid="ignore"):
                    mse = float(np.mean((e - values[t]) ** 2))
                rows.append(dict(section=section, method=m, target=t, true_value=values[t],
                                 mean_estimate=float(e.mean()), mse=mse, seeds=len(e)))
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# section not-a-value-estimator: PWLL objectives read as value "
                     "estimates; their error says nothing about learning quality\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(MSE_COLUMNS)
            for row in rows:
                w.writerow([_cell(row[c]) for c in MSE_COLUMNS])
    return rows


PARAM_COLUMNS = ("method", "variant", "num_params", "seed", "epochs_to_90", "final_value")
PARAM_SUMMARY_COLUMNS = ("method", "variant", "num_params", "seeds", "mean_epochs_to_90",
                         "std_epochs_to_90", "mean_final_value", "std_final_value")


def epochs_to_fraction(values, fraction: float = 0.9) -> int:
    """First epoch at which the gain over epoch 0 reaches ``fraction`` of the final gain."""
    v = np.asarray(values, dtype=float)
    gain = v[-1] - v[0]
    if gain <= 0:
        return 0
    return int(np.flatnonzero(v - v[0] >= fraction * gain)[0])


def parametrization_report(env: Environment, methods, light: PolicySpec, heavy: PolicySpec,
                           tc: TrainConfig, n: int, seeds=(0, 1, 2), out=None, *,
                           tau: float = 0.01, beta: float = 1.0) -> dict:
    """Convergence speed and final value of a light and a heavy policy family.

    Each (method, variant, seed) trains on ``sample_logged(env, n, seed)``
    with training seed ``seed`` and records the true value every epoch.
    Returns per-run rows, per-(method, variant) summaries and, when ``out``
    is given, the paths of ``params.csv``, ``params_summary.csv`` and
    ``params.svg``.
    """
    seeds = list(seeds)
    if len(seeds) < 1:
        raise ConfigError("need at least one seed")
    n_light = light.num_params(env.n_actions, env.d)
    n_heavy = heavy.num_params(env.n_actions, env.d)
    if n_light > n_heavy:
        raise ConfigError(f"light variant has more parameters ({n_light}) than heavy ({n_heavy})")
    for m in methods:
        if m in NEEDS_CLUSTERING or m in NEEDS_REWARD_MODEL:
            raise ConfigError(f"{m} is not supported in the parametrization report")
    rows, curves = [], {}
    for m in methods:
        obj = make_objective(m, tau=tau, beta=beta)
        for variant, spec, count in (("light", light, n_light), ("heavy", heavy, n_heavy)):
            runs = []
            for s in seeds:
                ds = sample_logged(env, n, s)
                policy = build_policy(env, spec, s, tc.l2_strength or 0.0)
                run_tc = replace(tc, seed=s, init="given", record_every=None)
                _, trace = train(obj, ds, policy, run_tc, env=env)
                tv = trace.true_values
                runs.append(tv)
                rows.append(dict(method=m, variant=variant, num_params=count, seed=s,
                                 epochs_to_90=epochs_to_fraction(tv), final_value=float(tv[-1])))
            curves[f"{m}/{variant}"] = np.mean(runs, axis=0)
    summary = []
    for m in methods:
        for variant in ("light", "heavy"):
            sel = [r for r in rows if r["method"] == m and r["variant"] == variant]
            e = np.array([r["epochs_to_90"] for r in sel], dtype=float)
            f = np.array([r["final_value"] for r in sel])
            summary.append(dict(method=m, variant=variant, num_params=sel[0]["num_params"],
                                seeds=len(sel), mean_epochs_to_90=float(e.mean()),
                                std_epochs_to_90=float(e.std()), mean_final_value=float(f.mean()),
                                std_final_value=float(f.std())))
    result = {"rows": rows, "summary": summary, "curves": curves}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, cols, data in (("params.csv", PARAM_COLUMNS, rows),
                                 ("params_summary.csv", PARAM_SUMMARY_COLUMNS, summary)):
            with open(out / name, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for row in data:
                    w.writerow([_cell(row[c]) for c in cols])
        series = {k: list(enumerate(v.tolist())) for k, v in curves.items()}
        emit_chart(series, "line", out / "params.svg", title="true value by epoch",
                   xlabel="epoch", ylabel="true value")
        result["paths"] = [out / "params.csv", out / "params_summary.csv", out / "params.svg"]
    return result
