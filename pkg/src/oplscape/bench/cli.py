"""Command-line entry point: ``oplscape <command> --config cfg.json --out dir``.

Exit codes: 0 success, 2 configuration error, 3 a failed run under ``--strict``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..envgen import (
    deployed_value,
    make_environment,
    population_dataset,
    sample_logged,
    true_value,
    write_csv,
)
from ..errors import ConfigError, OplError
from ..landscape import (
    AdversarialSpec,
    adversarial_policy,
    basin_census,
    build_adversarial,
    build_composite_trap,
    plateau_length,
)
from ..objectives import ALL_METHODS, OPE_METHODS, make_objective
from ..oracle import ORACLE_OF_METHOD, oracle_for_method
from ..trainer import TrainConfig
from .charts import emit_chart
from .runner import (
    NEEDS_CLUSTERING,
    NEEDS_REWARD_MODEL,
    ExperimentConfig,
    PolicySpec,
    mse_report,
    parametrization_report,
    run_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3


def _load_config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    cfg = ExperimentConfig.from_json(text)
    if args.seed is not None:
        if cfg.environment is None:
            raise ConfigError("--seed needs an environment config")
        cfg = replace(cfg, environment=replace(cfg.environment, seed=args.seed))
    return cfg


def _out_dir(args, cfg=None) -> Path:
    out = Path(args.out if args.out is not None else (cfg.out if cfg is not None else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_env(cfg):
    if cfg.environment is None:
        raise ConfigError("this command needs an 'environment' section")
    return make_environment(cfg.environment)


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    env = _need_env(cfg)
    out = _out_dir(args, cfg)
    seed = cfg.train.seeds[0]
    write_csv(sample_logged(env, cfg.n, seed), out / "dataset.csv")
    (out / "environment.json").write_text(
        json.dumps(cfg.environment.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    K = env.n_actions
    _write_rows(out / "reward_table.csv", ["context_id"] + [f"a{a}" for a in range(K)],
                ([i] + [float(v) for v in row] for i, row in enumerate(env.reward_table)))
    _write_rows(out / "logging_table.csv", ["context_id"] + [f"a{a}" for a in range(K)],
                ([i] + [float(v) for v in row] for i, row in enumerate(env.logging_table)))
    print(f"wrote dataset (n={cfg.n}) and tables for m={env.m}, K={K} to {out}")
    return EXIT_OK


def _sweep_like(args, cfg, jobs=None) -> int:
    out = _out_dir(args, cfg)
    res = run_sweep(cfg, out=out, workers=args.workers, jobs=jobs)
    for f in res.failed:
        print(f"run {f.index} ({f.method}) failed: {f.error}", file=sys.stderr)
    print(f"{len(res.records)} runs, {len(res.failed)} failed; summary at {res.summary_path}")
    return EXIT_FAILED if args.strict and res.failed else EXIT_OK


def cmd_train(args) -> int:
    """One run per method and hyperparameter setting, at the first point of the train grid."""
    cfg = _load_config(args)
    first = cfg.train.points()[0]
    jobs = [job for job in cfg.grid() if tuple(job[2:]) == first]
    return _sweep_like(args, cfg, jobs)


def cmd_sweep(args) -> int:
    return _sweep_like(args, _load_config(args))


def _first_hp(cfg, m):
    return {k: v[0] for k, v in cfg.hyper[m].items()}


def cmd_evaluate(args) -> int:
    """Asymptotic oracle of every configured method, with its exact and deployed value."""
    from .runner import _Context

    cfg = _load_config(args)
    env = _need_env(cfg)
    ctx = _Context(cfg)
    out = _out_dir(args, cfg)
    rows = []
    for m in cfg.methods:
        hp = _first_hp(cfg, m)
        clustering = ctx.clustering(hp["clustering"]) if "clustering" in hp else None
        rm = ctx.reward_model(hp["reward_model"], cfg.train.seeds[0]) if "reward_model" in hp else None
        e = ctx.env_for(clustering)
        oracle = oracle_for_method(e, m, tau=hp.get("tau", 0.0), beta=hp.get("beta", 1.0),
                                   reward_model=rm, clustering=clustering)
        table = oracle.table(env.n_actions)
        oracle.to_csv(out / f"oracle_{m}.csv", env.n_actions)
        rows.append([m, ORACLE_OF_METHOD[m], true_value(env, table), deployed_value(env, table)])
    _write_rows(out / "evaluate.csv", ["method", "oracle", "true_value", "deployed_value"], rows)
    print(f"wrote {len(rows)} oracle tables to {out}")
    return EXIT_OK


def cmd_mse(args) -> int:
    cfg = _load_config(args)
    env = _need_env(cfg)
    out = _out_dir(args, cfg)
    sec = dict(cfg.extra.get("mse", {}))
    unknown = set(sec) - {"seeds", "n", "tau", "beta", "reward_noise"}
    if unknown:
        raise ConfigError(f"unknown key(s) in mse: {sorted(unknown)}")
    methods = [m for m in cfg.methods if m != "potec"]
    K = env.n_actions
    best = np.zeros_like(env.reward_table)
    best[np.arange(env.m), np.argmax(env.reward_table, axis=1)] = 1.0
    targets = {"logging": env.logging_table, "uniform": np.full_like(best, 1.0 / K),
               "best": 0.5 * best + 0.5 * env.logging_table}
    rows = mse_report(env, sec.get("seeds", list(range(20))), methods, targets,
                      int(sec.get("n", cfg.n)), out / "mse.csv",
                      tau=sec.get("tau", 0.01), beta=sec.get("beta", 1.0),
                      reward_noise=sec.get("reward_noise", 0.2))
    est = {r["method"]: r["mse"] for r in rows if r["target"] == "logging"}
    emit_chart(est, "bar", out / "mse.svg", title="MSE at the logging policy",
               ylabel="mean squared error")
    print(f"wrote {len(rows)} rows to {out / 'mse.csv'}")
    return EXIT_OK


_LANDSCAPE_DEFAULTS = {
    "K": [8, 16, 32, 64], "gap": 0.5, "init_bias": 4.0, "rate": 5.0, "budget": 2000,
    "threshold": 0.1, "methods": ["ips", "lpi", "clpi", "regkl"], "tau_scale": 0.5,
    "beta": 1.0, "restarts": 50, "census_K": 8, "census_contexts": 4, "census_rate": 1.0,
    "census_budget": 5000, "census_l2": 0.01, "census_init_scale": 3.0,
}


def cmd_landscape(args) -> int:
    """Plateau lengths on single-context traps and basin censuses on the composite trap."""
    cfg = _load_config(args) if args.config is not None else None
    sec = dict(_LANDSCAPE_DEFAULTS)
    given = cfg.extra.get("landscape", {}) if cfg is not None else {}
    unknown = set(given) - set(sec)
    if unknown:
        raise ConfigError(f"unknown key(s) in landscape: {sorted(unknown)}")
    sec.update(given)
    out = _out_dir(args, cfg)
    for m in sec["methods"]:
        if m not in ALL_METHODS or m in NEEDS_CLUSTERING or m in NEEDS_REWARD_MODEL:
            raise ConfigError(f"landscape probes support ips, cips and the PWLL methods, not {m!r}")
    seed = args.seed if args.seed is not None else 0

    rows = []
    tc = TrainConfig(1, int(sec["budget"]), float(sec["rate"]))
    for K in sec["K"]:
        spec = AdversarialSpec(int(K), 1.0 / K, float(sec["gap"]), float(sec["init_bias"]))
        env = build_adversarial(spec)
        for m in sec["methods"]:
            obj = make_objective(m, tau=sec["tau_scale"] / K, beta=float(sec["beta"]))
            rep = plateau_length(env, obj, tc, float(sec["threshold"]), adversarial_policy(spec))
            rows.append([int(K), m, rep.length, int(rep.unescaped), rep.initial_value,
                         rep.target_value])
    _write_rows(out / "plateau.csv",
                ["K", "method", "plateau_length", "unescaped", "initial_value", "target_value"], rows)
    emit_chart({m: [(r[0], r[2]) for r in rows if r[1] == m] for m in sec["methods"]}, "line",
               out / "plateau.svg", title="plateau length", xlabel="K", ylabel="iterations")

    K = int(sec["census_K"])
    env = build_composite_trap(AdversarialSpec(K, 1.0 / K, float(sec["gap"])),
                               int(sec["census_contexts"]))
    census_rows = []
    for m in sec["methods"]:
        l2 = 0.0 if m in OPE_METHODS else float(sec["census_l2"])
        ctc = TrainConfig(1, int(sec["census_budget"]), float(sec["census_rate"]), l2_strength=l2,
                          init_scale=float(sec["census_init_scale"]))
        obj = make_objective(m, tau=sec["tau_scale"] / K, beta=float(sec["beta"]))
        rep = basin_census(env, obj, int(sec["restarts"]), ctc, seed=seed, workers=args.workers)
        rep.to_csv(out / f"census_{m}.csv")
        census_rows.append([m, l2, int(sec["restarts"]), rep.num_basins])
    _write_rows(out / "census.csv", ["method", "l2", "restarts", "basins"], census_rows)
    print(f"wrote plateau and census results to {out}")
    return EXIT_OK


def cmd_params_report(args) -> int:
    cfg = _load_config(args)
    env = _need_env(cfg)
    out = _out_dir(args, cfg)
    sec = dict(cfg.extra.get("params", {}))
    unknown = set(sec) - {"light", "heavy", "seeds", "tau", "beta", "l2", "methods"}
    if unknown:
        raise ConfigError(f"unknown key(s) in params: {sorted(unknown)}")
    supported = [m for m in cfg.methods if m not in NEEDS_CLUSTERING and m not in NEEDS_REWARD_MODEL]
    methods = sec.get("methods", supported)
    if not methods:
        raise ConfigError("no configured method is supported by the parametrization report")
    light = PolicySpec.from_dict(sec.get("light", {"kind": "inner-product", "width": 8}))
    heavy = PolicySpec.from_dict(sec.get("heavy", {"kind": "inner-product", "width": 8,
                                                  "hidden": 256}))
    g = cfg.train
    tc = TrainConfig(g.batch_sizes[0], g.epochs, g.base_rates[0], g.schedules[0],
                     l2_strength=float(sec.get("l2", 0.0)))
    res = parametrization_report(env, methods, light, heavy, tc, cfg.n,
                                 seeds=sec.get("seeds", [0, 1, 2]), out=out,
                                 tau=sec.get("tau", 0.01), beta=sec.get("beta", 1.0))
    for row in res["summary"]:
        print(f"{row['method']:>6} {row['variant']:>5}: {row['num_params']} trainable reals, "
              f"epochs to 90% {row['mean_epochs_to_90']:.2f}, final {row['mean_final_value']:.4f}")
    return EXIT_OK


def cmd_chart(args) -> int:
    """Chart columns of a CSV file: ``--x``/``--y`` with optional ``--group``."""
    if args.input is None or args.y is None:
        raise ConfigError("chart needs --input and --y")
    try:
        with open(args.input, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as e:
        raise ConfigError(f"cannot read {args.input}: {e}") from e
    if not rows:
        raise ConfigError(f"{args.input} has no data rows")
    for col in filter(None, (args.x, args.y, args.group)):
        if col not in rows[0]:
            raise ConfigError(f"column {col!r} not in {args.input}")
    try:
        if args.kind == "bar":
            key = args.group or args.x
            if key is None:
                raise ConfigError("a bar chart needs --x or --group for the labels")
            series = {r[key]: float(r[args.y]) for r in rows}
        else:
            if args.x is None:
                raise ConfigError("a line chart needs --x")
            series = {}
            for r in rows:
                series.setdefault(r[args.group] if args.group else args.y, []).append(
                    (float(r[args.x]), float(r[args.y])))
    except ValueError as e:
        raise ConfigError(f"non-numeric chart data: {e}") from e
    out = Path(args.out) if args.out is not None else Path("chart.svg")
    if out.suffix != ".svg":
        out = out / "chart.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_chart(series, args.kind, out, title=args.title or "", xlabel=args.x or "",
               ylabel=args.y)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "generate": (cmd_generate, "sample a logged dataset and write the environment tables"),
    "train": (cmd_train, "train every configured method once"),
    "evaluate": (cmd_evaluate, "write the asymptotic oracle of every configured method"),
    "sweep": (cmd_sweep, "run the full train grid and summarize robustness"),
    "mse": (cmd_mse, "estimator MSE report, with PWLL objectives flagged as proxies"),
    "landscape": (cmd_landscape, "plateau lengths and basin censuses on trap instances"),
    "params-report": (cmd_params_report, "lightweight vs heavyweight policy comparison"),
    "chart": (cmd_chart, "render an SVG chart from CSV columns"),
}


def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="experiment config (JSON)")
    parser.add_argument("--out", default=d, help="output directory")
    parser.add_argument("--seed", type=int, default=d, help="override the environment seed")
    parser.add_argument("--workers", type=int, default=argparse.SUPPRESS if suppress else 1,
                        help="worker processes")
    parser.add_argument("--strict", action="store_true",
                        default=argparse.SUPPRESS if suppress else False,
                        help="exit with status 3 if any run fails")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oplscape", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        if name == "chart":
            p.add_argument("--input", help="CSV file to chart")
            p.add_argument("--x", help="x column (line) or label column (bar)")
            p.add_argument("--y", help="y column")
            p.add_argument("--group", help="column splitting rows into series")
            p.add_argument("--kind", choices=("line", "bar"), default="line")
            p.add_argument("--title")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OplError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
