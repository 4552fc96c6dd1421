"""Acceptance checks; each prints one PASS/FAIL line."""
import json
import os
import time

import numpy as np
import pytest
from scipy import stats

from helpers import random_dataset, random_linear_policy, reduction_gaps
from oplscape.bench import ExperimentConfig, mse_report, run_sweep
from oplscape.bench.cli import main
from oplscape.core import Clustering, LinearPolicy
from oplscape.envgen import (
    Environment,
    make_environment,
    make_reward_model,
    population_dataset,
    sample_logged,
)
from oplscape.landscape import (
    AdversarialSpec,
    adversarial_policy,
    basin_census,
    build_adversarial,
    build_composite_trap,
    plateau_length,
)
from oplscape.objectives import ALL_METHODS, OPE_METHODS, PWLL_METHODS, make_objective
from oplscape.ope import ClusterPolicy, OpeConfig
from oplscape.oracle import (
    argmax_agreement,
    asymptotic_ope_policy,
    asymptotic_pwll_distribution,
    oracle_for_method,
    policy_as_oracle,
)
from oplscape.pwll import Weighting, concavity_certificate
from oplscape.trainer import TrainConfig, finite_diff_check, train


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return report


def test_c01_reduction_identities(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = max(np.max(np.abs(reduction_gaps(rng))) for _ in range(100))
    secs = time.perf_counter() - t
    verdict(1, worst <= 1e-10 and secs < 60,
            f"max gap {worst:.2e} over 100 instances (<= 1e-10) in {secs:.1f}s (< 60s)")


def _policy_for(method, rng, ds, cl, rm):
    if method == "potec":
        return ClusterPolicy(random_linear_policy(rng, cl.num_clusters, ds.d, l2=0.01), cl, rm)
    return random_linear_policy(rng, ds.K, ds.d, l2=0.01)


def test_c02_gradient_correctness(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = {}
    for method in ALL_METHODS:
        errs = []
        for _ in range(20):
            ds, cl, rm = random_dataset(rng)
            obj = make_objective(method, tau=0.1, beta=0.7, reward_model=rm, clustering=cl)
            pol = _policy_for(method, rng, ds, cl, rm)
            errs.append(finite_diff_check(obj, ds, pol, num_coords=pol.num_params,
                                          seed=int(rng.integers(1 << 30))))
        worst[method] = max(errs)
    secs = time.perf_counter() - t
    top = max(worst.values())
    verdict(2, top < 1e-5 and secs < 120,
            f"max relative error {top:.2e} (< 1e-5) across 9 objectives x 20 instances "
            f"in {secs:.1f}s (< 120s)")


CENSUS_SPEC = AdversarialSpec(K=8, epsilon=1 / 8, gap=0.5)


def test_c03_strong_concavity(verdict):
    t = time.perf_counter()
    rng = np.random.default_rng(3)
    ds, _, _ = random_dataset(rng, n=60, K=6, d=3, m=6)
    env = build_composite_trap(CENSUS_SPEC, 4)
    failures = []
    for kind, w in (("lpi", Weighting("lpi")), ("clpi", Weighting("clpi", tau=0.05)),
                    ("regkl", Weighting("regkl", beta=1.0))):
        for l2 in (0.01, 0.1):
            rep = concavity_certificate(ds, LinearPolicy.zeros(ds.K, ds.d, l2), w, trials=1000,
                                        seed=1, scale=2.0)
            if not rep.passed or rep.max_hessian_eigenvalue is None:
                failures.append(f"certificate {kind} l2={l2}: {rep.message}")
            tc = TrainConfig(1, 5000, 1.0, l2_strength=l2, init_scale=3.0)
            census = basin_census(env, make_objective(kind, tau=0.05, beta=1.0), 50, tc, seed=0)
            if census.num_basins != 1:
                failures.append(f"census {kind} l2={l2}: {census.num_basins} basins")
    secs = time.perf_counter() - t
    verdict(3, not failures and secs < 300,
            f"certificates (1000 trials + Hessian) and 50-restart censuses for lpi/clpi/regkl at "
            f"l2 in {{0.01, 0.1}}: {failures or 'all pass, 1 basin each'} in {secs:.1f}s (< 300s)")


def separated_environment(m, K, seed, num_clusters=8, best_logging=0.1):
    """Full-support environment whose best action per context is clearly separated."""
    rng = np.random.default_rng(seed)
    best = rng.integers(0, K, m)
    R = rng.uniform(0.05, 0.45, (m, K))
    R[np.arange(m), best] = 0.95
    P = rng.dirichlet(np.full(K - 1, 5.0), size=m) * (1 - best_logging)
    P = np.insert(P, 0, best_logging, axis=1)
    P = np.stack([np.roll(P[i], best[i]) for i in range(m)])
    cl = Clustering.random(K, num_clusters, rng)
    return Environment.from_tables(R, P, contexts=np.eye(m), clustering=cl, seed=seed)


@pytest.mark.slow
def test_c04_oracle_convergence(verdict):
    t = time.perf_counter()
    tau = 0.02
    env = separated_environment(16, 64, 0)
    assert np.all(env.logging_table > 0)
    ds = sample_logged(env, 100_000, 0)
    rm = make_reward_model(env, 0.1, 0)
    agreement = {}
    for method in ALL_METHODS:
        obj = make_objective(method, tau=tau, beta=1.0, reward_model=rm, clustering=env.clustering)
        if method == "potec":
            pol = ClusterPolicy(LinearPolicy.zeros(env.clustering.num_clusters, env.d),
                                env.clustering, rm)
        else:
            pol = LinearPolicy.zeros(env.K, env.d)
        final, _ = train(obj, ds, pol, TrainConfig(ds.n, 500, 10.0))
        oracle = oracle_for_method(env, method, tau=tau, beta=1.0, reward_model=rm,
                                   clustering=env.clustering)
        agreement[method] = argmax_agreement(policy_as_oracle(env, final), oracle)
    secs = time.perf_counter() - t
    low = min(agreement.values())
    verdict(4, low >= 0.95 and secs < 900,
            f"min argmax agreement {low:.3f} (>= 0.95) at n=1e5, m=16, K=64: "
            + ", ".join(f"{m}={a:.2f}" for m, a in agreement.items()) + f" in {secs:.1f}s")


def test_c05_clipping_bias(verdict):
    env = Environment.from_tables([[1.0, 0.6, 0.2]], [[0.05, 0.6, 0.35]], contexts=np.ones((1, 1)))
    ds = sample_logged(env, 20_000, 0)
    final, _ = train(make_objective("cips", tau=0.1), ds, LinearPolicy.zeros(3, 1),
                     TrainConfig(ds.n, 2000, 5.0))
    trained = int(final.deploy(np.ones(1)))
    ips = int(asymptotic_ope_policy(env, "ips").actions[0])
    verdict(5, trained == 1 and ips == 0,
            f"trained cIPS deploys action {trained} (expect 1), IPS oracle deploys {ips} (expect 0)")


def _tie_free(seed, m=8, K=6, num_clusters=0):
    rng = np.random.default_rng(seed)
    R = rng.random((m, K))
    P = rng.dirichlet(np.ones(K), size=m)
    cl = Clustering.random(K, num_clusters, rng) if num_clusters else None
    return Environment.from_tables(R, P, clustering=cl, seed=seed)


def test_c06_clpi_deploys_like_cips(verdict):
    agree = [argmax_agreement(asymptotic_pwll_distribution(e, Weighting("clpi", tau=0.15)),
                              asymptotic_ope_policy(e, "cips", OpeConfig(tau=0.15)))
             for e in (_tie_free(100 + s) for s in range(50))]
    verdict(6, min(agree) == 1.0, f"min agreement {min(agree)} over 50 tie-free environments")


def test_c07_potec_recovers_offcem(verdict):
    mismatches = 0
    for s in range(20):
        env = _tie_free(200 + s, m=12, K=16, num_clusters=4)
        cfg = OpeConfig(reward_model=make_reward_model(env), clustering=env.clustering)
        mismatches += int(np.sum(asymptotic_ope_policy(env, "potec", cfg).actions
                                 != asymptotic_ope_policy(env, "offcem", cfg).actions))
    verdict(7, mismatches == 0, f"{mismatches} context mismatches over 20 environments")


def test_c08_plateau_trend(verdict):
    t = time.perf_counter()
    Ks = (8, 16, 32, 64)
    tc = TrainConfig(1, 2000, 5.0)
    lengths = {m: [] for m in ("ips",) + PWLL_METHODS}
    for K in Ks:
        spec = AdversarialSpec(K, 1 / K, 0.5, init_bias=4.0)
        env = build_adversarial(spec)
        for m in lengths:
            rep = plateau_length(env, make_objective(m, tau=0.5 / K, beta=1.0), tc, 0.1,
                                 policy=adversarial_policy(spec))
            lengths[m].append(rep.length)
    rho = stats.spearmanr(Ks, lengths["ips"]).statistic
    monotone = all(np.diff(lengths["ips"]) >= 0)
    pwll_max = max(max(lengths[m]) for m in PWLL_METHODS)
    secs = time.perf_counter() - t
    verdict(8, monotone and rho == 1.0 and pwll_max < 5 and secs < 600,
            f"IPS plateau {lengths['ips']} (Spearman {rho:.2f}), PWLL max {pwll_max} (< 5) "
            f"in {secs:.1f}s")


@pytest.mark.slow
def test_c09_multiple_basins(verdict):
    env = build_composite_trap(CENSUS_SPEC, 4)
    ips = basin_census(env, make_objective("ips"), 50,
                       TrainConfig(1, 3000, 1.0, l2_strength=0.0, init_scale=3.0), seed=0)
    pwll = {m: basin_census(env, make_objective(m, tau=0.05, beta=1.0), 50,
                            TrainConfig(1, 5000, 1.0, l2_strength=0.01, init_scale=3.0),
                            seed=0).num_basins
            for m in PWLL_METHODS}
    verdict(9, ips.num_basins >= 2 and all(v == 1 for v in pwll.values()),
            f"IPS census {ips.num_basins} basins (>= 2); PWLL censuses {pwll} (each 1)")


DESK_CONFIG = {
    "methods": list(ALL_METHODS),
    "environment": {"m": 64, "K": 512, "d": 16, "seed": 0, "num_clusters": 32},
    "n": 50_000,
}


@pytest.fixture(scope="module")
def desk_sweep(tmp_path_factory):
    cfg = ExperimentConfig.from_dict(DESK_CONFIG)
    t = time.perf_counter()
    res = run_sweep(cfg, out=tmp_path_factory.mktemp("desk"), workers=os.cpu_count() or 1)
    return cfg, res, time.perf_counter() - t


@pytest.mark.slow
def test_c10_pwll_robustness_exceeds_ope(verdict, desk_sweep):
    cfg, res, secs = desk_sweep
    ratio = {row["method"]: row["robustness_ratio"] for row in res.summary}
    worst_pwll = min(ratio[m] for m in PWLL_METHODS)
    best_ope = max(ratio[m] for m in OPE_METHODS)
    cpus = os.cpu_count() or 1
    verdict(10, not res.failed and worst_pwll > best_ope,
            f"robustness ratios over {len(cfg.train.points())} grid points: "
            + ", ".join(f"{m}={ratio[m]:.3f}" for m in ALL_METHODS)
            + f"; min PWLL {worst_pwll:.3f} vs max OPE {best_ope:.3f}; "
              f"{secs:.0f}s on {cpus} worker(s)")


@pytest.mark.slow
def test_c11_mse_does_not_track_learning(verdict, desk_sweep):
    cfg, res, _ = desk_sweep
    env = make_environment(cfg.environment)
    K = env.n_actions
    best = np.zeros_like(env.reward_table)
    best[np.arange(env.m), np.argmax(env.reward_table, axis=1)] = 1.0
    targets = {"logging": env.logging_table, "uniform": np.full_like(best, 1.0 / K),
               "best": 0.5 * best + 0.5 * env.logging_table}
    methods = [m for m in ALL_METHODS if m != "potec"]
    rows = mse_report(env, cfg.train.seeds, methods, targets, cfg.n, tau=0.01, beta=1.0,
                      reward_noise=0.2)
    mse = {m: np.mean([r["mse"] for r in rows if r["method"] == m]) for m in methods}
    best_ope = min(mse[m] for m in methods if m in OPE_METHODS)
    # each method at its best point of the train grid
    tuned = {row["method"]: row["max_value"] for row in res.summary}
    top = max(tuned.values())
    close = {m: tuned[m] >= 0.95 * top for m in PWLL_METHODS}
    far = {m: mse[m] >= 10 * best_ope for m in PWLL_METHODS}
    verdict(11, all(far.values()) and any(close[m] and far[m] for m in PWLL_METHODS),
            f"best OPE MSE {best_ope:.2e}; PWLL proxy MSE "
            + ", ".join(f"{m}={mse[m]:.2e}" for m in PWLL_METHODS)
            + f"; tuned true value best {top:.4f}, PWLL "
            + ", ".join(f"{m}={tuned[m]:.4f}" for m in PWLL_METHODS) + " (need >= 95% of best)")


REPRO_CONFIG = {
    "methods": ["ips", "dr", "mips", "lpi", "clpi"],
    "environment": {"m": 6, "K": 12, "d": 3, "seed": 4, "num_clusters": 3},
    "n": 400,
    "train": {"batch_sizes": [32, 400], "schedules": ["constant", "cosine"],
              "base_rates": [0.5], "epochs": 2},
    "mse": {"seeds": [0, 1, 2], "n": 300},
    "landscape": {"K": [4, 8], "budget": 100, "restarts": 3, "census_budget": 200,
                  "methods": ["ips", "lpi"]},
    "params": {"light": {"kind": "inner-product", "width": 2},
               "heavy": {"kind": "inner-product", "width": 2, "hidden": 8}, "seeds": [0, 1, 2]},
}


def _csv_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_c12_reproducible_cli(verdict, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(REPRO_CONFIG))
    commands = ["generate", "train", "evaluate", "sweep", "mse", "landscape", "params-report"]
    outputs = {}
    for run in ("first", "second"):
        root = tmp_path / run
        for c in commands:
            assert main([c, "--config", str(cfg), "--out", str(root / c)]) == 0
        assert main(["chart", "--input", str(root / "sweep" / "summary.csv"), "--x", "method",
                     "--y", "mean_value", "--kind", "bar", "--out",
                     str(root / "chart" / "chart.svg")]) == 0
        outputs[run] = {c: _csv_bytes(root / c) for c in commands}
        outputs[run]["chart"] = {"chart.svg": (root / "chart" / "chart.svg").read_bytes()}
    differing = [f"{c}/{name}" for c in outputs["first"] for name in outputs["first"][c]
                 if outputs["first"][c][name] != outputs["second"][c].get(name)]
    count = sum(len(v) for v in outputs["first"].values())
    verdict(12, not differing and all(outputs["first"][c] for c in commands),
            f"{count} output files over {len(commands) + 1} commands; differing: {differing or 'none'}")
