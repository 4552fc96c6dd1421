"""Policy-weighted log-likelihood objectives.

    U_g(pi) = (1/n) sum_i g(r_i, pi_0(a_i|x_i)) log pi(a_i|x_i)  -  l2/2 |theta|^2

with the LPI (g = r), clipped LPI (g = r / max(p0, tau)) and RegKL
(g = exp(r / beta) - 1) weightings, plus a numerical strong-concavity
certificate for linear softmax policies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import LoggedDataset
from .errors import ConfigError
from .objectives import BoundObjective, Objective, PwllObjective, Terms

__all__ = [
    "Weighting",
    "regkl_weight",
    "pwll_terms",
    "pwll_objective",
    "pwll_gradient",
    "CertificateReport",
    "concavity_certificate",
    "DEFAULT_BETA_GRID",
]

DEFAULT_BETA_GRID = (0.2, 0.5, 1.0, 2.0, 5.0)


def regkl_weight(r, beta: float):
    """exp(r / beta) - 1, computed with expm1 so that large beta stays accurate."""
    if not beta > 0:
        raise ConfigError("RegKL temperature beta must be positive")
    return np.expm1(np.asarray(r, dtype=float) / beta)


@dataclass(frozen=True)
class Weighting:
    """Weight function g(r, p0) of a PWLL objective."""

    kind: str
    tau: float = 0.0
    beta: float = 1.0
    fn: Optional[Callable] = None

    def __post_init__(self):
        if self.kind not in ("lpi", "clpi", "regkl", "custom"):
            raise ConfigError(f"unknown weighting {self.kind!r}")
        if self.kind == "regkl" and not self.beta > 0:
            raise ConfigError("RegKL temperature beta must be positive")
        if self.kind == "clpi" and not 0.0 <= self.tau <= 1.0:
            raise ConfigError("cLPI threshold tau must lie in [0, 1]")
        if self.kind == "custom" and self.fn is None:
            raise ConfigError("custom weighting needs a function g(r, p0)")

    def __call__(self, r, p0):
        r = np.asarray(r, dtype=float)
        p0 = np.asarray(p0, dtype=float)
        if self.kind == "lpi":
            return r.copy()
        if self.kind == "clpi":
            return r / np.maximum(p0, self.tau)
        if self.kind == "regkl":
            return regkl_weight(r, self.beta)
        g = np.asarray(self.fn(r, p0), dtype=float)
        if np.any(g < 0):
            raise ConfigError("weighting function returned a negative weight")
        return g


def pwll_terms(ds: LoggedDataset, w: Weighting) -> Terms:
    Xu, inv = ds.unique_contexts
    return Terms(
        unique=Xu, inverse=inv, slots=ds.actions,
        values=ds.sample_weights * w(ds.rewards, ds.logging_probs),
        row_weights=ds.sample_weights, n_slots=ds.n_actions, log=True,
    )


def pwll_objective(ds: LoggedDataset, policy, w: Weighting, regularize: bool = True) -> float:
    """Mean weighted log-likelihood of the logged actions, minus the policy's l2 penalty."""
    Xu, inv = ds.unique_contexts
    lp = policy.log_probs(Xu)[inv, ds.actions]
    value = ds.mean(w(ds.rewards, ds.logging_probs) * lp)
    if regularize:
        value -= policy.penalty()
    return value


def pwll_gradient(ds: LoggedDataset, policy, w: Weighting, regularize: bool = True) -> np.ndarray:
    """Analytic gradient; for linear policies sum_i g_i (e_{a_i} - pi(.|x_i)) x_i^T / n - l2 theta."""
    return BoundObjective(PwllObjective(w), ds).gradient(policy, regularize=regularize)


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    trials: int
    l2_strength: float
    worst_midpoint_margin: float
    max_hessian_eigenvalue: Optional[float]
    message: str = ""


def _fd_hessian(bound, policy, theta, step):
    P = theta.size
    H = np.empty((P, P))
    for j in range(P):
        e = np.zeros(P)
        e[j] = step
        gp = bound.gradient(policy.with_params(theta + e))
        gm = bound.gradient(policy.with_params(theta - e))
        H[:, j] = (gp - gm) / (2 * step)
    return 0.5 * (H + H.T)


def concavity_certificate(ds: LoggedDataset, policy, objective, trials: int = 100,
                          seed: int = 0, scale: float = 1.0, tol: float = 1e-9,
                          hessian_tol: float = 1e-6, max_hessian_params: int = 200,
                          hessian_points: int = 3) -> CertificateReport:
    """Numerically certify l2-strong concavity of an objective over a linear policy family.

    ``objective`` is a ``Weighting`` or any ``Objective``; ``policy`` fixes the
    family and the l2 strength (which must be positive). For ``trials`` random
    parameter pairs the midpoint inequality

        U(mid) >= (U(t1) + U(t2)) / 2 + (l2 / 8) |t1 - t2|^2

    is checked, and on families with at most ``max_hessian_params`` parameters
    the largest eigenvalue of a finite-difference Hessian must not exceed
    ``-l2``.
    """
    if not policy.is_linear:
        raise ConfigError(
            "strong concavity is only claimed for softmax policies whose scores are "
            "linear in the parameters; this policy has a nonlinear encoder"
        )
    l2 = policy.l2_strength
    if not l2 > 0:
        raise ConfigError("the certificate needs a positive l2 strength")
    if isinstance(objective, Weighting):
        objective = PwllObjective(objective)
    if not isinstance(objective, Objective):
        raise ConfigError("objective must be a Weighting or an Objective")
    bound = objective.bind(ds)
    rng = np.random.default_rng(seed)
    P = policy.num_params

    def U(theta):
        return bound.value(policy.with_params(theta))

    worst = np.inf
    passed = True
    for _ in range(trials):
        t1 = scale * rng.standard_normal(P)
        t2 = scale * rng.standard_normal(P)
        u1, u2, um = U(t1), U(t2), U(0.5 * (t1 + t2))
        diff = t1 - t2
        margin = um - 0.5 * (u1 + u2) - l2 / 8.0 * float(diff @ diff)
        slack = tol * (1.0 + max(abs(u1), abs(u2), abs(um)))
        worst = min(worst, margin)
        passed = passed and margin + slack >= 0.0
    msg = "midpoint inequality holds" if passed else "midpoint inequality violated"

    top_eig = None
    if P <= max_hessian_params:
        top_eig = -np.inf
        for _ in range(hessian_points):
            theta = scale * rng.standard_normal(P)
            H = _fd_hessian(bound, policy, theta, 1e-5)
            top_eig = max(top_eig, float(np.linalg.eigvalsh(H)[-1]))
        if top_eig > -l2 + hessian_tol:
            passed = False
            msg += f"; Hessian eigenvalue {top_eig:.3g} exceeds -l2"
    return CertificateReport(passed, trials, l2, float(worst), top_eig, msg)
