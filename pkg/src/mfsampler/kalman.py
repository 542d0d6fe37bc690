"""Ensemble Kalman inversion (EKI) and the ensemble Kalman sampler (EKS).

Both are discrete-time interacting-particle updates driven by the empirical
covariances of the ensemble. EKI transports the prior to the posterior over
pseudo-time [0, 1]; EKS is a preconditioned Langevin scheme whose long-time
law is the posterior.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DivergenceError, InvalidConfiguration, SolveFailure
from .linalg_stats import RngStream, ensemble_stats, psd_sqrt

DIVERGENCE_BOUND = 1e12
METHODS = ("eki", "eks")


@dataclass
class KalmanConfig:
    """Run configuration of a Kalman ensemble sampler.

    For EKI the horizon is fixed to pseudo-time 1, so ``n_steps * step_size``
    must equal 1. For EKS it equals the requested horizon T.
    """

    method: str
    problem: object
    n_particles: int
    step_size: float
    n_steps: int
    seed: int = 0
    record_every: int = 10
    debug: bool = False

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise InvalidConfiguration(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.problem.is_bayesian:
            raise InvalidConfiguration("Kalman samplers need a Bayesian problem (G, prior, noise, y)")
        if self.n_particles < 1:
            raise InvalidConfiguration("n_particles must be positive")
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise InvalidConfiguration("step_size must be positive")
        if self.n_steps < 0:
            raise InvalidConfiguration("n_steps must be nonnegative")
        if self.record_every < 1:
            raise InvalidConfiguration("record_every must be positive")
        if self.method == "eki" and self.n_steps > 0:
            if abs(self.n_steps * self.step_size - 1.0) > 1e-12:
                raise InvalidConfiguration(
                    f"EKI runs to pseudo-time 1: n_steps*step_size = "
                    f"{self.n_steps * self.step_size!r}"
                )

    @classmethod
    def eki(cls, problem, n_particles, step_size, seed=0, **kw):
        n_steps = int(round(1.0 / step_size))
        return cls("eki", problem, n_particles, step_size, n_steps, seed=seed, **kw)

    @classmethod
    def eks(cls, problem, n_particles, step_size, horizon, seed=0, **kw):
        n_steps = int(round(horizon / step_size))
        if abs(n_steps * step_size - horizon) > 1e-12 * max(1.0, horizon):
            raise InvalidConfiguration(
                f"horizon {horizon} is not a multiple of step_size {step_size}"
            )
        return cls("eks", problem, n_particles, step_size, n_steps, seed=seed, **kw)

    @property
    def horizon(self):
        return self.n_steps * self.step_size


def _check_finite(x, step):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x), initial=0.0) > DIVERGENCE_BOUND:
        raise DivergenceError(f"ensemble diverged at step {step}", step=step)


def _check_affine(stats, problem):
    A = problem.forward_map.linear_part
    if A is None:
        return
    expected = stats.cov_xx @ A.T
    scale = max(1.0, float(np.max(np.abs(expected), initial=0.0)))
    err = float(np.max(np.abs(stats.cov_xG - expected), initial=0.0))
    if err > 1e-12 * scale:
        raise AssertionError(f"cov_xG differs from cov_xx A^T by {err:.3e}")


def eki_step(x, stats, problem, h, xi, Gx=None, step=None):
    """One EKI update of positions ``x`` (N, d).

    Drift ``x + h Cov_xG Γ⁻¹ (y − G(x))`` followed by the additive noise
    ``√h Cov_xG Γ^{-1/2} ξ`` with ``ξ`` of shape (N, dim_out).
    """
    if Gx is None:
        Gx = problem.forward_map(x)
    K = stats.cov_xG @ problem.noise.precision
    B = stats.cov_xG @ problem.noise.inv_sqrt
    x_new = x + h * ((problem.data - Gx) @ K.T) + math.sqrt(h) * (xi @ B.T)
    _check_finite(x_new, step)
    return x_new


def eks_drift(x, stats, problem, h, Gx=None):
    """Semi-implicit EKS drift: solves (I + h C Γ0⁻¹) x* = rhs for every particle.

    Uses (I + h C P0) x* = r  <=>  (Γ0 + h C) z = r, x* = Γ0 z, which keeps
    the system matrix symmetric positive definite.
    """
    if Gx is None:
        Gx = problem.forward_map(x)
    C = stats.cov_xx
    Gamma0 = problem.prior.covariance
    K = stats.cov_xG @ problem.noise.precision
    prior_pull = h * (C @ (problem.prior.precision @ problem.prior.mean))
    rhs = x - h * ((Gx - problem.data) @ K.T) + prior_pull
    M = Gamma0 + h * C
    try:
        factor = linalg.cho_factor(0.5 * (M + M.T), lower=True)
    except linalg.LinAlgError as exc:
        raise SolveFailure("I + h Cov Γ0⁻¹ is singular") from exc
    z = linalg.cho_solve(factor, rhs.T)
    return (Gamma0 @ z).T


def eks_step(x, stats, problem, h, xi, Gx=None, step=None):
    """One EKS update: semi-implicit drift plus ``sqrt(2h Cov_xx) ξ``."""
    x_star = eks_drift(x, stats, problem, h, Gx=Gx)
    S = psd_sqrt(2.0 * h * stats.cov_xx)
    x_new = x_star + xi @ S
    _check_finite(x_new, step)
    return x_new


@dataclass
class KalmanResult:
    """Output of :func:`run_kalman`.

    ``summary`` rows are ``(step, pseudo_time, mean..., cov_trace)``.
    """

    config: KalmanConfig
    initial: np.ndarray
    final: np.ndarray
    snapshots: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)

    def summary_array(self):
        return np.array(self.summary, dtype=float)


def initial_ensemble(cfg):
    rng = RngStream.for_purpose(cfg.seed, "kalman-init").generator()
    return cfg.problem.prior.sample(rng, cfg.n_particles)


def noise_dim(cfg):
    if cfg.method == "eki":
        return cfg.problem.forward_map.dim_out
    return cfg.problem.dim


def run_kalman(cfg, initial=None, noise=None):
    """Run EKI or EKS for ``cfg.n_steps`` steps.

    Parameters
    ----------
    cfg : KalmanConfig
    initial : ndarray, optional
        Starting ensemble (N, d); drawn i.i.d. from the prior by default.
    noise : numpy Generator, optional
        Source of the per-step ξ draws. Defaults to the config's seeded stream.
        Passing the same generator state to two runs makes them share noise.
    """
    problem = cfg.problem
    x = initial_ensemble(cfg) if initial is None else np.array(initial, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape != (cfg.n_particles, problem.dim):
        raise InvalidConfiguration(
            f"initial ensemble shape {x.shape} != ({cfg.n_particles}, {problem.dim})"
        )
    if noise is None:
        noise = RngStream.for_purpose(cfg.seed, "kalman-noise").generator()
    step_fn = eki_step if cfg.method == "eki" else eks_step
    k = noise_dim(cfg)
    h = cfg.step_size

    result = KalmanResult(cfg, x.copy(), x)
    result.snapshots[0] = x.copy()

    def record(m, xm, stats):
        result.summary.append(
            (m, m * h, *stats.mean_x.tolist(), float(np.trace(stats.cov_xx)))
        )

    Gx = problem.forward_map(x)
    stats = ensemble_stats(x, Gx=Gx)
    record(0, x, stats)
    for m in range(cfg.n_steps):
        if cfg.debug:
            _check_affine(stats, problem)
        xi = noise.standard_normal((cfg.n_particles, k))
        x = step_fn(x, stats, problem, h, xi, Gx=Gx, step=m + 1)
        Gx = problem.forward_map(x)
        stats = ensemble_stats(x, Gx=Gx)
        record(m + 1, x, stats)
        if (m + 1) % cfg.record_every == 0 or m + 1 == cfg.n_steps:
            result.snapshots[m + 1] = x.copy()
    result.final = x
    return result
