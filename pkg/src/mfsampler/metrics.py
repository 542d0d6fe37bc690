"""Sample-based diagnostics: mollified KL divergences, empirical W2,
weak errors of test functions and log-log rate fits."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .errors import InvalidArgument

DEFAULT_DELTA = 0.3
ASSIGNMENT_CAP = 512


@dataclass(frozen=True)
class Mollifier:
    """Gaussian mollifier (8πδ²)^{-d/2} exp(-|x|²/(8δ²))."""

    delta: float
    dim: int

    def __post_init__(self):
        if not self.delta > 0:
            raise InvalidArgument("mollifier width must be positive")

    @property
    def log_norm(self):
        return -0.5 * self.dim * np.log(8.0 * np.pi * self.delta**2)

    @property
    def inv_width(self):
        return 1.0 / (8.0 * self.delta**2)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return np.exp(self.log_norm - self.inv_width * np.sum(z * z, axis=-1))


def _as_points(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _log_kde(z, log_norm, inv_width, include_self=True, chunk=2048):
    # log((1/N) Σ_j exp(log_norm - inv_width |z_i - z_j|²)) for every i
    n = z.shape[0]
    sq = np.sum(z * z, axis=1)
    out = np.empty(n)
    denom = n if include_self else n - 1
    if denom < 1:
        raise InvalidArgument("excluding the self term needs at least two samples")
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * z[start:stop] @ z.T
        np.maximum(d2, 0.0, out=d2)
        expo = -inv_width * d2
        if not include_self:
            expo[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        out[start:stop] = logsumexp(expo, axis=1)
    return out + log_norm - np.log(denom)


def mollified_kl_x(samples_x, pot, delta=DEFAULT_DELTA, include_self=True):
    """Mollified KL of the position marginal against exp(-f).

    Mean over i of log((1/N) Σ_j ρ^δ(x_i − x_j)) plus the mean of f(x_i).
    """
    x = _as_points(samples_x)
    moll = Mollifier(delta, x.shape[1])
    log_kde = _log_kde(x, moll.log_norm, moll.inv_width, include_self)
    return float(np.mean(log_kde) + np.mean(pot(x)))


def mollified_kl_phase(samples_x, samples_v, pot, delta=DEFAULT_DELTA, include_self=True):
    """Phase-space mollified KL against exp(-f(x) - |v|²/2).

    Uses the product mollifier ρ^δ(x_i − x_j) ρ^δ(v_i − v_j).
    """
    x = _as_points(samples_x)
    v = _as_points(samples_v)
    if x.shape != v.shape:
        raise InvalidArgument("positions and velocities must have the same shape")
    moll = Mollifier(delta, x.shape[1])
    z = np.concatenate([x, v], axis=1)
    log_kde = _log_kde(z, 2.0 * moll.log_norm, moll.inv_width, include_self)
    energy = pot(x) + 0.5 * np.sum(v * v, axis=1)
    return float(np.mean(log_kde) + np.mean(energy))


def wasserstein2(a, b):
    """Empirical W2 between two equal-size point clouds.

    Sorting in d = 1; exact optimal assignment on squared distances otherwise.
    """
    a = _as_points(a)
    b = _as_points(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"cloud shapes differ: {a.shape} vs {b.shape}")
    if a.shape[1] == 1:
        diff = np.sort(a[:, 0]) - np.sort(b[:, 0])
        return float(np.sqrt(np.mean(diff * diff)))
    return wasserstein2_assignment(a, b)


def wasserstein2_assignment(a, b):
    """W2 through the exact assignment problem (any dimension, N <= 512)."""
    a = _as_points(a)
    b = _as_points(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"cloud shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] > ASSIGNMENT_CAP:
        raise InvalidArgument(f"exact assignment is capped at N={ASSIGNMENT_CAP}")
    cost = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def weak_error(samples, g, reference_expectation):
    """|mean of g over the samples - reference expectation|."""
    vals = np.asarray(g(_as_points(samples)), dtype=float)
    return float(abs(vals.mean() - reference_expectation))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def fit_rate(points):
    """Least-squares line through (log N, log error)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise InvalidArgument("fit_rate needs at least three (N, error) pairs")
    if np.any(pts <= 0):
        raise InvalidArgument("fit_rate needs positive N and errors")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), float(r2))
