"""Ensemble statistics, symmetric matrix square roots and solves, seeded streams."""

import zlib
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidArgument, NotPSDError, SolveFailure

PSD_TOL = 1e-10


@dataclass(frozen=True)
class EnsembleStats:
    """Empirical means and covariances of an ensemble, normalized by 1/N."""

    mean_x: np.ndarray
    mean_G: np.ndarray
    cov_xx: np.ndarray
    cov_xG: np.ndarray


def as_ensemble(positions):
    """Validate and return particle positions as a float array of shape (N, d)."""
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise InvalidArgument(f"ensemble must have shape (N, d), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("ensemble contains non-finite positions")
    return x


def ensemble_stats(x, forward_map=None, Gx=None):
    """Means and 1/N covariances of positions ``x`` and their images ``G(x)``.

    ``Gx`` may be passed when the forward-map values are already known. With
    neither ``forward_map`` nor ``Gx``, G is the identity.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if Gx is None:
        Gx = x if forward_map is None else forward_map(x)
    mean_x = x.mean(axis=0)
    mean_G = Gx.mean(axis=0)
    dx = x - mean_x
    dG = Gx - mean_G
    cov_xx = dx.T @ dx / n
    cov_xx = 0.5 * (cov_xx + cov_xx.T)
    cov_xG = dx.T @ dG / n
    return EnsembleStats(mean_x, mean_G, cov_xx, cov_xG)


def psd_sqrt(C):
    """Symmetric square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in [-1e-10, 0) are clamped to zero; anything more negative raises.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    scale = max(1.0, float(np.max(np.abs(C)))) if C.size else 1.0
    if np.max(np.abs(C - C.T), initial=0.0) > PSD_TOL * scale:
        raise InvalidArgument("psd_sqrt needs a symmetric matrix")
    if C.shape == (1, 1):
        c = C[0, 0]
        if c < -PSD_TOL:
            raise NotPSDError(f"negative eigenvalue {c:.3e}")
        return np.array([[np.sqrt(max(c, 0.0))]])
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if w.size and w.min() < -PSD_TOL:
        raise NotPSDError(f"negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.T
    return 0.5 * (S + S.T)


def spd_solve(M, b):
    """Solve ``M x = b`` for symmetric positive-definite ``M`` (Cholesky)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float)
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SolveFailure(f"matrix is not symmetric positive definite: {exc}") from exc
    return linalg.cho_solve(factor, b)


def spd_inv_sqrt(M):
    """Inverse of the symmetric square root of an SPD matrix."""
    S = psd_sqrt(M)
    try:
        return np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise SolveFailure("matrix square root is singular") from exc


def stream_id(tag, index=0):
    """Stable 64-bit stream id from a purpose tag and an integer index."""
    return (zlib.crc32(tag.encode()) << 32) | (int(index) & 0xFFFFFFFF)


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream_id)``.

    Streams are Philox generators keyed by a SeedSequence spawned from the
    pair, so equal pairs replay identical draws and distinct ids are
    independent.
    """

    seed: int
    stream_id: int = 0

    @classmethod
    def for_purpose(cls, seed, tag, index=0):
        return cls(int(seed), stream_id(tag, index))

    def generator(self):
        ss = np.random.SeedSequence([self.seed & (2**64 - 1), self.stream_id & (2**64 - 1)])
        return np.random.Generator(np.random.Philox(ss))


def gaussian_draw(rng, n, dim=1):
    """``n`` standard normal vectors of length ``dim`` as an (n, dim) array.

    ``rng`` is an RngStream or an already-created numpy Generator.
    """
    if isinstance(rng, RngStream):
        rng = rng.generator()
    if n < 0:
        raise InvalidArgument("n must be nonnegative")
    return rng.standard_normal((n, dim))
