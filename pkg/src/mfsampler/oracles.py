"""Independent ground truth: Gaussian conjugacy, the EKI interpolation path,
grid-based inverse-transform sampling, equilibrium phase-space draws and the
energy-matched initial velocity variance.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .core_model import GaussianSpec
from .errors import GridTooSmall, InvalidArgument, InvalidConfiguration


def _linear_gaussian_parts(prior, A, noise, y):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if A.shape != (noise.dim, prior.dim) or y.size != noise.dim:
        raise InvalidArgument(
            f"inconsistent shapes: A {A.shape}, prior dim {prior.dim}, "
            f"noise dim {noise.dim}, y {y.shape}"
        )
    AtGinv = A.T @ noise.precision
    return AtGinv @ A, AtGinv @ (y - noise.mean), prior.precision


def gaussian_interpolant(prior, A, noise, y, t):
    """Gaussian law proportional to prior(x) * exp(-t * misfit(x)) for G(x) = A x.

    Precision ``Γ0⁻¹ + t AᵀΓ⁻¹A`` and mean ``C(t)(t AᵀΓ⁻¹y + Γ0⁻¹x0)``.
    """
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument(f"pseudo-time must lie in [0, 1], got {t}")
    if t == 0.0:
        return prior
    H, b, P0 = _linear_gaussian_parts(prior, A, noise, y)
    precision = P0 + t * H
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (t * b + P0 @ prior.mean)
    return GaussianSpec(mean, cov)


def gaussian_posterior(prior, A, noise, y):
    """Conjugate posterior of a linear-Gaussian inverse problem."""
    return gaussian_interpolant(prior, A, noise, y, 1.0)


def problem_interpolant(problem, t):
    """:func:`gaussian_interpolant` for a linear ProblemSpec."""
    if not problem.forward_map.is_linear:
        raise InvalidArgument("the Gaussian path oracle needs a linear forward map")
    return gaussian_interpolant(
        problem.prior, problem.forward_map.linear_part, problem.noise, problem.data, t
    )


def problem_posterior(problem):
    return problem_interpolant(problem, 1.0)


@dataclass(frozen=True)
class GridSpec:
    """Quadrature grid for inverse-transform sampling: [-radius, radius]^d."""

    radius: float = 8.0
    n_points_1d: int = 100_000
    n_points_2d: int = 1024
    mass_tol: float = 1e-8


def _unnormalized_density(pot, pts):
    f = pot(pts)
    return np.exp(-(f - np.min(f)))


def _check_mass_1d(pot, grid):
    x_ext = np.linspace(-2 * grid.radius, 2 * grid.radius, 2 * grid.n_points_1d - 1)
    f = pot(x_ext[:, None])
    p = np.exp(-(f - f.min()))
    inner = np.abs(x_ext) <= grid.radius
    total = trapezoid(p, x_ext)
    mass = trapezoid(p[inner], x_ext[inner])
    if not total > 0 or mass < (1.0 - grid.mass_tol) * total:
        raise GridTooSmall(
            f"grid [-{grid.radius}, {grid.radius}] holds only {mass / total:.10f} of the mass"
        )


class InverseTransform1D:
    """Tabulated CDF of exp(-f) on a uniform grid, inverted by linear interpolation."""

    def __init__(self, pot, grid=None):
        if pot.dim != 1:
            raise InvalidArgument("InverseTransform1D needs a one-dimensional potential")
        grid = grid or GridSpec()
        _check_mass_1d(pot, grid)
        x = np.linspace(-grid.radius, grid.radius, grid.n_points_1d)
        p = _unnormalized_density(pot, x[:, None])
        cdf = cumulative_trapezoid(p, x, initial=0.0)
        cdf /= cdf[-1]
        self.x = x
        self.cdf = cdf
        self._cdf_knots, first = np.unique(cdf, return_index=True)
        self._x_knots = x[first]

    def cdf_at(self, pts):
        return np.interp(pts, self.x, self.cdf)

    def quantile(self, u):
        return np.interp(u, self._cdf_knots, self._x_knots)

    def sample(self, rng, n):
        return self.quantile(rng.random(n))[:, None]


def inverse_transform_1d(pot, n, rng, grid=None):
    """``n`` samples (shape (n, 1)) from the density proportional to exp(-f)."""
    return InverseTransform1D(pot, grid).sample(rng, n)


class InverseTransform2D:
    """Conditional inverse transform on a tensor grid.

    x is drawn from the numerically integrated marginal; y from the
    conditional CDF at that x, interpolated linearly between the two
    neighbouring grid columns.
    """

    def __init__(self, pot, grid=None):
        if pot.dim != 2:
            raise InvalidArgument("InverseTransform2D needs a two-dimensional potential")
        grid = grid or GridSpec()
        m = grid.n_points_2d
        xs = np.linspace(-grid.radius, grid.radius, m)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        f = pot(np.stack([X, Y], axis=-1))
        fmin = f.min()
        P = np.exp(-(f - fmin))
        self._check_mass(pot, grid, fmin, P, xs)
        col_cum = cumulative_trapezoid(P, xs, axis=1, initial=0.0)
        marginal = col_cum[:, -1]
        mcdf = cumulative_trapezoid(marginal, xs, initial=0.0)
        mcdf = mcdf / mcdf[-1]
        self.xs = xs
        self.marginal = marginal / trapezoid(marginal, xs)
        self.marginal_cdf = mcdf
        self._col_cum = col_cum
        self._mcdf_knots, first = np.unique(mcdf, return_index=True)
        self._mx_knots = xs[first]

    @staticmethod
    def _check_mass(pot, grid, fmin, P, xs):
        m = grid.n_points_2d
        big = np.linspace(-2 * grid.radius, 2 * grid.radius, 2 * m - 1)
        X, Y = np.meshgrid(big, big, indexing="ij")
        Pb = np.exp(-(pot(np.stack([X, Y], axis=-1)) - fmin))
        total = trapezoid(trapezoid(Pb, big, axis=1), big)
        mass = trapezoid(trapezoid(P, xs, axis=1), xs)
        if not total > 0 or mass < (1.0 - grid.mass_tol) * total:
            raise GridTooSmall(
                f"grid [-{grid.radius}, {grid.radius}]^2 holds only {mass / total:.10f} of the mass"
            )

    def marginal_quantile(self, u):
        return np.interp(u, self._mcdf_knots, self._mx_knots)

    def sample(self, rng, n, chunk=1000):
        u = rng.random((n, 2))
        x = self.marginal_quantile(u[:, 0])
        out = np.empty((n, 2))
        out[:, 0] = x
        xs, ys = self.xs, self.xs
        dx = xs[1] - xs[0]
        for start in range(0, n, chunk):
            sl = slice(start, min(n, start + chunk))
            xc = x[sl]
            k = np.clip(((xc - xs[0]) // dx).astype(int), 0, len(xs) - 2)
            w = np.clip((xc - xs[k]) / dx, 0.0, 1.0)[:, None]
            cum = (1.0 - w) * self._col_cum[k] + w * self._col_cum[k + 1]
            target = u[sl, 1] * cum[:, -1]
            idx = np.sum(cum < target[:, None], axis=1)
            idx = np.clip(idx, 1, len(ys) - 1)
            rows = np.arange(len(idx))
            lo, hi = cum[rows, idx - 1], cum[rows, idx]
            frac = np.where(hi > lo, (target - lo) / np.where(hi > lo, hi - lo, 1.0), 0.0)
            out[sl, 1] = ys[idx - 1] + frac * (ys[idx] - ys[idx - 1])
        return out


def inverse_transform_2d(pot, n, rng, grid=None):
    """``n`` samples (shape (n, 2)) from the density proportional to exp(-f)."""
    return InverseTransform2D(pot, grid).sample(rng, n)


def reference_sampler(pot, grid=None):
    if pot.dim == 1:
        return InverseTransform1D(pot, grid)
    if pot.dim == 2:
        return InverseTransform2D(pot, grid)
    raise InvalidArgument("reference sampling supports d = 1 or 2 only")


def equilibrium_sample(pot, n, rng, grid=None, sampler=None):
    """Phase-space draws from mu* ∝ exp(-f(x) - |v|²/2): returns (x, v)."""
    sampler = sampler or reference_sampler(pot, grid)
    x = sampler.sample(rng, n)
    v = rng.standard_normal((n, pot.dim))
    return x, v


def _gauss_legendre(a, b, panels, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def _tensor_rule(dim, a, b, panels, order):
    x, w = _gauss_legendre(a, b, panels, order)
    if dim == 1:
        return x[:, None], w
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    return np.stack([X.ravel(), Y.ravel()], axis=-1), W.ravel()


def target_energy(pot, radius=8.0):
    """Expectation of f under the density proportional to exp(-f)."""
    panels, order = (400, 20) if pot.dim == 1 else (128, 8)
    pts, w = _tensor_rule(pot.dim, -radius, radius, panels, order)
    f = pot(pts)
    p = np.exp(-(f - f.min()))
    return float(np.sum(w * f * p) / np.sum(w * p))


def box_average(pot, L):
    """Average of f over the box [-L, L]^d."""
    panels, order = (64, 20) if pot.dim == 1 else (32, 16)
    pts, w = _tensor_rule(pot.dim, -L, L, panels, order)
    return float(np.sum(w * pot(pts)) / (2.0 * L) ** pot.dim)


def initial_sigma2(pot, L, radius=8.0):
    """Velocity variance that matches the total energy of the box-uniform start
    to that of the equilibrium state."""
    if pot.dim not in (1, 2):
        raise InvalidArgument("initial_sigma2 supports d = 1 or 2")
    if not L > 0:
        raise InvalidConfiguration("box half-width L must be positive")
    sigma2 = 1.0 + (2.0 / pot.dim) * (target_energy(pot, radius) - box_average(pot, L))
    if not sigma2 > 0:
        raise InvalidConfiguration(
            f"energy condition cannot be met: box half-width L={L} gives "
            f"sigma^2={sigma2:.6g} <= 0 for potential {pot.name!r}"
        )
    return sigma2
