"""Sampling problems: potentials, forward maps, Gaussian priors and the Bayesian cost.

All callables act on the last axis, so ``eval`` accepts a single point of
shape ``(d,)`` or a batch of shape ``(N, d)``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import InvalidArgument, InvalidSpec
from .linalg_stats import spd_inv_sqrt

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """A potential ``f`` on R^dim with its exact gradient.

    The target density is proportional to ``exp(-f)``.
    """

    dim: int
    eval: ArrayFn
    grad: ArrayFn
    name: str = "potential"

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ForwardMap:
    """Map from parameters in R^dim_in to observations in R^dim_out."""

    dim_in: int
    dim_out: int
    eval: ArrayFn
    linear_part: Optional[np.ndarray] = None
    jacobian: Optional[ArrayFn] = None

    @classmethod
    def linear(cls, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        A.setflags(write=False)
        return cls(
            dim_in=A.shape[1],
            dim_out=A.shape[0],
            eval=lambda x: np.asarray(x, dtype=float) @ A.T,
            linear_part=A,
            jacobian=lambda x: A,
        )

    @classmethod
    def identity(cls, dim):
        return cls.linear(np.eye(dim))

    @property
    def is_linear(self):
        return self.linear_part is not None

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian N(mean, covariance) with a cached Cholesky factor."""

    mean: np.ndarray
    covariance: np.ndarray
    _chol: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidSpec(
                f"covariance shape {cov.shape} does not match mean of length {mean.size}"
            )
        if not np.all(np.isfinite(cov)) or not np.all(np.isfinite(mean)):
            raise InvalidSpec("Gaussian parameters must be finite")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise InvalidSpec("covariance is not symmetric")
        try:
            chol = linalg.cho_factor(cov, lower=True)
        except linalg.LinAlgError as exc:
            raise InvalidSpec("covariance is not positive definite") from exc
        if np.min(np.diag(chol[0])) <= 0:
            raise InvalidSpec("covariance is not positive definite")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.size

    def solve(self, b):
        """Apply the inverse covariance to ``b`` (vector or column stack)."""
        return linalg.cho_solve(self._chol, b)

    @cached_property
    def precision(self):
        P = self.solve(np.eye(self.dim))
        return 0.5 * (P + P.T)

    @cached_property
    def inv_sqrt(self):
        """Inverse of the symmetric square root of the covariance."""
        return spd_inv_sqrt(self.covariance)

    def sqrt(self):
        """Lower Cholesky factor L with L L^T = covariance."""
        return np.tril(self._chol[0])

    def sample(self, rng, n):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.sqrt().T


@dataclass(frozen=True)
class ProblemSpec:
    """Either a bare potential, or a Bayesian inverse problem (G, prior, noise, y)."""

    potential: Optional[Potential] = None
    forward_map: Optional[ForwardMap] = None
    prior: Optional[GaussianSpec] = None
    noise: Optional[GaussianSpec] = None
    data: Optional[np.ndarray] = None
    name: str = "problem"

    def __post_init__(self):
        bayes_parts = (self.forward_map, self.prior, self.noise, self.data)
        if self.potential is None:
            if any(p is None for p in bayes_parts):
                raise InvalidSpec(
                    "a problem needs a potential or all of forward_map, prior, noise, data"
                )
            data = np.atleast_1d(np.asarray(self.data, dtype=float))
            data.setflags(write=False)
            object.__setattr__(self, "data", data)
            G = self.forward_map
            if self.prior.dim != G.dim_in:
                raise InvalidSpec(f"prior dim {self.prior.dim} != forward-map input {G.dim_in}")
            if self.noise.dim != G.dim_out or data.size != G.dim_out:
                raise InvalidSpec(
                    f"noise dim {self.noise.dim} / data size {data.size} "
                    f"!= forward-map output {G.dim_out}"
                )
        elif any(p is not None for p in bayes_parts):
            raise InvalidSpec("give either a potential or a Bayesian problem, not both")

    @property
    def is_bayesian(self):
        return self.potential is None

    @property
    def dim(self):
        return self.potential.dim if self.potential is not None else self.forward_map.dim_in

    def induced_potential(self):
        """The potential ``f(x; y)`` of the Bayesian form, with its gradient."""
        if not self.is_bayesian:
            return self.potential
        if self.forward_map.jacobian is None:
            raise InvalidSpec("gradient of the Bayesian cost needs a forward-map jacobian")
        spec = self

        def grad(x):
            x = np.asarray(x, dtype=float)
            resid = spec.forward_map(x) - spec.data
            w = spec.noise.solve(resid.T).T
            J = spec.forward_map.jacobian(x)
            if J.ndim == 2:
                g_data = w @ J
            else:
                g_data = np.einsum("...o,...oi->...i", w, J)
            g_prior = spec.prior.solve((x - spec.prior.mean).T).T
            return g_data + g_prior

        return Potential(
            dim=self.dim,
            eval=lambda x: bayes_potential(spec, x),
            grad=grad,
            name=f"{self.name}:cost",
        )


def linear_gaussian_problem(A, prior_mean, prior_cov, noise_cov, y, name="linear_gaussian"):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return ProblemSpec(
        forward_map=ForwardMap.linear(A),
        prior=GaussianSpec(prior_mean, prior_cov),
        noise=GaussianSpec(np.zeros(A.shape[0]), noise_cov),
        data=y,
        name=name,
    )


def _weighted_sq(spec, r):
    # r has shape (..., k); returns r^T C^{-1} r over the last axis
    w = spec.solve(np.moveaxis(r, -1, 0))
    return np.sum(np.moveaxis(w, 0, -1) * r, axis=-1)


def bayes_potential(spec, x):
    """Regularized misfit ½|y − G(x)|²_Γ + ½|x − x0|²_{Γ0}."""
    if not spec.is_bayesian:
        raise InvalidArgument("bayes_potential needs a problem in Bayesian form")
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (spec.forward_map.dim_in,):
        raise InvalidArgument(
            f"x has trailing dimension {x.shape[-1:]}, expected {spec.forward_map.dim_in}"
        )
    misfit = spec.data - spec.forward_map(x)
    return 0.5 * _weighted_sq(spec.noise, misfit) + 0.5 * _weighted_sq(
        spec.prior, x - spec.prior.mean
    )


def _quadratic_1d():
    return Potential(
        dim=1,
        eval=lambda x: 0.5 * np.asarray(x)[..., 0] ** 2,
        grad=lambda x: np.asarray(x, dtype=float).copy(),
        name="quadratic_1d",
    )


def _doublewell_1d():
    def f(x):
        x = np.asarray(x)[..., 0]
        return (x - 1.0) ** 2 * (x + 1.0) ** 2

    def grad(x):
        x = np.asarray(x, dtype=float)
        return 4.0 * x * (x * x - 1.0)

    return Potential(dim=1, eval=f, grad=grad, name="doublewell_1d")


def _quadratic_2d():
    return Potential(
        dim=2,
        eval=lambda x: 0.5 * np.sum(np.asarray(x) ** 2, axis=-1),
        grad=lambda x: np.asarray(x, dtype=float).copy(),
        name="quadratic_2d",
    )


def _doublewell_2d():
    def parts(x):
        x = np.asarray(x, dtype=float)
        a = np.sum((x - 1.0) ** 2, axis=-1)
        b = np.sum((x + 1.0) ** 2, axis=-1)
        return x, a, b

    def f(x):
        _, a, b = parts(x)
        return 0.1 * a * b

    def grad(x):
        x, a, b = parts(x)
        return 0.2 * ((x - 1.0) * b[..., None] + (x + 1.0) * a[..., None])

    return Potential(dim=2, eval=f, grad=grad, name="doublewell_2d")


def _zero(dim):
    return Potential(
        dim=dim,
        eval=lambda x: np.zeros(np.shape(x)[:-1]),
        grad=lambda x: np.zeros(np.shape(x)),
        name=f"zero_{dim}d",
    )


def builtin_potentials():
    """Catalog of the named experiment potentials, keyed by name."""
    pots = [_quadratic_1d(), _doublewell_1d(), _quadratic_2d(), _doublewell_2d(), _zero(1), _zero(2)]
    return {p.name: p for p in pots}


def get_potential(name):
    catalog = builtin_potentials()
    try:
        return catalog[name]
    except KeyError:
        raise InvalidArgument(
            f"unknown potential {name!r}; choose one of {sorted(catalog)}"
        ) from None


def builtin_problems():
    """Named Bayesian problems usable from configs."""
    return {
        "linear_gaussian_1d": linear_gaussian_problem(
            [[1.0]], [0.0], [[1.0]], [[1.0]], [1.0], name="linear_gaussian_1d"
        ),
        "linear_gaussian_2d": linear_gaussian_problem(
            [[1.0, 0.5], [0.0, 1.0]],
            [0.0, 0.0],
            [[1.0, 0.0], [0.0, 2.0]],
            [[0.5, 0.0], [0.0, 0.5]],
            [1.0, -1.0],
            name="linear_gaussian_2d",
        ),
    }


def get_problem(name):
    catalog = builtin_problems()
    try:
        return catalog[name]
    except KeyError:
        raise InvalidArgument(
            f"unknown problem {name!r}; choose one of {sorted(catalog)}"
        ) from None


def resolve_problem(spec):
    """Problem from a catalog name or an inline dict with keys
    ``A, prior_mean, prior_cov, noise_cov, y``."""
    if isinstance(spec, ProblemSpec):
        return spec
    if isinstance(spec, str):
        return get_problem(spec)
    if isinstance(spec, dict):
        required = ("A", "prior_mean", "prior_cov", "noise_cov", "y")
        missing = [k for k in required if k not in spec]
        if missing:
            raise InvalidSpec(f"inline problem is missing {missing}")
        unknown = sorted(set(spec) - set(required) - {"name"})
        if unknown:
            raise InvalidSpec(f"inline problem has unknown keys {unknown}")
        return linear_gaussian_problem(
            spec["A"], spec["prior_mean"], spec["prior_cov"], spec["noise_cov"], spec["y"],
            name=spec.get("name", "inline"),
        )
    raise InvalidSpec(f"cannot build a problem from {type(spec).__name__}")
