"""Mean-field samplers: ensemble Kalman inversion and sampling, and
mollified Vlasov-Boltzmann particle dynamics, with Gaussian and
inverse-transform oracles and sample-based diagnostics."""

__version__ = "0.1.0"

from .boltzmann import BoltzmannConfig, BoltzmannResult, CollisionKernel, run_boltzmann
from .core_model import (
    ForwardMap,
    GaussianSpec,
    Potential,
    ProblemSpec,
    get_potential,
    get_problem,
    linear_gaussian_problem,
)
from .kalman import KalmanConfig, KalmanResult, run_kalman
from .metrics import fit_rate, mollified_kl_phase, mollified_kl_x, wasserstein2

__all__ = [
    "BoltzmannConfig",
    "BoltzmannResult",
    "CollisionKernel",
    "ForwardMap",
    "GaussianSpec",
    "KalmanConfig",
    "KalmanResult",
    "Potential",
    "ProblemSpec",
    "fit_rate",
    "get_potential",
    "get_problem",
    "linear_gaussian_problem",
    "mollified_kl_phase",
    "mollified_kl_x",
    "run_boltzmann",
    "run_kalman",
    "wasserstein2",
]
