"""Event-driven particle simulation of the mollified Vlasov-Boltzmann dynamics.

Particles follow Hamiltonian transport (velocity Verlet) between the rings
of exponential collision clocks. At a ring the Nanbu engine updates only the
clock owner; the Bird engine updates both members of an ordered pair and
conserves pair momentum and kinetic energy.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gamma as gamma_fn

from .core_model import Potential, get_potential
from .errors import DivergenceError, InvalidArgument, InvalidConfiguration
from .linalg_stats import RngStream
from .oracles import equilibrium_sample, initial_sigma2

log = logging.getLogger(__name__)

METHODS = ("nanbu", "bird")
KERNEL_KINDS = ("gaussian", "constant", "off")
MAX_EVENTS = 10**9


@dataclass
class PhaseEnsemble:
    """Positions and velocities of N particles at system time ``t``."""

    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    grad: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, ndmin=2)
        self.v = np.array(self.v, dtype=float, ndmin=2)
        if self.x.shape != self.v.shape:
            raise InvalidArgument(f"x {self.x.shape} and v {self.v.shape} differ in shape")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def copy(self):
        return PhaseEnsemble(self.x.copy(), self.v.copy(), self.t)

    def kinetic_energy(self):
        return 0.5 * float(np.sum(self.v * self.v))

    def total_energy(self, pot):
        return self.kinetic_energy() + float(np.sum(pot(self.x)))


def sphere_area(dim):
    """Surface measure of the unit sphere S^{dim-1} (2 for dim = 1)."""
    return 2.0 * math.pi ** (dim / 2) / gamma_fn(dim / 2)


@dataclass(frozen=True)
class CollisionKernel:
    """Mollified cross-section (ε√π)^{-d} exp(-|x - y|²/ε²), independent of n and v.

    ``kind='constant'`` replaces the spatial factor by 1 (every ring is
    accepted) and ``kind='off'`` by 0 (no ring is accepted).
    """

    epsilon: float
    dim: int
    lambda_bound: Optional[float] = None
    kind: str = "gaussian"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")
        if self.kind not in KERNEL_KINDS:
            raise InvalidArgument(f"kernel kind must be one of {KERNEL_KINDS}")
        if self.lambda_bound is None:
            object.__setattr__(self, "lambda_bound", self.analytic_bound)
        elif not self.lambda_bound > 0:
            raise InvalidArgument("lambda_bound must be positive")
        elif self.kind == "gaussian" and self.lambda_bound < self.analytic_bound * (1 - 1e-12):
            log.warning(
                "lambda %.6g is below the cross-section supremum %.6g; "
                "acceptance ratios above 1 will be truncated",
                self.lambda_bound,
                self.analytic_bound,
            )

    @property
    def analytic_bound(self):
        """Supremum of the angular integral, attained at coincident positions."""
        return sphere_area(self.dim) / (self.epsilon * math.sqrt(math.pi)) ** self.dim

    def total(self, xi, xj):
        """Angular integral of the cross-section between ``xi`` and each row of ``xj``."""
        xj = np.asarray(xj, dtype=float)
        diff = np.asarray(xj) - np.asarray(xi)
        d2 = np.sum(diff * diff, axis=-1)
        if self.kind == "constant":
            return np.full(np.shape(d2), self.lambda_bound)
        if self.kind == "off":
            return np.zeros(np.shape(d2))
        return self.analytic_bound * np.exp(-d2 / self.epsilon**2)


def total_cross_section(kernel, x_i, v_i, x_j, v_j):
    """Velocity-independent total cross-section for the pair (i, j)."""
    return float(kernel.total(np.asarray(x_i, dtype=float), np.asarray(x_j, dtype=float)))


class ClockQueue:
    """Min-priority queue of absolute ring times keyed by owner.

    Owners are particle indices (Nanbu) or ordered pairs ``(i, j)`` (Bird).
    Ties pop by smallest owner. Clocks scheduled beyond ``horizon`` can never
    ring inside the run and are not stored.
    """

    def __init__(self, horizon=math.inf):
        self.horizon = horizon
        self._heap = []

    def push(self, time, owner):
        if time <= self.horizon:
            heapq.heappush(self._heap, (time, owner))

    def extend(self, times, owners):
        for time, owner in zip(times, owners):
            if time <= self.horizon:
                self._heap.append((time, owner))
        heapq.heapify(self._heap)

    def peek(self):
        return self._heap[0] if self._heap else (math.inf, None)

    def pop(self):
        return heapq.heappop(self._heap)

    def __len__(self):
        return len(self._heap)


def verlet_advance(phase, pot, t_target, dt_max):
    """Advance every particle to ``t_target`` with velocity-Verlet substeps.

    Substeps have length ``dt_max`` except the last, which is shortened to
    land exactly on ``t_target``. Updates ``phase`` in place and returns it.
    """
    if t_target < phase.t:
        raise InvalidArgument(f"cannot integrate backwards from {phase.t} to {t_target}")
    if not dt_max > 0:
        raise InvalidArgument("dt_max must be positive")
    x, v = phase.x, phase.v
    g = phase.grad if phase.grad is not None else pot.grad(x)
    while phase.t < t_target:
        remaining = t_target - phase.t
        dt = min(dt_max, remaining)
        v -= 0.5 * dt * g
        x += dt * v
        g = pot.grad(x)
        v -= 0.5 * dt * g
        phase.t = t_target if dt == remaining else phase.t + dt
    phase.grad = g
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise DivergenceError(f"non-finite phase state at t={phase.t}", time=phase.t)
    return phase


def collide_velocities(v, w, n):
    """Post-collision velocities ``v + ((w - v)·n) n`` and ``w + ((v - w)·n) n``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    n = np.asarray(n, dtype=float)
    norm = np.sqrt(np.sum(n * n, axis=-1))
    if np.any(np.abs(norm - 1.0) > 1e-10):
        raise InvalidArgument("collision direction n must be a unit vector")
    proj = np.sum((w - v) * n, axis=-1, keepdims=True) * n
    return v + proj, w - proj


def sample_direction(dim, rng):
    """Uniform draw on S^{dim-1}; {-1, 1} in one dimension."""
    if dim == 1:
        return np.array([1.0 if rng.random() < 0.5 else -1.0])
    z = rng.standard_normal(dim)
    return z / np.sqrt(z @ z)


def nanbu_event(phase, kernel, i_c, rng, partner="uniform"):
    """Collision stage for the particle whose clock rang; updates ``v[i_c]`` only.

    The ring is accepted with probability equal to the mean cross-section of
    ``i_c`` against the whole ensemble divided by Λ. The partner is then drawn
    uniformly (``partner='uniform'``) or proportionally to its cross-section
    (``partner='proportional'``). Returns the partner index, or None if the
    ring was rejected.
    """
    n = phase.n
    a = rng.random()
    rates = kernel.total(phase.x[i_c], phase.x)
    if a > rates.sum() / (n * kernel.lambda_bound):
        return None
    if partner == "uniform":
        j = int(rng.integers(n))
    elif partner == "proportional":
        cdf = np.cumsum(rates)
        j = int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), n - 1))
    else:
        raise InvalidArgument(f"unknown Nanbu partner rule {partner!r}")
    nvec = sample_direction(phase.dim, rng)
    vi = phase.v[i_c]
    vi += ((phase.v[j] - vi) @ nvec) * nvec
    return j


def bird_event(phase, kernel, pair, rng):
    """Collision stage for an ordered pair; both velocities change on acceptance.

    Returns True when the pair collided.
    """
    i_c, j_c = pair
    if i_c == j_c:
        raise InvalidArgument("Bird pairs must have distinct members")
    a = rng.random()
    ratio = kernel.total(phase.x[i_c], phase.x[j_c]) / kernel.lambda_bound
    if a > ratio:
        return False
    nvec = sample_direction(phase.dim, rng)
    phase.v[i_c], phase.v[j_c] = collide_velocities(phase.v[i_c], phase.v[j_c], nvec)
    return True


@dataclass
class BoltzmannConfig:
    """Configuration of a Nanbu or Bird run.

    ``init`` is ``'box'`` (x uniform on [-L, L]^d, v ~ N(0, σ²I) with σ² from
    the energy-matching rule unless ``sigma2`` is given) or ``'equilibrium'``.
    """

    method: str
    potential: object
    n_particles: int = 1000
    horizon: float = 10.0
    epsilon: float = 1.0
    lambda_override: Optional[float] = None
    verlet_dt: float = 0.01
    box_half_width: float = 2.0
    sigma2: Optional[float] = None
    init: str = "box"
    seed: int = 0
    n_snapshots: int = 100
    nanbu_partner: str = "uniform"
    bird_scheduler: str = "pairs"
    kernel_kind: str = "gaussian"
    record_events: bool = False
    max_events: int = MAX_EVENTS

    def __post_init__(self):
        self.method = self.method.lower()
        if isinstance(self.potential, str):
            self.potential = get_potential(self.potential)
        if not isinstance(self.potential, Potential):
            raise InvalidConfiguration("potential must be a Potential or a catalog name")
        if self.method not in METHODS:
            raise InvalidConfiguration(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_particles < 1:
            raise InvalidConfiguration("n_particles must be positive")
        if self.method == "bird" and self.n_particles < 2:
            raise InvalidConfiguration("Bird needs at least two particles")
        if not self.horizon >= 0:
            raise InvalidConfiguration("horizon must be nonnegative")
        if not self.verlet_dt > 0:
            raise InvalidConfiguration("verlet_dt must be positive")
        if self.init not in ("box", "equilibrium"):
            raise InvalidConfiguration("init must be 'box' or 'equilibrium'")
        if self.nanbu_partner not in ("uniform", "proportional"):
            raise InvalidConfiguration("nanbu_partner must be 'uniform' or 'proportional'")
        if self.bird_scheduler not in ("pairs", "superposition"):
            raise InvalidConfiguration("bird_scheduler must be 'pairs' or 'superposition'")
        if self.n_snapshots < 1:
            raise InvalidConfiguration("n_snapshots must be positive")
        if self.sigma2 is not None and not self.sigma2 > 0:
            raise InvalidConfiguration("sigma2 must be positive")
        kernel = self.kernel()
        expected = self.n_particles * kernel.lambda_bound * self.horizon
        if expected > self.max_events:
            raise InvalidConfiguration(
                f"expected {expected:.3g} clock rings exceeds the limit of {self.max_events}"
            )

    @property
    def dim(self):
        return self.potential.dim

    def kernel(self):
        return CollisionKernel(self.epsilon, self.dim, self.lambda_override, self.kernel_kind)

    def resolved_sigma2(self):
        if self.sigma2 is not None:
            return self.sigma2
        return initial_sigma2(self.potential, self.box_half_width)

    def observation_times(self):
        return np.linspace(0.0, self.horizon, self.n_snapshots + 1)


@dataclass
class Snapshot:
    t: float
    x: np.ndarray
    v: np.ndarray


@dataclass
class BoltzmannResult:
    config: BoltzmannConfig
    initial: PhaseEnsemble
    final: PhaseEnsemble
    snapshots: list
    n_rings: int
    n_accepted: int
    events: list = field(default_factory=list)
    lambda_bound: float = 0.0

    def energies(self):
        pot = self.config.potential
        return np.array(
            [0.5 * np.sum(s.v * s.v) + np.sum(pot(s.x)) for s in self.snapshots]
        )


def sample_box_initial(pot, n, L, sigma2, rng):
    """x uniform on [-L, L]^d and v ~ N(0, σ² I), independently."""
    x = rng.uniform(-L, L, size=(n, pot.dim))
    v = math.sqrt(sigma2) * rng.standard_normal((n, pot.dim))
    return PhaseEnsemble(x, v, 0.0)


def initial_phase(cfg):
    rng = RngStream.for_purpose(cfg.seed, "boltzmann-init").generator()
    if cfg.init == "equilibrium":
        x, v = equilibrium_sample(cfg.potential, cfg.n_particles, rng)
        return PhaseEnsemble(x, v, 0.0)
    return sample_box_initial(
        cfg.potential, cfg.n_particles, cfg.box_half_width, cfg.resolved_sigma2(), rng
    )


def _initial_clocks(cfg, kernel, rng):
    n, lam, T = cfg.n_particles, kernel.lambda_bound, cfg.horizon
    queue = ClockQueue(horizon=T)
    if cfg.method == "nanbu":
        times = rng.exponential(1.0 / lam, size=n)
        queue.extend(times.tolist(), range(n))
    elif cfg.bird_scheduler == "pairs":
        times = rng.exponential(n / lam, size=(n, n))
        np.fill_diagonal(times, np.inf)
        ii, jj = np.nonzero(times <= T)
        queue.extend(times[ii, jj].tolist(), zip(ii.tolist(), jj.tolist()))
    else:
        queue.push(float(rng.exponential(1.0 / ((n - 1) * lam))), -1)
    return queue


def run_boltzmann(cfg, initial=None):
    """Simulate up to ``cfg.horizon`` and record snapshots on a uniform time grid.

    Each loop iteration pops the earliest clock, transports all particles to
    ``min(ring, T)``, applies the collision stage if the ring falls inside the
    horizon and reschedules the owner by an exponential increment (rate Λ for
    Nanbu, Λ/N for a Bird pair).
    """
    pot = cfg.potential
    kernel = cfg.kernel()
    lam = kernel.lambda_bound
    n = cfg.n_particles
    T = cfg.horizon
    phase = initial_phase(cfg) if initial is None else initial.copy()
    if phase.x.shape != (n, pot.dim):
        raise InvalidConfiguration(f"initial ensemble shape {phase.x.shape} != ({n}, {pot.dim})")
    phase.t = 0.0
    phase.grad = None
    start = phase.copy()

    clock_rng = RngStream.for_purpose(cfg.seed, "boltzmann-clocks").generator()
    coll_rng = RngStream.for_purpose(cfg.seed, "boltzmann-collisions").generator()
    queue = _initial_clocks(cfg, kernel, clock_rng)
    superposed = cfg.method == "bird" and cfg.bird_scheduler == "superposition"
    if cfg.method == "nanbu":
        increment_scale = 1.0 / lam
    elif superposed:
        increment_scale = 1.0 / ((n - 1) * lam)
    else:
        increment_scale = n / lam

    obs = cfg.observation_times()
    snapshots = []
    k_obs = 0
    n_rings = n_accepted = 0
    events = []

    while True:
        ring, owner = queue.peek()
        tau1 = min(ring, T)
        while k_obs < len(obs) and obs[k_obs] <= tau1:
            verlet_advance(phase, pot, obs[k_obs], cfg.verlet_dt)
            snapshots.append(Snapshot(phase.t, phase.x.copy(), phase.v.copy()))
            k_obs += 1
        verlet_advance(phase, pot, tau1, cfg.verlet_dt)
        if ring > T:
            break
        queue.pop()
        n_rings += 1
        if n_rings > cfg.max_events:
            raise InvalidConfiguration(f"event count exceeded {cfg.max_events}")
        if cfg.method == "nanbu":
            accepted = nanbu_event(phase, kernel, owner, coll_rng, cfg.nanbu_partner) is not None
        else:
            pair = owner
            if superposed:
                i = int(coll_rng.integers(n))
                j = int(coll_rng.integers(n - 1))
                pair = (i, j + 1 if j >= i else j)
            accepted = bird_event(phase, kernel, pair, coll_rng)
            if superposed:
                owner = pair
        n_accepted += accepted
        if cfg.record_events:
            events.append((ring, cfg.method, owner, bool(accepted)))
        next_ring = ring + float(clock_rng.exponential(increment_scale))
        queue.push(next_ring, -1 if superposed else owner)

    phase.t = T
    return BoltzmannResult(
        cfg, start, phase, snapshots, n_rings, n_accepted, events, lambda_bound=lam
    )
