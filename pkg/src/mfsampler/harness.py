"""Experiment orchestration: kinetic-sampler figures, equilibrium invariance,
Kalman mean-field rate studies and the shared-noise coupling experiment.

Each experiment fans out over independent (seed, N) cells, each a pure
function of its inputs, and merges results in sorted key order, so serial
and parallel runs give identical numbers.
"""

import datetime
import math
from itertools import repeat
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import spearmanr

from . import io, plotting
from .boltzmann import BoltzmannConfig, run_boltzmann
from .core_model import get_potential, resolve_problem
from .errors import InvalidConfiguration, UnsupportedConfiguration
from .kalman import KalmanConfig, eki_step, run_kalman
from .linalg_stats import RngStream, ensemble_stats
from .metrics import (
    DEFAULT_DELTA,
    fit_rate,
    mollified_kl_phase,
    mollified_kl_x,
    wasserstein2,
)
from .oracles import (
    equilibrium_sample,
    problem_interpolant,
    problem_posterior,
    reference_sampler,
)

DEFAULT_N_LIST = (16, 32, 64, 128, 256, 512, 1024)
# doublewell_1d: L = 2 makes the energy-matched sigma^2 negative
DEFAULT_BOX = {"doublewell_1d": 1.5}


def _fan_out(fn, keys, payload, threads):
    # fn(key, payload) for every key; results keyed and merged in sorted order
    keys = sorted(keys)
    if threads and threads > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, keys, repeat(payload), chunksize=max(1, len(keys) // (4 * threads))))
    else:
        results = [fn(k, payload) for k in keys]
    return dict(zip(keys, results))


def _cell_seed(base, index):
    return int(base) * 1_000_003 + int(index)


# ---------------------------------------------------------------------------
# kinetic samplers
# ---------------------------------------------------------------------------


@dataclass
class FigureConfig:
    """Kinetic-sampler figure experiment: both engines on one catalog target."""

    potential: str = "quadratic_1d"
    n_particles: int = 1000
    horizon: float = 10.0
    epsilon: float = None
    box_half_width: float = None
    delta: float = DEFAULT_DELTA
    verlet_dt: float = 0.01
    n_snapshots: int = 100
    seed: int = 0
    n_seeds: int = 1
    init: str = "box"
    baseline_n: int = 1000
    methods: tuple = ("nanbu", "bird")
    lambda_override: float = None
    nanbu_partner: str = "uniform"
    bird_scheduler: str = "pairs"

    def __post_init__(self):
        pot = get_potential(self.potential)
        if self.epsilon is None:
            self.epsilon = 1.0 if pot.dim == 1 else 4.0
        if self.box_half_width is None:
            self.box_half_width = DEFAULT_BOX.get(self.potential, 2.0)
        self.methods = tuple(self.methods)
        if self.n_seeds < 1:
            raise InvalidConfiguration("n_seeds must be positive")
        for m in self.methods:
            self.boltzmann_config(m, self.seed)

    def boltzmann_config(self, method, seed):
        return BoltzmannConfig(
            method=method,
            potential=self.potential,
            n_particles=self.n_particles,
            horizon=self.horizon,
            epsilon=self.epsilon,
            lambda_override=self.lambda_override,
            verlet_dt=self.verlet_dt,
            box_half_width=self.box_half_width,
            init=self.init,
            seed=seed,
            n_snapshots=self.n_snapshots,
            nanbu_partner=self.nanbu_partner,
            bird_scheduler=self.bird_scheduler,
        )


@dataclass
class KineticRun:
    method: str
    seed: int
    times: np.ndarray
    kl_x: np.ndarray
    kl: np.ndarray
    energy: np.ndarray
    final_x: np.ndarray
    final_v: np.ndarray
    n_rings: int
    n_accepted: int


def _kinetic_cell(key, cfg_dict):
    method, seed = key
    cfg = FigureConfig(**cfg_dict)
    pot = get_potential(cfg.potential)
    res = run_boltzmann(cfg.boltzmann_config(method, seed))
    snaps = res.snapshots
    return KineticRun(
        method=method,
        seed=seed,
        times=np.array([s.t for s in snaps]),
        kl_x=np.array([mollified_kl_x(s.x, pot, cfg.delta) for s in snaps]),
        kl=np.array([mollified_kl_phase(s.x, s.v, pot, cfg.delta) for s in snaps]),
        energy=res.energies(),
        final_x=res.final.x,
        final_v=res.final.v,
        n_rings=res.n_rings,
        n_accepted=res.n_accepted,
    )


@dataclass
class FigureResult:
    config: FigureConfig
    runs: dict
    baseline_kl_x: float
    baseline_kl: float
    baseline_x: np.ndarray
    baseline_v: np.ndarray

    def seeds(self):
        return sorted({s for _, s in self.runs})

    def run(self, method, seed=None):
        return self.runs[(method, self.config.seed if seed is None else seed)]

    def mean_series(self, method, key):
        return np.mean([getattr(self.runs[(method, s)], key) for s in self.seeds()], axis=0)

    @property
    def times(self):
        return next(iter(self.runs.values())).times

    def final_kl_x(self, method):
        return float(np.mean([self.runs[(method, s)].kl_x[-1] for s in self.seeds()]))

    def positive_fraction(self, method):
        return float(np.mean([np.mean(self.runs[(method, s)].final_x[:, 0] > 0)
                              for s in self.seeds()]))

    def late_variance(self, method, key="kl"):
        """Seed-averaged variance of a series over the second half of the run."""
        t = self.times
        late = t >= 0.5 * t[-1]
        return float(np.mean([np.var(getattr(self.runs[(method, s)], key)[late])
                              for s in self.seeds()]))

    def energy_drift(self, method):
        """Largest relative deviation of total energy from its initial value."""
        drifts = []
        for s in self.seeds():
            e = self.runs[(method, s)].energy
            drifts.append(np.max(np.abs(e - e[0])) / abs(e[0]))
        return float(np.max(drifts))

    def kl_drift(self, method, window=0.2):
        """Shift of the seed-averaged KL^δ between the first and last windows,
        and the pooled standard deviation of the first-window values."""
        t = self.times
        first = t <= window * t[-1]
        last = t >= (1.0 - window) * t[-1]
        series = np.array([self.runs[(method, s)].kl for s in self.seeds()])
        band = float(np.std(series[:, first]))
        drift = float(abs(series[:, last].mean() - series[:, first].mean()))
        return drift, band


def experiment_boltzmann_figures(cfg, threads=1):
    """Run every engine over ``cfg.n_seeds`` seeds and compute the KL series,
    energies and the inverse-transform baseline."""
    pot = get_potential(cfg.potential)
    cfg_dict = asdict(cfg)
    seeds = [cfg.seed + k for k in range(cfg.n_seeds)]
    runs = _fan_out(_kinetic_cell, [(m, s) for m in cfg.methods for s in seeds], cfg_dict, threads)
    rng = RngStream.for_purpose(cfg.seed, "baseline").generator()
    bx, bv = equilibrium_sample(pot, cfg.baseline_n, rng)
    return FigureResult(
        config=cfg,
        runs=runs,
        baseline_kl_x=mollified_kl_x(bx, pot, cfg.delta),
        baseline_kl=mollified_kl_phase(bx, bv, pot, cfg.delta),
        baseline_x=bx,
        baseline_v=bv,
    )


def density_grid(pot, extent=3.0, n=401):
    g = np.linspace(-extent, extent, n)
    p = np.exp(-pot(g[:, None]))
    return g, p / trapezoid(p, g)


def write_figure_bundle(result, out_dir, started=None, command="experiment boltzmann-figures"):
    started = started or datetime.datetime.now(datetime.timezone.utc)
    out = Path(out_dir)
    cfg = result.config
    pot = get_potential(cfg.potential)
    rows = []
    for (method, seed), run in sorted(result.runs.items()):
        run_id = f"{method}-seed{seed}"
        for t, a, b, e in zip(run.times, run.kl_x, run.kl, run.energy):
            rows += [(t, "kl_x", a, run_id), (t, "kl", b, run_id), (t, "energy", e, run_id)]
    rows += [
        (io.REFERENCE_TIME, "kl_x", result.baseline_kl_x, "baseline"),
        (io.REFERENCE_TIME, "kl", result.baseline_kl, "baseline"),
    ]
    io.write_metrics(out / "metrics.csv", rows)
    io.write_reference_samples(out / "baseline.csv", result.baseline_x, result.baseline_v)
    for (method, seed), run in sorted(result.runs.items()):
        snap = type("S", (), {"t": float(run.times[-1]), "x": run.final_x, "v": run.final_v})
        io.write_phase_snapshots(out / f"final_{method}_seed{seed}.csv", [snap])

    times = result.times
    for key, base, label in (("kl_x", result.baseline_kl_x, "KL_X^δ"),
                             ("kl", result.baseline_kl, "KL^δ")):
        plotting.plot_series(
            out / f"{key}.svg", times,
            {m: result.mean_series(m, key) for m in cfg.methods},
            baseline=base, ylabel=label, title=cfg.potential,
        )
    finals = {m: result.run(m).final_x for m in cfg.methods}
    if pot.dim == 1:
        grid, dens = density_grid(pot)
        plotting.plot_samples_1d(out / "samples.svg", finals, grid, dens, title=cfg.potential)
    else:
        plotting.plot_samples_2d(out / "samples.svg", finals, pot, title=cfg.potential)
    summary = {
        m: {
            "final_kl_x": result.final_kl_x(m),
            "late_variance_kl": result.late_variance(m),
            "positive_fraction": result.positive_fraction(m),
            "energy_drift": result.energy_drift(m),
        }
        for m in cfg.methods
    }
    io.write_manifest(
        out / "manifest.json", command, asdict(cfg), cfg.seed, started,
        extra={"baseline": {"kl_x": result.baseline_kl_x, "kl": result.baseline_kl},
               "summary": summary},
    )
    return summary


# ---------------------------------------------------------------------------
# Kalman mean-field rates
# ---------------------------------------------------------------------------


@dataclass
class RateConfig:
    """Weak-error rate study of EKI (pseudo-time 1) or EKS (horizon T)."""

    method: str = "eki"
    problem: object = "linear_gaussian_1d"
    n_list: tuple = DEFAULT_N_LIST
    step_size: float = 0.005
    horizon: float = 10.0
    n_seeds: int = 200
    seed: int = 0

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        problem = resolve_problem(self.problem)
        if not problem.forward_map.is_linear:
            raise UnsupportedConfiguration("rate studies need a linear forward map")
        if len(self.n_list) < 3:
            raise InvalidConfiguration("n_list needs at least three ensemble sizes")
        if self.n_seeds < 2:
            raise InvalidConfiguration("n_seeds must be at least 2")
        self.kalman_config(self.n_list[0], 0)

    def kalman_config(self, n, seed):
        problem = resolve_problem(self.problem)
        if self.method == "eki":
            return KalmanConfig.eki(problem, n, self.step_size, seed=seed, record_every=10**9)
        return KalmanConfig.eks(problem, n, self.step_size, self.horizon, seed=seed,
                                record_every=10**9)

    def reference(self):
        problem = resolve_problem(self.problem)
        return problem_interpolant(problem, 1.0) if self.method == "eki" else problem_posterior(problem)


def _rate_cell(key, cfg_dict):
    n, s = key
    cfg = RateConfig(**cfg_dict)
    kcfg = cfg.kalman_config(n, _cell_seed(cfg.seed, s))
    res = run_kalman(kcfg)
    ref = cfg.reference()
    x1 = res.final[:, 0]
    oracle_rng = RngStream.for_purpose(kcfg.seed, "oracle-draws").generator()
    draws = ref.sample(oracle_rng, n)
    w2 = wasserstein2(res.final, draws) if (ref.dim == 1 or n <= 512) else math.nan
    summ = res.summary_array()
    tail = summ[int(0.8 * len(summ)):]
    return {
        "err_x": float(x1.mean() - ref.mean[0]),
        "err_x2": float(np.mean(x1**2) - (ref.covariance[0, 0] + ref.mean[0] ** 2)),
        "w2": w2,
        "tail_mean_start": float(tail[0, 2]),
        "tail_mean_end": float(tail[-1, 2]),
    }


@dataclass
class RateReport:
    config: RateConfig
    n_values: list
    rms_x: list
    rms_x2: list
    se_x: list
    mean_w2: list
    fit_x: object
    fit_x2: object
    stationary: bool = True

    def as_dict(self):
        return {
            "n_values": self.n_values,
            "rms_x": self.rms_x,
            "rms_x2": self.rms_x2,
            "se_x": self.se_x,
            "mean_w2": self.mean_w2,
            "slope_x": self.fit_x.slope,
            "r2_x": self.fit_x.r2,
            "slope_x2": self.fit_x2.slope,
            "r2_x2": self.fit_x2.r2,
            "stationary": self.stationary,
        }


def _rms(values):
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(v * v)))


def experiment_kalman_rate(cfg, threads=1):
    """Root-mean-square weak errors of g(x) = x and g(x) = x² over seeds, per N,
    against the Gaussian oracle, with log-log slope fits."""
    cfg_dict = asdict(cfg)
    keys = [(n, s) for n in cfg.n_list for s in range(cfg.n_seeds)]
    out = _fan_out(_rate_cell, keys, cfg_dict, threads)
    rms_x, rms_x2, se_x, w2 = [], [], [], []
    stationary = True
    for n in cfg.n_list:
        cell = [out[(n, s)] for s in range(cfg.n_seeds)]
        ex = np.array([c["err_x"] for c in cell])
        rms_x.append(_rms(ex))
        # standard error of the RMS estimate via the delta method
        se_x.append(float(np.std(ex**2) / (2 * rms_x[-1] * math.sqrt(len(ex)))))
        rms_x2.append(_rms([c["err_x2"] for c in cell]))
        w2.append(float(np.nanmean([c["w2"] for c in cell])))
        if cfg.method == "eks":
            shift = np.array([c["tail_mean_end"] - c["tail_mean_start"] for c in cell])
            if abs(shift.mean()) > 3 * shift.std() / math.sqrt(len(shift)) + 1e-12:
                stationary = False
    n_values = list(cfg.n_list)
    return RateReport(
        cfg, n_values, rms_x, rms_x2, se_x, w2,
        fit_rate(list(zip(n_values, rms_x))),
        fit_rate(list(zip(n_values, rms_x2))),
        stationary,
    )


def write_rate_bundle(report, out_dir, started=None, command="experiment kalman-rate"):
    started = started or datetime.datetime.now(datetime.timezone.utc)
    out = Path(out_dir)
    rows = [
        (n, a, b, c, d)
        for n, a, b, c, d in zip(report.n_values, report.rms_x, report.rms_x2,
                                 report.se_x, report.mean_w2)
    ]
    io.write_csv(out / "rate.csv", ["n_particles", "rms_weak_error_x", "rms_weak_error_x2",
                                    "se_x", "mean_w2"], rows)
    plotting.plot_rate(
        out / "rate.svg", report.n_values,
        {"g=x": report.rms_x, "g=x^2": report.rms_x2, "W2": report.mean_w2},
        {"g=x": report.fit_x, "g=x^2": report.fit_x2},
        title=f"{report.config.method.upper()} weak error",
    )
    cfg = asdict(report.config)
    io.write_manifest(out / "manifest.json", command, cfg, report.config.seed, started,
                      extra={"report": report.as_dict()})
    return report.as_dict()


# ---------------------------------------------------------------------------
# shared-noise coupling
# ---------------------------------------------------------------------------


@dataclass
class CouplingConfig:
    """Shared-noise coupling of the mean-field particle system (analytic
    covariance path) with EKI (ensemble covariance), for linear problems."""

    problem: object = "linear_gaussian_1d"
    n_list: tuple = DEFAULT_N_LIST
    step_size: float = 0.005
    n_seeds: int = 50
    seed: int = 0

    def __post_init__(self):
        self.n_list = tuple(int(n) for n in self.n_list)
        problem = resolve_problem(self.problem)
        if not problem.forward_map.is_linear:
            raise UnsupportedConfiguration("the coupling experiment needs a linear forward map")
        if self.n_seeds < 1:
            raise InvalidConfiguration("n_seeds must be positive")
        KalmanConfig.eki(problem, 2, self.step_size)


def mean_field_step(x, problem, h, t, xi):
    """EKI step driven by the exact mean-field covariance C(t) Aᵀ instead of the
    ensemble covariance."""
    A = problem.forward_map.linear_part
    cov_xG = problem_interpolant(problem, min(t, 1.0)).covariance @ A.T
    K = cov_xG @ problem.noise.precision
    B = cov_xG @ problem.noise.inv_sqrt
    return x + h * ((problem.data - x @ A.T) @ K.T) + math.sqrt(h) * (xi @ B.T)


def coupled_runs(problem, n, h, seed):
    """Evolve both systems to pseudo-time 1 from one prior draw with shared ξ.

    Returns (mean-field particles, ensemble particles).
    """
    init_rng = RngStream.for_purpose(seed, "coupling-init").generator()
    noise_rng = RngStream.for_purpose(seed, "coupling-noise").generator()
    x0 = problem.prior.sample(init_rng, n)
    x_mf, x_en = x0.copy(), x0.copy()
    n_steps = int(round(1.0 / h))
    k = problem.forward_map.dim_out
    for m in range(n_steps):
        xi = noise_rng.standard_normal((n, k))
        t = m * h
        x_mf = mean_field_step(x_mf, problem, h, t, xi)
        stats = ensemble_stats(x_en, problem.forward_map)
        x_en = eki_step(x_en, stats, problem, h, xi, step=m + 1)
    return x_mf, x_en


def _coupling_cell(key, cfg_dict):
    n, s = key
    cfg = CouplingConfig(**cfg_dict)
    problem = resolve_problem(cfg.problem)
    x_mf, x_en = coupled_runs(problem, n, cfg.step_size, _cell_seed(cfg.seed, s))
    return float(np.mean(np.sum((x_mf - x_en) ** 2, axis=1)))


@dataclass
class CouplingReport:
    config: CouplingConfig
    n_values: list
    mean_sq_error: list
    fit: object
    spearman: float
    strictly_decreasing: bool
    degenerate: list = field(default_factory=list)

    def as_dict(self):
        return {
            "n_values": self.n_values,
            "mean_sq_error": self.mean_sq_error,
            "slope": self.fit.slope,
            "r2": self.fit.r2,
            "spearman": self.spearman,
            "strictly_decreasing": self.strictly_decreasing,
            "degenerate": self.degenerate,
        }


def experiment_coupling(cfg, threads=1):
    """Mean over seeds and particles of |x̃_i − x_i|² at pseudo-time 1, per N."""
    cfg_dict = asdict(cfg)
    keys = [(n, s) for n in cfg.n_list for s in range(cfg.n_seeds)]
    out = _fan_out(_coupling_cell, keys, cfg_dict, threads)
    errs = [float(np.mean([out[(n, s)] for s in range(cfg.n_seeds)])) for n in cfg.n_list]
    # N = 1 freezes the ensemble (zero covariance); reported but excluded from the fit
    degenerate = [n for n in cfg.n_list if n < 2]
    keep = [(n, e) for n, e in zip(cfg.n_list, errs) if n >= 2 and e > 0]
    fit = fit_rate(keep)
    rho = float(spearmanr([n for n, _ in keep], [e for _, e in keep]).statistic)
    decreasing = all(b < a for (_, a), (_, b) in zip(keep, keep[1:]))
    return CouplingReport(cfg, list(cfg.n_list), errs, fit, rho, decreasing, degenerate)


def write_coupling_bundle(report, out_dir, started=None, command="experiment coupling"):
    started = started or datetime.datetime.now(datetime.timezone.utc)
    out = Path(out_dir)
    io.write_csv(out / "coupling.csv", ["n_particles", "mean_sq_coupling_error"],
                 zip(report.n_values, report.mean_sq_error))
    keep = [i for i, n in enumerate(report.n_values) if n not in report.degenerate]
    plotting.plot_rate(
        out / "coupling.svg", [report.n_values[i] for i in keep],
        {"coupling": [report.mean_sq_error[i] for i in keep]}, {"coupling": report.fit},
        title="shared-noise coupling error",
    )
    io.write_manifest(out / "manifest.json", command, asdict(report.config),
                      report.config.seed, started, extra={"report": report.as_dict()})
    return report.as_dict()
