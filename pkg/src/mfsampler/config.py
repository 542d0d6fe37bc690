"""JSON run configuration with a versioned schema.

A config document looks like::

    {
      "schema_version": 1,
      "seed": 7,
      "kalman": {"problem": "linear_gaussian_1d", "n_particles": 200,
                 "step_size": 0.01, "horizon": 1.0},
      "boltzmann": {"potential": "quadratic_1d", "horizon": 10.0},
      "experiment": {"n_seeds": 50}
    }

``kalman`` and ``boltzmann`` feed ``sample``; ``experiment`` holds the
fields of the experiment chosen on the command line. Errors carry the line
of the offending key.
"""

import json
import os
from dataclasses import fields
from pathlib import Path

from .boltzmann import BoltzmannConfig
from .core_model import resolve_problem
from .errors import InvalidConfiguration, MFSamplerError
from .harness import CouplingConfig, FigureConfig, RateConfig
from .kalman import KalmanConfig
from .oracles import initial_sigma2

SCHEMA_VERSION = 1
SEED_ENV = "MFSAMPLER_SEED"
TOP_LEVEL = ("schema_version", "seed", "kalman", "boltzmann", "experiment")
KALMAN_KEYS = ("problem", "n_particles", "step_size", "horizon", "record_every", "debug")
BOLTZMANN_KEYS = tuple(f.name for f in fields(BoltzmannConfig) if f.name not in ("method", "seed"))
EXPERIMENTS = {
    "boltzmann-figures": FigureConfig,
    "kalman-rate": RateConfig,
    "coupling": CouplingConfig,
}


class ConfigError(InvalidConfiguration):
    """Invalid configuration, optionally tied to a line of the source text."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class RunConfig:
    """A parsed config document plus the source text for line lookups."""

    def __init__(self, data, text="", path=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", 1)
        self.data = data
        self.text = text
        self.path = path
        self._check_keys(data, TOP_LEVEL, "config")
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version must be {SCHEMA_VERSION}, got {version!r}",
                self.line_of("schema_version"),
            )
        for name, allowed in (("kalman", KALMAN_KEYS), ("boltzmann", BOLTZMANN_KEYS)):
            section = data.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object", self.line_of(name))
            self._check_keys(section, allowed, name)
        if not isinstance(data.get("experiment", {}), dict):
            raise ConfigError("section 'experiment' must be an object", self.line_of("experiment"))

    def line_of(self, key):
        needle = f'"{key}"'
        for k, line in enumerate(self.text.splitlines(), start=1):
            if needle in line:
                return k
        return None

    def _check_keys(self, section, allowed, where):
        for key in section:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in {where}", self.line_of(key))

    def section(self, name):
        return dict(self.data.get(name, {}))

    def seed(self, override=None):
        """--seed beats the config seed, which beats the environment variable."""
        if override is not None:
            return int(override)
        if "seed" in self.data:
            return int(self.data["seed"])
        env = os.environ.get(SEED_ENV)
        if env:
            try:
                return int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
        return 0

    def _wrap(self, section, build):
        try:
            return build()
        except ConfigError:
            raise
        except (MFSamplerError, TypeError, ValueError, KeyError) as exc:
            key = _key_in_message(str(exc), self.data.get(section, {}))
            raise ConfigError(str(exc), self.line_of(key) if key else self.line_of(section)) from exc

    def kalman(self, method, seed=None):
        sec = self.section("kalman")
        seed = self.seed(seed)

        def build():
            problem = resolve_problem(sec.get("problem", "linear_gaussian_1d"))
            n = int(sec.get("n_particles", 100))
            h = float(sec.get("step_size", 0.01))
            extra = {k: sec[k] for k in ("record_every", "debug") if k in sec}
            if method == "eki":
                if float(sec.get("horizon", 1.0)) != 1.0:
                    raise ConfigError("EKI runs to pseudo-time 1; drop 'horizon' or set it to 1",
                                      self.line_of("horizon"))
                return KalmanConfig.eki(problem, n, h, seed=seed, **extra)
            return KalmanConfig.eks(problem, n, h, float(sec.get("horizon", 10.0)), seed=seed,
                                    **extra)

        return self._wrap("kalman", build)

    def boltzmann(self, method, seed=None):
        sec = self.section("boltzmann")
        sec.setdefault("potential", "quadratic_1d")
        seed = self.seed(seed)

        def build():
            cfg = BoltzmannConfig(method=method, seed=seed, **sec)
            if cfg.init == "box" and cfg.sigma2 is None:
                initial_sigma2(cfg.potential, cfg.box_half_width)
            return cfg

        return self._wrap("boltzmann", build)

    def experiment(self, name, seed=None):
        if name not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
        cls = EXPERIMENTS[name]
        sec = self.section("experiment")
        allowed = {f.name for f in fields(cls)} - {"seed"}
        self._check_keys(sec, allowed, f"experiment {name}")
        seed = self.seed(seed)

        def build():
            cfg = cls(seed=seed, **sec)
            if isinstance(cfg, FigureConfig) and cfg.init == "box":
                initial_sigma2(cfg.boltzmann_config(cfg.methods[0], seed).potential,
                               cfg.box_half_width)
            return cfg

        return self._wrap("experiment", build)

    def validate(self):
        """Build every section present; raises ConfigError on the first problem."""
        if "kalman" in self.data:
            horizon = self.data["kalman"].get("horizon", 1.0)
            self.kalman("eki" if horizon == 1.0 else "eks")
        if "boltzmann" in self.data:
            self.boltzmann("nanbu")
        if "experiment" in self.data:
            sec = self.data["experiment"]
            candidates = [n for n, cls in EXPERIMENTS.items()
                          if set(sec) <= {f.name for f in fields(cls)}]
            if not candidates:
                raise ConfigError("experiment section matches no known experiment",
                                  self.line_of("experiment"))
            errors = []
            for name in candidates:
                try:
                    self.experiment(name)
                    return
                except ConfigError as exc:
                    errors.append(exc)
            raise errors[0]


def _key_in_message(message, section):
    for key in section:
        if key in message:
            return key
    return None


def parse_config(text, path=None):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno) from None
    return RunConfig(data, text, path)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def default_config():
    return RunConfig({"schema_version": SCHEMA_VERSION})


__all__ = [
    "ConfigError",
    "EXPERIMENTS",
    "RunConfig",
    "SCHEMA_VERSION",
    "SEED_ENV",
    "default_config",
    "load_config",
    "parse_config",
]
