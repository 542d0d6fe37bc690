"""Command-line entry point.

Subcommands::

    mfsampler sample --method {eki,eks,nanbu,bird} --config FILE --out DIR [--seed S]
    mfsampler experiment --name {boltzmann-figures,kalman-rate,coupling} --config FILE --out DIR
    mfsampler baseline --target NAME --n N --out DIR
    mfsampler validate --config FILE

Exit status: 0 on success, 1 on a runtime failure (including divergence),
2 on an invalid configuration or usage.
"""

import argparse
import datetime
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness, io, plotting
from .boltzmann import run_boltzmann
from .config import EXPERIMENTS, SEED_ENV, ConfigError, default_config, load_config
from .core_model import builtin_potentials, get_potential
from .errors import DivergenceError, InvalidConfiguration, MFSamplerError
from .kalman import run_kalman
from .linalg_stats import RngStream
from .metrics import DEFAULT_DELTA, mollified_kl_phase, mollified_kl_x, wasserstein2
from .oracles import equilibrium_sample, problem_interpolant, problem_posterior

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("mfsampler")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser():
    p = _Parser(prog="mfsampler", description="Mean-field particle samplers and experiments.",
                epilog=f"Seed precedence: --seed, then the config 'seed', then ${SEED_ENV}.")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker processes for experiments (1 = serial path)")
    p.add_argument("-v", "--verbose", action="store_true", help="log one line per checkpoint")
    # also accepted after the subcommand; SUPPRESS keeps the global default
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="run one sampler", parents=[common])
    s.add_argument("--method", required=True, choices=["eki", "eks", "nanbu", "bird"])
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)

    e = sub.add_parser("experiment", help="run a harness experiment", parents=[common])
    e.add_argument("--name", required=True, choices=sorted(EXPERIMENTS))
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)

    b = sub.add_parser("baseline", help="inverse-transform reference samples", parents=[common])
    b.add_argument("--target", required=True, choices=sorted(builtin_potentials()))
    b.add_argument("--n", type=int, default=1000)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--delta", type=float, default=DEFAULT_DELTA)

    v = sub.add_parser("validate", help="check a config without running it", parents=[common])
    v.add_argument("--config", required=True)
    return p


def _now():
    return datetime.datetime.now(datetime.timezone.utc)


def _sample_kalman(args, rc, out, started):
    cfg = rc.kalman(args.method, args.seed)
    res = run_kalman(cfg)
    h = cfg.step_size
    dim = cfg.problem.dim
    summary = res.summary_array()
    io.write_kalman_summary(out / "summary.csv", summary, dim)
    io.write_kalman_snapshots(out / "snapshots.csv", res.snapshots, h)
    problem = cfg.problem
    oracle = None
    if problem.forward_map.is_linear:
        oracle = problem_interpolant(problem, 1.0) if cfg.method == "eki" else problem_posterior(problem)
    rows = []
    for r in summary:
        t = r[1]
        for k in range(dim):
            rows.append((t, f"mean_{k + 1}", r[2 + k], args.method))
        rows.append((t, "cov_trace", r[-1], args.method))
    if oracle is not None:
        rng = RngStream.for_purpose(cfg.seed, "oracle-draws").generator()
        draws = oracle.sample(rng, cfg.n_particles)
        if dim == 1 or cfg.n_particles <= 512:
            rows.append((summary[-1, 1], "w2_oracle", wasserstein2(res.final, draws), args.method))
    io.write_metrics(out / "metrics.csv", rows)
    series = {f"mean_{k + 1}": summary[:, 2 + k] for k in range(dim)}
    series["cov_trace"] = summary[:, -1]
    plotting.plot_series(out / "moments.svg", summary[:, 1], series,
                         ylabel="ensemble moments", title=args.method.upper())
    config = {"method": args.method, "kalman": rc.section("kalman")}
    io.write_manifest(out / "manifest.json", f"sample --method {args.method}", config,
                      cfg.seed, started)


def _sample_boltzmann(args, rc, out, started):
    cfg = rc.boltzmann(args.method, args.seed)
    res = run_boltzmann(cfg)
    pot = cfg.potential
    io.write_phase_snapshots(out / "snapshots.csv", res.snapshots)
    energy = res.energies()
    times = np.array([s.t for s in res.snapshots])
    kl_x = [mollified_kl_x(s.x, pot, DEFAULT_DELTA) for s in res.snapshots]
    kl = [mollified_kl_phase(s.x, s.v, pot, DEFAULT_DELTA) for s in res.snapshots]
    rows = []
    for t, a, b, e in zip(times, kl_x, kl, energy):
        rows += [(t, "kl_x", a, args.method), (t, "kl", b, args.method),
                 (t, "energy", e, args.method)]
    io.write_metrics(out / "metrics.csv", rows)
    if cfg.record_events:
        io.write_events(out / "events.csv", res.events)
    plotting.plot_series(out / "kl.svg", times, {"KL_X^δ": kl_x, "KL^δ": kl},
                         ylabel="mollified KL", title=f"{args.method} / {pot.name}")
    config = {"method": args.method, "boltzmann": rc.section("boltzmann")}
    io.write_manifest(out / "manifest.json", f"sample --method {args.method}", config,
                      cfg.seed, started,
                      extra={"n_rings": res.n_rings, "n_accepted": res.n_accepted,
                             "lambda_bound": res.lambda_bound})


def cmd_sample(args):
    rc = load_config(args.config)
    out = Path(args.out)
    started = _now()
    if args.method in ("eki", "eks"):
        _sample_kalman(args, rc, out, started)
    else:
        _sample_boltzmann(args, rc, out, started)
    log.info("sample %s written to %s", args.method, out)


def cmd_experiment(args):
    rc = load_config(args.config) if args.config else default_config()
    cfg = rc.experiment(args.name, args.seed)
    out = Path(args.out)
    started = _now()
    log.info("experiment %s: %s", args.name, asdict(cfg))
    command = f"experiment --name {args.name}"
    if args.name == "boltzmann-figures":
        result = harness.experiment_boltzmann_figures(cfg, threads=args.threads)
        harness.write_figure_bundle(result, out, started, command)
    elif args.name == "kalman-rate":
        report = harness.experiment_kalman_rate(cfg, threads=args.threads)
        harness.write_rate_bundle(report, out, started, command)
        log.info("slope %.3f (r2 %.3f)", report.fit_x.slope, report.fit_x.r2)
    else:
        report = harness.experiment_coupling(cfg, threads=args.threads)
        harness.write_coupling_bundle(report, out, started, command)
        log.info("slope %.3f, spearman %.3f", report.fit.slope, report.spearman)


def cmd_baseline(args):
    pot = get_potential(args.target)
    if args.n < 1:
        raise ConfigError("--n must be positive")
    seed = default_config().seed(args.seed)
    started = _now()
    out = Path(args.out)
    rng = RngStream.for_purpose(seed, "baseline").generator()
    x, v = equilibrium_sample(pot, args.n, rng)
    io.write_reference_samples(out / "reference.csv", x, v)
    kl_x = mollified_kl_x(x, pot, args.delta)
    kl = mollified_kl_phase(x, v, pot, args.delta)
    io.write_metrics(out / "metrics.csv", [(io.REFERENCE_TIME, "kl_x", kl_x, "baseline"),
                                           (io.REFERENCE_TIME, "kl", kl, "baseline")])
    if pot.dim == 1:
        grid, dens = harness.density_grid(pot)
        plotting.plot_samples_1d(out / "reference.svg", {"baseline": x}, grid, dens,
                                 title=pot.name)
    else:
        plotting.plot_samples_2d(out / "reference.svg", {"baseline": x}, pot, title=pot.name)
    io.write_manifest(out / "manifest.json", "baseline",
                      {"target": args.target, "n": args.n, "delta": args.delta}, seed, started,
                      extra={"baseline": {"kl_x": kl_x, "kl": kl}})


def cmd_validate(args):
    load_config(args.config).validate()
    print(f"{args.config}: ok")


COMMANDS = {
    "sample": cmd_sample,
    "experiment": cmd_experiment,
    "baseline": cmd_baseline,
    "validate": cmd_validate,
}


def run(argv=None):
    """Parse ``argv`` and dispatch; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args)
    except InvalidConfiguration as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (MFSamplerError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
