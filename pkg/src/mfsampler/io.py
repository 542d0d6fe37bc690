"""CSV and manifest writers shared by the CLI and the experiment harness."""

import csv
import datetime
import hashlib
import json
import platform
import subprocess
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
REFERENCE_TIME = -1.0


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def phase_header(dim):
    return (
        ["time", "particle_id"]
        + [f"x_{k + 1}" for k in range(dim)]
        + [f"v_{k + 1}" for k in range(dim)]
    )


def phase_rows(t, x, v):
    for i, (xi, vi) in enumerate(zip(x, v)):
        yield (t, i, *xi.tolist(), *vi.tolist())


def write_phase_snapshots(path, snapshots):
    """Snapshots as ``(time, particle_id, x_1..x_d, v_1..v_d)`` rows.

    ``snapshots`` is an iterable of objects with ``t``, ``x`` and ``v``.
    """
    snapshots = list(snapshots)
    dim = snapshots[0].x.shape[1]
    rows = (row for s in snapshots for row in phase_rows(s.t, s.x, s.v))
    return write_csv(path, phase_header(dim), rows)


def write_reference_samples(path, x, v):
    """Reference draws in the snapshot schema, with time fixed at -1."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return write_csv(path, phase_header(x.shape[1]), phase_rows(REFERENCE_TIME, x, v))


def write_kalman_summary(path, summary, dim):
    header = ["step", "pseudo_time"] + [f"mean_{k + 1}" for k in range(dim)] + ["cov_trace"]
    rows = ((int(r[0]), *r[1:]) for r in summary)
    return write_csv(path, header, rows)


def write_kalman_snapshots(path, snapshots, h):
    dim = next(iter(snapshots.values())).shape[1]
    header = ["step", "pseudo_time", "particle_id"] + [f"x_{k + 1}" for k in range(dim)]
    rows = (
        (step, step * h, i, *xi.tolist())
        for step, x in sorted(snapshots.items())
        for i, xi in enumerate(x)
    )
    return write_csv(path, header, rows)


def write_metrics(path, rows):
    """Metric time series as ``(time, metric_name, value, run_id)`` rows."""
    return write_csv(path, ["time", "metric_name", "value", "run_id"], rows)


def write_events(path, events):
    rows = (
        (t, kind, "-".join(map(str, owner)) if isinstance(owner, tuple) else owner, accepted)
        for t, kind, owner, accepted in events
    )
    return write_csv(path, ["time", "kind", "owner", "accepted"], rows)


def config_hash(config):
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def build_id():
    from . import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"v{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def versions():
    import matplotlib
    import scipy

    from . import __version__

    return {
        "mfsampler": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
    }


def write_manifest(path, command, config, seed, started, extra=None):
    """Structured run manifest (JSON)."""
    now = datetime.datetime.now(datetime.timezone.utc)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "build_id": build_id(),
        "versions": versions(),
        "wall_clock": {
            "finished_utc": now.isoformat(timespec="seconds"),
            "elapsed_seconds": round((now - started).total_seconds(), 3),
        },
    }
    if extra:
        manifest.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest
