"""SVG figures with the plotted series embedded as a JSON data block.

Every figure is written by matplotlib and then tagged with a
``<metadata id="mfsampler-data">`` element so that tests and downstream
tools can read the numbers back without parsing paths.
"""

import json
import xml.etree.ElementTree as ET
from io import StringIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DATA_ID = "mfsampler-data"

STYLE = {
    "svg.hashsalt": "mfsampler",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "figure.figsize": (4.2, 3.0),
}

ENGINE_COLORS = {"nanbu": "tab:blue", "bird": "tab:orange", "baseline": "k"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def save_svg(fig, path, data):
    """Write ``fig`` to ``path`` with ``data`` embedded; closes the figure."""
    buf = StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    svg = buf.getvalue()
    payload = json.dumps(_jsonable(data), sort_keys=True).replace("]]>", "]]]]><![CDATA[>")
    block = f'<metadata id="{DATA_ID}"><![CDATA[{payload}]]></metadata>'
    head_end = svg.index(">", svg.index("<svg")) + 1
    svg = svg[:head_end] + "\n" + block + svg[head_end:]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg)
    return path


def read_svg_data(path):
    """Return the JSON data block embedded by :func:`save_svg`."""
    root = ET.parse(path).getroot()
    for el in root.iter():
        if el.tag.endswith("metadata") and el.get("id") == DATA_ID:
            return json.loads(el.text)
    raise KeyError(f"no embedded data block in {path}")


def plot_series(path, times, series, baseline=None, ylabel="", title=""):
    """Overlay time series (e.g. one per engine) with an optional baseline line."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, values in series.items():
            ax.plot(times, values, label=label, color=ENGINE_COLORS.get(label))
        if baseline is not None:
            ax.axhline(baseline, color="k", ls="--", lw=1.0, label="baseline")
        ax.set_xlabel("time")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        return save_svg(
            fig, path, {"times": times, "series": series, "baseline": baseline, "ylabel": ylabel}
        )


def plot_samples_1d(path, samples, grid, density, title=""):
    """Histograms of 1d samples against the normalized target density."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(samples), sharey=True, squeeze=False,
                                 figsize=(2.4 * len(samples), 2.4))
        hist_data = {}
        for ax, (label, x) in zip(axes[0], samples.items()):
            counts, edges, _ = ax.hist(np.ravel(x), bins=40, density=True, alpha=0.6,
                                       color=ENGINE_COLORS.get(label))
            ax.plot(grid, density, color="k", lw=1.0)
            ax.set_title(label)
            ax.set_xlabel("x")
            hist_data[label] = {"counts": counts, "edges": edges}
        if title:
            fig.suptitle(title)
        return save_svg(fig, path, {"histograms": hist_data, "grid": grid, "density": density})


def plot_samples_2d(path, samples, pot, extent=4.0, title=""):
    """Scatter of 2d samples over contours of the target density."""
    g = np.linspace(-extent, extent, 121)
    X, Y = np.meshgrid(g, g, indexing="xy")
    Z = np.exp(-pot(np.stack([X, Y], axis=-1)))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(samples), squeeze=False,
                                 figsize=(2.6 * len(samples), 2.6))
        for ax, (label, x) in zip(axes[0], samples.items()):
            ax.contour(X, Y, Z, levels=6, colors="k", linewidths=0.6)
            ax.scatter(x[:, 0], x[:, 1], s=2, alpha=0.5, color=ENGINE_COLORS.get(label))
            ax.set_title(label)
            ax.set_aspect("equal")
        if title:
            fig.suptitle(title)
        return save_svg(fig, path, {"samples": {k: np.asarray(v) for k, v in samples.items()}})


def plot_rate(path, n_values, errors, fits=None, title=""):
    """Log-log error curves with fitted slopes in the legend."""
    fits = fits or {}
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, err in errors.items():
            fit = fits.get(label)
            name = f"{label} (slope {fit.slope:.2f})" if fit else label
            ax.loglog(n_values, err, "o-", label=name, ms=3)
        ax.set_xlabel("N")
        ax.set_ylabel("error")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fit_data = {k: {"slope": f.slope, "intercept": f.intercept, "r2": f.r2}
                    for k, f in fits.items()}
        return save_svg(fig, path, {"n_values": n_values, "errors": errors, "fits": fit_data})
