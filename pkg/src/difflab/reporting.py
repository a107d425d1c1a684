"""Artifact writers: delimited tables, JSON records, SVG line plots, and the
run manifest.

All writers are deterministic: floats are formatted with a fixed precision,
JSON keys are sorted, and figures use a fixed hash salt with no embedded
timestamps, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "difflab"

_FLOAT_FMT = "{:.12g}"


def _fmt(v) -> str:
    if isinstance(v, float):
        return _FLOAT_FMT.format(v)
    return str(v)


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path, header, rows) -> None:
    """Comma-delimited table with a fixed float format."""
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(out_dir, command: str, config: dict, seed: int,
                   wall_time: float, extra: dict | None = None) -> None:
    import numpy
    import scipy

    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": {
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "wall_time_s": round(wall_time, 3),
    }
    if extra:
        manifest.update(extra)
    write_json(os.path.join(out_dir, "manifest.json"), manifest)


def line_plot(path, x, series: dict, xlabel: str = "", ylabel: str = "",
              title: str = "", logy: bool = False) -> None:
    """Standalone SVG line chart with the data points marked."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, y in series.items():
        ax.plot(x, y, marker="o", markersize=3, linewidth=1.2, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) > 1:
        ax.legend(frameon=False)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
