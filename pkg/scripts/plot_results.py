# scripts/plot_results.py
# Renders CSV outputs for a quick look. Not part of the tested contract.
import argparse
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from app.models.waveforms import WaveformSet
from app.utils.csv_utils import read_csv_with_header

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def _figure(width: float = 8.0, rows: int = 1):
    fig, axes = plt.subplots(rows, 1, figsize=(width, width * GOLDEN * max(1, rows) / 1.5), sharex=True, squeeze=False)
    return fig, axes[:, 0]


def plot_waveforms(path: str, out: str, probes=None):
    w = WaveformSet.read_csv(path)
    names = probes or w.probe_names
    fig, axes = _figure(rows=len(names))
    for ax, name in zip(axes, names):
        ax.plot(w.t, w.probes[name], lw=0.6)
        ax.set_ylabel(f"{name} [{w.units.get(name, '')}]")
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("t [s]")
    fig.suptitle(f"{w.metadata.get('scenario', '')} | {w.metadata.get('method', '')} | {w.metadata.get('backend', '')}")
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def plot_stability(path: str, out: str):
    frame, header = read_csv_with_header(path)
    re = np.unique(frame["z1_re"].to_numpy())
    im = np.unique(frame["z1_im"].to_numpy())
    values = frame["absR"].to_numpy().reshape(len(im), len(re))
    fig, axes = _figure(width=6.0)
    ax = axes[0]
    ax.contourf(re, im, values <= 1.0, levels=[0.5, 1.5], colors=["#9ecae1"])
    ax.contour(re, im, values, levels=[1.0], colors="k", linewidths=0.8)
    ax.axvline(0.0, color="grey", lw=0.5)
    ax.axhline(0.0, color="grey", lw=0.5)
    ax.set_xlabel("Re z1")
    ax.set_ylabel("Im z1")
    ax.set_title(f"|R| <= 1, z0 = {header.get('z0', '')}")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def plot_spectral(paths, out: str):
    fig, axes = _figure()
    ax = axes[0]
    for path in paths:
        frame, header = read_csv_with_header(path)
        ax.plot(frame["h"] * 1e9, frame["rho"], marker="o", ms=3, label=header.get("method", os.path.basename(path)))
    ax.axhline(1.0, color="k", lw=0.6, ls="--")
    ax.set_xlabel("h [ns]")
    ax.set_ylabel("spectral radius")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Plot simulator CSV outputs")
    parser.add_argument("kind", choices=["waveforms", "stability", "spectral"])
    parser.add_argument("inputs", nargs="+")
    parser.add_argument("--out", default="plot.png")
    parser.add_argument("--probe", action="append")
    args = parser.parse_args()
    if args.kind == "waveforms":
        plot_waveforms(args.inputs[0], args.out, args.probe)
    elif args.kind == "stability":
        plot_stability(args.inputs[0], args.out)
    else:
        plot_spectral(args.inputs, args.out)
