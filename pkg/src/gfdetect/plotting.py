"""Static figures written next to the CSV outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_roc(curves: dict, path, pfa_range=(1e-3, 1e-1)):
    """Missed-detection vs false-alarm probability on log-log axes.

    ``curves`` maps a legend label to a :class:`~gfdetect.harness.RocCurve`.
    """
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, roc in curves.items():
        ok = (roc.pfa > 0) & (roc.pmd > 0)
        ax.loglog(roc.pfa[ok], roc.pmd[ok], label=label)
    ax.axvspan(*pfa_range, color="0.9", zorder=0)
    ax.set_xlabel("false-alarm probability")
    ax.set_ylabel("missed-detection probability")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_traces(traces: dict, path, ylabel="objective"):
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, tr in traces.items():
        ax.plot(np.arange(len(tr)), tr, marker=".", label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bars(values: dict, path, ylabel):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(values)
    ax.bar(names, [values[n] for n in names], color="C0")
    ax.set_ylabel(ylabel)
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
