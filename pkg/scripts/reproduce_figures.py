"""Run the fig1, fig2 and fig3 presets and draw their curves.

Usage::

    python3 scripts/reproduce_figures.py [--out out/figures] [--cache DIR] [--no-plots]

CSV files and transient reports are written by the preset runner.  PNG
plots are added when matplotlib is installed (``pip install .[plots]``).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
from pathlib import Path

import numpy as np

from reltoa.runner import Cache, run_study
from reltoa.scenario import load_preset

log = logging.getLogger("reproduce_figures")


def read_csv(path: Path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(io.StringIO("\n".join(lines))))
    return rows[0], np.array(rows[1:], dtype=float)


def plot_fig1(out: Path, plt):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, name in zip(axes, ("slow", "massless")):
        header, rows = read_csv(out / name / "kernels.csv")
        for j, label in enumerate(header[1:], start=1):
            if label != "classical":
                ax.plot(rows[:, 0], rows[:, j], label=label)
        ax.set_xlabel("s = p (x - v t)")
        ax.set_title(name)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out / "fig1.png", dpi=120)


def plot_fig2(out: Path, plt):
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))
    for row, where in enumerate(("near", "far")):
        for sigma in ("0", "0.5", "1"):
            d = out / f"{where}-sigma{sigma}"
            header, main = read_csv(d / "pure-state-squared.csv")
            tau = main[:, header.index("tau")]
            axes[row, 0].plot(tau, main[:, 1], label=f"sigma/a = {sigma}")
            header, inset = read_csv(d / "current-operator_inset.csv")
            axes[row, 1].plot(inset[:, header.index("tau")], inset[:, 1], label=f"P_J, sigma/a = {sigma}")
        axes[row, 0].set_title(f"{where} detector: conditional density")
        axes[row, 1].set_title(f"{where} detector: current density, early times")
        for ax in axes[row]:
            ax.set_xlabel("tau = t / (2 m a^2)")
            ax.legend()
    fig.tight_layout()
    fig.savefig(out / "fig2.png", dpi=120)


def plot_fig3(out: Path, plt):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for engine, label in (("pure-state-squared", "Feynman propagation"),
                          ("causal-corrected", "retarded propagation")):
        header, rows = read_csv(out / "source" / f"{engine}.csv")
        ax.semilogy(rows[:, 0], np.maximum(np.abs(rows[:, 1]), 1e-300), label=label)
    ax.axvline(9.0, color="k", lw=0.8, ls="--", label="t = L - T")
    ax.set_xlabel("t / T")
    ax.set_ylabel("|P(t)|")
    ax.set_ylim(1e-20, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "fig3.png", dpi=120)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("out/figures"))
    parser.add_argument("--cache", type=Path, default=None)
    parser.add_argument("--no-plots", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cache = Cache(args.cache)
    for name in ("fig1", "fig2", "fig3"):
        records = run_study(load_preset(name), args.out / name, cache)
        for r in records:
            log.info("%s/%s  %s  %s  %.1f s", name, r.scenario, r.scenario_hash[:12],
                     "cached" if r.cached else "computed", r.wall_time)
    for report in sorted((args.out / "fig3").rglob("*_transient.txt")):
        log.info("%s\n%s", report, report.read_text())
    if args.no_plots:
        return 0
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.info("matplotlib is not installed; skipping plots")
        return 0
    plot_fig1(args.out / "fig1", plt)
    plot_fig2(args.out / "fig2", plt)
    plot_fig3(args.out / "fig3", plt)
    log.info("plots written to %s", args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
