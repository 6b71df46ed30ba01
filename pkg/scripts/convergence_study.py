"""Convergence and accuracy tables for the arrival-time engines.

Usage::

    python3 scripts/convergence_study.py [--quick]

Prints four tables:

1. Gaussian packet density against the dense trapezoid oracle while the
   relative tolerance and the momentum cutoff tolerance are tightened.
2. Sup-norm gap between Gaussian and maximal localization as sigma -> 0
   for the box state of the fig2 preset, near and far detector.
3. Agreement of the three density routes on a post-selected Gaussian and
   on the m a = 1 box.
4. Pre-cone density of the fig3 source state against the contour-rotated
   oracle.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from reltoa.core import Dispersion, Grid1D, QuadratureSpec
from reltoa.detector import GaussianLocalization, perfect_absorber
from reltoa.errors import NonConvergenceWarning
from reltoa.states import (
    PointSinusoid,
    PureDensity,
    apply_localization,
    box_state,
    gaussian_state,
    post_select,
    source_state,
)
from reltoa.toa import conditional_density, default_time_window

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import oracles  # noqa: E402


def selected(psi):
    rho, _ = post_select(PureDensity(psi), perfect_absorber())
    return rho


def table(title, header, rows):
    print(f"\n## {title}\n")
    print("| " + " | ".join(header) + " |")
    print("|" + "---|" * len(header))
    for r in rows:
        print("| " + " | ".join(r) + " |")


def gaussian_tolerances(quick):
    d = Dispersion(1.0)
    rho = PureDensity(gaussian_state(10.0, 1.0, d))
    t0 = 100.0 * math.sqrt(101) / 10
    times = [t0 - 2, t0, t0 + 2]
    ref = oracles.gaussian_density_dense(times, 100.0, 10.0, 1.0, 1.0, n=200_001 if quick else 400_001)
    rows = []
    for rel_tol, mass_tol in ((1e-4, 1e-4), (1e-6, 1e-6), (1e-8, 1e-8), (1e-10, 1e-10)):
        spec = QuadratureSpec(rel_tol=rel_tol, mass_tol=mass_tol)
        start = time.perf_counter()
        dens = conditional_density(rho, 100.0, Grid1D(times[0], times[-1], 3), spec)
        wall = time.perf_counter() - start
        err = float(np.max(np.abs(dens.values - ref) / ref))
        rows.append([f"{rel_tol:.0e}", f"{mass_tol:.0e}", f"{err:.2e}",
                     f"{dens.noise_floor / dens.peak:.1e}", f"{wall:.2f}"])
    table("Gaussian density vs dense trapezoid (p0 = 10, width 1, m = 1, L = 100)",
          ["rel_tol", "mass_tol", "max rel. error", "noise floor / peak", "seconds"], rows)


def localization_limit(quick):
    rho = selected(box_state(1.0, 1, Dispersion(100.0)))
    sigmas = (2e-3, 1e-3, 5e-4) if quick else (2e-3, 1e-3, 5e-4, 2.5e-4)
    rows = []
    for L in (2.0, 20.0):
        window = default_time_window(rho, L)
        grid = Grid1D(window[0], window[1], 2048)
        front = Grid1D(L - 1.2, L - 0.5, 141)
        base = conditional_density(rho, L, grid)
        base_front = conditional_density(rho, L, front)
        for s in sigmas:
            loc = apply_localization(rho, GaussianLocalization(s))
            gap = np.max(np.abs(conditional_density(loc, L, grid).values - base.values)) / base.peak
            gap_front = np.max(np.abs(conditional_density(loc, L, front).values
                                      - base_front.values)) / base.peak
            rows.append([f"{L:g}", f"{s:.2e}", f"{gap:.2e}", f"{gap_front:.2e}"])
    table("Gaussian vs maximal localization, box a = 1, m = 100",
          ["L / a", "sigma / a", "gap / peak (preset grid)", "gap / peak (light-cone front)"], rows)


def route_agreement():
    cases = [("gaussian L = 50", selected(gaussian_state(10.0, 1.0, Dispersion(1.0))), 50.0,
              QuadratureSpec()),
             ("box m a = 1, L = 2", selected(box_state(1.0, 1, Dispersion(1.0))), 2.0,
              QuadratureSpec(mass_tol=1e-6))]
    rows = []
    for label, rho, L, spec in cases:
        lo, hi = default_time_window(rho, L, spec)
        grid = Grid1D(lo, hi, 512)
        out = {}
        for m in ("pure-state-squared", "momentum-double-integral", "phase-space"):
            start = time.perf_counter()
            out[m] = (conditional_density(rho, L, grid, spec, method=m), time.perf_counter() - start)
        ref = out["pure-state-squared"][0]
        for m, (d, wall) in out.items():
            gap = np.max(np.abs(d.values - ref.values)) / ref.peak
            rows.append([label, m, f"{gap:.1e}", f"{d.noise_floor / ref.peak:.1e}", f"{wall:.1f}"])
    table("Route agreement", ["state", "route", "gap / peak", "own error estimate / peak",
                              "seconds"], rows)


def source_precone():
    rho = selected(source_state(PointSinusoid(1.0, 1000.0), Dispersion(1000.0)))
    weight = oracles.source_total_weight()
    dens = conditional_density(rho, 10.0, Grid1D(0.0, 8.9, 90))
    rows = []
    for t in (0.0, 2.0, 5.0, 8.0, 8.9):
        ref = oracles.source_precone_contour(t) / weight
        ours = dens.values[int(round(t * 10))]
        rows.append([f"{t:g}", f"{ours:.9e}", f"{ref:.9e}", f"{abs(ours - ref) / ref:.1e}"])
    table("Pre-cone density of the fig3 source (L/T = 10, m T = 1000)",
          ["t / T", "sweep engine", "contour oracle", "rel. difference"], rows)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="fewer sigma values, lighter oracle")
    args = parser.parse_args(argv)
    warnings.simplefilter("ignore", NonConvergenceWarning)
    gaussian_tolerances(args.quick)
    localization_limit(args.quick)
    route_agreement()
    source_precone()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
