"""Command-line entry point: ``reltoa run|preset|validate``.

Exit codes: 0 success, 2 configuration error, 3 engine error, 4 cache error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import CacheCorrupt, ConfigError, ReltoaError
from .runner import Cache, run_study, tool_version
from .scenario import dump_study, load_preset, load_study, scenario_hash

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ENGINE = 3
EXIT_CACHE = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reltoa",
                                     description="Relativistic time-of-arrival densities.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: ./out/<study>)")
        p.add_argument("--force", action="store_true", help="recompute even on a cache hit")
        p.add_argument("--threads", type=int, default=1, help="threads for the NUFFT sweeps")
        p.add_argument("--quad-tol", type=float, default=None,
                       help="relative quadrature tolerance for every scenario")
        p.add_argument("--cache", type=Path, default=None,
                       help="cache root (default: $RELTOA_CACHE or ~/.cache/reltoa)")

    run = sub.add_parser("run", help="run the scenarios in a YAML file")
    run.add_argument("config", type=Path)
    common(run)
    preset = sub.add_parser("preset", help="run a shipped preset")
    preset.add_argument("name", choices=["fig1", "fig2", "fig3"])
    common(preset)
    validate = sub.add_parser("validate", help="check a YAML file and print scenario hashes")
    validate.add_argument("config", type=Path)
    validate.add_argument("--dump", action="store_true",
                          help="print the normalised configuration")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "validate":
            study = load_study(args.config)
            version = tool_version()
            for s in study.scenarios:
                print(f"{s.name}\t{scenario_hash(s, version)}")
            if args.dump:
                print(dump_study(study), end="")
            return EXIT_OK
        study = load_study(args.config) if args.verb == "run" else load_preset(args.name)
        out = args.out if args.out is not None else Path("out") / study.name
        records = run_study(study, out, Cache(args.cache), args.force, args.threads,
                            args.quad_tol)
        for r in records:
            state = "cached" if r.cached else "computed"
            print(f"{r.scenario}\t{r.scenario_hash[:12]}\t{state}\t{r.wall_time:.2f}s")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CacheCorrupt as exc:
        print(f"cache error: {exc}", file=sys.stderr)
        return EXIT_CACHE
    except ReltoaError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
