"""`aa` command line: anti-alias a flat-sliced G-code file against its
source mesh.

Exit codes: 0 ok, 2 configuration error, 3 G-code parse error,
4 geometry error, 5 ordering error.
"""

from __future__ import annotations

import argparse
import math
import sys

from .gcode import GcodeParseError, PrinterProfile
from .geometry import MeshError
from .ordering import OrderingError
from .pipeline import ConfigError, PipelineConfig, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_GEOMETRY = 4
EXIT_ORDERING = 5


def build_parser():
    p = argparse.ArgumentParser(
        prog="aa",
        description="Anti-alias flat-sliced toolpaths: displace vertices "
                    "towards the true surface, rescale flow and speed, and "
                    "re-order paths against nozzle interference.")
    p.add_argument("--gcode", required=True, help="input G-code (flat sliced)")
    p.add_argument("--mesh", required=True, help="input mesh (STL)")
    p.add_argument("--out", required=True, help="output G-code path")
    p.add_argument("--w", type=float, default=0.8,
                   help="inner nozzle diameter, mm (default 0.8)")
    p.add_argument("--tau", type=float, default=1.25,
                   help="outer nozzle diameter, mm (default 1.25)")
    p.add_argument("--alpha", type=float, default=45.0,
                   help="nozzle side inclination, degrees (default 45)")
    p.add_argument("--h", type=float, default=0.6,
                   help="base layer thickness, mm (default 0.6)")
    p.add_argument("--s", type=float, default=None,
                   help="slicing plane position in [0, h], mm (default h/2)")
    p.add_argument("--d", type=float, default=None,
                   help="track width, mm (default w)")
    p.add_argument("--fini", type=float, default=20.0,
                   help="initial deposition speed, mm/s (default 20)")
    p.add_argument("--fmin", type=float, default=13.0,
                   help="minimum deposition speed, mm/s (default 13)")
    p.add_argument("--filament-diameter", type=float, default=2.85)
    p.add_argument("--report", help="write stats JSON here")
    p.add_argument("--error-map", help="write error map (.ply or .csv)")
    p.add_argument("--sweep-s",
                   help="comma-separated slicing plane positions to sweep")
    p.add_argument("--weighted-seams", action="store_true",
                   help="weight seams by local surface opening angle")
    p.add_argument("--no-ordering", action="store_true",
                   help="skip interference ordering (for studies)")
    p.add_argument("--no-overlap", action="store_true",
                   help="skip overlap flow compensation")
    p.add_argument("--workers", type=int, default=0,
                   help="layer worker threads (0 = hardware)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        sweep = []
        if args.sweep_s:
            sweep = [float(v) for v in args.sweep_s.split(",") if v.strip()]
        profile = PrinterProfile(
            w=args.w, tau=args.tau, alpha=math.radians(args.alpha), h=args.h,
            f_ini=args.fini, f_min=args.fmin, s=args.s, d=args.d,
            filament_diameter=args.filament_diameter)
        config = PipelineConfig(
            gcode_path=args.gcode, mesh_path=args.mesh, out_path=args.out,
            profile=profile, ordering_enabled=not args.no_ordering,
            weighted_seams=args.weighted_seams,
            overlap_enabled=not args.no_overlap,
            report_path=args.report, error_map_path=args.error_map,
            sweep_s=sweep, workers=args.workers)
    except (ValueError, ConfigError) as exc:
        print(f"aa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        _program, report, _text = run_pipeline(config)
    except (ValueError, ConfigError) as exc:
        print(f"aa: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GcodeParseError as exc:
        print(f"aa: G-code parse error: {exc}", file=sys.stderr)
        _cleanup(args.out)
        return EXIT_PARSE
    except MeshError as exc:
        print(f"aa: geometry error: {exc}", file=sys.stderr)
        _cleanup(args.out)
        return EXIT_GEOMETRY
    except OrderingError as exc:
        print(f"aa: ordering error: {exc}", file=sys.stderr)
        _cleanup(args.out)
        return EXIT_ORDERING

    moved = report["displacement"]["vertices_displaced"]
    total = report["displacement"]["vertices_total"]
    print(f"aa: displaced {moved}/{total} vertices; "
          f"estimated print time {report['output']['estimated_print_time_s']:.1f} s")
    return EXIT_OK


def _cleanup(path):
    import os

    if path and os.path.exists(path):
        try:
            os.remove(path)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
