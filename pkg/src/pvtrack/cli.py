"""Command line entry point.

    pvtrack run --config experiment.json --out results/
    pvtrack tune --thermal frame.pgm --rgb frame.ppm --out thresholds.json
    pvtrack metrics --trace results/trace.csv

Results go to stdout as JSON. Failures exit nonzero with a one-line JSON
error object on stderr. ``PVTRACK_LOG_LEVEL`` sets log verbosity (default
WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, PVTrackError
from .geometry import ImageGeometry
from .formats import read_image, read_json, write_json
from .harness import ExperimentConfig, Trace, compute_metrics, run_experiment
from .tuning import ThresholdSet, optimize_thresholds, thresholds_document

log = logging.getLogger("pvtrack")

EXIT_USAGE = 2
EXIT_ERROR = 1


def _cmd_run(args):
    config_path = Path(args.config)
    doc = read_json(config_path)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(doc, base_dir=config_path.parent)
    result = run_experiment(cfg, args.out)
    return {
        "trace": str(Path(args.out) / "trace.csv"),
        "metrics": result.metrics.as_dict(),
        "events": [list(ev) for ev in result.events],
    }


def _geometry_for(img) -> ImageGeometry:
    """The default camera, resampled to the resolution of ``img``."""
    base = ImageGeometry()
    h, w = img.shape[:2]
    if w * base.height != h * base.width:
        raise ConfigError(f"image is {w}x{h}; expected the {base.width}:{base.height} aspect ratio of the camera")
    return base.scaled(w / base.width)


def _cmd_tune(args):
    thermal = read_image(args.thermal)
    rgb = read_image(args.rgb)
    init = ThresholdSet()
    if args.init:
        doc = read_json(args.init)
        init = ThresholdSet.from_dict(doc.get("thresholds", doc))
    result = optimize_thresholds(
        thermal, rgb, init, geometry=_geometry_for(thermal), method=args.method, max_evaluations=args.max_evaluations
    )
    doc = thresholds_document(result)
    write_json(args.out, doc)
    return doc


def _cmd_metrics(args):
    trace = Trace.read_csv(args.trace)
    return compute_metrics(trace, args.cruise_speed).as_dict()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvtrack", description="PV row tracking simulator and tools")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fly one simulated mission")
    run.add_argument("--config", required=True, help="experiment JSON")
    run.add_argument("--out", required=True, help="output directory for trace.csv and metrics.json")
    run.add_argument("--seed", type=int, default=None, help="override the seed in the config")
    run.set_defaults(func=_cmd_run)

    tune = sub.add_parser("tune", help="tune segmentation thresholds on a registered image pair")
    tune.add_argument("--thermal", required=True, help="8-bit greyscale thermal image")
    tune.add_argument("--rgb", required=True, help="RGB image of the same scene")
    tune.add_argument("--out", required=True, help="where to write the thresholds JSON")
    tune.add_argument("--init", help="starting thresholds (JSON, optionally with bounds)")
    tune.add_argument("--method", choices=("coordinate", "lbfgsb"), default="coordinate")
    tune.add_argument("--max-evaluations", type=int, default=400)
    tune.set_defaults(func=_cmd_tune)

    metrics = sub.add_parser("metrics", help="recompute metrics from a trace CSV")
    metrics.add_argument("--trace", required=True)
    metrics.add_argument("--cruise-speed", type=float, default=None, help="override the speed in the trace header")
    metrics.set_defaults(func=_cmd_metrics)
    return parser


def _error(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    level = os.environ.get("PVTRACK_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        return _error("UsageError", "invalid command line arguments", EXIT_USAGE)
    try:
        out = args.func(args)
    except PVTrackError as exc:
        return _error(type(exc).__name__, str(exc), EXIT_ERROR)
    except (OSError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_ERROR)
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
