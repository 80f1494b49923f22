"""Command-line entry point.

Exit codes: 0 ok, 1 usage or config error, 2 data format error,
3 processing failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import (BehindCameraError, ConfigError, DegenerateConfigurationError, GeoDomainError,
                     ParseError, ProcessingError, ValidationError)
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_PROCESSING = 0, 1, 2, 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="minegeo", description="UAV geo-referencing and detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("localize", "register query images and anchor failures"),
                        ("project", "position detections on the point cloud"),
                        ("align-model", "geo-register a sparse model to UTM"),
                        ("tile", "tile and augment a detection dataset, then split it"),
                        ("synth", "write a synthetic mission"),
                        ("export", "re-export objects or the cloud")]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        if name == "tile":
            p.add_argument("--dry-run", action="store_true", help="write the tile manifest only")
        if name == "export":
            p.add_argument("--format", choices=["geojson", "csv", "ply"])
    p = sub.add_parser("eval", help="localization or detection metrics")
    p.add_argument("mode", choices=["loc", "det"])
    p.add_argument("--summary", metavar="MT,ST,MR,SR", help="render the summary table from given values")
    _common(p)
    return parser


def _overrides(args):
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise _UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v
    for key in ("seed", "threads", "out"):
        if getattr(args, key, None) is not None:
            ov[key] = getattr(args, key)
    if getattr(args, "dry_run", False):
        ov["dry_run"] = "true"
    if getattr(args, "format", None):
        ov["export_format"] = args.format
    if getattr(args, "summary", None):
        ov["summary"] = args.summary
    return ov


def _run(args):
    cfg = pipeline.PipelineConfig.from_file(args.config, _overrides(args))
    cmd = args.command
    if cmd == "localize":
        res = pipeline.run_localize(cfg)
        counts = {}
        for e in res.trajectory:
            counts[e.status] = counts.get(e.status, 0) + 1
        print("localized: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
        if res.report is not None:
            print(res.report.render())
    elif cmd == "project":
        res = pipeline.run_project(cfg)
        print(f"positioned {len(res.objects)} detections, {len(res.unlocalized)} unlocalized")
    elif cmd == "align-model":
        reg = pipeline.run_align_model(cfg)
        print(f"zone {reg.zone}{reg.hemisphere}, scale {reg.transform.scale:.9g}, rms {reg.rms:.4g} m")
    elif cmd == "eval":
        if args.mode == "loc":
            out = pipeline.run_eval_loc(cfg)
            print(out if isinstance(out, str) else out.render())
        else:
            print(pipeline.run_eval_det(cfg).render())
    elif cmd == "tile":
        counts = pipeline.run_tile(cfg)
        print(" ".join(f"{k}={v}" for k, v in counts.items()))
    elif cmd == "synth":
        _, withheld = pipeline.run_synth(cfg)
        print(f"mission written to {cfg.out} ({len(withheld)} queries without matches)")
    elif cmd == "export":
        print(pipeline.run_export(cfg))


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValidationError, GeoDomainError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ProcessingError, DegenerateConfigurationError, BehindCameraError) as exc:
        print(f"processing failed: {exc}", file=sys.stderr)
        return EXIT_PROCESSING
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
