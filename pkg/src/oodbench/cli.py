"""Command-line front end.

Exit codes: 0 success, 1 user error (config, data, files), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .adapters import DatasetManifest, adapt, load_image
from .augment import AUGMENTATIONS
from .core import CapabilityError, OodBenchError, TaskType
from .methods import METHODS
from .metrics import METRICS
from .plot import write_plots
from .runner import ExperimentConfig, run_experiment
from .schema import validate_report

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2

REGISTRIES = {"methods": METHODS, "augmentations": AUGMENTATIONS, "metrics": METRICS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oodbench", description="Evaluate post-hoc OoD detection methods.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--limit", type=int)
    run.add_argument("--plot", action="store_true", help="also write SVG charts")

    lst = sub.add_parser("list", help="list registered components")
    lst.add_argument("kind")

    inspect = sub.add_parser("inspect", help="summarize a dataset manifest")
    inspect.add_argument("manifest", type=Path)

    plot = sub.add_parser("plot", help="render SVG charts from report.json")
    plot.add_argument("report", type=Path)
    plot.add_argument("--out", required=True, type=Path)
    return parser


def cmd_run(args) -> int:
    if not args.config.is_file():
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USER
    config = ExperimentConfig.load(args.config, overrides={"seed": args.seed, "limit": args.limit})
    report = run_experiment(config, out_dir=args.out)
    report.write(args.out)
    for method, reason in report.skips.items():
        print(f"skipped {method}: {reason}", file=sys.stderr)
    if args.plot:
        write_plots(report.to_dict(), args.out)
    print(f"wrote {args.out / 'report.json'} ({report.n_samples} samples, {len(report.method_names)} methods)")
    return EXIT_OK


def cmd_list(args) -> int:
    registry = REGISTRIES.get(args.kind)
    if registry is None:
        print(f"error: unknown kind {args.kind!r}; choose from {', '.join(REGISTRIES)}", file=sys.stderr)
        return EXIT_USER
    for name in registry:
        print(name)
    return EXIT_OK


def cmd_inspect(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    adapter = adapt(manifest, task=TaskType.CLASSIFICATION)
    shapes = Counter(tuple(load_image(manifest.root / e.image).shape) for e in manifest.entries)
    labels = Counter(e.label for e in manifest.entries if e.label is not None)
    print(f"manifest: {args.manifest}")
    print(f"entries: {len(adapter)}")
    print(f"class_count: {manifest.class_count}")
    print(f"with seg_mask: {sum(e.seg_mask is not None for e in manifest.entries)}")
    for shape, count in sorted(shapes.items()):
        print(f"image shape {'x'.join(map(str, shape))}: {count}")
    for label, count in sorted(labels.items()):
        print(f"label {label}: {count}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        report = json.loads(args.report.read_text())
    except json.JSONDecodeError as exc:
        print(f"error: {args.report}: invalid JSON ({exc})", file=sys.stderr)
        return EXIT_USER
    validate_report(report)
    for path in write_plots(report, args.out):
        print(path)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "list": cmd_list, "inspect": cmd_inspect, "plot": cmd_plot}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OodBenchError, OSError) as exc:
        if isinstance(exc, CapabilityError):
            print(f"internal error: {exc}", file=sys.stderr)
            return EXIT_INTERNAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
