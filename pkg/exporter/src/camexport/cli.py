"""Command-line entry point mirroring the export configuration."""

from __future__ import annotations

import argparse
import sys

from .config import TARGET_RULES, ExportConfig, export_fixtures, export_model
from .errors import ExportError
from .zoo import source_names


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="camexport", description="Convert a PyTorch model to manifest+blob and emit parity fixtures")
    p.add_argument("--source", required=True, help=f"registry name ({', '.join(source_names())}) or torch-saved module file")
    p.add_argument("--manifest", required=True, help="output manifest JSON path")
    p.add_argument("--blob", required=True, help="output tensor blob path")
    p.add_argument("--target-rule", default="last-conv", choices=TARGET_RULES)
    p.add_argument("--fixture-dir", default=None, help="directory for parity fixtures")
    p.add_argument("--seed", type=int, default=0, help="seed of the first fixture")
    p.add_argument("--count", type=int, default=0, help="number of fixtures to emit")
    p.add_argument("--input-shape", default=None, help="C,H,W for file sources")
    p.add_argument("--task", default="classification", choices=("classification", "regression"))
    p.add_argument("--range", dest="output_range", default=None, help="lo,hi output range for regression file sources")
    return p


def _parse_shape(text):
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 3:
        raise _UsageError(f"input shape must be C,H,W, got '{text}'")
    try:
        return tuple(int(v) for v in parts)
    except ValueError as exc:
        raise _UsageError(f"bad input shape '{text}'") from exc


def _parse_range(text):
    if text is None:
        return None
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise _UsageError(f"bad output range '{text}'") from exc
    return lo, hi


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cfg = ExportConfig(
            source=ns.source,
            manifest_path=ns.manifest,
            blob_path=ns.blob,
            target_rule=ns.target_rule,
            fixture_seed=ns.seed,
            fixture_count=ns.count,
            fixture_dir=ns.fixture_dir,
            input_shape=_parse_shape(ns.input_shape),
            task=ns.task,
            output_range=_parse_range(ns.output_range),
        )
        plan = export_model(cfg)
        fixtures = export_fixtures(cfg, plan)
    except SystemExit:
        raise
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"exported {plan.meta.name}: target_layer={plan.target_layer} fixtures={len(fixtures)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
