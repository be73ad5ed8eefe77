"""Command line entry point: hamnet-export --manifest FILE."""

import argparse
import logging
import sys

from .errors import CorpusError, ExportError
from .export import export
from .manifest import load_manifest


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="hamnet-export",
        description="Encode a raw corpus into hamnet fixture files.")
    parser.add_argument("--manifest", required=True,
                        help="JSON export manifest (see load_manifest docs)")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress the per-split summary")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1

    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        summary = export(load_manifest(args.manifest))
    except CorpusError as e:
        print(f"corpus error: {e}", file=sys.stderr)
        return 2
    except ExportError as e:
        print(f"export error: {e}", file=sys.stderr)
        return 1
    if not args.quiet:
        parts = ", ".join(f"{split} {n}" for split, n in summary.counts.items())
        print(f"wrote {parts} to {summary.out_dir}"
              + (f" ({summary.unreadable_images} unreadable images)"
                 if summary.unreadable_images else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
