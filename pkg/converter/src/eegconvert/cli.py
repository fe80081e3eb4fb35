"""Command-line interface: convert raw recordings, verify conversions."""

from __future__ import annotations

import argparse
import sys

from eegconvert.convert import (ConversionSpec, convert_bcic2a,
                                convert_openbmi, verify)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eegconvert",
        description="Convert raw EEG datasets to the engine's epoch files")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("openbmi", "bcic2a"):
        p = sub.add_parser(name, help=f"convert {name} recordings")
        p.add_argument("--input-dir", required=True)
        p.add_argument("--output-dir", required=True)
        p.add_argument("--channels", nargs="+", default=None,
                       help="channel subset override")
        p.set_defaults(dataset=name)

    p = sub.add_parser("verify", help="re-check a converted dataset")
    p.add_argument("--manifest", required=True)
    p.set_defaults(dataset=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            ok, lines = verify(args.manifest)
            print("\n".join(lines))
            return 0 if ok else 1
        spec = ConversionSpec(args.dataset, args.input_dir, args.output_dir,
                              channels=args.channels)
        convert = convert_openbmi if args.dataset == "openbmi" \
            else convert_bcic2a
        manifest_path, errors = convert(spec)
        for err in errors:
            print(f"skipped: {err}", file=sys.stderr)
        print(f"wrote {manifest_path}")
        return 0
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
