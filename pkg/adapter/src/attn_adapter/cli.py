"""Command line of the attention exporter.

`export` captures maps from a local model into STRM fixture bundles;
`validate` re-checks an existing fixture directory and exits nonzero on any
violation.
"""

import argparse
import sys

from .errors import AdapterError, UsageError
from .export import export_attention, validate_fixture


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attn-adapter",
        description="export text-to-video attention maps as STRM fixtures")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="capture maps from a local model")
    p.add_argument("--model", required=True, help="model id from the local zoo")
    p.add_argument("--video", help="optional STRM latent video; seeded noise "
                                   "when omitted")
    p.add_argument("--prompt", required=True)
    p.add_argument("--steps", required=True,
                   help="comma-separated timesteps, e.g. 0,250,500")
    p.add_argument("--out", required=True)
    p.add_argument("--blocks",
                   help="comma-separated block ids; default: every block "
                        "except the finest resolution")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="re-check an exported fixture")
    p.add_argument("fixture")
    p.set_defaults(func=cmd_validate)
    return parser


def _int_list(text: str, what: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise UsageError(f"bad {what} list {text!r}: {err}") from err


def cmd_export(args) -> int:
    blocks = _int_list(args.blocks, "block") if args.blocks else None
    manifest = export_attention(args.model, args.video, args.prompt,
                                _int_list(args.steps, "step"), args.out,
                                blocks=blocks, seed=args.seed)
    print(f"exported {len(manifest.files)} files for steps "
          f"{manifest.steps} blocks {manifest.blocks} -> {args.out}")
    return 0


def cmd_validate(args) -> int:
    report = validate_fixture(args.fixture)
    print(report.summary())
    return 0 if report.ok else 3


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdapterError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
