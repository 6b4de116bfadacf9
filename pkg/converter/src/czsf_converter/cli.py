"""Command-line entry points: convert and verify.

    czsf-convert convert <src_dir> <dataset> <out.czsf>
    czsf-convert verify <out.czsf>

Nonzero exit on any validation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .convert import ConvertError, convert
from .czsf import CzsfError, read_czsf


def cmd_convert(args) -> int:
    digest = convert(args.src_dir, args.dataset, args.out)
    parsed = read_czsf(args.out)
    print(
        f"wrote {args.out}: n={parsed['features'].shape[0]} d={parsed['features'].shape[1]} "
        f"C={parsed['attributes'].shape[0]} z={parsed['attributes'].shape[1]}"
    )
    print(f"sha256 {digest}")
    return 0


def cmd_verify(args) -> int:
    parsed = read_czsf(args.path)
    n, d = parsed["features"].shape
    n_classes, z = parsed["attributes"].shape
    print(f"{args.path}: n={n} d={d} C={n_classes} z={z}")
    print(
        f"splits: train={len(parsed['train_idx'])} "
        f"test_seen={len(parsed['test_seen_idx'])} test_unseen={len(parsed['test_unseen_idx'])}"
    )
    print(f"sha256 {parsed['sha256']}")
    sidecar = Path(str(args.path) + ".sha256")
    if sidecar.exists():
        recorded = sidecar.read_text().strip()
        if recorded != parsed["sha256"]:
            print(f"checksum mismatch: sidecar records {recorded}", file=sys.stderr)
            return 1
        print("checksum matches sidecar")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="czsf-convert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_convert = sub.add_parser("convert", help="convert res101/att_splits MAT files to CZSF")
    p_convert.add_argument("src_dir", help="directory holding res101.mat and att_splits.mat")
    p_convert.add_argument("dataset", help="dataset name (registry names enforce dimensions)")
    p_convert.add_argument("out", help="output .czsf path")
    p_convert.set_defaults(func=cmd_convert)

    p_verify = sub.add_parser("verify", help="re-open a CZSF file and report its contents")
    p_verify.add_argument("path", help=".czsf file to verify")
    p_verify.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvertError, CzsfError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
