"""embed-tool command line: build-bundle and build-fixture."""

from __future__ import annotations

import argparse
import sys

from .builder import build_bundle, build_fixture
from .manifest import default_manifest, load_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="embed-tool",
        description="Generate paraphrase embedding bundles and routing fixtures.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-bundle", help="encode the paraphrase bundle")
    p.add_argument("--manifest", help="manifest JSON (default: built-in manifest)")
    p.add_argument("--out", required=True, help="output bundle path")

    p = sub.add_parser("build-fixture", help="encode the held-out routing fixture")
    p.add_argument("--manifest", help="manifest JSON (default: built-in manifest)")
    p.add_argument("--out", required=True, help="output fixture path")

    args = parser.parse_args(argv)
    manifest = load_manifest(args.manifest) if args.manifest else default_manifest()
    if args.command == "build-bundle":
        path = build_bundle(manifest, args.out)
    else:
        path = build_fixture(manifest, args.out)
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
