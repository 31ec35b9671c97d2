"""One-shot extraction run: crop-extract --manifest m.json --backbone vit --out dir."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .backbones import BackboneError, load_backbone
from .extract import write_dataset
from .manifest import ManifestError, load_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crop-extract",
        description="Tile region images, run a frozen backbone, write TLTF files",
    )
    parser.add_argument("--manifest", type=Path, required=True)
    parser.add_argument(
        "--backbone", required=True, help="vit, dinov2, swin, or siglip"
    )
    parser.add_argument(
        "--checkpoint", help="hub id or local directory overriding the default weights"
    )
    parser.add_argument("--patch-size", type=int, default=224)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        backbone = load_backbone(args.backbone, args.checkpoint)
        written = write_dataset(
            manifest,
            backbone,
            args.out,
            patch_size=args.patch_size,
            batch_size=args.batch_size,
        )
    except (ManifestError, BackboneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not written:
        print("error: nothing extracted (all images too small?)", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
