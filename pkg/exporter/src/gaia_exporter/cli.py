"""Exporter CLI: make-fixtures, export-model, export-dataset."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .export import export_model
from .fixtures import FixtureSpec, export_dataset, make_fixtures
from .formats import ExportError, write_archive


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaia-export", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-fixtures", help="train the toy CNN and write all fixture files")
    mk.add_argument("--out", required=True)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--train-samples", type=int, default=FixtureSpec.train_samples)
    mk.add_argument("--test-samples", type=int, default=FixtureSpec.test_samples)
    mk.add_argument("--ood-samples", type=int, default=FixtureSpec.ood_samples)
    mk.add_argument("--epochs", type=int, default=FixtureSpec.epochs)
    mk.add_argument("--image-size", type=int, default=FixtureSpec.image_size)

    em = sub.add_parser("export-model", help="export a torch.save'd supported model")
    em.add_argument("--checkpoint", required=True)
    em.add_argument("--input-shape", required=True, help="C,H,W")
    em.add_argument("--out-dir", required=True)
    em.add_argument("--name", default="model")

    ed = sub.add_parser("export-dataset", help="export images (.npz with images[,labels])")
    ed.add_argument("--npz", required=True)
    ed.add_argument("--out", required=True)
    ed.add_argument("--manifest", default=None,
                    help="validate shape against a model manifest")
    return parser


def cmd_make_fixtures(args) -> int:
    spec = FixtureSpec(seed=args.seed, image_size=args.image_size,
                       train_samples=args.train_samples, test_samples=args.test_samples,
                       ood_samples=args.ood_samples, epochs=args.epochs)
    manifest = make_fixtures(args.out, spec)
    print(f"fixtures written to {args.out} "
          f"(test accuracy {manifest['train']['test_accuracy']:.3f})")
    return 0


def cmd_export_model(args) -> int:
    model = torch.load(args.checkpoint, weights_only=False)
    model.eval()
    input_shape = tuple(int(v) for v in args.input_shape.split(","))
    result = export_model(model, input_shape)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{args.name}.graph").write_text(result.graph_text, encoding="utf-8")
    write_archive(out_dir / f"{args.name}.gwta", result.weights)
    (out_dir / f"{args.name}.layer_map.json").write_text(
        json.dumps(result.layer_map, indent=2) + "\n", encoding="utf-8")
    print(f"exported {len(result.weights)} tensors to {out_dir}")
    return 0


def cmd_export_dataset(args) -> int:
    data = np.load(args.npz)
    if "images" not in data:
        raise ExportError(f"{args.npz} has no 'images' array")
    input_shape = None
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        input_shape = manifest["input_shape"]
    export_dataset(args.out, data["images"], data.get("labels"), input_shape)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "make-fixtures": cmd_make_fixtures,
        "export-model": cmd_export_model,
        "export-dataset": cmd_export_dataset,
    }
    try:
        return handlers[args.command](args)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
