"""clip-export command line.

    clip-export export --dataset cifar100 --checkpoint <id> \
        --template "a photo of a {}." --subset all --split test \
        --out cifar_test.emb1 --data-root /data

    clip-export pairs --source pairs.jsonl --checkpoint <id> --out probe.emb1

Exit codes: 0 success, 2 usage errors, 1 runtime errors (missing data,
unloadable checkpoint, bad pair source).
"""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import ExportSpec, export_classification, export_pairs, validate_template


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clip-export",
                                description="export vision-language embeddings to EMB1")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("export", help="export a classification dataset split")
    e.add_argument("--dataset", required=True,
                   help="cifar100, folder, or fake:<classes>x<per_class>")
    e.add_argument("--checkpoint", required=True,
                   help="hub id / local dir of a contrastive checkpoint, or fake:<dim>")
    e.add_argument("--template", required=True,
                   help='prompt template with exactly one "{}" class slot')
    e.add_argument("--subset", required=True,
                   help='"all" or a file listing one class name per line')
    e.add_argument("--split", required=True, choices=["train", "test"])
    e.add_argument("--out", required=True, help="output EMB1 path")
    e.add_argument("--data-root", default=".", help="where the dataset lives")
    e.add_argument("--batch-size", type=int, default=64)

    q = sub.add_parser("pairs", help="export an aligned image/caption probe set")
    q.add_argument("--source", required=True,
                   help='JSONL with {"image": <path>, "caption": <text>} per line')
    q.add_argument("--checkpoint", required=True)
    q.add_argument("--out", required=True, help="output EMB1 path")
    q.add_argument("--batch-size", type=int, default=64)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.batch_size < 1:
        parser.error("--batch-size must be >= 1")
    try:
        if args.command == "export":
            try:
                validate_template(args.template)
            except ExportError as e:
                parser.error(str(e))
            spec = ExportSpec(dataset=args.dataset, checkpoint=args.checkpoint,
                              template=args.template, subset=args.subset,
                              split=args.split, out=args.out,
                              data_root=args.data_root, batch_size=args.batch_size)
            m = export_classification(spec)
            print(f"wrote {args.out}: {m['num_classes']} classes, "
                  f"{m['num_records']} records, dim {m['dim']}")
        else:
            m = export_pairs(args.checkpoint, args.source, args.out,
                             batch_size=args.batch_size)
            print(f"wrote {args.out}: {m['num_pairs']} pairs "
                  f"({m['num_unique_captions']} unique captions), dim {m['dim']}")
        print(f"manifest {args.out}.manifest.json")
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
