"""Command-line interface: prepare-data, train, infer, evaluate, ablate, plot."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import data as data_mod
from . import engine, plotting
from .config import ExperimentConfig, apply_overrides, load_config


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif getattr(args, "paper_scale", False):
        cfg = ExperimentConfig.paper_defaults()
    else:
        cfg = ExperimentConfig.toy_defaults()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "steps", None) is not None:
        overrides.append(f"sampler.steps={args.steps}")
    return apply_overrides(cfg, overrides)


def _add_common(p, require_seed=False):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="override a config key (dotted path)")
    p.add_argument("--seed", type=int, required=require_seed)
    p.add_argument("--paper-scale", action="store_true",
                   help="start from the full-scale defaults instead of toy")


def cmd_prepare_data(args) -> int:
    if args.validate:
        manifest = data_mod.DatasetManifest.load(args.manifest)
        splits = {s: len(manifest.split_entries(s)) for s in data_mod.SPLITS}
        print(f"ok entries={len(manifest.entries)} " +
              " ".join(f"{k}={v}" for k, v in splits.items()))
        return 0
    items = []
    if args.synthesize:
        per_cat = {c: args.synthesize for c in (args.categories or ["stripes", "checks", "blobs"])}
        items = data_mod.make_toy_dataset(args.images, per_cat, size=args.size, seed=args.seed or 0)
    else:
        root = Path(args.images)
        for path in sorted(root.rglob("*.png")) + sorted(root.rglob("*.jpg")):
            category = path.parent.name if path.parent != root else "default"
            items.append((str(path), category))
    if not items:
        print("no images found", file=sys.stderr)
        return 1
    manifest = data_mod.split_dataset(items, seed=args.seed or 0, sr_factor=args.sr_factor)
    manifest.save(args.manifest)
    print(f"wrote {args.manifest} with {len(manifest.entries)} entries")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.manifest:
        cfg.data.manifest = args.manifest
    if args.out:
        cfg.run.out_dir = args.out
    result = engine.train(cfg)
    print(f"checkpoint={result.checkpoint_path} log={result.log_path} "
          f"final_loss={result.losses[-1]:.6f}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_cfg(args)
    lr = data_mod.load_image(args.lr)
    ref = data_mod.load_image(args.ref)
    result = engine.infer(cfg, lr, ref, checkpoint=args.checkpoint, seed=args.seed)
    data_mod.save_image(result.sr, args.out)
    print(f"wrote {args.out} after {result.predict_calls} prediction steps")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    if args.manifest:
        cfg.data.manifest = args.manifest
    report = engine.evaluate(
        cfg, split=args.split, checkpoint=args.checkpoint,
        max_items=args.max_items, out_dir=args.out,
    )
    print(json.dumps(report.summary, indent=2))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    if args.manifest:
        cfg.data.manifest = args.manifest
    if args.out:
        cfg.run.out_dir = args.out
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    records = engine.ablate(cfg, args.axis, values)
    out = Path(cfg.run.out_dir) / "ablation.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(records, indent=2))
    for rec in records:
        print(" ".join(f"{k}={v}" for k, v in rec.items()))
    return 0


def cmd_plot(args) -> int:
    wrote = []
    if args.log:
        wrote.append(plotting.plot_loss_curve(args.log, args.out or "loss_curve.png"))
    if args.summary:
        wrote.append(plotting.summary_table(args.summary, args.table_out or "summary.txt"))
    if not wrote:
        print("nothing to plot: pass --log and/or --summary", file=sys.stderr)
        return 1
    print("wrote " + " ".join(wrote))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refdiffsr",
        description="Reference-guided dual-diffusion super-resolution toolkit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("prepare-data", help="emit or validate a dataset manifest")
    p.add_argument("--images", help="image root (category subdirs)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--sr-factor", type=int, default=4)
    p.add_argument("--synthesize", type=int, metavar="N",
                   help="generate N toy images per category first")
    p.add_argument("--categories", nargs="*")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--validate", action="store_true")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train", help="run the training loop")
    _add_common(p, require_seed=True)
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve one image")
    _add_common(p)
    p.add_argument("--lr", required=True, help="low-resolution input image")
    p.add_argument("--ref", required=True, help="reference image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--steps", type=int, help="sampling steps")
    p.add_argument("--out", default="sr.png")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="metrics over a manifest split")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="validation")
    p.add_argument("--max-items", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="sweep one experiment axis")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=sorted(engine.ABLATION_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="loss curves and metric tables")
    p.add_argument("--log")
    p.add_argument("--out")
    p.add_argument("--summary")
    p.add_argument("--table-out")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except Exception as exc:  # surface a clean message, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
