"""Command-line entry points.

Subcommands map one-to-one onto pipeline stages: index, plan, priors,
generate, merge, stats, eval, and the end-to-end run. Flags override config
fields; CTRLAUG_ENDPOINT supplies the generation endpoint when --endpoint is
absent. The long-running multi-client deployment is the FastAPI service
(python -m ctrlaug.service); point --backend http --endpoint at it or at any
backend speaking the same contract.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .blend import BlendWeights, blend_priors, export_control_image
from .dataset import classes_of, decode_mask, load_index
from .generation import execute_plan
from .metrics import (
    confusion_matrix,
    format_iou_table,
    iou_report,
    merge_datasets,
    num_classes_for,
    stats_report,
)
from .pipeline import (
    PipelineConfig,
    PipelineError,
    build_backend,
    build_caption_sources,
    build_prior_source,
    load_schema,
    merged_split_lines,
    run_pipeline,
    write_artifact,
)
from .planner import auto_n_balance, make_plan, read_plan, render_plan
from .priors import mask_boundaries


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--root", required=True, help="dataset root (VOC layout)")
    p.add_argument("--split", default="train")
    p.add_argument("--schema", default=None, help="JSON schema file; default VOC classes")


def _emit(payload: dict, out: str | None, force: bool) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out:
        write_artifact(Path(out), text.encode(), force)
    else:
        sys.stdout.write(text)


def cmd_index(args) -> int:
    index = load_index(args.root, args.split, load_schema(args.schema))
    names = {c.id: c.name for c in index.schema}
    payload = {
        "root": str(index.root),
        "split": index.split,
        "size": len(index),
        "fingerprint": index.fingerprint(),
        "samples": [
            {"sample_id": s.sample_id, "classes": [names[c] for c in classes_of(s.mask)]}
            for s in index.samples
        ],
    }
    _emit(payload, args.out, args.force)
    return 0


def cmd_plan(args) -> int:
    index = load_index(args.root, args.split, load_schema(args.schema))
    n = args.n_balance if args.n_balance is not None else auto_n_balance(index, args.auto_ratio)
    plan = make_plan(index, n)
    write_artifact(Path(args.out), render_plan(plan).encode(), args.force)
    print(f"planned {len(plan)} generations at n_balance={n} -> {args.out}")
    return 0


def cmd_priors(args) -> int:
    config = _config_from(args, out=args.out)
    index = load_index(args.root, args.split, load_schema(args.schema))
    prior_source = build_prior_source(config)
    weights = BlendWeights(args.w1, args.w2)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample_ids = args.ids or [s.sample_id for s in index.samples]
    for sid in sample_ids:
        sample = index.get(sid)
        v_img = prior_source(sample.image)
        v_mask = mask_boundaries(sample.mask, args.dilation_radius)
        v_star = blend_priors(v_img, v_mask, weights)
        for tag, prior in (("vimg", v_img), ("vmask", v_mask), ("vstar", v_star)):
            write_artifact(
                out_dir / f"{sid}_{tag}.png", export_control_image(prior), args.force
            )
    print(f"wrote priors for {len(sample_ids)} sample(s) -> {out_dir}")
    return 0


def cmd_generate(args) -> int:
    config = _config_from(args, out=args.out)
    index = load_index(args.root, args.split, load_schema(args.schema))
    plan = read_plan(args.plan)
    result = execute_plan(
        plan,
        index,
        build_backend(config),
        BlendWeights(config.w1, config.w2),
        out_root=args.out,
        prompt_sources=build_caption_sources(config),
        split=config.split,
        parallelism=config.parallelism,
        prior_source=build_prior_source(config),
        dilation_radius=config.dilation_radius,
        steps=config.steps,
        control_kind=config.control_kind,
        control_polarity=config.control_polarity,
    )
    print(
        f"generated {len(result.gen_index)} synthetic samples "
        f"({len(result.failures)} failures) -> {args.out}"
    )
    return 0 if not result.failures else 1


def cmd_merge(args) -> int:
    schema = load_schema(args.schema)
    origin = load_index(args.root, args.split, schema)
    gen = load_index(args.gen, args.gen_split or args.split, schema)
    merged = merge_datasets(origin, gen)
    write_artifact(Path(args.out), merged_split_lines(origin, gen).encode(), args.force)
    print(f"merged {len(origin)} + {len(gen)} = {len(merged)} ids -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    schema = load_schema(args.schema)
    origin = load_index(args.root, args.split, schema)
    gen = None
    final = None
    if args.gen and Path(args.gen, "ImageSets").exists():
        gen = load_index(args.gen, args.gen_split or args.split, schema)
        final = merge_datasets(origin, gen)
    _emit(stats_report(origin, gen, final), args.out, args.force)
    return 0


def cmd_eval(args) -> int:
    schema = load_schema(args.schema)
    gt_dir, pred_dir = Path(args.gt), Path(args.pred)
    num_classes = num_classes_for(schema)
    total = np.zeros((num_classes, num_classes), dtype=np.int64)
    gt_files = sorted(gt_dir.glob("*.png"))
    if not gt_files:
        raise FileNotFoundError(f"no ground-truth masks under {gt_dir}")
    for gt_path in gt_files:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for {gt_path.name}")
        gt = decode_mask(gt_path.read_bytes(), schema)
        pred = decode_mask(pred_path.read_bytes(), schema)
        total += confusion_matrix(pred, gt, num_classes)
    report = iou_report(total, schema)
    if args.out:
        _emit(report, args.out, args.force)
    print(format_iou_table(report))
    return 0


def cmd_run(args) -> int:
    overrides = {
        k: getattr(args, k)
        for k in (
            "root",
            "split",
            "w1",
            "w2",
            "n_balance",
            "auto_ratio",
            "backend",
            "endpoint",
            "parallelism",
            "out",
        )
    }
    if args.force:
        overrides["force"] = True
    if args.config:
        config = PipelineConfig.from_file(args.config, **overrides)
    else:
        missing = [k for k in ("root", "out") if overrides.get(k) is None]
        if missing:
            raise SystemExit(f"run needs --config or {', '.join('--' + m for m in missing)}")
        config = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})
    report = run_pipeline(config)
    print(json.dumps({k: report[k] for k in ("n_balance", "sizes", "failures")}, indent=2))
    print(f"report -> {Path(config.out) / 'run_report.json'}")
    return 0 if report["failures"] == 0 else 1


def _config_from(args, out: str) -> PipelineConfig:
    """Build a config for single-stage commands from their flags."""
    return PipelineConfig(
        root=args.root,
        out=out,
        split=args.split,
        schema_file=args.schema,
        w1=getattr(args, "w1", 0.7),
        w2=getattr(args, "w2", 0.9),
        prior_source=getattr(args, "prior", "builtin_canny"),
        prior_endpoint=getattr(args, "prior_endpoint", None),
        caption_sources=tuple(getattr(args, "caption_sources", ("sidecar",))),
        caption_endpoint=getattr(args, "caption_endpoint", None),
        backend=getattr(args, "backend", "mock"),
        endpoint=getattr(args, "endpoint", None),
        parallelism=getattr(args, "parallelism", 2),
        steps=getattr(args, "steps", 30),
        control_kind=getattr(args, "control_kind", "lineart"),
        dilation_radius=getattr(args, "dilation_radius", 0),
        force=args.force,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlaug",
        description="Plan, prompt, and dispatch controllable image generation "
        "to balance segmentation datasets.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="load a dataset and print its class listing")
    _add_dataset_args(p)
    p.add_argument("--out", default=None, help="write the listing as JSON")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("plan", help="emit a class-balancing generation plan")
    _add_dataset_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--n-balance", type=int, dest="n_balance")
    group.add_argument("--auto-ratio", type=float, dest="auto_ratio", default=1.0)
    p.add_argument("--out", required=True, help="plan file (JSON Lines)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("priors", help="dump image/mask/blended prior PNGs")
    _add_dataset_args(p)
    p.add_argument("--ids", nargs="*", default=None, help="sample ids (default: all)")
    p.add_argument("--w1", type=float, default=0.7)
    p.add_argument("--w2", type=float, default=0.9)
    p.add_argument("--prior", default="builtin_canny")
    p.add_argument("--prior-endpoint", dest="prior_endpoint", default=None)
    p.add_argument("--dilation-radius", dest="dilation_radius", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_priors)

    p = sub.add_parser("generate", help="execute a plan against a backend")
    _add_dataset_args(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--backend", choices=("mock", "http"), default="mock")
    p.add_argument("--endpoint", default=None)
    p.add_argument("--w1", type=float, default=0.7)
    p.add_argument("--w2", type=float, default=0.9)
    p.add_argument("--parallelism", type=int, default=2)
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--prior", default="builtin_canny")
    p.add_argument("--prior-endpoint", dest="prior_endpoint", default=None)
    p.add_argument("--caption-endpoint", dest="caption_endpoint", default=None)
    p.add_argument("--out", required=True, help="synthetic output root")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("merge", help="write the merged split listing")
    _add_dataset_args(p)
    p.add_argument("--gen", required=True, help="synthetic dataset root")
    p.add_argument("--gen-split", dest="gen_split", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("stats", help="class-balance statistics report")
    _add_dataset_args(p)
    p.add_argument("--gen", default=None, help="synthetic dataset root")
    p.add_argument("--gen-split", dest="gen_split", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="per-class IoU and mIoU of predicted masks")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--gt", required=True, help="directory of ground-truth masks")
    p.add_argument("--schema", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="end-to-end pipeline")
    p.add_argument("--config", default=None, help="JSON config document")
    p.add_argument("--root", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--w1", type=float, default=None)
    p.add_argument("--w2", type=float, default=None)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--n-balance", type=int, dest="n_balance", default=None)
    group.add_argument("--auto-ratio", type=float, dest="auto_ratio", default=None)
    p.add_argument("--backend", choices=("mock", "http"), default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    if not args.verbose:
        logging.getLogger("httpx").setLevel(logging.WARNING)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
