"""Command-line entry point orchestrating the whole pipeline.

Subcommands: scan, split, flow, pose-raster, synth, train, eval, report.
One global --seed feeds every stage (per-stage streams are derived at fixed
offsets so stages re-run independently yet reproducibly); --jobs changes
wall time only, never output bytes.  Logs go to stderr, data to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data, models, pipeline, synth, training
from . import flow as FL

log = logging.getLogger("dancenet")

DATA_ENV = "LETSDANCE_DATA"
SPLIT_FILE = "splits.tsv"

# fixed per-stage offsets on the global seed
SEED_SYNTH = 0
SEED_SPLIT = 1
SEED_INIT = 2
SEED_SHUFFLE = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dancenet",
        description="Multi-stream video classification pipeline (frames, "
                    "optical flow, pose).")
    parser.add_argument("--seed", type=int, default=42, help="global seed (default 42)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for per-video stages (outputs are "
                             "identical for any value)")
    parser.add_argument("--data", type=Path,
                        default=os.environ.get(DATA_ENV),
                        help=f"dataset root (default ${DATA_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("scan", help="enumerate videos and modalities")

    sub.add_parser("split", help="write the per-video 80/10/10 split file")

    p_flow = sub.add_parser("flow", help="precompute k-gap optical flow, flow "
                                         "images and the train-split mean image")
    p_flow.add_argument("--gap", type=int, default=1, help="frame gap k (default 1)")
    p_flow.add_argument("--max-mag", type=float, default=8.0,
                        help="flow-image encoding range in pixels")
    p_flow.add_argument("--levels", type=int, default=3)
    p_flow.add_argument("--scale", type=float, default=0.5)
    p_flow.add_argument("--radius", type=int, default=7)
    p_flow.add_argument("--iterations", type=int, default=3)
    p_flow.add_argument("--sigma", type=float, default=1.5)

    p_pose = sub.add_parser("pose-raster", help="render pose annotations to "
                                                "skeleton images")
    p_pose.add_argument("--conf-threshold", type=float, default=0.2)

    p_synth = sub.add_parser("synth", help="generate the synthetic suites")
    p_synth.add_argument("--suite", choices=("both",) + synth.SUITES, default="both")
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--clips", type=int, default=100)
    p_synth.add_argument("--frames", type=int, default=32)
    p_synth.add_argument("--canvas", type=int, default=32)

    p_train = sub.add_parser("train", help="train one model variant")
    _add_variant_args(p_train)
    p_train.add_argument("--epochs", type=int, default=20)
    p_train.add_argument("--lr", type=float, default=0.01)
    p_train.add_argument("--batch-size", type=int, default=16)

    p_eval = sub.add_parser("eval", help="evaluate a trained variant on a split")
    _add_variant_args(p_eval)
    p_eval.add_argument("--split", choices=data.SPLIT_NAMES, default="test")

    p_report = sub.add_parser("report", help="collate evaluated variants into "
                                             "the comparison report")
    return parser


def _add_variant_args(p):
    p.add_argument("--preset", choices=models.PRESET_ORDER,
                   help="one of the six canonical variants")
    p.add_argument("--streams", help="comma list from rgb,flow,pose (custom variant)")
    p.add_argument("--temporal", choices=models.TEMPORAL_MODES,
                   help="temporal mode for a custom variant")
    p.add_argument("--gap", type=int, default=None,
                   help="flow frame gap (defaults to the preset's value)")
    p.add_argument("--size", type=int, nargs=2, default=(64, 64),
                   metavar=("H", "W"), help="training resolution (default 64 64)")
    p.add_argument("--fc7", type=int, default=128)
    p.add_argument("--name", help="variant name for models/ and results/ "
                                  "(defaults to the preset name)")


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _require_data(args) -> Path:
    if args.data is None:
        raise UsageError(f"--data is required (or set ${DATA_ENV})")
    root = Path(args.data)
    if args.command != "synth" and not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    return root


class UsageError(Exception):
    pass


def _load_splits(root) -> data.SplitAssignment:
    path = root / SPLIT_FILE
    if not path.exists():
        raise FileNotFoundError(f"missing split file {path}; run `dancenet split` first")
    return data.read_split_file(path)


def _variant_config(args, class_count: int) -> tuple:
    """(name, ModelConfig) from --preset or --streams/--temporal."""
    from dataclasses import replace

    size = tuple(args.size)
    if args.preset:
        cfg = models.canonical_presets(class_count, size)[args.preset]
        cfg = replace(cfg, fc7_width=args.fc7,
                      flow_gap_k=args.gap if args.gap is not None else cfg.flow_gap_k)
        return args.name or args.preset, cfg
    if not args.streams or not args.temporal:
        raise UsageError("pass --preset NAME, or both --streams and --temporal; "
                         f"presets: {', '.join(models.PRESET_ORDER)}")
    streams = tuple(s.strip() for s in args.streams.split(",") if s.strip())
    cfg = models.ModelConfig(
        streams=streams, temporal_mode=args.temporal, class_count=class_count,
        input_hw=size, fc7_width=args.fc7, flow_gap_k=args.gap or 1)
    default_name = "_".join(streams) + "_" + args.temporal
    return args.name or default_name, cfg


def _build_store(root, records, splits, cfg) -> data.ClipStore:
    rgb_mean = data.compute_rgb_mean(records, splits) if "rgb" in cfg.streams else None
    flow_mean = None
    if "flow" in cfg.streams:
        meta = pipeline.load_flow_meta(root)
        if meta is None:
            raise FileNotFoundError(
                f"flow stage has not run under {root}; run `dancenet flow` first")
        if meta["gap_k"] != cfg.flow_gap_k:
            raise ValueError(
                f"flow was precomputed with gap {meta['gap_k']} but the model "
                f"wants gap {cfg.flow_gap_k}; re-run `dancenet flow --gap "
                f"{cfg.flow_gap_k}`")
        flow_mean = pipeline.load_flow_mean(root)
    return data.ClipStore(root, records, splits, cfg.effective_gap_k, cfg.streams,
                          cfg.input_hw, rgb_mean=rgb_mean, flow_mean=flow_mean)


def _class_count(records) -> int:
    return len({r.label.index for r in records})


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def cmd_scan(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    per_class = {}
    for r in records:
        per_class.setdefault(r.label.name, []).append(r)
    for name in sorted(per_class):
        recs = per_class[name]
        mods = sorted(set().union(*(r.modalities for r in recs)))
        log.info("class %-16s %4d videos, %5d frames, modalities=%s",
                 name, len(recs), sum(r.frame_count for r in recs), ",".join(mods))
    log.info("total: %d videos", len(records))
    return 0


def cmd_split(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    splits = data.make_splits(records, args.seed + SEED_SPLIT)
    data.write_split_file(splits, records, root / SPLIT_FILE)
    counts = {s: len(splits.videos_in(s)) for s in data.SPLIT_NAMES}
    log.info("wrote %s: %s", root / SPLIT_FILE, counts)
    return 0


def cmd_flow(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    splits = _load_splits(root)
    params = FL.FlowParams(pyramid_levels=args.levels, pyramid_scale=args.scale,
                           window_radius=args.radius, iterations=args.iterations,
                           poly_sigma=args.sigma)
    effective = pipeline.flow_params_for(records[0], params)
    if effective.pyramid_levels != params.pyramid_levels:
        log.info("pyramid clamped to %d levels for %s px frames",
                 effective.pyramid_levels, records[0].frame_size)
    pipeline.run_flow_stage(root, records, splits, gap_k=args.gap,
                            params=params, max_mag=args.max_mag, jobs=args.jobs)
    log.info("flow done: gap=%d max_mag=%g", args.gap, args.max_mag)
    return 0


def cmd_pose_raster(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    stats_path = pipeline.run_pose_stage(root, records,
                                         conf_threshold=args.conf_threshold,
                                         jobs=args.jobs)
    stats = json.loads(stats_path.read_text())
    log.info("pose images rendered; %d frames, fraction with >=2 people: %.3f",
             stats["frames"], stats["fraction_frames_with_2_or_more"])
    return 0


def cmd_synth(args) -> int:
    if args.data is None:
        raise UsageError(f"--data is required (or set ${DATA_ENV})")
    root = Path(args.data)
    suites = synth.SUITES if args.suite == "both" else (args.suite,)
    for suite in suites:
        out = root / suite
        out.mkdir(parents=True, exist_ok=True)
        synth.generate_suite(out, suite, class_count=args.classes,
                             clips_per_class=args.clips, frames=args.frames,
                             canvas=args.canvas, seed=args.seed + SEED_SYNTH,
                             map_fn=lambda f, it: pipeline.parallel_map(f, it, args.jobs))
        log.info("suite %s: %d classes x %d clips x %d frames at %dpx -> %s",
                 suite, args.classes, args.clips, args.frames, args.canvas, out)
    return 0


def cmd_train(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    splits = _load_splits(root)
    name, cfg = _variant_config(args, _class_count(records))
    log.info("variant %s: streams=%s temporal=%s size=%s gap=%d classes=%d",
             name, cfg.streams, cfg.temporal_mode, cfg.input_hw,
             cfg.flow_gap_k, cfg.class_count)
    store = _build_store(root, records, splits, cfg)
    model = models.build_model(cfg, args.seed + SEED_INIT)
    tc = training.TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                              batch_size=args.batch_size,
                              seed=args.seed + SEED_SHUFFLE)
    model_dir = root / "models"
    model_dir.mkdir(exist_ok=True)
    log_path = model_dir / f"{name}.trainlog.csv"
    training.train(model, store, tc, log_path=log_path)
    out = model_dir / f"{name}.dnm"
    models.save_model(model, out)
    log.info("saved model %s and log %s", out, log_path)
    return 0


def cmd_eval(args) -> int:
    root = _require_data(args)
    records = pipeline.rescan(root)
    splits = _load_splits(root)
    name, _ = _variant_config(args, _class_count(records))
    model_path = root / "models" / f"{name}.dnm"
    if not model_path.exists():
        raise FileNotFoundError(f"no trained model at {model_path}; run `dancenet train`")
    model = models.load_model(model_path)
    store = _build_store(root, records, splits, model.config)
    metrics = training.evaluate(model, store, args.split)
    results_dir = root / "results"
    results_dir.mkdir(exist_ok=True)
    payload = {
        "variant": name,
        "split": args.split,
        "unit_acc": metrics.per_unit_accuracy,
        "video_acc": metrics.per_video_accuracy,
        "confusion": metrics.confusion.tolist(),
        "video_confusion": metrics.video_confusion.tolist(),
    }
    out = results_dir / f"{name}.json"
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    log.info("%s on %s: unit=%.4f video=%.4f -> %s", name, args.split,
             metrics.per_unit_accuracy, metrics.per_video_accuracy, out)
    return 0


def cmd_report(args) -> int:
    root = _require_data(args)
    results_dir = root / "results"
    files = sorted(results_dir.glob("*.json")) if results_dir.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no evaluation results under {results_dir}; "
                                f"run `dancenet eval` first")
    by_variant = {}
    for f in files:
        payload = json.loads(f.read_text(encoding="utf-8"))
        by_variant[payload["variant"]] = training.Metrics(
            per_unit_accuracy=payload["unit_acc"],
            per_video_accuracy=payload["video_acc"],
            confusion=np.asarray(payload["confusion"], dtype=np.int64),
            video_confusion=np.asarray(payload["video_confusion"], dtype=np.int64),
        )
    paths = training.emit_report(by_variant, results_dir)
    log.info("report written: %s", ", ".join(str(p) for p in paths.values()))
    return 0


COMMANDS = {
    "scan": cmd_scan,
    "split": cmd_split,
    "flow": cmd_flow,
    "pose-raster": cmd_pose_raster,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in vars(args).items()}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1 with a clear message
        log.error("%s", exc)
        if getattr(args, "verbose", False):
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
