"""Preprocessing stages shared by the CLI and the test harness.

Each stage reads source frames/annotations and writes derived files into the
documented sibling directories; source data is never mutated.  Per-video
work is a pure function of its inputs, so stages can fan out to worker
processes without changing any output byte.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import flow as FL
from . import pose as PS
from .data import SplitAssignment, VideoRecord, load_png, save_png, scan_dataset

log = logging.getLogger(__name__)

FLOW_META_NAME = "flow_meta.json"
FLOW_MEAN_NAME = "flow_mean.npy"
POSE_STATS_NAME = "pose_stats.json"


def parallel_map(fn, items, jobs: int = 1):
    """Ordered map, optionally across processes; output order is input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# optical flow stage
# ---------------------------------------------------------------------------

def flow_params_for(record: VideoRecord, params: FL.FlowParams) -> FL.FlowParams:
    """Clamp pyramid depth to what the video's resolution supports."""
    h, w = record.frame_size
    levels = params.max_levels_for(h, w)
    if levels != params.pyramid_levels:
        return FL.FlowParams(
            pyramid_levels=levels,
            pyramid_scale=params.pyramid_scale,
            window_radius=params.window_radius,
            iterations=params.iterations,
            poly_sigma=params.poly_sigma,
            regularization=params.regularization,
        )
    return params


def _flow_one_video(args):
    record, gap_k, params, max_mag = args
    params = flow_params_for(record, params)
    flow_dir = record.path / "flow"
    img_dir = record.path / "flow_img"
    flow_dir.mkdir(exist_ok=True)
    img_dir.mkdir(exist_ok=True)
    frames_dir = record.path / "frames"
    gray = {}

    def frame(i):
        if i not in gray:
            gray[i] = FL.grayscale(load_png(frames_dir / f"{i:06d}.png"))
        return gray[i]

    written = 0
    for n in range(gap_k, record.frame_count):
        fl = FL.estimate_flow(frame(n - gap_k), frame(n), params)
        FL.write_flo(fl, flow_dir / f"{n:06d}.flo")
        save_png(FL.flow_to_image(fl, max_mag), img_dir / f"{n:06d}.png")
        gray.pop(n - gap_k, None)
        written += 1
    return record.video_id, written


def run_flow_stage(root, records, splits: SplitAssignment, gap_k: int,
                   params: FL.FlowParams | None = None, max_mag: float = 8.0,
                   jobs: int = 1) -> Path:
    """Precompute k-gap flow fields, flow images, and the train-split mean image.

    Frame n pairs with frame n - gap_k; frames with n - gap_k < 0 are
    skipped, so every flow file is a true k-gap pair.
    """
    root = Path(root)
    params = params or FL.FlowParams()
    eligible = [r for r in sorted(records, key=lambda r: r.video_id)
                if r.frame_count > gap_k]
    if not eligible:
        raise ValueError(f"no video has more than gap_k={gap_k} frames")
    parallel_map(_flow_one_video,
                 [(r, gap_k, params, max_mag) for r in eligible], jobs)

    # train-split mean image over the flow images just written
    def train_flow_images():
        for rec in eligible:
            if splits.split_of(rec.video_id) != "train":
                continue
            for n in range(gap_k, rec.frame_count):
                yield load_png(rec.path / "flow_img" / f"{n:06d}.png").astype(np.float64) / 255.0

    mean = FL.compute_flow_mean_image(train_flow_images())
    np.save(root / FLOW_MEAN_NAME, mean)
    meta = {"gap_k": gap_k, "max_mag": max_mag,
            "pyramid_levels": params.pyramid_levels,
            "pyramid_scale": params.pyramid_scale,
            "window_radius": params.window_radius,
            "iterations": params.iterations,
            "poly_sigma": params.poly_sigma}
    (root / FLOW_META_NAME).write_text(json.dumps(meta, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return root / FLOW_MEAN_NAME


def load_flow_mean(root):
    path = Path(root) / FLOW_MEAN_NAME
    return np.load(path) if path.exists() else None


def load_flow_meta(root) -> dict | None:
    path = Path(root) / FLOW_META_NAME
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# pose rasterization stage
# ---------------------------------------------------------------------------

def _pose_one_video(args):
    record, conf_threshold = args
    ann = record.path / "pose" / "annotations.jsonl"
    if not ann.exists():
        raise FileNotFoundError(f"missing pose annotations {ann}")
    frames = PS.parse_pose_file(ann)
    out_dir = record.path / "pose_img"
    out_dir.mkdir(exist_ok=True)
    h, w = record.frame_size
    persons_per_frame = []
    for frame in frames:
        img = PS.rasterize_pose(frame, w, h, conf_threshold=conf_threshold)
        save_png(img, out_dir / f"{frame.frame_index:06d}.png")
        persons_per_frame.append(len(frame.persons))
    return record.video_id, persons_per_frame


def run_pose_stage(root, records, conf_threshold: float = 0.2, jobs: int = 1) -> Path:
    """Render pose annotations to skeleton images; writes dataset-level
    people statistics alongside."""
    root = Path(root)
    ordered = sorted(records, key=lambda r: r.video_id)
    results = parallel_map(_pose_one_video,
                           [(r, conf_threshold) for r in ordered], jobs)
    counts = {}
    total = 0
    ge2 = 0
    for _, per_frame in results:
        for n in per_frame:
            counts[n] = counts.get(n, 0) + 1
            total += 1
            if n >= 2:
                ge2 += 1
    stats = {
        "frames": total,
        "persons_per_frame": {str(k): counts[k] for k in sorted(counts)},
        "fraction_frames_with_2_or_more": (ge2 / total) if total else 0.0,
    }
    path = root / POSE_STATS_NAME
    path.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# scan convenience
# ---------------------------------------------------------------------------

def rescan(root) -> list:
    records = scan_dataset(root)
    if not records:
        raise ValueError(f"no videos found under {root}")
    return records
