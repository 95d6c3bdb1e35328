"""Synthetic motion-defined datasets for desk-scale verification.

Two suites:

* ``motion_only`` — every class renders the same sprite moving on the same
  circular track with a uniform random initial angle, so per-frame position
  marginals are identical across classes; only the trajectory pattern over
  time (constant clockwise, constant counter-clockwise, long to-and-fro
  sweeps, rapid zigzag oscillation) separates them.  A per-frame classifier
  is blind here by construction.
* ``appearance_motion`` — two sprite shapes crossed with the two orbit
  senses.  RGB alone resolves shape but not sense; flow alone resolves sense
  but not shape; only fusing both separates all four classes.

Each video also gets a pose annotation file (the sprite center as a
degenerate one-person skeleton) so all three streams run end-to-end.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import save_png

SUITES = ("motion_only", "appearance_motion")
_SUITE_IDS = {"motion_only": 0, "appearance_motion": 1}

MOTION_CLASSES = ("cw_orbit", "ccw_orbit", "bounce", "zigzag")
APPEARANCE_CLASSES = ("square_cw", "square_ccw", "cross_cw", "cross_ccw")

ANGULAR_STEP = 2 * np.pi / 24  # radians per frame along the track
TRACK_RADIUS_FRAC = 0.33
SPRITE_SIGMA_FRAC = 0.05
BOUNCE_HALF_PERIOD = 8  # frames per sweep direction
ZIGZAG_HALF_PERIOD = 2

MIN_CANVAS = 32


def class_names(suite: str, class_count: int) -> list:
    table = MOTION_CLASSES if suite == "motion_only" else APPEARANCE_CLASSES
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}, expected one of {SUITES}")
    if not 2 <= class_count <= len(table):
        raise ValueError(f"suite {suite} supports 2..{len(table)} classes, got {class_count}")
    return list(table[:class_count])


def _direction_steps(pattern: str, frames: int, rng) -> np.ndarray:
    """Signed angular step per frame for one video of the given pattern."""
    if pattern == "cw":
        return np.full(frames, -ANGULAR_STEP)
    if pattern == "ccw":
        return np.full(frames, ANGULAR_STEP)
    if pattern == "bounce":
        half = BOUNCE_HALF_PERIOD
    elif pattern == "zigzag":
        half = ZIGZAG_HALF_PERIOD
    else:
        raise ValueError(f"unknown trajectory pattern {pattern!r}")
    sign = 1.0 if rng.integers(0, 2) else -1.0
    phase = int(rng.integers(0, 2 * half))
    t = np.arange(frames) + phase
    return sign * ANGULAR_STEP * np.where(((t // half) % 2) == 0, 1.0, -1.0)


def _pattern_of(class_name: str) -> str:
    if class_name in ("cw_orbit", "square_cw", "cross_cw"):
        return "cw"
    if class_name in ("ccw_orbit", "square_ccw", "cross_ccw"):
        return "ccw"
    return class_name  # bounce / zigzag


def _sprite_of(class_name: str) -> str:
    if class_name.startswith("square"):
        return "square"
    if class_name.startswith("cross"):
        return "cross"
    return "dot"


def trajectory_centers(suite: str, class_name: str, clip_index: int,
                       frames: int, canvas: int, seed: int) -> np.ndarray:
    """Sprite center per frame, [frames, 2] as (x, y).

    Pure function of its arguments: the per-video generator stream is keyed
    by (seed, suite, class, clip), so generation order and worker count
    cannot change the data.
    """
    class_list = MOTION_CLASSES if suite == "motion_only" else APPEARANCE_CLASSES
    class_index = class_list.index(class_name)
    rng = np.random.default_rng([seed, _SUITE_IDS[suite], class_index, clip_index])
    theta0 = rng.uniform(0.0, 2 * np.pi)
    steps = _direction_steps(_pattern_of(class_name), frames, rng)
    theta = theta0 + np.concatenate([[0.0], np.cumsum(steps[:-1])])
    radius = TRACK_RADIUS_FRAC * canvas
    cx = canvas / 2 + radius * np.cos(theta)
    cy = canvas / 2 + radius * np.sin(theta)
    return np.stack([cx, cy], axis=1)


# ---------------------------------------------------------------------------
# sprite rendering
# ---------------------------------------------------------------------------

def _soft_box(dx, dy, half_w, half_h):
    ax = np.clip(half_w - np.abs(dx) + 0.5, 0.0, 1.0)
    ay = np.clip(half_h - np.abs(dy) + 0.5, 0.0, 1.0)
    return ax * ay


def render_sprite_frame(center, canvas: int, sprite: str = "dot") -> np.ndarray:
    """One uint8 [canvas,canvas,3] frame: the sprite at a subpixel center."""
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    dx = xs - center[0]
    dy = ys - center[1]
    sigma = SPRITE_SIGMA_FRAC * canvas
    if sprite == "dot":
        intensity = np.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
    elif sprite == "square":
        intensity = _soft_box(dx, dy, 1.6 * sigma, 1.6 * sigma)
    elif sprite == "cross":
        intensity = np.maximum(_soft_box(dx, dy, 2.4 * sigma, 0.8 * sigma),
                               _soft_box(dx, dy, 0.8 * sigma, 2.4 * sigma))
    else:
        raise ValueError(f"unknown sprite {sprite!r}")
    gray = np.clip(intensity * 255.0, 0.0, 255.0).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=2)


def _degenerate_pose_record(frame_index: int, center, canvas: int) -> dict:
    x, y = float(center[0]), float(center[1])
    box = 0.25 * canvas
    return {
        "frame": frame_index,
        "persons": [{
            "bbox": [x - box / 2, y - box / 2, box, box],
            "joints": [[x, y, 1.0] for _ in range(14)],
        }],
    }


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_video(root, suite, class_name, clip_index, frames, canvas, seed):
    """Write one synthetic video directory (frames + pose annotations)."""
    centers = trajectory_centers(suite, class_name, clip_index, frames, canvas, seed)
    sprite = _sprite_of(class_name)
    video_dir = Path(root) / class_name / f"v{clip_index:03d}"
    frames_dir = video_dir / "frames"
    pose_dir = video_dir / "pose"
    frames_dir.mkdir(parents=True, exist_ok=True)
    pose_dir.mkdir(parents=True, exist_ok=True)
    for t in range(frames):
        save_png(render_sprite_frame(centers[t], canvas, sprite),
                 frames_dir / f"{t:06d}.png")
    with open(pose_dir / "annotations.jsonl", "w", encoding="utf-8") as f:
        for t in range(frames):
            f.write(json.dumps(_degenerate_pose_record(t, centers[t], canvas),
                               separators=(",", ":")))
            f.write("\n")
    return video_dir


def generate_suite(root, suite: str, class_count: int = 4, clips_per_class: int = 100,
                   frames: int = 32, canvas: int = 32, seed: int = 42,
                   map_fn=map) -> list:
    """Generate a full synthetic dataset tree; returns the video directories.

    ``map_fn`` lets the caller fan the per-video jobs out to a worker pool;
    outputs are a pure function of (seed, suite, class, clip), so parallel
    generation is byte-identical to sequential.
    """
    if canvas < MIN_CANVAS:
        raise ValueError(
            f"canvas {canvas} too small for trajectory radius; need >= {MIN_CANVAS}")
    if frames < 1:
        raise ValueError(f"frames must be >= 1, got {frames}")
    names = class_names(suite, class_count)
    jobs = [
        (root, suite, name, clip, frames, canvas, seed)
        for name in names
        for clip in range(clips_per_class)
    ]
    return list(map_fn(_generate_video_star, jobs))


def _generate_video_star(args):
    return generate_video(*args)
