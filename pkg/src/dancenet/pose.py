"""Multi-person keypoint ingestion and skeleton rasterization.

Keypoints arrive from annotation files (one JSON record per line); this
module never sees source imagery.  Skeletons use a fixed 14-joint order and
a fixed 13-limb edge list so files stay interchangeable; each limb has a
fixed palette color so limb identity is encoded in the rendered image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

JOINT_NAMES = (
    "head", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
)
JOINT_COUNT = 14

# (joint, joint) pairs: head-neck, neck-shoulders, both arms, neck-hips, both legs
LIMBS = (
    (0, 1),
    (1, 2), (1, 5),
    (2, 3), (3, 4),
    (5, 6), (6, 7),
    (1, 8), (1, 11),
    (8, 9), (9, 10),
    (11, 12), (12, 13),
)

LIMB_PALETTE = (
    (255, 0, 0), (255, 85, 0), (255, 170, 0), (255, 255, 0),
    (170, 255, 0), (85, 255, 0), (0, 255, 0), (0, 255, 85),
    (0, 255, 170), (0, 170, 255), (0, 85, 255), (85, 0, 255),
    (170, 0, 255),
)

BASE_THICKNESS = 3  # pixels at a 256x256 canvas, scaled proportionally


@dataclass
class Joint:
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"joint coordinates must be finite, got ({self.x}, {self.y})")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"joint confidence must be in [0,1], got {self.confidence}")


@dataclass
class Skeleton:
    bbox: tuple  # (x, y, w, h) in pixels
    joints: list = field(default_factory=list)

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValueError(f"bbox width/height must be positive, got {self.bbox}")
        if len(self.joints) != JOINT_COUNT:
            raise ValueError(f"skeleton needs exactly {JOINT_COUNT} joints, got {len(self.joints)}")


@dataclass
class PoseFrame:
    frame_index: int
    persons: list = field(default_factory=list)

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")


# ---------------------------------------------------------------------------
# annotation file I/O (one JSON record per line)
# ---------------------------------------------------------------------------

def _frame_from_record(obj, lineno):
    try:
        persons = []
        for p in obj["persons"]:
            bbox = p["bbox"]
            if len(bbox) != 4:
                raise ValueError(f"bbox needs 4 entries, got {len(bbox)}")
            joints_raw = p["joints"]
            if len(joints_raw) != JOINT_COUNT:
                raise ValueError(f"expected {JOINT_COUNT} joints, got {len(joints_raw)}")
            joints = [Joint(float(j[0]), float(j[1]), float(j[2])) for j in joints_raw]
            persons.append(Skeleton(tuple(float(v) for v in bbox), joints))
        return PoseFrame(int(obj["frame"]), persons)
    except (KeyError, TypeError, IndexError, ValueError) as exc:
        raise ValueError(f"line {lineno}: malformed pose record: {exc}") from exc


def parse_pose_file(path):
    """Parse a line-delimited pose annotation file into ordered PoseFrames."""
    frames = []
    last_index = -1
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON: {exc}") from exc
            frame = _frame_from_record(obj, lineno)
            if frame.frame_index <= last_index:
                raise ValueError(
                    f"line {lineno}: frame index {frame.frame_index} not greater "
                    f"than previous {last_index}")
            last_index = frame.frame_index
            frames.append(frame)
    return frames


def _record_from_frame(frame):
    return {
        "frame": frame.frame_index,
        "persons": [
            {
                "bbox": list(s.bbox),
                "joints": [[j.x, j.y, j.confidence] for j in s.joints],
            }
            for s in frame.persons
        ],
    }


def serialize_pose_frames(frames, path):
    """Inverse of parse_pose_file; write -> read -> write is byte-identical."""
    with open(path, "w", encoding="utf-8") as f:
        for frame in frames:
            f.write(json.dumps(_record_from_frame(frame), separators=(",", ":")))
            f.write("\n")


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def line_thickness(width, height):
    return max(1, round(BASE_THICKNESS * min(width, height) / 256))


def _paint_capsule(canvas, p1, p2, radius, color):
    h, w = canvas.shape[:2]
    x_lo = max(0, int(np.floor(min(p1[0], p2[0]) - radius)))
    x_hi = min(w - 1, int(np.ceil(max(p1[0], p2[0]) + radius)))
    y_lo = max(0, int(np.floor(min(p1[1], p2[1]) - radius)))
    y_hi = min(h - 1, int(np.ceil(max(p1[1], p2[1]) + radius)))
    if x_lo > x_hi or y_lo > y_hi:
        return
    ys, xs = np.mgrid[y_lo:y_hi + 1, x_lo:x_hi + 1]
    vx, vy = p2[0] - p1[0], p2[1] - p1[1]
    seg_sq = vx * vx + vy * vy
    if seg_sq == 0.0:
        t = np.zeros_like(xs, dtype=np.float64)
    else:
        t = np.clip(((xs - p1[0]) * vx + (ys - p1[1]) * vy) / seg_sq, 0.0, 1.0)
    dist = np.hypot(xs - (p1[0] + t * vx), ys - (p1[1] + t * vy))
    mask = dist <= radius
    canvas[y_lo:y_hi + 1, x_lo:x_hi + 1][mask] = color


def rasterize_pose(frame: PoseFrame, width: int, height: int,
                   conf_threshold: float = 0.2) -> np.ndarray:
    """Render a PoseFrame as a uint8 [H,W,3] skeleton image on black.

    Limbs whose either endpoint falls below conf_threshold are omitted;
    out-of-bounds joints are clamped to the canvas edges, never an error.
    Persons and limbs paint in fixed order, so output is deterministic.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"canvas size must be positive, got {width}x{height}")
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    radius = line_thickness(width, height) / 2.0
    for skeleton in frame.persons:
        for limb_idx, (a, b) in enumerate(LIMBS):
            ja, jb = skeleton.joints[a], skeleton.joints[b]
            if ja.confidence < conf_threshold or jb.confidence < conf_threshold:
                continue
            p1 = (min(max(ja.x, 0.0), width - 1.0), min(max(ja.y, 0.0), height - 1.0))
            p2 = (min(max(jb.x, 0.0), width - 1.0), min(max(jb.y, 0.0), height - 1.0))
            _paint_capsule(canvas, p1, p2, radius, LIMB_PALETTE[limb_idx])
    return canvas


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def people_histogram(frames):
    """Histogram of persons-per-frame plus the fraction of frames with >= 2.

    Returns (counts, fraction) where counts[n] is the number of frames with
    exactly n detected persons.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("people_histogram needs at least one frame")
    counts = {}
    ge2 = 0
    for frame in frames:
        n = len(frame.persons)
        counts[n] = counts.get(n, 0) + 1
        if n >= 2:
            ge2 += 1
    return dict(sorted(counts.items())), ge2 / len(frames)
