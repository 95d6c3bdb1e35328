"""Dataset layout scanning, per-video splits, 16-frame chunking and aligned
multi-modality clip loading.

Layout per video:  <root>/<class>/<video>/frames/%06d.png with sibling
flow/%06d.flo, flow_img/%06d.png, pose/annotations.jsonl, pose_img/%06d.png
produced by the preprocessing stages.  Flow file %06d pairs source frames
(n, n - gap_k), so a k-gap dataset has frame_count - k flow images starting
at index k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CANONICAL_CLASSES = (
    "ballet", "break", "flamenco", "foxtrot", "latin",
    "quickstep", "square", "swing", "tango", "waltz",
)
CLIP_LEN = 16
SPLIT_NAMES = ("train", "val", "test")
SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

MODALITIES = ("rgb", "flow", "pose")
_MODALITY_DIRS = {"rgb": "frames", "flow": "flow_img", "pose": "pose_img"}


@dataclass(frozen=True)
class ClassLabel:
    index: int
    name: str


@dataclass
class VideoRecord:
    label: ClassLabel
    video_id: str  # "<class>/<video_dir>"
    path: Path
    frame_count: int
    frame_size: tuple  # (height, width)
    modalities: frozenset


@dataclass(frozen=True)
class ClipDescriptor:
    video_id: str
    label: ClassLabel
    start_frame: int
    gap_k: int


@dataclass
class Clip:
    video_id: str
    start_frame: int
    label: ClassLabel
    tensors: dict = field(default_factory=dict)  # modality -> float32 [3,16,H,W]

    @property
    def length(self):
        return CLIP_LEN


# ---------------------------------------------------------------------------
# image I/O
# ---------------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    """Decode an image file to uint8 [H,W,3]; errors name the exact path."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing frame file {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image file {path}: {exc}") from exc


def save_png(arr: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path, format="PNG")


def resize_image(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    if arr.shape[0] == height and arr.shape[1] == width:
        return arr
    img = Image.fromarray(arr).resize((width, height), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


# ---------------------------------------------------------------------------
# scanning
# ---------------------------------------------------------------------------

def _frame_files(video_dir: Path):
    frames_dir = video_dir / "frames"
    if not frames_dir.is_dir():
        return []
    return sorted(frames_dir.glob("*.png"))


def scan_dataset(root) -> list:
    """One VideoRecord per video directory, in deterministic sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    records = []
    for class_index, class_dir in enumerate(class_dirs):
        label = ClassLabel(class_index, class_dir.name)
        video_dirs = sorted(d for d in class_dir.iterdir() if d.is_dir())
        if not video_dirs:
            log.warning("class directory %s has no videos", class_dir)
            continue
        for video_dir in video_dirs:
            frames = _frame_files(video_dir)
            if not frames:
                log.warning("video directory %s has no frames, skipping", video_dir)
                continue
            for pos, f in enumerate(frames):
                if int(f.stem) != pos:
                    raise ValueError(
                        f"non-contiguous frame numbering in {video_dir}: "
                        f"expected {pos:06d}, found {f.name}")
            sizes = set()
            for f in frames:
                with Image.open(f) as img:
                    sizes.add((img.height, img.width))
            if len(sizes) > 1:
                raise ValueError(f"mixed frame resolutions in {video_dir}: {sorted(sizes)}")
            present = {"rgb"}
            if any((video_dir / "flow_img").glob("*.png")):
                present.add("flow")
            if any((video_dir / "pose_img").glob("*.png")):
                present.add("pose")
            records.append(VideoRecord(
                label=label,
                video_id=f"{class_dir.name}/{video_dir.name}",
                path=video_dir,
                frame_count=len(frames),
                frame_size=next(iter(sizes)),
                modalities=frozenset(present),
            ))
    return records


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass
class SplitAssignment:
    assignment: dict  # video_id -> "train" | "val" | "test"
    seed: int

    def split_of(self, video_id):
        return self.assignment[video_id]

    def videos_in(self, split):
        return sorted(v for v, s in self.assignment.items() if s == split)


def _largest_remainder(n, fractions):
    quotas = [n * f for f in fractions]
    counts = [int(np.floor(q)) for q in quotas]
    remainder = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def make_splits(records, seed: int) -> SplitAssignment:
    """Per-class seeded shuffle then contiguous 80/10/10 slicing.

    Exact proportions whenever the class size is divisible by 10; otherwise
    largest-remainder rounding.  A pure function of (video list, seed).
    """
    by_class = {}
    for rec in records:
        by_class.setdefault(rec.label.index, []).append(rec)
    assignment = {}
    for class_index in sorted(by_class):
        vids = sorted(r.video_id for r in by_class[class_index])
        if len(vids) < 3:
            raise ValueError(
                f"class index {class_index} has only {len(vids)} videos; need at least 3")
        rng = np.random.default_rng([seed, class_index])
        perm = rng.permutation(len(vids))
        shuffled = [vids[i] for i in perm]
        n_train, n_val, n_test = _largest_remainder(len(vids), SPLIT_FRACTIONS)
        for vid in shuffled[:n_train]:
            assignment[vid] = "train"
        for vid in shuffled[n_train:n_train + n_val]:
            assignment[vid] = "val"
        for vid in shuffled[n_train + n_val:]:
            assignment[vid] = "test"
    return SplitAssignment(assignment, seed)


def write_split_file(splits: SplitAssignment, records, path) -> None:
    by_id = {r.video_id: r for r in records}
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# seed={splits.seed}\n")
        for vid in sorted(splits.assignment):
            f.write(f"{vid}\t{by_id[vid].label.name}\t{splits.assignment[vid]}\n")


def read_split_file(path) -> SplitAssignment:
    assignment = {}
    seed = None
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if "seed=" in line:
                    seed = int(line.split("seed=")[1])
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in SPLIT_NAMES:
                raise ValueError(f"line {lineno}: malformed split line {line!r}")
            assignment[parts[0]] = parts[2]
    if seed is None:
        raise ValueError(f"split file {path} is missing the seed header")
    return SplitAssignment(assignment, seed)


# ---------------------------------------------------------------------------
# chunking
# ---------------------------------------------------------------------------

def chunk_video(record: VideoRecord, gap_k: int = 0) -> list:
    """Non-overlapping 16-frame chunk descriptors starting at gap_k.

    Yields floor((frame_count - gap_k) / 16) chunks; the trailing remainder
    is dropped.  Videos shorter than gap_k + 16 yield an empty list.
    """
    if gap_k < 0:
        raise ValueError(f"gap_k must be >= 0, got {gap_k}")
    usable = record.frame_count - gap_k
    count = usable // CLIP_LEN if usable > 0 else 0
    if count == 0:
        log.warning("video %s too short for a %d-frame chunk with gap %d",
                    record.video_id, CLIP_LEN, gap_k)
        return []
    return [
        ClipDescriptor(record.video_id, record.label, gap_k + i * CLIP_LEN, gap_k)
        for i in range(count)
    ]


# ---------------------------------------------------------------------------
# clip loading
# ---------------------------------------------------------------------------

def compute_rgb_mean(records, splits: SplitAssignment, split: str = "train") -> np.ndarray:
    """Per-channel scalar mean over every frame of the split, in [0,1] units."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for rec in sorted(records, key=lambda r: r.video_id):
        if splits.split_of(rec.video_id) != split:
            continue
        for i in range(rec.frame_count):
            arr = load_png(rec.path / "frames" / f"{i:06d}.png")
            total += arr.reshape(-1, 3).mean(axis=0)
            count += 1
    if count == 0:
        raise ValueError(f"no frames found in split {split!r}")
    return (total / count / 255.0).astype(np.float64)


def _load_modality_frame(video_dir: Path, modality: str, index: int,
                         height: int, width: int) -> np.ndarray:
    sub = _MODALITY_DIRS[modality]
    arr = load_png(video_dir / sub / f"{index:06d}.png")
    arr = resize_image(arr, height, width)
    return arr.astype(np.float32) / 255.0


def load_clip(root, descriptor: ClipDescriptor, modalities, target_hw,
              rgb_mean=None, flow_mean=None) -> Clip:
    """Load and align the requested modalities for one 16-frame chunk.

    Frames are decoded, bilinearly resized to target_hw, scaled to [0,1] and
    mean-subtracted (per-channel scalar for rgb, per-pixel image for flow;
    pose images are used as-is), then stacked time-major into [3,16,H,W].
    """
    root = Path(root)
    height, width = target_hw
    video_dir = root / descriptor.video_id
    clip = Clip(descriptor.video_id, descriptor.start_frame, descriptor.label)
    fm = None
    if flow_mean is not None:
        fm = np.asarray(flow_mean, dtype=np.float32)
        if fm.shape[:2] != (height, width):
            fm = resize_image(np.clip(fm * 255.0, 0, 255).astype(np.uint8),
                              height, width).astype(np.float32) / 255.0
    for modality in modalities:
        if modality not in MODALITIES:
            raise ValueError(f"unknown modality {modality!r}")
        frames = []
        for t in range(CLIP_LEN):
            arr = _load_modality_frame(video_dir, modality,
                                       descriptor.start_frame + t, height, width)
            if modality == "rgb" and rgb_mean is not None:
                arr = arr - np.asarray(rgb_mean, dtype=np.float32)
            elif modality == "flow" and fm is not None:
                arr = arr - fm
            frames.append(arr.transpose(2, 0, 1))
        clip.tensors[modality] = np.stack(frames, axis=1).astype(np.float32)
    return clip


class ClipStore:
    """Chunk descriptor enumeration plus a per-clip tensor cache."""

    def __init__(self, root, records, splits: SplitAssignment, gap_k, modalities,
                 target_hw, rgb_mean=None, flow_mean=None):
        self.root = Path(root)
        self.records = {r.video_id: r for r in records}
        self.splits = splits
        self.gap_k = gap_k
        self.modalities = tuple(modalities)
        self.target_hw = tuple(target_hw)
        self.rgb_mean = rgb_mean
        self.flow_mean = flow_mean
        self._cache = {}

    def descriptors(self, split) -> list:
        out = []
        for vid in sorted(self.records):
            if self.splits.split_of(vid) != split:
                continue
            out.extend(chunk_video(self.records[vid], self.gap_k))
        return out

    def load(self, descriptor: ClipDescriptor) -> Clip:
        key = (descriptor.video_id, descriptor.start_frame)
        clip = self._cache.get(key)
        if clip is None:
            clip = load_clip(self.root, descriptor, self.modalities, self.target_hw,
                             rgb_mean=self.rgb_mean, flow_mean=self.flow_mean)
            self._cache[key] = clip
        return clip
