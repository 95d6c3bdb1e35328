"""Seeded SGD training, per-unit and per-video evaluation, majority voting,
and the comparison report.

The classification unit is a frame for single_frame variants and a 16-frame
chunk for temporal ones; per-video labels come from plurality voting over a
video's units with ties broken toward the lowest class index.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .data import CLIP_LEN, ClipStore
from .models import Model, PRESET_ORDER, PRESET_TITLES, stack_unit_batch

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    lr_decay_factor: float = 0.1  # applied once at 2/3 of the epochs

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def lr_at(self, epoch: int) -> float:
        decay_epoch = (2 * self.epochs) // 3
        if self.epochs > 1 and epoch >= decay_epoch:
            return self.learning_rate * self.lr_decay_factor
        return self.learning_rate


@dataclass
class VoteResult:
    video_id: str
    counts: np.ndarray  # votes per class
    winner: int         # argmax, lowest index on ties
    truth: int


@dataclass
class Metrics:
    per_unit_accuracy: float
    per_video_accuracy: float
    confusion: np.ndarray        # unit-level, rows = truth
    video_confusion: np.ndarray  # video-level, rows = truth
    loss_curve: list = field(default_factory=list)
    votes: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# unit enumeration and batching
# ---------------------------------------------------------------------------

def build_units(model: Model, store: ClipStore, split: str) -> list:
    """(descriptor, frame_or_None) pairs for every classification unit."""
    descriptors = store.descriptors(split)
    if model.config.temporal_mode == "single_frame":
        return [(d, t) for d in descriptors for t in range(CLIP_LEN)]
    return [(d, None) for d in descriptors]


def _unit_input(model: Model, store: ClipStore, unit):
    descriptor, frame = unit
    clip = store.load(descriptor)
    cfg = model.config
    out = {}
    for name in cfg.streams:
        tensor = clip.tensors[name]
        if cfg.temporal_mode == "single_frame":
            out[name] = tensor[:, frame][None]
        elif cfg.temporal_mode == "stacked16":
            c, t, h, w = tensor.shape
            out[name] = tensor.transpose(1, 0, 2, 3).reshape(c * t, h, w)[None]
        else:
            out[name] = tensor[None]
    return out


def _batch_of(model: Model, store: ClipStore, units) -> tuple:
    inputs = stack_unit_batch(model.config, [_unit_input(model, store, u) for u in units])
    labels = [u[0].label.index for u in units]
    return inputs, labels


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(model: Model, store: ClipStore, config: TrainConfig,
          val_split: str = "val", log_path=None) -> list:
    """SGD over shuffled mini-batches; returns the per-epoch mean loss curve.

    Shuffle order is a pure function of (seed, epoch); with equal seeds two
    runs produce bit-identical parameters and losses.  Aborts on a non-finite
    loss, naming the offending batch.
    """
    units = build_units(model, store, "train")
    if not units:
        raise ValueError("training split is empty")
    try:
        val_units = build_units(model, store, val_split)
    except KeyError:
        val_units = []
    loss_curve = []
    log_lines = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(units))
        lr = config.lr_at(epoch)
        total = 0.0
        count = 0
        for bstart in range(0, len(order), config.batch_size):
            batch_units = [units[i] for i in order[bstart:bstart + config.batch_size]]
            inputs, labels = _batch_of(model, store, batch_units)
            logits = model.forward(inputs)
            loss = E.softmax_cross_entropy(logits, labels)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, "
                    f"batch starting at unit {bstart}")
            total += value * len(batch_units)
            count += len(batch_units)
            E.backward(loss)
            if lr > 0:
                E.sgd_step(model.params, lr)
            else:
                model.params.zero_grad()
        mean_loss = total / count
        loss_curve.append(mean_loss)
        val_acc = float("nan")
        if val_units:
            val_acc = _unit_accuracy(model, store, val_units)
        line = f"{epoch},{mean_loss:.6f},{val_acc:.6f}"
        log_lines.append(line)
        log.info("epoch %d: mean_loss=%.6f val_unit_acc=%.6f lr=%g",
                 epoch, mean_loss, val_acc, lr)
    if log_path is not None:
        Path(log_path).write_text("\n".join(log_lines) + "\n", encoding="utf-8")
    return loss_curve


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

_EVAL_BATCH = 64


def _predict_units(model: Model, store: ClipStore, units) -> list:
    """[(video_id, truth, prediction)] with lowest-index argmax tie-break."""
    preds = []
    for bstart in range(0, len(units), _EVAL_BATCH):
        batch_units = units[bstart:bstart + _EVAL_BATCH]
        inputs, labels = _batch_of(model, store, batch_units)
        logits = model.forward(inputs).data
        pred = np.argmax(logits, axis=1)  # first max wins ties
        for u, truth, p in zip(batch_units, labels, pred):
            preds.append((u[0].video_id, truth, int(p)))
    return preds


def _unit_accuracy(model, store, units) -> float:
    preds = _predict_units(model, store, units)
    return float(np.mean([t == p for _, t, p in preds]))


def confusion_matrix(pairs, class_count: int) -> np.ndarray:
    m = np.zeros((class_count, class_count), dtype=np.int64)
    for truth, pred in pairs:
        m[truth, pred] += 1
    return m


def vote_per_video(unit_predictions, class_count: int) -> tuple:
    """Plurality vote per video; returns (VoteResults, per-video accuracy)."""
    by_video = {}
    for video_id, truth, pred in unit_predictions:
        entry = by_video.setdefault(video_id, [truth, np.zeros(class_count, dtype=np.int64)])
        if entry[0] != truth:
            raise ValueError(f"conflicting truth labels for video {video_id}")
        entry[1][pred] += 1
    if any(counts.sum() == 0 for _, counts in by_video.values()):
        raise ValueError("video with zero unit predictions")
    votes = []
    correct = 0
    for video_id in sorted(by_video):
        truth, counts = by_video[video_id]
        winner = int(np.argmax(counts))  # lowest index wins ties
        votes.append(VoteResult(video_id, counts, winner, truth))
        correct += int(winner == truth)
    return votes, correct / len(votes)


def evaluate(model: Model, store: ClipStore, split: str,
             loss_curve=None) -> Metrics:
    """Per-unit metrics plus majority-vote per-video metrics for one split."""
    units = build_units(model, store, split)
    if not units:
        raise ValueError(f"split {split!r} is empty")
    preds = _predict_units(model, store, units)
    c = model.config.class_count
    unit_conf = confusion_matrix([(t, p) for _, t, p in preds], c)
    votes, video_acc = vote_per_video(preds, c)
    video_conf = confusion_matrix([(v.truth, v.winner) for v in votes], c)
    unit_acc = float(np.trace(unit_conf) / unit_conf.sum())
    return Metrics(
        per_unit_accuracy=unit_acc,
        per_video_accuracy=video_acc,
        confusion=unit_conf,
        video_confusion=video_conf,
        loss_curve=list(loss_curve or []),
        votes=votes,
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def report_row_order(names) -> list:
    """Canonical preset rows first (comparison-table order), extras after."""
    canonical = [n for n in PRESET_ORDER if n in names]
    extras = sorted(n for n in names if n not in PRESET_ORDER)
    return canonical + extras


def emit_report(metrics_by_variant: dict, out_dir) -> dict:
    """Write report.txt, report.csv and one confusion csv per variant."""
    if not metrics_by_variant:
        raise ValueError("no variants to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = report_row_order(metrics_by_variant.keys())

    rows = [(name,
             metrics_by_variant[name].per_unit_accuracy,
             metrics_by_variant[name].per_video_accuracy) for name in order]
    name_width = max(len(PRESET_TITLES.get(n, n)) for n, _, _ in rows)
    name_width = max(name_width, len("Approach"))
    lines = [f"{'Approach':<{name_width}}  {'Unit Acc':>9}  {'Video Acc':>9}",
             "-" * (name_width + 22)]
    for name, ua, va in rows:
        title = PRESET_TITLES.get(name, name)
        lines.append(f"{title:<{name_width}}  {ua:>9.4f}  {va:>9.4f}")
    report_txt = out_dir / "report.txt"
    report_txt.write_text("\n".join(lines) + "\n", encoding="utf-8")

    report_csv = out_dir / "report.csv"
    csv_lines = ["variant,unit_acc,video_acc"]
    csv_lines += [f"{name},{ua:.6f},{va:.6f}" for name, ua, va in rows]
    report_csv.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    paths = {"report.txt": report_txt, "report.csv": report_csv}
    for name in order:
        conf = metrics_by_variant[name].confusion
        p = out_dir / f"confusion_{name}.csv"
        p.write_text(
            "\n".join(",".join(str(int(v)) for v in row) for row in conf) + "\n",
            encoding="utf-8")
        paths[f"confusion_{name}.csv"] = p
    return paths


def parse_report_csv(path) -> dict:
    out = {}
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    for line in lines[1:]:
        name, ua, va = line.split(",")
        out[name] = (float(ua), float(va))
    return out
