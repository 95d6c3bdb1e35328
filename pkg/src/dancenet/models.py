"""The six model variants, built declaratively from a shared stream stack.

Every stream (rgb / flow / pose) gets its own small conv stack ending in an
fc7 feature layer; stream features are concatenated and passed through one
final linear classifier.  Temporal handling is the only thing that differs:

* ``single_frame`` — one frame per unit through 2D convs,
* ``stacked16``     — a 16-frame chunk channel-stacked into a 48-channel
  image through the same 2D stack,
* ``conv3d16``      — a 16-frame chunk through 3D convolutions.

Convolutions use symmetric zero padding so the stacks accept inputs as
small as 8x8 (spatial extent shrinks by the stride/pool factor of 8).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace

import numpy as np

from . import engine as E
from .data import CLIP_LEN, MODALITIES

TEMPORAL_MODES = ("single_frame", "stacked16", "conv3d16")

PRESET_ORDER = ("FRAME", "TWO_STREAM", "T3D_RGB", "T3D_SKEL",
                "THREE_STREAM", "T_THREE_STREAM")

PRESET_TITLES = {
    "FRAME": "Frame-by-Frame CNN",
    "TWO_STREAM": "Two-Stream CNN",
    "T3D_RGB": "Temporal 3D CNN (RGB)",
    "T3D_SKEL": "Temporal 3D CNN (Skeletal)",
    "THREE_STREAM": "Three-Stream CNN",
    "T_THREE_STREAM": "Temporal Three-Stream CNN",
}

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    streams: tuple
    temporal_mode: str
    class_count: int
    input_hw: tuple = (64, 64)
    fc7_width: int = 128
    flow_gap_k: int = 1
    conv1_filters: int = 16
    conv2_filters: int = 32

    def __post_init__(self):
        if not self.streams:
            raise ValueError("config needs at least one stream")
        if len(set(self.streams)) != len(self.streams):
            raise ValueError(f"duplicate streams in {self.streams}")
        for s in self.streams:
            if s not in MODALITIES:
                raise ValueError(f"unknown stream {s!r}, expected one of {MODALITIES}")
        if self.temporal_mode not in TEMPORAL_MODES:
            raise ValueError(f"unknown temporal mode {self.temporal_mode!r}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if self.flow_gap_k < 1:
            raise ValueError(f"flow_gap_k must be >= 1, got {self.flow_gap_k}")

    @property
    def effective_gap_k(self) -> int:
        """Chunking offset: only flow-bearing configs skip leading frames."""
        return self.flow_gap_k if "flow" in self.streams else 0

    def stream_in_channels(self) -> int:
        return 3 * CLIP_LEN if self.temporal_mode == "stacked16" else 3


def canonical_presets(class_count: int, input_hw=(64, 64)) -> dict:
    """The six named variants, keyed and ordered as in the comparison table."""
    mk = lambda streams, mode, gap=1: ModelConfig(
        streams=streams, temporal_mode=mode, class_count=class_count,
        input_hw=tuple(input_hw), flow_gap_k=gap)
    return {
        "FRAME": mk(("rgb",), "single_frame"),
        "TWO_STREAM": mk(("rgb", "flow"), "single_frame", gap=1),
        "T3D_RGB": mk(("rgb",), "conv3d16"),
        "T3D_SKEL": mk(("pose",), "conv3d16"),
        "THREE_STREAM": mk(("rgb", "flow", "pose"), "single_frame", gap=10),
        "T_THREE_STREAM": mk(("rgb", "flow", "pose"), "stacked16", gap=10),
    }


# ---------------------------------------------------------------------------
# shape bookkeeping
# ---------------------------------------------------------------------------

def _conv_out(extent, kernel, stride, pad):
    return (extent + 2 * pad - kernel) // stride + 1


def _pool_out(extent, window, stride):
    return (extent - window) // stride + 1


def stream_feature_size(config: ModelConfig) -> int:
    """Flattened width entering the fc7 layer of one stream."""
    h, w = config.input_hw
    if config.temporal_mode == "conv3d16":
        t = CLIP_LEN
        t = _conv_out(t, 3, 1, 1)
        h1 = _conv_out(h, 5, 2, 2)
        w1 = _conv_out(w, 5, 2, 2)
        t, h1, w1 = _pool_out(t, 1, 1), _pool_out(h1, 2, 2), _pool_out(w1, 2, 2)
        t2 = _conv_out(t, 3, 1, 1)
        h2 = _conv_out(h1, 3, 1, 1)
        w2 = _conv_out(w1, 3, 1, 1)
        t2, h2, w2 = _pool_out(t2, 2, 2), _pool_out(h2, 2, 2), _pool_out(w2, 2, 2)
        return config.conv2_filters * t2 * h2 * w2
    h1 = _pool_out(_conv_out(h, 5, 2, 2), 2, 2)
    w1 = _pool_out(_conv_out(w, 5, 2, 2), 2, 2)
    h2 = _pool_out(_conv_out(h1, 3, 1, 1), 2, 2)
    w2 = _pool_out(_conv_out(w1, 3, 1, 1), 2, 2)
    return config.conv2_filters * h2 * w2


def parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count; checked against built models in tests."""
    c1, c2 = config.conv1_filters, config.conv2_filters
    cin = config.stream_in_channels()
    flat = stream_feature_size(config)
    if config.temporal_mode == "conv3d16":
        per_stream = c1 * cin * 3 * 5 * 5 + c1 + c2 * c1 * 27 + c2
    else:
        per_stream = c1 * cin * 25 + c1 + c2 * c1 * 9 + c2
    per_stream += flat * config.fc7_width + config.fc7_width
    n_streams = len(config.streams)
    classifier = n_streams * config.fc7_width * config.class_count + config.class_count
    return n_streams * per_stream + classifier


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class Model:
    def __init__(self, config: ModelConfig, params: E.ParameterSet):
        self.config = config
        self.params = params

    def _stream_forward(self, name: str, x: E.Tensor) -> E.Tensor:
        p = self.params
        if self.config.temporal_mode == "conv3d16":
            h = E.relu(E.conv3d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
                                stride=(1, 2, 2), padding=(1, 2, 2)))
            h = E.maxpool(h, (1, 2, 2), (1, 2, 2), dims=3)
            h = E.relu(E.conv3d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"],
                                stride=1, padding=1))
            h = E.maxpool(h, (2, 2, 2), (2, 2, 2), dims=3)
        else:
            h = E.relu(E.conv2d(x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
                                stride=2, padding=2))
            h = E.maxpool(h, 2, 2)
            h = E.relu(E.conv2d(h, p[f"{name}.conv2.w"], p[f"{name}.conv2.b"],
                                stride=1, padding=1))
            h = E.maxpool(h, 2, 2)
        flat = E.reshape(h, (h.shape[0], -1))
        return E.relu(E.linear(flat, p[f"{name}.fc7.w"], p[f"{name}.fc7.b"]))

    def forward(self, inputs: dict) -> E.Tensor:
        """Batched logits from per-stream input arrays.

        single_frame / stacked16 expect [N, C, H, W]; conv3d16 expects
        [N, 3, 16, H, W].  Streams are consumed in config order.
        """
        feats = []
        for name in self.config.streams:
            if name not in inputs:
                raise ValueError(f"missing modality {name!r} for this model "
                                 f"(needs {self.config.streams})")
            x = inputs[name]
            if not isinstance(x, E.Tensor):
                x = E.Tensor(np.asarray(x, dtype=np.float32))
            self._check_input_shape(name, x)
            feats.append(self._stream_forward(name, x))
        fused = E.concat(feats)
        return E.linear(fused, self.params["cls.w"], self.params["cls.b"])

    def _check_input_shape(self, name, x):
        cfg = self.config
        h, w = cfg.input_hw
        if cfg.temporal_mode == "conv3d16":
            want = (3, CLIP_LEN, h, w)
            if x.data.ndim != 5 or tuple(x.shape[1:]) != want:
                raise ValueError(
                    f"stream {name!r} expects [N,{','.join(map(str, want))}], "
                    f"got {tuple(x.shape)}")
        else:
            want = (cfg.stream_in_channels(), h, w)
            if x.data.ndim != 4 or tuple(x.shape[1:]) != want:
                raise ValueError(
                    f"stream {name!r} expects [N,{','.join(map(str, want))}], "
                    f"got {tuple(x.shape)}")


def build_model(config: ModelConfig, seed: int) -> Model:
    """Seeded fan-in-uniform initialization; same seed -> identical params."""
    rng = np.random.default_rng([seed, 0x6D6F64])
    params = E.ParameterSet()
    c1, c2 = config.conv1_filters, config.conv2_filters
    cin = config.stream_in_channels()
    flat = stream_feature_size(config)
    for name in config.streams:
        if config.temporal_mode == "conv3d16":
            k1, k2 = (c1, 3, 3, 5, 5), (c2, c1, 3, 3, 3)
        else:
            k1, k2 = (c1, cin, 5, 5), (c2, c1, 3, 3)
        params.add(f"{name}.conv1.w", E.fan_in_uniform(k1, int(np.prod(k1[1:])), rng))
        params.add(f"{name}.conv1.b", E.Tensor(np.zeros(c1, dtype=np.float32),
                                               requires_grad=True))
        params.add(f"{name}.conv2.w", E.fan_in_uniform(k2, int(np.prod(k2[1:])), rng))
        params.add(f"{name}.conv2.b", E.Tensor(np.zeros(c2, dtype=np.float32),
                                               requires_grad=True))
        params.add(f"{name}.fc7.w", E.fan_in_uniform((flat, config.fc7_width), flat, rng))
        params.add(f"{name}.fc7.b", E.Tensor(np.zeros(config.fc7_width, dtype=np.float32),
                                             requires_grad=True))
    fused = len(config.streams) * config.fc7_width
    params.add("cls.w", E.fan_in_uniform((fused, config.class_count), fused, rng))
    params.add("cls.b", E.Tensor(np.zeros(config.class_count, dtype=np.float32),
                                 requires_grad=True))
    return Model(config, params)


# ---------------------------------------------------------------------------
# clip-level classification
# ---------------------------------------------------------------------------

def clip_unit_inputs(config: ModelConfig, clip) -> list:
    """Per-unit input dicts for one clip: 16 frames in single_frame mode,
    one chunk otherwise."""
    for name in config.streams:
        if name not in clip.tensors:
            raise ValueError(f"clip {clip.video_id}@{clip.start_frame} lacks "
                             f"modality {name!r}")
        if clip.tensors[name].shape[1] != CLIP_LEN:
            raise ValueError(
                f"clip {clip.video_id}@{clip.start_frame} has temporal length "
                f"{clip.tensors[name].shape[1]}, expected {CLIP_LEN}")
    if config.temporal_mode == "single_frame":
        return [{name: clip.tensors[name][:, t][None] for name in config.streams}
                for t in range(CLIP_LEN)]
    if config.temporal_mode == "stacked16":
        return [{name: _stack_channels(clip.tensors[name])[None]
                 for name in config.streams}]
    return [{name: clip.tensors[name][None] for name in config.streams}]


def _stack_channels(tensor_3t):
    """[3,16,H,W] -> [48,H,W], frame-major (t0 rgb, t1 rgb, ...)."""
    c, t, h, w = tensor_3t.shape
    return tensor_3t.transpose(1, 0, 2, 3).reshape(c * t, h, w)


def stack_unit_batch(config: ModelConfig, units: list) -> dict:
    """Merge per-unit input dicts into one batched dict."""
    return {name: np.concatenate([u[name] for u in units], axis=0)
            for name in config.streams}


def classify_clip_units(model: Model, clip) -> np.ndarray:
    """Logits for every unit of the clip: [16, C] single-frame, [1, C] temporal."""
    units = clip_unit_inputs(model.config, clip)
    batch = stack_unit_batch(model.config, units)
    return model.forward(batch).data.copy()


def forward_classify(model: Model, clip, frame_index: int | None = None) -> np.ndarray:
    """Logits [1, C] for one clip (or one frame of it in single_frame mode)."""
    logits = classify_clip_units(model, clip)
    if model.config.temporal_mode == "single_frame":
        if frame_index is None:
            raise ValueError("single_frame models classify one frame; pass frame_index")
        return logits[frame_index:frame_index + 1]
    return logits


# ---------------------------------------------------------------------------
# model files: versioned text header + binary parameter blob
# ---------------------------------------------------------------------------

_HEADER_END = b"---\n"


def save_model(model: Model, path) -> None:
    cfg = model.config
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "streams": list(cfg.streams),
        "temporal_mode": cfg.temporal_mode,
        "class_count": cfg.class_count,
        "input_hw": list(cfg.input_hw),
        "fc7_width": cfg.fc7_width,
        "flow_gap_k": cfg.flow_gap_k,
        "conv1_filters": cfg.conv1_filters,
        "conv2_filters": cfg.conv2_filters,
    }
    with open(path, "wb") as f:
        f.write(b"DANCENET-MODEL %d\n" % MODEL_FORMAT_VERSION)
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(_HEADER_END)
        f.write(E.params_to_bytes(model.params))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        buf = f.read()
    stream = io.BytesIO(buf)
    magic = stream.readline()
    if not magic.startswith(b"DANCENET-MODEL"):
        raise ValueError(f"not a model file: {path}")
    header = json.loads(stream.readline().decode("utf-8"))
    if stream.readline() != _HEADER_END:
        raise ValueError(f"corrupt model header in {path}")
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {header.get('format_version')}")
    config = ModelConfig(
        streams=tuple(header["streams"]),
        temporal_mode=header["temporal_mode"],
        class_count=header["class_count"],
        input_hw=tuple(header["input_hw"]),
        fc7_width=header["fc7_width"],
        flow_gap_k=header["flow_gap_k"],
        conv1_filters=header["conv1_filters"],
        conv2_filters=header["conv2_filters"],
    )
    params = E.params_from_bytes(buf[buf.index(_HEADER_END) + len(_HEADER_END):])
    return Model(config, params)


def with_class_count(config: ModelConfig, class_count: int) -> ModelConfig:
    return replace(config, class_count=class_count)
