"""Dynamic-map stream: 3-D conv feature extractor, ConvLSTM and classifier head.

The ``H`` dynamic maps of a video are stacked along time, passed through
time-valid / space-same 3-D convolutions with spatial average pooling, and
the resulting sequence is unrolled through ConvLSTM layers. The final hidden
state is globally averaged and classified by two dense layers.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import nn
from .errors import ConfigError, DataError, ShapeError
from .rank_pooling import encode_video_dynamics, stack_maps
from .training import TrainConfig, collect_items, fit_classifier, split_ids


@dataclass(frozen=True)
class StreamConfig:
    num_classes: int = 30
    in_channels: int = 3
    map_size: int = 32
    num_maps: int = 8
    extractor_widths: tuple = (8, 16)
    extractor_kernel: tuple = (3, 3, 3)     # (time, height, width)
    extractor_pool: bool = True
    convlstm_layers: int = 1
    hidden: int = 16
    lstm_kernel: int = 3
    dense_hidden: int = 32
    input_offset: float = 0.5

    def __post_init__(self):
        if not 1 <= self.convlstm_layers <= 3:
            raise ConfigError(f"ConvLSTM layer count must lie in [1, 3], got {self.convlstm_layers}")
        if not self.extractor_widths:
            raise ConfigError("extractor needs at least one 3-D conv layer")
        if self.output_length() < 1:
            raise ConfigError(f"{self.num_maps} maps are too few for {len(self.extractor_widths)} "
                              f"time-valid convs of length {self.extractor_kernel[0]}")
        if self.output_size() < 1:
            raise ConfigError(f"map size {self.map_size} too small for the pooling stages")

    def output_length(self) -> int:
        """Sequence length after the extractor."""
        return self.num_maps - len(self.extractor_widths) * (self.extractor_kernel[0] - 1)

    def output_size(self) -> int:
        size = self.map_size
        if self.extractor_pool:
            for _ in self.extractor_widths:
                size //= 2
        return size


def init_stream_params(config: StreamConfig, seed: int = 0) -> OrderedDict:
    rng = np.random.default_rng(seed)
    p = OrderedDict()
    kt, kh, kw = config.extractor_kernel
    cin = config.in_channels
    for i, width in enumerate(config.extractor_widths, start=1):
        fan = kt * kh * kw * cin
        p[f"conv3d{i}.kernel"] = nn.fan_in_uniform(rng, (kt, kh, kw, cin, width), fan, f"conv3d{i}.kernel")
        p[f"conv3d{i}.bias"] = nn.zeros((width,), f"conv3d{i}.bias")
        cin = width
    k = config.lstm_kernel
    for layer in range(1, config.convlstm_layers + 1):
        fan = k * k * (cin + config.hidden)
        p[f"lstm{layer}.kernel"] = nn.fan_in_uniform(rng, (k, k, cin + config.hidden, 4 * config.hidden), fan,
                                                     f"lstm{layer}.kernel")
        bias = np.zeros(4 * config.hidden)
        bias[config.hidden:2 * config.hidden] = 1.0    # forget-gate bias starts open
        p[f"lstm{layer}.bias"] = nn.Parameter(bias, f"lstm{layer}.bias")
        cin = config.hidden
    p["fc1.w"] = nn.fan_in_uniform(rng, (config.hidden, config.dense_hidden), config.hidden, "fc1.w")
    p["fc1.b"] = nn.zeros((config.dense_hidden,), "fc1.b")
    p["fc2.w"] = nn.fan_in_uniform(rng, (config.dense_hidden, config.num_classes), config.dense_hidden, "fc2.w")
    p["fc2.b"] = nn.zeros((config.num_classes,), "fc2.b")
    return p


def si3d_extract(maps, params, config: StreamConfig):
    """``(n, H, h, w, c)`` stacked maps -> ``(n, T', h', w', c')`` feature sequence."""
    x = nn.as_tensor(maps)
    if x.ndim != 5:
        raise ShapeError(f"expected stacked maps (n, H, h, w, c), got {x.shape}")
    if x.shape[1] < config.extractor_kernel[0]:
        raise ShapeError(f"{x.shape[1]} maps are fewer than the temporal kernel {config.extractor_kernel[0]}")
    for i in range(1, len(config.extractor_widths) + 1):
        x = nn.relu(nn.conv3d(x, params[f"conv3d{i}.kernel"], params[f"conv3d{i}.bias"]))
        if config.extractor_pool:
            x = nn.avg_pool(x)
    return x


@dataclass
class ConvLSTMState:
    h: nn.Tensor
    c: nn.Tensor

    @classmethod
    def zeros(cls, n, height, width, hidden):
        return cls(nn.Tensor(np.zeros((n, height, width, hidden))), nn.Tensor(np.zeros((n, height, width, hidden))))


def convlstm_step(x, state: ConvLSTMState, kernel, bias) -> ConvLSTMState:
    """One ConvLSTM update without peephole terms.

    A single same-padded convolution over ``concat(x, h)`` produces the
    pre-activations of the input, forget and output gates and the candidate,
    in that channel order.
    """
    x = nn.as_tensor(x)
    if x.shape[:-1] != state.h.shape[:-1] or state.h.shape != state.c.shape:
        raise ShapeError(f"ConvLSTM input {x.shape} incompatible with state {state.h.shape}/{state.c.shape}")
    hidden = state.h.shape[-1]
    k = nn.as_tensor(kernel)
    if k.shape[-2] != x.shape[-1] + hidden or k.shape[-1] != 4 * hidden:
        raise ShapeError(f"ConvLSTM kernel {k.shape} does not fit input {x.shape[-1]} + hidden {hidden}")
    z = nn.conv2d(nn.concat_channels([x, state.h]), k, nn.as_tensor(bias))
    zi, zf, zo, zg = nn.split(z, 4, axis=-1)
    i, f, o = nn.sigmoid(zi), nn.sigmoid(zf), nn.sigmoid(zo)
    g = nn.tanh(zg)
    c = nn.add(nn.mul(f, state.c), nn.mul(i, g))
    h = nn.mul(o, nn.tanh(c))
    return ConvLSTMState(h, c)


def convlstm_unroll(seq, params, config: StreamConfig):
    """Run every ConvLSTM layer over ``seq (n, T, h, w, c)``; returns the last layer's final state."""
    x = nn.as_tensor(seq)
    n, steps, height, width, _ = x.shape
    inputs = [nn.reshape(nn.slice_axis(x, t, t + 1, axis=1), (n, height, width, x.shape[-1])) for t in range(steps)]
    state = None
    for layer in range(1, config.convlstm_layers + 1):
        state = ConvLSTMState.zeros(n, height, width, config.hidden)
        outputs = []
        for xt in inputs:
            state = convlstm_step(xt, state, params[f"lstm{layer}.kernel"], params[f"lstm{layer}.bias"])
            outputs.append(state.h)
        inputs = outputs
    return state


def stream_logits(maps, params, config: StreamConfig):
    x = nn.as_tensor(maps)
    if config.input_offset:
        x = nn.add(x, -config.input_offset)
    state = convlstm_unroll(si3d_extract(x, params, config), params, config)
    pooled = nn.global_avg_pool(state.h)
    hidden = nn.relu(nn.dense(pooled, params["fc1.w"], params["fc1.b"]))
    return nn.dense(hidden, params["fc2.w"], params["fc2.b"])


def classify_stream(maps, config: StreamConfig, params) -> np.ndarray:
    """Class probabilities for one ``(H, h, w, c)`` stack or a batch of them."""
    arr = np.asarray(maps, dtype=np.float64)
    single = arr.ndim == 4
    if single:
        arr = arr[None]
    with nn.no_grad():
        probs = nn.softmax(stream_logits(arr, params, config).data, axis=1)
    return probs[0] if single else probs


class StreamNet:
    def __init__(self, config: StreamConfig, seed: int = 0):
        self.config = config
        self.params = init_stream_params(config, seed)

    def parameters(self) -> list:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def forward(self, inputs):
        return stream_logits(inputs[0], self.params, self.config)

    def predict(self, inputs) -> np.ndarray:
        return classify_stream(inputs[0], self.config, self.params)

    def save(self, path):
        nn.save_checkpoint(path, self.params)

    def load(self, path):
        state = nn.load_checkpoint(path)
        for k, p in self.params.items():
            if k not in state or state[k].shape != p.data.shape:
                raise ShapeError(f"checkpoint entry {k!r} missing or mis-shaped")
            p.data[...] = state[k]


def resize_maps(stack: np.ndarray, size: int) -> np.ndarray:
    """Bilinearly resize ``(H, h, w, c)`` maps to ``size x size``."""
    h, w = stack.shape[1:3]
    if (h, w) == (size, size):
        return stack
    return ndimage.zoom(stack, (1, size / h, size / w, 1), order=1, mode="nearest", grid_mode=True)


def video_to_maps(video, config: StreamConfig, dynamics: dict | None = None) -> np.ndarray:
    """Dynamic maps of ``video`` stacked to ``(H, size, size, c)``."""
    opts = dict(dynamics or {})
    opts.setdefault("num_windows", config.num_maps)
    if opts["num_windows"] != config.num_maps:
        raise ConfigError(f"dynamics window count {opts['num_windows']} != stream num_maps {config.num_maps}")
    stack = stack_maps(encode_video_dynamics(video, **opts))
    if stack.shape[-1] != config.in_channels:
        raise ShapeError(f"{video.sample_id}: maps have {stack.shape[-1]} channels, stream expects {config.in_channels}")
    return resize_maps(stack, config.map_size)


def train_stream(videos, split, config: StreamConfig, hyper: TrainConfig | None = None, seed: int = 0,
                 dynamics: dict | None = None, view: str | None = None, modality: str | None = None,
                 maps: dict | None = None):
    """Train one stream on ``videos`` (VideoSequence list) or precomputed ``maps``.

    ``maps`` maps sample_id -> (stacked maps, class_id) and skips rank pooling.
    Returns ``(network, history, test_scores)``.
    """
    train_ids, test_ids = split_ids(split)
    if maps is None:
        maps = {}
        for v in videos:
            if (view and v.view != view) or (modality and v.modality != modality):
                continue
            if v.sample_id in train_ids or v.sample_id in test_ids:
                maps[v.sample_id] = (video_to_maps(v, config, dynamics), v.class_id)
    wanted = sorted(train_ids | test_ids)
    missing = [s for s in wanted if s not in maps]
    if missing:
        raise DataError(f"sample {missing[0]!r} has no {modality or 'video'} data for view {view or 'any'}"
                        f" ({len(missing)} missing)")
    items = {sid: ([stack], label) for sid, (stack, label) in maps.items()}
    net = StreamNet(config, seed)
    source = {"model": "si3d_convlstm", "view": view, "modality": modality}
    history, scores = fit_classifier(net, collect_items(items, train_ids, 1, "maps"),
                                     collect_items(items, test_ids, 1, "maps"), hyper, seed, source)
    return net, history, scores
